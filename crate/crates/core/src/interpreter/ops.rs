//! The closed operator vocabulary and its attribute schema.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::nmif::AttrValue;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Conv2D,
    DepthwiseConv2D,
    Dense,
    BiasAdd,
    ReLU,
    ReLU6,
    MaxPool2D,
    AvgPool2D,
    GlobalAvgPool2D,
    BatchNorm,
    Softmax,
    Flatten,
    Reshape,
    Pad,
    Add,
    Concat,
}

pub const ALL_OPS: [OpKind; 16] = [
    OpKind::Conv2D,
    OpKind::DepthwiseConv2D,
    OpKind::Dense,
    OpKind::BiasAdd,
    OpKind::ReLU,
    OpKind::ReLU6,
    OpKind::MaxPool2D,
    OpKind::AvgPool2D,
    OpKind::GlobalAvgPool2D,
    OpKind::BatchNorm,
    OpKind::Softmax,
    OpKind::Flatten,
    OpKind::Reshape,
    OpKind::Pad,
    OpKind::Add,
    OpKind::Concat,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arity {
    Exact(usize),
    AtLeast(usize),
}

impl Arity {
    pub fn admits(self, n: usize) -> bool {
        match self {
            Arity::Exact(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttrKind {
    Int,
    Float,
    /// Integer list, optionally of a fixed length.
    Ints(Option<usize>),
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2D => "Conv2D",
            OpKind::DepthwiseConv2D => "DepthwiseConv2D",
            OpKind::Dense => "Dense",
            OpKind::BiasAdd => "BiasAdd",
            OpKind::ReLU => "ReLU",
            OpKind::ReLU6 => "ReLU6",
            OpKind::MaxPool2D => "MaxPool2D",
            OpKind::AvgPool2D => "AvgPool2D",
            OpKind::GlobalAvgPool2D => "GlobalAvgPool2D",
            OpKind::BatchNorm => "BatchNorm",
            OpKind::Softmax => "Softmax",
            OpKind::Flatten => "Flatten",
            OpKind::Reshape => "Reshape",
            OpKind::Pad => "Pad",
            OpKind::Add => "Add",
            OpKind::Concat => "Concat",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        ALL_OPS.iter().copied().find(|op| op.name() == name)
    }

    pub fn input_arity(self) -> Arity {
        match self {
            OpKind::Conv2D | OpKind::DepthwiseConv2D | OpKind::Dense | OpKind::BiasAdd | OpKind::Add => {
                Arity::Exact(2)
            }
            OpKind::BatchNorm => Arity::Exact(5),
            OpKind::Concat => Arity::AtLeast(1),
            _ => Arity::Exact(1),
        }
    }

    /// Required attribute keys. A node carries exactly these, no more.
    pub fn attr_schema(self) -> &'static [(&'static str, AttrKind)] {
        const CONV: &[(&str, AttrKind)] = &[
            ("dilations", AttrKind::Ints(Some(2))),
            ("groups", AttrKind::Int),
            ("pads", AttrKind::Ints(Some(4))),
            ("strides", AttrKind::Ints(Some(2))),
        ];
        const DEPTHWISE: &[(&str, AttrKind)] = &[
            ("dilations", AttrKind::Ints(Some(2))),
            ("pads", AttrKind::Ints(Some(4))),
            ("strides", AttrKind::Ints(Some(2))),
        ];
        const POOL: &[(&str, AttrKind)] = &[
            ("kernel_shape", AttrKind::Ints(Some(2))),
            ("pads", AttrKind::Ints(Some(4))),
            ("strides", AttrKind::Ints(Some(2))),
        ];
        match self {
            OpKind::Conv2D => CONV,
            OpKind::DepthwiseConv2D => DEPTHWISE,
            OpKind::MaxPool2D | OpKind::AvgPool2D => POOL,
            OpKind::BatchNorm => &[("epsilon", AttrKind::Float)],
            OpKind::Reshape => &[("shape", AttrKind::Ints(None))],
            OpKind::Pad => &[("pads", AttrKind::Ints(None))],
            OpKind::Concat => &[("axis", AttrKind::Int)],
            _ => &[],
        }
    }

    /// Ops whose second..n-th inputs are learned parameters.
    pub fn has_parameters(self) -> bool {
        matches!(
            self,
            OpKind::Conv2D | OpKind::DepthwiseConv2D | OpKind::Dense | OpKind::BiasAdd | OpKind::BatchNorm
        )
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Checks `attrs` against the schema of `op`; returns one message per problem.
pub fn check_attrs(op: OpKind, attrs: &BTreeMap<String, AttrValue>) -> Vec<String> {
    let schema = op.attr_schema();
    let mut problems = Vec::new();
    for (key, kind) in schema {
        match attrs.get(*key) {
            None => problems.push(format!("missing attribute \"{key}\"")),
            Some(value) => {
                let ok = match (kind, value) {
                    (AttrKind::Int, AttrValue::Int(_)) => true,
                    (AttrKind::Float, AttrValue::Float(_)) => true,
                    (AttrKind::Ints(None), AttrValue::Ints(_)) => true,
                    (AttrKind::Ints(Some(n)), AttrValue::Ints(v)) => v.len() == *n,
                    _ => false,
                };
                if !ok {
                    problems.push(format!("attribute \"{key}\" has wrong kind or length: {value}"));
                }
            }
        }
    }
    for key in attrs.keys() {
        if !schema.iter().any(|(k, _)| k == key) {
            problems.push(format!("unexpected attribute \"{key}\""));
        }
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for op in ALL_OPS {
            assert_eq!(OpKind::parse(op.name()), Some(op));
        }
        assert_eq!(OpKind::parse("Gelu"), None);
    }

    #[test]
    fn conv_schema_flags_missing_and_extra() {
        let mut attrs = BTreeMap::new();
        attrs.insert("pads".to_string(), AttrValue::Ints(vec![0, 0, 0, 0]));
        attrs.insert("dilations".to_string(), AttrValue::Ints(vec![1, 1]));
        attrs.insert("groups".to_string(), AttrValue::Int(1));
        attrs.insert("alpha".to_string(), AttrValue::Float(0.1));
        let problems = check_attrs(OpKind::Conv2D, &attrs);
        assert_eq!(problems.len(), 2, "{problems:?}");
        assert!(problems[0].contains("strides"));
        assert!(problems[1].contains("alpha"));
    }
}
