use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::ModelGraph;
use crate::interpreter::{ops, shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    EmptyInterface,
    DuplicateNodeId,
    SchemaViolation,
    DanglingReference,
    DuplicateProducer,
    CyclicGraph,
    UnproducedOutput,
    UnusedInitializer,
    ShapeInference,
}

/// One broken invariant. `subject` is the offending value name for
/// reference rules and the node id otherwise.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub node_id: Option<String>,
    pub subject: String,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}({})", self.rule, self.subject)?;
        if let Some(node) = &self.node_id {
            write!(f, " at node {node}")?;
        }
        if !self.detail.is_empty() {
            write!(f, ": {}", self.detail)?;
        }
        Ok(())
    }
}

fn violation(rule: Rule, node_id: Option<&str>, subject: &str, detail: impl Into<String>) -> Violation {
    Violation {
        rule,
        node_id: node_id.map(str::to_string),
        subject: subject.to_string(),
        detail: detail.into(),
    }
}

/// Checks every graph invariant. An empty result means the model is
/// executable: shape inference succeeded for every node.
pub fn validate_model(model: &ModelGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    if model.inputs.is_empty() || model.outputs.is_empty() {
        out.push(violation(Rule::EmptyInterface, None, &model.name, "graph needs at least one input and one output"));
    }

    let mut ids = HashSet::new();
    for node in &model.nodes {
        if !ids.insert(node.id.as_str()) {
            out.push(violation(Rule::DuplicateNodeId, Some(&node.id), &node.id, "node id used more than once"));
        }
    }

    for node in &model.nodes {
        if !node.op_type.input_arity().admits(node.inputs.len()) {
            out.push(violation(
                Rule::SchemaViolation,
                Some(&node.id),
                &node.id,
                format!("{} does not take {} inputs", node.op_type, node.inputs.len()),
            ));
        }
        if node.outputs.len() != 1 {
            out.push(violation(
                Rule::SchemaViolation,
                Some(&node.id),
                &node.id,
                format!("expected exactly one output, found {}", node.outputs.len()),
            ));
        }
        for problem in ops::check_attrs(node.op_type, &node.attrs) {
            out.push(violation(Rule::SchemaViolation, Some(&node.id), &node.id, problem));
        }
    }

    // Value definitions: graph inputs, initializers, node outputs. Each name once.
    let mut defined: HashMap<&str, usize> = HashMap::new();
    for v in &model.inputs {
        *defined.entry(v.name.as_str()).or_default() += 1;
    }
    for name in model.initializers.keys() {
        *defined.entry(name.as_str()).or_default() += 1;
    }
    for node in &model.nodes {
        for o in &node.outputs {
            *defined.entry(o.as_str()).or_default() += 1;
        }
    }
    let mut reported = HashSet::new();
    for node in &model.nodes {
        for o in &node.outputs {
            if defined[o.as_str()] > 1 && reported.insert(o.as_str()) {
                out.push(violation(Rule::DuplicateProducer, Some(&node.id), o, "value defined more than once"));
            }
        }
    }

    let mut used: HashSet<&str> = HashSet::new();
    for node in &model.nodes {
        for input in &node.inputs {
            used.insert(input.as_str());
            if !defined.contains_key(input.as_str()) {
                out.push(violation(Rule::DanglingReference, Some(&node.id), input, "input is never defined"));
            }
        }
    }

    let producers = model.producers();
    for v in &model.outputs {
        if !producers.contains_key(v.name.as_str()) {
            out.push(violation(Rule::UnproducedOutput, None, &v.name, "graph output is not produced by any node"));
        }
    }

    for name in model.initializers.keys() {
        if !used.contains(name.as_str()) {
            out.push(violation(Rule::UnusedInitializer, None, name, "initializer is not referenced by any node"));
        }
    }

    if model.topo_order().is_none() {
        out.push(violation(Rule::CyclicGraph, None, &model.name, "node list admits no topological order"));
    }

    if out.is_empty() {
        match shape::infer_shapes(model) {
            Ok(shapes) => {
                for v in &model.outputs {
                    if let Some((dtype, shape)) = shapes.get(&v.name) {
                        if *dtype != v.dtype || *shape != v.shape {
                            out.push(violation(
                                Rule::ShapeInference,
                                None,
                                &v.name,
                                format!("declared {} {:?}, inferred {dtype} {shape:?}", v.dtype, v.shape),
                            ));
                        }
                    }
                }
            }
            Err(e) => out.push(violation(Rule::ShapeInference, Some(&e.node_id), &e.node_id, e.reason)),
        }
    }
    out
}
