//! Static shape inference. Every op's output shape is a pure function of its
//! input shapes, its attributes and the graph layout:
//!
//! | op | output |
//! |----|--------|
//! | Conv2D / DepthwiseConv2D | `[N, O, OH, OW]` (NCHW) or `[N, OH, OW, O]` (NHWC), `OH = (H + pt + pb - dh*(kh-1) - 1) / sh + 1` |
//! | Dense | `[N, O]` for `x: [N, I]`, `w: [O, I]` |
//! | BiasAdd, BatchNorm, ReLU, ReLU6, Softmax, Add | shape of `x` |
//! | MaxPool2D / AvgPool2D | as convolution with `kernel_shape`, dilation 1 |
//! | GlobalAvgPool2D | spatial extents collapsed to 1 |
//! | Flatten | `[d0, d1*...*dn]` |
//! | Reshape | `shape` attribute, one `-1` inferred |
//! | Pad | each axis grows by `before + after` |
//! | Concat | extents summed along `axis` |

use std::collections::BTreeMap;

use crate::nmif::{AttrValue, DType, Layout, ModelGraph, NodeSpec};

use super::OpKind;

/// Activation dims as (batch, channels, height, width), independent of layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims4 {
    pub fn from_shape(shape: &[usize], layout: Layout) -> Option<Self> {
        let [a, b, c, d] = <[usize; 4]>::try_from(shape).ok()?;
        Some(match layout {
            Layout::Nchw => Dims4 { n: a, c: b, h: c, w: d },
            Layout::Nhwc => Dims4 { n: a, h: b, w: c, c: d },
        })
    }

    pub fn to_shape(self, layout: Layout) -> Vec<usize> {
        match layout {
            Layout::Nchw => vec![self.n, self.c, self.h, self.w],
            Layout::Nhwc => vec![self.n, self.h, self.w, self.c],
        }
    }

    /// Flat offset of element (n, c, h, w) in a buffer with this extent.
    #[inline]
    pub fn offset(&self, layout: Layout, n: usize, c: usize, h: usize, w: usize) -> usize {
        match layout {
            Layout::Nchw => ((n * self.c + c) * self.h + h) * self.w + w,
            Layout::Nhwc => ((n * self.h + h) * self.w + w) * self.c + c,
        }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }
}

/// Channel axis for rank-2 (`[N, C]`) and rank-4 activations.
pub fn channel_axis(rank: usize, layout: Layout) -> Option<usize> {
    match (rank, layout) {
        (2, _) => Some(1),
        (4, Layout::Nchw) => Some(1),
        (4, Layout::Nhwc) => Some(3),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowParams {
    pub strides: [usize; 2],
    /// top, left, bottom, right
    pub pads: [usize; 4],
    pub dilations: [usize; 2],
}

impl WindowParams {
    /// Output extent along one spatial axis, or `None` if the window does not fit.
    pub fn out_extent(&self, axis: usize, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + self.pads[axis] + self.pads[axis + 2];
        let span = self.dilations[axis] * (kernel.checked_sub(1)?) + 1;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.strides[axis] + 1)
    }
}

fn ints<'a>(node: &'a NodeSpec, key: &str) -> Result<&'a [i64], String> {
    node.attr(key)
        .and_then(AttrValue::as_ints)
        .ok_or_else(|| format!("attribute \"{key}\" missing or not an int list"))
}

fn positive_pair(node: &NodeSpec, key: &str) -> Result<[usize; 2], String> {
    let v = ints(node, key)?;
    match v {
        [a, b] if *a > 0 && *b > 0 => Ok([*a as usize, *b as usize]),
        _ => Err(format!("attribute \"{key}\" must be two positive ints, got {v:?}")),
    }
}

fn pads4(node: &NodeSpec) -> Result<[usize; 4], String> {
    let v = ints(node, "pads")?;
    match v {
        [a, b, c, d] if v.iter().all(|p| *p >= 0) => Ok([*a as usize, *b as usize, *c as usize, *d as usize]),
        _ => Err(format!("attribute \"pads\" must be four non-negative ints, got {v:?}")),
    }
}

pub fn conv_params(node: &NodeSpec) -> Result<(WindowParams, usize), String> {
    let groups = match node.op_type {
        OpKind::Conv2D => {
            let g = node.attr("groups").and_then(AttrValue::as_int).ok_or("attribute \"groups\" missing")?;
            if g < 1 {
                return Err(format!("groups must be positive, got {g}"));
            }
            g as usize
        }
        _ => 1,
    };
    Ok((
        WindowParams {
            strides: positive_pair(node, "strides")?,
            pads: pads4(node)?,
            dilations: positive_pair(node, "dilations")?,
        },
        groups,
    ))
}

pub fn pool_params(node: &NodeSpec) -> Result<(WindowParams, [usize; 2]), String> {
    let kernel = positive_pair(node, "kernel_shape")?;
    let params = WindowParams {
        strides: positive_pair(node, "strides")?,
        pads: pads4(node)?,
        dilations: [1, 1],
    };
    if params.pads[0] >= kernel[0] || params.pads[2] >= kernel[0] || params.pads[1] >= kernel[1] || params.pads[3] >= kernel[1] {
        return Err("pool padding must be smaller than the kernel".into());
    }
    Ok((params, kernel))
}

/// Per-axis (before, after) pad amounts from a flat `[b0, a0, b1, a1, ...]` list.
pub fn pad_amounts(node: &NodeSpec, rank: usize) -> Result<Vec<(usize, usize)>, String> {
    let v = ints(node, "pads")?;
    if v.len() != 2 * rank || v.iter().any(|p| *p < 0) {
        return Err(format!("Pad expects {} non-negative ints, got {v:?}", 2 * rank));
    }
    Ok(v.chunks(2).map(|c| (c[0] as usize, c[1] as usize)).collect())
}

/// Resolves a Reshape target against the input element count.
pub fn reshape_target(node: &NodeSpec, numel: usize) -> Result<Vec<usize>, String> {
    let spec = ints(node, "shape")?;
    let mut inferred = None;
    let mut known = 1usize;
    for (i, &d) in spec.iter().enumerate() {
        match d {
            -1 if inferred.is_none() => inferred = Some(i),
            d if d > 0 => known *= d as usize,
            _ => return Err(format!("invalid reshape target {spec:?}")),
        }
    }
    let mut out: Vec<usize> = spec.iter().map(|&d| d.max(0) as usize).collect();
    match inferred {
        Some(i) => {
            if known == 0 || numel % known != 0 {
                return Err(format!("cannot reshape {numel} elements to {spec:?}"));
            }
            out[i] = numel / known;
        }
        None if known != numel => return Err(format!("cannot reshape {numel} elements to {spec:?}")),
        None => {}
    }
    Ok(out)
}

pub fn concat_axis(node: &NodeSpec, rank: usize) -> Result<usize, String> {
    let axis = node.attr("axis").and_then(AttrValue::as_int).ok_or("attribute \"axis\" missing")?;
    if axis < 0 || axis as usize >= rank {
        return Err(format!("concat axis {axis} out of range for rank {rank}"));
    }
    Ok(axis as usize)
}

fn want_f32(dtype: DType, what: &str) -> Result<(), String> {
    if dtype == DType::F32 {
        Ok(())
    } else {
        Err(format!("{what} must be F32, got {dtype}"))
    }
}

/// Infers the single output of `node` from its input types.
pub fn infer_node(node: &NodeSpec, inputs: &[(DType, &[usize])], layout: Layout) -> Result<(DType, Vec<usize>), String> {
    let (x_dtype, x_shape) = *inputs.first().ok_or("node has no inputs")?;
    let x4 = || Dims4::from_shape(x_shape, layout).ok_or_else(|| format!("expected rank-4 input, got {x_shape:?}"));
    match node.op_type {
        OpKind::Conv2D | OpKind::DepthwiseConv2D => {
            want_f32(x_dtype, "input")?;
            want_f32(inputs[1].0, "weight")?;
            let x = x4()?;
            let w = inputs[1].1;
            let [w0, w1, w2, w3] = <[usize; 4]>::try_from(w).map_err(|_| format!("weight must be rank 4, got {w:?}"))?;
            let (params, groups) = conv_params(node)?;
            let (out_c, in_per_group, kh, kw) = match (node.op_type, layout) {
                (OpKind::Conv2D, Layout::Nchw) => (w0, w1, w2, w3),
                (OpKind::Conv2D, Layout::Nhwc) => (w3, w2, w0, w1),
                (_, Layout::Nchw) => {
                    if w1 != 1 || x.c == 0 || w0 % x.c != 0 {
                        return Err(format!("depthwise weight {w:?} incompatible with {} channels", x.c));
                    }
                    (w0, 1, w2, w3)
                }
                (_, Layout::Nhwc) => {
                    if w2 != x.c {
                        return Err(format!("depthwise weight {w:?} incompatible with {} channels", x.c));
                    }
                    (w2 * w3, 1, w0, w1)
                }
            };
            if node.op_type == OpKind::Conv2D
                && (x.c % groups != 0 || out_c % groups != 0 || x.c / groups != in_per_group)
            {
                return Err(format!(
                    "channel/group mismatch: input channels {}, groups {groups}, weight {w:?}",
                    x.c
                ));
            }
            let oh = params.out_extent(0, x.h, kh).ok_or("kernel larger than padded input")?;
            let ow = params.out_extent(1, x.w, kw).ok_or("kernel larger than padded input")?;
            Ok((DType::F32, Dims4 { n: x.n, c: out_c, h: oh, w: ow }.to_shape(layout)))
        }
        OpKind::Dense => {
            want_f32(x_dtype, "input")?;
            let w = inputs[1].1;
            match (x_shape, w) {
                ([n, i], [o, wi]) if i == wi => Ok((DType::F32, vec![*n, *o])),
                _ => Err(format!("dense expects x [N, I] and w [O, I], got {x_shape:?} and {w:?}")),
            }
        }
        OpKind::BiasAdd => {
            want_f32(x_dtype, "input")?;
            let axis = channel_axis(x_shape.len(), layout).ok_or("BiasAdd expects rank 2 or 4")?;
            if inputs[1].1 != [x_shape[axis]] {
                return Err(format!("bias shape {:?} does not match {} channels", inputs[1].1, x_shape[axis]));
            }
            Ok((DType::F32, x_shape.to_vec()))
        }
        OpKind::BatchNorm => {
            want_f32(x_dtype, "input")?;
            let axis = channel_axis(x_shape.len(), layout).ok_or("BatchNorm expects rank 2 or 4")?;
            for (dtype, shape) in &inputs[1..] {
                want_f32(*dtype, "batch-norm parameter")?;
                if *shape != [x_shape[axis]] {
                    return Err(format!("batch-norm parameter {shape:?} does not match {} channels", x_shape[axis]));
                }
            }
            let eps = node.attr("epsilon").and_then(AttrValue::as_float).ok_or("attribute \"epsilon\" missing")?;
            if !(eps.is_finite() && eps >= 0.0) {
                return Err(format!("epsilon must be finite and non-negative, got {eps}"));
            }
            Ok((DType::F32, x_shape.to_vec()))
        }
        OpKind::ReLU | OpKind::ReLU6 => {
            want_f32(x_dtype, "input")?;
            Ok((DType::F32, x_shape.to_vec()))
        }
        OpKind::Softmax => {
            want_f32(x_dtype, "input")?;
            if x_shape.is_empty() {
                return Err("softmax needs rank >= 1".into());
            }
            Ok((DType::F32, x_shape.to_vec()))
        }
        OpKind::MaxPool2D | OpKind::AvgPool2D => {
            want_f32(x_dtype, "input")?;
            let x = x4()?;
            let (params, [kh, kw]) = pool_params(node)?;
            let oh = params.out_extent(0, x.h, kh).ok_or("pool window larger than padded input")?;
            let ow = params.out_extent(1, x.w, kw).ok_or("pool window larger than padded input")?;
            Ok((DType::F32, Dims4 { h: oh, w: ow, ..x }.to_shape(layout)))
        }
        OpKind::GlobalAvgPool2D => {
            want_f32(x_dtype, "input")?;
            let x = x4()?;
            if x.h * x.w == 0 {
                return Err("global pooling over an empty spatial extent".into());
            }
            Ok((DType::F32, Dims4 { h: 1, w: 1, ..x }.to_shape(layout)))
        }
        OpKind::Flatten => match x_shape.split_first() {
            Some((d0, rest)) => Ok((x_dtype, vec![*d0, rest.iter().product()])),
            None => Err("flatten needs rank >= 1".into()),
        },
        OpKind::Reshape => Ok((x_dtype, reshape_target(node, x_shape.iter().product())?)),
        OpKind::Pad => {
            let amounts = pad_amounts(node, x_shape.len())?;
            Ok((x_dtype, x_shape.iter().zip(&amounts).map(|(d, (b, a))| d + b + a).collect()))
        }
        OpKind::Add => {
            want_f32(x_dtype, "input")?;
            if inputs[1].0 != x_dtype || inputs[1].1 != x_shape {
                return Err(format!("add operands differ: {x_shape:?} vs {:?}", inputs[1].1));
            }
            Ok((DType::F32, x_shape.to_vec()))
        }
        OpKind::Concat => {
            let axis = concat_axis(node, x_shape.len())?;
            let mut out = x_shape.to_vec();
            for (dtype, shape) in &inputs[1..] {
                let compatible = *dtype == x_dtype
                    && shape.len() == x_shape.len()
                    && shape.iter().zip(x_shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(format!("concat operand {shape:?} incompatible with {x_shape:?} on axis {axis}"));
                }
                out[axis] += shape[axis];
            }
            Ok((x_dtype, out))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeError {
    pub node_id: String,
    pub reason: String,
}

pub type ShapeMap = BTreeMap<String, (DType, Vec<usize>)>;

/// Infers dtype and shape of every value in the graph.
///
/// Assumes the structural rules checked by validation hold (acyclic, no
/// dangling references, schema-conformant attributes).
pub fn infer_shapes(model: &ModelGraph) -> Result<ShapeMap, ShapeError> {
    let mut known: ShapeMap = BTreeMap::new();
    for v in &model.inputs {
        known.insert(v.name.clone(), (v.dtype, v.shape.clone()));
    }
    for (name, t) in &model.initializers {
        known.insert(name.clone(), (t.dtype(), t.shape().to_vec()));
    }
    let order = model.topo_order().ok_or_else(|| ShapeError {
        node_id: String::new(),
        reason: "graph has a cycle".into(),
    })?;
    for i in order {
        let node = &model.nodes[i];
        let fail = |reason: String| ShapeError {
            node_id: node.id.clone(),
            reason,
        };
        let mut args = Vec::with_capacity(node.inputs.len());
        for name in &node.inputs {
            let (dtype, shape) = known.get(name).ok_or_else(|| fail(format!("unknown input {name}")))?;
            args.push((*dtype, shape.as_slice()));
        }
        if !node.op_type.input_arity().admits(args.len()) {
            return Err(fail(format!("wrong number of inputs: {}", args.len())));
        }
        let out = infer_node(node, &args, model.layout).map_err(fail)?;
        for name in &node.outputs {
            known.insert(name.clone(), out.clone());
        }
    }
    Ok(known)
}
