use std::collections::BTreeMap;

use super::{AttrValue, DType, Layout, ModelGraph, NmifError};
use crate::interpreter::{shape, OpKind};

/// Axis permutation taking an NHWC tensor to NCHW.
pub const NCHW_FROM_NHWC: [usize; 4] = [0, 3, 1, 2];
/// HWIO convolution weights to OIHW.
const OIHW_FROM_HWIO: [usize; 4] = [3, 2, 0, 1];
/// Maps an NHWC axis index to its NCHW position.
const NCHW_AXIS: [usize; 4] = [0, 2, 3, 1];

fn permute_shape(shape: &[usize]) -> Vec<usize> {
    NCHW_FROM_NHWC.iter().map(|&a| shape[a]).collect()
}

/// NHWC and NCHW element orders coincide when either the spatial extent or
/// the channel count is 1.
fn layout_trivial(nhwc: &[usize]) -> bool {
    nhwc.len() != 4 || nhwc[1] * nhwc[2] == 1 || nhwc[3] == 1
}

/// Graph inputs as they look after canonicalization.
pub fn canonical_input(model: &ModelGraph) -> Vec<(DType, Vec<usize>)> {
    model
        .inputs
        .iter()
        .map(|v| {
            let shape = if model.layout == Layout::Nhwc && v.shape.len() == 4 {
                permute_shape(&v.shape)
            } else {
                v.shape.clone()
            };
            (v.dtype, shape)
        })
        .collect()
}

/// Rewrites an NHWC model into the equivalent NCHW model. NCHW models are
/// returned unchanged.
///
/// Rank-4 activations, convolution weights (HWIO -> OIHW, depthwise
/// `[kh, kw, C, M]` -> `[C*M, 1, kh, kw]`), `Pad` amounts and `Concat` axes
/// are permuted. Tensors whose element order would depend on the layout in a
/// way the op set cannot express (flattening a 4-D activation with both
/// spatial and channel extent, softmax over the channel-last axis, rank-4
/// initializers outside convolution weights) yield `UnsupportedRank`.
pub fn canonicalize_layout(model: &ModelGraph) -> Result<ModelGraph, NmifError> {
    if model.layout == Layout::Nchw {
        return Ok(model.clone());
    }
    let shapes = shape::infer_shapes(model).map_err(|e| NmifError::SchemaViolation {
        node_id: Some(e.node_id),
        reason: e.reason,
    })?;
    let value_shape = |name: &str| shapes.get(name).map(|(_, s)| s.as_slice()).unwrap_or(&[]);

    let mut out = model.clone();
    out.layout = Layout::Nchw;
    for v in out.inputs.iter_mut().chain(out.outputs.iter_mut()) {
        if v.shape.len() == 4 {
            v.shape = permute_shape(&v.shape);
        }
    }

    // Which op consumes each rank-4 initializer, and in which slot.
    let mut uses: BTreeMap<&str, Vec<(OpKind, usize)>> = BTreeMap::new();
    for node in &model.nodes {
        for (slot, input) in node.inputs.iter().enumerate() {
            if model.initializers.contains_key(input) {
                uses.entry(input.as_str()).or_default().push((node.op_type, slot));
            }
        }
    }
    for (name, tensor) in &model.initializers {
        if tensor.rank() != 4 {
            continue;
        }
        let roles = uses.get(name.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let all = |op: OpKind| !roles.is_empty() && roles.iter().all(|&(o, slot)| o == op && slot == 1);
        let converted = if all(OpKind::Conv2D) {
            tensor.permuted(&OIHW_FROM_HWIO)
        } else if all(OpKind::DepthwiseConv2D) {
            let [kh, kw, c, m] = <[usize; 4]>::try_from(tensor.shape()).unwrap();
            tensor
                .permuted(&[2, 3, 0, 1])
                .reshaped(vec![c * m, 1, kh, kw])
                .expect("same element count")
        } else {
            return Err(NmifError::UnsupportedRank(name.clone()));
        };
        out.initializers.insert(name.clone(), converted);
    }

    for node in &mut out.nodes {
        let x = value_shape(&node.inputs[0]).to_vec();
        let y = value_shape(node.output()).to_vec();
        match node.op_type {
            OpKind::Pad if x.len() == 4 => {
                let pads = node.attr("pads").and_then(AttrValue::as_ints).unwrap_or(&[]).to_vec();
                let pairs: Vec<&[i64]> = pads.chunks(2).collect();
                let permuted = NCHW_FROM_NHWC.iter().flat_map(|&a| pairs[a].iter().copied()).collect();
                node.attrs.insert("pads".into(), AttrValue::Ints(permuted));
            }
            OpKind::Concat if x.len() == 4 => {
                let axis = node.attr("axis").and_then(AttrValue::as_int).unwrap_or(0) as usize;
                node.attrs.insert("axis".into(), AttrValue::Int(NCHW_AXIS[axis] as i64));
            }
            OpKind::Flatten if !layout_trivial(&x) => {
                return Err(NmifError::UnsupportedRank(node.inputs[0].clone()));
            }
            OpKind::Reshape => {
                // A shape-preserving reshape commutes with any layout.
                let identity = x == y;
                if !identity && !layout_trivial(&x) {
                    return Err(NmifError::UnsupportedRank(node.inputs[0].clone()));
                }
                if y.len() == 4 {
                    if !identity && !layout_trivial(&y) {
                        return Err(NmifError::UnsupportedRank(node.output().to_string()));
                    }
                    let dims = node.attr("shape").and_then(AttrValue::as_ints).unwrap_or(&[]);
                    let dims = NCHW_FROM_NHWC.iter().map(|&a| dims[a]).collect();
                    node.attrs.insert("shape".into(), AttrValue::Ints(dims));
                }
            }
            OpKind::Softmax if x.len() == 4 => {
                return Err(NmifError::UnsupportedRank(node.inputs[0].clone()));
            }
            _ => {}
        }
    }
    Ok(out)
}
