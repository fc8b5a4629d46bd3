//! Deterministic reference executor with per-node activation capture.

pub mod kernels;
pub mod ops;
pub mod shape;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nmif::{self, ModelGraph, NmifError, TensorData};

pub use ops::OpKind;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("shape mismatch at node {node_id}: {reason}")]
    ShapeMismatch { node_id: String, reason: String },
    #[error("input does not match graph input {name}: expected {expected}, got {got}")]
    InputMismatch { name: String, expected: String, got: String },
    #[error("model cannot be executed: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] NmifError),
}

/// One captured activation.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub node_id: String,
    pub output_name: String,
    pub tensor: TensorData,
}

/// Result of one inference run.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub input_id: String,
    /// Every node output in execution order; empty unless capture was requested.
    pub entries: Vec<TraceEntry>,
    /// `(class_index, score)` sorted by score descending, index ascending on ties.
    pub top_k: Vec<(usize, f32)>,
    /// Nodes whose output contained NaN or infinity, in execution order.
    pub non_finite: Vec<String>,
    /// Value of the first graph output.
    pub output: TensorData,
}

impl ActivationTrace {
    pub fn top1(&self) -> Option<usize> {
        self.top_k.first().map(|(i, _)| *i)
    }

    pub fn entry(&self, node_id: &str) -> Option<&TraceEntry> {
        self.entries.iter().find(|e| e.node_id == node_id)
    }
}

/// Ranks the entries of `scores` (treated as a flat `[1, C]` vector).
///
/// Returns `min(k, C)` pairs sorted by score descending; equal scores are
/// ordered by ascending class index and NaN ranks below every number.
pub fn topk_labels(scores: &TensorData, k: usize) -> Vec<(usize, f32)> {
    let values: Vec<f32> = match scores.values() {
        nmif::Values::F32(v) => v.clone(),
        nmif::Values::I64(v) => v.iter().map(|&x| x as f32).collect(),
    };
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let key = |i: usize| if values[i].is_nan() { f32::NEG_INFINITY } else { values[i] };
    idx.sort_by(|&a, &b| {
        key(b)
            .partial_cmp(&key(a))
            .unwrap()
            .then_with(|| values[a].is_nan().cmp(&values[b].is_nan()))
            .then(a.cmp(&b))
    });
    idx.into_iter().take(k).map(|i| (i, values[i])).collect()
}

/// Runs `model` on `input`.
///
/// The model must have exactly one graph input. When `capture` is false the
/// trace carries no entries but `top_k` is still computed: the first graph
/// output is passed through softmax unless a Softmax node produced it.
pub fn execute(model: &ModelGraph, input_id: &str, input: &TensorData, capture: bool, k: usize) -> Result<ActivationTrace, ExecError> {
    let [graph_input] = model.inputs.as_slice() else {
        return Err(ExecError::InvalidModel(format!("expected one graph input, found {}", model.inputs.len())));
    };
    if input.dtype() != graph_input.dtype || input.shape() != graph_input.shape.as_slice() {
        return Err(ExecError::InputMismatch {
            name: graph_input.name.clone(),
            expected: format!("{} {:?}", graph_input.dtype, graph_input.shape),
            got: format!("{} {:?}", input.dtype(), input.shape()),
        });
    }
    let output_name = &model
        .outputs
        .first()
        .ok_or_else(|| ExecError::InvalidModel("graph has no outputs".into()))?
        .name;
    let order = model.topo_order().ok_or_else(|| ExecError::InvalidModel("graph has a cycle".into()))?;

    let mut env: HashMap<&str, TensorData> = HashMap::new();
    env.insert(graph_input.name.as_str(), input.clone());
    let mut entries = Vec::new();
    let mut non_finite = Vec::new();
    let mut output_from_softmax = false;

    for i in order {
        let node = &model.nodes[i];
        let mismatch = |reason: String| ExecError::ShapeMismatch {
            node_id: node.id.clone(),
            reason,
        };
        let mut args = Vec::with_capacity(node.inputs.len());
        for name in &node.inputs {
            let t = env
                .get(name.as_str())
                .or_else(|| model.initializers.get(name))
                .ok_or_else(|| mismatch(format!("value {name} is not available")))?;
            args.push(t);
        }
        let out = kernels::run_node(node, &args, model.layout).map_err(mismatch)?;
        if out.non_finite_count() > 0 {
            non_finite.push(node.id.clone());
        }
        let out_name = node.output();
        if out_name == output_name {
            output_from_softmax = node.op_type == OpKind::Softmax;
        }
        if capture {
            entries.push(TraceEntry {
                node_id: node.id.clone(),
                output_name: out_name.to_string(),
                tensor: out.clone(),
            });
        }
        env.insert(out_name, out);
    }

    let output = env
        .remove(output_name.as_str())
        .ok_or_else(|| ExecError::InvalidModel(format!("graph output {output_name} was never produced")))?;
    let flat = output.reshaped(vec![1, output.numel()]).expect("flatten preserves count");
    let scores = if output_from_softmax || flat.dtype() != nmif::DType::F32 {
        flat
    } else {
        kernels::softmax(&flat).expect("softmax on F32 rank-2")
    };
    let top_k = topk_labels(&scores, k);
    Ok(ActivationTrace {
        input_id: input_id.to_string(),
        entries,
        top_k,
        non_finite,
        output,
    })
}

#[derive(Serialize, Deserialize)]
struct TraceFileEntry {
    seq: usize,
    node_id: String,
    output_name: String,
    file: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TraceManifest {
    input_id: String,
    order: Vec<TraceFileEntry>,
    top_k: Vec<(usize, f32)>,
    non_finite: Vec<String>,
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes `<seq>_<node_id>.nt` per captured activation plus `trace.json`.
pub fn export_trace(trace: &ActivationTrace, dir: &Path) -> Result<(), NmifError> {
    fs::create_dir_all(dir).map_err(|e| NmifError::io(dir, e))?;
    let mut order = Vec::with_capacity(trace.entries.len());
    for (seq, entry) in trace.entries.iter().enumerate() {
        let file = format!("{seq:04}_{}.nt", file_safe(&entry.node_id));
        nmif::write_nt(&dir.join(&file), &entry.tensor)?;
        order.push(TraceFileEntry {
            seq,
            node_id: entry.node_id.clone(),
            output_name: entry.output_name.clone(),
            file,
            shape: entry.tensor.shape().to_vec(),
        });
    }
    let manifest = TraceManifest {
        input_id: trace.input_id.clone(),
        order,
        top_k: trace.top_k.clone(),
        non_finite: trace.non_finite.clone(),
    };
    let path = dir.join("trace.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("trace manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| NmifError::io(&path, e))
}

/// Reads a trace directory written by [`export_trace`] (or by an external exporter).
pub fn import_trace(dir: &Path) -> Result<ActivationTrace, NmifError> {
    let path = dir.join("trace.json");
    let text = fs::read_to_string(&path).map_err(|e| NmifError::io(&path, e))?;
    let manifest: TraceManifest = serde_json::from_str(&text).map_err(|e| NmifError::SchemaViolation {
        node_id: None,
        reason: e.to_string(),
    })?;
    let mut entries = Vec::with_capacity(manifest.order.len());
    for e in manifest.order {
        let tensor = nmif::read_nt(&dir.join(&e.file), true)?;
        entries.push(TraceEntry {
            node_id: e.node_id,
            output_name: e.output_name,
            tensor,
        });
    }
    let output = entries
        .last()
        .map(|e| e.tensor.clone())
        .unwrap_or_else(|| TensorData::zeros(nmif::DType::F32, vec![0]));
    Ok(ActivationTrace {
        input_id: manifest.input_id,
        entries,
        top_k: manifest.top_k,
        non_finite: manifest.non_finite,
        output,
    })
}
