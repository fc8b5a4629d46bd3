use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::validate::{validate_model, Rule};
use super::{AttrValue, DType, Layout, ModelGraph, NmifError, NodeSpec, TensorData, ValueInfo};
use crate::interpreter::OpKind;

pub const FORMAT_VERSION: u64 = 1;
const ALIGN: usize = 64;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "tensors.bin";

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Accept NaN/infinite values in F32 initializers.
    pub allow_non_finite: bool,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u64,
    name: String,
    layout: Layout,
    inputs: Vec<ValueInfo>,
    outputs: Vec<ValueInfo>,
    nodes: Vec<RawNode>,
    initializers: Vec<InitializerEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    edit_log: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawNode {
    id: String,
    op_type: String,
    attrs: BTreeMap<String, AttrValue>,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct InitializerEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
    byte_length: u64,
}

fn schema(node_id: Option<&str>, reason: impl Into<String>) -> NmifError {
    NmifError::SchemaViolation {
        node_id: node_id.map(str::to_string),
        reason: reason.into(),
    }
}

/// Loads and fully validates a container.
pub fn load_model(path: &Path) -> Result<ModelGraph, NmifError> {
    load_model_with(path, LoadOptions::default())
}

pub fn load_model_with(path: &Path, options: LoadOptions) -> Result<ModelGraph, NmifError> {
    let model = load_model_unchecked(path, options)?;
    let violations = validate_model(&model);
    let Some(first) = violations.first() else {
        return Ok(model);
    };
    Err(match first.rule {
        Rule::CyclicGraph => NmifError::CyclicGraph,
        Rule::DanglingReference => NmifError::DanglingReference(first.subject.clone()),
        _ => NmifError::SchemaViolation {
            node_id: first.node_id.clone(),
            reason: first.to_string(),
        },
    })
}

/// Parses a container without checking graph invariants; see
/// [`validate_model`](super::validate_model).
pub fn load_model_unchecked(path: &Path, options: LoadOptions) -> Result<ModelGraph, NmifError> {
    let manifest_path = path.join(MANIFEST);
    let blob_path = path.join(BLOB);
    if !manifest_path.is_file() || !blob_path.is_file() {
        return Err(NmifError::MagicMismatch(format!(
            "{} does not contain {MANIFEST} and {BLOB}",
            path.display()
        )));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| NmifError::io(&manifest_path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| NmifError::MagicMismatch(format!("{MANIFEST} is not JSON: {e}")))?;
    let version = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| NmifError::MagicMismatch(format!("{MANIFEST} has no format_version")))?;
    if version != FORMAT_VERSION {
        return Err(NmifError::VersionUnsupported(version));
    }
    let manifest: Manifest = serde_json::from_value(raw).map_err(|e| schema(None, e.to_string()))?;
    let blob = fs::read(&blob_path).map_err(|e| NmifError::io(&blob_path, e))?;

    let mut nodes = Vec::with_capacity(manifest.nodes.len());
    for raw in manifest.nodes {
        let op_type = OpKind::parse(&raw.op_type)
            .ok_or_else(|| schema(Some(&raw.id), format!("unknown op_type {}", raw.op_type)))?;
        nodes.push(NodeSpec {
            id: raw.id,
            op_type,
            attrs: raw.attrs,
            inputs: raw.inputs,
            outputs: raw.outputs,
        });
    }

    let mut initializers = BTreeMap::new();
    for entry in manifest.initializers {
        let offset = entry.offset as usize;
        let len = entry.byte_length as usize;
        if offset % ALIGN != 0 {
            return Err(schema(None, format!("initializer {} offset {offset} is not {ALIGN}-byte aligned", entry.name)));
        }
        let end = offset.checked_add(len).filter(|&end| end <= blob.len());
        let Some(end) = end else {
            return Err(NmifError::BlobOutOfBounds(entry.name));
        };
        let tensor = TensorData::from_le_bytes(entry.dtype, entry.shape, &blob[offset..end])
            .map_err(|e| schema(None, format!("initializer {}: {e}", entry.name)))?;
        if !options.allow_non_finite && tensor.non_finite_count() > 0 {
            return Err(NmifError::NonFinite(entry.name));
        }
        if initializers.insert(entry.name.clone(), tensor).is_some() {
            return Err(schema(None, format!("duplicate initializer {}", entry.name)));
        }
    }

    Ok(ModelGraph {
        name: manifest.name,
        layout: manifest.layout,
        inputs: manifest.inputs,
        outputs: manifest.outputs,
        nodes,
        initializers,
        edit_log: manifest.edit_log,
    })
}

/// Canonical encoding: nodes in stable topological order, initializers by
/// name, payloads 64-byte aligned with zero fill.
pub fn encode_model(model: &ModelGraph) -> Result<(String, Vec<u8>), NmifError> {
    let violations = validate_model(model);
    if !violations.is_empty() {
        return Err(NmifError::ValidationFailed(violations));
    }
    let order = model.topo_order().ok_or(NmifError::CyclicGraph)?;
    let nodes = order
        .into_iter()
        .map(|i| {
            let n = &model.nodes[i];
            RawNode {
                id: n.id.clone(),
                op_type: n.op_type.name().to_string(),
                attrs: n.attrs.clone(),
                inputs: n.inputs.clone(),
                outputs: n.outputs.clone(),
            }
        })
        .collect();
    let mut blob = Vec::new();
    let mut initializers = Vec::with_capacity(model.initializers.len());
    for (name, tensor) in &model.initializers {
        blob.resize(blob.len().div_ceil(ALIGN) * ALIGN, 0);
        let bytes = tensor.to_le_bytes();
        initializers.push(InitializerEntry {
            name: name.clone(),
            dtype: tensor.dtype(),
            shape: tensor.shape().to_vec(),
            offset: blob.len() as u64,
            byte_length: bytes.len() as u64,
        });
        blob.extend_from_slice(&bytes);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        name: model.name.clone(),
        layout: model.layout,
        inputs: model.inputs.clone(),
        outputs: model.outputs.clone(),
        nodes,
        initializers,
        edit_log: model.edit_log.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    Ok((text, blob))
}

/// Writes `model` as a container directory at `path` (created if needed).
pub fn save_model(model: &ModelGraph, path: &Path) -> Result<(), NmifError> {
    let (manifest, blob) = encode_model(model)?;
    fs::create_dir_all(path).map_err(|e| NmifError::io(path, e))?;
    let manifest_path = path.join(MANIFEST);
    fs::write(&manifest_path, manifest).map_err(|e| NmifError::io(&manifest_path, e))?;
    let blob_path = path.join(BLOB);
    fs::write(&blob_path, blob).map_err(|e| NmifError::io(&blob_path, e))
}
