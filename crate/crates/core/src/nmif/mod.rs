//! Neutral Model Interchange Format.
//!
//! A container is a directory with two files:
//!
//! * `manifest.json`: `format_version` (= 1), `name`, `layout`, `inputs`,
//!   `outputs`, `nodes` (topological order) and `initializers`, each
//!   initializer carrying `offset` and `byte_length` into the blob.
//! * `tensors.bin`: initializer payloads, each starting at a 64-byte aligned
//!   offset, little-endian and row-major.
//!
//! Single tensors (corpus inputs, activations) use the `.nt` format, see
//! [`write_nt`].

mod chain;
mod container;
mod graph;
mod layout;
mod ntfile;
mod tensor;
mod validate;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use chain::{load_chain, save_chain, ConversionChain, Stage};
pub use container::{encode_model, load_model, load_model_unchecked, load_model_with, save_model, LoadOptions, FORMAT_VERSION};
pub use graph::{AttrValue, Layout, ModelGraph, NodeSpec, ValueInfo};
pub use layout::{canonical_input, canonicalize_layout, NCHW_FROM_NHWC};
pub use ntfile::{decode_nt, encode_nt, read_nt, write_nt};
pub use tensor::{numel, strides, DType, TensorData, Values};
pub use validate::{validate_model, Rule, Violation};

#[derive(Debug, Error)]
pub enum NmifError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not an NMIF container or tensor file: {0}")]
    MagicMismatch(String),
    #[error("unsupported format version {0}")]
    VersionUnsupported(u64),
    #[error("schema violation{}: {reason}", node_id.as_ref().map(|n| format!(" at node {n}")).unwrap_or_default())]
    SchemaViolation { node_id: Option<String>, reason: String },
    #[error("graph contains a cycle")]
    CyclicGraph,
    #[error("dangling reference to {0}")]
    DanglingReference(String),
    #[error("tensor {0} lies outside the blob")]
    BlobOutOfBounds(String),
    #[error("tensor {0} contains non-finite values")]
    NonFinite(String),
    #[error("element count mismatch: expected {expected}, got {got}")]
    ElementCount { expected: usize, got: usize },
    #[error("model failed validation: {}", summarize(.0))]
    ValidationFailed(Vec<Violation>),
    #[error("layout role of {0} is ambiguous; cannot canonicalize")]
    UnsupportedRank(String),
    #[error("invalid conversion chain: {0}")]
    InvalidChain(String),
}

fn summarize(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

impl NmifError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        NmifError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
