use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{canonical_input, canonicalize_layout, load_model, save_model, ModelGraph, NmifError};

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub label: String,
    pub model: ModelGraph,
}

/// Source, zero or more intermediate artifacts, then Target.
#[derive(Clone, Debug, PartialEq)]
pub struct ConversionChain {
    stages: Vec<Stage>,
}

impl ConversionChain {
    pub fn new(stages: Vec<Stage>) -> Result<Self, NmifError> {
        if stages.len() < 2 {
            return Err(NmifError::InvalidChain(format!("need at least 2 stages, got {}", stages.len())));
        }
        let reference = canonical_input(&stages[0].model);
        for stage in &stages[1..] {
            let got = canonical_input(&stage.model);
            if got != reference {
                return Err(NmifError::InvalidChain(format!(
                    "stage {} has inputs {got:?}, source has {reference:?}",
                    stage.label
                )));
            }
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn source(&self) -> &ModelGraph {
        &self.stages[0].model
    }

    pub fn target(&self) -> &ModelGraph {
        &self.stages[self.stages.len() - 1].model
    }

    pub fn labels(&self) -> Vec<String> {
        self.stages.iter().map(|s| s.label.clone()).collect()
    }

    /// Every stage rewritten to NCHW.
    pub fn canonicalized(&self) -> Result<Self, NmifError> {
        let stages = self
            .stages
            .iter()
            .map(|s| {
                Ok(Stage {
                    label: s.label.clone(),
                    model: canonicalize_layout(&s.model)?,
                })
            })
            .collect::<Result<Vec<_>, NmifError>>()?;
        Ok(Self { stages })
    }
}

#[derive(Serialize, Deserialize)]
struct ChainFile {
    stages: Vec<ChainEntry>,
}

#[derive(Serialize, Deserialize)]
struct ChainEntry {
    label: String,
    path: PathBuf,
}

/// Reads `chain.json` (or a directory containing one). Stage paths are
/// relative to the file's directory.
pub fn load_chain(path: &Path) -> Result<ConversionChain, NmifError> {
    let file = if path.is_dir() { path.join("chain.json") } else { path.to_path_buf() };
    let base = file.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&file).map_err(|e| NmifError::io(&file, e))?;
    let parsed: ChainFile = serde_json::from_str(&text).map_err(|e| NmifError::InvalidChain(e.to_string()))?;
    let stages = parsed
        .stages
        .into_iter()
        .map(|entry| {
            Ok(Stage {
                model: load_model(&base.join(&entry.path))?,
                label: entry.label,
            })
        })
        .collect::<Result<Vec<_>, NmifError>>()?;
    ConversionChain::new(stages)
}

/// Writes each stage as `stage<i>_<label>.nmif` plus `chain.json` into `dir`.
pub fn save_chain(chain: &ConversionChain, dir: &Path) -> Result<PathBuf, NmifError> {
    fs::create_dir_all(dir).map_err(|e| NmifError::io(dir, e))?;
    let mut entries = Vec::with_capacity(chain.len());
    for (i, stage) in chain.stages().iter().enumerate() {
        let rel = PathBuf::from(format!("stage{i}_{}.nmif", stage.label));
        save_model(&stage.model, &dir.join(&rel))?;
        entries.push(ChainEntry {
            label: stage.label.clone(),
            path: rel,
        });
    }
    let file = dir.join("chain.json");
    let mut text = serde_json::to_string_pretty(&ChainFile { stages: entries }).expect("chain serializes");
    text.push('\n');
    fs::write(&file, text).map_err(|e| NmifError::io(&file, e))?;
    Ok(file)
}
