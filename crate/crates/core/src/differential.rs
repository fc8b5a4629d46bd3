//! Batch inference over an input corpus, top-1 label comparison and
//! Kendall's tau triage of discrepant inputs.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interpreter::{self, ExecError};
use crate::nmif::{self, ModelGraph, NmifError, TensorData};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_TRIAGE: usize = 5;

#[derive(Debug, Error)]
pub enum DifferentialError {
    #[error("corpus {0} contains no .nt tensors")]
    CorpusEmpty(String),
    #[error("input {input_id} does not match the input of model {model}: {reason}")]
    InputShapeMismatch { input_id: String, model: usize, reason: String },
    #[error("model {model} failed on input {input_id}: {source}")]
    Execution {
        model: usize,
        input_id: String,
        #[source]
        source: ExecError,
    },
    #[error("no discrepant inputs to triage")]
    NoDiscrepancies,
    #[error("ranked lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Nmif(#[from] NmifError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusInput {
    pub id: String,
    pub tensor: TensorData,
}

/// Reads every `*.nt` file in `dir`; the file stem is the input id. Sorted by id.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusInput>, DifferentialError> {
    let entries = fs::read_dir(dir).map_err(|e| NmifError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut paths: Vec<_> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "nt"))
        .collect();
    paths.sort();
    let mut corpus = Vec::with_capacity(paths.len());
    for p in paths {
        let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        corpus.push(CorpusInput {
            id,
            tensor: nmif::read_nt(&p, false)?,
        });
    }
    if corpus.is_empty() {
        return Err(DifferentialError::CorpusEmpty(dir.display().to_string()));
    }
    corpus.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(corpus)
}

pub fn save_corpus(corpus: &[CorpusInput], dir: &Path) -> Result<(), NmifError> {
    fs::create_dir_all(dir).map_err(|e| NmifError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for input in corpus {
        nmif::write_nt(&dir.join(format!("{}.nt", input.id)), &input.tensor)?;
    }
    Ok(())
}

/// Per-input ranked labels, one list per model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub input_id: String,
    pub top_k: Vec<Vec<(usize, f32)>>,
}

impl LabelRecord {
    pub fn labels(&self, model: usize) -> Vec<usize> {
        self.top_k[model].iter().map(|(i, _)| *i).collect()
    }

    pub fn top1(&self, model: usize) -> Option<usize> {
        self.top_k[model].first().map(|(i, _)| *i)
    }
}

/// Runs every model on every input. Inputs fan out across the current rayon
/// pool; records come back ordered by input id.
pub fn run_corpus(models: &[ModelGraph], corpus: &[CorpusInput], k: usize) -> Result<Vec<LabelRecord>, DifferentialError> {
    if corpus.is_empty() {
        return Err(DifferentialError::CorpusEmpty("<in-memory>".into()));
    }
    for input in corpus {
        for (m, model) in models.iter().enumerate() {
            let want = model.inputs.first().map(|v| (v.dtype, v.shape.as_slice()));
            if want != Some((input.tensor.dtype(), input.tensor.shape())) {
                return Err(DifferentialError::InputShapeMismatch {
                    input_id: input.id.clone(),
                    model: m,
                    reason: format!("expected {want:?}, got {} {:?}", input.tensor.dtype(), input.tensor.shape()),
                });
            }
        }
    }
    let mut records = corpus
        .par_iter()
        .map(|input| {
            let top_k = models
                .iter()
                .enumerate()
                .map(|(m, model)| {
                    interpreter::execute(model, &input.id, &input.tensor, false, k)
                        .map(|t| t.top_k)
                        .map_err(|source| DifferentialError::Execution {
                            model: m,
                            input_id: input.id.clone(),
                            source,
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(LabelRecord {
                input_id: input.id.clone(),
                top_k,
            })
        })
        .collect::<Result<Vec<_>, DifferentialError>>()?;
    records.sort_by(|a, b| a.input_id.cmp(&b.input_id));
    Ok(records)
}

/// Kendall's tau-b between two ranked label lists of equal length `k`.
///
/// Ranks are taken over the union of both lists: a label's rank is its
/// 1-based position, or `k + 1` when the list does not contain it. Pairs
/// tied in one ranking enter the tau-b denominator
/// `sqrt((N - T_a) * (N - T_b))`. Identical lists give 1.0. `None` means the
/// denominator vanished (every pair tied), which triage treats as maximal
/// disagreement.
pub fn kendall_tau(a: &[usize], b: &[usize]) -> Result<Option<f64>, DifferentialError> {
    if a.len() != b.len() {
        return Err(DifferentialError::LengthMismatch(a.len(), b.len()));
    }
    if a == b {
        return Ok(Some(1.0));
    }
    let k = a.len();
    let mut union: Vec<usize> = a.iter().chain(b).copied().collect();
    union.sort_unstable();
    union.dedup();
    let rank = |list: &[usize], label: usize| list.iter().position(|&x| x == label).map_or(k + 1, |p| p + 1);
    let ra: Vec<usize> = union.iter().map(|&x| rank(a, x)).collect();
    let rb: Vec<usize> = union.iter().map(|&x| rank(b, x)).collect();
    Ok(tau_b(&ra, &rb))
}

/// Tau-b over paired rank vectors; `None` on a zero denominator.
pub fn tau_b(ra: &[usize], rb: &[usize]) -> Option<f64> {
    let n = ra.len();
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let sa = ra[i].cmp(&ra[j]) as i64;
            let sb = rb[i].cmp(&rb[j]) as i64;
            if sa == 0 {
                ties_a += 1;
            }
            if sb == 0 {
                ties_b += 1;
            }
            match sa * sb {
                1 => concordant += 1,
                -1 => discordant += 1,
                _ => {}
            }
        }
    }
    let pairs = (n * n.saturating_sub(1) / 2) as i64;
    let denom = (((pairs - ties_a) * (pairs - ties_b)) as f64).sqrt();
    (denom > 0.0).then(|| (concordant - discordant) as f64 / denom)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputComparison {
    pub input_id: String,
    pub source_top1: Option<usize>,
    pub target_top1: Option<usize>,
    pub discrepant: bool,
    /// `None` when tau is undefined (degenerate ranking).
    pub tau: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub source_index: usize,
    pub target_index: usize,
    pub total_inputs: usize,
    pub discrepant_inputs: usize,
    pub rate: f64,
    pub inputs: Vec<InputComparison>,
    /// Discrepant input ids, most-disagreeing (lowest tau) first.
    pub triage: Vec<String>,
}

impl DiscrepancyReport {
    pub fn tau(&self, input_id: &str) -> Option<f64> {
        self.inputs.iter().find(|c| c.input_id == input_id).and_then(|c| c.tau)
    }

    pub fn is_discrepant(&self, input_id: &str) -> bool {
        self.inputs.iter().any(|c| c.input_id == input_id && c.discrepant)
    }
}

fn triage_key(tau: Option<f64>) -> f64 {
    tau.unwrap_or(f64::NEG_INFINITY)
}

/// Compares the top-1 labels of two models across all records.
pub fn compare_labels(records: &[LabelRecord], source: usize, target: usize) -> DiscrepancyReport {
    let mut inputs: Vec<InputComparison> = records
        .iter()
        .map(|r| {
            let (s, t) = (r.labels(source), r.labels(target));
            let tau = if s.len() == t.len() { kendall_tau(&s, &t).ok().flatten() } else { None };
            InputComparison {
                input_id: r.input_id.clone(),
                source_top1: r.top1(source),
                target_top1: r.top1(target),
                discrepant: r.top1(source) != r.top1(target),
                tau,
            }
        })
        .collect();
    inputs.sort_by(|a, b| a.input_id.cmp(&b.input_id));
    let discrepant = inputs.iter().filter(|c| c.discrepant).count();
    let mut triage: Vec<&InputComparison> = inputs.iter().filter(|c| c.discrepant).collect();
    triage.sort_by(|a, b| {
        triage_key(a.tau)
            .total_cmp(&triage_key(b.tau))
            .then_with(|| a.input_id.cmp(&b.input_id))
    });
    let triage = triage.into_iter().map(|c| c.input_id.clone()).collect();
    DiscrepancyReport {
        source_index: source,
        target_index: target,
        total_inputs: inputs.len(),
        discrepant_inputs: discrepant,
        rate: if inputs.is_empty() { 0.0 } else { discrepant as f64 / inputs.len() as f64 },
        inputs,
        triage,
    }
}

/// The `n` discrepant inputs with the lowest tau.
pub fn select_triage_subset(report: &DiscrepancyReport, n: usize) -> Result<Vec<String>, DifferentialError> {
    if report.triage.is_empty() {
        return Err(DifferentialError::NoDiscrepancies);
    }
    Ok(report.triage.iter().take(n).cloned().collect())
}

/// Pairwise discrepancy rates between all models, `matrix[i][j]`.
pub fn pairwise_rates(records: &[LabelRecord], models: usize) -> Vec<Vec<f64>> {
    (0..models)
        .map(|i| (0..models).map(|j| compare_labels(records, i, j).rate).collect())
        .collect()
}

/// `discrepancy.json` body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyExport {
    pub models: Vec<String>,
    pub k: usize,
    pub report: DiscrepancyReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairwise_rates: Option<Vec<Vec<f64>>>,
}

pub fn write_discrepancy_csv(report: &DiscrepancyReport, path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["input_id", "source_top1", "target_top1", "discrepant", "tau"])?;
    for c in &report.inputs {
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            c.input_id.clone(),
            opt(c.source_top1),
            opt(c.target_top1),
            c.discrepant.to_string(),
            c.tau.map(|t| format!("{t:.6}")).unwrap_or_else(|| "undefined".into()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, lists: &[&[usize]]) -> LabelRecord {
        LabelRecord {
            input_id: id.into(),
            top_k: lists.iter().map(|l| l.iter().map(|&i| (i, 0.0)).collect()).collect(),
        }
    }

    #[test]
    fn tau_identity_and_reverse() {
        assert_eq!(kendall_tau(&[3, 1, 4, 0, 2], &[3, 1, 4, 0, 2]).unwrap(), Some(1.0));
        assert_eq!(kendall_tau(&[3, 1, 4, 0, 2], &[2, 0, 4, 1, 3]).unwrap(), Some(-1.0));
    }

    #[test]
    fn tau_length_mismatch() {
        assert!(matches!(kendall_tau(&[1, 2], &[1]), Err(DifferentialError::LengthMismatch(2, 1))));
    }

    #[test]
    fn tau_b_degenerate() {
        assert_eq!(tau_b(&[1, 1, 1], &[1, 2, 3]), None);
        assert_eq!(tau_b(&[1], &[1]), None);
    }

    #[test]
    fn identical_records_no_discrepancy() {
        let recs = vec![record("a", &[&[1, 2], &[1, 2]]), record("b", &[&[0, 3], &[0, 3]])];
        let r = compare_labels(&recs, 0, 1);
        assert_eq!(r.rate, 0.0);
        assert!(r.inputs.iter().all(|c| c.tau == Some(1.0)));
        assert!(matches!(select_triage_subset(&r, 5), Err(DifferentialError::NoDiscrepancies)));
    }

    #[test]
    fn all_top1_differ_gives_full_rate() {
        let recs = vec![record("a", &[&[1, 2], &[2, 1]]), record("b", &[&[0, 3], &[3, 0]])];
        assert_eq!(compare_labels(&recs, 0, 1).rate, 1.0);
    }

    #[test]
    fn triage_sorted_by_tau() {
        // Taus engineered via overlapping lists; order must follow tau ascending.
        let recs = vec![
            record("x", &[&[0, 1, 2, 3, 4], &[1, 0, 2, 3, 4]]),
            record("y", &[&[0, 1, 2, 3, 4], &[4, 3, 2, 1, 0]]),
            record("z", &[&[0, 1, 2, 3, 4], &[1, 2, 0, 4, 3]]),
        ];
        let r = compare_labels(&recs, 0, 1);
        let taus: Vec<f64> = r.triage.iter().map(|id| r.tau(id).unwrap()).collect();
        assert!(taus.windows(2).all(|w| w[0] <= w[1]), "{taus:?}");
        assert_eq!(r.triage[0], "y");
    }

    #[test]
    fn triage_takes_at_most_n() {
        let recs: Vec<LabelRecord> = (0..3).map(|i| record(&format!("i{i}"), &[&[0, 1], &[1, 0]])).collect();
        let r = compare_labels(&recs, 0, 1);
        assert_eq!(select_triage_subset(&r, 5).unwrap().len(), 3);
    }
}
