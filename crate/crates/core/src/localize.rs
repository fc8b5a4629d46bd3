//! Stage bisection over a conversion chain, per-layer activation divergence
//! and suspect ranking.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{self, LayerAlignment, HyperDiffEntry, ParamDiffEntry, StructDiffEntry, StructKind};
use crate::differential::{self, CorpusInput, DifferentialError, DiscrepancyReport};
use crate::interpreter::{self, ExecError};
use crate::nmif::{ConversionChain, ModelGraph, NmifError};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LocalizeError {
    #[error("stage {stage_label} failed at node {node_id}: {reason}")]
    StageExecutionFailed {
        stage_label: String,
        node_id: String,
        reason: String,
    },
    #[error("no inputs to bisect")]
    NoTriageInputs,
    #[error(transparent)]
    Differential(#[from] DifferentialError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Nmif(#[from] NmifError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizeConfig {
    pub k: usize,
    pub triage: usize,
    pub tolerance: f64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            k: differential::DEFAULT_K,
            triage: differential::DEFAULT_TRIAGE,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultyEdge {
    pub from: usize,
    pub to: usize,
    pub from_label: String,
    pub to_label: String,
    /// Inputs whose top-1 label changes across this edge.
    pub inputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageVerdict {
    pub stage_labels: Vec<String>,
    /// input id -> top-1 label at every stage.
    pub top1: BTreeMap<String, Vec<Option<usize>>>,
    /// Ordered by chain position.
    pub faulty_edges: Vec<FaultyEdge>,
}

impl StageVerdict {
    pub fn earliest_edge(&self) -> Option<(usize, usize)> {
        self.faulty_edges.first().map(|e| (e.from, e.to))
    }
}

/// Builds the verdict from already computed per-stage labels.
pub fn bisect_from_labels(stage_labels: &[String], top1: BTreeMap<String, Vec<Option<usize>>>) -> StageVerdict {
    let mut faulty_edges = Vec::new();
    for e in 0..stage_labels.len().saturating_sub(1) {
        let inputs: Vec<String> = top1
            .iter()
            .filter(|(_, labels)| labels[e] != labels[e + 1])
            .map(|(id, _)| id.clone())
            .collect();
        if !inputs.is_empty() {
            faulty_edges.push(FaultyEdge {
                from: e,
                to: e + 1,
                from_label: stage_labels[e].clone(),
                to_label: stage_labels[e + 1].clone(),
                inputs,
            });
        }
    }
    StageVerdict {
        stage_labels: stage_labels.to_vec(),
        top1,
        faulty_edges,
    }
}

/// Runs every stage of a canonicalized chain on each input and flags the
/// edges across which the top-1 label changes.
pub fn bisect_stages(chain: &ConversionChain, inputs: &[CorpusInput]) -> Result<StageVerdict, LocalizeError> {
    if inputs.is_empty() {
        return Err(LocalizeError::NoTriageInputs);
    }
    let labels = chain.labels();
    let rows = inputs
        .par_iter()
        .map(|input| {
            let tops = chain
                .stages()
                .iter()
                .map(|stage| {
                    interpreter::execute(&stage.model, &input.id, &input.tensor, false, 1)
                        .map(|t| t.top1())
                        .map_err(|e| {
                            let node_id = match &e {
                                ExecError::ShapeMismatch { node_id, .. } => node_id.clone(),
                                _ => String::new(),
                            };
                            LocalizeError::StageExecutionFailed {
                                stage_label: stage.label.clone(),
                                node_id,
                                reason: e.to_string(),
                            }
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((input.id.clone(), tops))
        })
        .collect::<Result<Vec<_>, LocalizeError>>()?;
    Ok(bisect_from_labels(&labels, rows.into_iter().collect()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDifference {
    pub position: usize,
    pub source_node: String,
    pub target_node: String,
    /// Mean `|a_source - a_target|`; `None` marks a structural divergence
    /// (activation shapes differ).
    pub mean_abs_diff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDivergence {
    pub input_id: String,
    /// Traced as an agreeing control input rather than a discrepant one.
    pub control: bool,
    pub pairs: Vec<PairDifference>,
    /// Earliest pair whose difference exceeds the tolerance or whose shapes differ.
    pub first_divergent_pair: Option<usize>,
    /// Pair with the largest difference above tolerance (earliest on ties);
    /// the last structural marker when no numeric difference exceeds it.
    pub max_divergent_pair: Option<usize>,
}

/// Per-pair mean absolute activation difference for one input.
pub fn trace_divergence(
    source: &ModelGraph,
    target: &ModelGraph,
    alignment: &LayerAlignment,
    input: &CorpusInput,
    tolerance: f64,
    control: bool,
) -> Result<LayerDivergence, ExecError> {
    let a = interpreter::execute(source, &input.id, &input.tensor, true, 1)?;
    let b = interpreter::execute(target, &input.id, &input.tensor, true, 1)?;
    let mut pairs = Vec::with_capacity(alignment.pairs.len());
    for (position, (s, t)) in alignment.pairs.iter().enumerate() {
        let (Some(x), Some(y)) = (a.entry(s), b.entry(t)) else {
            continue;
        };
        let mean = (x.tensor.shape() == y.tensor.shape()).then(|| diffcore::abs_diff_stats(&x.tensor, &y.tensor).0);
        pairs.push(PairDifference {
            position,
            source_node: s.clone(),
            target_node: t.clone(),
            mean_abs_diff: mean,
        });
    }
    let divergent = |p: &&PairDifference| p.mean_abs_diff.is_none_or(|d| d > tolerance || d.is_nan());
    let first_divergent_pair = pairs.iter().find(divergent).map(|p| p.position);
    let mut max: Option<(f64, usize)> = None;
    for p in &pairs {
        if let Some(d) = p.mean_abs_diff.filter(|&d| d > tolerance) {
            if max.is_none_or(|(m, _)| d > m) {
                max = Some((d, p.position));
            }
        }
    }
    let last_marker = pairs.iter().rev().find(|p| p.mean_abs_diff.is_none()).map(|p| p.position);
    Ok(LayerDivergence {
        input_id: input.id.clone(),
        control,
        pairs,
        first_divergent_pair,
        max_divergent_pair: max.map(|(_, p)| p).or(last_marker),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", content = "entry")]
pub enum Evidence {
    Param(ParamDiffEntry),
    Hyper(HyperDiffEntry),
    Structure(StructDiffEntry),
}

impl Evidence {
    pub fn position(&self) -> usize {
        match self {
            Evidence::Param(p) => p.position,
            Evidence::Hyper(h) => h.position,
            Evidence::Structure(s) => s.position,
        }
    }

    fn class_rank(&self) -> u8 {
        match self {
            Evidence::Param(_) => 0,
            Evidence::Hyper(_) => 1,
            Evidence::Structure(_) => 2,
        }
    }

    fn magnitude(&self) -> f64 {
        match self {
            Evidence::Param(p) => p.mean_abs_diff,
            _ => 0.0,
        }
    }

    fn location(&self) -> Vec<String> {
        match self {
            Evidence::Param(p) => vec![p.pair.0.clone(), p.pair.1.clone(), p.slot.to_string()],
            Evidence::Hyper(h) => vec![h.pair.0.clone(), h.pair.1.clone(), h.attr_name.clone()],
            Evidence::Structure(s) => s.location.clone(),
        }
    }

    pub fn summary(&self) -> String {
        match self {
            Evidence::Param(p) => format!(
                "{} of {} differs: mean |diff| {:e}, max {:e}",
                p.tensor_role, p.pair.0, p.mean_abs_diff, p.max_abs_diff
            ),
            Evidence::Hyper(h) => {
                let show = |v: &Option<crate::nmif::AttrValue>| v.as_ref().map_or("<absent>".to_string(), |x| x.to_string());
                format!("{} of {} changed from {} to {}", h.attr_name, h.pair.0, show(&h.source_value), show(&h.target_value))
            }
            Evidence::Structure(s) => match &s.kind {
                StructKind::TypeSubstitution { source_op, target_op } => {
                    format!("{} {} became {} {}", source_op, s.location[0], target_op, s.location[1])
                }
                StructKind::ExtraTargetNode { op } => format!("target has extra {} node {}", op, s.location[0]),
                StructKind::MissingTargetNode { op } => format!("target lacks {} node {}", op, s.location[0]),
                StructKind::ParamShapeMismatch {
                    role,
                    source_shape,
                    target_shape,
                    ..
                } => format!("{role} of {} has shape {target_shape:?}, source {source_shape:?}", s.location[0]),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suspect {
    pub rank: usize,
    pub position: usize,
    pub summary: String,
    pub evidence: Evidence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub stage_labels: Vec<String>,
    pub config: LocalizeConfig,
    /// Source vs Target over the whole corpus.
    pub discrepancy: DiscrepancyReport,
    pub triage: Vec<String>,
    pub control_input: Option<String>,
    pub stage_verdict: Option<StageVerdict>,
    /// Earliest faulty edge; `None` when Source and Target agree everywhere.
    pub implicated_edge: Option<(usize, usize)>,
    /// Stages whose models the diffs and traces compare.
    pub compared_stages: (usize, usize),
    pub alignment: LayerAlignment,
    pub params: Vec<ParamDiffEntry>,
    pub hypers: Vec<HyperDiffEntry>,
    pub structure: Vec<StructDiffEntry>,
    pub layer_divergences: Vec<LayerDivergence>,
    pub suspects: Vec<Suspect>,
    /// Node ids of the later compared stage -> ids in the Target model.
    pub target_node_map: BTreeMap<String, String>,
}

impl LocalizationReport {
    /// Earliest first-divergent pair over the traced discrepant inputs.
    pub fn first_divergent_pair(&self) -> Option<usize> {
        self.layer_divergences
            .iter()
            .filter(|d| !d.control)
            .filter_map(|d| d.first_divergent_pair)
            .min()
    }

    pub fn max_divergent_pair(&self) -> Option<usize> {
        self.layer_divergences
            .iter()
            .filter(|d| !d.control)
            .filter_map(|d| d.max_divergent_pair)
            .max()
    }

    pub fn is_clean(&self) -> bool {
        self.discrepancy.discrepant_inputs == 0 && self.suspects.is_empty()
    }
}

/// Node distance between a structural entry and the pair at `position`.
fn distance_to_pair(entry: &StructDiffEntry, position: usize, source: &ModelGraph, target: &ModelGraph, alignment: &LayerAlignment) -> Option<usize> {
    let (s, t) = alignment.pairs.get(position)?;
    let via = |graph: &ModelGraph, a: &str, b: &str| graph.node_distance(graph.node_index(a)?, graph.node_index(b)?);
    match &entry.kind {
        StructKind::ExtraTargetNode { .. } => via(target, &entry.location[0], t),
        StructKind::MissingTargetNode { .. } => via(source, &entry.location[0], s),
        _ => via(source, &entry.location[0], s),
    }
}

fn rank(mut evidence: Vec<Evidence>) -> Vec<Suspect> {
    evidence.sort_by(|a, b| {
        a.position()
            .cmp(&b.position())
            .then(a.class_rank().cmp(&b.class_rank()))
            .then(b.magnitude().total_cmp(&a.magnitude()))
            .then_with(|| a.location().cmp(&b.location()))
    });
    evidence
        .into_iter()
        .enumerate()
        .map(|(i, e)| Suspect {
            rank: i + 1,
            position: e.position(),
            summary: e.summary(),
            evidence: e,
        })
        .collect()
}

/// Full pipeline: Source/Target comparison, stage bisection, static diffs on
/// the implicated edge, activation traces and suspect ranking.
///
/// When Source and Target agree on every input the static diffs of Source
/// against Target still run and any non-zero finding is reported as a
/// suspect, since equivalent rewrites (Flatten vs Reshape) and changes masked
/// on this corpus leave the labels untouched.
pub fn localize(chain: &ConversionChain, corpus: &[CorpusInput], config: &LocalizeConfig) -> Result<LocalizationReport, LocalizeError> {
    let canon = chain.canonicalized()?;
    let last = canon.len() - 1;
    let records = differential::run_corpus(&[canon.source().clone(), canon.target().clone()], corpus, config.k)?;
    let discrepancy = differential::compare_labels(&records, 0, 1);

    if discrepancy.discrepant_inputs == 0 {
        let (source, target) = (canon.source(), canon.target());
        let diff = diffcore::DiffReport::compute(source, target);
        let evidence = diff
            .params
            .iter()
            .filter(|p| p.max_abs_diff > 0.0)
            .cloned()
            .map(Evidence::Param)
            .chain(diff.hypers.iter().cloned().map(Evidence::Hyper))
            .chain(diff.structure.iter().cloned().map(Evidence::Structure))
            .collect();
        return Ok(LocalizationReport {
            stage_labels: canon.labels(),
            config: *config,
            discrepancy,
            triage: vec![],
            control_input: None,
            stage_verdict: None,
            implicated_edge: None,
            compared_stages: (0, last),
            target_node_map: target.nodes.iter().map(|n| (n.id.clone(), n.id.clone())).collect(),
            suspects: rank(evidence),
            alignment: diff.alignment,
            params: diff.params,
            hypers: diff.hypers,
            structure: diff.structure,
            layer_divergences: vec![],
        });
    }

    let triage = differential::select_triage_subset(&discrepancy, config.triage)?;
    let by_id: BTreeMap<&str, &CorpusInput> = corpus.iter().map(|c| (c.id.as_str(), c)).collect();
    let triage_inputs: Vec<CorpusInput> = triage.iter().map(|id| by_id[id.as_str()].clone()).collect();
    let verdict = bisect_stages(&canon, &triage_inputs)?;
    let (from, to) = verdict.earliest_edge().expect("a top-1 change between the chain ends crosses some edge");

    let (source, target) = (&canon.stages()[from].model, &canon.stages()[to].model);
    let diff = diffcore::DiffReport::compute(source, target);

    let control_input = discrepancy.inputs.iter().find(|c| !c.discrepant).map(|c| c.input_id.clone());
    let mut traced: Vec<(&CorpusInput, bool)> = triage_inputs.iter().map(|c| (c, false)).collect();
    if let Some(id) = &control_input {
        traced.push((by_id[id.as_str()], true));
    }
    let layer_divergences = traced
        .par_iter()
        .map(|(input, control)| trace_divergence(source, target, &diff.alignment, input, config.tolerance, *control))
        .collect::<Result<Vec<_>, _>>()?;

    let firsts: Vec<usize> = layer_divergences.iter().filter(|d| !d.control).filter_map(|d| d.first_divergent_pair).collect();
    let first = firsts.iter().copied().min();
    let max = layer_divergences.iter().filter(|d| !d.control).filter_map(|d| d.max_divergent_pair).max();
    let evidence: Vec<Evidence> = match first {
        Some(first) => diff
            .params
            .iter()
            .filter(|p| p.max_abs_diff > 0.0 && p.position <= first)
            .cloned()
            .map(Evidence::Param)
            .chain(diff.hypers.iter().filter(|h| h.position <= first).cloned().map(Evidence::Hyper))
            .chain(
                diff.structure
                    .iter()
                    .filter(|s| {
                        distance_to_pair(s, first, source, target, &diff.alignment).is_some_and(|d| d <= 1)
                            && max.is_none_or(|m| s.position <= m)
                    })
                    .cloned()
                    .map(Evidence::Structure),
            )
            .collect(),
        None => diff
            .params
            .iter()
            .filter(|p| p.max_abs_diff > 0.0)
            .cloned()
            .map(Evidence::Param)
            .chain(diff.hypers.iter().cloned().map(Evidence::Hyper))
            .chain(diff.structure.iter().cloned().map(Evidence::Structure))
            .collect(),
    };

    let target_node_map = if to == last {
        target.nodes.iter().map(|n| (n.id.clone(), n.id.clone())).collect()
    } else {
        diffcore::align_layers(target, canon.target()).pairs.into_iter().collect()
    };

    Ok(LocalizationReport {
        stage_labels: canon.labels(),
        config: *config,
        discrepancy,
        triage,
        control_input,
        stage_verdict: Some(verdict),
        implicated_edge: Some((from, to)),
        compared_stages: (from, to),
        alignment: diff.alignment,
        params: diff.params,
        hypers: diff.hypers,
        structure: diff.structure,
        layer_divergences,
        suspects: rank(evidence),
        target_node_map,
    })
}

/// `layers.csv`: one row per aligned pair with the mean activation difference
/// of every traced input (`shape` marks a structural divergence) and the
/// largest parameter difference at that pair.
pub fn write_layers_csv(report: &LocalizationReport, path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["position".to_string(), "source_node".into(), "target_node".into()];
    header.extend(
        report
            .layer_divergences
            .iter()
            .map(|d| if d.control { format!("{}:control", d.input_id) } else { d.input_id.clone() }),
    );
    header.push("parameters".into());
    w.write_record(&header)?;
    for (position, (s, t)) in report.alignment.pairs.iter().enumerate() {
        let mut row = vec![position.to_string(), s.clone(), t.clone()];
        for d in &report.layer_divergences {
            let cell = d.pairs.iter().find(|p| p.position == position).map_or(String::new(), |p| match p.mean_abs_diff {
                Some(v) => format!("{v:e}"),
                None => "shape".into(),
            });
            row.push(cell);
        }
        let param = report
            .params
            .iter()
            .filter(|p| p.position == position)
            .map(|p| p.mean_abs_diff)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
        row.push(param.map(|v| format!("{v:e}")).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
