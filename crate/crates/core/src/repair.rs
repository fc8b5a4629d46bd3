//! Replayable, invertible graph edits derived from localization suspects,
//! applied greedily with re-verification after each edit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{StructKind, TensorRole};
use crate::differential::{self, CorpusInput, DifferentialError};
use crate::localize::{localize, Evidence, LocalizationReport, LocalizeConfig, LocalizeError, Suspect};
use crate::nmif::{validate_model, ConversionChain, AttrValue, ModelGraph, NmifError, NodeSpec, TensorData, Violation};

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("unrepairable suspect: {0}")]
    UnrepairableSuspect(String),
    #[error("action {index} produced an invalid graph: {}", violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    ValidationFailed { index: usize, violations: Vec<Violation> },
    #[error("action {index} does not apply: {reason}")]
    InvalidAction { index: usize, reason: String },
    #[error(transparent)]
    Differential(#[from] DifferentialError),
    #[error(transparent)]
    Nmif(#[from] NmifError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamReplacement {
    pub slot: usize,
    pub role: TensorRole,
    /// Initializer name in the repaired graph.
    pub tensor: String,
    pub old: TensorData,
    pub new: TensorData,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action")]
pub enum ActionKind {
    ReplaceParams {
        node: String,
        source_node: String,
        tensors: Vec<ParamReplacement>,
    },
    ReplaceHyper {
        node: String,
        attr: String,
        old: Option<AttrValue>,
        new: Option<AttrValue>,
    },
    SubstituteNode {
        node: String,
        old: NodeSpec,
        replacement: NodeSpec,
    },
    /// Splices a single-input, single-output node out of the graph.
    RemoveNode {
        node: String,
        removed: NodeSpec,
        index: usize,
        /// `(consumer id, input slot)` that read the removed node's output.
        rewired: Vec<(String, usize)>,
    },
    /// Inverse of `RemoveNode`.
    InsertNode {
        node: NodeSpec,
        index: usize,
        rewired: Vec<(String, usize)>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairAction {
    #[serde(flatten)]
    pub kind: ActionKind,
    /// Rank of the suspect this action addresses.
    pub suspect_rank: Option<usize>,
    pub description: String,
}

impl RepairAction {
    pub fn label(&self) -> &'static str {
        match self.kind {
            ActionKind::ReplaceParams { .. } => "ReplaceParams",
            ActionKind::ReplaceHyper { .. } => "ReplaceHyper",
            ActionKind::SubstituteNode { .. } => "SubstituteNode",
            ActionKind::RemoveNode { .. } => "RemoveNode",
            ActionKind::InsertNode { .. } => "InsertNode",
        }
    }

    /// The edit that undoes this one.
    pub fn inverse(&self) -> RepairAction {
        let kind = match &self.kind {
            ActionKind::ReplaceParams {
                node,
                source_node,
                tensors,
            } => ActionKind::ReplaceParams {
                node: node.clone(),
                source_node: source_node.clone(),
                tensors: tensors
                    .iter()
                    .map(|t| ParamReplacement {
                        old: t.new.clone(),
                        new: t.old.clone(),
                        ..t.clone()
                    })
                    .collect(),
            },
            ActionKind::ReplaceHyper { node, attr, old, new } => ActionKind::ReplaceHyper {
                node: node.clone(),
                attr: attr.clone(),
                old: new.clone(),
                new: old.clone(),
            },
            ActionKind::SubstituteNode { node, old, replacement } => ActionKind::SubstituteNode {
                node: node.clone(),
                old: replacement.clone(),
                replacement: old.clone(),
            },
            ActionKind::RemoveNode {
                removed, index, rewired, ..
            } => ActionKind::InsertNode {
                node: removed.clone(),
                index: *index,
                rewired: rewired.clone(),
            },
            ActionKind::InsertNode { node, index, rewired } => ActionKind::RemoveNode {
                node: node.id.clone(),
                removed: node.clone(),
                index: *index,
                rewired: rewired.clone(),
            },
        };
        RepairAction {
            description: format!("undo: {}", self.description),
            kind,
            suspect_rank: self.suspect_rank,
        }
    }
}

/// Inverse edits in reverse order: `apply(apply(g, a), invert(a)) == g`.
pub fn invert(actions: &[RepairAction]) -> Vec<RepairAction> {
    actions.iter().rev().map(RepairAction::inverse).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedSuspect {
    pub rank: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairPlan {
    pub actions: Vec<RepairAction>,
    pub skipped: Vec<SkippedSuspect>,
}

fn node_of<'a>(g: &'a ModelGraph, id: &str) -> Result<&'a NodeSpec, String> {
    g.node(id).ok_or_else(|| format!("node {id} not found"))
}

/// Maps one suspect to an edit of `target`. `source` is the earlier model of
/// the compared edge; `target_id` translates compared-stage ids into `target`.
fn plan_one(suspect: &Suspect, source: &ModelGraph, target: &ModelGraph, target_id: &dyn Fn(&str) -> Option<String>) -> Result<RepairAction, String> {
    let resolve = |id: &str| target_id(id).ok_or_else(|| format!("no counterpart of {id} in the repaired model"));
    let kind = match &suspect.evidence {
        Evidence::Param(p) => {
            let node = resolve(&p.pair.1)?;
            let s = node_of(source, &p.pair.0)?;
            let t = node_of(target, &node)?;
            let (Some(sname), Some(tname)) = (s.inputs.get(p.slot), t.inputs.get(p.slot)) else {
                return Err(format!("slot {} missing on {}", p.slot, node));
            };
            let (Some(new), Some(old)) = (source.initializers.get(sname), target.initializers.get(tname)) else {
                return Err(format!("slot {} of {node} is not a parameter", p.slot));
            };
            if new.shape() != old.shape() {
                return Err(format!("{} shape differs on {node}", p.tensor_role));
            }
            ActionKind::ReplaceParams {
                node,
                source_node: p.pair.0.clone(),
                tensors: vec![ParamReplacement {
                    slot: p.slot,
                    role: p.tensor_role,
                    tensor: tname.clone(),
                    old: old.clone(),
                    new: new.clone(),
                }],
            }
        }
        Evidence::Hyper(h) => {
            let node = resolve(&h.pair.1)?;
            let t = node_of(target, &node)?;
            let s = node_of(source, &h.pair.0)?;
            if s.op_type != t.op_type {
                return Err(format!("{node} is a {} in the repaired model", t.op_type));
            }
            ActionKind::ReplaceHyper {
                old: t.attrs.get(&h.attr_name).cloned(),
                new: s.attrs.get(&h.attr_name).cloned(),
                attr: h.attr_name.clone(),
                node,
            }
        }
        Evidence::Structure(entry) => match &entry.kind {
            StructKind::TypeSubstitution { .. } => {
                let node = resolve(&entry.location[1])?;
                let s = node_of(source, &entry.location[0])?;
                let t = node_of(target, &node)?;
                let has_params = |g: &ModelGraph, n: &NodeSpec| n.inputs.iter().any(|x| g.initializers.contains_key(x));
                if has_params(source, s) || has_params(target, t) || s.inputs.len() != t.inputs.len() {
                    return Err(format!("substituting {} for {} needs parameter rewiring", s.op_type, t.op_type));
                }
                let replacement = NodeSpec {
                    id: t.id.clone(),
                    op_type: s.op_type,
                    attrs: s.attrs.clone(),
                    inputs: t.inputs.clone(),
                    outputs: t.outputs.clone(),
                };
                ActionKind::SubstituteNode {
                    node,
                    old: t.clone(),
                    replacement,
                }
            }
            StructKind::ExtraTargetNode { .. } => {
                let node = resolve(&entry.location[0])?;
                let index = target.node_index(&node).ok_or_else(|| format!("node {node} not found"))?;
                let removed = target.nodes[index].clone();
                let data_inputs: Vec<&String> = removed.inputs.iter().filter(|x| !target.initializers.contains_key(*x)).collect();
                if data_inputs.len() != 1 || removed.outputs.len() != 1 {
                    return Err(format!("{node} is not a single-input single-output node"));
                }
                if removed.inputs.len() != 1 {
                    return Err(format!("{node} carries parameters"));
                }
                if target.is_graph_output(removed.output()) {
                    return Err(format!("{node} produces a graph output"));
                }
                let rewired = target
                    .nodes
                    .iter()
                    .flat_map(|n| {
                        n.inputs
                            .iter()
                            .enumerate()
                            .filter(|(_, x)| x.as_str() == removed.output())
                            .map(|(slot, _)| (n.id.clone(), slot))
                            .collect::<Vec<_>>()
                    })
                    .collect();
                ActionKind::RemoveNode {
                    node,
                    removed,
                    index,
                    rewired,
                }
            }
            StructKind::MissingTargetNode { op } => {
                return Err(format!("restoring missing {op} node {} requires sub-graph synthesis", entry.location[0]))
            }
            StructKind::ParamShapeMismatch { .. } => {
                return Err(format!("parameter shapes of {} diverge structurally", entry.location[0]))
            }
        },
    };
    Ok(RepairAction {
        kind,
        suspect_rank: Some(suspect.rank),
        description: format!("#{}: {}", suspect.rank, suspect.summary),
    })
}

/// Maps ranked suspects to edits of `target`, the canonicalized Target model.
/// `source` is the canonicalized earlier stage of the compared edge.
///
/// Suspects outside the edit vocabulary are listed in `skipped`; the call
/// fails only when every suspect is unrepairable.
pub fn plan_repairs(report: &LocalizationReport, source: &ModelGraph, target: &ModelGraph) -> Result<RepairPlan, RepairError> {
    let lookup = |id: &str| report.target_node_map.get(id).cloned();
    let mut plan = RepairPlan {
        actions: vec![],
        skipped: vec![],
    };
    for suspect in &report.suspects {
        match plan_one(suspect, source, target, &lookup) {
            Ok(action) => plan.actions.push(action),
            Err(reason) => plan.skipped.push(SkippedSuspect {
                rank: suspect.rank,
                reason,
            }),
        }
    }
    if plan.actions.is_empty() && !plan.skipped.is_empty() {
        let reasons: Vec<String> = plan.skipped.iter().map(|s| format!("#{}: {}", s.rank, s.reason)).collect();
        return Err(RepairError::UnrepairableSuspect(reasons.join("; ")));
    }
    Ok(plan)
}

fn apply_one(g: &mut ModelGraph, action: &RepairAction, index: usize) -> Result<(), RepairError> {
    let invalid = |reason: String| RepairError::InvalidAction { index, reason };
    let position = |g: &ModelGraph, id: &str| g.node_index(id).ok_or_else(|| invalid(format!("node {id} not found")));
    match &action.kind {
        ActionKind::ReplaceParams { node, tensors, .. } => {
            position(g, node)?;
            for t in tensors {
                let Some(slot) = g.initializers.get_mut(&t.tensor) else {
                    return Err(invalid(format!("initializer {} not found", t.tensor)));
                };
                *slot = t.new.clone();
            }
        }
        ActionKind::ReplaceHyper { node, attr, new, .. } => {
            let i = position(g, node)?;
            match new {
                Some(v) => g.nodes[i].attrs.insert(attr.clone(), v.clone()),
                None => g.nodes[i].attrs.remove(attr),
            };
        }
        ActionKind::SubstituteNode { node, replacement, .. } => {
            let i = position(g, node)?;
            g.nodes[i] = replacement.clone();
        }
        ActionKind::RemoveNode { node, rewired, .. } => {
            let i = position(g, node)?;
            let removed = g.nodes.remove(i);
            let (from, to) = (removed.output().to_string(), removed.inputs[0].clone());
            for (consumer, slot) in rewired {
                let c = position(g, consumer)?;
                match g.nodes[c].inputs.get_mut(*slot) {
                    Some(x) if *x == from => *x = to.clone(),
                    _ => return Err(invalid(format!("{consumer} slot {slot} does not read {from}"))),
                }
            }
        }
        ActionKind::InsertNode { node, index: at, rewired } => {
            if g.node(&node.id).is_some() {
                return Err(invalid(format!("node {} already exists", node.id)));
            }
            for (consumer, slot) in rewired {
                let c = position(g, consumer)?;
                match g.nodes[c].inputs.get_mut(*slot) {
                    Some(x) if *x == node.inputs[0] => *x = node.output().to_string(),
                    _ => return Err(invalid(format!("{consumer} slot {slot} does not read {}", node.inputs[0]))),
                }
            }
            g.nodes.insert((*at).min(g.nodes.len()), node.clone());
        }
    }
    g.edit_log.push(format!("{} {}", action.label(), action.description));
    Ok(())
}

/// Applies `actions` in order to a copy of `target`. The graph must validate
/// after every action; no partial result is returned.
pub fn apply(target: &ModelGraph, actions: &[RepairAction]) -> Result<ModelGraph, RepairError> {
    let mut g = target.clone();
    for (index, action) in actions.iter().enumerate() {
        apply_one(&mut g, action, index)?;
        let violations = validate_model(&g);
        if !violations.is_empty() {
            return Err(RepairError::ValidationFailed { index, violations });
        }
    }
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Resolved,
    Improved,
    NoEffect,
    Regressed,
}

pub fn verdict(before: f64, after: f64) -> Verdict {
    if after == 0.0 {
        Verdict::Resolved
    } else if after < before {
        Verdict::Improved
    } else if after > before {
        Verdict::Regressed
    } else {
        Verdict::NoEffect
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairOutcome {
    pub actions: Vec<RepairAction>,
    pub rate_before: f64,
    pub rate_after: f64,
    pub verdict: Verdict,
}

/// Discrepancy rate of `candidate` against `source` on `corpus`.
pub fn discrepancy_rate(source: &ModelGraph, candidate: &ModelGraph, corpus: &[CorpusInput], k: usize) -> Result<f64, DifferentialError> {
    let records = differential::run_corpus(&[source.clone(), candidate.clone()], corpus, k)?;
    Ok(differential::compare_labels(&records, 0, 1).rate)
}

/// Rates of `target` and `repaired` against `source` on `corpus`.
pub fn verify(
    source: &ModelGraph,
    target: &ModelGraph,
    repaired: &ModelGraph,
    actions: &[RepairAction],
    corpus: &[CorpusInput],
    k: usize,
) -> Result<RepairOutcome, RepairError> {
    let before = discrepancy_rate(source, target, corpus, k)?;
    let after = discrepancy_rate(source, repaired, corpus, k)?;
    Ok(RepairOutcome {
        actions: actions.to_vec(),
        rate_before: before,
        rate_after: after,
        verdict: verdict(before, after),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairStep {
    pub action: RepairAction,
    pub rate_before: f64,
    pub rate_after: Option<f64>,
    pub verdict: Option<Verdict>,
    /// False when the action was rolled back (regression or invalid graph).
    pub kept: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepairSession {
    pub steps: Vec<RepairStep>,
    pub outcome: RepairOutcome,
    pub repaired: ModelGraph,
}

/// Applies the plan one action at a time in rank order, re-verifying after
/// each. Actions that raise the discrepancy rate or break validation are
/// rolled back; all others are kept, including after the rate reaches zero.
pub fn run_session(source: &ModelGraph, target: &ModelGraph, plan: &RepairPlan, corpus: &[CorpusInput], k: usize) -> Result<RepairSession, RepairError> {
    let initial = discrepancy_rate(source, target, corpus, k)?;
    let mut current = target.clone();
    let mut rate = initial;
    let mut steps = Vec::with_capacity(plan.actions.len());
    let mut kept = Vec::new();
    for action in &plan.actions {
        let candidate = match apply(&current, std::slice::from_ref(action)) {
            Ok(g) => g,
            Err(e) => {
                steps.push(RepairStep {
                    action: action.clone(),
                    rate_before: rate,
                    rate_after: None,
                    verdict: None,
                    kept: false,
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        let after = discrepancy_rate(source, &candidate, corpus, k)?;
        let v = verdict(rate, after);
        let keep = v != Verdict::Regressed;
        steps.push(RepairStep {
            action: action.clone(),
            rate_before: rate,
            rate_after: Some(after),
            verdict: Some(v),
            kept: keep,
            error: None,
        });
        if keep {
            current = candidate;
            rate = after;
            kept.push(action.clone());
        }
    }
    Ok(RepairSession {
        steps,
        outcome: RepairOutcome {
            actions: kept,
            rate_before: initial,
            rate_after: rate,
            verdict: verdict(initial, rate),
        },
        repaired: current,
    })
}

pub struct ChainRepair {
    pub report: LocalizationReport,
    pub plan: RepairPlan,
    pub session: RepairSession,
    /// Canonicalized Source, the verification reference.
    pub source: ModelGraph,
}

/// Localizes faults in `chain` and repairs its canonicalized Target with
/// values taken from the earlier stage of the implicated edge. Verification
/// compares against Source over the whole corpus.
pub fn repair_chain(chain: &ConversionChain, corpus: &[CorpusInput], config: &LocalizeConfig) -> Result<ChainRepair, RepairError> {
    let report = localize(chain, corpus, config).map_err(|e| match e {
        LocalizeError::Differential(d) => RepairError::Differential(d),
        LocalizeError::Nmif(n) => RepairError::Nmif(n),
        other => RepairError::UnrepairableSuspect(other.to_string()),
    })?;
    let canon = chain.canonicalized()?;
    let donor = &canon.stages()[report.compared_stages.0].model;
    let plan = plan_repairs(&report, donor, canon.target())?;
    let session = run_session(canon.source(), canon.target(), &plan, corpus, config.k)?;
    Ok(ChainRepair {
        source: canon.source().clone(),
        report,
        plan,
        session,
    })
}

/// `repair_log.json` body.
#[derive(Serialize)]
pub struct RepairLog<'a> {
    pub source_stage: &'a str,
    pub target_stage: &'a str,
    pub skipped: &'a [SkippedSuspect],
    pub steps: &'a [RepairStep],
    pub outcome: &'a RepairOutcome,
}

pub fn write_repair_log(log: &RepairLog<'_>, path: &Path) -> Result<(), NmifError> {
    let mut text = serde_json::to_string_pretty(log).expect("repair log serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| NmifError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{identity_model, inject, smallcnn, Fault, SmallCnnOptions};

    #[test]
    fn verdict_table() {
        assert_eq!(verdict(0.3, 0.0), Verdict::Resolved);
        assert_eq!(verdict(0.0, 0.0), Verdict::Resolved);
        assert_eq!(verdict(0.3, 0.1), Verdict::Improved);
        assert_eq!(verdict(0.3, 0.3), Verdict::NoEffect);
        assert_eq!(verdict(0.1, 0.3), Verdict::Regressed);
    }

    #[test]
    fn identical_param_replacement_is_noop() {
        let g = smallcnn(2, SmallCnnOptions::default());
        let w = g.initializers["conv1.weight"].clone();
        let action = RepairAction {
            kind: ActionKind::ReplaceParams {
                node: "conv1".into(),
                source_node: "conv1".into(),
                tensors: vec![ParamReplacement {
                    slot: 1,
                    role: TensorRole::Weight,
                    tensor: "conv1.weight".into(),
                    old: w.clone(),
                    new: w,
                }],
            },
            suspect_rank: None,
            description: "noop".into(),
        };
        assert!(apply(&g, &[action]).unwrap().structurally_eq(&g));
    }

    #[test]
    fn remove_and_reinsert_pad() {
        let g = smallcnn(2, SmallCnnOptions::default());
        let padded = inject(
            &g,
            &Fault::ExtraPad {
                site: "pad_extra".into(),
                before: "gap".into(),
                pads: vec![0, 0, 0, 0, 1, 1, 1, 1],
            },
        )
        .unwrap();
        let index = padded.node_index("pad_extra").unwrap();
        let action = RepairAction {
            kind: ActionKind::RemoveNode {
                node: "pad_extra".into(),
                removed: padded.nodes[index].clone(),
                index,
                rewired: vec![("gap".into(), 0)],
            },
            suspect_rank: None,
            description: "remove pad".into(),
        };
        let removed = apply(&padded, std::slice::from_ref(&action)).unwrap();
        assert!(removed.structurally_eq(&g));
        let back = apply(&removed, &invert(&[action])).unwrap();
        assert!(back.structurally_eq(&padded));
        assert!(validate_model(&padded).is_empty());
    }

    #[test]
    fn bad_rewire_rejected_without_partial_result() {
        let g = identity_model();
        let action = RepairAction {
            kind: ActionKind::RemoveNode {
                node: "reshape".into(),
                removed: g.nodes[0].clone(),
                index: 0,
                rewired: vec![],
            },
            suspect_rank: None,
            description: "drop the only node".into(),
        };
        assert!(matches!(apply(&g, &[action]), Err(RepairError::ValidationFailed { index: 0, .. })));
    }
}
