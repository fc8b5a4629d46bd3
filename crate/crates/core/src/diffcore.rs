//! Static comparison of two canonicalized models: layer alignment, parameter,
//! hyperparameter and structural diffs.
//!
//! Alignment is a longest common subsequence over node signatures
//! `(op class, output shape)` in a canonical topological order. `Flatten` and
//! a `Reshape` to `[batch, -1]` share the class `FlattenLike`. A second,
//! class-only LCS runs inside each unmatched gap so that a layer whose output
//! shape changed (a stride or padding fault) still pairs with its
//! counterpart.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::interpreter::{shape, OpKind};
use crate::nmif::{AttrValue, ModelGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAlignment {
    /// `(source_node_id, target_node_id)`, in topological order of both graphs.
    pub pairs: Vec<(String, String)>,
    pub source_only: Vec<String>,
    pub target_only: Vec<String>,
    /// Fraction of nodes of both graphs that are paired.
    pub score: f64,
    /// Every source node id -> number of pairs that precede it (its own pair
    /// included for paired nodes, which therefore sit at `index + 1`).
    #[serde(skip)]
    source_gap: HashMap<String, usize>,
    #[serde(skip)]
    target_gap: HashMap<String, usize>,
}

impl LayerAlignment {
    /// Index of the pair containing source node `id`.
    pub fn position_of_source(&self, id: &str) -> Option<usize> {
        self.pairs.iter().position(|(s, _)| s == id)
    }

    pub fn position_of_target(&self, id: &str) -> Option<usize> {
        self.pairs.iter().position(|(_, t)| t == id)
    }

    pub fn target_for(&self, source_id: &str) -> Option<&str> {
        self.pairs.iter().find(|(s, _)| s == source_id).map(|(_, t)| t.as_str())
    }

    pub fn source_for(&self, target_id: &str) -> Option<&str> {
        self.pairs.iter().find(|(_, t)| t == target_id).map(|(s, _)| s.as_str())
    }

    /// Position of an unmatched (or matched) node on the pair axis: the pair
    /// index for paired nodes, otherwise the number of pairs preceding it.
    pub fn source_position(&self, id: &str) -> Option<usize> {
        self.position_of_source(id).or_else(|| self.source_gap.get(id).copied())
    }

    pub fn target_position(&self, id: &str) -> Option<usize> {
        self.position_of_target(id).or_else(|| self.target_gap.get(id).copied())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum OpClass {
    Op(OpKind),
    FlattenLike,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Signature {
    class: OpClass,
    shape: Vec<usize>,
}

struct Sequence<'a> {
    ids: Vec<&'a str>,
    sigs: Vec<Signature>,
}

fn signatures(model: &ModelGraph) -> Sequence<'_> {
    let shapes = shape::infer_shapes(model).unwrap_or_default();
    let out_shape = |name: &str| shapes.get(name).map(|(_, s)| s.clone()).unwrap_or_default();
    let class_of = |i: usize| {
        let node = &model.nodes[i];
        match node.op_type {
            OpKind::Flatten => OpClass::FlattenLike,
            OpKind::Reshape => {
                let x = out_shape(&node.inputs[0]);
                let y = out_shape(node.output());
                if y.len() == 2 && !x.is_empty() && x[0] == y[0] {
                    OpClass::FlattenLike
                } else {
                    OpClass::Op(OpKind::Reshape)
                }
            }
            op => OpClass::Op(op),
        }
    };
    let order = canonical_order(model, &|i| (class_of(i), out_shape(model.nodes[i].output())));
    Sequence {
        ids: order.iter().map(|&i| model.nodes[i].id.as_str()).collect(),
        sigs: order
            .iter()
            .map(|&i| Signature {
                class: class_of(i),
                shape: out_shape(model.nodes[i].output()),
            })
            .collect(),
    }
}

/// Kahn's algorithm where ready nodes are ordered by the positions of their
/// producers, then by signature, then by list index. Independent of node ids
/// and, for graphs without symmetric branches, of the node list order.
fn canonical_order(model: &ModelGraph, sig: &dyn Fn(usize) -> (OpClass, Vec<usize>)) -> Vec<usize> {
    let producers = model.producers();
    let consumers = model.consumers();
    let n = model.nodes.len();
    let mut pending: Vec<usize> = model
        .nodes
        .iter()
        .map(|node| node.inputs.iter().filter(|x| producers.contains_key(x.as_str())).count())
        .collect();
    let mut position = vec![usize::MAX; n];
    type Key = (Vec<usize>, OpClass, Vec<usize>, usize);
    let key = |i: usize, position: &[usize]| -> Key {
        let from: Vec<usize> = model.nodes[i]
            .inputs
            .iter()
            .map(|x| producers.get(x.as_str()).map_or(0, |&p| position[p] + 1))
            .collect();
        let (class, shape) = sig(i);
        (from, class, shape, i)
    };
    let mut ready: BinaryHeap<Reverse<Key>> = (0..n).filter(|&i| pending[i] == 0).map(|i| Reverse(key(i, &position))).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((_, _, _, i))) = ready.pop() {
        position[i] = order.len();
        order.push(i);
        for out in &model.nodes[i].outputs {
            for &c in consumers.get(out.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
                pending[c] -= 1;
                if pending[c] == 0 {
                    ready.push(Reverse(key(c, &position)));
                }
            }
        }
    }
    order
}

/// LCS of `a` and `b` under `eq`, as index pairs. Among optimal solutions the
/// one matching earliest positions is chosen.
fn lcs<T>(a: &[T], b: &[T], eq: impl Fn(&T, &T) -> bool) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut table = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i][j] = if eq(&a[i], &b[j]) {
                table[i + 1][j + 1] + 1
            } else {
                table[i + 1][j].max(table[i][j + 1])
            };
        }
    }
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < n && j < m {
        if eq(&a[i], &b[j]) && table[i][j] == table[i + 1][j + 1] + 1 {
            out.push((i, j));
            i += 1;
            j += 1;
        } else if table[i + 1][j] >= table[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Order-preserving correspondence between the nodes of two canonicalized models.
pub fn align_layers(source: &ModelGraph, target: &ModelGraph) -> LayerAlignment {
    let a = signatures(source);
    let b = signatures(target);
    let exact = lcs(&a.sigs, &b.sigs, |x, y| x == y);

    // Refine each gap between consecutive exact matches by op class alone.
    let mut matched = Vec::with_capacity(exact.len());
    let mut bounds = exact.clone();
    bounds.push((a.sigs.len(), b.sigs.len()));
    let (mut i0, mut j0) = (0, 0);
    for &(i1, j1) in &bounds {
        let inner = lcs(&a.sigs[i0..i1], &b.sigs[j0..j1], |x, y| x.class == y.class);
        matched.extend(inner.into_iter().map(|(i, j)| (i + i0, j + j0)));
        if i1 < a.sigs.len() {
            matched.push((i1, j1));
        }
        (i0, j0) = (i1 + 1, j1 + 1);
    }

    let pairs: Vec<(String, String)> = matched.iter().map(|&(i, j)| (a.ids[i].to_string(), b.ids[j].to_string())).collect();
    let gaps = |ids: &[&str], side: &dyn Fn(&(usize, usize)) -> usize| {
        let mut gap = HashMap::new();
        let mut k = 0;
        let mut unmatched = Vec::new();
        for (idx, id) in ids.iter().enumerate() {
            if matched.get(k).map(side) == Some(idx) {
                k += 1;
            } else {
                unmatched.push(id.to_string());
            }
            gap.insert(id.to_string(), k);
        }
        (gap, unmatched)
    };
    let (source_gap, source_only) = gaps(&a.ids, &|p| p.0);
    let (target_gap, target_only) = gaps(&b.ids, &|p| p.1);
    let total = a.ids.len() + b.ids.len();
    LayerAlignment {
        score: if total == 0 { 1.0 } else { 2.0 * pairs.len() as f64 / total as f64 },
        pairs,
        source_only,
        target_only,
        source_gap,
        target_gap,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TensorRole {
    Weight,
    Bias,
    BatchNormParam,
}

impl fmt::Display for TensorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TensorRole::Weight => "Weight",
            TensorRole::Bias => "Bias",
            TensorRole::BatchNormParam => "BatchNormParam",
        })
    }
}

fn role_of(op: OpKind) -> TensorRole {
    match op {
        OpKind::BatchNorm => TensorRole::BatchNormParam,
        OpKind::BiasAdd | OpKind::Add => TensorRole::Bias,
        _ => TensorRole::Weight,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamDiffEntry {
    pub pair: (String, String),
    pub position: usize,
    pub tensor_role: TensorRole,
    /// Input slot of the parameter on its node.
    pub slot: usize,
    pub source_tensor: String,
    pub target_tensor: String,
    pub mean_abs_diff: f64,
    pub max_abs_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperDiffEntry {
    pub pair: (String, String),
    pub position: usize,
    pub attr_name: String,
    pub source_value: Option<AttrValue>,
    pub target_value: Option<AttrValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum StructKind {
    TypeSubstitution { source_op: OpKind, target_op: OpKind },
    ExtraTargetNode { op: OpKind },
    MissingTargetNode { op: OpKind },
    /// Aligned parameters whose shapes differ, so no numeric diff exists.
    ParamShapeMismatch {
        role: TensorRole,
        slot: usize,
        source_shape: Vec<usize>,
        target_shape: Vec<usize>,
    },
}

impl StructKind {
    pub fn label(&self) -> &'static str {
        match self {
            StructKind::TypeSubstitution { .. } => "TypeSubstitution",
            StructKind::ExtraTargetNode { .. } => "ExtraTargetNode",
            StructKind::MissingTargetNode { .. } => "MissingTargetNode",
            StructKind::ParamShapeMismatch { .. } => "ParamShapeMismatch",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructDiffEntry {
    #[serde(flatten)]
    pub kind: StructKind,
    /// Node ids involved: `[source, target]` for pair-level entries, the
    /// single unmatched id otherwise.
    pub location: Vec<String>,
    pub position: usize,
}

/// One entry per aligned pair per parameter slot with equal shapes.
pub fn diff_params(source: &ModelGraph, target: &ModelGraph, alignment: &LayerAlignment) -> Vec<ParamDiffEntry> {
    let mut out = Vec::new();
    for (position, (s, t)) in alignment.pairs.iter().enumerate() {
        let (Some(si), Some(ti)) = (source.node_index(s), target.node_index(t)) else {
            continue;
        };
        let role = role_of(source.nodes[si].op_type);
        let target_params: BTreeMap<usize, &str> = target.node_initializers(ti).into_iter().collect();
        for (slot, sname) in source.node_initializers(si) {
            let Some(&tname) = target_params.get(&slot) else {
                continue;
            };
            let (a, b) = (&source.initializers[sname], &target.initializers[tname]);
            if a.shape() != b.shape() || a.dtype() != b.dtype() {
                continue;
            }
            let (mean, max) = abs_diff_stats(a, b);
            out.push(ParamDiffEntry {
                pair: (s.clone(), t.clone()),
                position,
                tensor_role: role,
                slot,
                source_tensor: sname.to_string(),
                target_tensor: tname.to_string(),
                mean_abs_diff: mean,
                max_abs_diff: max,
            });
        }
    }
    out
}

/// Mean and max of `|a - b|`, accumulated in binary64.
pub fn abs_diff_stats(a: &crate::nmif::TensorData, b: &crate::nmif::TensorData) -> (f64, f64) {
    use crate::nmif::Values;
    let diffs: Vec<f64> = match (a.values(), b.values()) {
        (Values::F32(x), Values::F32(y)) => x.iter().zip(y).map(|(&p, &q)| (p as f64 - q as f64).abs()).collect(),
        (Values::I64(x), Values::I64(y)) => x.iter().zip(y).map(|(&p, &q)| (p as f64 - q as f64).abs()).collect(),
        _ => return (f64::INFINITY, f64::INFINITY),
    };
    if diffs.is_empty() {
        return (0.0, 0.0);
    }
    let sum: f64 = diffs.iter().sum();
    let max = diffs.iter().copied().fold(0.0, f64::max);
    (sum / diffs.len() as f64, max)
}

/// One entry per aligned pair of equal op type per differing attribute.
pub fn diff_hypers(source: &ModelGraph, target: &ModelGraph, alignment: &LayerAlignment) -> Vec<HyperDiffEntry> {
    let mut out = Vec::new();
    for (position, (s, t)) in alignment.pairs.iter().enumerate() {
        let (Some(a), Some(b)) = (source.node(s), target.node(t)) else {
            continue;
        };
        if a.op_type != b.op_type {
            continue;
        }
        let names: std::collections::BTreeSet<&String> = a.attrs.keys().chain(b.attrs.keys()).collect();
        for name in names {
            let (x, y) = (a.attrs.get(name), b.attrs.get(name));
            if x != y {
                out.push(HyperDiffEntry {
                    pair: (s.clone(), t.clone()),
                    position,
                    attr_name: name.clone(),
                    source_value: x.cloned(),
                    target_value: y.cloned(),
                });
            }
        }
    }
    out
}

/// Classifies op-type changes on aligned pairs, parameter shape mismatches
/// and every unmatched node.
pub fn diff_structure(source: &ModelGraph, target: &ModelGraph, alignment: &LayerAlignment) -> Vec<StructDiffEntry> {
    let mut out = Vec::new();
    for (position, (s, t)) in alignment.pairs.iter().enumerate() {
        let (Some(si), Some(ti)) = (source.node_index(s), target.node_index(t)) else {
            continue;
        };
        let (a, b) = (&source.nodes[si], &target.nodes[ti]);
        if a.op_type != b.op_type {
            out.push(StructDiffEntry {
                kind: StructKind::TypeSubstitution {
                    source_op: a.op_type,
                    target_op: b.op_type,
                },
                location: vec![s.clone(), t.clone()],
                position,
            });
            continue;
        }
        let target_params: BTreeMap<usize, &str> = target.node_initializers(ti).into_iter().collect();
        for (slot, sname) in source.node_initializers(si) {
            let Some(&tname) = target_params.get(&slot) else {
                continue;
            };
            let (x, y) = (source.initializers[sname].shape(), target.initializers[tname].shape());
            if x != y {
                out.push(StructDiffEntry {
                    kind: StructKind::ParamShapeMismatch {
                        role: role_of(a.op_type),
                        slot,
                        source_shape: x.to_vec(),
                        target_shape: y.to_vec(),
                    },
                    location: vec![s.clone(), t.clone()],
                    position,
                });
            }
        }
    }

    // Unmatched Flatten/Reshape on both sides of the same gap form a substitution.
    let flatten_like = |op: OpKind| matches!(op, OpKind::Flatten | OpKind::Reshape);
    let mut used_target = vec![false; alignment.target_only.len()];
    let mut leftover_source = Vec::new();
    for s in &alignment.source_only {
        let (Some(a), Some(gap)) = (source.node(s), alignment.source_position(s)) else {
            continue;
        };
        let partner = alignment.target_only.iter().enumerate().find(|(k, t)| {
            !used_target[*k]
                && alignment.target_position(t) == Some(gap)
                && target.node(t).is_some_and(|b| flatten_like(a.op_type) && flatten_like(b.op_type) && b.op_type != a.op_type)
        });
        match partner {
            Some((k, t)) => {
                used_target[k] = true;
                out.push(StructDiffEntry {
                    kind: StructKind::TypeSubstitution {
                        source_op: a.op_type,
                        target_op: target.node(t).unwrap().op_type,
                    },
                    location: vec![s.clone(), t.clone()],
                    position: gap,
                });
            }
            None => leftover_source.push((s, a.op_type, gap)),
        }
    }
    for (s, op, gap) in leftover_source {
        out.push(StructDiffEntry {
            kind: StructKind::MissingTargetNode { op },
            location: vec![s.clone()],
            position: gap,
        });
    }
    for (k, t) in alignment.target_only.iter().enumerate() {
        if used_target[k] {
            continue;
        }
        if let (Some(b), Some(gap)) = (target.node(t), alignment.target_position(t)) {
            out.push(StructDiffEntry {
                kind: StructKind::ExtraTargetNode { op: b.op_type },
                location: vec![t.clone()],
                position: gap,
            });
        }
    }
    out.sort_by(|x, y| x.position.cmp(&y.position).then_with(|| x.location.cmp(&y.location)));
    out
}

/// `diff.json` body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub alignment: LayerAlignment,
    pub params: Vec<ParamDiffEntry>,
    pub hypers: Vec<HyperDiffEntry>,
    pub structure: Vec<StructDiffEntry>,
}

impl DiffReport {
    pub fn compute(source: &ModelGraph, target: &ModelGraph) -> Self {
        let alignment = align_layers(source, target);
        Self {
            params: diff_params(source, target, &alignment),
            hypers: diff_hypers(source, target, &alignment),
            structure: diff_structure(source, target, &alignment),
            alignment,
        }
    }

    /// True when no parameter differs and there are no hyperparameter or
    /// structural entries.
    pub fn is_clean(&self) -> bool {
        self.params.iter().all(|p| p.max_abs_diff == 0.0) && self.hypers.is_empty() && self.structure.is_empty()
    }
}

/// Which sections go into `diff.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CsvSections {
    pub params: bool,
    pub hypers: bool,
    pub structure: bool,
}

impl CsvSections {
    pub const ALL: Self = Self {
        params: true,
        hypers: true,
        structure: true,
    };
}

/// Columns: `section, position, source_node, target_node, item, source_value,
/// target_value, mean_abs_diff, max_abs_diff`.
pub fn write_diff_csv(report: &DiffReport, sections: CsvSections, path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "section",
        "position",
        "source_node",
        "target_node",
        "item",
        "source_value",
        "target_value",
        "mean_abs_diff",
        "max_abs_diff",
    ])?;
    let show = |v: &Option<AttrValue>| v.as_ref().map(|x| x.to_string()).unwrap_or_default();
    if sections.params {
        for p in &report.params {
            w.write_record([
                "param".to_string(),
                p.position.to_string(),
                p.pair.0.clone(),
                p.pair.1.clone(),
                p.tensor_role.to_string(),
                p.source_tensor.clone(),
                p.target_tensor.clone(),
                format!("{:e}", p.mean_abs_diff),
                format!("{:e}", p.max_abs_diff),
            ])?;
        }
    }
    if sections.hypers {
        for h in &report.hypers {
            w.write_record([
                "hyper".to_string(),
                h.position.to_string(),
                h.pair.0.clone(),
                h.pair.1.clone(),
                h.attr_name.clone(),
                show(&h.source_value),
                show(&h.target_value),
                String::new(),
                String::new(),
            ])?;
        }
    }
    if sections.structure {
        for s in &report.structure {
            let (src, tgt) = match &s.kind {
                StructKind::ExtraTargetNode { .. } => (String::new(), s.location[0].clone()),
                StructKind::MissingTargetNode { .. } => (s.location[0].clone(), String::new()),
                _ => (s.location[0].clone(), s.location[1].clone()),
            };
            let (sv, tv) = match &s.kind {
                StructKind::TypeSubstitution { source_op, target_op } => (source_op.to_string(), target_op.to_string()),
                StructKind::ExtraTargetNode { op } => (String::new(), op.to_string()),
                StructKind::MissingTargetNode { op } => (op.to_string(), String::new()),
                StructKind::ParamShapeMismatch {
                    source_shape, target_shape, ..
                } => (format!("{source_shape:?}"), format!("{target_shape:?}")),
            };
            w.write_record([
                "structure".to_string(),
                s.position.to_string(),
                src,
                tgt,
                s.kind.label().to_string(),
                sv,
                tv,
                String::new(),
                String::new(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{inject, smallcnn, Fault, SmallCnnOptions};

    fn base() -> ModelGraph {
        smallcnn(11, SmallCnnOptions::default())
    }

    #[test]
    fn lcs_prefers_earliest() {
        assert_eq!(lcs(&[1, 2], &[1, 1, 2], |a, b| a == b), vec![(0, 0), (1, 2)]);
        assert_eq!(lcs(&[1], &[1, 1], |a, b| a == b), vec![(0, 0)]);
    }

    #[test]
    fn identical_graphs_fully_aligned() {
        let g = base();
        let al = align_layers(&g, &g);
        assert_eq!(al.score, 1.0);
        assert_eq!(al.pairs.len(), g.nodes.len());
        assert!(al.pairs.iter().all(|(a, b)| a == b));
        let d = DiffReport::compute(&g, &g);
        assert!(d.is_clean());
        assert!(d.params.iter().all(|p| p.mean_abs_diff == 0.0));
    }

    #[test]
    fn extra_pad_is_target_only() {
        let g = base();
        let fault = Fault::ExtraPad {
            site: "pad_extra".into(),
            before: "gap".into(),
            pads: vec![0, 0, 0, 0, 0, 0, 0, 0],
        };
        let t = inject(&g, &fault).unwrap();
        let al = align_layers(&g, &t);
        assert_eq!(al.target_only, vec!["pad_extra".to_string()]);
        assert!(al.source_only.is_empty());
        let s = diff_structure(&g, &t, &al);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].kind, StructKind::ExtraTargetNode { op: OpKind::Pad });
    }

    #[test]
    fn substitution_detected() {
        let g = base();
        let t = inject(&g, &Fault::FlattenToReshape { site: "flatten".into() }).unwrap();
        let s = diff_structure(&g, &t, &align_layers(&g, &t));
        assert_eq!(
            s[0].kind,
            StructKind::TypeSubstitution {
                source_op: OpKind::Flatten,
                target_op: OpKind::Reshape
            }
        );
    }

    #[test]
    fn stride_change_still_pairs() {
        let g = base();
        let fault = Fault::HyperChange {
            site: "conv2".into(),
            attr: "strides".into(),
            value: AttrValue::Ints(vec![2, 2]),
        };
        let t = inject(&g, &fault).unwrap();
        let al = align_layers(&g, &t);
        assert_eq!(al.pairs.len(), g.nodes.len());
        let h = diff_hypers(&g, &t, &al);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].attr_name, "strides");
        assert_eq!(h[0].source_value, Some(AttrValue::Ints(vec![1, 1])));
        assert_eq!(h[0].target_value, Some(AttrValue::Ints(vec![2, 2])));
    }

    #[test]
    fn constant_shift_measured() {
        let g = base();
        let t = inject(
            &g,
            &Fault::ParamShift {
                site: "conv2".into(),
                epsilon: 0.01,
            },
        )
        .unwrap();
        let p = diff_params(&g, &t, &align_layers(&g, &t));
        for e in &p {
            if e.pair.0 == "conv2" {
                assert!((e.mean_abs_diff - 0.01).abs() < 1e-9, "{}", e.mean_abs_diff);
                assert!((e.max_abs_diff - 0.01).abs() < 1e-7);
            } else {
                assert_eq!(e.max_abs_diff, 0.0, "{}", e.pair.0);
            }
        }
    }
}
