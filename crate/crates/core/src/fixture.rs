//! Seeded synthetic models, conversion chains with injected faults, and input
//! corpora. The generator records what it injected in [`GroundTruth`], which
//! the test suites use as their oracle.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::differential::{save_corpus, CorpusInput};
use crate::interpreter::{execute, shape, OpKind};
use crate::nmif::{
    save_chain, save_model, AttrValue, ConversionChain, DType, Layout, ModelGraph, NmifError, NodeSpec, Stage,
    TensorData, ValueInfo,
};

pub const CORPUS_SIZE: usize = 100;
pub const SMALLCNN_INPUT: [usize; 4] = [1, 3, 8, 8];
pub const SMALLCNN_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixtureKind {
    #[serde(rename = "smallcnn")]
    SmallCnn,
    #[serde(rename = "chain-param-fault")]
    ChainParamFault,
    #[serde(rename = "chain-hyper-fault")]
    ChainHyperFault,
    #[serde(rename = "chain-substitution")]
    ChainSubstitution,
    #[serde(rename = "chain-extranode")]
    ChainExtraNode,
    #[serde(rename = "clean-chain")]
    CleanChain,
}

impl FixtureKind {
    pub const ALL: [FixtureKind; 6] = [
        FixtureKind::SmallCnn,
        FixtureKind::ChainParamFault,
        FixtureKind::ChainHyperFault,
        FixtureKind::ChainSubstitution,
        FixtureKind::ChainExtraNode,
        FixtureKind::CleanChain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FixtureKind::SmallCnn => "smallcnn",
            FixtureKind::ChainParamFault => "chain-param-fault",
            FixtureKind::ChainHyperFault => "chain-hyper-fault",
            FixtureKind::ChainSubstitution => "chain-substitution",
            FixtureKind::ChainExtraNode => "chain-extranode",
            FixtureKind::CleanChain => "clean-chain",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// A fault applied to the NCHW base model, addressed by original node ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fault", rename_all = "snake_case")]
pub enum Fault {
    /// Adds `epsilon` to every weight of `site`.
    ParamShift { site: String, epsilon: f32 },
    /// Overwrites one attribute of `site`.
    HyperChange { site: String, attr: String, value: AttrValue },
    /// Replaces the Flatten node `site` by `Reshape [batch, -1]`.
    FlattenToReshape { site: String },
    /// Inserts a Pad node `site` in front of node `before`.
    ExtraPad { site: String, before: String, pads: Vec<i64> },
}

impl Fault {
    pub fn site(&self) -> &str {
        match self {
            Fault::ParamShift { site, .. }
            | Fault::HyperChange { site, .. }
            | Fault::FlattenToReshape { site }
            | Fault::ExtraPad { site, .. } => site,
        }
    }
}

fn missing(id: &str) -> NmifError {
    NmifError::SchemaViolation {
        node_id: Some(id.to_string()),
        reason: "fault site not found".into(),
    }
}

/// Returns a copy of `model` with `fault` applied.
pub fn inject(model: &ModelGraph, fault: &Fault) -> Result<ModelGraph, NmifError> {
    let mut g = model.clone();
    match fault {
        Fault::ParamShift { site, epsilon } => {
            let node = g.node(site).ok_or_else(|| missing(site))?;
            let weight = node.inputs.get(1).cloned().ok_or_else(|| missing(site))?;
            let tensor = g.initializers.get_mut(&weight).ok_or_else(|| missing(&weight))?;
            for v in tensor.as_f32_mut().ok_or_else(|| missing(&weight))? {
                *v += epsilon;
            }
        }
        Fault::HyperChange { site, attr, value } => {
            let i = g.node_index(site).ok_or_else(|| missing(site))?;
            g.nodes[i].attrs.insert(attr.clone(), value.clone());
        }
        Fault::FlattenToReshape { site } => {
            let i = g.node_index(site).ok_or_else(|| missing(site))?;
            let node = &mut g.nodes[i];
            node.op_type = OpKind::Reshape;
            node.attrs.clear();
            node.attrs.insert("shape".into(), AttrValue::Ints(vec![1, -1]));
        }
        Fault::ExtraPad { site, before, pads } => {
            let i = g.node_index(before).ok_or_else(|| missing(before))?;
            let upstream = g.nodes[i].inputs[0].clone();
            let out = format!("{site}_out");
            g.nodes[i].inputs[0] = out.clone();
            let pad = NodeSpec::new(site.as_str(), OpKind::Pad)
                .with_attr("pads", AttrValue::Ints(pads.clone()))
                .with_inputs([upstream])
                .with_output(out);
            g.nodes.insert(i, pad);
        }
    }
    Ok(g)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..=hi)).collect()
}

fn tensor(shape: Vec<usize>, values: Vec<f32>) -> TensorData {
    TensorData::from_f32(shape, values).expect("generator shapes are consistent")
}

fn he_uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> TensorData {
    let a = (6.0 / fan_in as f32).sqrt();
    let n = shape.iter().product();
    tensor(shape, uniform(rng, n, -a, a))
}

fn ints(v: &[i64]) -> AttrValue {
    AttrValue::Ints(v.to_vec())
}

fn conv(id: &str, input: &str, pads: [i64; 4], strides: [i64; 2], dilations: [i64; 2], groups: i64) -> NodeSpec {
    NodeSpec::new(id, OpKind::Conv2D)
        .with_attr("dilations", ints(&dilations))
        .with_attr("groups", AttrValue::Int(groups))
        .with_attr("pads", ints(&pads))
        .with_attr("strides", ints(&strides))
        .with_inputs([input.to_string(), format!("{id}.weight")])
        .with_output(format!("{id}_out"))
}

fn unary(id: &str, op: OpKind, input: &str) -> NodeSpec {
    NodeSpec::new(id, op).with_inputs([input]).with_output(format!("{id}_out"))
}

fn with_param(id: &str, op: OpKind, input: &str, param: &str) -> NodeSpec {
    NodeSpec::new(id, op)
        .with_inputs([input.to_string(), param.to_string()])
        .with_output(format!("{id}_out"))
}

fn batch_norm(id: &str, input: &str) -> NodeSpec {
    NodeSpec::new(id, OpKind::BatchNorm)
        .with_attr("epsilon", AttrValue::Float(1e-3))
        .with_inputs([input.to_string()].into_iter().chain(["scale", "bias", "mean", "var"].map(|p| format!("{id}.{p}"))))
        .with_output(format!("{id}_out"))
}

fn add_batch_norm_params(g: &mut ModelGraph, rng: &mut ChaCha8Rng, id: &str, c: usize, zero_biases: bool) {
    let scale = uniform(rng, c, 0.8, 1.2);
    let mut bias = uniform(rng, c, -0.1, 0.1);
    let mut mean = uniform(rng, c, -0.1, 0.1);
    let var = uniform(rng, c, 0.5, 1.5);
    if zero_biases {
        bias.fill(0.0);
        mean.fill(0.0);
    }
    for (p, v) in [("scale", scale), ("bias", bias), ("mean", mean), ("var", var)] {
        g.initializers.insert(format!("{id}.{p}"), tensor(vec![c], v));
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SmallCnnOptions {
    /// Zero every bias, batch-norm shift and running mean, so an all-zero
    /// input maps to all-zero logits.
    pub zero_biases: bool,
}

/// Three convolutions and a dense classifier on `[1, 3, 8, 8]` inputs:
///
/// ```text
/// conv1 -> conv1_bias -> relu1 -> conv2 -> conv2_bias -> relu2 -> pool
///   -> conv3 -> bn3 -> relu3 -> gap -> flatten -> dense -> dense_bias
/// ```
pub fn smallcnn(seed: u64, options: SmallCnnOptions) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = ModelGraph::new("smallcnn", Layout::Nchw);
    g.inputs.push(ValueInfo::new("input", DType::F32, SMALLCNN_INPUT.to_vec()));
    let same = [1, 1, 1, 1];
    let bias = |rng: &mut ChaCha8Rng, n: usize, a: f32| {
        if options.zero_biases {
            vec![0.0; n]
        } else {
            uniform(rng, n, -a, a)
        }
    };

    g.nodes.push(conv("conv1", "input", same, [1, 1], [1, 1], 1));
    g.initializers.insert("conv1.weight".into(), he_uniform(&mut rng, vec![8, 3, 3, 3], 27));
    g.nodes.push(with_param("conv1_bias", OpKind::BiasAdd, "conv1_out", "conv1.bias"));
    g.initializers.insert("conv1.bias".into(), tensor(vec![8], bias(&mut rng, 8, 0.1)));
    g.nodes.push(unary("relu1", OpKind::ReLU, "conv1_bias_out"));

    g.nodes.push(conv("conv2", "relu1_out", same, [1, 1], [1, 1], 1));
    g.initializers.insert("conv2.weight".into(), he_uniform(&mut rng, vec![8, 8, 3, 3], 72));
    g.nodes.push(with_param("conv2_bias", OpKind::BiasAdd, "conv2_out", "conv2.bias"));
    g.initializers.insert("conv2.bias".into(), tensor(vec![8], bias(&mut rng, 8, 0.1)));
    g.nodes.push(unary("relu2", OpKind::ReLU, "conv2_bias_out"));

    g.nodes.push(
        NodeSpec::new("pool", OpKind::MaxPool2D)
            .with_attr("kernel_shape", ints(&[2, 2]))
            .with_attr("pads", ints(&[0, 0, 0, 0]))
            .with_attr("strides", ints(&[2, 2]))
            .with_inputs(["relu2_out"])
            .with_output("pool_out"),
    );

    g.nodes.push(conv("conv3", "pool_out", same, [1, 1], [1, 1], 1));
    g.initializers.insert("conv3.weight".into(), he_uniform(&mut rng, vec![16, 8, 3, 3], 72));
    g.nodes.push(batch_norm("bn3", "conv3_out"));
    add_batch_norm_params(&mut g, &mut rng, "bn3", 16, options.zero_biases);
    g.nodes.push(unary("relu3", OpKind::ReLU6, "bn3_out"));

    g.nodes.push(unary("gap", OpKind::GlobalAvgPool2D, "relu3_out"));
    g.nodes.push(unary("flatten", OpKind::Flatten, "gap_out"));
    g.nodes.push(with_param("dense", OpKind::Dense, "flatten_out", "dense.weight"));
    g.initializers.insert(
        "dense.weight".into(),
        he_uniform(&mut rng, vec![SMALLCNN_CLASSES, 16], 16),
    );
    g.nodes.push(
        NodeSpec::new("dense_bias", OpKind::BiasAdd)
            .with_inputs(["dense_out", "dense.bias"])
            .with_output("logits"),
    );
    g.initializers.insert(
        "dense.bias".into(),
        tensor(vec![SMALLCNN_CLASSES], bias(&mut rng, SMALLCNN_CLASSES, 0.5)),
    );
    g.outputs.push(ValueInfo::new("logits", DType::F32, vec![1, SMALLCNN_CLASSES]));
    if !options.zero_biases {
        center_logits(&mut g, seed);
    }
    g
}

/// Sets the dense bias to `-W mu`, where `mu` is the mean pooled feature over
/// a calibration batch. Without this the shared positive feature mean picks
/// the same class for nearly every input.
fn center_logits(g: &mut ModelGraph, seed: u64) {
    let calibration = random_corpus(seed ^ 0xca11_b8a7, &SMALLCNN_INPUT, 64);
    let mut mu = vec![0f64; 16];
    for input in &calibration {
        let trace = execute(g, &input.id, &input.tensor, true, 1).expect("smallcnn executes");
        let features = trace.entry("flatten").expect("flatten captured").tensor.as_f32().unwrap();
        for (m, &f) in mu.iter_mut().zip(features) {
            *m += f as f64 / calibration.len() as f64;
        }
    }
    let w = g.initializers["dense.weight"].as_f32().unwrap().to_vec();
    let bias = w
        .chunks(16)
        .map(|row| -row.iter().zip(&mu).map(|(&a, &m)| a as f64 * m).sum::<f64>() as f32)
        .collect();
    g.initializers.insert("dense.bias".into(), tensor(vec![SMALLCNN_CLASSES], bias));
}

/// A single `Reshape [1, 4] -> [1, 4]` node and no initializers.
pub fn identity_model() -> ModelGraph {
    let mut g = ModelGraph::new("identity", Layout::Nchw);
    g.inputs.push(ValueInfo::new("x", DType::F32, vec![1, 4]));
    g.nodes.push(
        NodeSpec::new("reshape", OpKind::Reshape)
            .with_attr("shape", ints(&[1, 4]))
            .with_inputs(["x"])
            .with_output("y"),
    );
    g.outputs.push(ValueInfo::new("y", DType::F32, vec![1, 4]));
    g
}

fn window_out(input: usize, lo: usize, hi: usize, kernel: usize, stride: usize, dilation: usize) -> Option<usize> {
    let eff = (kernel - 1) * dilation + 1;
    (input + lo + hi >= eff).then(|| (input + lo + hi - eff) / stride + 1)
}

/// A random but valid NCHW CNN over the whole op set, for property tests.
pub fn random_cnn(seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = rng.random_range(1..=4usize);
    let mut h = rng.random_range(4..=9usize);
    let mut w = rng.random_range(4..=9usize);
    let mut g = ModelGraph::new(format!("random{seed}"), Layout::Nchw);
    g.inputs.push(ValueInfo::new("input", DType::F32, vec![1, c, h, w]));
    let mut cur = "input".to_string();

    let blocks = rng.random_range(3..=7);
    for b in 0..blocks {
        let id = format!("b{b}");
        let choice = rng.random_range(0..10);
        let node = match choice {
            0 | 1 => {
                let (kh, kw) = (rng.random_range(1..=3usize), rng.random_range(1..=3usize));
                let s = [rng.random_range(1..=2usize), rng.random_range(1..=2usize)];
                let d = [rng.random_range(1..=2usize), rng.random_range(1..=2usize)];
                let p: Vec<usize> = (0..4).map(|_| rng.random_range(0..=1)).collect();
                let (Some(oh), Some(ow)) = (
                    window_out(h, p[0], p[2], kh, s[0], d[0]),
                    window_out(w, p[1], p[3], kw, s[1], d[1]),
                ) else {
                    continue;
                };
                let pads = [p[0], p[1], p[2], p[3]].map(|x| x as i64);
                let strides = s.map(|x| x as i64);
                let dil = d.map(|x| x as i64);
                if choice == 0 {
                    let groups = if c % 2 == 0 && rng.random_bool(0.3) { 2 } else { 1 };
                    let oc = groups * rng.random_range(1..=3usize);
                    let fan_in = c / groups * kh * kw;
                    g.initializers.insert(format!("{id}.weight"), he_uniform(&mut rng, vec![oc, c / groups, kh, kw], fan_in));
                    (c, h, w) = (oc, oh, ow);
                    conv(&id, &cur, pads, strides, dil, groups as i64)
                } else {
                    let m = rng.random_range(1..=2usize);
                    g.initializers.insert(format!("{id}.weight"), he_uniform(&mut rng, vec![c * m, 1, kh, kw], kh * kw));
                    (c, h, w) = (c * m, oh, ow);
                    NodeSpec::new(id.as_str(), OpKind::DepthwiseConv2D)
                        .with_attr("dilations", ints(&dil))
                        .with_attr("pads", ints(&pads))
                        .with_attr("strides", ints(&strides))
                        .with_inputs([cur.clone(), format!("{id}.weight")])
                        .with_output(format!("{id}_out"))
                }
            }
            2 => {
                g.initializers.insert(format!("{id}.bias"), tensor(vec![c], uniform(&mut rng, c, -0.5, 0.5)));
                with_param(&id, OpKind::BiasAdd, &cur, &format!("{id}.bias"))
            }
            3 => unary(&id, if rng.random_bool(0.5) { OpKind::ReLU } else { OpKind::ReLU6 }, &cur),
            4 => {
                let k = [rng.random_range(1..=2usize), rng.random_range(1..=2usize)];
                let s = [rng.random_range(1..=2usize), rng.random_range(1..=2usize)];
                let p: Vec<usize> = (0..4).map(|i| rng.random_range(0..k[i % 2])).collect();
                let (Some(oh), Some(ow)) = (window_out(h, p[0], p[2], k[0], s[0], 1), window_out(w, p[1], p[3], k[1], s[1], 1))
                else {
                    continue;
                };
                (h, w) = (oh, ow);
                let op = if rng.random_bool(0.5) { OpKind::MaxPool2D } else { OpKind::AvgPool2D };
                NodeSpec::new(id.as_str(), op)
                    .with_attr("kernel_shape", ints(&k.map(|x| x as i64)))
                    .with_attr("pads", ints(&[p[0], p[1], p[2], p[3]].map(|x| x as i64)))
                    .with_attr("strides", ints(&s.map(|x| x as i64)))
                    .with_inputs([cur.clone()])
                    .with_output(format!("{id}_out"))
            }
            5 => {
                add_batch_norm_params(&mut g, &mut rng, &id, c, false);
                batch_norm(&id, &cur)
            }
            6 => {
                let p: Vec<i64> = (0..4).map(|_| rng.random_range(0..=1)).collect();
                (h, w) = (h + (p[0] + p[2]) as usize, w + (p[1] + p[3]) as usize);
                NodeSpec::new(id.as_str(), OpKind::Pad)
                    .with_attr("pads", ints(&[0, 0, 0, 0, p[0], p[2], p[1], p[3]]))
                    .with_inputs([cur.clone()])
                    .with_output(format!("{id}_out"))
            }
            7 => {
                let branch = format!("{id}_branch");
                g.nodes.push(unary(&branch, OpKind::ReLU, &cur));
                NodeSpec::new(id.as_str(), OpKind::Add)
                    .with_inputs([cur.clone(), format!("{branch}_out")])
                    .with_output(format!("{id}_out"))
            }
            8 if c <= 8 => {
                let branch = format!("{id}_branch");
                g.nodes.push(unary(&branch, OpKind::ReLU6, &cur));
                c *= 2;
                NodeSpec::new(id.as_str(), OpKind::Concat)
                    .with_attr("axis", AttrValue::Int(1))
                    .with_inputs([cur.clone(), format!("{branch}_out")])
                    .with_output(format!("{id}_out"))
            }
            _ => NodeSpec::new(id.as_str(), OpKind::Reshape)
                .with_attr("shape", ints(&[1, c as i64, h as i64, -1]))
                .with_inputs([cur.clone()])
                .with_output(format!("{id}_out")),
        };
        cur = node.output().to_string();
        g.nodes.push(node);
    }

    let classes = rng.random_range(2..=6usize);
    g.nodes.push(unary("gap", OpKind::GlobalAvgPool2D, &cur));
    g.nodes.push(unary("flatten", OpKind::Flatten, "gap_out"));
    g.nodes.push(with_param("dense", OpKind::Dense, "flatten_out", "dense.weight"));
    g.initializers.insert("dense.weight".into(), he_uniform(&mut rng, vec![classes, c], c));
    g.nodes.push(with_param("dense_bias", OpKind::BiasAdd, "dense_out", "dense.bias"));
    g.initializers.insert("dense.bias".into(), tensor(vec![classes], uniform(&mut rng, classes, -0.5, 0.5)));
    let mut last = "dense_bias_out".to_string();
    if rng.random_bool(0.5) {
        g.nodes.push(unary("softmax", OpKind::Softmax, &last));
        last = "softmax_out".into();
    }
    g.outputs.push(ValueInfo::new(last, DType::F32, vec![1, classes]));
    g
}

/// Uniform inputs in `[-1, 1]` named `input_000`, `input_001`, ...
pub fn random_corpus(seed: u64, shape: &[usize], n: usize) -> Vec<CorpusInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    (0..n)
        .map(|i| CorpusInput {
            id: format!("input_{i:03}"),
            tensor: tensor(shape.to_vec(), uniform(&mut rng, len, -1.0, 1.0)),
        })
        .collect()
}

/// NCHW position of each axis -> NHWC position.
const NHWC_AXIS: [usize; 4] = [0, 3, 1, 2];
const NHWC_FROM_NCHW: [usize; 4] = [0, 2, 3, 1];

fn to_nhwc_shape(s: &[usize]) -> Vec<usize> {
    NHWC_FROM_NCHW.iter().map(|&a| s[a]).collect()
}

/// Rewrites an NCHW model as the equivalent NHWC model, the way a
/// channels-last converter would: HWIO convolution weights, `[kh, kw, C, M]`
/// depthwise weights, permuted pad pairs and concat axes.
pub fn to_nhwc(model: &ModelGraph) -> Result<ModelGraph, NmifError> {
    if model.layout == Layout::Nhwc {
        return Ok(model.clone());
    }
    let shapes = shape::infer_shapes(model).map_err(|e| NmifError::SchemaViolation {
        node_id: Some(e.node_id),
        reason: e.reason,
    })?;
    let value_shape = |name: &str| shapes.get(name).map(|(_, s)| s.clone()).unwrap_or_default();
    let mut out = model.clone();
    out.layout = Layout::Nhwc;
    for v in out.inputs.iter_mut().chain(out.outputs.iter_mut()) {
        if v.shape.len() == 4 {
            v.shape = to_nhwc_shape(&v.shape);
        }
    }
    for node in &mut out.nodes {
        let x = value_shape(&node.inputs[0]);
        let y = value_shape(node.output());
        match node.op_type {
            OpKind::Conv2D => {
                let w = &model.initializers[&node.inputs[1]];
                out.initializers.insert(node.inputs[1].clone(), w.permuted(&[2, 3, 1, 0]));
            }
            OpKind::DepthwiseConv2D => {
                let w = &model.initializers[&node.inputs[1]];
                let [cm, _, kh, kw] = <[usize; 4]>::try_from(w.shape()).expect("rank-4 weight");
                let c = x[1];
                let hwcm = w.reshaped(vec![c, cm / c, kh, kw])?.permuted(&[2, 3, 0, 1]);
                out.initializers.insert(node.inputs[1].clone(), hwcm);
            }
            OpKind::Pad if x.len() == 4 => {
                let pads = node.attr("pads").and_then(AttrValue::as_ints).unwrap_or(&[]).to_vec();
                let pairs: Vec<&[i64]> = pads.chunks(2).collect();
                let permuted = NHWC_FROM_NCHW.iter().flat_map(|&a| pairs[a].iter().copied()).collect();
                node.attrs.insert("pads".into(), AttrValue::Ints(permuted));
            }
            OpKind::Concat if x.len() == 4 => {
                let axis = node.attr("axis").and_then(AttrValue::as_int).unwrap_or(0) as usize;
                node.attrs.insert("axis".into(), AttrValue::Int(NHWC_AXIS[axis] as i64));
            }
            OpKind::Reshape if y.len() == 4 => {
                if x.len() == 4 && x[1] > 1 && x[2] * x[3] > 1 && x != y {
                    return Err(NmifError::UnsupportedRank(node.inputs[0].clone()));
                }
                let dims = node.attr("shape").and_then(AttrValue::as_ints).unwrap_or(&[]);
                let dims = NHWC_FROM_NCHW.iter().map(|&a| dims[a]).collect();
                node.attrs.insert("shape".into(), AttrValue::Ints(dims));
            }
            OpKind::Flatten | OpKind::Reshape if x.len() == 4 && x[1] > 1 && x[2] * x[3] > 1 => {
                return Err(NmifError::UnsupportedRank(node.inputs[0].clone()));
            }
            OpKind::Softmax if x.len() == 4 => return Err(NmifError::UnsupportedRank(node.inputs[0].clone())),
            _ => {}
        }
    }
    Ok(out)
}

/// Gives every node, intermediate value and initializer a fresh random name.
/// Returns the renamed model and the map from old to new node ids.
pub fn rename_nodes(model: &ModelGraph, rng: &mut ChaCha8Rng, prefix: &str) -> (ModelGraph, BTreeMap<String, String>) {
    let mut taken = std::collections::BTreeSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng| loop {
        let name = format!("{prefix}{:06x}", rng.random::<u32>() & 0xff_ffff);
        if taken.insert(name.clone()) {
            return name;
        }
    };
    let mut ids = BTreeMap::new();
    let mut values: BTreeMap<String, String> = BTreeMap::new();
    for node in &model.nodes {
        let id = fresh(rng);
        for out in &node.outputs {
            values.insert(out.clone(), format!("{id}:0"));
        }
        ids.insert(node.id.clone(), id);
    }
    for name in model.initializers.keys() {
        values.insert(name.clone(), format!("{}/const", fresh(rng)));
    }
    let rename = |n: &String| values.get(n).cloned().unwrap_or_else(|| n.clone());
    let mut g = model.clone();
    for node in &mut g.nodes {
        node.id = ids[&node.id].clone();
        node.inputs = node.inputs.iter().map(rename).collect();
        node.outputs = node.outputs.iter().map(rename).collect();
    }
    for v in &mut g.outputs {
        v.name = rename(&v.name);
    }
    g.initializers = model.initializers.iter().map(|(k, t)| (rename(k), t.clone())).collect();
    (g, ids)
}

/// What the generator injected, written as `ground_truth.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub kind: FixtureKind,
    pub seed: u64,
    pub stage_labels: Vec<String>,
    pub faults: Vec<Fault>,
    /// Chain edge `e` joins stage `e` and stage `e + 1`; the fault is present
    /// in every stage after `e`.
    pub edge: Option<usize>,
    /// Original id of the faulty node.
    pub site: Option<String>,
    /// Per stage: original node id -> id in that stage.
    pub renames: Vec<BTreeMap<String, String>>,
    pub corpus_size: usize,
}

impl GroundTruth {
    /// Id of the fault site as it appears in `stage`.
    pub fn site_in_stage(&self, stage: usize) -> Option<&str> {
        let site = self.site.as_deref()?;
        self.renames.get(stage)?.get(site).map(String::as_str)
    }
}

#[derive(Clone, Debug)]
pub struct FixtureParams {
    pub epsilon: f32,
    pub site: Option<String>,
    pub edge: usize,
    /// Attribute flipped by `chain-hyper-fault`: `pads`, `strides` or `dilations`.
    pub attr: String,
    pub stages: usize,
    pub corpus_size: usize,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            site: None,
            edge: 1,
            attr: "pads".into(),
            stages: 3,
            corpus_size: CORPUS_SIZE,
        }
    }
}

/// The fault preset of a fixture kind.
pub fn preset_faults(kind: FixtureKind, params: &FixtureParams) -> Result<Vec<Fault>, NmifError> {
    let site = |default: &str| params.site.clone().unwrap_or_else(|| default.to_string());
    Ok(match kind {
        FixtureKind::SmallCnn | FixtureKind::CleanChain => vec![],
        FixtureKind::ChainParamFault => vec![Fault::ParamShift {
            site: site("conv2"),
            epsilon: params.epsilon,
        }],
        FixtureKind::ChainHyperFault => {
            let value = match params.attr.as_str() {
                "pads" => ints(&[0, 0, 2, 2]),
                "strides" | "dilations" => ints(&[2, 2]),
                other => {
                    return Err(NmifError::SchemaViolation {
                        node_id: None,
                        reason: format!("hyperparameter fault on unsupported attribute {other}"),
                    })
                }
            };
            vec![Fault::HyperChange {
                site: site("conv2"),
                attr: params.attr.clone(),
                value,
            }]
        }
        FixtureKind::ChainSubstitution => vec![Fault::FlattenToReshape { site: site("flatten") }],
        FixtureKind::ChainExtraNode => vec![Fault::ExtraPad {
            site: site("pad_extra"),
            before: "gap".into(),
            pads: vec![0, 0, 0, 0, 1, 1, 1, 1],
        }],
    })
}

pub fn stage_labels(n: usize) -> Vec<String> {
    match n {
        2 => vec!["source".into(), "target".into()],
        3 => vec!["source".into(), "onnx".into(), "target".into()],
        _ => (0..n)
            .map(|i| match i {
                0 => "source".to_string(),
                i if i + 1 == n => "target".to_string(),
                i => format!("intermediate{i}"),
            })
            .collect(),
    }
}

pub struct BuiltChain {
    pub chain: ConversionChain,
    pub ground_truth: GroundTruth,
    /// Fault-free NCHW model with original ids.
    pub base: ModelGraph,
}

/// Builds a chain of renamed smallcnn stages; the last stage is NHWC. Faults
/// are applied to every stage after `edge`.
pub fn build_chain(kind: FixtureKind, seed: u64, faults: &[Fault], params: &FixtureParams) -> Result<BuiltChain, NmifError> {
    let n = params.stages.max(2);
    if !faults.is_empty() && params.edge + 1 >= n {
        return Err(NmifError::InvalidChain(format!("edge {} outside a {n}-stage chain", params.edge)));
    }
    let base = smallcnn(seed, SmallCnnOptions::default());
    let mut faulty = base.clone();
    for f in faults {
        faulty = inject(&faulty, f)?;
    }
    let labels = stage_labels(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
    let mut stages = Vec::with_capacity(n);
    let mut renames = Vec::with_capacity(n);
    for (i, label) in labels.iter().enumerate() {
        let model = if !faults.is_empty() && i > params.edge { &faulty } else { &base };
        let (mut model, ids) = if i == 0 {
            (model.clone(), model.nodes.iter().map(|nd| (nd.id.clone(), nd.id.clone())).collect())
        } else {
            rename_nodes(model, &mut rng, if i + 1 == n { "tfl_" } else { "onnx_" })
        };
        if i + 1 == n {
            model = to_nhwc(&model)?;
        }
        model.name = format!("smallcnn-{label}");
        stages.push(Stage {
            label: label.clone(),
            model,
        });
        renames.push(ids);
    }
    let ground_truth = GroundTruth {
        kind,
        seed,
        stage_labels: labels,
        faults: faults.to_vec(),
        edge: (!faults.is_empty()).then_some(params.edge),
        site: faults.first().map(|f| f.site().to_string()),
        renames,
        corpus_size: params.corpus_size,
    };
    Ok(BuiltChain {
        chain: ConversionChain::new(stages)?,
        ground_truth,
        base,
    })
}

pub fn corpus_for(seed: u64, n: usize) -> Vec<CorpusInput> {
    random_corpus(seed.wrapping_add(0x5851_f42d), &SMALLCNN_INPUT, n)
}

/// Writes a fixture directory: the model (`smallcnn.nmif`) or chain
/// (`chain.json` plus one container per stage), `corpus/` and
/// `ground_truth.json`.
pub fn gen_fixture(kind: FixtureKind, seed: u64, params: &FixtureParams, out: &Path) -> Result<GroundTruth, NmifError> {
    fs::create_dir_all(out).map_err(|e| NmifError::io(out, e))?;
    let faults = preset_faults(kind, params)?;
    let truth = if kind == FixtureKind::SmallCnn {
        save_model(&smallcnn(seed, SmallCnnOptions::default()), &out.join("smallcnn.nmif"))?;
        GroundTruth {
            kind,
            seed,
            stage_labels: vec![],
            faults: vec![],
            edge: None,
            site: None,
            renames: vec![],
            corpus_size: params.corpus_size,
        }
    } else {
        let built = build_chain(kind, seed, &faults, params)?;
        save_chain(&built.chain, out)?;
        built.ground_truth
    };
    save_corpus(&corpus_for(seed, params.corpus_size), &out.join("corpus"))?;
    let path = out.join("ground_truth.json");
    let mut text = serde_json::to_string_pretty(&truth).expect("ground truth serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| NmifError::io(&path, e))?;
    Ok(truth)
}

/// A chain of constant classifiers on `[1, 4]` inputs: stage `i` always
/// predicts `labels[i]`.
pub fn label_chain(labels: &[usize], classes: usize) -> Result<ConversionChain, NmifError> {
    let names = stage_labels(labels.len());
    let stages = labels
        .iter()
        .zip(names)
        .map(|(&label, name)| {
            let mut g = ModelGraph::new(format!("constant-{name}"), Layout::Nchw);
            g.inputs.push(ValueInfo::new("x", DType::F32, vec![1, 4]));
            g.nodes.push(with_param("dense", OpKind::Dense, "x", "dense.weight"));
            g.initializers.insert("dense.weight".into(), TensorData::zeros(DType::F32, vec![classes, 4]));
            g.nodes.push(with_param("dense_bias", OpKind::BiasAdd, "dense_out", "dense.bias"));
            let mut bias = vec![0.0; classes];
            bias[label] = 1.0;
            g.initializers.insert("dense.bias".into(), tensor(vec![classes], bias));
            g.outputs.push(ValueInfo::new("dense_bias_out", DType::F32, vec![1, classes]));
            Stage { label: name, model: g }
        })
        .collect();
    ConversionChain::new(stages)
}
