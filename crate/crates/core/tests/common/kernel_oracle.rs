//! Brute-force reference implementations for every op, evaluated against the
//! interpreter on random single-node graphs.

use convsurgeon::interpreter::shape::infer_shapes;
use convsurgeon::interpreter::{execute, ops::ALL_OPS, OpKind};
use convsurgeon::nmif::{validate_model, AttrValue, DType, Layout, ModelGraph, NodeSpec, TensorData, ValueInfo};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct OpResult {
    pub op: OpKind,
    pub instances: usize,
    pub max_abs_err: f64,
}

/// A dense row-major f64 array.
#[derive(Clone, Debug)]
struct Nd {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Nd {
    fn from_tensor(t: &TensorData) -> Self {
        Nd {
            shape: t.shape().to_vec(),
            data: t.as_f32().expect("f32").iter().map(|&v| v as f64).collect(),
        }
    }

    fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Nd { shape, data: vec![0.0; n] }
    }

    fn index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (i, d)| acc * d + i)
    }

    fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.index(idx)]
    }

    fn set(&mut self, idx: &[usize], v: f64) {
        let i = self.index(idx);
        self.data[i] = v;
    }

    /// Every multi-index in row-major order.
    fn indices(shape: &[usize]) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for &d in shape {
            out = out.into_iter().flat_map(|p| (0..d).map(move |i| [p.clone(), vec![i]].concat())).collect();
        }
        out
    }
}

fn ints(v: &[i64]) -> AttrValue {
    AttrValue::Ints(v.to_vec())
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> TensorData {
    let n = shape.iter().product();
    TensorData::from_f32(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// One op applied to the graph input `x`, extra operands as initializers.
fn single_node(node: NodeSpec, x: &[usize], params: Vec<(&str, TensorData)>) -> ModelGraph {
    let mut g = ModelGraph::new("oracle", Layout::Nchw);
    g.inputs.push(ValueInfo::new("x", DType::F32, x.to_vec()));
    let mut inputs = vec!["x".to_string()];
    for (name, t) in params {
        inputs.push(name.to_string());
        g.initializers.insert(name.to_string(), t);
    }
    g.nodes.push(node.with_inputs(inputs).with_output("y"));
    let shapes = infer_shapes(&g).expect("oracle instance must be shape-valid");
    let (dtype, shape) = shapes["y"].clone();
    g.outputs.push(ValueInfo::new("y", dtype, shape));
    g
}

fn window_fits(input: usize, lo: usize, hi: usize, k: usize, dil: usize) -> bool {
    input + lo + hi >= (k - 1) * dil + 1
}

/// Zero-padded copy of an NCHW array, padding value `fill`.
fn pad_spatial(x: &Nd, pads: [usize; 4], fill: f64) -> Nd {
    let [n, c, h, w] = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
    let mut out = Nd::zeros(vec![n, c, h + pads[0] + pads[2], w + pads[1] + pads[3]]);
    out.data.iter_mut().for_each(|v| *v = fill);
    for idx in Nd::indices(&x.shape) {
        out.set(&[idx[0], idx[1], idx[2] + pads[0], idx[3] + pads[1]], x.get(&idx));
    }
    out
}

/// Direct convolution over an explicitly padded input. `weight(o, c)` returns
/// the kernel slice for output channel `o` and absolute input channel `c`, or
/// `None` when `c` is outside the group of `o`.
fn conv_oracle(x: &Nd, out_c: usize, k: [usize; 2], strides: [usize; 2], dil: [usize; 2], pads: [usize; 4], weight: impl Fn(usize, usize, usize, usize) -> Option<f64>) -> Nd {
    let xp = pad_spatial(x, pads, 0.0);
    let (hp, wp) = (xp.shape[2], xp.shape[3]);
    let oh = (hp - ((k[0] - 1) * dil[0] + 1)) / strides[0] + 1;
    let ow = (wp - ((k[1] - 1) * dil[1] + 1)) / strides[1] + 1;
    let mut y = Nd::zeros(vec![x.shape[0], out_c, oh, ow]);
    for idx in Nd::indices(&y.shape.clone()) {
        let [n, o, i, j] = [idx[0], idx[1], idx[2], idx[3]];
        let mut acc = 0.0;
        for c in 0..x.shape[1] {
            for u in 0..k[0] {
                for v in 0..k[1] {
                    if let Some(wv) = weight(o, c, u, v) {
                        acc += wv * xp.get(&[n, c, i * strides[0] + u * dil[0], j * strides[1] + v * dil[1]]);
                    }
                }
            }
        }
        y.set(&idx, acc);
    }
    y
}

fn pool_oracle(x: &Nd, k: [usize; 2], strides: [usize; 2], pads: [usize; 4], max: bool) -> Nd {
    // NaN marks padding so it is excluded from both max and mean.
    let xp = pad_spatial(x, pads, f64::NAN);
    let oh = (xp.shape[2] - k[0]) / strides[0] + 1;
    let ow = (xp.shape[3] - k[1]) / strides[1] + 1;
    let mut y = Nd::zeros(vec![x.shape[0], x.shape[1], oh, ow]);
    for idx in Nd::indices(&y.shape.clone()) {
        let window: Vec<f64> = (0..k[0])
            .flat_map(|u| (0..k[1]).map(move |v| (u, v)))
            .map(|(u, v)| xp.get(&[idx[0], idx[1], idx[2] * strides[0] + u, idx[3] * strides[1] + v]))
            .filter(|v| !v.is_nan())
            .collect();
        let value = if max {
            window.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        } else {
            window.iter().sum::<f64>() / window.len() as f64
        };
        y.set(&idx, value);
    }
    y
}

struct Instance {
    model: ModelGraph,
    input: TensorData,
    expected: Nd,
}

fn random_4d(rng: &mut ChaCha8Rng, max_c: usize, max_hw: usize) -> Vec<usize> {
    vec![rng.random_range(1..=2), rng.random_range(1..=max_c), rng.random_range(1..=max_hw), rng.random_range(1..=max_hw)]
}

fn instance(op: OpKind, rng: &mut ChaCha8Rng) -> Instance {
    match op {
        OpKind::Conv2D => loop {
            let groups = rng.random_range(1..=3usize);
            let (ipg, opg) = (rng.random_range(1..=3usize), rng.random_range(1..=3usize));
            let xs = vec![rng.random_range(1..=2), groups * ipg, rng.random_range(1..=7), rng.random_range(1..=7)];
            let k = [rng.random_range(1..=3usize), rng.random_range(1..=3usize)];
            let s = [rng.random_range(1..=2usize), rng.random_range(1..=2usize)];
            let d = [rng.random_range(1..=2usize), rng.random_range(1..=2usize)];
            let p: [usize; 4] = std::array::from_fn(|_| rng.random_range(0..=2));
            if !window_fits(xs[2], p[0], p[2], k[0], d[0]) || !window_fits(xs[3], p[1], p[3], k[1], d[1]) {
                continue;
            }
            let out_c = groups * opg;
            let w = tensor(rng, &[out_c, ipg, k[0], k[1]], -1.0, 1.0);
            let x = tensor(rng, &xs, -1.0, 1.0);
            let wn = Nd::from_tensor(&w);
            let expected = conv_oracle(&Nd::from_tensor(&x), out_c, k, s, d, p, |o, c, u, v| {
                let g = o / opg;
                (c / ipg == g).then(|| wn.get(&[o, c % ipg, u, v]))
            });
            let node = NodeSpec::new("op", op)
                .with_attr("strides", ints(&[s[0] as i64, s[1] as i64]))
                .with_attr("dilations", ints(&[d[0] as i64, d[1] as i64]))
                .with_attr("pads", ints(&p.map(|v| v as i64)))
                .with_attr("groups", AttrValue::Int(groups as i64));
            return Instance {
                model: single_node(node, &xs, vec![("w", w)]),
                input: x,
                expected,
            };
        },
        OpKind::DepthwiseConv2D => loop {
            let xs = random_4d(rng, 4, 7);
            let mult = rng.random_range(1..=3usize);
            let k = [rng.random_range(1..=3usize), rng.random_range(1..=3usize)];
            let s = [rng.random_range(1..=2usize), rng.random_range(1..=2usize)];
            let d = [rng.random_range(1..=2usize), rng.random_range(1..=2usize)];
            let p: [usize; 4] = std::array::from_fn(|_| rng.random_range(0..=2));
            if !window_fits(xs[2], p[0], p[2], k[0], d[0]) || !window_fits(xs[3], p[1], p[3], k[1], d[1]) {
                continue;
            }
            let out_c = xs[1] * mult;
            let w = tensor(rng, &[out_c, 1, k[0], k[1]], -1.0, 1.0);
            let x = tensor(rng, &xs, -1.0, 1.0);
            let wn = Nd::from_tensor(&w);
            let expected = conv_oracle(&Nd::from_tensor(&x), out_c, k, s, d, p, |o, c, u, v| (o / mult == c).then(|| wn.get(&[o, 0, u, v])));
            let node = NodeSpec::new("op", op)
                .with_attr("strides", ints(&[s[0] as i64, s[1] as i64]))
                .with_attr("dilations", ints(&[d[0] as i64, d[1] as i64]))
                .with_attr("pads", ints(&p.map(|v| v as i64)));
            return Instance {
                model: single_node(node, &xs, vec![("w", w)]),
                input: x,
                expected,
            };
        },
        OpKind::Dense => {
            let (n, i, o) = (rng.random_range(1..=3), rng.random_range(1..=12), rng.random_range(1..=8));
            let x = tensor(rng, &[n, i], -1.0, 1.0);
            let w = tensor(rng, &[o, i], -1.0, 1.0);
            let (xn, wn) = (Nd::from_tensor(&x), Nd::from_tensor(&w));
            let mut expected = Nd::zeros(vec![n, o]);
            for r in 0..n {
                for c in 0..o {
                    expected.set(&[r, c], (0..i).map(|t| xn.get(&[r, t]) * wn.get(&[c, t])).sum());
                }
            }
            Instance {
                model: single_node(NodeSpec::new("op", op), &[n, i], vec![("w", w)]),
                input: x,
                expected,
            }
        }
        OpKind::BiasAdd => {
            let xs = if rng.random_bool(0.5) { vec![rng.random_range(1..=3), rng.random_range(1..=6)] } else { random_4d(rng, 5, 5) };
            let x = tensor(rng, &xs, -2.0, 2.0);
            let b = tensor(rng, &[xs[1]], -1.0, 1.0);
            let (xn, bn) = (Nd::from_tensor(&x), Nd::from_tensor(&b));
            let mut expected = xn.clone();
            for idx in Nd::indices(&xs) {
                expected.set(&idx, xn.get(&idx) + bn.get(&[idx[1]]));
            }
            Instance {
                model: single_node(NodeSpec::new("op", op), &xs, vec![("b", b)]),
                input: x,
                expected,
            }
        }
        OpKind::ReLU | OpKind::ReLU6 => {
            let xs = random_4d(rng, 4, 5);
            let x = tensor(rng, &xs, -8.0, 8.0);
            let mut expected = Nd::from_tensor(&x);
            let cap = if op == OpKind::ReLU6 { 6.0 } else { f64::INFINITY };
            expected.data.iter_mut().for_each(|v| *v = v.max(0.0).min(cap));
            Instance {
                model: single_node(NodeSpec::new("op", op), &xs, vec![]),
                input: x,
                expected,
            }
        }
        OpKind::MaxPool2D | OpKind::AvgPool2D => loop {
            let xs = random_4d(rng, 4, 7);
            let k = [rng.random_range(1..=3usize), rng.random_range(1..=3usize)];
            let s = [rng.random_range(1..=2usize), rng.random_range(1..=2usize)];
            let p = [rng.random_range(0..k[0]), rng.random_range(0..k[1]), rng.random_range(0..k[0]), rng.random_range(0..k[1])];
            if !window_fits(xs[2], p[0], p[2], k[0], 1) || !window_fits(xs[3], p[1], p[3], k[1], 1) {
                continue;
            }
            let x = tensor(rng, &xs, -3.0, 3.0);
            let expected = pool_oracle(&Nd::from_tensor(&x), k, s, p, op == OpKind::MaxPool2D);
            let node = NodeSpec::new("op", op)
                .with_attr("kernel_shape", ints(&[k[0] as i64, k[1] as i64]))
                .with_attr("strides", ints(&[s[0] as i64, s[1] as i64]))
                .with_attr("pads", ints(&p.map(|v| v as i64)));
            return Instance {
                model: single_node(node, &xs, vec![]),
                input: x,
                expected,
            };
        },
        OpKind::GlobalAvgPool2D => {
            let xs = random_4d(rng, 4, 6);
            let x = tensor(rng, &xs, -3.0, 3.0);
            let xn = Nd::from_tensor(&x);
            let mut expected = Nd::zeros(vec![xs[0], xs[1], 1, 1]);
            for n in 0..xs[0] {
                for c in 0..xs[1] {
                    let cells = Nd::indices(&xs[2..]);
                    let total: f64 = cells.iter().map(|hw| xn.get(&[n, c, hw[0], hw[1]])).sum();
                    expected.set(&[n, c, 0, 0], total / cells.len() as f64);
                }
            }
            Instance {
                model: single_node(NodeSpec::new("op", op), &xs, vec![]),
                input: x,
                expected,
            }
        }
        OpKind::BatchNorm => {
            let xs = if rng.random_bool(0.25) { vec![rng.random_range(1..=3), rng.random_range(1..=6)] } else { random_4d(rng, 5, 5) };
            let c = xs[1];
            let x = tensor(rng, &xs, -3.0, 3.0);
            let scale = tensor(rng, &[c], 0.5, 2.0);
            let bias = tensor(rng, &[c], -1.0, 1.0);
            let mean = tensor(rng, &[c], -1.0, 1.0);
            let var = tensor(rng, &[c], 0.1, 2.0);
            let eps = [1e-5, 1e-3, 0.1][rng.random_range(0..3)];
            let (xn, g, b, m, s) = (Nd::from_tensor(&x), Nd::from_tensor(&scale), Nd::from_tensor(&bias), Nd::from_tensor(&mean), Nd::from_tensor(&var));
            let mut expected = xn.clone();
            for idx in Nd::indices(&xs) {
                let ch = [idx[1]];
                expected.set(&idx, g.get(&ch) * (xn.get(&idx) - m.get(&ch)) / (s.get(&ch) + eps).sqrt() + b.get(&ch));
            }
            let node = NodeSpec::new("op", op).with_attr("epsilon", AttrValue::Float(eps));
            Instance {
                model: single_node(node, &xs, vec![("scale", scale), ("bias", bias), ("mean", mean), ("var", var)]),
                input: x,
                expected,
            }
        }
        OpKind::Softmax => {
            let xs = vec![rng.random_range(1..=3), rng.random_range(1..=10)];
            let x = tensor(rng, &xs, -5.0, 5.0);
            let xn = Nd::from_tensor(&x);
            let mut expected = xn.clone();
            for r in 0..xs[0] {
                let total: f64 = (0..xs[1]).map(|c| xn.get(&[r, c]).exp()).sum();
                for c in 0..xs[1] {
                    expected.set(&[r, c], xn.get(&[r, c]).exp() / total);
                }
            }
            Instance {
                model: single_node(NodeSpec::new("op", op), &xs, vec![]),
                input: x,
                expected,
            }
        }
        OpKind::Flatten | OpKind::Reshape => {
            let xs = random_4d(rng, 4, 4);
            let x = tensor(rng, &xs, -1.0, 1.0);
            let total: usize = xs.iter().product();
            let (node, out_shape) = if op == OpKind::Flatten {
                (NodeSpec::new("op", op), vec![xs[0], total / xs[0]])
            } else {
                // Split the element count into a random factorization, one axis inferred.
                let divisors: Vec<usize> = (1..=total).filter(|d| total % d == 0).collect();
                let a = divisors[rng.random_range(0..divisors.len())];
                let out = vec![a, total / a];
                let mut spec: Vec<i64> = out.iter().map(|&d| d as i64).collect();
                if rng.random_bool(0.5) {
                    spec[rng.random_range(0..2)] = -1;
                }
                (NodeSpec::new("op", op).with_attr("shape", ints(&spec)), out)
            };
            let mut expected = Nd::from_tensor(&x);
            expected.shape = out_shape;
            Instance {
                model: single_node(node, &xs, vec![]),
                input: x,
                expected,
            }
        }
        OpKind::Pad => {
            let xs = random_4d(rng, 3, 4);
            let amounts: Vec<(usize, usize)> = (0..4).map(|_| (rng.random_range(0..=2), rng.random_range(0..=2))).collect();
            let x = tensor(rng, &xs, -1.0, 1.0);
            let xn = Nd::from_tensor(&x);
            let mut expected = Nd::zeros(xs.iter().zip(&amounts).map(|(d, (b, a))| d + b + a).collect());
            for idx in Nd::indices(&xs) {
                let shifted: Vec<usize> = idx.iter().zip(&amounts).map(|(i, (b, _))| i + b).collect();
                expected.set(&shifted, xn.get(&idx));
            }
            let flat: Vec<i64> = amounts.iter().flat_map(|&(b, a)| [b as i64, a as i64]).collect();
            Instance {
                model: single_node(NodeSpec::new("op", op).with_attr("pads", ints(&flat)), &xs, vec![]),
                input: x,
                expected,
            }
        }
        OpKind::Add => {
            let xs = random_4d(rng, 4, 5);
            let x = tensor(rng, &xs, -2.0, 2.0);
            let other = tensor(rng, &xs, -2.0, 2.0);
            let (xn, on) = (Nd::from_tensor(&x), Nd::from_tensor(&other));
            let mut expected = xn.clone();
            expected.data.iter_mut().zip(&on.data).for_each(|(a, b)| *a += b);
            Instance {
                model: single_node(NodeSpec::new("op", op), &xs, vec![("other", other)]),
                input: x,
                expected,
            }
        }
        OpKind::Concat => {
            let xs = random_4d(rng, 3, 4);
            let axis = rng.random_range(0..4usize);
            let x = tensor(rng, &xs, -1.0, 1.0);
            let extra: Vec<TensorData> = (0..rng.random_range(1..=2))
                .map(|_| {
                    let mut s = xs.clone();
                    s[axis] = rng.random_range(1..=3);
                    tensor(rng, &s, -1.0, 1.0)
                })
                .collect();
            let parts: Vec<Nd> = std::iter::once(&x).chain(&extra).map(Nd::from_tensor).collect();
            let mut out_shape = xs.clone();
            out_shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
            let mut expected = Nd::zeros(out_shape);
            let mut offset = 0;
            for p in &parts {
                for idx in Nd::indices(&p.shape) {
                    let mut dst = idx.clone();
                    dst[axis] += offset;
                    expected.set(&dst, p.get(&idx));
                }
                offset += p.shape[axis];
            }
            let names = ["c1", "c2"];
            let params = extra.into_iter().enumerate().map(|(i, t)| (names[i], t)).collect();
            Instance {
                model: single_node(NodeSpec::new("op", op).with_attr("axis", AttrValue::Int(axis as i64)), &xs, params),
                input: x,
                expected,
            }
        }
    }
}

/// Runs `instances` random cases per op and reports the worst absolute error.
/// Panics on any shape mismatch, validation failure or execution error.
pub fn run_kernel_oracle(instances: usize, seed: u64) -> Vec<OpResult> {
    ALL_OPS
        .iter()
        .enumerate()
        .map(|(i, &op)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64 * 0x1000_0001));
            let mut max_abs_err = 0f64;
            for case in 0..instances {
                let inst = instance(op, &mut rng);
                let violations = validate_model(&inst.model);
                assert!(violations.is_empty(), "{op} case {case}: {violations:?}");
                let trace = execute(&inst.model, "case", &inst.input, false, 1).unwrap_or_else(|e| panic!("{op} case {case}: {e}"));
                assert_eq!(trace.output.shape(), inst.expected.shape.as_slice(), "{op} case {case}: output shape");
                for (got, want) in trace.output.as_f32().unwrap().iter().zip(&inst.expected.data) {
                    max_abs_err = max_abs_err.max((*got as f64 - want).abs());
                }
            }
            OpResult { op, instances, max_abs_err }
        })
        .collect()
}
