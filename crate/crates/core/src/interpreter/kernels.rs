//! Reference kernels, one per op.
//!
//! Reductions (convolution, dense, average pooling, batch norm, softmax)
//! accumulate in `f64` and round to `f32` once per output element. Loop order
//! is fixed and independent of layout, so an NHWC model and its NCHW
//! canonicalization produce bit-identical activations.

use crate::nmif::{DType, Layout, NodeSpec, TensorData, Values};

use super::shape::{self, Dims4, WindowParams};
use super::OpKind;

pub type KernelResult = Result<TensorData, String>;

fn f32s<'a>(t: &'a TensorData, what: &str) -> Result<&'a [f32], String> {
    t.as_f32().ok_or_else(|| format!("{what} must be F32"))
}

fn dims4(t: &TensorData, layout: Layout) -> Result<Dims4, String> {
    Dims4::from_shape(t.shape(), layout).ok_or_else(|| format!("expected rank-4 tensor, got {:?}", t.shape()))
}

fn build(shape: Vec<usize>, values: Vec<f32>) -> TensorData {
    TensorData::from_f32(shape, values).expect("kernel produced inconsistent shape")
}

#[allow(clippy::too_many_arguments)]
fn conv_core(
    x: &[f32],
    xd: Dims4,
    out_c: usize,
    kernel: [usize; 2],
    in_per_group: usize,
    groups: usize,
    win: &WindowParams,
    layout: Layout,
    weight: impl Fn(usize, usize, usize, usize) -> f32,
) -> KernelResult {
    let oh = win.out_extent(0, xd.h, kernel[0]).ok_or("kernel larger than padded input")?;
    let ow = win.out_extent(1, xd.w, kernel[1]).ok_or("kernel larger than padded input")?;
    let od = Dims4 { n: xd.n, c: out_c, h: oh, w: ow };
    let out_per_group = out_c / groups;
    let mut out = vec![0f32; od.numel()];
    for n in 0..xd.n {
        for o in 0..out_c {
            let g = o / out_per_group;
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0f64;
                    for ci in 0..in_per_group {
                        let c = g * in_per_group + ci;
                        for u in 0..kernel[0] {
                            let hi = (i * win.strides[0] + u * win.dilations[0]) as isize - win.pads[0] as isize;
                            if hi < 0 || hi as usize >= xd.h {
                                continue;
                            }
                            for v in 0..kernel[1] {
                                let wi = (j * win.strides[1] + v * win.dilations[1]) as isize - win.pads[1] as isize;
                                if wi < 0 || wi as usize >= xd.w {
                                    continue;
                                }
                                let xv = x[xd.offset(layout, n, c, hi as usize, wi as usize)];
                                acc += xv as f64 * weight(o, ci, u, v) as f64;
                            }
                        }
                    }
                    out[od.offset(layout, n, o, i, j)] = acc as f32;
                }
            }
        }
    }
    Ok(build(od.to_shape(layout), out))
}

/// Grouped 2-D convolution. Weights are `[O, I/g, kh, kw]` for NCHW and
/// `[kh, kw, I/g, O]` for NHWC.
pub fn conv2d(x: &TensorData, w: &TensorData, win: &WindowParams, groups: usize, layout: Layout) -> KernelResult {
    let xd = dims4(x, layout)?;
    let wv = f32s(w, "weight")?;
    let [w0, w1, w2, w3] = <[usize; 4]>::try_from(w.shape()).map_err(|_| "weight must be rank 4".to_string())?;
    let (out_c, in_per_group, kh, kw) = match layout {
        Layout::Nchw => (w0, w1, w2, w3),
        Layout::Nhwc => (w3, w2, w0, w1),
    };
    if groups == 0 || xd.c % groups != 0 || out_c % groups != 0 || xd.c / groups != in_per_group {
        return Err(format!("channel/group mismatch: {} channels, {groups} groups, weight {:?}", xd.c, w.shape()));
    }
    let weight = |o: usize, ci: usize, u: usize, v: usize| match layout {
        Layout::Nchw => wv[((o * in_per_group + ci) * kh + u) * kw + v],
        Layout::Nhwc => wv[((u * kw + v) * in_per_group + ci) * out_c + o],
    };
    conv_core(f32s(x, "input")?, xd, out_c, [kh, kw], in_per_group, groups, win, layout, weight)
}

/// Depthwise convolution with channel multiplier M. Weights are
/// `[C*M, 1, kh, kw]` for NCHW and `[kh, kw, C, M]` for NHWC.
pub fn depthwise_conv2d(x: &TensorData, w: &TensorData, win: &WindowParams, layout: Layout) -> KernelResult {
    let xd = dims4(x, layout)?;
    let wv = f32s(w, "weight")?;
    let [w0, w1, w2, w3] = <[usize; 4]>::try_from(w.shape()).map_err(|_| "weight must be rank 4".to_string())?;
    let (mult, kh, kw) = match layout {
        Layout::Nchw if w1 == 1 && xd.c > 0 && w0 % xd.c == 0 => (w0 / xd.c, w2, w3),
        Layout::Nhwc if w2 == xd.c => (w3, w0, w1),
        _ => return Err(format!("depthwise weight {:?} incompatible with {} channels", w.shape(), xd.c)),
    };
    let channels = xd.c;
    let weight = |o: usize, _ci: usize, u: usize, v: usize| match layout {
        Layout::Nchw => wv[(o * kh + u) * kw + v],
        Layout::Nhwc => wv[((u * kw + v) * channels + o / mult) * mult + o % mult],
    };
    conv_core(f32s(x, "input")?, xd, channels * mult, [kh, kw], 1, channels, win, layout, weight)
}

/// `y[n, o] = sum_i x[n, i] * w[o, i]`.
pub fn dense(x: &TensorData, w: &TensorData) -> KernelResult {
    let (xv, wv) = (f32s(x, "input")?, f32s(w, "weight")?);
    let (n, i, o) = match (x.shape(), w.shape()) {
        ([n, i], [o, wi]) if i == wi => (*n, *i, *o),
        (xs, ws) => return Err(format!("dense expects [N, I] x [O, I], got {xs:?} x {ws:?}")),
    };
    let mut out = vec![0f32; n * o];
    for b in 0..n {
        let row = &xv[b * i..(b + 1) * i];
        for k in 0..o {
            let wrow = &wv[k * i..(k + 1) * i];
            let acc: f64 = row.iter().zip(wrow).map(|(a, b)| *a as f64 * *b as f64).sum();
            out[b * o + k] = acc as f32;
        }
    }
    Ok(build(vec![n, o], out))
}

/// Applies `f(value, channel)` elementwise along the layout's channel axis.
fn per_channel(x: &TensorData, channels: usize, layout: Layout, f: impl Fn(f32, usize) -> f32) -> KernelResult {
    let xv = f32s(x, "input")?;
    let axis = shape::channel_axis(x.rank(), layout).ok_or_else(|| format!("expected rank 2 or 4, got {:?}", x.shape()))?;
    if x.shape()[axis] != channels {
        return Err(format!("{channels} channel parameters for shape {:?}", x.shape()));
    }
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let out = xv.iter().enumerate().map(|(idx, &v)| f(v, (idx / inner) % channels)).collect();
    Ok(build(x.shape().to_vec(), out))
}

pub fn bias_add(x: &TensorData, b: &TensorData, layout: Layout) -> KernelResult {
    let bv = f32s(b, "bias")?;
    if b.rank() != 1 {
        return Err("bias must be rank 1".into());
    }
    per_channel(x, bv.len(), layout, |v, c| v + bv[c])
}

/// Inference-mode batch norm: `y = scale * (x - mean) / sqrt(var + eps) + bias`.
pub fn batch_norm(
    x: &TensorData,
    scale: &TensorData,
    bias: &TensorData,
    mean: &TensorData,
    var: &TensorData,
    epsilon: f64,
    layout: Layout,
) -> KernelResult {
    let (g, b, m, s) = (f32s(scale, "scale")?, f32s(bias, "bias")?, f32s(mean, "mean")?, f32s(var, "var")?);
    let c = g.len();
    if [b.len(), m.len(), s.len()].iter().any(|&l| l != c) {
        return Err("batch-norm parameters differ in length".into());
    }
    per_channel(x, c, layout, |v, ch| {
        let norm = (v as f64 - m[ch] as f64) / (s[ch] as f64 + epsilon).sqrt();
        (g[ch] as f64 * norm + b[ch] as f64) as f32
    })
}

fn map_f32(x: &TensorData, f: impl Fn(f32) -> f32) -> KernelResult {
    Ok(build(x.shape().to_vec(), f32s(x, "input")?.iter().map(|&v| f(v)).collect()))
}

/// `max(x, 0)`; NaN passes through.
pub fn relu(x: &TensorData) -> KernelResult {
    map_f32(x, |v| if v > 0.0 || v.is_nan() { v } else { 0.0 })
}

/// `min(max(x, 0), 6)`; NaN passes through.
pub fn relu6(x: &TensorData) -> KernelResult {
    map_f32(x, |v| {
        if v.is_nan() {
            v
        } else if v > 6.0 {
            6.0
        } else if v > 0.0 {
            v
        } else {
            0.0
        }
    })
}

fn pool(x: &TensorData, win: &WindowParams, kernel: [usize; 2], layout: Layout, is_max: bool) -> KernelResult {
    let xd = dims4(x, layout)?;
    let xv = f32s(x, "input")?;
    let oh = win.out_extent(0, xd.h, kernel[0]).ok_or("pool window larger than padded input")?;
    let ow = win.out_extent(1, xd.w, kernel[1]).ok_or("pool window larger than padded input")?;
    let od = Dims4 { h: oh, w: ow, ..xd };
    let mut out = vec![0f32; od.numel()];
    for n in 0..xd.n {
        for c in 0..xd.c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut max = f32::NEG_INFINITY;
                    let mut sum = 0f64;
                    let mut count = 0usize;
                    for u in 0..kernel[0] {
                        let hi = (i * win.strides[0] + u) as isize - win.pads[0] as isize;
                        if hi < 0 || hi as usize >= xd.h {
                            continue;
                        }
                        for v in 0..kernel[1] {
                            let wi = (j * win.strides[1] + v) as isize - win.pads[1] as isize;
                            if wi < 0 || wi as usize >= xd.w {
                                continue;
                            }
                            let val = xv[xd.offset(layout, n, c, hi as usize, wi as usize)];
                            if val > max || val.is_nan() && !max.is_nan() {
                                max = val;
                            }
                            sum += val as f64;
                            count += 1;
                        }
                    }
                    out[od.offset(layout, n, c, i, j)] = if is_max {
                        max
                    } else if count == 0 {
                        0.0
                    } else {
                        (sum / count as f64) as f32
                    };
                }
            }
        }
    }
    Ok(build(od.to_shape(layout), out))
}

/// Window maximum; padded positions are ignored.
pub fn max_pool2d(x: &TensorData, win: &WindowParams, kernel: [usize; 2], layout: Layout) -> KernelResult {
    pool(x, win, kernel, layout, true)
}

/// Window mean over in-bounds positions only (padding is not counted).
pub fn avg_pool2d(x: &TensorData, win: &WindowParams, kernel: [usize; 2], layout: Layout) -> KernelResult {
    pool(x, win, kernel, layout, false)
}

pub fn global_avg_pool2d(x: &TensorData, layout: Layout) -> KernelResult {
    let xd = dims4(x, layout)?;
    let xv = f32s(x, "input")?;
    let od = Dims4 { h: 1, w: 1, ..xd };
    let mut out = vec![0f32; od.numel()];
    let area = (xd.h * xd.w) as f64;
    for n in 0..xd.n {
        for c in 0..xd.c {
            let mut sum = 0f64;
            for h in 0..xd.h {
                for w in 0..xd.w {
                    sum += xv[xd.offset(layout, n, c, h, w)] as f64;
                }
            }
            out[od.offset(layout, n, c, 0, 0)] = (sum / area) as f32;
        }
    }
    Ok(build(od.to_shape(layout), out))
}

/// Softmax over the last axis.
pub fn softmax(x: &TensorData) -> KernelResult {
    let xv = f32s(x, "input")?;
    let len = *x.shape().last().ok_or("softmax needs rank >= 1")?;
    let mut out = vec![0f32; xv.len()];
    if len == 0 {
        return Ok(build(x.shape().to_vec(), out));
    }
    for (row, dst) in xv.chunks(len).zip(out.chunks_mut(len)) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (d, e) in dst.iter_mut().zip(&exps) {
            *d = (e / total) as f32;
        }
    }
    Ok(build(x.shape().to_vec(), out))
}

/// `reshape(x, [d0, -1])`.
pub fn flatten(x: &TensorData) -> KernelResult {
    let (d0, rest) = x.shape().split_first().ok_or("flatten needs rank >= 1")?;
    x.reshaped(vec![*d0, rest.iter().product()]).map_err(|e| e.to_string())
}

pub fn reshape(x: &TensorData, target: &[usize]) -> KernelResult {
    x.reshaped(target.to_vec()).map_err(|e| e.to_string())
}

/// Constant zero padding with per-axis (before, after) amounts.
pub fn pad(x: &TensorData, amounts: &[(usize, usize)]) -> KernelResult {
    if amounts.len() != x.rank() {
        return Err(format!("pad amounts for rank {} given for rank {}", amounts.len(), x.rank()));
    }
    let out_shape: Vec<usize> = x.shape().iter().zip(amounts).map(|(d, (b, a))| d + b + a).collect();
    let out_strides = crate::nmif::strides(&out_shape);
    let mut target = Vec::with_capacity(x.numel());
    let mut counter = vec![0usize; x.rank()];
    for _ in 0..x.numel() {
        target.push(counter.iter().zip(amounts).zip(&out_strides).map(|((c, (b, _)), s)| (c + b) * s).sum::<usize>());
        for axis in (0..counter.len()).rev() {
            counter[axis] += 1;
            if counter[axis] < x.shape()[axis] {
                break;
            }
            counter[axis] = 0;
        }
    }
    let n_out: usize = out_shape.iter().product();
    let values = match x.values() {
        Values::F32(v) => {
            let mut out = vec![0f32; n_out];
            for (src, &dst) in v.iter().zip(&target) {
                out[dst] = *src;
            }
            Values::F32(out)
        }
        Values::I64(v) => {
            let mut out = vec![0i64; n_out];
            for (src, &dst) in v.iter().zip(&target) {
                out[dst] = *src;
            }
            Values::I64(out)
        }
    };
    TensorData::new(out_shape, values).map_err(|e| e.to_string())
}

pub fn add(a: &TensorData, b: &TensorData) -> KernelResult {
    if a.shape() != b.shape() {
        return Err(format!("add operands differ: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let (av, bv) = (f32s(a, "lhs")?, f32s(b, "rhs")?);
    Ok(build(a.shape().to_vec(), av.iter().zip(bv).map(|(x, y)| x + y).collect()))
}

pub fn concat(inputs: &[&TensorData], axis: usize) -> KernelResult {
    let first = inputs.first().ok_or("concat needs at least one input")?;
    let rank = first.rank();
    if axis >= rank {
        return Err(format!("axis {axis} out of range for rank {rank}"));
    }
    for t in inputs {
        let ok = t.dtype() == first.dtype()
            && t.rank() == rank
            && (0..rank).all(|i| i == axis || t.shape()[i] == first.shape()[i]);
        if !ok {
            return Err(format!("concat operand {:?} incompatible with {:?}", t.shape(), first.shape()));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let mut shape = first.shape().to_vec();
    shape[axis] = inputs.iter().map(|t| t.shape()[axis]).sum();
    let values = match first.dtype() {
        DType::F32 => {
            let mut out = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                for t in inputs {
                    let chunk = t.shape()[axis] * inner;
                    out.extend_from_slice(&t.as_f32().unwrap()[o * chunk..(o + 1) * chunk]);
                }
            }
            Values::F32(out)
        }
        DType::I64 => {
            let mut out = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                for t in inputs {
                    let chunk = t.shape()[axis] * inner;
                    out.extend_from_slice(&t.as_i64().unwrap()[o * chunk..(o + 1) * chunk]);
                }
            }
            Values::I64(out)
        }
    };
    TensorData::new(shape, values).map_err(|e| e.to_string())
}

/// Dispatches `node` over its materialized inputs.
pub fn run_node(node: &NodeSpec, inputs: &[&TensorData], layout: Layout) -> KernelResult {
    let arg = |i: usize| inputs.get(i).copied().ok_or_else(|| format!("missing input {i}"));
    match node.op_type {
        OpKind::Conv2D => {
            let (win, groups) = shape::conv_params(node)?;
            conv2d(arg(0)?, arg(1)?, &win, groups, layout)
        }
        OpKind::DepthwiseConv2D => {
            let (win, _) = shape::conv_params(node)?;
            depthwise_conv2d(arg(0)?, arg(1)?, &win, layout)
        }
        OpKind::Dense => dense(arg(0)?, arg(1)?),
        OpKind::BiasAdd => bias_add(arg(0)?, arg(1)?, layout),
        OpKind::ReLU => relu(arg(0)?),
        OpKind::ReLU6 => relu6(arg(0)?),
        OpKind::MaxPool2D => {
            let (win, kernel) = shape::pool_params(node)?;
            max_pool2d(arg(0)?, &win, kernel, layout)
        }
        OpKind::AvgPool2D => {
            let (win, kernel) = shape::pool_params(node)?;
            avg_pool2d(arg(0)?, &win, kernel, layout)
        }
        OpKind::GlobalAvgPool2D => global_avg_pool2d(arg(0)?, layout),
        OpKind::BatchNorm => {
            let eps = node.attr("epsilon").and_then(|v| v.as_float()).ok_or("attribute \"epsilon\" missing")?;
            batch_norm(arg(0)?, arg(1)?, arg(2)?, arg(3)?, arg(4)?, eps, layout)
        }
        OpKind::Softmax => softmax(arg(0)?),
        OpKind::Flatten => flatten(arg(0)?),
        OpKind::Reshape => {
            let x = arg(0)?;
            reshape(x, &shape::reshape_target(node, x.numel())?)
        }
        OpKind::Pad => {
            let x = arg(0)?;
            pad(x, &shape::pad_amounts(node, x.rank())?)
        }
        OpKind::Add => add(arg(0)?, arg(1)?),
        OpKind::Concat => {
            let axis = shape::concat_axis(node, arg(0)?.rank())?;
            concat(inputs, axis)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f32>) -> TensorData {
        TensorData::from_f32(shape.to_vec(), v).unwrap()
    }

    fn win(s: usize, p: usize) -> WindowParams {
        WindowParams { strides: [s, s], pads: [p; 4], dilations: [1, 1] }
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = t(&[1, 1, 3, 3], (1..=9).map(|v| v as f32).collect());
        let w = t(&[1, 1, 1, 1], vec![1.0]);
        let y = conv2d(&x, &w, &win(1, 0), 1, Layout::Nchw).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_counts_window() {
        let x = t(&[1, 1, 3, 3], vec![1.0; 9]);
        let w = t(&[1, 1, 2, 2], vec![1.0; 4]);
        let y = conv2d(&x, &w, &win(1, 0), 1, Layout::Nchw).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.as_f32().unwrap(), &[4.0; 4]);
    }

    #[test]
    fn conv_group_mismatch_is_error() {
        let x = t(&[1, 3, 3, 3], vec![0.0; 27]);
        let w = t(&[2, 2, 1, 1], vec![0.0; 4]);
        assert!(conv2d(&x, &w, &win(1, 0), 1, Layout::Nchw).is_err());
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let y = softmax(&t(&[1, 2], vec![0.0, 0.0])).unwrap();
        assert_eq!(y.as_f32().unwrap(), &[0.5, 0.5]);
    }

    #[test]
    fn relu6_clamps() {
        let y = relu6(&t(&[3], vec![8.0, -1.0, 2.5])).unwrap();
        assert_eq!(y.as_f32().unwrap(), &[6.0, 0.0, 2.5]);
        assert!(relu(&t(&[1], vec![f32::NAN])).unwrap().as_f32().unwrap()[0].is_nan());
    }

    #[test]
    fn batchnorm_unit_params_is_identity() {
        let x = t(&[1, 2, 2, 2], (0..8).map(|v| v as f32 - 3.5).collect());
        let ones = t(&[2], vec![1.0, 1.0]);
        let zeros = t(&[2], vec![0.0, 0.0]);
        let y = batch_norm(&x, &ones, &zeros, &zeros, &ones, 0.0, Layout::Nchw).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn pad_grows_axes_with_zeros() {
        let x = t(&[1, 2], vec![1.0, 2.0]);
        let y = pad(&x, &[(0, 0), (1, 2)]).unwrap();
        assert_eq!(y.shape(), &[1, 5]);
        assert_eq!(y.as_f32().unwrap(), &[0.0, 1.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn concat_channels() {
        let a = t(&[1, 1, 2], vec![1.0, 2.0]);
        let b = t(&[1, 2, 2], vec![3.0, 4.0, 5.0, 6.0]);
        let y = concat(&[&a, &b], 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2]);
        assert_eq!(y.as_f32().unwrap(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn reshape_rejects_count_change() {
        let x = t(&[2, 3], vec![0.0; 6]);
        assert!(reshape(&x, &[4, 2]).is_err());
    }

    #[test]
    fn avg_pool_excludes_padding() {
        let x = t(&[1, 1, 2, 2], vec![4.0; 4]);
        let y = avg_pool2d(&x, &win(1, 1), [2, 2], Layout::Nchw).unwrap();
        assert!(y.as_f32().unwrap().iter().all(|&v| v == 4.0));
    }
}
