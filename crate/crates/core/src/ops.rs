//! Forward kernels and the matrix helpers the backward rules reuse.
//!
//! Every function here is pure: inputs are borrowed, a fresh tensor is
//! returned. The tape in [`crate::tape`] records calls to these kernels.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Epsilon added to the variance in [`layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `c = a·b` (or `c += a·b` when `accumulate`), with optional transposed
/// operands. `a` is stored `[m, k]` (or `[k, m]` when `a_trans`), `b` is
/// stored `[k, n]` (or `[n, k]`), `c` is `[m, n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_trans { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_trans { (1, k) } else { (n, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index dgemm touches for these
    // row/column strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(shape_err!(
            "matmul inner extents differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
    Tensor::new([m, n], out)
}

pub fn transpose(x: &Tensor) -> Result<Tensor> {
    let (m, n) = x.dims2()?;
    let src = x.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Tensor::new([n, m], out)
}

/// Geometry of a square-kernel 2-D convolution on one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let (c, h, wd) = x.dims3()?;
        let [co, ci, kh, kw] = w.shape()[..] else {
            return Err(shape_err!(
                "conv weight must be [C_out, C_in, k, k], got {:?}",
                w.shape()
            ));
        };
        if kh != kw {
            return Err(shape_err!(
                "only square kernels are supported, got {kh}x{kw}"
            ));
        }
        if ci != c {
            return Err(shape_err!(
                "conv expects {ci} input channels, input has {c} ({:?})",
                x.shape()
            ));
        }
        if stride == 0 {
            return Err(shape_err!("conv stride must be >= 1"));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(shape_err!(
                "{kh}x{kw} kernel with pad {pad} does not fit a {h}x{wd} input"
            ));
        }
        Ok(Self {
            in_channels: c,
            out_channels: co,
            kernel: kh,
            stride,
            pad,
            in_h: h,
            in_w: wd,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (wd + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `x` into a `[C_in·k·k, H_out·W_out]` patch matrix (zero padding).
pub(crate) fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let k = g.kernel;
    let cols_w = g.out_pixels();
    let mut cols = vec![0.0; g.patch_len() * cols_w];
    for ci in 0..g.in_channels {
        let plane = &x[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * cols_w..(row + 1) * cols_w];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[oy * g.out_w + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let k = g.kernel;
    let cols_w = g.out_pixels();
    let mut x = vec![0.0; g.in_channels * g.in_h * g.in_w];
    for ci in 0..g.in_channels {
        let plane = &mut x[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * cols_w..(row + 1) * cols_w];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            plane[iy as usize * g.in_w + ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

fn check_bias(bias: Option<&Tensor>, out_channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [out_channels] => Err(shape_err!(
            "bias must be [{out_channels}], got {:?}",
            b.shape()
        )),
        _ => Ok(()),
    }
}

/// Cross-correlation of `x: [C_in, H, W]` with `w: [C_out, C_in, k, k]`.
/// Returns the output and the patch matrix the backward rule needs.
pub fn conv2d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Vec<f64>)> {
    let g = ConvGeometry::new(x, w, stride, pad)?;
    check_bias(bias, g.out_channels)?;
    let p = g.out_pixels();
    let cols = if g.kernel == 1 && g.stride == 1 && g.pad == 0 {
        x.data().to_vec()
    } else {
        im2col(x.data(), &g)
    };
    let mut out = vec![0.0; g.out_channels * p];
    if let Some(b) = bias {
        for (co, row) in out.chunks_mut(p).enumerate() {
            row.fill(b.data()[co]);
        }
    }
    gemm(
        g.out_channels,
        g.patch_len(),
        p,
        w.data(),
        false,
        &cols,
        false,
        &mut out,
        bias.is_some(),
    );
    Ok((Tensor::new([g.out_channels, g.out_h, g.out_w], out)?, cols))
}

/// 1×1 convolution with a `[C_out, C_in]` weight matrix.
pub fn conv1x1(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (co, ci) = w.dims2()?;
    let w4 = w.reshape([co, ci, 1, 1])?;
    conv2d(x, &w4, bias, 1, 0).map(|(out, _)| out)
}

fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(shape_err!("axis {axis} out of range for shape {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Softmax along `axis`, computed with max subtraction.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let max = (0..len)
                .map(|j| src[at(j)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let e = (src[at(j)] - max).exp();
                out[at(j)] = e;
                total += e;
            }
            for j in 0..len {
                out[at(j)] /= total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Backward of softmax given its output `y`: `dx = y ⊙ (dy − Σ dy⊙y)`.
pub(crate) fn softmax_backward(y: &Tensor, dy: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_split(y.shape(), axis)?;
    let (yv, gv) = (y.data(), dy.data());
    let mut dx = vec![0.0; yv.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let dot: f64 = (0..len).map(|j| yv[at(j)] * gv[at(j)]).sum();
            for j in 0..len {
                dx[at(j)] = yv[at(j)] * (gv[at(j)] - dot);
            }
        }
    }
    Tensor::new(y.shape().to_vec(), dx)
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Elementwise logistic function. Values are in (0, 1) for |x| below
/// roughly 36; beyond that `f64` rounds to the endpoints.
pub fn sigmoid(x: &Tensor) -> Tensor {
    map(x, sigmoid_scalar)
}

pub fn relu(x: &Tensor) -> Tensor {
    map(x, |v| v.max(0.0))
}

pub(crate) fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
        .expect("shape preserved")
}

/// How the smaller operand of a binary op is stretched onto the output.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct BroadcastPlan {
    pub out_shape: Vec<usize>,
    /// Output flat index → operand flat index; `None` means identity.
    pub a_map: Option<Vec<usize>>,
    pub b_map: Option<Vec<usize>>,
}

fn stretch_map(out_shape: &[usize], small: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for ax in (0..rank).rev() {
        strides[ax] = if small[ax] == 1 { 0 } else { acc };
        acc *= small[ax];
    }
    let numel: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    for _ in 0..numel {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    map
}

/// Broadcast rules: equal shapes; a `[1]` scalar against anything;
/// channel-wise `[C,1,1]` against `[C,H,W]`; spatial-wise `[1,H,W]` against
/// `[C,H,W]` (and the same two patterns under a leading batch axis).
pub(crate) fn broadcast_plan(a: &[usize], b: &[usize]) -> Result<BroadcastPlan> {
    if a == b {
        return Ok(BroadcastPlan {
            out_shape: a.to_vec(),
            a_map: None,
            b_map: None,
        });
    }
    let is_scalar = |s: &[usize]| s == [1];
    if is_scalar(a) || is_scalar(b) {
        let (out, small_is_a) = if is_scalar(a) { (b, true) } else { (a, false) };
        let map = vec![0; out.iter().product()];
        return Ok(BroadcastPlan {
            out_shape: out.to_vec(),
            a_map: small_is_a.then(|| map.clone()),
            b_map: (!small_is_a).then_some(map),
        });
    }
    let incompatible = || shape_err!("shapes {a:?} and {b:?} do not broadcast");
    if a.len() != b.len() || !(3..=4).contains(&a.len()) {
        return Err(incompatible());
    }
    let lead = a.len() - 3;
    if a[..lead] != b[..lead] {
        return Err(incompatible());
    }
    let a_small = (0..a.len()).any(|ax| a[ax] == 1 && b[ax] != 1);
    let b_small = (0..a.len()).any(|ax| b[ax] == 1 && a[ax] != 1);
    if a_small == b_small {
        return Err(incompatible());
    }
    let (small, big) = if a_small { (a, b) } else { (b, a) };
    let channel_wise = small[lead] == big[lead] && small[lead + 1..] == [1, 1];
    let spatial_wise = small[lead] == 1 && small[lead + 1..] == big[lead + 1..];
    if !(channel_wise || spatial_wise) {
        return Err(incompatible());
    }
    let map = stretch_map(big, small);
    Ok(BroadcastPlan {
        out_shape: big.to_vec(),
        a_map: a_small.then(|| map.clone()),
        b_map: (!a_small).then_some(map),
    })
}

fn gather(data: &[f64], map: &Option<Vec<usize>>, i: usize) -> f64 {
    match map {
        Some(m) => data[m[i]],
        None => data[i],
    }
}

pub(crate) fn binary(
    a: &Tensor,
    b: &Tensor,
    plan: &BroadcastPlan,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let numel: usize = plan.out_shape.iter().product();
    let out = (0..numel)
        .map(|i| {
            f(
                gather(a.data(), &plan.a_map, i),
                gather(b.data(), &plan.b_map, i),
            )
        })
        .collect();
    Tensor::new(plan.out_shape.clone(), out)
}

/// Sums an output-shaped gradient back onto an operand through its map.
pub(crate) fn reduce_to(grad: &[f64], map: &Option<Vec<usize>>, shape: &[usize]) -> Result<Tensor> {
    match map {
        None => Tensor::new(shape.to_vec(), grad.to_vec()),
        Some(m) => {
            let mut out = Tensor::zeros(shape.to_vec())?;
            let dst = out.data_mut();
            for (g, &j) in grad.iter().zip(m) {
                dst[j] += g;
            }
            Ok(out)
        }
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(a, b, &broadcast_plan(a.shape(), b.shape())?, |x, y| x + y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(a, b, &broadcast_plan(a.shape(), b.shape())?, |x, y| x * y)
}

/// `[C,H,W] → [C,1,1]` mean over positions.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let hw = h * w;
    let out = x
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().sum::<f64>() / hw as f64)
        .collect();
    Tensor::new([c, 1, 1], out)
}

/// `[C,H,W] → [C,1,1]` max over positions, plus the flat argmax per channel.
pub fn global_max_pool(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = x.dims3()?;
    let hw = h * w;
    let mut out = Vec::with_capacity(c);
    let mut arg = Vec::with_capacity(c);
    for (ci, plane) in x.data().chunks(hw).enumerate() {
        let (j, v) = argmax(plane);
        out.push(v);
        arg.push(ci * hw + j);
    }
    Ok((Tensor::new([c, 1, 1], out)?, arg))
}

/// First index of the maximum (row-major tie-break).
pub fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// `[C,H,W] → [1,H,W]` mean over channels.
pub fn channel_mean(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let hw = h * w;
    let mut out = vec![0.0; hw];
    for plane in x.data().chunks(hw) {
        for (o, v) in out.iter_mut().zip(plane) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= c as f64);
    Tensor::new([1, h, w], out)
}

/// `[C,H,W] → [1,H,W]` max over channels, plus the flat argmax per position.
pub fn channel_max(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = x.dims3()?;
    let hw = h * w;
    let src = x.data();
    let mut out = vec![f64::NEG_INFINITY; hw];
    let mut arg = vec![0; hw];
    for ci in 0..c {
        for p in 0..hw {
            let v = src[ci * hw + p];
            if v > out[p] {
                out[p] = v;
                arg[p] = ci * hw + p;
            }
        }
    }
    Ok((Tensor::new([1, h, w], out)?, arg))
}

/// Concatenates rank-3 tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| shape_err!("concat of zero tensors"))?;
    let (_, h, w) = first.dims3()?;
    let mut c_total = 0;
    let mut data = Vec::new();
    for p in parts {
        let (c, ph, pw) = p.dims3()?;
        if (ph, pw) != (h, w) {
            return Err(shape_err!(
                "concat spatial mismatch: {:?} vs {:?}",
                first.shape(),
                p.shape()
            ));
        }
        c_total += c;
        data.extend_from_slice(p.data());
    }
    Tensor::new([c_total, h, w], data)
}

/// Saved state of a layer-norm forward pass.
#[derive(Clone, Debug)]
pub(crate) struct LayerNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: f64,
}

/// Normalizes over every element of `x`, then applies an elementwise affine
/// map with `gamma`/`beta` of the same shape.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    layer_norm_cached(x, gamma, beta).map(|(y, _)| y)
}

pub(crate) fn layer_norm_cached(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<(Tensor, LayerNormCache)> {
    if gamma.shape() != x.shape() || beta.shape() != x.shape() {
        return Err(shape_err!(
            "layer norm affine {:?}/{:?} must match input {:?}",
            gamma.shape(),
            beta.shape(),
            x.shape()
        ));
    }
    let n = x.numel() as f64;
    let mean = x.data().iter().sum::<f64>() / n;
    let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    let normalized: Vec<f64> = x.data().iter().map(|v| (v - mean) * inv_std).collect();
    let out = normalized
        .iter()
        .zip(gamma.data().iter().zip(beta.data()))
        .map(|(xh, (g, b))| g * xh + b)
        .collect();
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

pub fn sum(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum())
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!(
            "{what}: prediction {:?} vs target {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_same(pred, target, "mse")?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t).powi(2))
        .sum();
    Ok(Tensor::scalar(total / pred.numel() as f64))
}

/// Mean binary cross-entropy of `sigmoid(logits)` against `target`, in the
/// overflow-free form `max(l,0) − l·t + ln(1 + e^{−|l|})`.
pub fn bce_with_logits(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_same(logits, target, "bce")?;
    let total: f64 = logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&l, &t)| l.max(0.0) - l * t + (-l.abs()).exp().ln_1p())
        .sum();
    Ok(Tensor::scalar(total / logits.numel() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_example() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[5.0, 6.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_identity_and_mismatch() {
        let eye = Tensor::from_fn([3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }).unwrap();
        let b = Tensor::from_fn([3, 2], |i| i as f64 * 0.5 - 1.0).unwrap();
        assert_eq!(matmul(&eye, &b).unwrap(), b);
        let bad = Tensor::zeros([2, 3]).unwrap();
        assert!(matmul(&bad, &bad).is_err());
    }

    #[test]
    fn conv3x3_delta_kernel_is_identity() {
        let x = Tensor::from_fn([1, 5, 4], |i| (i as f64 * 0.37).cos()).unwrap();
        let mut w = Tensor::zeros([1, 1, 3, 3]).unwrap();
        w.data_mut()[4] = 1.0;
        let (y, _) = conv2d(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv3x3_all_ones_counts_neighbours() {
        let x = Tensor::ones([1, 5, 5]).unwrap();
        let w = Tensor::ones([1, 1, 3, 3]).unwrap();
        let (y, _) = conv2d(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.at(&[0, 2, 2]), 9.0);
        assert_eq!(y.at(&[0, 0, 2]), 6.0);
        assert_eq!(y.at(&[0, 2, 4]), 6.0);
        assert_eq!(y.at(&[0, 0, 0]), 4.0);
        assert_eq!(y.at(&[0, 4, 4]), 4.0);
    }

    #[test]
    fn conv3x3_stride_two_halves_extent() {
        let x = Tensor::zeros([2, 8, 8]).unwrap();
        let w = Tensor::zeros([3, 2, 3, 3]).unwrap();
        let (y, _) = conv2d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[3, 4, 4]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros([2, 4, 4]).unwrap();
        let w = Tensor::zeros([3, 5, 3, 3]).unwrap();
        assert!(conv2d(&x, &w, None, 1, 1).is_err());
        let w1 = Tensor::zeros([3, 5]).unwrap();
        assert!(conv1x1(&x, &w1, None).is_err());
    }

    #[test]
    fn conv1x1_zero_weight_yields_bias() {
        let x = Tensor::from_fn([3, 2, 2], |i| i as f64).unwrap();
        let w = Tensor::zeros([2, 3]).unwrap();
        let b = t(&[2], &[0.25, -4.0]);
        let y = conv1x1(&x, &w, Some(&b)).unwrap();
        assert!(y.data()[..4].iter().all(|&v| v == 0.25));
        assert!(y.data()[4..].iter().all(|&v| v == -4.0));
    }

    #[test]
    fn global_avg_pool_of_small_map() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
    }

    #[test]
    fn softmax_closed_forms() {
        let y = softmax(&t(&[4], &[1.0; 4]), 0).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let y = softmax(&t(&[2], &[0.0, 3f64.ln()]), 0).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-12);
        assert!((y.data()[1] - 0.75).abs() < 1e-12);
        assert!(softmax(&t(&[2], &[0.0, 1.0]), 1).is_err());
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let y = softmax(&t(&[3], &[1000.0, 1000.0, -1000.0]), 0).unwrap();
        assert!(y.is_finite());
        assert!((y.data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_closed_forms() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!(1.0 - sigmoid_scalar(50.0) < 1e-20);
        for v in [-3.5, -0.1, 0.7, 12.0] {
            assert!((sigmoid_scalar(v) + sigmoid_scalar(-v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_definition() {
        assert_eq!(relu(&t(&[3], &[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn broadcast_patterns() {
        assert!(broadcast_plan(&[3, 1, 1], &[3, 4, 5]).is_ok());
        assert!(broadcast_plan(&[3, 4, 5], &[1, 4, 5]).is_ok());
        assert!(broadcast_plan(&[1], &[3, 4, 5]).is_ok());
        assert!(broadcast_plan(&[2, 3, 1, 1], &[2, 3, 4, 5]).is_ok());
        // Stretching one spatial axis only, or mixed directions, is rejected.
        assert!(broadcast_plan(&[3, 4, 1], &[3, 4, 5]).is_err());
        assert!(broadcast_plan(&[3, 1, 5], &[1, 4, 5]).is_err());
        assert!(broadcast_plan(&[2, 3], &[1, 3]).is_err());
        assert!(broadcast_plan(&[3, 4, 5], &[2, 4, 5]).is_err());
    }

    #[test]
    fn channel_and_spatial_multiplication() {
        let x = Tensor::from_fn([2, 2, 3], |i| i as f64 + 1.0).unwrap();
        let ones = Tensor::ones([2, 1, 1]).unwrap();
        assert_eq!(mul(&ones, &x).unwrap(), x);
        let m = Tensor::from_fn([1, 2, 3], |i| i as f64 * 0.5).unwrap();
        let y = mul(&m, &x).unwrap();
        for c in 0..2 {
            for i in 0..2 {
                for j in 0..3 {
                    assert_eq!(y.at(&[c, i, j]), m.at(&[0, i, j]) * x.at(&[c, i, j]));
                }
            }
        }
    }

    #[test]
    fn bce_matches_naive_form() {
        let l = t(&[3], &[-2.0, 0.3, 4.0]);
        let y = t(&[3], &[0.0, 1.0, 1.0]);
        let naive: f64 = l
            .data()
            .iter()
            .zip(y.data())
            .map(|(&l, &t)| {
                let p = sigmoid_scalar(l);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / 3.0;
        assert!((bce_with_logits(&l, &y).unwrap().item().unwrap() - naive).abs() < 1e-12);
    }
}
