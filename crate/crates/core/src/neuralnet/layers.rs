//! Layer primitives with hand-written backward passes.
//!
//! Convolution and pooling operate on one `[C, H, W]` sample; batch norm and
//! the dense layer operate on a leading batch axis because their statistics
//! (or GEMM shapes) span the batch.

use crate::error::{Error, Result};

use super::tensor::{gemm, lane_sum, lane_sum2, Op, Scalar, Tensor};

/// Batch-norm behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics only; samples are independent.
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        self.h - self.kh + 1
    }
    pub fn out_w(&self) -> usize {
        self.w - self.kw + 1
    }
    pub fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    pub fn pixels(&self) -> usize {
        self.out_h() * self.out_w()
    }
    pub fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }
    pub fn out_len(&self) -> usize {
        self.cout * self.pixels()
    }
}

fn conv_dims<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<ConvDims> {
    let (&[cin, h, w], &[cout, kcin, kh, kw]) = (input.shape(), kernels.shape()) else {
        return Err(Error::Shape(format!(
            "conv2d expects input [C,H,W] and kernels [O,C,KH,KW], got {:?} and {:?}",
            input.shape(),
            kernels.shape()
        )));
    };
    if kcin != cin {
        return Err(Error::Shape(format!(
            "conv2d: input has {cin} channels, kernels expect {kcin}"
        )));
    }
    if h < kh || w < kw {
        return Err(Error::Shape(format!(
            "conv2d: {h}x{w} input is smaller than the {kh}x{kw} kernel"
        )));
    }
    bias.expect_shape(&[cout], "conv2d bias")?;
    Ok(ConvDims {
        cin,
        h,
        w,
        cout,
        kh,
        kw,
    })
}

/// Unfold every receptive field into a column: `[patch, pixels]`.
/// `cols` is cleared and refilled.
fn im2col<T: Scalar>(input: &[T], d: &ConvDims, cols: &mut Vec<T>) {
    let (oh, ow) = (d.out_h(), d.out_w());
    cols.clear();
    cols.reserve(d.patch() * d.pixels());
    for c in 0..d.cin {
        let plane = &input[c * d.h * d.w..(c + 1) * d.h * d.w];
        for i in 0..d.kh {
            for j in 0..d.kw {
                for oy in 0..oh {
                    let start = (oy + i) * d.w + j;
                    cols.extend_from_slice(&plane[start..start + ow]);
                }
            }
        }
    }
}

/// Scatter-add columns back into image layout.
fn col2im<T: Scalar>(cols: &[T], d: &ConvDims, out: &mut [T]) {
    let (oh, ow, p) = (d.out_h(), d.out_w(), d.pixels());
    for c in 0..d.cin {
        let plane = &mut out[c * d.h * d.w..(c + 1) * d.h * d.w];
        for i in 0..d.kh {
            for j in 0..d.kw {
                let row = (c * d.kh + i) * d.kw + j;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let dst = &mut plane[(oy + i) * d.w + j..(oy + i) * d.w + j + ow];
                    for (o, &g) in dst.iter_mut().zip(&src[oy * ow..(oy + 1) * ow]) {
                        *o = *o + g;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward_slice<T: Scalar>(
    input: &[T],
    d: &ConvDims,
    kernels: &[T],
    bias: &[T],
    out: &mut [T],
    scratch: &mut Vec<T>,
) {
    let p = d.pixels();
    im2col(input, d, scratch);
    gemm(
        d.cout,
        d.patch(),
        p,
        kernels,
        Op::N,
        scratch,
        Op::N,
        T::zero(),
        out,
    );
    for (row, &b) in out.chunks_exact_mut(p).zip(bias) {
        row.iter_mut().for_each(|v| *v = *v + b);
    }
}

/// Overwrites `grad_kernels`/`grad_bias`; `grad_input` is only computed when given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward_slice<T: Scalar>(
    input: &[T],
    d: &ConvDims,
    kernels: &[T],
    grad_out: &[T],
    grad_input: Option<&mut [T]>,
    grad_kernels: &mut [T],
    grad_bias: &mut [T],
    scratch: &mut Vec<T>,
) {
    let p = d.pixels();
    im2col(input, d, scratch);
    let cols = scratch.as_mut_slice();
    for (gb, row) in grad_bias.iter_mut().zip(grad_out.chunks_exact(p)) {
        *gb = lane_sum(row, |v| v);
    }
    gemm(
        d.cout,
        p,
        d.patch(),
        grad_out,
        Op::N,
        cols,
        Op::T,
        T::zero(),
        grad_kernels,
    );
    if let Some(gi) = grad_input {
        gemm(
            d.patch(),
            d.cout,
            p,
            kernels,
            Op::T,
            grad_out,
            Op::N,
            T::zero(),
            cols,
        );
        gi.iter_mut().for_each(|v| *v = T::zero());
        col2im(cols, d, gi);
    }
}

/// Valid (unpadded, stride 1) cross-correlation plus per-channel bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d = conv_dims(input, kernels, bias)?;
    let mut out = Tensor::zeros(&[d.cout, d.out_h(), d.out_w()]);
    conv_forward_slice(
        input.data(),
        &d,
        kernels.data(),
        bias.data(),
        out.data_mut(),
        &mut Vec::new(),
    );
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let d = conv_dims(input, kernels, bias)?;
    grad_out.expect_shape(&[d.cout, d.out_h(), d.out_w()], "conv2d grad_out")?;
    let mut g = ConvGrads {
        input: Tensor::zeros(input.shape()),
        kernels: Tensor::zeros(kernels.shape()),
        bias: Tensor::zeros(bias.shape()),
    };
    conv_backward_slice(
        input.data(),
        &d,
        kernels.data(),
        grad_out.data(),
        Some(g.input.data_mut()),
        g.kernels.data_mut(),
        g.bias.data_mut(),
        &mut Vec::new(),
    );
    Ok(g)
}

/// Max-pooled output and, per output cell, the flat input index it came from.
#[derive(Clone, Debug)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<u32>,
}

pub(crate) fn maxpool_slice<T: Scalar>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    out: &mut [T],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for idx in [
                    base + 2 * oy * w + 2 * ox + 1,
                    base + (2 * oy + 1) * w + 2 * ox,
                    base + (2 * oy + 1) * w + 2 * ox + 1,
                ] {
                    // strict comparison keeps the first maximum in scan order
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                out[o] = input[best];
                argmax[o] = best as u32;
            }
        }
    }
}

/// Non-overlapping 2×2 max pooling with stride 2.
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<Pooled<T>> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::Shape(format!(
            "maxpool2 expects [C,H,W], got {:?}",
            input.shape()
        )));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool2 needs even spatial dims, got {h}x{w}"
        )));
    }
    let mut output = Tensor::zeros(&[c, h / 2, w / 2]);
    let mut argmax = vec![0u32; output.len()];
    maxpool_slice(input.data(), c, h, w, output.data_mut(), &mut argmax);
    Ok(Pooled { output, argmax })
}

pub(crate) fn maxpool_backward_slice<T: Scalar>(grad_out: &[T], argmax: &[u32], grad_in: &mut [T]) {
    grad_in.iter_mut().for_each(|v| *v = T::zero());
    for (&g, &i) in grad_out.iter().zip(argmax) {
        grad_in[i as usize] = grad_in[i as usize] + g;
    }
}

/// Routes each output gradient to the input position that won the max.
pub fn maxpool2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[u32],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::Shape(format!(
            "maxpool2 backward: {} gradients for {} pooled cells",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut g = Tensor::zeros(input_shape);
    if argmax.iter().any(|&i| i as usize >= g.len()) {
        return Err(Error::Shape(
            "maxpool2 backward: argmax out of range".into(),
        ));
    }
    maxpool_backward_slice(grad_out.data(), argmax, g.data_mut());
    Ok(g)
}

/// Per-channel batch normalization with learnable scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Weight of the previous running value in the moving average.
    pub momentum: f64,
    pub eps: f64,
}

pub const DEFAULT_BN_MOMENTUM: f64 = 0.9;
pub const DEFAULT_BN_EPS: f64 = 1e-5;

/// Values saved by [`BatchNorm::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub mode: Mode,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
    /// Elements per channel that entered the statistics.
    pub count: usize,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            scale: Tensor::filled(&[channels], T::one()),
            shift: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            momentum: DEFAULT_BN_MOMENTUM,
            eps: DEFAULT_BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    fn layout(&self, input: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let shape = input.shape();
        if shape.len() < 2 || shape[1] != self.channels() {
            return Err(Error::Shape(format!(
                "batchnorm over {} channels got input {shape:?}",
                self.channels()
            )));
        }
        Ok((shape[0], shape[1], shape[2..].iter().product()))
    }

    /// Normalizes `[B, C, ...]` per channel.
    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BnCache<T>)> {
        let (b, c, s) = self.layout(input)?;
        let x = input.data();
        let eps = T::from_f64_lossy(self.eps);
        let (mean, var) = match mode {
            Mode::Train => {
                if b < 2 {
                    return Err(Error::InvalidInput(
                        "batchnorm in train mode needs at least 2 samples".into(),
                    ));
                }
                let n = T::from_usize(b * s).unwrap();
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let plane = |i: usize| &x[(i * c + ch) * s..(i * c + ch + 1) * s];
                    let sum = (0..b).fold(T::zero(), |acc, i| acc + lane_sum(plane(i), |v| v));
                    let mu = sum / n;
                    let sq = (0..b).fold(T::zero(), |acc, i| {
                        acc + lane_sum(plane(i), |v| (v - mu) * (v - mu))
                    });
                    mean[ch] = mu;
                    var[ch] = sq / n;
                }
                (mean, var)
            }
            Mode::Infer => (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            ),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(input.shape());
        let mut out = Tensor::zeros(input.shape());
        {
            let (xh, o) = (xhat.data_mut(), out.data_mut());
            let (gamma, beta) = (self.scale.data(), self.shift.data());
            let planes = x
                .chunks_exact(s)
                .zip(xh.chunks_exact_mut(s))
                .zip(o.chunks_exact_mut(s));
            for (p, ((xs, xhs), os)) in planes.enumerate() {
                let ch = p % c;
                let (mu, is, g, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
                for ((&v, h), o) in xs.iter().zip(xhs.iter_mut()).zip(os.iter_mut()) {
                    let n = (v - mu) * is;
                    *h = n;
                    *o = g * n + bt;
                }
            }
        }
        Ok((
            out,
            BnCache {
                mode,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                count: b * s,
            },
        ))
    }

    /// Folds a train-mode batch's statistics into the running estimates.
    ///
    /// The running variance uses the unbiased batch variance.
    pub fn update_running(&mut self, cache: &BnCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = T::from_f64_lossy(self.momentum);
        let one_m = T::one() - m;
        let n = cache.count as f64;
        let unbias = T::from_f64_lossy(n / (n - 1.0).max(1.0));
        for (r, &bm) in self
            .running_mean
            .data_mut()
            .iter_mut()
            .zip(&cache.batch_mean)
        {
            *r = m * *r + one_m * bm;
        }
        for (r, &bv) in self.running_var.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = m * *r + one_m * bv * unbias;
        }
    }

    /// Returns `(grad_input, grad_scale, grad_shift)`.
    ///
    /// In train mode the gradient flows through the batch mean and variance.
    pub fn backward(
        &self,
        cache: &BnCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let (b, c, s) = self.layout(grad_out)?;
        if grad_out.shape() != cache.xhat.shape() {
            return Err(Error::Shape(format!(
                "batchnorm backward: grad {:?} vs cached {:?}",
                grad_out.shape(),
                cache.xhat.shape()
            )));
        }
        let dy = grad_out.data();
        let xh = cache.xhat.data();
        let gamma = self.scale.data();
        let mut g_scale = Tensor::zeros(&[c]);
        let mut g_shift = Tensor::zeros(&[c]);
        for ch in 0..c {
            let mut sg = T::zero();
            let mut sb = T::zero();
            for i in 0..b {
                let r = (i * c + ch) * s..(i * c + ch + 1) * s;
                sg = sg + lane_sum2(&dy[r.clone()], &xh[r.clone()], |d, h| d * h);
                sb = sb + lane_sum(&dy[r], |d| d);
            }
            g_scale.data_mut()[ch] = sg;
            g_shift.data_mut()[ch] = sb;
        }
        let mut g_in = Tensor::zeros(grad_out.shape());
        let n = T::from_usize(b * s).unwrap();
        let planes = g_in
            .data_mut()
            .chunks_exact_mut(s)
            .zip(dy.chunks_exact(s))
            .zip(xh.chunks_exact(s));
        for (p, ((gis, dys), xhs)) in planes.enumerate() {
            let ch = p % c;
            let k_scale = gamma[ch] * cache.inv_std[ch];
            match cache.mode {
                Mode::Train => {
                    // dx = γ·σ⁻¹/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
                    let sum_dy = g_shift.data()[ch];
                    let sum_dy_xhat = g_scale.data()[ch];
                    let k_n = k_scale / n;
                    for ((g, &d), &h) in gis.iter_mut().zip(dys).zip(xhs) {
                        *g = k_n * (n * d - sum_dy - h * sum_dy_xhat);
                    }
                }
                Mode::Infer => {
                    for (g, &d) in gis.iter_mut().zip(dys) {
                        *g = k_scale * d;
                    }
                }
            }
        }
        Ok((g_in, g_scale, g_shift))
    }
}

fn dense_dims<T: Scalar>(weights: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize)> {
    let &[m, n] = weights.shape() else {
        return Err(Error::Shape(format!(
            "dense weights must be [M,N], got {:?}",
            weights.shape()
        )));
    };
    bias.expect_shape(&[m], "dense bias")?;
    Ok((m, n))
}

/// Affine map `W·x + b` for a single vector.
pub fn dense<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (m, n) = dense_dims(weights, bias)?;
    input.expect_shape(&[n], "dense input")?;
    let batched = Tensor::from_vec(&[1, n], input.data().to_vec())?;
    dense_batch(&batched, weights, bias)?.reshape(&[m])
}

/// Row-wise affine map on `[B, N]` input.
pub fn dense_batch<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (m, n) = dense_dims(weights, bias)?;
    let &[b, k] = input.shape() else {
        return Err(Error::Shape(format!(
            "dense batch input must be [B,N], got {:?}",
            input.shape()
        )));
    };
    if k != n {
        return Err(Error::Shape(format!(
            "dense: input width {k} does not match weights {:?}",
            weights.shape()
        )));
    }
    let mut out = Tensor::zeros(&[b, m]);
    gemm(
        b,
        n,
        m,
        input.data(),
        Op::N,
        weights.data(),
        Op::T,
        T::zero(),
        out.data_mut(),
    );
    for row in out.data_mut().chunks_exact_mut(m) {
        for (v, &bb) in row.iter_mut().zip(bias.data()) {
            *v = *v + bb;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`dense_batch`]; a rank-1 input is treated as a batch of one.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let &[m, n] = weights.shape() else {
        return Err(Error::Shape(format!(
            "dense weights must be [M,N], got {:?}",
            weights.shape()
        )));
    };
    let b = input.len() / n;
    if input.len() != b * n || grad_out.len() != b * m {
        return Err(Error::Shape(format!(
            "dense backward: input {:?}, grad {:?}, weights {:?}",
            input.shape(),
            grad_out.shape(),
            weights.shape()
        )));
    }
    let mut g_w = Tensor::zeros(&[m, n]);
    gemm(
        m,
        b,
        n,
        grad_out.data(),
        Op::T,
        input.data(),
        Op::N,
        T::zero(),
        g_w.data_mut(),
    );
    let mut g_in = Tensor::zeros(input.shape());
    gemm(
        b,
        m,
        n,
        grad_out.data(),
        Op::N,
        weights.data(),
        Op::N,
        T::zero(),
        g_in.data_mut(),
    );
    let mut g_b = Tensor::zeros(&[m]);
    for row in grad_out.data().chunks_exact(m) {
        for (acc, &g) in g_b.data_mut().iter_mut().zip(row) {
            *acc = *acc + g;
        }
    }
    Ok(DenseGrads {
        input: g_in,
        weights: g_w,
        bias: g_b,
    })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    relu_inplace(y.data_mut());
    y
}

pub(crate) fn relu_inplace<T: Scalar>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Gradient of ReLU given its output.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_out.clone();
    relu_backward_inplace(output.data(), g.data_mut());
    g
}

pub(crate) fn relu_backward_inplace<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.data_mut()
        .iter_mut()
        .for_each(|v| *v = sigmoid_scalar(*v));
    y
}

/// Gradient of the sigmoid given its output.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_out.clone();
    for (g, &y) in g.data_mut().iter_mut().zip(output.data()) {
        *g = *g * y * (T::one() - y);
    }
    g
}

fn check_loss_inputs<T: Scalar>(pred: &[T], target: &[T]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "mse: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if target.iter().any(|&t| !(t >= T::zero() && t <= T::one())) {
        return Err(Error::InvalidInput("mse targets must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Mean squared error over the batch.
pub fn mse_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<T> {
    check_loss_inputs(pred, target)?;
    let n = T::from_usize(pred.len()).unwrap();
    let sum: T = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok(sum / n)
}

/// `2 (pred − target) / B`.
pub fn mse_backward<T: Scalar>(pred: &[T], target: &[T]) -> Result<Vec<T>> {
    check_loss_inputs(pred, target)?;
    let scale = T::from_f64_lossy(2.0 / pred.len() as f64);
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| scale * (p - t))
        .collect())
}
