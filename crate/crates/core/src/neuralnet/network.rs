//! The objectness network:
//!
//! ```text
//! Conv(32, 5×5) → ReLU → MaxPool(2) → BN
//! Conv(32, 5×5) → ReLU → MaxPool(2) → BN
//! Flatten → Dense(96) → ReLU → BN → Dense(1) → Sigmoid
//! ```
//!
//! Input is a single-channel 96×96 crop; convolutions are unpadded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::adam::{adam_step, AdamConfig, Moments};
use super::layers::{
    conv_backward_slice, conv_forward_slice, dense_backward, dense_batch, maxpool_backward_slice,
    maxpool_slice, mse_backward, mse_loss, relu_backward_inplace, relu_inplace, sigmoid_scalar,
    BatchNorm, BnCache, ConvDims, Mode, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM,
};
use super::tensor::{gemm, Op, Scalar, Tensor};

pub const INPUT_SIZE: usize = 96;
pub const CONV_CHANNELS: usize = 32;
pub const KERNEL_SIZE: usize = 5;
pub const HIDDEN_UNITS: usize = 96;

const CONV1_OUT: usize = INPUT_SIZE - KERNEL_SIZE + 1; // 92
const POOL1_OUT: usize = CONV1_OUT / 2; // 46
const CONV2_OUT: usize = POOL1_OUT - KERNEL_SIZE + 1; // 42
const POOL2_OUT: usize = CONV2_OUT / 2; // 21

/// Width of the flattened convolutional features.
pub const FLAT_FEATURES: usize = CONV_CHANNELS * POOL2_OUT * POOL2_OUT;

/// Trainable scalars in the network.
pub const PARAMETER_COUNT: usize = 1_381_729;

/// Names of the trainable tensors, in [`Network::params`] order.
pub const PARAM_NAMES: [&str; 14] = [
    "conv1.weight",
    "conv1.bias",
    "bn1.scale",
    "bn1.shift",
    "conv2.weight",
    "conv2.bias",
    "bn2.scale",
    "bn2.shift",
    "dense1.weight",
    "dense1.bias",
    "bn3.scale",
    "bn3.shift",
    "dense2.weight",
    "dense2.bias",
];

/// Names of the batch-norm running statistics, in [`Network::running_stats`] order.
pub const RUNNING_STAT_NAMES: [&str; 6] = [
    "bn1.running_mean",
    "bn1.running_var",
    "bn2.running_mean",
    "bn2.running_var",
    "bn3.running_mean",
    "bn3.running_var",
];

const CONV1: ConvDims = ConvDims {
    cin: 1,
    h: INPUT_SIZE,
    w: INPUT_SIZE,
    cout: CONV_CHANNELS,
    kh: KERNEL_SIZE,
    kw: KERNEL_SIZE,
};
const CONV2: ConvDims = ConvDims {
    cin: CONV_CHANNELS,
    h: POOL1_OUT,
    w: POOL1_OUT,
    cout: CONV_CHANNELS,
    kh: KERNEL_SIZE,
    kw: KERNEL_SIZE,
};

/// Weight and bias of a convolution or dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Affine<T> {
    fn init(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
            .collect();
        Affine {
            weight: Tensor::from_vec(shape, data).expect("shape product matches"),
            bias: Tensor::zeros(&[shape[0]]),
        }
    }

    fn cast<U: Scalar>(&self) -> Affine<U> {
        Affine {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))` for each weight tensor,
/// keyed by parameter name.
pub fn init_bounds() -> [(&'static str, f64); 4] {
    let k2 = KERNEL_SIZE * KERNEL_SIZE;
    let b = |i: usize, o: usize| (6.0 / (i + o) as f64).sqrt();
    [
        ("conv1.weight", b(k2, CONV_CHANNELS * k2)),
        ("conv2.weight", b(CONV_CHANNELS * k2, CONV_CHANNELS * k2)),
        ("dense1.weight", b(FLAT_FEATURES, HIDDEN_UNITS)),
        ("dense2.weight", b(HIDDEN_UNITS, 1)),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub conv1: Affine<T>,
    pub bn1: BatchNorm<T>,
    pub conv2: Affine<T>,
    pub bn2: BatchNorm<T>,
    pub dense1: Affine<T>,
    pub bn3: BatchNorm<T>,
    pub dense2: Affine<T>,
}

/// Activations kept from a train-mode forward pass.
pub struct ForwardCache<T> {
    batch: usize,
    input: Tensor<T>,
    relu1: Tensor<T>,
    argmax1: Vec<u32>,
    bn1: BnCache<T>,
    norm1: Tensor<T>,
    relu2: Tensor<T>,
    argmax2: Vec<u32>,
    bn2: BnCache<T>,
    norm2: Tensor<T>,
    relu3: Tensor<T>,
    bn3: BnCache<T>,
    norm3: Tensor<T>,
    output: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Network output per sample.
    pub fn output(&self) -> &[T] {
        &self.output
    }

    /// Per-sample activation shapes after conv1, pool1, conv2, pool2,
    /// flatten, dense1 and dense2.
    pub fn shape_trace(&self) -> Vec<Vec<usize>> {
        vec![
            self.relu1.shape()[1..].to_vec(),
            self.norm1.shape()[1..].to_vec(),
            self.relu2.shape()[1..].to_vec(),
            self.bn2.xhat.shape()[1..].to_vec(),
            self.norm2.shape()[1..].to_vec(),
            self.norm3.shape()[1..].to_vec(),
            vec![self.output.len() / self.batch],
        ]
    }
}

/// Gradients for every trainable tensor, in [`PARAM_NAMES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T>(pub Vec<Tensor<T>>);

impl<T: Scalar> Network<T> {
    /// Seeded Glorot-uniform weights, zero biases, identity batch norm.
    pub fn init(seed: u64) -> Self {
        Self::init_with(seed, DEFAULT_BN_MOMENTUM, DEFAULT_BN_EPS)
    }

    pub fn init_with(seed: u64, bn_momentum: f64, bn_eps: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k2 = KERNEL_SIZE * KERNEL_SIZE;
        let conv1 = Affine::init(
            &[CONV_CHANNELS, 1, KERNEL_SIZE, KERNEL_SIZE],
            k2,
            CONV_CHANNELS * k2,
            &mut rng,
        );
        let conv2 = Affine::init(
            &[CONV_CHANNELS, CONV_CHANNELS, KERNEL_SIZE, KERNEL_SIZE],
            CONV_CHANNELS * k2,
            CONV_CHANNELS * k2,
            &mut rng,
        );
        let dense1 = Affine::init(
            &[HIDDEN_UNITS, FLAT_FEATURES],
            FLAT_FEATURES,
            HIDDEN_UNITS,
            &mut rng,
        );
        let dense2 = Affine::init(&[1, HIDDEN_UNITS], HIDDEN_UNITS, 1, &mut rng);
        let bn = |c| {
            let mut b = BatchNorm::new(c);
            b.momentum = bn_momentum;
            b.eps = bn_eps;
            b
        };
        Network {
            conv1,
            bn1: bn(CONV_CHANNELS),
            conv2,
            bn2: bn(CONV_CHANNELS),
            dense1,
            bn3: bn(HIDDEN_UNITS),
            dense2,
        }
    }

    pub fn params(&self) -> [&Tensor<T>; 14] {
        [
            &self.conv1.weight,
            &self.conv1.bias,
            &self.bn1.scale,
            &self.bn1.shift,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.bn2.scale,
            &self.bn2.shift,
            &self.dense1.weight,
            &self.dense1.bias,
            &self.bn3.scale,
            &self.bn3.shift,
            &self.dense2.weight,
            &self.dense2.bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; 14] {
        [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.bn1.scale,
            &mut self.bn1.shift,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.bn2.scale,
            &mut self.bn2.shift,
            &mut self.dense1.weight,
            &mut self.dense1.bias,
            &mut self.bn3.scale,
            &mut self.bn3.shift,
            &mut self.dense2.weight,
            &mut self.dense2.bias,
        ]
    }

    pub fn running_stats(&self) -> [&Tensor<T>; 6] {
        [
            &self.bn1.running_mean,
            &self.bn1.running_var,
            &self.bn2.running_mean,
            &self.bn2.running_var,
            &self.bn3.running_mean,
            &self.bn3.running_var,
        ]
    }

    pub fn running_stats_mut(&mut self) -> [&mut Tensor<T>; 6] {
        [
            &mut self.bn1.running_mean,
            &mut self.bn1.running_var,
            &mut self.bn2.running_mean,
            &mut self.bn2.running_var,
            &mut self.bn3.running_mean,
            &mut self.bn3.running_var,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let bn = |b: &BatchNorm<T>| BatchNorm {
            scale: b.scale.cast(),
            shift: b.shift.cast(),
            running_mean: b.running_mean.cast(),
            running_var: b.running_var.cast(),
            momentum: b.momentum,
            eps: b.eps,
        };
        Network {
            conv1: self.conv1.cast(),
            bn1: bn(&self.bn1),
            conv2: self.conv2.cast(),
            bn2: bn(&self.bn2),
            dense1: self.dense1.cast(),
            bn3: bn(&self.bn3),
            dense2: self.dense2.cast(),
        }
    }

    fn check_input(input: &Tensor<T>) -> Result<usize> {
        match input.shape() {
            &[b, 1, INPUT_SIZE, INPUT_SIZE] if b > 0 => Ok(b),
            s => Err(Error::Shape(format!(
                "network input must be [B,1,{INPUT_SIZE},{INPUT_SIZE}], got {s:?}"
            ))),
        }
    }

    /// Train-mode forward pass over a batch `[B, 1, 96, 96]`.
    ///
    /// Batch statistics are returned in the cache; the network itself is not
    /// modified (see [`Network::update_running_stats`]).
    pub fn forward_train(&self, input: &Tensor<T>) -> Result<ForwardCache<T>> {
        let b = Self::check_input(input)?;
        if b < 2 {
            return Err(Error::InvalidInput(
                "train-mode forward needs a batch of at least 2".into(),
            ));
        }
        let (relu1, pooled1, argmax1) = conv_relu_pool(input.data(), b, &CONV1, &self.conv1);
        let relu1 = Tensor::from_vec(&[b, CONV_CHANNELS, CONV1_OUT, CONV1_OUT], relu1)?;
        let pooled1 = Tensor::from_vec(&[b, CONV_CHANNELS, POOL1_OUT, POOL1_OUT], pooled1)?;
        let (norm1, bn1) = self.bn1.forward(&pooled1, Mode::Train)?;

        let (relu2, pooled2, argmax2) = conv_relu_pool(norm1.data(), b, &CONV2, &self.conv2);
        let relu2 = Tensor::from_vec(&[b, CONV_CHANNELS, CONV2_OUT, CONV2_OUT], relu2)?;
        let pooled2 = Tensor::from_vec(&[b, CONV_CHANNELS, POOL2_OUT, POOL2_OUT], pooled2)?;
        let (norm2, bn2) = self.bn2.forward(&pooled2, Mode::Train)?;
        let norm2 = norm2.reshape(&[b, FLAT_FEATURES])?;

        let mut relu3 = dense_batch(&norm2, &self.dense1.weight, &self.dense1.bias)?;
        relu_inplace(relu3.data_mut());
        let (norm3, bn3) = self.bn3.forward(&relu3, Mode::Train)?;

        let logits = dense_batch(&norm3, &self.dense2.weight, &self.dense2.bias)?;
        let output = logits.data().iter().map(|&z| sigmoid_scalar(z)).collect();

        Ok(ForwardCache {
            batch: b,
            input: input.clone(),
            relu1,
            argmax1,
            bn1,
            norm1,
            relu2,
            argmax2,
            bn2,
            norm2,
            relu3,
            bn3,
            norm3,
            output,
        })
    }

    /// Gradients of a scalar loss given `d loss / d output` per sample.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_output: &[T]) -> Result<Gradients<T>> {
        let b = cache.batch;
        if grad_output.len() != b {
            return Err(Error::Shape(format!(
                "backward: {} output gradients for batch of {b}",
                grad_output.len()
            )));
        }
        let g_logits: Vec<T> = grad_output
            .iter()
            .zip(&cache.output)
            .map(|(&g, &y)| g * y * (T::one() - y))
            .collect();
        let g_logits = Tensor::from_vec(&[b, 1], g_logits)?;
        let d2 = dense_backward(&cache.norm3, &self.dense2.weight, &g_logits)?;

        let (mut g_relu3, g_bn3_scale, g_bn3_shift) = self.bn3.backward(&cache.bn3, &d2.input)?;
        relu_backward_inplace(cache.relu3.data(), g_relu3.data_mut());
        let d1 = dense_backward(&cache.norm2, &self.dense1.weight, &g_relu3)?;

        let g_norm2 = d1
            .input
            .reshape(&[b, CONV_CHANNELS, POOL2_OUT, POOL2_OUT])?;
        let (g_pool2, g_bn2_scale, g_bn2_shift) = self.bn2.backward(&cache.bn2, &g_norm2)?;
        let (g_norm1, g_conv2_w, g_conv2_b) = conv_relu_pool_backward(
            cache.norm1.data(),
            cache.relu2.data(),
            &cache.argmax2,
            g_pool2.data(),
            b,
            &CONV2,
            &self.conv2,
            true,
        );
        let g_norm1 = Tensor::from_vec(&[b, CONV_CHANNELS, POOL1_OUT, POOL1_OUT], g_norm1)?;
        let (g_pool1, g_bn1_scale, g_bn1_shift) = self.bn1.backward(&cache.bn1, &g_norm1)?;
        let (_, g_conv1_w, g_conv1_b) = conv_relu_pool_backward(
            cache.input.data(),
            cache.relu1.data(),
            &cache.argmax1,
            g_pool1.data(),
            b,
            &CONV1,
            &self.conv1,
            false,
        );

        Ok(Gradients(vec![
            Tensor::from_vec(self.conv1.weight.shape(), g_conv1_w)?,
            Tensor::from_vec(&[CONV_CHANNELS], g_conv1_b)?,
            g_bn1_scale,
            g_bn1_shift,
            Tensor::from_vec(self.conv2.weight.shape(), g_conv2_w)?,
            Tensor::from_vec(&[CONV_CHANNELS], g_conv2_b)?,
            g_bn2_scale,
            g_bn2_shift,
            d1.weights,
            d1.bias,
            g_bn3_scale,
            g_bn3_shift,
            d2.weights,
            d2.bias,
        ]))
    }

    /// Folds the batch statistics of a train-mode pass into the running estimates.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        self.bn1.update_running(&cache.bn1);
        self.bn2.update_running(&cache.bn2);
        self.bn3.update_running(&cache.bn3);
    }

    /// Train-mode MSE of a batch, without touching running statistics.
    pub fn batch_loss(&self, input: &Tensor<T>, targets: &[T]) -> Result<T> {
        let cache = self.forward_train(input)?;
        mse_loss(cache.output(), targets)
    }

    /// Loss and gradients of one train-mode batch.
    pub fn loss_and_gradients(
        &self,
        input: &Tensor<T>,
        targets: &[T],
    ) -> Result<(T, Gradients<T>, ForwardCache<T>)> {
        let cache = self.forward_train(input)?;
        let loss = mse_loss(cache.output(), targets)?;
        let g = mse_backward(cache.output(), targets)?;
        let grads = self.backward(&cache, &g)?;
        Ok((loss, grads, cache))
    }

    /// Applies one ADAM update to every trainable tensor.
    pub fn apply_gradients(
        &mut self,
        grads: &Gradients<T>,
        moments: &mut [Moments<T>],
        cfg: &AdamConfig,
        step: u64,
    ) -> Result<()> {
        if grads.0.len() != PARAM_NAMES.len() || moments.len() != PARAM_NAMES.len() {
            return Err(Error::Shape("gradient/moment list length mismatch".into()));
        }
        for ((p, g), m) in self
            .params_mut()
            .into_iter()
            .zip(&grads.0)
            .zip(moments.iter_mut())
        {
            adam_step(p, g, m, cfg, step)?;
        }
        Ok(())
    }

    pub fn zero_moments(&self) -> Vec<Moments<T>> {
        self.params()
            .iter()
            .map(|p| Moments::zeros_like(p))
            .collect()
    }

    /// Infer-mode objectness for each crop of `[B, 1, 96, 96]`.
    ///
    /// Samples are scored independently, so a crop's score does not depend
    /// on the rest of the batch.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Vec<T>> {
        Self::check_input(input)?;
        Ok(input
            .data()
            .par_chunks_exact(INPUT_SIZE * INPUT_SIZE)
            .with_min_len(SAMPLES_PER_TASK)
            .map_init(Vec::new, |scratch, x| self.predict_one(x, scratch))
            .collect())
    }

    fn predict_one(&self, x: &[T], scratch: &mut Vec<T>) -> T {
        let mut a1 = vec![T::zero(); CONV1.out_len()];
        conv_forward_slice(
            x,
            &CONV1,
            self.conv1.weight.data(),
            self.conv1.bias.data(),
            &mut a1,
            scratch,
        );
        relu_inplace(&mut a1);
        let mut p1 = vec![T::zero(); CONV_CHANNELS * POOL1_OUT * POOL1_OUT];
        let mut idx = vec![0u32; p1.len()];
        maxpool_slice(&a1, CONV_CHANNELS, CONV1_OUT, CONV1_OUT, &mut p1, &mut idx);
        bn_infer_inplace(&self.bn1, &mut p1);

        let mut a2 = vec![T::zero(); CONV2.out_len()];
        conv_forward_slice(
            &p1,
            &CONV2,
            self.conv2.weight.data(),
            self.conv2.bias.data(),
            &mut a2,
            scratch,
        );
        relu_inplace(&mut a2);
        let mut p2 = vec![T::zero(); FLAT_FEATURES];
        let mut idx = vec![0u32; p2.len()];
        maxpool_slice(&a2, CONV_CHANNELS, CONV2_OUT, CONV2_OUT, &mut p2, &mut idx);
        bn_infer_inplace(&self.bn2, &mut p2);

        let mut h = self.dense1.bias.data().to_vec();
        gemm(
            1,
            FLAT_FEATURES,
            HIDDEN_UNITS,
            &p2,
            Op::N,
            self.dense1.weight.data(),
            Op::T,
            T::one(),
            &mut h,
        );
        relu_inplace(&mut h);
        bn_infer_inplace(&self.bn3, &mut h);

        let z = self.dense2.bias.data()[0]
            + h.iter()
                .zip(self.dense2.weight.data())
                .fold(T::zero(), |acc, (&a, &w)| acc + a * w);
        sigmoid_scalar(z)
    }

    /// One optimizer step on a batch; returns the batch loss.
    pub fn train_step(
        &mut self,
        input: &Tensor<T>,
        targets: &[T],
        moments: &mut [Moments<T>],
        cfg: &AdamConfig,
        step: u64,
    ) -> Result<T> {
        let (loss, grads, cache) = self.loss_and_gradients(input, targets)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training loss at step {step}"
            )));
        }
        self.update_running_stats(&cache);
        self.apply_gradients(&grads, moments, cfg, step)?;
        Ok(loss)
    }
}

/// Same arithmetic as [`BatchNorm::forward`] in infer mode, on one `[C, S]` sample.
fn bn_infer_inplace<T: Scalar>(bn: &BatchNorm<T>, x: &mut [T]) {
    let c = bn.channels();
    let s = x.len() / c;
    let eps = T::from_f64_lossy(bn.eps);
    for ch in 0..c {
        let inv_std = T::one() / (bn.running_var.data()[ch] + eps).sqrt();
        let mean = bn.running_mean.data()[ch];
        let (g, sh) = (bn.scale.data()[ch], bn.shift.data()[ch]);
        for v in &mut x[ch * s..(ch + 1) * s] {
            *v = g * ((*v - mean) * inv_std) + sh;
        }
    }
}

/// Lower bound on samples per parallel task, so that im2col scratch
/// buffers are reused rather than reallocated per sample.
const SAMPLES_PER_TASK: usize = 4;

/// Conv → ReLU → MaxPool for every sample of a batch.
/// Returns (ReLU output, pooled output, pooling argmax).
fn conv_relu_pool<T: Scalar>(
    input: &[T],
    b: usize,
    d: &ConvDims,
    layer: &Affine<T>,
) -> (Vec<T>, Vec<T>, Vec<u32>) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let pool_len = d.cout * (oh / 2) * (ow / 2);
    let mut relu = vec![T::zero(); b * d.out_len()];
    let mut pooled = vec![T::zero(); b * pool_len];
    let mut argmax = vec![0u32; b * pool_len];
    relu.par_chunks_exact_mut(d.out_len())
        .zip(pooled.par_chunks_exact_mut(pool_len))
        .zip(argmax.par_chunks_exact_mut(pool_len))
        .zip(input.par_chunks_exact(d.in_len()))
        .with_min_len(SAMPLES_PER_TASK)
        .for_each_init(Vec::new, |scratch, (((r, p), a), x)| {
            conv_forward_slice(x, d, layer.weight.data(), layer.bias.data(), r, scratch);
            relu_inplace(r);
            maxpool_slice(r, d.cout, oh, ow, p, a);
        });
    (relu, pooled, argmax)
}

/// Backward through MaxPool → ReLU → Conv for every sample.
/// Weight gradients are summed over samples in batch order.
#[allow(clippy::too_many_arguments)]
fn conv_relu_pool_backward<T: Scalar>(
    input: &[T],
    relu: &[T],
    argmax: &[u32],
    grad_pooled: &[T],
    b: usize,
    d: &ConvDims,
    layer: &Affine<T>,
    want_input_grad: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let pool_len = d.cout * (d.out_h() / 2) * (d.out_w() / 2);
    let k_len = layer.weight.len();
    let per_sample: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..b)
        .into_par_iter()
        .with_min_len(SAMPLES_PER_TASK)
        .map_init(Vec::new, |scratch, i| {
            let mut g_act = vec![T::zero(); d.out_len()];
            maxpool_backward_slice(
                &grad_pooled[i * pool_len..(i + 1) * pool_len],
                &argmax[i * pool_len..(i + 1) * pool_len],
                &mut g_act,
            );
            relu_backward_inplace(&relu[i * d.out_len()..(i + 1) * d.out_len()], &mut g_act);
            let mut g_in = if want_input_grad {
                vec![T::zero(); d.in_len()]
            } else {
                Vec::new()
            };
            let mut g_k = vec![T::zero(); k_len];
            let mut g_b = vec![T::zero(); d.cout];
            conv_backward_slice(
                &input[i * d.in_len()..(i + 1) * d.in_len()],
                d,
                layer.weight.data(),
                &g_act,
                want_input_grad.then_some(g_in.as_mut_slice()),
                &mut g_k,
                &mut g_b,
                scratch,
            );
            (g_in, g_k, g_b)
        })
        .collect();

    let mut g_input = Vec::with_capacity(if want_input_grad { b * d.in_len() } else { 0 });
    let mut g_k = vec![T::zero(); k_len];
    let mut g_b = vec![T::zero(); d.cout];
    for (gi, gk, gb) in per_sample {
        g_input.extend_from_slice(&gi);
        g_k.iter_mut().zip(&gk).for_each(|(a, &v)| *a = *a + v);
        g_b.iter_mut().zip(&gb).for_each(|(a, &v)| *a = *a + v);
    }
    (g_input, g_k, g_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_matches_layer_sum() {
        let net = Network::<f32>::init(0);
        let by_layer = [
            32 * 25 + 32,
            32 * 32 * 25 + 32,
            96 * FLAT_FEATURES + 96,
            96 + 1,
            2 * (32 + 32 + 96),
        ];
        assert_eq!(by_layer, [832, 25_632, 1_354_848, 97, 320]);
        assert_eq!(by_layer.iter().sum::<usize>(), PARAMETER_COUNT);
        assert_eq!(net.parameter_count(), PARAMETER_COUNT);
        assert_eq!(FLAT_FEATURES, 14_112);
    }

    #[test]
    fn init_is_seeded() {
        let a = Network::<f32>::init(3);
        let b = Network::<f32>::init(3);
        let c = Network::<f32>::init(4);
        assert_eq!(a, b);
        assert_ne!(a.conv1.weight, c.conv1.weight);
    }

    #[test]
    fn init_respects_bounds() {
        let net = Network::<f32>::init(11);
        for (name, bound) in init_bounds() {
            let idx = PARAM_NAMES.iter().position(|n| *n == name).unwrap();
            let t = net.params()[idx];
            let bound = bound as f32;
            assert!(t.data().iter().all(|v| v.abs() <= bound), "{name}");
        }
        assert!(net.conv1.bias.data().iter().all(|&v| v == 0.0));
        assert!(net.bn2.scale.data().iter().all(|&v| v == 1.0));
        assert!(net.bn3.shift.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_shape_chain() {
        let net = Network::<f32>::init(1);
        let x = Tensor::filled(&[2, 1, 96, 96], 0.25f32);
        let cache = net.forward_train(&x).unwrap();
        let trace = cache.shape_trace();
        assert_eq!(
            trace,
            vec![
                vec![32, 92, 92],
                vec![32, 46, 46],
                vec![32, 42, 42],
                vec![32, 21, 21],
                vec![14_112],
                vec![96],
                vec![1],
            ]
        );
    }

    #[test]
    fn predict_rejects_wrong_shape() {
        let net = Network::<f32>::init(1);
        assert!(net.predict(&Tensor::zeros(&[1, 1, 64, 64])).is_err());
        assert!(net.forward_train(&Tensor::zeros(&[1, 1, 96, 96])).is_err());
    }
}
