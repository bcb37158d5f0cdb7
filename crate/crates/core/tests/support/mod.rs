//! Independent oracles shared by the integration tests and the acceptance
//! harness: pixel-counting IoU, brute-force recall and finite-difference
//! gradient checks.

#![allow(dead_code)]

use fls_core::geometry::BoundingBox;
use fls_core::neuralnet::layers::{
    conv2d, conv2d_backward, dense_backward, dense_batch, maxpool2, maxpool2_backward,
    mse_backward, mse_loss, relu, relu_backward, sigmoid, sigmoid_backward,
};
use fls_core::neuralnet::{BatchNorm, Mode, Network, Tensor, INPUT_SIZE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// IoU by enumerating member pixels of the two half-open boxes.
pub fn pixel_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let x0 = a.x.min(b.x);
    let y0 = a.y.min(b.y);
    let x1 = (a.x + a.w as i32).max(b.x + b.w as i32);
    let y1 = (a.y + a.h as i32).max(b.y + b.h as i32);
    let inside = |r: &BoundingBox, x: i32, y: i32| {
        x >= r.x && x < r.x + r.w as i32 && y >= r.y && y < r.y + r.h as i32
    };
    let (mut inter, mut union) = (0u64, 0u64);
    for y in y0..y1 {
        for x in x0..x1 {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    inter as f64 / union as f64
}

pub fn random_box(rng: &mut impl Rng, canvas: i32) -> BoundingBox {
    let x = rng.random_range(0..canvas - 1);
    let y = rng.random_range(0..canvas - 1);
    BoundingBox {
        x,
        y,
        w: rng.random_range(1..=(canvas - x) as u32),
        h: rng.random_range(1..=(canvas - y) as u32),
    }
}

/// Matched ground-truth count over every (proposal, box) pair.
pub fn brute_force_matches(
    proposals: &[Vec<BoundingBox>],
    ground_truth: &[Vec<BoundingBox>],
    min_iou: f64,
) -> (usize, usize) {
    let mut matched = 0;
    let mut total = 0;
    for (props, gts) in proposals.iter().zip(ground_truth) {
        for g in gts {
            total += 1;
            let mut hit = false;
            for p in props {
                if pixel_iou(p, g) >= min_iou {
                    hit = true;
                }
            }
            matched += hit as usize;
        }
    }
    (matched, total)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-7 {
        // both vanish; judge the absolute gap instead
        (analytic - numeric).abs() / 1e-7
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn rand_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, so a ReLU never sits at its kink.
fn rand_signed(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Largest relative error between `analytic` and central differences of
/// `f` with respect to `x`.
fn check_against_fd(
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    h: f64,
    mut f: impl FnMut(&Tensor<f64>) -> f64,
) -> f64 {
    assert_eq!(x.shape(), analytic.shape());
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// `Σ w·y`, the scalar used to probe a layer with upstream gradient `w`.
fn dot(w: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    w.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

const H: f64 = 1e-6;

pub fn conv_instance(rng: &mut impl Rng) -> f64 {
    let cin = rng.random_range(1..=3);
    let cout = rng.random_range(1..=3);
    let kh = rng.random_range(1..=3);
    let kw = rng.random_range(1..=3);
    let h = rng.random_range(kh..=kh + 5);
    let w = rng.random_range(kw..=kw + 5);
    let x = rand_tensor(rng, &[cin, h, w], -1.0, 1.0);
    let k = rand_tensor(rng, &[cout, cin, kh, kw], -1.0, 1.0);
    let b = rand_tensor(rng, &[cout], -1.0, 1.0);
    let up = rand_tensor(rng, &[cout, h - kh + 1, w - kw + 1], -1.0, 1.0);
    let g = conv2d_backward(&x, &k, &b, &up).unwrap();
    let ex = check_against_fd(&x, &g.input, H, |x| dot(&up, &conv2d(x, &k, &b).unwrap()));
    let ek = check_against_fd(&k, &g.kernels, H, |k| dot(&up, &conv2d(&x, k, &b).unwrap()));
    let eb = check_against_fd(&b, &g.bias, H, |b| dot(&up, &conv2d(&x, &k, b).unwrap()));
    ex.max(ek).max(eb)
}

pub fn maxpool_instance(rng: &mut impl Rng) -> f64 {
    let c = rng.random_range(1..=3);
    let h = 2 * rng.random_range(1..=4);
    let w = 2 * rng.random_range(1..=4);
    // distinct values spaced far beyond the probe step keep the argmax fixed
    let n = c * h * w;
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    let x = Tensor::from_vec(&[c, h, w], vals).unwrap();
    let up = rand_tensor(rng, &[c, h / 2, w / 2], -1.0, 1.0);
    let pooled = maxpool2(&x).unwrap();
    let g = maxpool2_backward(&up, &pooled.argmax, x.shape()).unwrap();
    check_against_fd(&x, &g, H, |x| dot(&up, &maxpool2(x).unwrap().output))
}

pub fn dense_instance(rng: &mut impl Rng) -> f64 {
    let b = rng.random_range(1..=4);
    let n = rng.random_range(1..=8);
    let m = rng.random_range(1..=5);
    let x = rand_tensor(rng, &[b, n], -1.0, 1.0);
    let wt = rand_tensor(rng, &[m, n], -1.0, 1.0);
    let bias = rand_tensor(rng, &[m], -1.0, 1.0);
    let up = rand_tensor(rng, &[b, m], -1.0, 1.0);
    let g = dense_backward(&x, &wt, &up).unwrap();
    let ex = check_against_fd(&x, &g.input, H, |x| {
        dot(&up, &dense_batch(x, &wt, &bias).unwrap())
    });
    let ew = check_against_fd(&wt, &g.weights, H, |w| {
        dot(&up, &dense_batch(&x, w, &bias).unwrap())
    });
    let eb = check_against_fd(&bias, &g.bias, H, |bs| {
        dot(&up, &dense_batch(&x, &wt, bs).unwrap())
    });
    ex.max(ew).max(eb)
}

fn random_bn(rng: &mut impl Rng, c: usize) -> BatchNorm<f64> {
    let mut bn = BatchNorm::new(c);
    bn.scale = rand_tensor(rng, &[c], 0.5, 1.5);
    bn.shift = rand_tensor(rng, &[c], -0.5, 0.5);
    bn.running_mean = rand_tensor(rng, &[c], -0.5, 0.5);
    bn.running_var = rand_tensor(rng, &[c], 0.5, 2.0);
    bn
}

pub fn batchnorm_instance(rng: &mut impl Rng, mode: Mode) -> f64 {
    let b = rng.random_range(2..=5);
    let c = rng.random_range(1..=3);
    let shape: Vec<usize> = if rng.random::<bool>() {
        vec![b, c]
    } else {
        vec![b, c, rng.random_range(1..=3), rng.random_range(1..=3)]
    };
    let mut bn = random_bn(rng, c);
    let x = rand_tensor(rng, &shape, -2.0, 2.0);
    let up = rand_tensor(rng, &shape, -1.0, 1.0);
    let (_, cache) = bn.forward(&x, mode).unwrap();
    let (gx, gs, gb) = bn.backward(&cache, &up).unwrap();
    let ex = check_against_fd(&x, &gx, H, |x| dot(&up, &bn.forward(x, mode).unwrap().0));
    let scale = bn.scale.clone();
    let es = check_against_fd(&scale, &gs, H, |s| {
        bn.scale = s.clone();
        dot(&up, &bn.forward(&x, mode).unwrap().0)
    });
    bn.scale = scale;
    let shift = bn.shift.clone();
    let eb = check_against_fd(&shift, &gb, H, |s| {
        bn.shift = s.clone();
        dot(&up, &bn.forward(&x, mode).unwrap().0)
    });
    ex.max(es).max(eb)
}

pub fn relu_instance(rng: &mut impl Rng) -> f64 {
    let n = rng.random_range(1..=20);
    let x = rand_signed(rng, &[n]);
    let up = rand_tensor(rng, &[n], -1.0, 1.0);
    let g = relu_backward(&relu(&x), &up);
    check_against_fd(&x, &g, H, |x| dot(&up, &relu(x)))
}

pub fn sigmoid_instance(rng: &mut impl Rng) -> f64 {
    let n = rng.random_range(1..=20);
    let x = rand_tensor(rng, &[n], -6.0, 6.0);
    let up = rand_tensor(rng, &[n], -1.0, 1.0);
    let g = sigmoid_backward(&sigmoid(&x), &up);
    check_against_fd(&x, &g, H, |x| dot(&up, &sigmoid(x)))
}

pub fn mse_instance(rng: &mut impl Rng) -> f64 {
    let n = rng.random_range(1..=20);
    let p = rand_tensor(rng, &[n], 0.0, 1.0);
    let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let g = Tensor::from_vec(&[n], mse_backward(p.data(), &t).unwrap()).unwrap();
    check_against_fd(&p, &g, H, |p| mse_loss(p.data(), &t).unwrap())
}

pub type LayerCheck = (&'static str, fn(&mut ChaCha8Rng) -> f64);

pub const LAYER_CHECKS: [LayerCheck; 8] = [
    ("conv2d", conv_instance),
    ("maxpool2", maxpool_instance),
    ("dense", dense_instance),
    ("batchnorm/train", |r| batchnorm_instance(r, Mode::Train)),
    ("batchnorm/infer", |r| batchnorm_instance(r, Mode::Infer)),
    ("relu", relu_instance),
    ("sigmoid", sigmoid_instance),
    ("mse", mse_instance),
];

/// Worst relative error per layer over `instances` random instances each.
pub fn layer_gradient_errors(seed: u64, instances: usize) -> Vec<(&'static str, f64)> {
    LAYER_CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, check))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let worst = (0..instances).map(|_| check(&mut rng)).fold(0.0, f64::max);
            (*name, worst)
        })
        .collect()
}

/// Whole-network check on a 4-sample batch: `per_tensor` random entries of
/// every trainable tensor are compared with central differences of the
/// batch loss. Returns the worst relative error.
/// Central difference at the largest step where it agrees with the one at
/// twice that step. A weight in an early layer moves thousands of
/// pre-activations, so a ReLU or max-pool switch can fall inside a fixed ±h;
/// shrinking h steps off the kink. Falls back to the default step.
fn smooth_central_difference(loss_at: impl Fn(f64) -> f64) -> f64 {
    let loss = loss_at(0.0).abs();
    let central = |h: f64| (loss_at(h) - loss_at(-h)) / (2.0 * h);
    for h in [H, 1e-7, 1e-8] {
        let (d, d2) = (central(h), central(2.0 * h));
        let roundoff = 1e-15 * loss / h;
        if (d - d2).abs() <= 1e-5 * d.abs().max(d2.abs()) + roundoff {
            return d;
        }
    }
    central(H)
}

pub fn network_gradient_error(seed: u64, per_tensor: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<f64>::init(seed);
    // move batch norm away from the identity so its parameters matter
    for bn in [&mut net.bn1, &mut net.bn2, &mut net.bn3] {
        let c = bn.channels();
        bn.scale = rand_tensor(&mut rng, &[c], 0.5, 1.5);
        bn.shift = rand_tensor(&mut rng, &[c], -0.2, 0.2);
    }
    let batch = 4;
    let x = rand_tensor(&mut rng, &[batch, 1, INPUT_SIZE, INPUT_SIZE], 0.0, 1.0);
    let t: Vec<f64> = (0..batch).map(|_| rng.random_range(0.0..1.0)).collect();
    let (_, grads, _) = net.loss_and_gradients(&x, &t).unwrap();

    let mut worst = 0.0f64;
    for (p, g) in grads.0.iter().enumerate() {
        for _ in 0..per_tensor {
            let j = rng.random_range(0..g.len());
            let loss_at = |delta: f64| {
                let mut probe = net.clone();
                let v = &mut probe.params_mut()[p].data_mut()[j];
                *v += delta;
                probe.batch_loss(&x, &t).unwrap()
            };
            let numeric = smooth_central_difference(loss_at);
            let a = g.data()[j];
            // below ~1e-6 the difference quotient is dominated by roundoff
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}
