//! Independent reference implementations shared by the integration suites.
//! Everything here is written as plainly as possible — nested loops, no
//! im2col, no GEMM — so that it can serve as an oracle for the fast paths.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segmicro::layers::ConvParams;
use segmicro::{LabelMap, Shape4, Tensor4};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape4) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

pub fn random_params(rng: &mut ChaCha8Rng, k: usize, dim2: usize, dim3: usize, bias_len: usize) -> ConvParams<f64> {
    ConvParams {
        kernel: random_tensor(rng, Shape4::new(k, k, dim2, dim3)),
        bias: (0..bias_len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

/// `max |a - b| / max(max |b|, 1)`.
pub fn rel_error(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = b.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.max_abs_diff(b) / scale
}

/// Stride-1 zero-padded cross-correlation, kernel `(k, k, cin, cout)`,
/// padding `(k - 1) / 2` before and the remainder after.
pub fn brute_conv(input: &Tensor4<f64>, params: &ConvParams<f64>) -> Tensor4<f64> {
    let s = input.shape();
    let [k, _, cin, cout] = params.kernel.shape().dims();
    let pad = (k - 1) / 2;
    Tensor4::from_fn(Shape4::new(s.batch, s.height, s.width, cout), |n, y, x, co| {
        let mut acc = params.bias[co];
        for a in 0..k {
            for b in 0..k {
                let (iy, ix) = (y as isize + a as isize - pad as isize, x as isize + b as isize - pad as isize);
                if iy < 0 || ix < 0 || iy >= s.height as isize || ix >= s.width as isize {
                    continue;
                }
                for ci in 0..cin {
                    acc += input.at(n, iy as usize, ix as usize, ci) * params.kernel.at(a, b, ci, co);
                }
            }
        }
        acc
    })
}

/// Transposed convolution via zero stuffing: place input pixel `(i, j)` at
/// `(2i, 2j)` of an otherwise-zero grid, then correlate with the spatially
/// flipped kernel so that output `(y, x)` gathers from stuffed position
/// `(y + p - a, x + p - b)` with `p = max(k - 2, 0) / 2`. Kernel is
/// `(k, k, cout, cin)`.
pub fn zero_stuffed_deconv(input: &Tensor4<f64>, params: &ConvParams<f64>) -> Tensor4<f64> {
    let s = input.shape();
    let [k, _, cout, cin] = params.kernel.shape().dims();
    let p = k.saturating_sub(2) / 2;
    let (sh, sw) = (2 * s.height, 2 * s.width);
    let stuffed = Tensor4::from_fn(Shape4::new(s.batch, sh, sw, cin), |n, y, x, c| {
        if y % 2 == 0 && x % 2 == 0 {
            input.at(n, y / 2, x / 2, c)
        } else {
            0.0
        }
    });
    // flipped kernel: F[a', b'] = K[k-1-a', k-1-b']
    let flipped = Tensor4::from_fn(Shape4::new(k, k, cout, cin), |a, b, co, ci| params.kernel.at(k - 1 - a, k - 1 - b, co, ci));
    Tensor4::from_fn(Shape4::new(s.batch, sh, sw, cout), |n, y, x, co| {
        let mut acc = params.bias[co];
        for a2 in 0..k {
            for b2 in 0..k {
                // stuffed index y + p - a with a = k-1-a2
                let iy = y as isize + p as isize - (k - 1 - a2) as isize;
                let ix = x as isize + p as isize - (k - 1 - b2) as isize;
                if iy < 0 || ix < 0 || iy >= sh as isize || ix >= sw as isize {
                    continue;
                }
                for ci in 0..cin {
                    acc += stuffed.at(n, iy as usize, ix as usize, ci) * flipped.at(a2, b2, co, ci);
                }
            }
        }
        acc
    })
}

/// Numeric vector-Jacobian product `d <upstream, f(x)> / dx` by central
/// differences with step `h`.
pub fn numeric_vjp(f: impl Fn(&Tensor4<f64>) -> Tensor4<f64>, x: &Tensor4<f64>, upstream: &Tensor4<f64>, h: f64) -> Tensor4<f64> {
    let dot = |t: &Tensor4<f64>| t.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum::<f64>();
    let mut grad = Tensor4::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe[i];
        probe.data_mut()[i] = orig + h;
        let plus = dot(&f(&probe));
        probe.data_mut()[i] = orig - h;
        let minus = dot(&f(&probe));
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Element-wise `max |a - n| / max(|a| + |n|, 1e-6)`.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Global confusion tally for one class over aligned label-map pairs.
pub fn tally(preds: &[LabelMap], truths: &[LabelMap], class: u8) -> (u64, u64, u64) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, t) in preds.iter().zip(truths) {
        for (&a, &b) in p.labels.iter().zip(&t.labels) {
            match (a == class, b == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    (tp, fp, fn_)
}

pub fn dice_from_tally((tp, fp, fn_): (u64, u64, u64)) -> f64 {
    if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

pub fn random_labels(rng: &mut ChaCha8Rng, h: usize, w: usize, classes: u8) -> LabelMap {
    LabelMap::new(h, w, (0..h * w).map(|_| rng.random_range(0..classes)).collect()).unwrap()
}

/// Scripted validation-loss driver: returns the learning rate in effect in
/// each epoch and the epoch (1-based) at which a stop was signalled.
pub fn drive_monitor(losses: &[f64], lr0: f64) -> (Vec<f64>, Option<usize>) {
    let config = segmicro::train::TrainConfig::default();
    let mut monitor = segmicro::train::Monitor::new(&config);
    let mut lr = lr0;
    let mut lrs = Vec::new();
    for (i, &l) in losses.iter().enumerate() {
        lrs.push(lr);
        let d = monitor.update(l, lr);
        if let Some(n) = d.new_lr {
            lr = n;
        }
        if d.stop {
            return (lrs, Some(i + 1));
        }
    }
    (lrs, None)
}
