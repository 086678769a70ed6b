use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor4};

pub fn relu<T: Real>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `upstream` where the layer's output is positive. The derivative at
/// exactly zero is taken as zero.
pub fn relu_backward<T: Real>(output: &Tensor4<T>, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
    if output.shape() != upstream.shape() {
        return Err(shape_err!("relu backward: {} vs {}", output.shape(), upstream.shape()));
    }
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(output.shape(), data)
}

/// Per-pixel softmax over the channel axis, with max subtraction.
pub fn softmax_channels<T: Real>(logits: &Tensor4<T>) -> Result<Tensor4<T>> {
    let c = logits.shape().channels;
    let mut out = logits.clone();
    for (p, px) in out.data_mut().chunks_exact_mut(c).enumerate() {
        if let Some(j) = px.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "softmax logit at flat index {} is {}",
                p * c + j,
                px[j]
            )));
        }
        let max = px.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in px.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in px.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of the softmax given its output `probs`:
/// `dz = p * (g - <p, g>)` per pixel.
pub fn softmax_backward<T: Real>(probs: &Tensor4<T>, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
    if probs.shape() != upstream.shape() {
        return Err(shape_err!("softmax backward: {} vs {}", probs.shape(), upstream.shape()));
    }
    let c = probs.shape().channels;
    let mut out = upstream.clone();
    for (px, p) in out.data_mut().chunks_exact_mut(c).zip(probs.data().chunks_exact(c)) {
        let dot: T = px.iter().zip(p).map(|(&g, &q)| g * q).sum();
        for (g, &q) in px.iter_mut().zip(p) {
            *g = q * (*g - dot);
        }
    }
    Ok(out)
}
