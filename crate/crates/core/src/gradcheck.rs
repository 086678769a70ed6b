//! Central finite-difference checks of the analytic parameter gradients of a
//! whole graph under softmax cross-entropy, in `f64`.
//!
//! Coordinates whose `±step` perturbation flips a ReLU or moves a pooling
//! argmax are skipped and counted: the loss is not differentiable across
//! those boundaries, so a finite difference there measures the kink rather
//! than the gradient.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::metrics::cross_entropy;
use crate::net::{Gradients, Graph};
use crate::tensor::Tensor4;

/// Denominator floor of the relative error. Central differences of an
/// `O(1)` loss with step `1e-4` resolve gradients only to about `1e-12`
/// absolute, so entries of order `1e-9` would otherwise report spurious
/// relative errors; with the floor they are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many randomly chosen coordinates per tensor.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-4,
            tolerance: 1e-4,
            max_coords: None,
            seed: 0,
        }
    }
}

/// `|a - n| / max(|a| + |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerCheck {
    pub layer: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub layers: Vec<LayerCheck>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.layers.iter().map(|l| l.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.max_rel_error < self.tolerance) && self.layers.iter().any(|l| l.checked > 0)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for l in &self.layers {
            writeln!(
                out,
                "{:<10} checked {:>6}  skipped {:>4}  max rel error {:.3e}  {}",
                l.layer,
                l.checked,
                l.skipped,
                l.max_rel_error,
                if l.max_rel_error < self.tolerance { "ok" } else { "FAIL" }
            )
            .expect("writing to a String cannot fail");
        }
        writeln!(
            out,
            "{}: max rel error {:.3e} (tolerance {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error(),
            self.tolerance
        )
        .expect("writing to a String cannot fail");
        out
    }
}

/// Mean cross-entropy of the graph's prediction and its analytic gradients.
pub fn loss_and_gradients(graph: &mut Graph<f64>, input: &Tensor4<f64>, targets: &Tensor4<f64>) -> Result<(f64, Gradients<f64>)> {
    let probs = graph.forward(input)?;
    let (loss, grad) = cross_entropy(&probs, targets)?;
    Ok((loss, graph.backward(input, &grad)?))
}

/// Gives every bias a small random value so that no pre-activation sits
/// exactly on a ReLU kink, as it can with zero biases and zero inputs.
pub fn jitter_biases(graph: &mut Graph<f64>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in graph.layers_mut() {
        for b in &mut layer.params.bias {
            *b = scale * (rng.random::<f64>() * 2.0 - 1.0);
        }
    }
}

/// Compares `analytic` (shaped like the graph's parameters) against central
/// differences of the loss.
pub fn check_against(
    graph: &mut Graph<f64>,
    input: &Tensor4<f64>,
    targets: &Tensor4<f64>,
    analytic: &Gradients<f64>,
    options: &GradcheckOptions,
) -> Result<GradcheckReport> {
    graph.forward(input)?;
    let base = graph.activation_pattern();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut layers = Vec::with_capacity(graph.layers().len());
    for li in 0..graph.layers().len() {
        let mut check = LayerCheck {
            layer: graph.layers()[li].name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
        };
        for part in 0..2 {
            let len = if part == 0 {
                graph.layers()[li].params.kernel.len()
            } else {
                graph.layers()[li].params.bias.len()
            };
            let mut coords: Vec<usize> = match options.max_coords {
                Some(m) if m < len => sample(&mut rng, len, m).into_vec(),
                _ => (0..len).collect(),
            };
            coords.sort_unstable();
            for i in coords {
                let mut eval = |delta: f64| -> Result<(f64, bool)> {
                    let params = &mut graph.layers_mut()[li].params;
                    let slot = if part == 0 { &mut params.kernel.data_mut()[i] } else { &mut params.bias[i] };
                    let original = *slot;
                    *slot = original + delta;
                    let probs = graph.forward(input);
                    let pattern = graph.activation_pattern();
                    let params = &mut graph.layers_mut()[li].params;
                    let slot = if part == 0 { &mut params.kernel.data_mut()[i] } else { &mut params.bias[i] };
                    *slot = original;
                    let (loss, _) = cross_entropy(&probs?, targets)?;
                    Ok((loss, pattern == base))
                };
                let (plus, same_plus) = eval(options.step)?;
                let (minus, same_minus) = eval(-options.step)?;
                if !(same_plus && same_minus) {
                    check.skipped += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * options.step);
                let a = if part == 0 {
                    analytic[li].kernel.data()[i]
                } else {
                    analytic[li].bias[i]
                };
                check.max_rel_error = check.max_rel_error.max(relative_error(a, numeric));
                check.checked += 1;
            }
        }
        layers.push(check);
    }
    Ok(GradcheckReport {
        tolerance: options.tolerance,
        layers,
    })
}

/// Checks the graph's own backward pass.
pub fn gradcheck(
    graph: &mut Graph<f64>,
    input: &Tensor4<f64>,
    targets: &Tensor4<f64>,
    options: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let (_, analytic) = loss_and_gradients(graph, input, targets)?;
    check_against(graph, input, targets, &analytic, options)
}
