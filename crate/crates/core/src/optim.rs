//! First-order update rules.
//!
//! Each optimizer keeps one set of accumulator buffers per parameter tensor,
//! allocated on the first [`Optimizer::step`]. The learning rate only changes
//! through [`Optimizer::set_lr`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OptimizerKind {
    Sgd,
    SgdNesterov,
    Rmsprop,
    Adagrad,
    Adadelta,
    Adam,
    Adamax,
    Nadam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 8] = [
        OptimizerKind::Sgd,
        OptimizerKind::SgdNesterov,
        OptimizerKind::Rmsprop,
        OptimizerKind::Adagrad,
        OptimizerKind::Adadelta,
        OptimizerKind::Adam,
        OptimizerKind::Adamax,
        OptimizerKind::Nadam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "SGD",
            OptimizerKind::SgdNesterov => "SGD_NESTEROV",
            OptimizerKind::Rmsprop => "RMSPROP",
            OptimizerKind::Adagrad => "ADAGRAD",
            OptimizerKind::Adadelta => "ADADELTA",
            OptimizerKind::Adam => "ADAM",
            OptimizerKind::Adamax => "ADAMAX",
            OptimizerKind::Nadam => "NADAM",
        }
    }

    fn slots(self) -> usize {
        match self {
            OptimizerKind::Sgd => 0,
            OptimizerKind::SgdNesterov | OptimizerKind::Rmsprop | OptimizerKind::Adagrad => 1,
            OptimizerKind::Adadelta
            | OptimizerKind::Adam
            | OptimizerKind::Adamax
            | OptimizerKind::Nadam => 2,
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_uppercase().replace(['-', ' '], "_");
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| config_err!("unknown optimizer {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyperparams {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub momentum: f64,
    pub epsilon: f64,
}

impl OptimizerHyperparams {
    pub fn defaults(kind: OptimizerKind) -> Self {
        let mut h = OptimizerHyperparams {
            kind,
            lr: 0.001,
            rho: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            momentum: 0.0,
            epsilon: 1e-8,
        };
        match kind {
            OptimizerKind::Sgd => h.lr = 0.01,
            OptimizerKind::SgdNesterov => {
                h.lr = 0.01;
                h.momentum = 0.9;
            }
            OptimizerKind::Rmsprop => h.epsilon = 1e-7,
            OptimizerKind::Adagrad => {
                h.lr = 0.01;
                h.epsilon = 1e-7;
            }
            OptimizerKind::Adadelta => {
                h.lr = 1.0;
                h.rho = 0.95;
                h.epsilon = 1e-7;
            }
            OptimizerKind::Adam => {}
            OptimizerKind::Adamax | OptimizerKind::Nadam => h.lr = 0.002,
        }
        h
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err!("lr must be > 0, got {}", self.lr));
        }
        for (name, v) in [
            ("rho", self.rho),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("momentum", self.momentum),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(config_err!("{name} must be in [0, 1), got {v}"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(config_err!("epsilon must be > 0, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// Optional replacements for the per-kind defaults.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl Overrides {
    pub fn lr(lr: f64) -> Self {
        Overrides {
            lr: Some(lr),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    hyper: OptimizerHyperparams,
    lr: f64,
    t: u64,
    // slots[s][p]: accumulator s of parameter tensor p
    slots: Vec<Vec<Vec<T>>>,
}

pub fn make_optimizer<T: Real>(kind: OptimizerKind, overrides: &Overrides) -> Result<Optimizer<T>> {
    let mut h = OptimizerHyperparams::defaults(kind);
    h.lr = overrides.lr.unwrap_or(h.lr);
    h.rho = overrides.rho.unwrap_or(h.rho);
    h.beta1 = overrides.beta1.unwrap_or(h.beta1);
    h.beta2 = overrides.beta2.unwrap_or(h.beta2);
    h.momentum = overrides.momentum.unwrap_or(h.momentum);
    h.epsilon = overrides.epsilon.unwrap_or(h.epsilon);
    h.validate()?;
    Ok(Optimizer {
        hyper: h,
        lr: h.lr,
        t: 0,
        slots: Vec::new(),
    })
}

impl<T: Real> Optimizer<T> {
    pub fn hyperparams(&self) -> &OptimizerHyperparams {
        &self.hyper
    }

    pub fn kind(&self) -> OptimizerKind {
        self.hyper.kind
    }

    pub fn current_lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(config_err!("learning rate must be > 0, got {lr}"));
        }
        self.lr = lr;
        Ok(())
    }

    fn ensure_slots(&mut self, shapes: &[usize]) -> Result<()> {
        if self.slots.is_empty() {
            self.slots = (0..self.hyper.kind.slots())
                .map(|_| shapes.iter().map(|&n| vec![T::zero(); n]).collect())
                .collect();
            return Ok(());
        }
        let have: Vec<usize> = self.slots.first().map(|s| s.iter().map(Vec::len).collect()).unwrap_or_default();
        if self.hyper.kind.slots() > 0 && have != shapes {
            return Err(shape_err!("optimizer state sized for {have:?}, parameters are {shapes:?}"));
        }
        Ok(())
    }

    /// One update of every parameter tensor from its gradient.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape_err!("{} parameter tensors vs {} gradients", params.len(), grads.len()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(shape_err!("parameter {i}: {} values vs {} gradients", p.len(), g.len()));
            }
        }
        let shapes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        self.ensure_slots(&shapes)?;
        self.t += 1;

        let h = self.hyper;
        let c = |v: f64| T::from_f64_lossy(v);
        let lr = c(self.lr);
        let eps = c(h.epsilon);
        let one = T::one();
        let t = self.t as i32;
        let (b1, b2) = (c(h.beta1), c(h.beta2));
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);

        for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            match h.kind {
                OptimizerKind::Sgd => {
                    for (w, &g) in param.iter_mut().zip(grad.iter()) {
                        *w -= lr * g;
                    }
                }
                OptimizerKind::SgdNesterov => {
                    let mu = c(h.momentum);
                    let v = &mut self.slots[0][i];
                    for ((w, &g), v) in param.iter_mut().zip(grad.iter()).zip(v.iter_mut()) {
                        *v = mu * *v - lr * g;
                        *w += mu * *v - lr * g;
                    }
                }
                OptimizerKind::Rmsprop => {
                    let rho = c(h.rho);
                    let a = &mut self.slots[0][i];
                    for ((w, &g), a) in param.iter_mut().zip(grad.iter()).zip(a.iter_mut()) {
                        *a = rho * *a + (one - rho) * g * g;
                        *w -= lr * g / (a.sqrt() + eps);
                    }
                }
                OptimizerKind::Adagrad => {
                    let a = &mut self.slots[0][i];
                    for ((w, &g), a) in param.iter_mut().zip(grad.iter()).zip(a.iter_mut()) {
                        *a += g * g;
                        *w -= lr * g / (a.sqrt() + eps);
                    }
                }
                OptimizerKind::Adadelta => {
                    let rho = c(h.rho);
                    let (sq, delta) = split_two(&mut self.slots, i);
                    for (((w, &g), a), d) in param.iter_mut().zip(grad.iter()).zip(sq).zip(delta) {
                        *a = rho * *a + (one - rho) * g * g;
                        let update = g * (*d + eps).sqrt() / (*a + eps).sqrt();
                        *d = rho * *d + (one - rho) * update * update;
                        *w -= lr * update;
                    }
                }
                OptimizerKind::Adam => {
                    let (bc1, bc2) = (c(bc1), c(bc2));
                    let (m, v) = split_two(&mut self.slots, i);
                    for (((w, &g), m), v) in param.iter_mut().zip(grad.iter()).zip(m).zip(v) {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    }
                }
                OptimizerKind::Adamax => {
                    let step = lr / c(bc1);
                    let (m, u) = split_two(&mut self.slots, i);
                    for (((w, &g), m), u) in param.iter_mut().zip(grad.iter()).zip(m).zip(u) {
                        *m = b1 * *m + (one - b1) * g;
                        *u = (b2 * *u).max(g.abs());
                        *w -= step * *m / (*u + eps);
                    }
                }
                OptimizerKind::Nadam => {
                    // bias-corrected momentum blended with the current gradient
                    let next = c(1.0 - h.beta1.powi(t + 1));
                    let (bc1, bc2) = (c(bc1), c(bc2));
                    let (m, v) = split_two(&mut self.slots, i);
                    for (((w, &g), m), v) in param.iter_mut().zip(grad.iter()).zip(m).zip(v) {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let m_hat = b1 * *m / next + (one - b1) * g / bc1;
                        *w -= lr * m_hat / ((*v / bc2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

fn split_two<T>(slots: &mut [Vec<Vec<T>>], i: usize) -> (&mut [T], &mut [T]) {
    let (a, b) = slots.split_at_mut(1);
    (&mut a[0][i], &mut b[0][i])
}
