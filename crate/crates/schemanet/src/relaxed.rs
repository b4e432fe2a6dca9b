//! Differentiable sampling of categorical and Bernoulli variables via the
//! Gumbel-Softmax (concrete) relaxation.
//!
//! Soft samples are used on the training path; hard discretization
//! ([`harden`]) is reserved for evaluation. Logits are clamped to
//! `[-30, 30]` before noise addition so every `exp` stays finite; Gumbel
//! noise is generated as `-ln(-ln u)` with `u` uniform in `(1e-10, 1 - 1e-10)`.

use ndarray::{ArrayD, ArrayViewD};
use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::{Error, Result};

pub const LOGIT_CLAMP: f64 = 30.0;
const UNIFORM_EPS: f64 = 1e-10;

/// Positive relaxation temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Temperature(tau))
        } else {
            Err(Error::Config(format!("temperature {tau} must be positive")))
        }
    }

    pub fn get(&self) -> f64 {
        self.0
    }
}

/// A point on the probability simplex produced by a relaxed categorical
/// sample: entries are nonnegative and sum to one (within 1e-6).
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedOneHot(Vec<f64>);

impl RelaxedOneHot {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let sum: f64 = values.iter().sum();
        if values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Numeric("relaxed one-hot with negative entry".into()));
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Numeric(format!("relaxed one-hot sums to {sum}")));
        }
        Ok(RelaxedOneHot(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Draw standard Gumbel noise of the given shape.
pub fn gumbel_noise(shape: &[usize], rng: &mut impl Rng) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(ndarray::IxDyn(shape), || {
        let u: f64 = rng.random::<f64>().clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS);
        -(-u.ln()).ln()
    })
}

/// Tape version of the Gumbel-Softmax sample: rows of `log_probs` (last
/// axis) are perturbed with the provided noise and softmaxed at temperature
/// `tau`. Gradients flow to `log_probs`; the noise is a constant.
pub fn gumbel_softmax_on_tape(
    g: &mut Graph,
    log_probs: Var,
    tau: Temperature,
    noise: Var,
) -> Var {
    let clamped = g.clamp(log_probs, -LOGIT_CLAMP, LOGIT_CLAMP);
    let perturbed = g.add(clamped, noise);
    let scaled = g.scale(perturbed, 1.0 / tau.get());
    g.softmax_last(scaled)
}

/// Reparameterized Gumbel-Softmax sample of a categorical with the given
/// (possibly unnormalized) log-probabilities.
pub fn gumbel_softmax_sample(
    log_probs: &[f64],
    tau: Temperature,
    rng: &mut impl Rng,
) -> Result<RelaxedOneHot> {
    if log_probs.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Numeric("non-finite log-probabilities".into()));
    }
    let mut g = Graph::new();
    let lp = g.constant(
        ArrayD::from_shape_vec(ndarray::IxDyn(&[log_probs.len()]), log_probs.to_vec()).unwrap(),
    );
    let noise = gumbel_noise(&[log_probs.len()], rng);
    let nv = g.constant(noise);
    let out = gumbel_softmax_on_tape(&mut g, lp, tau, nv);
    RelaxedOneHot::new(g.value(out).iter().copied().collect())
}

/// Tape version of the binary-concrete (2-class Gumbel-Softmax) sample.
/// `logits` holds per-variable log-odds of the "on" class; `noise_diff` is
/// the difference of two independent Gumbel draws (a standard logistic).
/// Returns the probability-of-on coordinate for each variable.
pub fn binary_concrete_on_tape(
    g: &mut Graph,
    logits: Var,
    tau: Temperature,
    noise_diff: Var,
) -> Var {
    let clamped = g.clamp(logits, -LOGIT_CLAMP, LOGIT_CLAMP);
    let perturbed = g.add(clamped, noise_diff);
    let scaled = g.scale(perturbed, 1.0 / tau.get());
    g.sigmoid(scaled)
}

/// Difference of two independent Gumbel draws per element.
pub fn logistic_noise(shape: &[usize], rng: &mut impl Rng) -> ArrayD<f64> {
    let a = gumbel_noise(shape, rng);
    let b = gumbel_noise(shape, rng);
    a - b
}

/// Reparameterized binary-concrete sample in `(0, 1)`.
pub fn binary_concrete_sample(logit: f64, tau: Temperature, rng: &mut impl Rng) -> f64 {
    let mut g = Graph::new();
    let lv = g.constant(ndarray::arr1(&[logit]).into_dyn());
    let noise = logistic_noise(&[1], rng);
    let nv = g.constant(noise);
    let out = binary_concrete_on_tape(&mut g, lv, tau, nv);
    g.value(out)[[0]]
}

/// Argmax with ties broken by the lowest index.
pub fn harden(relaxed: &RelaxedOneHot) -> usize {
    argmax(relaxed.values())
}

/// Argmax over a raw slice, ties broken by the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Row-wise argmax of a 2-d view.
pub fn argmax_rows(values: &ArrayViewD<'_, f64>) -> Vec<usize> {
    values
        .rows()
        .into_iter()
        .map(|row| argmax(row.as_slice().expect("standard layout")))
        .collect()
}
