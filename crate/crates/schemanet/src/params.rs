//! Named parameter tensors shared by the encoder, decoder, scorer and
//! trainer. `BTreeMap` keys give a deterministic iteration order, which the
//! optimizer and the checkpoint format both rely on.

use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::{Error, Result};

/// Persistent store of named parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    values: BTreeMap<String, ArrayD<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<f64>) {
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.values
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ArrayD<f64>> {
        self.values
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.values.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<f64>)> {
        self.values.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.values.keys().cloned().collect()
    }

    pub fn n_scalars(&self) -> usize {
        self.values.values().map(|v| v.len()).sum()
    }

    /// Gaussian init with the given standard deviation (Box-Muller).
    pub fn seed_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut impl Rng) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| normal(rng) * std).collect();
        self.insert(name, ArrayD::from_shape_vec(IxDyn(shape), data).unwrap());
    }

    pub fn seed_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, ArrayD::zeros(IxDyn(shape)));
    }

    pub fn seed_ones(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, ArrayD::from_elem(IxDyn(shape), 1.0));
    }

    /// Register every tensor on a tape, returning name -> Var bindings.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let vars = self
            .values
            .iter()
            .map(|(name, value)| (name.clone(), g.param(value.clone())))
            .collect();
        BoundParams { vars }
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; u clamped away from 0
    let u: f64 = rng.random::<f64>().max(1e-12);
    let v: f64 = rng.random::<f64>();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// Parameter tensors bound to one tape.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}
