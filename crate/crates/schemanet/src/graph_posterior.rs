//! Variational distribution over the schema network.
//!
//! Every unordered node pair `{i, j}` carries an independent Bernoulli edge
//! variable whose logit is produced by a small feed-forward scorer applied
//! to the two symbol vectors. Scores are symmetrized by averaging the two
//! argument orders, so the materialized probability matrix is symmetric by
//! construction with a zero diagonal.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::graph::AdjacencyMatrix;
use crate::params::{BoundParams, ParamStore};
use crate::relaxed::{self, Temperature};
use crate::{Error, Result};

/// The `K` symbol vectors scored for edges. Indicator mode (the default)
/// uses one-hot rows; dense mode carries learnable `S`-dimensional vectors.
#[derive(Debug, Clone)]
pub enum SymbolTable {
    /// One-hot symbols of dimension `K`.
    Indicator { k: usize },
    /// Dense symbols: a `(K, S)` matrix stored under the given parameter name.
    Dense { k: usize, dim: usize, param: String },
}

impl SymbolTable {
    pub fn indicator(k: usize) -> Self {
        SymbolTable::Indicator { k }
    }

    pub fn k(&self) -> usize {
        match self {
            SymbolTable::Indicator { k } | SymbolTable::Dense { k, .. } => *k,
        }
    }

    /// Input dimension each symbol contributes to the scorer.
    pub fn dim(&self) -> usize {
        match self {
            SymbolTable::Indicator { k } => *k,
            SymbolTable::Dense { dim, .. } => *dim,
        }
    }
}

/// Feed-forward edge scorer `g(e_i, e_j)`: one hidden layer, ReLU
/// activation, scalar output, symmetrized over the argument order.
#[derive(Debug, Clone)]
pub struct EdgeScorer {
    pub symbols: SymbolTable,
    pub hidden: usize,
}

impl EdgeScorer {
    pub fn new(symbols: SymbolTable, hidden: usize) -> Self {
        EdgeScorer { symbols, hidden }
    }

    /// Register scorer parameters. Weight matrices are `N(0, 0.02)`, biases
    /// zero; dense symbol tables are `N(0, 0.01)`.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let d = self.symbols.dim();
        store.seed_normal("scorer.w1", &[2 * d, self.hidden], 0.02, rng);
        store.seed_zeros("scorer.b1", &[self.hidden]);
        store.seed_normal("scorer.w2", &[self.hidden, 1], 0.02, rng);
        store.seed_zeros("scorer.b2", &[1]);
        if let SymbolTable::Dense { k, dim, param } = &self.symbols {
            store.seed_normal(param, &[*k, *dim], 0.01, rng);
        }
    }

    /// Unordered pair list in row-major `i < j` order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let k = self.symbols.k();
        let mut out = Vec::with_capacity(k * (k - 1) / 2);
        for i in 0..k {
            for j in (i + 1)..k {
                out.push((i, j));
            }
        }
        out
    }

    /// Symmetrized edge logits for every unordered pair, shape `(P,)`.
    pub fn edge_logits_on_tape(&self, g: &mut Graph, bound: &BoundParams) -> Var {
        let d = self.symbols.dim();
        let w1 = bound.var("scorer.w1");
        let b1 = bound.var("scorer.b1");
        let w2 = bound.var("scorer.w2");
        let b2 = bound.var("scorer.b2");
        // split the first layer into the blocks acting on each argument
        let u = g.narrow(w1, 0, 0, d);
        let v = g.narrow(w1, 0, d, d);
        let (rows_u, rows_v): (Var, Var) = match &self.symbols {
            SymbolTable::Indicator { .. } => (u, v),
            SymbolTable::Dense { param, .. } => {
                let syms = bound.var(param);
                (g.matmul(syms, u), g.matmul(syms, v))
            }
        };
        let pairs = self.pairs();
        let idx_i: Vec<usize> = pairs.iter().map(|&(i, _)| i).collect();
        let idx_j: Vec<usize> = pairs.iter().map(|&(_, j)| j).collect();

        let score = |g: &mut Graph, first: &[usize], second: &[usize]| -> Var {
            let a = g.gather_rows(rows_u, first);
            let b = g.gather_rows(rows_v, second);
            let s = g.add(a, b);
            let s = g.add(s, b1);
            let h = g.relu(s);
            let o = g.matmul(h, w2);
            let o = g.add(o, b2);
            g.reshape(o, &[first.len()])
        };
        let fwd = score(g, &idx_i, &idx_j);
        let bwd = score(g, &idx_j, &idx_i);
        let sum = g.add(fwd, bwd);
        g.scale(sum, 0.5)
    }

    /// Evaluate the posterior with the current parameter values.
    pub fn posterior(&self, store: &ParamStore) -> GraphPosterior {
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let logits = self.edge_logits_on_tape(&mut g, &bound);
        GraphPosterior {
            k: self.symbols.k(),
            logits: g.value(logits).iter().copied().collect(),
        }
    }
}

/// Edge logits for each unordered pair of a `K`-node graph, row-major
/// `i < j` order.
#[derive(Debug, Clone)]
pub struct GraphPosterior {
    k: usize,
    logits: Vec<f64>,
}

impl GraphPosterior {
    pub fn from_logits(k: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != k * (k - 1) / 2 {
            return Err(Error::Shape(format!(
                "{} logits for K={k}",
                logits.len()
            )));
        }
        Ok(GraphPosterior { k, logits })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn pair_probs(&self) -> Vec<f64> {
        self.logits.iter().map(|&l| sigmoid(l)).collect()
    }

    /// Symmetric `K x K` probability matrix with zero diagonal.
    pub fn prob_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.k, self.k));
        let mut idx = 0;
        for i in 0..self.k {
            for j in (i + 1)..self.k {
                let p = sigmoid(self.logits[idx]);
                m[[i, j]] = p;
                m[[j, i]] = p;
                idx += 1;
            }
        }
        m
    }

    /// Hard graph sample: independent Bernoulli per pair.
    pub fn sample_hard(&self, rng: &mut impl Rng) -> AdjacencyMatrix {
        let mut a = AdjacencyMatrix::empty(self.k);
        let mut idx = 0;
        for i in 0..self.k {
            for j in (i + 1)..self.k {
                if rng.random::<f64>() < sigmoid(self.logits[idx]) {
                    a.set_edge(i, j, true);
                }
                idx += 1;
            }
        }
        a
    }

    /// Relaxed graph sample: binary-concrete per pair, mirrored into a
    /// symmetric matrix with zero diagonal.
    pub fn sample_relaxed(&self, tau: Temperature, rng: &mut impl Rng) -> Array2<f64> {
        let mut g = Graph::new();
        let logits = g.constant(
            ArrayD::from_shape_vec(IxDyn(&[self.logits.len()]), self.logits.clone()).unwrap(),
        );
        let noise = relaxed::logistic_noise(&[self.logits.len()], rng);
        let nv = g.constant(noise);
        let out = sample_graph_relaxed_on_tape(&mut g, logits, self.k, tau, nv);
        g.value(out)
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
    }

    /// Exact log-probability of a hard graph under this posterior.
    pub fn log_prob(&self, a: &AdjacencyMatrix) -> f64 {
        let mut total = 0.0;
        let mut idx = 0;
        for i in 0..self.k {
            for j in (i + 1)..self.k {
                let p = sigmoid(self.logits[idx]).clamp(1e-12, 1.0 - 1e-12);
                total += if a.has_edge(i, j) { p.ln() } else { (1.0 - p).ln() };
                idx += 1;
            }
        }
        total
    }

    /// Text export: the adjacency format with 6-decimal floats.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let m = self.prob_matrix();
        let mut s = String::new();
        for i in 0..self.k {
            for j in 0..self.k {
                if j > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{:.6}", m[[i, j]]);
            }
            s.push('\n');
        }
        s
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Relaxed graph sample on the tape: `logits` has shape `(P,)`; the result
/// is the symmetric `(K,K)` matrix of soft edge values.
pub fn sample_graph_relaxed_on_tape(
    g: &mut Graph,
    logits: Var,
    k: usize,
    tau: Temperature,
    noise_diff: Var,
) -> Var {
    let soft = relaxed::binary_concrete_on_tape(g, logits, tau, noise_diff);
    g.symmetric_from_pairs(soft, k)
}

/// Bernoulli KL between per-pair posterior probabilities and a scalar prior
/// edge probability, summed over unordered pairs (`0·ln 0 = 0` convention).
pub fn kl_graphs(q_probs: &Array2<f64>, p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::Config(format!("prior edge probability {p} outside (0,1)")));
    }
    let k = q_probs.nrows();
    if q_probs.ncols() != k {
        return Err(Error::Shape("edge probability matrix must be square".into()));
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let q = q_probs[[i, j]];
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Numeric(format!("q[{i}][{j}] = {q} outside [0,1]")));
            }
            if q > 0.0 {
                total += q * (q / p).ln();
            }
            if q < 1.0 {
                total += (1.0 - q) * ((1.0 - q) / (1.0 - p)).ln();
            }
        }
    }
    Ok(total)
}

/// Tape version of the Bernoulli graph KL over the `(P,)` pair
/// probabilities; posterior probabilities produced by a sigmoid lie
/// strictly inside `(0,1)`, so plain logarithms are safe.
pub fn kl_graphs_on_tape(g: &mut Graph, pair_probs: Var, p: f64) -> Var {
    let q = pair_probs;
    let ones = g.constant(ArrayD::from_elem(IxDyn(&[g.value(q).len()]), 1.0));
    let one_minus_q = g.sub(ones, q);
    let ln_q = g.ln(q);
    let ln_1q = g.ln(one_minus_q);
    let ln_p = p.ln();
    let ln_1p = (1.0 - p).ln();
    let a = g.add_scalar(ln_q, -ln_p);
    let a = g.mul(q, a);
    let b = g.add_scalar(ln_1q, -ln_1p);
    let b = g.mul(one_minus_q, b);
    let s = g.add(a, b);
    g.sum_all(s)
}
