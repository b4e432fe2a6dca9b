//! Prior and posterior distributions over biased random walks on a graph.
//!
//! A walk of length `L` starts from a categorical draw with class
//! probabilities `rho` and jumps along graph edges; the probability of
//! jumping from node `j` to node `k` is proportional to a positive node
//! weight `f[k]` restricted to the neighbors of `j`:
//!
//! ```text
//! P[k][j] = f[k] * A[k][j] / sum_i f[i] * A[i][j]
//! ```
//!
//! Matrices are column-stochastic: column `j` is the distribution of the
//! next node given the current node `j`. Inhomogeneous walks carry one
//! weight vector per step. Both the exact log-probability and the KL
//! divergence between two walk distributions have closed forms built on the
//! step marginals `m[i+1] = Q[i] · m[i]`; those forms are implemented once,
//! on the autodiff tape, and evaluated with constants when no gradients are
//! needed.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::graph::AdjacencyMatrix;
use crate::relaxed::{self, Temperature};
use crate::{Error, Result};

/// Probability floor inside logarithms; keeps `0 * ln 0` finite while being
/// far below any representable transition probability.
const PROB_FLOOR: f64 = 1e-300;
/// Clamp value reported for the log-probability of an impossible walk.
pub const LOG_ZERO: f64 = -1e9;

/// Prior over walks: start distribution plus node weights, homogeneous by
/// default (a single weight vector reused at every step).
#[derive(Debug, Clone)]
pub struct WalkPrior {
    pub rho: Array1<f64>,
    pub weights: StepWeights,
    /// When set, the trainer treats the underlying pre-activations as
    /// learnable parameters.
    pub trainable: bool,
}

/// Per-step node weights of a walk distribution.
#[derive(Debug, Clone)]
pub enum StepWeights {
    Homogeneous(Array1<f64>),
    Inhomogeneous(Vec<Array1<f64>>),
}

impl WalkPrior {
    /// The uniform random walk: `rho = 1/K`, `f = 1`.
    pub fn uniform(k: usize) -> Self {
        WalkPrior {
            rho: Array1::from_elem(k, 1.0 / k as f64),
            weights: StepWeights::Homogeneous(Array1::ones(k)),
            trainable: false,
        }
    }

    pub fn size(&self) -> usize {
        self.rho.len()
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.rho.sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("prior rho sums to {sum}")));
        }
        let check = |f: &Array1<f64>| -> Result<()> {
            if f.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
                return Err(Error::Config("prior weights must be strictly positive".into()));
            }
            Ok(())
        };
        match &self.weights {
            StepWeights::Homogeneous(f) => check(f)?,
            StepWeights::Inhomogeneous(fs) => {
                for f in fs {
                    check(f)?;
                }
            }
        }
        Ok(())
    }

    /// Materialize the walk distribution of length `walk_len` on `edges`.
    pub fn chain(&self, edges: &Array2<f64>, walk_len: usize) -> Result<MarkovChain> {
        self.validate()?;
        let steps = match &self.weights {
            StepWeights::Homogeneous(f) => {
                StepMatrices::Shared(transition_matrix(f, edges)?, walk_len.saturating_sub(1))
            }
            StepWeights::Inhomogeneous(fs) => {
                if fs.len() != walk_len - 1 {
                    return Err(Error::Shape(format!(
                        "{} weight vectors for walk length {walk_len}",
                        fs.len()
                    )));
                }
                StepMatrices::PerStep(
                    fs.iter()
                        .map(|f| transition_matrix(f, edges))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
        };
        Ok(MarkovChain { start: self.rho.clone(), steps })
    }
}

/// Posterior walk parameters for one sequence: start distribution and one
/// strictly positive weight vector per step (`f_seq.len() == L - 1`).
#[derive(Debug, Clone)]
pub struct WalkPosteriorParams {
    pub rho: Array1<f64>,
    pub f_seq: Vec<Array1<f64>>,
}

impl WalkPosteriorParams {
    pub fn walk_len(&self) -> usize {
        self.f_seq.len() + 1
    }

    pub fn size(&self) -> usize {
        self.rho.len()
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.rho.sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("posterior rho sums to {sum}")));
        }
        for f in &self.f_seq {
            if f.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
                return Err(Error::Config("posterior weights must be strictly positive".into()));
            }
        }
        Ok(())
    }

    pub fn chain(&self, edges: &Array2<f64>) -> Result<MarkovChain> {
        self.validate()?;
        let steps = self
            .f_seq
            .iter()
            .map(|f| transition_matrix(f, edges))
            .collect::<Result<Vec<_>>>()?;
        Ok(MarkovChain { start: self.rho.clone(), steps: StepMatrices::PerStep(steps) })
    }
}

/// Column-stochastic transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix(Array2<f64>);

impl TransitionMatrix {
    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }

    /// Distribution of the next node given current node `j`.
    pub fn column(&self, j: usize) -> Array1<f64> {
        self.0.column(j).to_owned()
    }

    pub fn validate(&self) -> Result<()> {
        for j in 0..self.0.ncols() {
            let s: f64 = self.0.column(j).sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Numeric(format!("column {j} sums to {s}")));
            }
        }
        if self.0.iter().any(|&v| v < 0.0) {
            return Err(Error::Numeric("negative transition probability".into()));
        }
        Ok(())
    }
}

/// Step matrices of a chain; the homogeneous case shares one matrix.
#[derive(Debug, Clone)]
pub enum StepMatrices {
    Shared(TransitionMatrix, usize),
    PerStep(Vec<TransitionMatrix>),
}

/// A fully materialized walk distribution: start probabilities plus `L - 1`
/// column-stochastic step matrices.
#[derive(Debug, Clone)]
pub struct MarkovChain {
    pub start: Array1<f64>,
    pub steps: StepMatrices,
}

impl MarkovChain {
    pub fn size(&self) -> usize {
        self.start.len()
    }

    pub fn n_steps(&self) -> usize {
        match &self.steps {
            StepMatrices::Shared(_, n) => *n,
            StepMatrices::PerStep(v) => v.len(),
        }
    }

    pub fn walk_len(&self) -> usize {
        self.n_steps() + 1
    }

    pub fn step(&self, s: usize) -> &TransitionMatrix {
        match &self.steps {
            StepMatrices::Shared(m, n) => {
                assert!(s < *n, "step {s} out of range");
                m
            }
            StepMatrices::PerStep(v) => &v[s],
        }
    }

    /// Marginal node distribution at every step:
    /// `m[0] = start`, `m[i+1] = Q[i] · m[i]`.
    pub fn step_marginals(&self) -> Vec<Array1<f64>> {
        let mut out = Vec::with_capacity(self.walk_len());
        out.push(self.start.clone());
        for s in 0..self.n_steps() {
            let prev = out.last().unwrap();
            out.push(self.step(s).entries().dot(prev));
        }
        out
    }

    /// Draw one walk. Relaxed mode routes every step through the
    /// Gumbel-Softmax; hard mode draws exact categoricals.
    pub fn sample(&self, rng: &mut impl Rng, mode: SampleMode) -> Result<Schema> {
        let k = self.size();
        match mode {
            SampleMode::Hard => {
                let mut nodes = Vec::with_capacity(self.walk_len());
                nodes.push(categorical(self.start.as_slice().unwrap(), rng));
                for s in 0..self.n_steps() {
                    let col = self.step(s).column(nodes[s]);
                    nodes.push(categorical(col.as_slice().unwrap(), rng));
                }
                Ok(Schema { nodes, relaxed: None })
            }
            SampleMode::Relaxed(tau) => {
                let mut soft: Vec<Array1<f64>> = Vec::with_capacity(self.walk_len());
                let lp: Vec<f64> = self.start.iter().map(|&p| (p + PROB_FLOOR).ln()).collect();
                let first = relaxed::gumbel_softmax_sample(&lp, tau, rng)?;
                soft.push(Array1::from_vec(first.values().to_vec()));
                for s in 0..self.n_steps() {
                    // distribution of the next node under the soft current one:
                    // a convex mixture of the step matrix columns
                    let mix = self.step(s).entries().dot(soft.last().unwrap());
                    let lp: Vec<f64> = mix.iter().map(|&p| (p + PROB_FLOOR).ln()).collect();
                    let z = relaxed::gumbel_softmax_sample(&lp, tau, rng)?;
                    soft.push(Array1::from_vec(z.values().to_vec()));
                }
                let nodes = soft
                    .iter()
                    .map(|z| relaxed::argmax(z.as_slice().unwrap()))
                    .collect();
                let _ = k;
                Ok(Schema { nodes, relaxed: Some(soft) })
            }
        }
    }
}

/// Hard or relaxed sampling of a walk.
#[derive(Debug, Clone, Copy)]
pub enum SampleMode {
    Hard,
    Relaxed(Temperature),
}

/// The latent code of one sequence: the node indices visited by the walker,
/// with the underlying simplex vectors kept when sampled in relaxed mode.
#[derive(Debug, Clone)]
pub struct Schema {
    pub nodes: Vec<usize>,
    pub relaxed: Option<Vec<Array1<f64>>>,
}

impl Schema {
    pub fn hard(nodes: Vec<usize>) -> Self {
        Schema { nodes, relaxed: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Check that consecutive hard nodes are adjacent in `a`.
    pub fn respects_graph(&self, a: &AdjacencyMatrix) -> bool {
        self.nodes.windows(2).all(|w| a.has_edge(w[0], w[1]))
    }
}

fn categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = probs.iter().sum();
    let mut draw = rng.random::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        if draw < p {
            return i;
        }
        draw -= p;
    }
    probs.len() - 1
}

/// Biased-walk transition matrix `P[k][j] = f[k]·A[k][j] / Σ_i f[i]·A[i][j]`.
///
/// Columns with no admissible move (isolated node `j`) fall back to the
/// uniform distribution over all `K` nodes, which keeps every column
/// stochastic and the gradients finite.
pub fn transition_matrix(f: &Array1<f64>, edges: &Array2<f64>) -> Result<TransitionMatrix> {
    if f.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
        return Err(Error::Config("node weights must be strictly positive".into()));
    }
    let k = f.len();
    if edges.nrows() != k || edges.ncols() != k {
        return Err(Error::Shape(format!(
            "weights of length {k} vs edges {:?}",
            edges.shape()
        )));
    }
    let mut g = Graph::new();
    let fv = g.constant(f.clone().into_dyn());
    let ev = g.constant(edges.clone().into_dyn());
    let q = transition_matrix_on_tape(&mut g, fv, ev);
    let out = g
        .value(q)
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap();
    Ok(TransitionMatrix(out))
}

/// Tape builder for the transition matrix. `f` has shape `(K,)`, `edges`
/// `(K,K)`. Fallback columns are constant, so no gradient flows to them.
pub fn transition_matrix_on_tape(g: &mut Graph, f: Var, edges: Var) -> Var {
    let k = g.value(f).len();
    let fcol = g.reshape(f, &[k, 1]);
    let numer = g.mul(fcol, edges); // (K,1) * (K,K) -> (K,K)
    let denom = g.sum_axis(numer, 0, true); // (1,K)
    // columns with zero mass: divide by 1 instead and patch in 1/K
    let mask: Vec<f64> = g.value(denom).iter().map(|&d| f64::from(d > 0.0)).collect();
    let mask_arr = Array2::from_shape_vec((1, k), mask).unwrap();
    let inv_mask_col = mask_arr.mapv(|m| (1.0 - m) / k as f64);
    let mv = g.constant(mask_arr.into_dyn());
    let safe = {
        let ones = g.constant(Array2::<f64>::ones((1, k)).into_dyn());
        let neg = g.mul(denom, mv);
        let gap = g.sub(ones, mv);
        let tmp = g.add(neg, gap);
        tmp
    };
    let q0 = g.div(numer, safe);
    let q_masked = g.mul(q0, mv);
    let fallback = g.constant(
        inv_mask_col
            .broadcast((k, k))
            .unwrap()
            .to_owned()
            .into_dyn(),
    );
    g.add(q_masked, fallback)
}

/// Chain structure living on the tape.
pub struct ChainVars {
    pub start: Var,
    pub steps: Vec<Var>,
}

impl ChainVars {
    /// Build from start probabilities plus per-step weight vectors.
    pub fn from_params(g: &mut Graph, rho: Var, f_seq: &[Var], edges: Var) -> Self {
        let steps = f_seq
            .iter()
            .map(|&f| transition_matrix_on_tape(g, f, edges))
            .collect();
        ChainVars { start: rho, steps }
    }

    /// Step marginals, shapes `(K,)`.
    pub fn step_marginals(&self, g: &mut Graph) -> Vec<Var> {
        let k = g.value(self.start).len();
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        out.push(self.start);
        let mut cur = g.reshape(self.start, &[k, 1]);
        for &q in &self.steps {
            cur = g.matmul(q, cur);
            let flat = g.reshape(cur, &[k]);
            out.push(flat);
        }
        out
    }
}

fn ln_floored(g: &mut Graph, x: Var) -> Var {
    let c = g.clamp(x, PROB_FLOOR, f64::INFINITY);
    g.ln(c)
}

/// Closed-form KL between two walk distributions on the same support:
///
/// ```text
/// KL = KL[q.start ; p.start]
///    + Σ_i Σ_{k,j} Q[i][k,j] · m[i][j] · ln(Q[i][k,j] / P[i][k,j])
/// ```
///
/// where `m` are the step marginals of `q`.
pub fn kl_chains_on_tape(g: &mut Graph, q: &ChainVars, p: &ChainVars) -> Var {
    assert_eq!(q.steps.len(), p.steps.len(), "chain length mismatch");
    let ln_q0 = ln_floored(g, q.start);
    let ln_p0 = ln_floored(g, p.start);
    let dl = g.sub(ln_q0, ln_p0);
    let w = g.mul(q.start, dl);
    let mut total = g.sum_all(w);

    let marginals = q.step_marginals(g);
    let k = g.value(q.start).len();
    for (s, (&qs, &ps)) in q.steps.iter().zip(p.steps.iter()).enumerate() {
        let ln_q = ln_floored(g, qs);
        let ln_p = ln_floored(g, ps);
        let dl = g.sub(ln_q, ln_p);
        let qdl = g.mul(qs, dl);
        let m_row = g.reshape(marginals[s], &[1, k]);
        let term = g.mul(qdl, m_row);
        let term_sum = g.sum_all(term);
        total = g.add(total, term_sum);
    }
    total
}

/// Diagnostics attached to KL and log-probability values.
#[derive(Debug, Clone, Copy, Default)]
pub struct WalkDiagnostics {
    /// Set when `q` placed mass on a transition of probability zero under
    /// `p` (or vice versa), i.e. the clamped log-ratio was exercised.
    pub support_mismatch: bool,
}

/// KL value together with its diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct KlOutcome {
    pub nats: f64,
    pub diagnostics: WalkDiagnostics,
}

fn chain_support_mismatch(q: &MarkovChain, p: &MarkovChain) -> bool {
    let thresh = 1e-12;
    let start_bad = q
        .start
        .iter()
        .zip(p.start.iter())
        .any(|(&a, &b)| (a > thresh && b <= 0.0) || (b > thresh && a <= 0.0));
    if start_bad {
        return true;
    }
    (0..q.n_steps()).any(|s| {
        q.step(s)
            .entries()
            .iter()
            .zip(p.step(s).entries().iter())
            .any(|(&a, &b)| (a > thresh && b <= 0.0) || (b > thresh && a <= 0.0))
    })
}

/// Exact KL divergence between two materialized walk distributions.
pub fn kl_chains(q: &MarkovChain, p: &MarkovChain) -> KlOutcome {
    let mut g = Graph::new();
    let qv = chain_constants(&mut g, q);
    let pv = chain_constants(&mut g, p);
    let out = kl_chains_on_tape(&mut g, &qv, &pv);
    KlOutcome {
        nats: g.scalar_value(out),
        diagnostics: WalkDiagnostics { support_mismatch: chain_support_mismatch(q, p) },
    }
}

fn chain_constants(g: &mut Graph, c: &MarkovChain) -> ChainVars {
    let start = g.constant(c.start.clone().into_dyn());
    let steps = (0..c.n_steps())
        .map(|s| g.constant(c.step(s).entries().clone().into_dyn()))
        .collect();
    ChainVars { start, steps }
}

/// KL of the posterior walk distribution from the prior, both conditioned
/// on the same edge structure.
pub fn kl_walks(
    q: &WalkPosteriorParams,
    p: &WalkPrior,
    edges: &Array2<f64>,
) -> Result<KlOutcome> {
    let qc = q.chain(edges)?;
    let pc = p.chain(edges, q.walk_len())?;
    Ok(kl_chains(&qc, &pc))
}

/// Mean-field walk KL: the variational side factorizes over steps with
/// marginals `q_marginals`, the prior side is the Markov walk on `edges`.
///
/// ```text
/// KL = KL[m[0]; p.start]
///    + Σ_{i≥1} ( Σ_j m[i][j] ln m[i][j]
///               - Σ_{k,j} m[i][k] · m[i-1][j] · ln P[i-1][k,j] )
/// ```
pub fn kl_walks_mean_field(
    q_marginals: &[Array1<f64>],
    p: &WalkPrior,
    edges: &Array2<f64>,
) -> Result<KlOutcome> {
    if q_marginals.is_empty() {
        return Err(Error::Config("empty marginal list".into()));
    }
    let pc = p.chain(edges, q_marginals.len())?;
    let mut mismatch = false;
    let mut total = 0.0;
    for (j, (&qj, &pj)) in q_marginals[0].iter().zip(pc.start.iter()).enumerate() {
        let _ = j;
        if qj > 0.0 {
            if pj <= 0.0 {
                mismatch = true;
            }
            total += qj * ((qj.max(PROB_FLOOR)).ln() - (pj.max(PROB_FLOOR)).ln());
        }
    }
    for i in 1..q_marginals.len() {
        let m = &q_marginals[i];
        let prev = &q_marginals[i - 1];
        for &qj in m.iter() {
            if qj > 0.0 {
                total += qj * qj.ln();
            }
        }
        let pmat = pc.step(i - 1).entries();
        for (k, &mk) in m.iter().enumerate() {
            for (j, &pj) in prev.iter().enumerate() {
                let w = mk * pj;
                if w > 0.0 {
                    let p_kj = pmat[[k, j]];
                    if p_kj <= 0.0 {
                        mismatch = true;
                    }
                    total -= w * p_kj.max(PROB_FLOOR).ln();
                }
            }
        }
    }
    Ok(KlOutcome { nats: total, diagnostics: WalkDiagnostics { support_mismatch: mismatch } })
}

/// Log-probability of a walk together with diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct LogProbOutcome {
    pub nats: f64,
    pub hit_zero: bool,
}

/// Exact log-probability of a schema under a walk distribution.
///
/// Hard schemata multiply the visited start/transition entries; a zero
/// entry yields the clamp value [`LOG_ZERO`] and sets the flag. Relaxed
/// schemata use the bilinear form
/// `Σ_i Σ_{k,j} z[i][k] · z[i-1][j] · ln Q[i-1][k,j]`.
pub fn walk_log_prob(schema: &Schema, chain: &MarkovChain) -> Result<LogProbOutcome> {
    if schema.len() != chain.walk_len() {
        return Err(Error::Shape(format!(
            "schema length {} vs chain length {}",
            schema.len(),
            chain.walk_len()
        )));
    }
    match &schema.relaxed {
        None => {
            let mut total = 0.0;
            let mut hit_zero = false;
            let mut factor = |p: f64| {
                if p > 0.0 {
                    total += p.ln();
                } else {
                    total += LOG_ZERO;
                    hit_zero = true;
                }
            };
            factor(chain.start[schema.nodes[0]]);
            for s in 0..chain.n_steps() {
                factor(chain.step(s).entries()[[schema.nodes[s + 1], schema.nodes[s]]]);
            }
            Ok(LogProbOutcome { nats: total, hit_zero })
        }
        Some(soft) => {
            let mut g = Graph::new();
            let cv = chain_constants(&mut g, chain);
            let zs: Vec<Var> = soft
                .iter()
                .map(|z| g.constant(z.clone().into_dyn()))
                .collect();
            let out = walk_log_prob_relaxed_on_tape(&mut g, &cv, &zs);
            Ok(LogProbOutcome { nats: g.scalar_value(out), hit_zero: false })
        }
    }
}

/// Bilinear relaxed log-probability on the tape; `zs` are `(K,)` simplex
/// vectors, one per walk step.
pub fn walk_log_prob_relaxed_on_tape(g: &mut Graph, chain: &ChainVars, zs: &[Var]) -> Var {
    assert_eq!(zs.len(), chain.steps.len() + 1);
    let k = g.value(chain.start).len();
    let ln_rho = ln_floored(g, chain.start);
    let w = g.mul(zs[0], ln_rho);
    let mut total = g.sum_all(w);
    for (s, &q) in chain.steps.iter().enumerate() {
        let ln_q = ln_floored(g, q);
        let zc = g.reshape(zs[s + 1], &[k, 1]);
        let zp = g.reshape(zs[s], &[1, k]);
        let outer = g.mul(zc, zp);
        let prod = g.mul(outer, ln_q);
        let sum = g.sum_all(prod);
        total = g.add(total, sum);
    }
    total
}

/// Aggregated (minibatch-averaged) walk posterior: elementwise means of the
/// start distributions and of the per-step transition matrices.
pub fn aggregate_posterior(
    batch: &[WalkPosteriorParams],
    edges: &Array2<f64>,
) -> Result<MarkovChain> {
    if batch.is_empty() {
        return Err(Error::Config("aggregate_posterior over an empty batch".into()));
    }
    let walk_len = batch[0].walk_len();
    let k = batch[0].size();
    if batch
        .iter()
        .any(|b| b.walk_len() != walk_len || b.size() != k)
    {
        return Err(Error::Shape("inconsistent posterior batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut rho_star = Array1::<f64>::zeros(k);
    for b in batch {
        rho_star += &(&b.rho * scale);
    }
    let mut steps = Vec::with_capacity(walk_len - 1);
    for s in 0..walk_len - 1 {
        let mut q_star = Array2::<f64>::zeros((k, k));
        for b in batch {
            q_star += &(transition_matrix(&b.f_seq[s], edges)?.entries() * scale);
        }
        steps.push(TransitionMatrix(q_star));
    }
    Ok(MarkovChain { start: rho_star, steps: StepMatrices::PerStep(steps) })
}
