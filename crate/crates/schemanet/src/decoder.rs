//! Schema-conditioned likelihood models.
//!
//! Two modes: the bag-emission likelihood of the synthetic language (the
//! symbols are known token bags, so `p(x|z)` is a table lookup), and a toy
//! causal transformer decoder conditioned through pseudo-self-attention
//! (PSA): every layer's key and value matrices are augmented in their first
//! `L` rows with projections of the schema symbols plus a positional
//! encoding, so each token position can attend to the walk.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::encoder::positional_encoding;
use crate::params::{BoundParams, ParamStore};
use crate::synthetic::TokenBag;
use crate::walks::Schema;
use crate::{Error, Result};

/// Emission floor guarding relaxed walks that route mass to bags lacking
/// the observed token.
pub const EMISSION_EPS: f64 = 1e-10;

/// Dense `(V, K)` matrix with `emis[x][k] = bags[k].prob(x)`; the constant
/// lookup table used by the bag likelihood.
pub fn emission_table(bags: &[TokenBag], vocab_size: usize) -> Array2<f64> {
    let k = bags.len();
    let mut m = Array2::zeros((vocab_size, k));
    for (node, bag) in bags.iter().enumerate() {
        for &(t, p) in bag.entries() {
            m[[t as usize, node]] = p;
        }
    }
    m
}

/// Bag-emission log-likelihood on the tape, batched.
///
/// `z` is the stacked relaxed schema `(B, L, K)`; `tokens` the matching
/// token ids. Returns the per-sequence total log-likelihood summed over
/// steps and averaged over the batch.
pub fn bag_log_likelihood_on_tape(
    g: &mut Graph,
    z: Var,
    emis: Var,
    tokens: &[Vec<u32>],
) -> Var {
    let shape = g.value(z).shape().to_vec();
    let (b, l, k) = (shape[0], shape[1], shape[2]);
    let flat_ids: Vec<usize> = tokens
        .iter()
        .flat_map(|seq| seq.iter().map(|&t| t as usize))
        .collect();
    assert_eq!(flat_ids.len(), b * l, "token batch shape mismatch");
    let zw = g.reshape(z, &[b * l, k]);
    let w = g.gather_rows(emis, &flat_ids); // (B*L, K)
    let prod = g.mul(zw, w);
    let mass = g.sum_axis(prod, 1, false); // (B*L,)
    let mass = g.add_scalar(mass, EMISSION_EPS);
    let ll = g.ln(mass);
    let total = g.sum_all(ll);
    g.scale(total, 1.0 / b as f64)
}

/// Log-likelihood of one sequence under a hard or relaxed schema.
pub fn bag_log_likelihood(schema: &Schema, bags: &[TokenBag], sequence: &[u32]) -> Result<f64> {
    if schema.len() != sequence.len() {
        return Err(Error::Shape(format!(
            "schema length {} vs sequence length {}",
            schema.len(),
            sequence.len()
        )));
    }
    let k = bags.len();
    let soft: Vec<Array1<f64>> = match &schema.relaxed {
        Some(z) => z.clone(),
        None => schema
            .nodes
            .iter()
            .map(|&n| {
                let mut z = Array1::zeros(k);
                z[n] = 1.0;
                z
            })
            .collect(),
    };
    let mut total = 0.0;
    for (z, &tok) in soft.iter().zip(sequence.iter()) {
        let mass: f64 = z
            .iter()
            .enumerate()
            .map(|(node, &w)| w * bags[node].prob(tok))
            .sum();
        total += (mass + EMISSION_EPS).ln();
    }
    Ok(total)
}

/// Which likelihood model the decoder runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    BagEmission,
    PsaCausal,
}

/// Configuration of the causal PSA decoder.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DecoderConfig {
    pub mode: DecoderMode,
    pub n_layers: usize,
    pub n_heads: usize,
    pub width: usize,
    pub vocab_size: usize,
    /// Symbol count of the conditioning schema.
    pub k: usize,
    /// Input-token dropout probability during training (replaced by the
    /// unknown-token id).
    pub word_dropout: f64,
}

impl DecoderConfig {
    pub fn toy(vocab_size: usize, k: usize) -> Self {
        DecoderConfig {
            mode: DecoderMode::PsaCausal,
            n_layers: 2,
            n_heads: 2,
            width: 32,
            vocab_size,
            k,
            word_dropout: 0.3,
        }
    }

    pub fn unk_id(&self) -> usize {
        self.vocab_size
    }

    pub fn bos_id(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.width % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "width {} not divisible by heads {}",
                self.width, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Scaled dot-product attention `softmax(Q·K^T/√D + mask)·V` on 2-d inputs.
pub fn scaled_dot_attention_on_tape(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Array2<f64>>,
) -> Var {
    let d = g.value(q).shape()[1] as f64;
    let kt = g.transpose2(k);
    let scores = g.matmul(q, kt);
    let mut scores = g.scale(scores, 1.0 / d.sqrt());
    if let Some(m) = mask {
        let mv = g.constant(m.clone().into_dyn());
        scores = g.add(scores, mv);
    }
    let att = g.softmax_last(scores);
    g.matmul(att, v)
}

/// Pseudo-self-attention: keys and values are augmented in their first `L`
/// rows with schema projections plus a positional encoding, then standard
/// attention runs on the extended matrices. With an empty schema this is
/// exactly [`scaled_dot_attention_on_tape`] on the raw inputs.
///
/// `schema` is `(L, K)` (one-hot rows or relaxed), `we_k`/`we_v` are the
/// `(K, D)` projections, `mask` is `(Tq, L + Tk)` when the schema is
/// non-empty and `(Tq, Tk)` otherwise.
#[allow(clippy::too_many_arguments)]
pub fn psa_attention_on_tape(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    schema: Option<Var>,
    we_k: Var,
    we_v: Var,
    mask: Option<&Array2<f64>>,
) -> Var {
    match schema {
        None => scaled_dot_attention_on_tape(g, q, k, v, mask),
        Some(z) => {
            let l = g.value(z).shape()[0];
            let d = g.value(k).shape()[1];
            let p_enc = g.constant(positional_encoding(l, d).into_dyn());
            let zk = g.matmul(z, we_k);
            let zk = g.add(zk, p_enc);
            let zv = g.matmul(z, we_v);
            let zv = g.add(zv, p_enc);
            let k_ext = g.concat(zk, k, 0);
            let v_ext = g.concat(zv, v, 0);
            scaled_dot_attention_on_tape(g, q, k_ext, v_ext, mask)
        }
    }
}

/// Causal mask `(T, L+T)` in additive form: token position `i` may attend
/// to every symbol slot and to token positions `<= i`.
pub fn causal_psa_mask(t: usize, l: usize) -> Array2<f64> {
    Array2::from_shape_fn((t, l + t), |(i, j)| {
        if j < l || j - l <= i {
            0.0
        } else {
            -1e30
        }
    })
}

/// Toy causal transformer decoder with PSA conditioning at every layer.
#[derive(Debug, Clone)]
pub struct CausalDecoder {
    pub cfg: DecoderConfig,
}

impl CausalDecoder {
    pub fn new(cfg: DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(CausalDecoder { cfg })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let d = self.cfg.width;
        // + unknown and begin-of-sequence rows
        store.seed_normal("dec.embed", &[self.cfg.vocab_size + 2, d], 0.01, rng);
        for layer in 0..self.cfg.n_layers {
            let p = format!("dec.layer{layer}");
            for name in ["wq", "wk", "wv", "wo"] {
                store.seed_normal(&format!("{p}.attn.{name}"), &[d, d], 0.02, rng);
                store.seed_zeros(&format!("{p}.attn.{name}.b"), &[d]);
            }
            store.seed_normal(&format!("{p}.psa.we_k"), &[self.cfg.k, d], 0.02, rng);
            store.seed_normal(&format!("{p}.psa.we_v"), &[self.cfg.k, d], 0.02, rng);
            store.seed_ones(&format!("{p}.ln1.g"), &[d]);
            store.seed_zeros(&format!("{p}.ln1.b"), &[d]);
            store.seed_normal(&format!("{p}.ff.w1"), &[d, 2 * d], 0.02, rng);
            store.seed_zeros(&format!("{p}.ff.b1"), &[2 * d]);
            store.seed_normal(&format!("{p}.ff.w2"), &[2 * d, d], 0.02, rng);
            store.seed_zeros(&format!("{p}.ff.b2"), &[d]);
            store.seed_ones(&format!("{p}.ln2.g"), &[d]);
            store.seed_zeros(&format!("{p}.ln2.b"), &[d]);
        }
        store.seed_ones("dec.out.ln.g", &[d]);
        store.seed_zeros("dec.out.ln.b", &[d]);
        store.seed_normal("dec.out.w", &[d, self.cfg.vocab_size], 0.02, rng);
        store.seed_zeros("dec.out.b", &[self.cfg.vocab_size]);
    }

    /// Total log-likelihood of `sequence` under teacher forcing, conditioned
    /// on the schema (one-hot or relaxed rows, `(L, K)`); pass an empty
    /// schema (`L = 0`) for an unconditional decoder. Word dropout replaces
    /// input tokens by the unknown id during training.
    #[allow(clippy::too_many_arguments)]
    pub fn log_likelihood(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        sequence: &[u32],
        schema: Option<&Array2<f64>>,
        train: bool,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let t = sequence.len();
        if t == 0 {
            return Err(Error::Config("empty sequence".into()));
        }
        let d = self.cfg.width;
        // teacher forcing: inputs are BOS + tokens[..T-1]
        let mut input_ids = Vec::with_capacity(t);
        input_ids.push(self.cfg.bos_id());
        for &x in &sequence[..t - 1] {
            input_ids.push(x as usize);
        }
        if train && self.cfg.word_dropout > 0.0 {
            for id in input_ids.iter_mut().skip(1) {
                if rng.random::<f64>() < self.cfg.word_dropout {
                    *id = self.cfg.unk_id();
                }
            }
        }

        let table = bound.var("dec.embed");
        let x0 = g.gather_rows(table, &input_ids); // (T, D)
        let pe = g.constant(positional_encoding(t, d).into_dyn());
        let mut x = g.add(x0, pe);

        let schema_var = match schema {
            Some(z) if z.nrows() > 0 => Some(g.constant(z.clone().into_dyn())),
            _ => None,
        };
        let l = schema.map_or(0, Array2::nrows);
        let mask = causal_psa_mask(t, l);

        for layer in 0..self.cfg.n_layers {
            let p = format!("dec.layer{layer}");
            let normed = layer_norm(g, bound, x, &format!("{p}.ln1"));
            let attn = self.psa_block(g, bound, &p, normed, schema_var, &mask);
            x = g.add(x, attn);
            let normed = layer_norm(g, bound, x, &format!("{p}.ln2"));
            let ff = feed_forward(g, bound, &p, normed);
            x = g.add(x, ff);
        }
        let x = layer_norm(g, bound, x, "dec.out.ln");
        let w = bound.var("dec.out.w");
        let b = bound.var("dec.out.b");
        let logits = g.matmul(x, w);
        let logits = g.add(logits, b);
        let logp = g.log_softmax_last(logits);
        let targets: Vec<usize> = sequence.iter().map(|&x| x as usize).collect();
        let picked = g.select_cols(logp, &targets);
        Ok(g.sum_all(picked))
    }

    /// Multi-head PSA attention block. The schema is projected per layer on
    /// the full width, then split across heads together with keys/values.
    fn psa_block(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        prefix: &str,
        x: Var,
        schema: Option<Var>,
        mask: &Array2<f64>,
    ) -> Var {
        let d = self.cfg.width;
        let h = self.cfg.n_heads;
        let dh = d / h;
        let t = g.value(x).shape()[0];
        let proj = |g: &mut Graph, name: &str| -> Var {
            let w = bound.var(&format!("{prefix}.attn.{name}"));
            let bias = bound.var(&format!("{prefix}.attn.{name}.b"));
            let y = g.matmul(x, w);
            g.add(y, bias)
        };
        let q = proj(g, "wq");
        let k = proj(g, "wk");
        let v = proj(g, "wv");

        let (k_ext, v_ext, l) = match schema {
            None => (k, v, 0usize),
            Some(z) => {
                let l = g.value(z).shape()[0];
                let we_k = bound.var(&format!("{prefix}.psa.we_k"));
                let we_v = bound.var(&format!("{prefix}.psa.we_v"));
                let p_enc = g.constant(positional_encoding(l, d).into_dyn());
                let zk = g.matmul(z, we_k);
                let zk = g.add(zk, p_enc);
                let zv = g.matmul(z, we_v);
                let zv = g.add(zv, p_enc);
                (g.concat(zk, k, 0), g.concat(zv, v, 0), l)
            }
        };

        // per-head attention over the extended keys/values
        let split = |g: &mut Graph, m: Var, rows: usize| -> Var {
            let y = g.reshape(m, &[rows, h, dh]);
            let y = g.permute(y, &[1, 0, 2]);
            g.reshape(y, &[h, rows, dh])
        };
        let qh = split(g, q, t);
        let kh = split(g, k_ext, l + t);
        let vh = split(g, v_ext, l + t);
        let kt = g.permute(kh, &[0, 2, 1]);
        let scores = g.bmm(qh, kt);
        let mut scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let mv = g.constant(mask.clone().into_dyn());
        scores = g.add(scores, mv);
        let att = g.softmax_last(scores);
        let ctx = g.bmm(att, vh); // (H, T, dh)
        let ctx = g.permute(ctx, &[1, 0, 2]);
        let ctx = g.reshape(ctx, &[t, d]);
        let wo = bound.var(&format!("{prefix}.attn.wo"));
        let bo = bound.var(&format!("{prefix}.attn.wo.b"));
        let out = g.matmul(ctx, wo);
        g.add(out, bo)
    }
}

fn layer_norm(g: &mut Graph, bound: &BoundParams, x: Var, prefix: &str) -> Var {
    let last = g.value(x).ndim() - 1;
    let mean = g.mean_axis(x, last, true);
    let centered = g.sub(x, mean);
    let sq = g.sqr(centered);
    let var = g.mean_axis(sq, last, true);
    let var_eps = g.add_scalar(var, 1e-5);
    let std = g.sqrt(var_eps);
    let normed = g.div(centered, std);
    let gain = bound.var(&format!("{prefix}.g"));
    let bias = bound.var(&format!("{prefix}.b"));
    let y = g.mul(normed, gain);
    g.add(y, bias)
}

fn feed_forward(g: &mut Graph, bound: &BoundParams, prefix: &str, x: Var) -> Var {
    let w1 = bound.var(&format!("{prefix}.ff.w1"));
    let b1 = bound.var(&format!("{prefix}.ff.b1"));
    let w2 = bound.var(&format!("{prefix}.ff.w2"));
    let b2 = bound.var(&format!("{prefix}.ff.b2"));
    let y = g.matmul(x, w1);
    let y = g.add(y, b1);
    let y = g.gelu(y);
    let y = g.matmul(y, w2);
    g.add(y, b2)
}

/// One-hot `(L, K)` rows for a hard schema.
pub fn schema_one_hot(schema: &Schema, k: usize) -> Array2<f64> {
    match &schema.relaxed {
        Some(soft) => {
            let mut m = Array2::zeros((soft.len(), k));
            for (i, z) in soft.iter().enumerate() {
                m.row_mut(i).assign(z);
            }
            m
        }
        None => {
            let mut m = Array2::zeros((schema.nodes.len(), k));
            for (i, &n) in schema.nodes.iter().enumerate() {
                m[[i, n]] = 1.0;
            }
            m
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn bags2() -> Vec<TokenBag> {
        vec![
            TokenBag::new(vec![(0, 0.5), (1, 0.5)]).unwrap(),
            TokenBag::new(vec![(1, 0.5), (2, 0.5)]).unwrap(),
            TokenBag::new(vec![(3, 1.0)]).unwrap(),
        ]
    }

    #[test]
    fn hard_schema_bag_likelihood_is_ln_half_per_token() {
        let bags = bags2();
        let schema = Schema::hard(vec![0, 1]);
        let ll = bag_log_likelihood(&schema, &bags, &[0, 2]).unwrap();
        assert!((ll - 2.0 * 0.5f64.ln()).abs() < 1e-9, "{ll}");
    }

    #[test]
    fn token_outside_bag_hits_emission_floor() {
        let bags = bags2();
        let schema = Schema::hard(vec![2]);
        let ll = bag_log_likelihood(&schema, &bags, &[0]).unwrap();
        assert!((ll - EMISSION_EPS.ln()).abs() < 1e-6, "{ll}");
    }

    #[test]
    fn relaxed_uniform_over_two_bags_sharing_token() {
        // both bags contain token 1 at probability 0.5
        let bags = bags2();
        let z = Array1::from_vec(vec![0.5, 0.5, 0.0]);
        let schema = Schema { nodes: vec![0], relaxed: Some(vec![z]) };
        let ll = bag_log_likelihood(&schema, &bags, &[1]).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-9, "{ll}");
    }

    #[test]
    fn bag_likelihood_is_permutation_equivariant() {
        let bags = bags2();
        let perm = [2usize, 0, 1]; // node i -> perm[i]
        let permuted_bags: Vec<TokenBag> = {
            let mut v = vec![bags[0].clone(); 3];
            for (i, b) in bags.iter().enumerate() {
                v[perm[i]] = b.clone();
            }
            v
        };
        let schema = Schema::hard(vec![0, 1, 2]);
        let schema_p = Schema::hard(schema.nodes.iter().map(|&n| perm[n]).collect());
        let seq = [1u32, 2, 3];
        let a = bag_log_likelihood(&schema, &bags, &seq).unwrap();
        let b = bag_log_likelihood(&schema_p, &permuted_bags, &seq).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn batched_tape_likelihood_matches_plain() {
        let bags = bags2();
        let emis = emission_table(&bags, 5);
        let tokens = vec![vec![0u32, 2], vec![1u32, 3]];
        let z0 = Array1::from_vec(vec![0.7, 0.2, 0.1]);
        let z1 = Array1::from_vec(vec![0.1, 0.8, 0.1]);
        let z2 = Array1::from_vec(vec![0.3, 0.3, 0.4]);
        let z3 = Array1::from_vec(vec![0.0, 0.0, 1.0]);
        let mut g = Graph::new();
        let mut zs = ArrayD::zeros(IxDyn(&[2, 2, 3]));
        for (b, pair) in [[&z0, &z1], [&z2, &z3]].iter().enumerate() {
            for (i, z) in pair.iter().enumerate() {
                for k in 0..3 {
                    zs[[b, i, k]] = z[k];
                }
            }
        }
        let zv = g.constant(zs);
        let ev = g.constant(emis.into_dyn());
        let out = bag_log_likelihood_on_tape(&mut g, zv, ev, &tokens);
        let plain0 = bag_log_likelihood(
            &Schema { nodes: vec![0, 1], relaxed: Some(vec![z0, z1]) },
            &bags,
            &tokens[0],
        )
        .unwrap();
        let plain1 = bag_log_likelihood(
            &Schema { nodes: vec![0, 2], relaxed: Some(vec![z2, z3]) },
            &bags,
            &tokens[1],
        )
        .unwrap();
        let expect = (plain0 + plain1) / 2.0;
        assert!((g.scalar_value(out) - expect).abs() < 1e-12);
    }

    #[test]
    fn psa_with_empty_schema_is_bitwise_standard_attention() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let rand2 = |r: &mut ChaCha20Rng, n, m| {
            Array2::from_shape_simple_fn((n, m), || r.random::<f64>() - 0.5)
        };
        let q = rand2(&mut rng, 4, 6);
        let k = rand2(&mut rng, 4, 6);
        let v = rand2(&mut rng, 4, 6);
        let we = rand2(&mut rng, 3, 6);
        let mut g = Graph::new();
        let qv = g.constant(q.clone().into_dyn());
        let kv = g.constant(k.clone().into_dyn());
        let vv = g.constant(v.clone().into_dyn());
        let wk = g.constant(we.clone().into_dyn());
        let wv = g.constant(we.into_dyn());
        let psa = psa_attention_on_tape(&mut g, qv, kv, vv, None, wk, wv, None);
        let std = scaled_dot_attention_on_tape(&mut g, qv, kv, vv, None);
        assert_eq!(g.value(psa), g.value(std), "bit-for-bit equality required");
    }

    #[test]
    fn identical_extended_keys_average_the_values() {
        // all rows of K-tilde equal -> uniform attention -> mean of V rows
        let t = 3;
        let d = 4;
        let mut g = Graph::new();
        let q = g.constant(Array2::from_elem((t, d), 0.3).into_dyn());
        let k = g.constant(Array2::from_elem((t, d), 1.0).into_dyn());
        let v = g.constant(
            Array2::from_shape_fn((t, d), |(i, j)| (i * d + j) as f64).into_dyn(),
        );
        let out = scaled_dot_attention_on_tape(&mut g, q, k, v, None);
        let vals = g.value(out);
        for i in 0..t {
            for j in 0..d {
                let mean_col = (0..t).map(|r| (r * d + j) as f64).sum::<f64>() / t as f64;
                assert!((vals[[i, j]] - mean_col).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn psa_output_shape_is_t_by_d_for_any_l() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let rand2 = |r: &mut ChaCha20Rng, n, m| {
            Array2::from_shape_simple_fn((n, m), || r.random::<f64>() - 0.5)
        };
        for l in [1usize, 2, 5] {
            let mut g = Graph::new();
            let q = g.constant(rand2(&mut rng, 4, 6).into_dyn());
            let k = g.constant(rand2(&mut rng, 4, 6).into_dyn());
            let v = g.constant(rand2(&mut rng, 4, 6).into_dyn());
            let z = g.constant(rand2(&mut rng, l, 3).into_dyn());
            let wk = g.constant(rand2(&mut rng, 3, 6).into_dyn());
            let wv = g.constant(rand2(&mut rng, 3, 6).into_dyn());
            let mask = causal_psa_mask(4, l);
            let out = psa_attention_on_tape(&mut g, q, k, v, Some(z), wk, wv, Some(&mask));
            assert_eq!(g.value(out).shape(), &[4, 6]);
        }
    }

    fn toy_decoder() -> (CausalDecoder, ParamStore) {
        let cfg = DecoderConfig {
            mode: DecoderMode::PsaCausal,
            n_layers: 2,
            n_heads: 2,
            width: 16,
            vocab_size: 11,
            k: 4,
            word_dropout: 0.3,
        };
        let dec = CausalDecoder::new(cfg).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        dec.init(&mut store, &mut rng);
        (dec, store)
    }

    #[test]
    fn causal_mask_blocks_future_positions() {
        let (dec, store) = toy_decoder();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let schema = {
            let mut z = Array2::zeros((3, 4));
            z[[0, 1]] = 1.0;
            z[[1, 2]] = 1.0;
            z[[2, 0]] = 1.0;
            z
        };
        // per-position logits via prefix scoring: perturb tokens after i and
        // check the log-prob of position i's target is unchanged
        let mut score_positions = |seq: &[u32]| -> Vec<f64> {
            let mut out = Vec::new();
            for i in 0..seq.len() {
                let mut g = Graph::new();
                let bound = store.bind(&mut g);
                let prefix = &seq[..=i];
                let ll = dec
                    .log_likelihood(&mut g, &bound, prefix, Some(&schema), false, &mut rng)
                    .unwrap();
                out.push(g.scalar_value(ll));
            }
            out
        };
        let a = score_positions(&[1, 2, 3, 4]);
        let b = score_positions(&[1, 2, 9, 9]);
        // prefix log-likelihoods at positions 0 and 1 must agree exactly
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
        assert_ne!(a[3], b[3]);
    }

    #[test]
    fn one_token_vocabulary_has_zero_loss() {
        let cfg = DecoderConfig {
            mode: DecoderMode::PsaCausal,
            n_layers: 1,
            n_heads: 1,
            width: 8,
            vocab_size: 1,
            k: 2,
            word_dropout: 0.0,
        };
        let dec = CausalDecoder::new(cfg).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        dec.init(&mut store, &mut rng);
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let ll = dec
            .log_likelihood(&mut g, &bound, &[0, 0, 0], None, false, &mut rng)
            .unwrap();
        assert!(g.scalar_value(ll).abs() < 1e-12);
    }

    #[test]
    fn word_dropout_replaces_inputs_only_in_training() {
        let (mut dec, store) = toy_decoder();
        dec.cfg.word_dropout = 1.0; // every input token becomes UNK
        let run = |train: bool| {
            let mut g = Graph::new();
            let bound = store.bind(&mut g);
            let mut rng = ChaCha20Rng::seed_from_u64(7);
            let ll = dec
                .log_likelihood(&mut g, &bound, &[1, 2, 3], None, train, &mut rng)
                .unwrap();
            g.scalar_value(ll)
        };
        let with_dropout = run(true);
        let without = run(false);
        assert_ne!(with_dropout, without);
        // full dropout == feeding UNK everywhere after BOS
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let ll_unk = {
            let seq_unk = [1u32, 2, 3];
            // rebuild manually: same as train path when p = 1
            dec.cfg.word_dropout = 1.0;
            dec.log_likelihood(&mut g, &bound, &seq_unk, None, true, &mut rng)
                .unwrap()
        };
        assert!((g.scalar_value(ll_unk) - with_dropout).abs() < 1e-12);
    }

    #[test]
    fn schema_conditioning_changes_the_likelihood() {
        let (dec, store) = toy_decoder();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let z1 = {
            let mut z = Array2::zeros((2, 4));
            z[[0, 0]] = 1.0;
            z[[1, 1]] = 1.0;
            z
        };
        let z2 = {
            let mut z = Array2::zeros((2, 4));
            z[[0, 2]] = 1.0;
            z[[1, 3]] = 1.0;
            z
        };
        let mut run = |schema: Option<&Array2<f64>>| {
            let mut g = Graph::new();
            let bound = store.bind(&mut g);
            let ll = dec
                .log_likelihood(&mut g, &bound, &[4, 5, 6], schema, false, &mut rng)
                .unwrap();
            g.scalar_value(ll)
        };
        let a = run(Some(&z1));
        let b = run(Some(&z2));
        let c = run(None);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
