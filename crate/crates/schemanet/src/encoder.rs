//! Sequence encoder: token embeddings, a small pre-norm transformer, and a
//! cross-attention readout that turns `T` token states into `L` walk-head
//! vectors of dimension `K`.
//!
//! The readout block uses `L` learnable query vectors attending over the
//! encoded tokens, so the output shape is `(L, K)` for any input length.
//! Head 1 becomes the start distribution (softmax), heads 2..L become the
//! per-step positive node weights (exponential), matching the walk
//! posterior parameterization.

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::params::{BoundParams, ParamStore};
use crate::relaxed::LOGIT_CLAMP;
use crate::walks::WalkPosteriorParams;
use crate::{Error, Result};

/// Encoder hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    /// Number of readout queries == walk length.
    pub walk_len: usize,
    /// Output dimension == node count.
    pub k: usize,
}

impl EncoderConfig {
    /// The synthetic-experiment defaults: 2 blocks, 2 heads, width 256.
    pub fn synthetic(vocab_size: usize, walk_len: usize, k: usize) -> Self {
        EncoderConfig {
            vocab_size,
            embed_dim: 256,
            n_blocks: 2,
            n_heads: 2,
            hidden_dim: 256,
            dropout: 0.2,
            walk_len,
            k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.embed_dim == 0
            || self.n_heads == 0
            || self.hidden_dim == 0
            || self.walk_len == 0
            || self.k == 0
            || self.vocab_size == 0
        {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Sinusoidal positional encoding table, shape `(len, dim)`.
pub fn positional_encoding(len: usize, dim: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((len, dim));
    for pos in 0..len {
        for i in 0..dim {
            let exponent = (2 * (i / 2)) as f64 / dim as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            pe[[pos, i]] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Transformer encoder with a learnable-query readout head.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
}

/// Whether dropout masks are applied (training) or skipped (deterministic
/// evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Encoder { cfg })
    }

    /// Register all encoder parameters: embeddings `N(0, 0.01)`, weight
    /// matrices `N(0, 0.02)`, biases zero, layer-norm gain one.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let e = self.cfg.embed_dim;
        store.seed_normal("enc.embed", &[self.cfg.vocab_size, e], 0.01, rng);
        for b in 0..self.cfg.n_blocks {
            self.init_block(store, &format!("enc.block{b}"), rng);
        }
        self.init_block(store, "enc.readout", rng);
        store.seed_normal("enc.queries", &[self.cfg.walk_len, e], 0.02, rng);
        store.seed_normal("enc.out.w", &[e, self.cfg.k], 0.02, rng);
        store.seed_zeros("enc.out.b", &[self.cfg.k]);
        store.seed_ones("enc.out.ln.g", &[e]);
        store.seed_zeros("enc.out.ln.b", &[e]);
    }

    fn init_block(&self, store: &mut ParamStore, prefix: &str, rng: &mut impl Rng) {
        let e = self.cfg.embed_dim;
        let h = self.cfg.hidden_dim;
        for name in ["wq", "wk", "wv", "wo"] {
            store.seed_normal(&format!("{prefix}.attn.{name}"), &[e, e], 0.02, rng);
            store.seed_zeros(&format!("{prefix}.attn.{name}.b"), &[e]);
        }
        store.seed_ones(&format!("{prefix}.ln1.g"), &[e]);
        store.seed_zeros(&format!("{prefix}.ln1.b"), &[e]);
        store.seed_ones(&format!("{prefix}.ln1kv.g"), &[e]);
        store.seed_zeros(&format!("{prefix}.ln1kv.b"), &[e]);
        store.seed_normal(&format!("{prefix}.ff.w1"), &[e, h], 0.02, rng);
        store.seed_zeros(&format!("{prefix}.ff.b1"), &[h]);
        store.seed_normal(&format!("{prefix}.ff.w2"), &[h, e], 0.02, rng);
        store.seed_zeros(&format!("{prefix}.ff.b2"), &[e]);
        store.seed_ones(&format!("{prefix}.ln2.g"), &[e]);
        store.seed_zeros(&format!("{prefix}.ln2.b"), &[e]);
    }

    /// Embed token ids: table lookup plus sinusoidal positional encoding.
    /// Output shape `(B, T, E)`.
    pub fn embed_tokens(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        tokens: &[Vec<u32>],
    ) -> Result<Var> {
        let b = tokens.len();
        let t = tokens[0].len();
        let mut flat = Vec::with_capacity(b * t);
        for seq in tokens {
            if seq.len() != t {
                return Err(Error::Shape("ragged batch".into()));
            }
            for &id in seq {
                if id as usize >= self.cfg.vocab_size {
                    return Err(Error::Config(format!(
                        "token id {id} outside vocabulary {}",
                        self.cfg.vocab_size
                    )));
                }
                flat.push(id as usize);
            }
        }
        let table = bound.var("enc.embed");
        let looked = g.gather_rows(table, &flat);
        let x = g.reshape(looked, &[b, t, self.cfg.embed_dim]);
        let pe = g.constant(positional_encoding(t, self.cfg.embed_dim).into_dyn());
        Ok(g.add(x, pe))
    }

    /// Full forward pass: `n_blocks` of self-attention over the tokens, one
    /// cross-attention readout with the learnable queries, then a linear
    /// projection to `K`. Output shape `(B, L, K)`.
    pub fn encode(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        tokens: &[Vec<u32>],
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let b = tokens.len();
        if b == 0 || tokens[0].is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let mut x = self.embed_tokens(g, bound, tokens)?;
        for blk in 0..self.cfg.n_blocks {
            let prefix = format!("enc.block{blk}");
            let normed = self.layer_norm(g, bound, x, &format!("{prefix}.ln1"));
            let attn = self.attention(g, bound, &prefix, normed, normed, None, mode, rng);
            let attn = self.dropout(g, attn, mode, rng);
            x = g.add(x, attn);
            let normed = self.layer_norm(g, bound, x, &format!("{prefix}.ln2"));
            let ff = self.feed_forward(g, bound, &prefix, normed);
            let ff = self.dropout(g, ff, mode, rng);
            x = g.add(x, ff);
        }

        // readout: L learnable queries attend over the encoded tokens
        let queries = bound.var("enc.queries");
        let mut q = g.repeat0(queries, b); // (B, L, E)
        let prefix = "enc.readout";
        let qn = self.layer_norm(g, bound, q, &format!("{prefix}.ln1"));
        let kvn = self.layer_norm(g, bound, x, &format!("{prefix}.ln1kv"));
        let attn = self.attention(g, bound, prefix, qn, kvn, None, mode, rng);
        let attn = self.dropout(g, attn, mode, rng);
        q = g.add(q, attn);
        let qn = self.layer_norm(g, bound, q, &format!("{prefix}.ln2"));
        let ff = self.feed_forward(g, bound, prefix, qn);
        let ff = self.dropout(g, ff, mode, rng);
        q = g.add(q, ff);

        // final norm + linear head to K
        let qn = self.layer_norm(g, bound, q, "enc.out.ln");
        let flat = g.reshape(qn, &[b * self.cfg.walk_len, self.cfg.embed_dim]);
        let w = bound.var("enc.out.w");
        let bb = bound.var("enc.out.b");
        let o = g.matmul(flat, w);
        let o = g.add(o, bb);
        Ok(g.reshape(o, &[b, self.cfg.walk_len, self.cfg.k]))
    }

    /// Multi-head scaled dot-product attention. `q_in` is `(B, Tq, E)`,
    /// `kv_in` is `(B, Tk, E)`; optional additive mask `(Tq, Tk)`.
    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        prefix: &str,
        q_in: Var,
        kv_in: Var,
        mask: Option<&Array2<f64>>,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Var {
        let e = self.cfg.embed_dim;
        let h = self.cfg.n_heads;
        let dh = e / h;
        let bq = g.value(q_in).shape()[0];
        let tq = g.value(q_in).shape()[1];
        let tk = g.value(kv_in).shape()[1];

        let proj = |g: &mut Graph, x: Var, t: usize, name: &str| -> Var {
            let w = bound.var(&format!("{prefix}.attn.{name}"));
            let bias = bound.var(&format!("{prefix}.attn.{name}.b"));
            let flat = g.reshape(x, &[bq * t, e]);
            let y = g.matmul(flat, w);
            let y = g.add(y, bias);
            // (B, T, H, dh) -> (B, H, T, dh) -> (B*H, T, dh)
            let y = g.reshape(y, &[bq, t, h, dh]);
            let y = g.permute(y, &[0, 2, 1, 3]);
            g.reshape(y, &[bq * h, t, dh])
        };
        let qh = proj(g, q_in, tq, "wq");
        let kh = proj(g, kv_in, tk, "wk");
        let vh = proj(g, kv_in, tk, "wv");

        let kt = g.permute(kh, &[0, 2, 1]);
        let scores = g.bmm(qh, kt);
        let mut scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        if let Some(m) = mask {
            let mv = g.constant(m.clone().into_dyn());
            scores = g.add(scores, mv);
        }
        let att = g.softmax_last(scores);
        let att = self.dropout(g, att, mode, rng);
        let ctx = g.bmm(att, vh); // (B*H, Tq, dh)
        let ctx = g.reshape(ctx, &[bq, h, tq, dh]);
        let ctx = g.permute(ctx, &[0, 2, 1, 3]);
        let ctx = g.reshape(ctx, &[bq * tq, e]);
        let wo = bound.var(&format!("{prefix}.attn.wo"));
        let bo = bound.var(&format!("{prefix}.attn.wo.b"));
        let out = g.matmul(ctx, wo);
        let out = g.add(out, bo);
        g.reshape(out, &[bq, tq, e])
    }

    fn feed_forward(&self, g: &mut Graph, bound: &BoundParams, prefix: &str, x: Var) -> Var {
        let shape = g.value(x).shape().to_vec();
        let e = self.cfg.embed_dim;
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let flat = g.reshape(x, &[rows, e]);
        let w1 = bound.var(&format!("{prefix}.ff.w1"));
        let b1 = bound.var(&format!("{prefix}.ff.b1"));
        let w2 = bound.var(&format!("{prefix}.ff.w2"));
        let b2 = bound.var(&format!("{prefix}.ff.b2"));
        let y = g.matmul(flat, w1);
        let y = g.add(y, b1);
        let y = g.gelu(y);
        let y = g.matmul(y, w2);
        let y = g.add(y, b2);
        g.reshape(y, &shape)
    }

    fn layer_norm(&self, g: &mut Graph, bound: &BoundParams, x: Var, prefix: &str) -> Var {
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

    fn dropout(&self, g: &mut Graph, x: Var, mode: Mode, rng: &mut impl Rng) -> Var {
        if mode == Mode::Eval || self.cfg.dropout <= 0.0 {
            return x;
        }
        let p = self.cfg.dropout;
        let shape = g.value(x).shape().to_vec();
        let mask = ArrayD::from_shape_simple_fn(IxDyn(&shape), || {
            if rng.random::<f64>() < p {
                0.0
            } else {
                1.0 / (1.0 - p)
            }
        });
        let mv = g.constant(mask);
        g.mul(x, mv)
    }
}

/// Split encoder heads into walk-posterior parameters on the tape:
/// `rho = softmax(h1)` and `f[i] = exp(clamp(h[i+1]))`.
/// `heads` has shape `(B, L, K)`; returns per-batch `(B, K)` vars.
pub struct WalkHeadVars {
    pub rho: Var,
    pub f_seq: Vec<Var>,
}

pub fn to_walk_params_on_tape(g: &mut Graph, heads: Var) -> WalkHeadVars {
    let shape = g.value(heads).shape().to_vec();
    let (b, l, k) = (shape[0], shape[1], shape[2]);
    let h1 = g.narrow(heads, 1, 0, 1);
    let h1 = g.reshape(h1, &[b, k]);
    let rho = g.softmax_last(h1);
    let mut f_seq = Vec::with_capacity(l - 1);
    for i in 1..l {
        let hi = g.narrow(heads, 1, i, 1);
        let hi = g.reshape(hi, &[b, k]);
        let clamped = g.clamp(hi, -LOGIT_CLAMP, LOGIT_CLAMP);
        f_seq.push(g.exp(clamped));
    }
    WalkHeadVars { rho, f_seq }
}

/// Plain-value conversion of one sequence's encoder heads `(L, K)`.
pub fn to_walk_params(heads: &Array2<f64>) -> WalkPosteriorParams {
    let mut g = Graph::new();
    let shape = [1, heads.nrows(), heads.ncols()];
    let hv = g.constant(
        heads
            .clone()
            .into_shape_with_order(IxDyn(&shape))
            .unwrap(),
    );
    let vars = to_walk_params_on_tape(&mut g, hv);
    let rho = Array1::from_iter(g.value(vars.rho).iter().copied());
    let f_seq = vars
        .f_seq
        .iter()
        .map(|&f| Array1::from_iter(g.value(f).iter().copied()))
        .collect();
    WalkPosteriorParams { rho, f_seq }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{finite_difference, max_rel_err};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn tiny() -> (Encoder, ParamStore) {
        let cfg = EncoderConfig {
            vocab_size: 7,
            embed_dim: 8,
            n_blocks: 1,
            n_heads: 2,
            hidden_dim: 8,
            dropout: 0.0,
            walk_len: 2,
            k: 4,
        };
        let enc = Encoder::new(cfg).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        enc.init(&mut store, &mut rng);
        (enc, store)
    }

    #[test]
    fn output_shape_is_walklen_by_k_for_any_input_length() {
        let (enc, store) = tiny();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for t in [1usize, 3, 6] {
            let mut g = Graph::new();
            let bound = store.bind(&mut g);
            let tokens = vec![vec![1u32; t], vec![2u32; t]];
            let out = enc
                .encode(&mut g, &bound, &tokens, Mode::Eval, &mut rng)
                .unwrap();
            assert_eq!(g.value(out).shape(), &[2, 2, 4]);
        }
    }

    #[test]
    fn embedding_rows_match_for_repeated_ids() {
        let (enc, store) = tiny();
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        // same id at positions 0 and 2; embeddings equal before positions
        let tokens = vec![vec![5u32, 1, 5]];
        let table = store.get("enc.embed").unwrap();
        let flat = enc.embed_tokens(&mut g, &bound, &tokens).unwrap();
        let v = g.value(flat);
        let pe = positional_encoding(3, 8);
        for c in 0..8 {
            let raw0 = v[[0, 0, c]] - pe[[0, c]];
            let raw2 = v[[0, 2, c]] - pe[[2, c]];
            assert!((raw0 - raw2).abs() < 1e-12);
            assert!((raw0 - table[[5, c]]).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_token_is_error() {
        let (enc, store) = tiny();
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let res = enc.encode(&mut g, &bound, &[vec![99u32]], Mode::Eval, &mut rng);
        assert!(res.is_err());
    }

    #[test]
    fn embedding_gradient_flows_only_to_used_rows() {
        let (enc, store) = tiny();
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let out = enc
            .encode(&mut g, &bound, &[vec![1u32, 3]], Mode::Eval, &mut rng)
            .unwrap();
        let s = g.sum_all(out);
        let grads = g.backward(s);
        let ge = grads.get(bound.var("enc.embed")).unwrap();
        for row in 0..7 {
            let norm: f64 = (0..8).map(|c| ge[[row, c]].abs()).sum();
            if row == 1 || row == 3 {
                assert!(norm > 0.0, "row {row} should receive gradient");
            } else {
                assert_eq!(norm, 0.0, "row {row} should not receive gradient");
            }
        }
    }

    #[test]
    fn permuting_tokens_changes_output() {
        let (enc, store) = tiny();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let run = |tokens: Vec<u32>| {
            let mut g = Graph::new();
            let bound = store.bind(&mut g);
            let mut r = ChaCha20Rng::seed_from_u64(9);
            let out = enc
                .encode(&mut g, &bound, &[tokens], Mode::Eval, &mut r)
                .unwrap();
            g.value(out).clone()
        };
        let _ = &mut rng;
        let a = run(vec![1, 2, 3]);
        let b = run(vec![2, 1, 3]);
        let diff: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-8, "positional information lost");
    }

    #[test]
    fn dropout_only_active_in_training_mode() {
        let (mut enc, store) = tiny();
        enc.cfg.dropout = 0.5;
        let run = |mode: Mode, seed: u64| {
            let mut g = Graph::new();
            let bound = store.bind(&mut g);
            let mut r = ChaCha20Rng::seed_from_u64(seed);
            let out = enc
                .encode(&mut g, &bound, &[vec![1u32, 2, 3]], mode, &mut r)
                .unwrap();
            g.value(out).clone()
        };
        let e1 = run(Mode::Eval, 1);
        let e2 = run(Mode::Eval, 2);
        assert_eq!(e1, e2, "eval must be deterministic");
        let t1 = run(Mode::Train, 1);
        let t2 = run(Mode::Train, 2);
        assert_ne!(t1, t2, "dropout masks should differ across rng streams");
    }

    #[test]
    fn walk_params_from_zero_heads_are_uniform() {
        let heads = Array2::zeros((3, 5));
        let p = to_walk_params(&heads);
        for v in p.rho.iter() {
            assert!((v - 0.2).abs() < 1e-12);
        }
        for f in &p.f_seq {
            for v in f.iter() {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
        p.validate().unwrap();
    }

    #[test]
    fn walk_params_softmax_is_monotone() {
        let mut heads = Array2::zeros((2, 4));
        heads[[0, 2]] = 0.3;
        let base = to_walk_params(&heads);
        heads[[0, 2]] = 0.8;
        let bumped = to_walk_params(&heads);
        assert!(bumped.rho[2] > base.rho[2]);
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        // tiny config: V=7, T=3, L=2, K=4; loss couples every head
        let (enc, store) = tiny();
        let tokens = vec![vec![1u32, 4, 2], vec![3u32, 3, 0]];
        let loss = |st: &ParamStore| {
            let mut g = Graph::new();
            let bound = st.bind(&mut g);
            let mut rng = ChaCha20Rng::seed_from_u64(0);
            let heads = enc
                .encode(&mut g, &bound, &tokens, Mode::Eval, &mut rng)
                .unwrap();
            let t = g.tanh(heads);
            let sq = g.sqr(t);
            let out = g.sum_all(sq);
            (g, bound, out)
        };
        // check a representative subset of parameters
        for name in [
            "enc.embed",
            "enc.block0.attn.wq",
            "enc.block0.attn.wo.b",
            "enc.block0.ff.w1",
            "enc.block0.ln1.g",
            "enc.queries",
            "enc.readout.attn.wk",
            "enc.out.w",
            "enc.out.b",
        ] {
            let theta0 = store.get(name).unwrap().clone();
            let (mut g, bound, out) = loss(&store);
            let grads = g.backward(out);
            let analytic = grads.get(bound.var(name)).unwrap().clone();
            let numeric = finite_difference(&theta0, |theta| {
                let mut st = store.clone();
                st.insert(name, theta.clone());
                let (g, _, out) = loss(&st);
                g.scalar_value(out)
            }, 1e-5);
            let err = max_rel_err(&analytic, &numeric, 1e-10);
            assert!(err <= 1e-3, "{name}: rel err {err}");
        }
    }
}
