//! Ground-truth synthetic language generator and its exact likelihood
//! oracle.
//!
//! A synthetic language is a hidden Markov model: a fixed graph `G*` with a
//! bag of tokens (an emission distribution) at each node. Sentences are
//! produced by uniform random walks on `G*` that emit one token from each
//! visited bag, so the exact marginal likelihood of any token sequence is
//! available through the forward algorithm — the yardstick every trained
//! model is measured against.
//!
//! Dataset directory layout:
//!
//! ```text
//! meta.json       vocab/graph/split metadata + content checksum
//! sequences.txt   one sequence per line, space-separated integer ids
//! adjacency.txt   ground-truth graph, 0/1 matrix format
//! bags.json       node -> [[token, prob], ...]
//! tokens.txt      readable id <-> string table
//! ```

use std::path::Path;

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::{AdjacencyMatrix, GraphModelConfig};
use crate::walks::WalkPrior;
use crate::{Error, Result};

/// Emission distribution of one node: tokens with probabilities.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TokenBag(Vec<(u32, f64)>);

impl TokenBag {
    pub fn new(entries: Vec<(u32, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("empty token bag".into()));
        }
        let total: f64 = entries.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("bag probabilities sum to {total}")));
        }
        Ok(TokenBag(entries))
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.0
    }

    /// Emission probability of a token.
    pub fn prob(&self, token: u32) -> f64 {
        self.0
            .iter()
            .find(|(t, _)| *t == token)
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> u32 {
        let mut draw = rng.random::<f64>();
        for &(t, p) in &self.0 {
            if draw < p {
                return t;
            }
            draw -= p;
        }
        self.0.last().unwrap().0
    }
}

/// Complete synthetic language definition: graph, per-node bags, vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthSpec {
    pub graph_cfg: GraphModelConfig,
    #[serde(skip)]
    pub graph: AdjacencyMatrix,
    pub bags: Vec<TokenBag>,
    pub vocab_size: u32,
    pub walk_len: usize,
    pub seed: u64,
}

impl Default for AdjacencyMatrix {
    fn default() -> Self {
        AdjacencyMatrix::empty(0)
    }
}

impl GroundTruthSpec {
    pub fn k(&self) -> usize {
        self.graph.size()
    }

    /// Emission probability matrix, shape `(K,)` per token on demand.
    fn emission_column(&self, token: u32) -> Array1<f64> {
        Array1::from_shape_fn(self.k(), |node| self.bags[node].prob(token))
    }
}

/// Sample the ground-truth language: graph draw, then `bag_size` distinct
/// tokens per node, uniformly from the vocabulary, with equal emission
/// probabilities.
pub fn build_ground_truth(
    cfg: &GraphModelConfig,
    vocab_size: u32,
    bag_size: usize,
    seed: u64,
) -> Result<GroundTruthSpec> {
    if bag_size < 1 {
        return Err(Error::Config("bag_size must be at least 1".into()));
    }
    if (bag_size as u64) > u64::from(vocab_size) {
        return Err(Error::Config(format!(
            "bag_size {bag_size} exceeds vocabulary {vocab_size}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let graph = cfg.sample(&mut rng)?;
    let p = 1.0 / bag_size as f64;
    let bags = (0..graph.size())
        .map(|_| {
            let mut chosen: Vec<u32> = Vec::with_capacity(bag_size);
            while chosen.len() < bag_size {
                let t = rng.random_range(0..vocab_size);
                if !chosen.contains(&t) {
                    chosen.push(t);
                }
            }
            TokenBag::new(chosen.into_iter().map(|t| (t, p)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruthSpec {
        graph_cfg: *cfg,
        graph,
        bags,
        vocab_size,
        walk_len: 0, // set by the caller / dataset generator
        seed,
    })
}

/// Index ranges of the train/valid/test split (disjoint by construction).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: (usize, usize),
    pub valid: (usize, usize),
    pub test: (usize, usize),
}

impl SplitRanges {
    /// The default 90/5/5 split of `n` sequences.
    pub fn default_for(n: usize) -> Self {
        let n_train = n * 90 / 100;
        let n_valid = n * 5 / 100;
        SplitRanges {
            train: (0, n_train),
            valid: (n_train, n_train + n_valid),
            test: (n_train + n_valid, n),
        }
    }
}

/// Token sequences generated from one [`GroundTruthSpec`].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: GroundTruthSpec,
    pub sequences: Vec<Vec<u32>>,
    pub splits: SplitRanges,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.sequences.len()
    }

    pub fn train(&self) -> &[Vec<u32>] {
        &self.sequences[self.splits.train.0..self.splits.train.1]
    }

    pub fn valid(&self) -> &[Vec<u32>] {
        &self.sequences[self.splits.valid.0..self.splits.valid.1]
    }

    pub fn test(&self) -> &[Vec<u32>] {
        &self.sequences[self.splits.test.0..self.splits.test.1]
    }
}

/// Generate `n` sequences: uniform-start, uniform-neighbor walks of length
/// `spec.walk_len` on the ground-truth graph, one token drawn per visited
/// bag. Isolated start nodes fall back to a uniform jump over all nodes.
pub fn generate_dataset(spec: &GroundTruthSpec, n: usize, rng: &mut impl Rng) -> Result<Dataset> {
    if spec.walk_len == 0 {
        return Err(Error::Config("walk_len must be positive".into()));
    }
    if n == 0 {
        return Err(Error::Config("dataset size must be positive".into()));
    }
    let k = spec.k();
    let neighbors: Vec<Vec<usize>> = (0..k).map(|i| spec.graph.neighbors(i).collect()).collect();
    let mut sequences = Vec::with_capacity(n);
    for _ in 0..n {
        let mut node = rng.random_range(0..k);
        let mut seq = Vec::with_capacity(spec.walk_len);
        seq.push(spec.bags[node].sample(rng));
        for _ in 1..spec.walk_len {
            node = if neighbors[node].is_empty() {
                rng.random_range(0..k)
            } else {
                neighbors[node][rng.random_range(0..neighbors[node].len())]
            };
            seq.push(spec.bags[node].sample(rng));
        }
        sequences.push(seq);
    }
    Ok(Dataset {
        spec: spec.clone(),
        splits: SplitRanges::default_for(sequences.len()),
        sequences,
    })
}

/// Exact negative log-likelihood of a sequence under the ground-truth HMM,
/// computed with the scaled forward algorithm. Returns `+inf` when the
/// sequence is not generable by the spec.
pub fn hmm_forward_nll(spec: &GroundTruthSpec, sequence: &[u32]) -> Result<f64> {
    if sequence.len() != spec.walk_len {
        return Err(Error::Shape(format!(
            "sequence length {} vs walk length {}",
            sequence.len(),
            spec.walk_len
        )));
    }
    let k = spec.k();
    let prior = WalkPrior::uniform(k);
    let chain = prior.chain(&spec.graph.to_matrix(), sequence.len())?;

    // alpha kept normalized; log normalizers accumulate into the NLL
    let mut alpha: Array1<f64> = &chain.start * &spec.emission_column(sequence[0]);
    let mut log_lik = 0.0;
    let c0 = alpha.sum();
    if c0 <= 0.0 {
        return Ok(f64::INFINITY);
    }
    alpha /= c0;
    log_lik += c0.ln();
    for (i, &tok) in sequence.iter().enumerate().skip(1) {
        let propagated = chain.step(i - 1).entries().dot(&alpha);
        alpha = &propagated * &spec.emission_column(tok);
        let c = alpha.sum();
        if c <= 0.0 {
            return Ok(f64::INFINITY);
        }
        alpha /= c;
        log_lik += c.ln();
    }
    Ok(-log_lik)
}

// ---------------------------------------------------------------------------
// directory round trip
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct MetaFile {
    vocab_size: u32,
    k: usize,
    walk_len: usize,
    n: usize,
    graph: GraphModelConfig,
    seed: u64,
    splits: SplitRanges,
    checksum: String,
}

fn content_checksum(sequences: &str, adjacency: &str, bags: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(sequences.as_bytes());
    hasher.update(adjacency.as_bytes());
    hasher.update(bags.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic readable token table: distinct 3-letter lowercase strings.
pub fn token_strings(vocab_size: u32, seed: u64) -> Vec<String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x746f_6b65_6e73);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(vocab_size as usize);
    while out.len() < vocab_size as usize {
        let s: String = (0..3)
            .map(|_| (b'a' + rng.random_range(0..26u8)) as char)
            .collect();
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

/// Write the dataset directory; see the module docs for the layout.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut seq_text = String::new();
    for seq in &dataset.sequences {
        let line: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
        seq_text.push_str(&line.join(" "));
        seq_text.push('\n');
    }
    let adj_text = dataset.spec.graph.to_text();
    let bags_json = serde_json::to_string_pretty(&dataset.spec.bags)?;

    let meta = MetaFile {
        vocab_size: dataset.spec.vocab_size,
        k: dataset.spec.k(),
        walk_len: dataset.spec.walk_len,
        n: dataset.n(),
        graph: dataset.spec.graph_cfg,
        seed: dataset.spec.seed,
        splits: dataset.splits,
        checksum: content_checksum(&seq_text, &adj_text, &bags_json),
    };
    std::fs::write(dir.join("sequences.txt"), seq_text)?;
    std::fs::write(dir.join("adjacency.txt"), adj_text)?;
    std::fs::write(dir.join("bags.json"), bags_json)?;
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;

    let tokens = token_strings(dataset.spec.vocab_size, dataset.spec.seed);
    let mut tok_text = String::new();
    for (id, s) in tokens.iter().enumerate() {
        tok_text.push_str(&format!("{id} {s}\n"));
    }
    std::fs::write(dir.join("tokens.txt"), tok_text)?;
    Ok(())
}

/// Read a dataset directory back, verifying the content checksum.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta: MetaFile = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
    let seq_text = std::fs::read_to_string(dir.join("sequences.txt"))?;
    let adj_text = std::fs::read_to_string(dir.join("adjacency.txt"))?;
    let bags_json = std::fs::read_to_string(dir.join("bags.json"))?;

    let checksum = content_checksum(&seq_text, &adj_text, &bags_json);
    if checksum != meta.checksum {
        return Err(Error::Integrity(format!(
            "checksum mismatch: meta {} vs content {checksum}",
            meta.checksum
        )));
    }

    let graph = AdjacencyMatrix::from_text(&adj_text)?;
    if graph.size() != meta.k {
        return Err(Error::Integrity(format!(
            "adjacency size {} vs meta K {}",
            graph.size(),
            meta.k
        )));
    }
    let bags: Vec<TokenBag> = serde_json::from_str(&bags_json)?;
    if bags.len() != meta.k {
        return Err(Error::Integrity(format!("{} bags for K={}", bags.len(), meta.k)));
    }

    let mut sequences = Vec::with_capacity(meta.n);
    for (lineno, line) in seq_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let seq = line
            .split_whitespace()
            .map(|t| {
                t.parse::<u32>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    msg: format!("bad token id {t:?}: {e}"),
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        if seq.len() != meta.walk_len {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected {} tokens, found {}", meta.walk_len, seq.len()),
            });
        }
        if let Some(&bad) = seq.iter().find(|&&t| t >= meta.vocab_size) {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("token id {bad} outside vocabulary {}", meta.vocab_size),
            });
        }
        sequences.push(seq);
    }
    if sequences.len() != meta.n {
        return Err(Error::Parse {
            line: sequences.len(),
            msg: format!("expected {} sequences, found {}", meta.n, sequences.len()),
        });
    }

    Ok(Dataset {
        spec: GroundTruthSpec {
            graph_cfg: meta.graph,
            graph,
            bags,
            vocab_size: meta.vocab_size,
            walk_len: meta.walk_len,
            seed: meta.seed,
        },
        sequences,
        splits: meta.splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphModelKind;
    use proptest::prelude::*;

    fn tiny_spec(seed: u64) -> GroundTruthSpec {
        let cfg = GraphModelConfig::erdos_renyi(4, 0.7);
        let mut spec = build_ground_truth(&cfg, 12, 2, seed).unwrap();
        spec.walk_len = 3;
        spec
    }

    /// Enumeration oracle: marginal likelihood as a sum over all walks.
    fn enumeration_nll(spec: &GroundTruthSpec, seq: &[u32]) -> f64 {
        let k = spec.k();
        let chain = WalkPrior::uniform(k)
            .chain(&spec.graph.to_matrix(), seq.len())
            .unwrap();
        let mut walks: Vec<(usize, f64)> = (0..k)
            .map(|j| (j, chain.start[j] * spec.bags[j].prob(seq[0])))
            .collect();
        for (i, &tok) in seq.iter().enumerate().skip(1) {
            let mut next: Vec<(usize, f64)> = Vec::new();
            for kk in 0..k {
                let mut mass = 0.0;
                for &(j, p) in &walks {
                    mass += p * chain.step(i - 1).entries()[[kk, j]];
                }
                next.push((kk, mass * spec.bags[kk].prob(tok)));
            }
            walks = next;
        }
        let total: f64 = walks.iter().map(|(_, p)| p).sum();
        -total.ln()
    }

    #[test]
    fn bags_have_requested_size_and_probabilities() {
        let cfg = GraphModelConfig::erdos_renyi(10, 0.5);
        let spec = build_ground_truth(&cfg, 1000, 2, 7).unwrap();
        for bag in &spec.bags {
            assert_eq!(bag.entries().len(), 2);
            for &(t, p) in bag.entries() {
                assert!(t < 1000);
                assert!((p - 0.5).abs() < 1e-12);
            }
            assert_ne!(bag.entries()[0].0, bag.entries()[1].0);
        }
    }

    #[test]
    fn single_token_bags_are_deterministic() {
        let cfg = GraphModelConfig::erdos_renyi(5, 0.5);
        let spec = build_ground_truth(&cfg, 100, 1, 3).unwrap();
        for bag in &spec.bags {
            assert_eq!(bag.entries().len(), 1);
            assert!((bag.entries()[0].1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_bags_rejected() {
        let cfg = GraphModelConfig::erdos_renyi(5, 0.5);
        assert!(build_ground_truth(&cfg, 3, 4, 0).is_err());
    }

    #[test]
    fn seeds_reproduce_identical_specs() {
        let cfg = GraphModelConfig::barabasi_albert(20, 3);
        let a = build_ground_truth(&cfg, 200, 2, 99).unwrap();
        let b = build_ground_truth(&cfg, 200, 2, 99).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.bags, b.bags);
    }

    #[test]
    fn single_node_language_repeats_its_token() {
        let cfg = GraphModelConfig::erdos_renyi(1, 0.5);
        let mut spec = build_ground_truth(&cfg, 10, 1, 0).unwrap();
        spec.walk_len = 3;
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let ds = generate_dataset(&spec, 20, &mut rng).unwrap();
        let t = spec.bags[0].entries()[0].0;
        for seq in &ds.sequences {
            assert_eq!(seq, &vec![t, t, t]);
        }
    }

    #[test]
    fn dataset_shape_and_split_disjointness() {
        let cfg = GraphModelConfig::barabasi_albert(12, 3);
        let mut spec = build_ground_truth(&cfg, 120, 2, 5).unwrap();
        spec.walk_len = 6;
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let ds = generate_dataset(&spec, 1000, &mut rng).unwrap();
        assert_eq!(ds.n(), 1000);
        assert!(ds.sequences.iter().all(|s| s.len() == 6));
        assert_eq!(ds.train().len(), 900);
        assert_eq!(ds.valid().len(), 50);
        assert_eq!(ds.test().len(), 50);
        assert_eq!(ds.splits.train.1, ds.splits.valid.0);
        assert_eq!(ds.splits.valid.1, ds.splits.test.0);
    }

    #[test]
    fn unigram_distribution_matches_oracle_marginal() {
        let cfg = GraphModelConfig::barabasi_albert(10, 2);
        let mut spec = build_ground_truth(&cfg, 50, 2, 11).unwrap();
        spec.walk_len = 5;
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let n = 100_000;
        let ds = generate_dataset(&spec, n, &mut rng).unwrap();

        // oracle: average over steps of (node marginal x emission)
        let chain = WalkPrior::uniform(10)
            .chain(&spec.graph.to_matrix(), 5)
            .unwrap();
        let marginals = chain.step_marginals();
        let mut oracle = vec![0.0f64; 50];
        for m in &marginals {
            for (node, &pm) in m.iter().enumerate() {
                for &(t, pe) in spec.bags[node].entries() {
                    oracle[t as usize] += pm * pe / marginals.len() as f64;
                }
            }
        }
        let mut empirical = vec![0.0f64; 50];
        for seq in &ds.sequences {
            for &t in seq {
                empirical[t as usize] += 1.0 / (n * 5) as f64;
            }
        }
        let tv: f64 = oracle
            .iter()
            .zip(empirical.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.01, "total variation {tv}");
    }

    #[test]
    fn forward_nll_on_single_node_two_token_bag() {
        let cfg = GraphModelConfig::erdos_renyi(1, 0.5);
        let mut spec = build_ground_truth(&cfg, 2, 2, 0).unwrap();
        spec.walk_len = 3;
        let t = spec.bags[0].entries()[0].0;
        let nll = hmm_forward_nll(&spec, &[t, t, t]).unwrap();
        assert!((nll - 3.0 * std::f64::consts::LN_2).abs() < 1e-12, "{nll}");
    }

    #[test]
    fn forward_nll_matches_enumeration() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for seed in 0..20 {
            let spec = tiny_spec(seed);
            let ds = generate_dataset(&spec, 3, &mut rng).unwrap();
            for seq in &ds.sequences {
                let fwd = hmm_forward_nll(&spec, seq).unwrap();
                let oracle = enumeration_nll(&spec, seq);
                assert!((fwd - oracle).abs() <= 1e-9, "{fwd} vs {oracle}");
            }
        }
    }

    #[test]
    fn ungenerable_sequence_has_infinite_nll() {
        let spec = tiny_spec(0);
        // token 11 may belong to some bag; build a token guaranteed absent
        let absent = (0..12u32)
            .find(|t| spec.bags.iter().all(|b| b.prob(*t) == 0.0));
        if let Some(tok) = absent {
            let nll = hmm_forward_nll(&spec, &[tok, tok, tok]).unwrap();
            assert!(nll.is_infinite());
        }
    }

    #[test]
    fn generated_sequences_always_have_finite_nll() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for seed in 0..5 {
            let cfg = GraphModelConfig::barabasi_albert(8, 2);
            let mut spec = build_ground_truth(&cfg, 30, 2, seed).unwrap();
            spec.walk_len = 4;
            let ds = generate_dataset(&spec, 50, &mut rng).unwrap();
            for seq in &ds.sequences {
                assert!(hmm_forward_nll(&spec, seq).unwrap().is_finite());
            }
        }
    }

    #[test]
    fn directory_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GraphModelConfig::barabasi_albert(10, 2);
        let mut spec = build_ground_truth(&cfg, 40, 2, 8).unwrap();
        spec.walk_len = 4;
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let ds = generate_dataset(&spec, 200, &mut rng).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.sequences, ds.sequences);
        assert_eq!(back.spec.graph, ds.spec.graph);
        assert_eq!(back.spec.bags, ds.spec.bags);
        assert_eq!(back.splits, ds.splits);
        assert_eq!(back.spec.graph_cfg.kind, GraphModelKind::BarabasiAlbert);
    }

    #[test]
    fn truncated_sequences_file_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let spec = {
            let mut s = tiny_spec(1);
            s.walk_len = 3;
            s
        };
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let ds = generate_dataset(&spec, 10, &mut rng).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        // truncate and fix the checksum so only the parse error fires
        let seq_path = dir.path().join("sequences.txt");
        let text = std::fs::read_to_string(&seq_path).unwrap();
        let truncated: String = text.lines().take(5).collect::<Vec<_>>().join("\n") + "\n";
        std::fs::write(&seq_path, &truncated).unwrap();
        let meta_path = dir.path().join("meta.json");
        let mut meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&meta_path).unwrap()).unwrap();
        let adj = std::fs::read_to_string(dir.path().join("adjacency.txt")).unwrap();
        let bags = std::fs::read_to_string(dir.path().join("bags.json")).unwrap();
        meta["checksum"] = serde_json::Value::String(content_checksum(&truncated, &adj, &bags));
        std::fs::write(&meta_path, serde_json::to_string(&meta).unwrap()).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err:?}");
    }

    #[test]
    fn checksum_mismatch_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let spec = {
            let mut s = tiny_spec(2);
            s.walk_len = 3;
            s
        };
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let ds = generate_dataset(&spec, 10, &mut rng).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        // tamper with one token
        let seq_path = dir.path().join("sequences.txt");
        let text = std::fs::read_to_string(&seq_path).unwrap();
        std::fs::write(&seq_path, text.replacen(' ', "  ", 1)).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err:?}");
    }

    #[test]
    fn token_table_is_distinct_and_stable() {
        let a = token_strings(500, 3);
        let b = token_strings(500, 3);
        assert_eq!(a, b);
        let set: std::collections::HashSet<&String> = a.iter().collect();
        assert_eq!(set.len(), 500);
        assert!(a.iter().all(|s| s.len() == 3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn forward_equals_enumeration_on_random_specs(
            seed in 0u64..1000,
            k in 2usize..6,
            l in 1usize..5,
            pct in 0.2f64..0.9,
        ) {
            let cfg = GraphModelConfig::erdos_renyi(k, pct);
            let mut spec = build_ground_truth(&cfg, 10, 2, seed).unwrap();
            spec.walk_len = l;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let ds = generate_dataset(&spec, 2, &mut rng).unwrap();
            for seq in &ds.sequences {
                let fwd = hmm_forward_nll(&spec, seq).unwrap();
                let oracle = enumeration_nll(&spec, seq);
                prop_assert!((fwd - oracle).abs() <= 1e-9);
            }
        }
    }
}
