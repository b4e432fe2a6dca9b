//! Random graph models, adjacency representation and topology statistics.
//!
//! Graphs here are small (at most a few hundred nodes), simple and
//! undirected: the adjacency matrix is stored dense, symmetric, with a zero
//! diagonal. Two generators are provided — the Erdős–Rényi model, where each
//! unordered pair is an edge independently with probability `p`, and a
//! Barabási–Albert preferential-attachment model where each arriving node
//! attaches `m` edges to existing nodes.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use crate::{Error, Result};

/// Symmetric binary relation structure over `K` nodes: zero diagonal,
/// entries in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    size: usize,
    entries: Vec<u8>, // row-major K*K
}

impl AdjacencyMatrix {
    /// Empty graph on `size` nodes.
    pub fn empty(size: usize) -> Self {
        AdjacencyMatrix { size, entries: vec![0; size * size] }
    }

    /// Complete graph on `size` nodes.
    pub fn complete(size: usize) -> Self {
        let mut a = Self::empty(size);
        for i in 0..size {
            for j in 0..size {
                if i != j {
                    a.entries[i * size + j] = 1;
                }
            }
        }
        a
    }

    /// Build from an explicit edge list; indices are validated.
    pub fn from_edges(size: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = Self::empty(size);
        for &(i, j) in edges {
            if i >= size || j >= size {
                return Err(Error::Config(format!(
                    "edge ({i},{j}) out of range for {size} nodes"
                )));
            }
            if i == j {
                return Err(Error::Config(format!("self-loop at node {i}")));
            }
            a.set_edge(i, j, true);
        }
        Ok(a)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.size + j] == 1
    }

    pub fn set_edge(&mut self, i: usize, j: usize, present: bool) {
        assert_ne!(i, j, "no self-loops");
        let v = u8::from(present);
        self.entries[i * self.size + j] = v;
        self.entries[j * self.size + i] = v;
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.size).filter(|&j| self.has_edge(i, j)).count()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.size).filter(move |&j| self.has_edge(i, j))
    }

    /// Total number of (undirected) edges.
    pub fn edge_count(&self) -> usize {
        self.entries.iter().map(|&v| v as usize).sum::<usize>() / 2
    }

    /// Unordered edge list, `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.size {
            for j in (i + 1)..self.size {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Dense float copy (used by walk and posterior machinery).
    pub fn to_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.size, self.size), |(i, j)| {
            f64::from(self.entries[i * self.size + j])
        })
    }

    /// Check the structural invariants: symmetry, zero diagonal, 0/1 entries.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.size {
            if self.entries[i * self.size + i] != 0 {
                return Err(Error::Config(format!("nonzero diagonal at {i}")));
            }
            for j in 0..self.size {
                let v = self.entries[i * self.size + j];
                if v > 1 {
                    return Err(Error::Config(format!("entry ({i},{j}) = {v} not binary")));
                }
                if v != self.entries[j * self.size + i] {
                    return Err(Error::Config(format!("asymmetry at ({i},{j})")));
                }
            }
        }
        Ok(())
    }

    /// Text form: `K` lines of `K` space-separated 0/1 digits.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.size * self.size * 2);
        for i in 0..self.size {
            for j in 0..self.size {
                if j > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{}", self.entries[i * self.size + j]);
            }
            s.push('\n');
        }
        s
    }

    /// Parse the text form produced by [`AdjacencyMatrix::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let size = rows.len();
        let mut entries = Vec::with_capacity(size * size);
        for (lineno, row) in rows.iter().enumerate() {
            let vals: Vec<&str> = row.split_whitespace().collect();
            if vals.len() != size {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected {size} entries, found {}", vals.len()),
                });
            }
            for v in vals {
                match v {
                    "0" => entries.push(0),
                    "1" => entries.push(1),
                    other => {
                        return Err(Error::Parse {
                            line: lineno + 1,
                            msg: format!("expected 0/1, found {other:?}"),
                        })
                    }
                }
            }
        }
        let a = AdjacencyMatrix { size, entries };
        a.validate()?;
        Ok(a)
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Edge-list export (`i j` per line) for external layout tools.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for (i, j) in self.edges() {
            let _ = writeln!(s, "{i} {j}");
        }
        s
    }
}

/// Which random graph family to sample from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphModelKind {
    ErdosRenyi,
    BarabasiAlbert,
}

/// Configuration of a random graph model draw.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GraphModelConfig {
    pub kind: GraphModelKind,
    /// Node count.
    pub k: usize,
    /// Edge probability (Erdős–Rényi only).
    pub p: Option<f64>,
    /// Attachment count (Barabási–Albert only).
    pub m: Option<usize>,
}

impl GraphModelConfig {
    pub fn erdos_renyi(k: usize, p: f64) -> Self {
        GraphModelConfig { kind: GraphModelKind::ErdosRenyi, k, p: Some(p), m: None }
    }

    pub fn barabasi_albert(k: usize, m: usize) -> Self {
        GraphModelConfig { kind: GraphModelKind::BarabasiAlbert, k, p: None, m: Some(m) }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            GraphModelKind::ErdosRenyi => {
                let p = self
                    .p
                    .ok_or_else(|| Error::Config("erdos_renyi requires p".into()))?;
                if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                    return Err(Error::Config(format!("edge probability {p} outside [0,1]")));
                }
            }
            GraphModelKind::BarabasiAlbert => {
                let m = self
                    .m
                    .ok_or_else(|| Error::Config("barabasi_albert requires m".into()))?;
                if m < 1 || m >= self.k {
                    return Err(Error::Config(format!(
                        "attachment count m={m} must satisfy 1 <= m < K={}",
                        self.k
                    )));
                }
            }
        }
        Ok(())
    }

    /// Dispatch to the matching sampler.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<AdjacencyMatrix> {
        match self.kind {
            GraphModelKind::ErdosRenyi => sample_erdos_renyi(self, rng),
            GraphModelKind::BarabasiAlbert => sample_barabasi_albert(self, rng),
        }
    }
}

/// Sample an Erdős–Rényi graph: every unordered pair `{i,j}` is an edge
/// independently with probability `p`.
pub fn sample_erdos_renyi(cfg: &GraphModelConfig, rng: &mut impl Rng) -> Result<AdjacencyMatrix> {
    if cfg.kind != GraphModelKind::ErdosRenyi {
        return Err(Error::Config("config is not erdos_renyi".into()));
    }
    cfg.validate()?;
    let p = cfg.p.unwrap();
    let mut a = AdjacencyMatrix::empty(cfg.k);
    for i in 0..cfg.k {
        for j in (i + 1)..cfg.k {
            if rng.random::<f64>() < p {
                a.set_edge(i, j, true);
            }
        }
    }
    Ok(a)
}

/// Sample a Barabási–Albert graph.
///
/// Seed convention: start from `m` isolated nodes; the first arriving node
/// connects to all of them; each later node attaches to `m` distinct
/// existing nodes chosen with probability proportional to `degree + 1`.
/// The edge count is exactly `(K - m) * m`.
pub fn sample_barabasi_albert(
    cfg: &GraphModelConfig,
    rng: &mut impl Rng,
) -> Result<AdjacencyMatrix> {
    if cfg.kind != GraphModelKind::BarabasiAlbert {
        return Err(Error::Config("config is not barabasi_albert".into()));
    }
    cfg.validate()?;
    let m = cfg.m.unwrap();
    let k = cfg.k;
    let mut a = AdjacencyMatrix::empty(k);
    let mut degrees = vec![0usize; k];
    for new in m..k {
        let mut targets = Vec::with_capacity(m);
        while targets.len() < m {
            // weights: degree + 1 over existing nodes not already chosen
            let total: usize = (0..new)
                .filter(|n| !targets.contains(n))
                .map(|n| degrees[n] + 1)
                .sum();
            let mut draw = rng.random_range(0..total);
            let mut chosen = None;
            for n in (0..new).filter(|n| !targets.contains(n)) {
                let w = degrees[n] + 1;
                if draw < w {
                    chosen = Some(n);
                    break;
                }
                draw -= w;
            }
            targets.push(chosen.expect("weighted draw always lands"));
        }
        for &t in &targets {
            a.set_edge(new, t, true);
            degrees[new] += 1;
            degrees[t] += 1;
        }
    }
    Ok(a)
}

/// Topology summary of a graph.
///
/// `diameter` and `avg_distance` are computed on the largest connected
/// component; `clustering` is the average local clustering coefficient.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GraphStatistics {
    pub diameter: usize,
    pub avg_distance: f64,
    pub clustering: f64,
    pub n_components: usize,
    pub largest_component: usize,
    pub degree_histogram: std::collections::BTreeMap<usize, usize>,
}

fn bfs_distances(a: &AdjacencyMatrix, start: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; a.size()];
    dist[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for v in a.neighbors(u) {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

fn components(a: &AdjacencyMatrix) -> Vec<Vec<usize>> {
    let mut seen = vec![false; a.size()];
    let mut comps = Vec::new();
    for s in 0..a.size() {
        if seen[s] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([s]);
        seen[s] = true;
        while let Some(u) = queue.pop_front() {
            comp.push(u);
            for v in a.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        comps.push(comp);
    }
    comps
}

/// Compute [`GraphStatistics`] via all-pairs BFS.
pub fn graph_statistics(a: &AdjacencyMatrix) -> GraphStatistics {
    let comps = components(a);
    let largest = comps.iter().max_by_key(|c| c.len()).cloned().unwrap_or_default();

    let mut diameter = 0usize;
    let mut dist_sum = 0u64;
    let mut pair_count = 0u64;
    for &u in &largest {
        let dist = bfs_distances(a, u);
        for &v in &largest {
            if v == u {
                continue;
            }
            if let Some(d) = dist[v] {
                diameter = diameter.max(d);
                dist_sum += d as u64;
                pair_count += 1;
            }
        }
    }
    let avg_distance = if pair_count > 0 {
        dist_sum as f64 / pair_count as f64
    } else {
        0.0
    };

    let mut clustering_sum = 0.0;
    for u in 0..a.size() {
        let neigh: Vec<usize> = a.neighbors(u).collect();
        let d = neigh.len();
        if d < 2 {
            continue; // contributes 0
        }
        let mut closed = 0usize;
        for (x, &i) in neigh.iter().enumerate() {
            for &j in &neigh[x + 1..] {
                if a.has_edge(i, j) {
                    closed += 1;
                }
            }
        }
        clustering_sum += closed as f64 / (d * (d - 1) / 2) as f64;
    }
    let clustering = if a.size() > 0 {
        clustering_sum / a.size() as f64
    } else {
        0.0
    };

    let mut degree_histogram = std::collections::BTreeMap::new();
    for u in 0..a.size() {
        *degree_histogram.entry(a.degree(u)).or_insert(0) += 1;
    }

    GraphStatistics {
        diameter,
        avg_distance,
        clustering,
        n_components: comps.len(),
        largest_component: largest.len(),
        degree_histogram,
    }
}

/// Empirical degree distribution `degree -> probability`.
pub fn degree_distribution(a: &AdjacencyMatrix) -> std::collections::BTreeMap<usize, f64> {
    let k = a.size() as f64;
    graph_statistics(a)
        .degree_histogram
        .into_iter()
        .map(|(d, c)| (d, c as f64 / k))
        .collect()
}
