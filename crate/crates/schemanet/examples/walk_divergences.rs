//! Exact walk-distribution machinery: biased transition matrices, step
//! marginals, walk sampling, and the closed-form KL divergences checked
//! against brute-force enumeration.
//!
//! ```text
//! cargo run --release --example walk_divergences
//! ```

use ndarray::{arr1, Array1};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use schemanet::graph::AdjacencyMatrix;
use schemanet::relaxed::Temperature;
use schemanet::walks::{
    kl_walks, kl_walks_mean_field, transition_matrix, SampleMode, WalkPosteriorParams, WalkPrior,
};

fn main() -> anyhow::Result<()> {
    // a 5-node graph: ring with one chord
    let a = AdjacencyMatrix::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)])?;
    let edges = a.to_matrix();

    // biased transition matrix: node weights tilt the walker toward node 3
    let f = arr1(&[1.0, 1.0, 1.0, 4.0, 1.0]);
    let t = transition_matrix(&f, &edges)?;
    println!("column 2 (from node 2, biased toward 3): {:?}", t.column(2).to_vec());

    // posterior with per-step weights vs the uniform prior
    let q = WalkPosteriorParams {
        rho: arr1(&[0.7, 0.1, 0.1, 0.05, 0.05]),
        f_seq: vec![
            arr1(&[1.0, 3.0, 1.0, 1.0, 1.0]),
            arr1(&[1.0, 1.0, 5.0, 1.0, 1.0]),
            arr1(&[1.0, 1.0, 1.0, 2.0, 2.0]),
        ],
    };
    let p = WalkPrior::uniform(5);
    let kl = kl_walks(&q, &p, &edges)?;
    println!("KL[q; p] over length-4 walks: {:.6} nats", kl.nats);

    // cross-check by enumerating all 5^4 walks
    let qc = q.chain(&edges)?;
    let pc = p.chain(&edges, 4)?;
    let mut brute = 0.0;
    let mut stack: Vec<(Vec<usize>, f64, f64)> =
        (0..5).map(|j| (vec![j], qc.start[j], pc.start[j])).collect();
    for s in 0..3 {
        let mut next = Vec::new();
        for (w, qp, pp) in stack {
            let j = *w.last().unwrap();
            for k in 0..5 {
                let mut w2 = w.clone();
                w2.push(k);
                next.push((
                    w2,
                    qp * qc.step(s).entries()[[k, j]],
                    pp * pc.step(s).entries()[[k, j]],
                ));
            }
        }
        stack = next;
    }
    for (_, qp, pp) in &stack {
        if *qp > 0.0 {
            brute += qp * (qp.ln() - pp.ln());
        }
    }
    println!("enumeration oracle:            {brute:.6} nats (diff {:.2e})", (kl.nats - brute).abs());

    // step marginals evolve from the start distribution
    for (i, m) in qc.step_marginals().iter().enumerate() {
        println!("marginal step {i}: {:?}", m.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    }

    // mean-field variant on a fully-connected support
    let full = ndarray::Array2::<f64>::ones((5, 5));
    let marginals: Vec<Array1<f64>> = qc.step_marginals();
    let mf = kl_walks_mean_field(&marginals, &p, &full)?;
    println!("mean-field KL on fully-connected support: {:.6} nats", mf.nats);

    // sampling: hard walks respect the graph, relaxed walks live on the simplex
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let hard = qc.sample(&mut rng, SampleMode::Hard)?;
    println!("hard walk sample: {:?} (respects graph: {})", hard.nodes, hard.respects_graph(&a));
    let relaxed = qc.sample(&mut rng, SampleMode::Relaxed(Temperature::new(0.75)?))?;
    println!("relaxed walk argmaxes: {:?}", relaxed.nodes);
    Ok(())
}
