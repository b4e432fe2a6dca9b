//! Topology statistics of the two random graph families: edge counts,
//! diameter, average distance, clustering, components and degree
//! distributions.
//!
//! ```text
//! cargo run --release --example graph_statistics
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use schemanet::graph::{degree_distribution, graph_statistics, GraphModelConfig};

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(0);

    for (label, cfg) in [
        ("Erdos-Renyi K=100 p=0.5", GraphModelConfig::erdos_renyi(100, 0.5)),
        ("Erdos-Renyi K=100 p=0.2", GraphModelConfig::erdos_renyi(100, 0.2)),
        ("Barabasi-Albert K=100 m=3", GraphModelConfig::barabasi_albert(100, 3)),
    ] {
        let a = cfg.sample(&mut rng)?;
        let s = graph_statistics(&a);
        println!(
            "{label}: {} edges, diameter {}, avg distance {:.3}, clustering {:.3}, \
             {} component(s), largest {}",
            a.edge_count(),
            s.diameter,
            s.avg_distance,
            s.clustering,
            s.n_components,
            s.largest_component
        );
        let dd = degree_distribution(&a);
        let (dmin, dmax) = (dd.keys().min().unwrap(), dd.keys().max().unwrap());
        println!("  degree support [{dmin}, {dmax}]");
    }

    // preferential attachment yields hubs: compare max degree to the mean
    let cfg = GraphModelConfig::barabasi_albert(100, 3);
    let mut hubby = 0;
    for _ in 0..100 {
        let a = cfg.sample(&mut rng)?;
        let max_deg = (0..100).map(|i| a.degree(i)).max().unwrap() as f64;
        let mean_deg = 2.0 * a.edge_count() as f64 / 100.0;
        if max_deg > 3.0 * mean_deg {
            hubby += 1;
        }
    }
    println!("\nBA samples with a hub above 3x mean degree: {hubby}/100");
    Ok(())
}
