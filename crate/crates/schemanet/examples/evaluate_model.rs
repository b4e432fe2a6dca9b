//! Evaluate a trained run directory against its dataset: recovery report,
//! importance-weighted perplexity, graph-conditional NLL vs the exact
//! oracle, and mutual information.
//!
//! Expects the artifacts of `train_model` (or the `schemanet train` CLI):
//!
//! ```text
//! cargo run --release --example train_model -- runs/example-train
//! cargo run --release --example evaluate_model -- runs/example-train
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use schemanet::eval::{
    mc_nll_given_graph, mc_perplexity, mutual_information, recovery_report, SequenceModel,
};
use schemanet::graph::GraphModelConfig;
use schemanet::objective::{load_checkpoint, HsnModel, ModelConfig, TrainConfig};
use schemanet::synthetic::{build_ground_truth, generate_dataset, hmm_forward_nll};

fn main() -> anyhow::Result<()> {
    let run = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "runs/example-train".to_string());
    let ckpt_path = std::path::Path::new(&run).join("checkpoint_latest.bin");
    if !ckpt_path.exists() {
        anyhow::bail!(
            "no checkpoint at {}; run the train_model example first",
            ckpt_path.display()
        );
    }
    let ckpt = load_checkpoint(&ckpt_path)?;
    let (mcfg, _tcfg): (ModelConfig, TrainConfig) = serde_json::from_str(&ckpt.config_echo)?;

    // regenerate the dataset of the train_model example (same seeds)
    let cfg = GraphModelConfig::barabasi_albert(20, 3);
    let mut spec = build_ground_truth(&cfg, 500, 2, 7)?;
    spec.walk_len = 9;
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let dataset = generate_dataset(&spec, 6000, &mut rng)?;

    let mut model = HsnModel::new(mcfg, spec.bags.clone(), 0)?;
    model.params = ckpt.params;
    model.refresh_prior();

    let mut erng = ChaCha20Rng::seed_from_u64(99);
    let posterior = model.graph_posterior();
    let report = recovery_report(&posterior, &spec.graph, &cfg, 10, 99, &mut erng)?;
    println!("edge ROC AUC:           {:.4}", report.roc_auc);
    println!(
        "Frobenius to truth:     {:.2} (to random {:.2})",
        report.frobenius_to_truth_mean, report.frobenius_to_random_mean
    );
    println!(
        "edges inferred:         {:.1} (truth {})",
        report.edges_inferred_mean, report.edges_truth
    );

    let eval_set = &dataset.test()[..100];
    let oracle: f64 = eval_set
        .iter()
        .map(|s| hmm_forward_nll(&spec, s).unwrap())
        .sum::<f64>()
        / eval_set.len() as f64;
    let nll = mc_nll_given_graph(&model, eval_set, 100, 10, &mut erng)?;
    let ppl = mc_perplexity(&model, eval_set, 100, 10, &mut erng)?;
    let mi = mutual_information(&model, eval_set, &mut erng)?;
    println!("exact oracle NLL:       {oracle:.3} nats/sequence");
    println!("model NLL | graph:      {nll:.3} nats/sequence (importance weighted)");
    println!("model perplexity:       {ppl:.3} per token");
    println!("mutual information:     {mi:.3} nats");
    Ok(())
}
