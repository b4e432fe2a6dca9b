//! Command-line entry points: dataset generation, training, evaluation and
//! graph statistics, each leaving a reproducible run manifest behind.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use schemanet::decoder::DecoderMode;
use schemanet::eval::{
    degree_distribution_csv, mc_nll_given_graph, mc_perplexity, mutual_information,
    recovery_report, SequenceModel,
};
use schemanet::graph::{graph_statistics, AdjacencyMatrix, GraphModelConfig};
use schemanet::objective::{
    load_checkpoint, train, AdamState, HsnModel, ModelConfig, TrainConfig,
};
use schemanet::run::{
    apply_flat_to_train_config, parse_flat_config, train_config_to_flat, RunLock, RunManifest,
};
use schemanet::synthetic::{build_ground_truth, generate_dataset, hmm_forward_nll, read_dataset, write_dataset};

const EXIT_USAGE: u8 = 2;
const EXIT_MISSING_DATA: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;
const EXIT_CHECKPOINT_MISMATCH: u8 = 5;

#[derive(Parser)]
#[command(name = "schemanet", version, about = "Latent schema-network inference")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphKind {
    Erdos,
    Barabasi,
}

#[derive(Subcommand)]
enum Commands {
    /// Generate a synthetic dataset with a known ground-truth graph.
    GenData {
        #[arg(long, value_enum)]
        graph: GraphKind,
        #[arg(long = "K")]
        k: usize,
        /// Edge probability (erdos).
        #[arg(long)]
        p: Option<f64>,
        /// Attachment count (barabasi).
        #[arg(long)]
        m: Option<usize>,
        #[arg(long = "V", default_value_t = 1000)]
        vocab: u32,
        #[arg(long = "L")]
        walk_len: usize,
        #[arg(long = "N")]
        n: usize,
        #[arg(long, default_value_t = 2)]
        bag_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Flat key-value config file (flags override it).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        prior_p: Option<f64>,
        #[arg(long)]
        cycles: Option<usize>,
        #[arg(long)]
        ramp: Option<f64>,
        #[arg(long)]
        kl_threshold: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        #[arg(long)]
        embed_dim: Option<usize>,
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long)]
        heads: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        scorer_hidden: Option<usize>,
        #[arg(long, default_value_t = false)]
        trainable_prior: bool,
        /// Resume from the run directory's latest checkpoint.
        #[arg(long, default_value_t = false)]
        resume: bool,
    },
    /// Evaluate a trained checkpoint: graph recovery, likelihood, MI.
    Eval {
        /// Run directory containing `checkpoint_latest.bin`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "R", default_value_t = 100)]
        r: usize,
        #[arg(long = "S", default_value_t = 10)]
        s: usize,
        #[arg(long, default_value_t = 500)]
        stats_samples: usize,
        /// Number of evaluation sequences (test split prefix).
        #[arg(long, default_value_t = 256)]
        eval_sequences: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Topology statistics of a graph in the adjacency text format.
    GraphStats {
        #[arg(long)]
        input: PathBuf,
        /// Optional JSON output path (stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write an `i j` edge-list export next to the input.
        #[arg(long, default_value_t = false)]
        edge_list: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError { code, msg }) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

struct CmdError {
    code: u8,
    msg: String,
}

impl CmdError {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        CmdError { code, msg: msg.into() }
    }
}

impl From<schemanet::Error> for CmdError {
    fn from(e: schemanet::Error) -> Self {
        let code = match &e {
            schemanet::Error::Config(_) => EXIT_USAGE,
            schemanet::Error::Numeric(_) => EXIT_DIVERGENCE,
            schemanet::Error::Checkpoint(_) => EXIT_CHECKPOINT_MISMATCH,
            _ => 1,
        };
        CmdError::new(code, e.to_string())
    }
}

fn dispatch(cli: Cli) -> Result<(), CmdError> {
    match cli.command {
        Commands::GenData { graph, k, p, m, vocab, walk_len, n, bag_size, seed, out } => {
            cmd_gen_data(graph, k, p, m, vocab, walk_len, n, bag_size, seed, &out)
        }
        Commands::Train {
            data,
            out,
            config,
            batch_size,
            lr,
            epochs,
            tau,
            prior_p,
            cycles,
            ramp,
            kl_threshold,
            seed,
            checkpoint_every,
            embed_dim,
            blocks,
            heads,
            hidden,
            dropout,
            scorer_hidden,
            trainable_prior,
            resume,
        } => {
            let overrides = TrainOverrides {
                batch_size,
                lr,
                epochs,
                tau,
                prior_p,
                cycles,
                ramp,
                kl_threshold,
                seed,
                checkpoint_every,
                embed_dim,
                blocks,
                heads,
                hidden,
                dropout,
                scorer_hidden,
                trainable_prior,
                resume,
            };
            cmd_train(&data, &out, config.as_deref(), &overrides)
        }
        Commands::Eval { run, data, out, r, s, stats_samples, eval_sequences, seed } => {
            cmd_eval(&run, &data, out.as_deref(), r, s, stats_samples, eval_sequences, seed)
        }
        Commands::GraphStats { input, out, edge_list } => {
            cmd_graph_stats(&input, out.as_deref(), edge_list)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_data(
    graph: GraphKind,
    k: usize,
    p: Option<f64>,
    m: Option<usize>,
    vocab: u32,
    walk_len: usize,
    n: usize,
    bag_size: usize,
    seed: u64,
    out: &std::path::Path,
) -> Result<(), CmdError> {
    if n == 0 {
        return Err(CmdError::new(EXIT_USAGE, "--N must be positive"));
    }
    if walk_len == 0 {
        return Err(CmdError::new(EXIT_USAGE, "--L must be positive"));
    }
    let cfg = match graph {
        GraphKind::Erdos => {
            let p = p.ok_or_else(|| CmdError::new(EXIT_USAGE, "--graph erdos requires --p"))?;
            GraphModelConfig::erdos_renyi(k, p)
        }
        GraphKind::Barabasi => {
            let m =
                m.ok_or_else(|| CmdError::new(EXIT_USAGE, "--graph barabasi requires --m"))?;
            GraphModelConfig::barabasi_albert(k, m)
        }
    };
    cfg.validate().map_err(CmdError::from)?;
    let mut spec = build_ground_truth(&cfg, vocab, bag_size, seed)?;
    spec.walk_len = walk_len;
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(1));
    let dataset = generate_dataset(&spec, n, &mut rng)?;
    write_dataset(&dataset, out)?;
    let manifest = RunManifest::new(
        "gen-data",
        serde_json::json!({
            "graph": cfg, "V": vocab, "L": walk_len, "N": n, "bag_size": bag_size,
        }),
        seed,
    );
    manifest.write(out)?;
    println!(
        "wrote {} sequences (K={}, V={vocab}, L={walk_len}, {} edges) to {}",
        dataset.n(),
        k,
        dataset.spec.graph.edge_count(),
        out.display()
    );
    Ok(())
}

struct TrainOverrides {
    batch_size: Option<usize>,
    lr: Option<f64>,
    epochs: Option<usize>,
    tau: Option<f64>,
    prior_p: Option<f64>,
    cycles: Option<usize>,
    ramp: Option<f64>,
    kl_threshold: Option<f64>,
    seed: Option<u64>,
    checkpoint_every: Option<usize>,
    embed_dim: Option<usize>,
    blocks: Option<usize>,
    heads: Option<usize>,
    hidden: Option<usize>,
    dropout: Option<f64>,
    scorer_hidden: Option<usize>,
    trainable_prior: bool,
    resume: bool,
}

fn cmd_train(
    data: &std::path::Path,
    out: &std::path::Path,
    config: Option<&std::path::Path>,
    ov: &TrainOverrides,
) -> Result<(), CmdError> {
    if !data.join("meta.json").exists() {
        return Err(CmdError::new(
            EXIT_MISSING_DATA,
            format!("no dataset at {}", data.display()),
        ));
    }
    let dataset =
        read_dataset(data).map_err(|e| CmdError::new(EXIT_MISSING_DATA, e.to_string()))?;

    let mut tcfg = TrainConfig::default();
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CmdError::new(EXIT_USAGE, format!("config file: {e}")))?;
        let map = parse_flat_config(&text)?;
        apply_flat_to_train_config(&mut tcfg, &map)?;
    }
    if let Some(v) = ov.batch_size {
        tcfg.batch_size = v;
    }
    if let Some(v) = ov.lr {
        tcfg.learning_rate = v;
    }
    if let Some(v) = ov.epochs {
        tcfg.epochs = v;
    }
    if let Some(v) = ov.tau {
        tcfg.tau = v;
    }
    if let Some(v) = ov.prior_p {
        tcfg.prior_edge_prob = v;
    }
    if let Some(v) = ov.cycles {
        tcfg.anneal_cycles = v;
    }
    if let Some(v) = ov.ramp {
        tcfg.ramp_fraction = v;
    }
    if let Some(v) = ov.kl_threshold {
        tcfg.kl_threshold = v;
    }
    if let Some(v) = ov.seed {
        tcfg.seed = v;
    }
    if let Some(v) = ov.checkpoint_every {
        tcfg.checkpoint_every = v;
    }
    tcfg.validate()?;

    let mut mcfg = ModelConfig::synthetic(
        dataset.spec.k(),
        dataset.spec.walk_len,
        dataset.spec.vocab_size as usize,
    );
    mcfg.prior_edge_prob = tcfg.prior_edge_prob;
    mcfg.trainable_prior = ov.trainable_prior;
    mcfg.decoder_mode = DecoderMode::BagEmission;
    if let Some(v) = ov.embed_dim {
        mcfg.embed_dim = v;
    }
    if let Some(v) = ov.blocks {
        mcfg.n_blocks = v;
    }
    if let Some(v) = ov.heads {
        mcfg.n_heads = v;
    }
    if let Some(v) = ov.hidden {
        mcfg.hidden_dim = v;
    }
    if let Some(v) = ov.dropout {
        mcfg.dropout = v;
    }
    if let Some(v) = ov.scorer_hidden {
        mcfg.scorer_hidden = v;
    }

    let _lock = RunLock::acquire(out)?;
    let mut model = HsnModel::new(mcfg.clone(), dataset.spec.bags.clone(), tcfg.seed)?;
    let mut adam = AdamState::new();
    let mut start_epoch = 0;
    if ov.resume {
        let ckpt_path = out.join("checkpoint_latest.bin");
        let ckpt = load_checkpoint(&ckpt_path)
            .map_err(|e| CmdError::new(EXIT_CHECKPOINT_MISMATCH, e.to_string()))?;
        let expected = serde_json::to_string(&(&mcfg, &tcfg)).unwrap();
        if ckpt.config_echo != expected {
            return Err(CmdError::new(
                EXIT_CHECKPOINT_MISMATCH,
                "checkpoint config does not match the requested run",
            ));
        }
        model.params = ckpt.params;
        model.refresh_prior();
        adam = ckpt.adam;
        start_epoch = ckpt.epoch;
    } else {
        let manifest = RunManifest::new(
            "train",
            serde_json::json!({
                "model": &mcfg,
                "train": &tcfg,
                "dataset": data.display().to_string(),
            }),
            tcfg.seed,
        );
        manifest.write(out)?;
        std::fs::write(out.join("config.txt"), train_config_to_flat(&tcfg))
            .map_err(schemanet::Error::from)?;
    }

    let truth = dataset.spec.graph.clone();
    let history = train(
        &mut model,
        &mut adam,
        &dataset,
        &tcfg,
        start_epoch,
        None,
        Some(&truth),
        Some(out),
    )
    .map_err(|e| match e {
        schemanet::Error::Numeric(msg) => CmdError::new(EXIT_DIVERGENCE, msg),
        other => other.into(),
    })?;
    if let Some(last) = history.last() {
        println!(
            "trained to epoch {}: rec_nll {:.3}, kl_walk {:.3}, kl_graph {:.3}, auc {}",
            last.epoch,
            last.rec_nll,
            last.kl_walk,
            last.kl_graph,
            last.auc.map_or("n/a".into(), |a| format!("{a:.4}")),
        );
    }
    println!("metrics: {}", out.join("metrics.csv").display());
    println!("checkpoint: {}", out.join("checkpoint_latest.bin").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    run: &std::path::Path,
    data: &std::path::Path,
    out: Option<&std::path::Path>,
    r: usize,
    s: usize,
    stats_samples: usize,
    eval_sequences: usize,
    seed: u64,
) -> Result<(), CmdError> {
    if !data.join("meta.json").exists() {
        return Err(CmdError::new(
            EXIT_MISSING_DATA,
            format!("no dataset at {}", data.display()),
        ));
    }
    let dataset =
        read_dataset(data).map_err(|e| CmdError::new(EXIT_MISSING_DATA, e.to_string()))?;
    let ckpt_path = run.join("checkpoint_latest.bin");
    let ckpt = load_checkpoint(&ckpt_path)
        .map_err(|e| CmdError::new(EXIT_CHECKPOINT_MISMATCH, e.to_string()))?;
    let (mcfg, _tcfg): (ModelConfig, TrainConfig) = serde_json::from_str(&ckpt.config_echo)
        .map_err(|e| CmdError::new(EXIT_CHECKPOINT_MISMATCH, format!("bad config echo: {e}")))?;
    if mcfg.k != dataset.spec.k()
        || mcfg.walk_len != dataset.spec.walk_len
        || mcfg.vocab_size != dataset.spec.vocab_size as usize
    {
        return Err(CmdError::new(
            EXIT_CHECKPOINT_MISMATCH,
            format!(
                "checkpoint (K={}, L={}, V={}) does not match dataset (K={}, L={}, V={})",
                mcfg.k,
                mcfg.walk_len,
                mcfg.vocab_size,
                dataset.spec.k(),
                dataset.spec.walk_len,
                dataset.spec.vocab_size
            ),
        ));
    }
    let mut model = HsnModel::new(mcfg.clone(), dataset.spec.bags.clone(), seed)?;
    model.params = ckpt.params;
    model.refresh_prior();

    let out_dir = out.map(PathBuf::from).unwrap_or_else(|| run.join("eval"));
    std::fs::create_dir_all(&out_dir).map_err(schemanet::Error::from)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let posterior = model.graph_posterior();
    let report = recovery_report(
        &posterior,
        &dataset.spec.graph,
        &dataset.spec.graph_cfg,
        10,
        seed,
        &mut rng,
    )?;
    let test = dataset.test();
    let take = eval_sequences.min(test.len()).max(1);
    let eval_set = &test[..take];
    let ppl = mc_perplexity(&model, eval_set, r, s, &mut rng)?;
    let nll = mc_nll_given_graph(&model, eval_set, r, s, &mut rng)?;
    let oracle_nll: f64 = eval_set
        .iter()
        .map(|q| hmm_forward_nll(&dataset.spec, q).unwrap_or(f64::INFINITY))
        .sum::<f64>()
        / eval_set.len() as f64;
    let mi = mutual_information(&model, eval_set, &mut rng)?;
    let sample = posterior.sample_hard(&mut rng);
    let stats = graph_statistics(&sample);

    let report_json = serde_json::json!({
        "recovery": report,
        "perplexity": ppl,
        "nll_given_graph": nll,
        "oracle_nll": oracle_nll,
        "mutual_information": mi,
        "graph_statistics": stats,
        "R": r,
        "S": s,
        "eval_sequences": take,
        "seed": seed,
    });
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report_json).unwrap(),
    )
    .map_err(schemanet::Error::from)?;
    std::fs::write(out_dir.join("report.csv"), report.to_csv())
        .map_err(schemanet::Error::from)?;
    std::fs::write(
        out_dir.join("degree_distribution.csv"),
        degree_distribution_csv(&posterior, stats_samples, &mut rng),
    )
    .map_err(schemanet::Error::from)?;
    std::fs::write(out_dir.join("posterior_probs.txt"), posterior.to_text())
        .map_err(schemanet::Error::from)?;

    println!("eval written to {}", out_dir.display());
    println!(
        "AUC {:.4} | PPL {:.3} | NLL|graph {:.3} (oracle {:.3}) | MI {:.3}",
        report.roc_auc, ppl, nll, oracle_nll, mi
    );
    Ok(())
}

fn cmd_graph_stats(
    input: &std::path::Path,
    out: Option<&std::path::Path>,
    edge_list: bool,
) -> Result<(), CmdError> {
    let a = AdjacencyMatrix::read_text(input)?;
    let stats = graph_statistics(&a);
    let text = serde_json::to_string_pretty(&stats).unwrap();
    match out {
        Some(path) => {
            std::fs::write(path, &text).map_err(schemanet::Error::from)?;
            println!("stats written to {}", path.display());
        }
        None => println!("{text}"),
    }
    if edge_list {
        let el_path = input.with_extension("edges");
        std::fs::write(&el_path, a.to_edge_list()).map_err(schemanet::Error::from)?;
        println!("edge list written to {}", el_path.display());
    }
    Ok(())
}
