//! Reproducible-run plumbing: the run manifest, the flat key-value config
//! format, and the run-directory lock.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::objective::TrainConfig;
use crate::{Error, Result};

/// Everything needed to reproduce one command invocation. Exactly one
/// manifest lives in each run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub dataset: Option<String>,
    pub dataset_checksum: Option<String>,
    pub artifacts: Vec<String>,
    pub created_at: String,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            args: std::env::args().collect(),
            config,
            seed,
            dataset: None,
            dataset_checksum: None,
            artifacts: Vec::new(),
            created_at: chrono::Utc::now().to_rfc3339(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Write `manifest.json`; a second manifest in the same directory is an
    /// error.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        if path.exists() {
            return Err(Error::Config(format!(
                "run directory {dir:?} already holds a manifest"
            )));
        }
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Exclusive ownership of a run directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(
                format!("run directory {dir:?} is locked by another process"),
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Parse flat `key = value` text (one pair per line, `#` comments).
pub fn parse_flat_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(Error::Parse {
            line: lineno + 1,
            msg: format!("expected `key = value`, found {line:?}"),
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Render a [`TrainConfig`] in the flat format (documented keys only).
pub fn train_config_to_flat(cfg: &TrainConfig) -> String {
    format!(
        "batch_size = {}\nlearning_rate = {}\nepochs = {}\ntau = {}\n\
         prior_edge_prob = {}\nanneal_cycles = {}\nramp_fraction = {}\n\
         kl_threshold = {}\nseed = {}\ncheckpoint_every = {}\nn_walk_samples = {}\n",
        cfg.batch_size,
        cfg.learning_rate,
        cfg.epochs,
        cfg.tau,
        cfg.prior_edge_prob,
        cfg.anneal_cycles,
        cfg.ramp_fraction,
        cfg.kl_threshold,
        cfg.seed,
        cfg.checkpoint_every,
        cfg.n_walk_samples
    )
}

/// Apply flat keys onto a [`TrainConfig`]; unknown keys are errors.
pub fn apply_flat_to_train_config(
    cfg: &mut TrainConfig,
    map: &BTreeMap<String, String>,
) -> Result<()> {
    for (key, value) in map {
        let bad = |e: String| Error::Config(format!("config key {key}: {e}"));
        match key.as_str() {
            "batch_size" => cfg.batch_size = value.parse().map_err(|e| bad(format!("{e}")))?,
            "learning_rate" => {
                cfg.learning_rate = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "epochs" => cfg.epochs = value.parse().map_err(|e| bad(format!("{e}")))?,
            "tau" => cfg.tau = value.parse().map_err(|e| bad(format!("{e}")))?,
            "prior_edge_prob" => {
                cfg.prior_edge_prob = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "anneal_cycles" => {
                cfg.anneal_cycles = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "ramp_fraction" => {
                cfg.ramp_fraction = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "kl_threshold" => {
                cfg.kl_threshold = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "seed" => cfg.seed = value.parse().map_err(|e| bad(format!("{e}")))?,
            "checkpoint_every" => {
                cfg.checkpoint_every = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "n_walk_samples" => {
                cfg.n_walk_samples = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
    }
    Ok(())
}
