//! Experiment configuration: a TOML file with a dataset block, optional
//! training overrides, and a list of evaluation suites. Omitted training
//! fields fall back to the per-dataset recipe defaults.

use anyhow::{bail, Context, Result};
use bpfc::attacks::ThreatModel;
use bpfc::data::DatasetId;
use bpfc::models::ArchId;
use bpfc::quant::QuantMode;
use bpfc::train::{RegNorm, TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: String,
    #[serde(default)]
    pub arch: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    #[serde(default)]
    pub train: Option<TrainOverrides>,
    #[serde(default, rename = "eval")]
    pub evals: Vec<EvalBlock>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub mode: Option<TrainMode>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_decay_factor: Option<f64>,
    pub lr_decay_epochs: Option<Vec<usize>>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    /// Quantization parameter k (dropped low bits).
    pub k: Option<u8>,
    pub bit_depth: Option<u8>,
    pub quant_mode: Option<QuantMode>,
    pub lambda: Option<f64>,
    pub lambda_step_factor: Option<f64>,
    pub lambda_step_every: Option<usize>,
    pub reg_norm: Option<RegNorm>,
    pub early_stop_window: Option<usize>,
    pub early_stop_eval_samples: Option<usize>,
    pub at_eps: Option<f64>,
    pub at_eps_step: Option<f64>,
    pub at_steps: Option<usize>,
    pub augment: Option<bool>,
    pub train_subset: Option<usize>,
    pub val_subset: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBlock {
    pub suite: String,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub n_unbounded: Option<usize>,
    #[serde(default)]
    pub pgd_heavy: Option<bool>,
    #[serde(default)]
    pub source_checkpoint: Option<PathBuf>,
    /// Restart study: restart counts.
    #[serde(default)]
    pub counts: Option<Vec<usize>>,
    /// Restart study / curve sweep: attack step count.
    #[serde(default)]
    pub steps: Option<usize>,
    /// Curve sweep: attack id and epsilon grid.
    #[serde(default)]
    pub attack: Option<String>,
    #[serde(default)]
    pub eps_grid: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn dataset_id(&self) -> Result<DatasetId> {
        Ok(DatasetId::parse(&self.dataset)?)
    }

    pub fn arch_id(&self) -> Result<ArchId> {
        match &self.arch {
            Some(a) => Ok(ArchId::parse(a)?),
            None => Ok(match self.dataset_id()? {
                DatasetId::Cifar10 => ArchId::Resnet18,
                _ => ArchId::MLeNet,
            }),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Concrete training config: dataset defaults with overrides applied.
    pub fn resolve_train(&self) -> Result<TrainConfig> {
        let dataset = self.dataset_id()?;
        let ov = self.train.clone().unwrap_or_default();
        let mode = ov.mode.unwrap_or(TrainMode::Bpfc);
        let mut cfg = TrainConfig::defaults_for(dataset, mode);
        cfg.seed = self.seed();
        if let Some(v) = ov.epochs {
            cfg.epochs = v;
            // Keep the derived schedules consistent with the new length.
            cfg.lr_decay_epochs = vec![v / 2, v * 3 / 4, v * 9 / 10];
        }
        if let Some(v) = ov.lr_decay_epochs {
            cfg.lr_decay_epochs = v;
        }
        if let Some(v) = ov.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = ov.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = ov.lr_decay_factor {
            cfg.lr_decay_factor = v;
        }
        if let Some(v) = ov.momentum {
            cfg.momentum = v;
        }
        if let Some(v) = ov.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = ov.k {
            cfg.quant.dropped_bits = v;
        }
        if let Some(v) = ov.bit_depth {
            cfg.quant.bit_depth = v;
        }
        if let Some(v) = ov.quant_mode {
            cfg.quant.mode = v;
        }
        if let Some(v) = ov.lambda {
            cfg.lambda_initial = v;
        }
        if let Some(v) = ov.lambda_step_factor {
            cfg.lambda_step_factor = v;
        }
        if let Some(v) = ov.lambda_step_every {
            cfg.lambda_step_every = v;
        }
        if let Some(v) = ov.reg_norm {
            cfg.reg_norm = v;
        }
        if let Some(v) = ov.early_stop_window {
            cfg.early_stop_window = v;
        }
        if let Some(v) = ov.early_stop_eval_samples {
            cfg.early_stop_eval_samples = v;
        }
        if let Some(t) = cfg.at_threat.as_mut() {
            if let Some(v) = ov.at_eps {
                t.eps = v;
            }
            if let Some(v) = ov.at_eps_step {
                t.eps_step = v;
            }
            if let Some(v) = ov.at_steps {
                t.steps = v;
            }
        }
        if let Some(v) = ov.augment {
            cfg.augment = v;
        }
        cfg.train_subset = ov.train_subset;
        cfg.val_subset = ov.val_subset;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| {
            PathBuf::from("runs").join(format!("{}-{}", self.dataset, self.seed()))
        })
    }
}

/// Threat model carried by attack-style CLI flags.
pub fn threat_from_flags(
    dataset: DatasetId,
    eps: Option<f64>,
    eps_step: Option<f64>,
    steps: Option<usize>,
    restarts: Option<usize>,
    seed: u64,
) -> Result<ThreatModel> {
    let mut tm = bpfc::data::default_threat_model(dataset);
    if let Some(v) = eps {
        tm.eps = v;
    }
    if let Some(v) = eps_step {
        tm.eps_step = v;
    }
    if let Some(v) = steps {
        tm.steps = v;
    }
    if let Some(v) = restarts {
        tm.restarts = v;
        tm.random_start = true;
    }
    tm.seed = seed;
    if tm.restarts > 1 && !tm.random_start {
        bail!("restarts > 1 require a random start");
    }
    tm.validate()?;
    Ok(tm)
}
