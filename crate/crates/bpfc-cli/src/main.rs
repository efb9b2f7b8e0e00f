//! `bpfc` command line: train models, run attack suites, reproduce the
//! robustness tables.

mod attack_cmd;
mod compare;
mod config;
mod manifest;
mod preview;
mod run;

use anyhow::Result;
use bpfc::attacks::AdaptiveLossWeights;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bpfc", version, about = "Feature-consistency training and adversarial robustness evaluation")]
struct Cli {
    /// Dataset root directory (falls back to $BPFC_DATA_ROOT, then ./data).
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run evaluation suites on a checkpoint.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run a single attack on a checkpoint.
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        attack: String,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        eps_step: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stratified test-subset size; 0 means the full test set.
        #[arg(long, default_value_t = 1000)]
        n_samples: usize,
        /// Adaptive attack weights.
        #[arg(long, default_value_t = 1.0)]
        lambda_ce: f64,
        #[arg(long, default_value_t = 0.0)]
        lambda_g: f64,
        #[arg(long, default_value_t = 0.0)]
        lambda_lsb: f64,
        /// Target policy for pgd-targeted: least-likely or random.
        #[arg(long)]
        target: Option<String>,
        /// Draws per sample for the random-noise attack.
        #[arg(long, default_value_t = 1000)]
        noise_samples: usize,
        /// JSON-lines output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the gradient-masking sanity checks.
    Sanity {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Black-box source model for the transfer check.
        #[arg(long)]
        source_checkpoint: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value = "runs/sanity")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        n_samples: usize,
        #[arg(long, default_value_t = 100)]
        n_unbounded: usize,
    },
    /// Bit-plane / quantization preview panels for one image.
    QuantizePreview {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "runs/preview")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        bit_depth: u8,
        #[arg(long, default_value_t = 5)]
        k: u8,
        /// Semicolon-separated plane sets, e.g. "7;7,6;7,6,5;4,3,2,1,0".
        #[arg(long, default_value = "7;7,6;7,6,5;4,3,2,1,0")]
        planes: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Merge evaluation reports from several runs into one table.
    Compare {
        /// Manifest files, comma separated or repeated.
        #[arg(long, value_delimiter = ',', required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    bpfc::nn::init_blas_tuning();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn is_config_error(e: &anyhow::Error) -> bool {
    for cause in e.chain() {
        if let Some(be) = cause.downcast_ref::<bpfc::Error>() {
            return matches!(
                be,
                bpfc::Error::InvalidConfig(_)
                    | bpfc::Error::InvalidQuant(_)
                    | bpfc::Error::InvalidThreat(_)
                    | bpfc::Error::UnknownDataset(_)
                    | bpfc::Error::UnknownArch(_)
                    | bpfc::Error::UnknownAttack(_, _)
            );
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return true;
        }
    }
    false
}

fn dispatch(cli: Cli) -> Result<()> {
    let data_root = cli.data_root.as_deref();
    match cli.command {
        Command::Train { config, out_dir } => run::cmd_train(&config, data_root, out_dir.as_deref()),
        Command::Evaluate { config, checkpoint, out_dir } => {
            run::cmd_evaluate(&config, &checkpoint, data_root, out_dir.as_deref())
        }
        Command::Attack {
            checkpoint,
            dataset,
            attack,
            eps,
            eps_step,
            steps,
            restarts,
            seed,
            n_samples,
            lambda_ce,
            lambda_g,
            lambda_lsb,
            target,
            noise_samples,
            out,
        } => {
            let (model, subset, spec) =
                run::load_model_and_subset(&checkpoint, &dataset, data_root, n_samples, seed)?;
            let tm = config::threat_from_flags(spec.id, eps, eps_step, steps, restarts, seed)?;
            let weights = AdaptiveLossWeights { lambda_ce, lambda_g, lambda_lsb };
            attack_cmd::cmd_attack(
                &model,
                &subset,
                &spec,
                &attack,
                tm,
                weights,
                target.as_deref(),
                noise_samples,
                out.as_deref(),
                250,
            )
        }
        Command::Sanity {
            checkpoint,
            source_checkpoint,
            dataset,
            out_dir,
            seed,
            n_samples,
            n_unbounded,
        } => run::cmd_sanity(
            &checkpoint,
            &source_checkpoint,
            &dataset,
            data_root,
            &out_dir,
            seed,
            n_samples,
            n_unbounded,
        ),
        Command::QuantizePreview { input, out_dir, bit_depth, k, planes, seed } => {
            preview::cmd_quantize_preview(&input, &out_dir, bit_depth, k, &planes, seed)
        }
        Command::Compare { manifests, out } => compare::cmd_compare(&manifests, out.as_deref()),
    }
}
