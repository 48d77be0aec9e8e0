//! `ldvae`: synthesise cubes, train, unmix, extract endmembers, evaluate.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 training divergence.
//! `LDVAE_THREADS` sets the worker count (default 1); outputs are identical
//! for every value.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use ldvae::{ExecMode, KlVariant};

use crate::config::{RunConfig, Snr};

#[derive(Parser)]
#[command(
    name = "ldvae",
    version,
    about = "Hyperspectral unmixing with a latent Dirichlet VAE"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Weight of the abundance MSE term.
    #[arg(long)]
    omega: Option<f64>,
    /// Symmetric Dirichlet prior concentration.
    #[arg(long)]
    prior_alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    encoder_dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    decoder_dims: Option<Vec<usize>>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    no_shuffle: bool,
    #[arg(long, value_parser = parse_kl)]
    kl: Option<KlVariant>,
    /// Latent size for cubes without ground truth (requires --omega 0).
    #[arg(long)]
    n_endmembers: Option<usize>,
    /// Per-class resampling weights, comma separated.
    #[arg(long, value_delimiter = ',')]
    class_weights: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cube from a spectral library.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Library CSV; a built-in synthetic library is used when omitted.
        #[arg(long)]
        library: Option<PathBuf>,
        /// Endmember count of the built-in library.
        #[arg(long)]
        synthetic_endmembers: Option<usize>,
        /// Band count of the built-in library.
        #[arg(long)]
        bands: Option<usize>,
        /// Cube size as HxW.
        #[arg(long)]
        size: Option<String>,
        /// Signal-to-noise ratio in dB, or `inf`.
        #[arg(long)]
        snr: Option<Snr>,
        /// Dirichlet concentrations, one value or one per endmember.
        #[arg(long, value_delimiter = ',')]
        prior: Option<Vec<f64>>,
        /// One endmember per pixel.
        #[arg(long)]
        pure: bool,
    },
    /// Train a model on a cube and write a checkpoint plus training log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cube: Option<PathBuf>,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Write per-endmember abundance maps and a per-pixel CSV.
    Unmix {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        cube: Option<PathBuf>,
    },
    /// Write the decoded endmember spectra as CSV.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write reconstruction, endmember and abundance metric tables.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        cube: Option<PathBuf>,
        /// Reference library for endmember SAD.
        #[arg(long)]
        library: Option<PathBuf>,
    },
    /// Write per-pixel reconstructions and their error summary.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        cube: Option<PathBuf>,
    },
}

fn parse_kl(s: &str) -> Result<KlVariant, String> {
    match s.to_ascii_lowercase().as_str() {
        "paper" => Ok(KlVariant::Paper),
        "stirling" => Ok(KlVariant::Stirling),
        "full" => Ok(KlVariant::Full),
        other => Err(format!(
            "unknown KL variant {other:?} (paper, stirling, full)"
        )),
    }
}

fn base(common: &Common) -> RunConfig {
    RunConfig {
        seed: common.seed,
        out: common.out.clone(),
        ..RunConfig::default()
    }
}

fn resolve(common: &Common, flags: RunConfig) -> Result<RunConfig> {
    let file = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(file.overlay(flags))
}

fn exec_mode() -> Result<ExecMode> {
    let threads = match std::env::var("LDVAE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => bail!("LDVAE_THREADS must be a positive integer, got {v:?}"),
        },
        Err(_) => 1,
    };
    #[cfg(feature = "parallel")]
    if threads > 1 {
        // Fails only if a pool already exists, which is fine.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    Ok(ExecMode::from_threads(threads))
}

fn run(cli: Cli) -> Result<()> {
    let exec = exec_mode()?;
    match cli.command {
        Command::Synth {
            common,
            library,
            synthetic_endmembers,
            bands,
            size,
            snr,
            prior,
            pure,
        } => {
            let flags = RunConfig {
                library,
                synthetic_endmembers,
                bands,
                size,
                snr_db: snr,
                prior,
                pure: pure.then_some(true),
                ..base(&common)
            };
            commands::synth(&resolve(&common, flags)?, exec)
        }
        Command::Train {
            common,
            cube,
            flags: f,
        } => {
            let flags = RunConfig {
                cube,
                epochs: f.epochs,
                batch_size: f.batch_size,
                learning_rate: f.learning_rate,
                omega: f.omega,
                prior_alpha: f.prior_alpha,
                encoder_dims: f.encoder_dims,
                decoder_dims: f.decoder_dims,
                mc_samples: f.mc_samples,
                shuffle: f.no_shuffle.then_some(false),
                kl_variant: f.kl,
                n_endmembers: f.n_endmembers,
                class_weights: f.class_weights,
                ..base(&common)
            };
            commands::train(&resolve(&common, flags)?, exec)
        }
        Command::Unmix {
            common,
            checkpoint,
            cube,
        } => {
            let flags = RunConfig {
                checkpoint,
                cube,
                ..base(&common)
            };
            commands::unmix(&resolve(&common, flags)?, exec)
        }
        Command::Extract { common, checkpoint } => {
            let flags = RunConfig {
                checkpoint,
                ..base(&common)
            };
            commands::extract(&resolve(&common, flags)?)
        }
        Command::Eval {
            common,
            checkpoint,
            cube,
            library,
        } => {
            let flags = RunConfig {
                checkpoint,
                cube,
                library,
                ..base(&common)
            };
            commands::eval(&resolve(&common, flags)?, exec)
        }
        Command::Reconstruct {
            common,
            checkpoint,
            cube,
        } => {
            let flags = RunConfig {
                checkpoint,
                cube,
                ..base(&common)
            };
            commands::reconstruct(&resolve(&common, flags)?, exec)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let diverged = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<ldvae::Error>(),
            Some(ldvae::Error::Divergence { .. })
        )
    });
    if diverged {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
