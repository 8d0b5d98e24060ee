use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand};
use dclust_cli::commands;
use dclust_cli::{CliError, CliResult, ExitCode, RunConfig};
use dclust_core::data::BlobSpec;
use log::error;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "dclust", version, about = "Discriminative autoencoder clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.lambda=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a Gaussian blob dataset (features.csv, labels.csv).
    Generate {
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 400)]
        per_cluster: usize,
        #[arg(long, default_value_t = 50)]
        dim: usize,
        /// Center spacing in units of sigma.
        #[arg(long, default_value_t = 8.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Pre-train the autoencoder.
    Pretrain {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from the configured checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Run the clustering stages from a pre-trained checkpoint.
    Cluster {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        skip_stage2: bool,
    },
    /// Score an assignment file against ground-truth labels.
    Evaluate {
        #[arg(long)]
        assignments: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Cluster count; defaults to the largest id seen plus one.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Write the latent embedding and its 2D PCA projection.
    ExportEmbedding {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    match cli.command {
        Command::Generate {
            k,
            per_cluster,
            dim,
            separation,
            sigma,
            seed,
            out,
        } => {
            let spec = BlobSpec {
                k,
                per_cluster,
                dim,
                separation,
                sigma,
                seed,
            };
            let (f, l) = commands::generate(&spec, &out)?;
            println!("{}\n{}", f.display(), l.display());
        }
        Command::Pretrain { config, resume } => {
            print_json(&commands::pretrain(&config.load()?, resume)?)?;
        }
        Command::Cluster { config, skip_stage2 } => {
            print_json(&commands::cluster(&config.load()?, skip_stage2)?)?;
        }
        Command::Evaluate { assignments, labels, k } => {
            print_json(&commands::evaluate(&assignments, &labels, k)?)?;
        }
        Command::ExportEmbedding { config, out } => {
            let (e, p) = commands::export_embedding(&config.load()?, out.as_deref())?;
            println!("{}\n{}", e.display(), p.display());
        }
        Command::Gradcheck { seed, tolerance } => {
            let (results, ok) = commands::gradcheck(seed, tolerance)?;
            println!("{:<10} {:>12} {:>12} {:>8}", "loss", "rel_error", "max_abs", "params");
            for r in &results {
                let mark = if r.rel_error <= tolerance { "ok" } else { "FAIL" };
                println!(
                    "{:<10} {:>12.3e} {:>12.3e} {:>8} {mark}",
                    r.loss.name(),
                    r.rel_error,
                    r.max_abs_diff,
                    r.parameters
                );
            }
            if !ok {
                return Ok(ExitCode::Numeric);
            }
        }
    }
    Ok(ExitCode::Success)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ExitCode::Usage } else { ExitCode::Success };
            let _ = e.print();
            process::exit(code as i32);
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            e.exit_code()
        }
    };
    process::exit(code as i32);
}
