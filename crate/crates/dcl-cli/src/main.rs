use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use dcl_cli::config::{
    parse_config, ExperimentConfig, ExperimentKind, GradCheckParams, NpcSweepParams,
};
use dcl_cli::manifest::RunStatus;
use dcl_cli::{run_experiment, ExperimentManifest};

#[derive(Parser)]
#[command(name = "dcl", version, about = "Decoupled contrastive learning experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config file
    Run {
        config: PathBuf,
        /// Overrides the config's output_dir
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides the config's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check analytic gradients against the central-difference oracle
    Gradcheck {
        /// Random batches per loss kind
        #[arg(long = "n")]
        cases: Option<usize>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Coupling-multiplier statistics across batch sizes
    NpcSweep {
        /// Comma-separated batch sizes
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        batches_per_size: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the version string
    Version,
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    let config = match cli.command {
        Command::Version => {
            println!("dcl {} (core {})", env!("CARGO_PKG_VERSION"), dcl_core::VERSION);
            return Ok(ExitCode::SUCCESS);
        }
        Command::Run {
            config,
            output_dir,
            seed,
        } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut parsed = parse_config(&text)?;
            // flags win over config-file values
            if let Some(dir) = output_dir {
                parsed.output_dir = Some(dir);
            }
            if let Some(seed) = seed {
                parsed.seed = seed;
            }
            parsed
        }
        Command::Gradcheck {
            cases,
            h,
            tolerance,
            output_dir,
            seed,
        } => {
            let mut params = GradCheckParams::default();
            if let Some(cases) = cases {
                params.cases = cases;
            }
            if let Some(h) = h {
                params.h = h;
            }
            if let Some(tolerance) = tolerance {
                params.tolerance = tolerance;
            }
            finalize(ExperimentConfig {
                experiment: ExperimentKind::GradCheck,
                seed,
                output_dir,
                npc_sweep: None,
                dataset: None,
                train: None,
                gradcheck: Some(params),
                loss_table: None,
            })?
        }
        Command::NpcSweep {
            sizes,
            tau,
            dim,
            batches_per_size,
            bins,
            output_dir,
            seed,
        } => {
            let mut params = NpcSweepParams::default();
            if let Some(sizes) = sizes {
                params.sizes = sizes;
            }
            if let Some(tau) = tau {
                params.tau = tau;
            }
            if let Some(dim) = dim {
                params.dim = dim;
            }
            if let Some(batches_per_size) = batches_per_size {
                params.batches_per_size = batches_per_size;
            }
            if let Some(bins) = bins {
                params.bins = bins;
            }
            finalize(ExperimentConfig {
                experiment: ExperimentKind::NpcSweep,
                seed,
                output_dir,
                npc_sweep: Some(params),
                dataset: None,
                train: None,
                gradcheck: None,
                loss_table: None,
            })?
        }
    };

    let manifest = run_experiment(&config)?;
    report(&manifest);
    Ok(match manifest.status {
        RunStatus::Ok => ExitCode::SUCCESS,
        RunStatus::Failed => ExitCode::from(2),
    })
}

/// Re-validate a flag-assembled config through the standard parse path.
fn finalize(config: ExperimentConfig) -> anyhow::Result<ExperimentConfig> {
    Ok(parse_config(&dcl_cli::serialize_config(&config))?)
}

fn report(manifest: &ExperimentManifest) {
    let dir = dcl_cli::resolve_output_dir(manifest.config.output_dir.as_deref());
    for artifact in &manifest.artifacts {
        println!("wrote {}", dir.join(&artifact.path).display());
    }
    println!("wrote {}", dir.join("manifest.json").display());
    if let Some(metrics) = &manifest.metrics {
        if let Some(max) = metrics.get("max_rel_err") {
            println!(
                "max relative error {max} (tolerance {})",
                metrics.get("tolerance").unwrap_or(&serde_json::json!(null))
            );
        }
    }
    match manifest.status {
        RunStatus::Ok => println!("{}: ok ({:.2}s)", manifest.experiment.name(), manifest.duration_seconds),
        RunStatus::Failed => {
            if let Some(failure) = &manifest.failure {
                eprintln!("{}: FAILED: {}", manifest.experiment.name(), failure.message);
            }
        }
    }
}
