use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use featadmm::cli::{cmd_oracle, cmd_reproduce, cmd_run, cmd_synth, ExperimentConfig, Overrides, SynthArgs};

#[derive(Parser)]
#[command(name = "featadmm", version, about = "Distributed learning over feature-partitioned data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic partition (A_i blocks, b, ground truth).
    Synth(SynthFlags),
    /// Run the distributed solver for every trial of a config.
    Run(RunFlags),
    /// Solve the centralized problem for every trial of a config.
    Oracle(RunFlags),
    /// Regenerate a built-in family of convergence curves.
    Reproduce {
        /// elastic-net-pi | elastic-net-m | elastic-net-n | elastic-net-topo | ridge | lasso
        preset: String,
        #[command(flatten)]
        overrides: OverrideFlags,
    },
}

#[derive(Args)]
struct SynthFlags {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    /// Features per agent.
    #[arg(long, conflicts_with = "sizes")]
    pi: Option<usize>,
    /// Comma-separated per-agent feature counts.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Noise variance.
    #[arg(long, default_value_t = featadmm::data::DEFAULT_NOISE_VARIANCE)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: OverrideFlags,
}

#[derive(Args)]
struct OverrideFlags {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    bcd_sweeps: Option<usize>,
}

impl From<OverrideFlags> for Overrides {
    fn from(f: OverrideFlags) -> Self {
        Overrides {
            out: f.out,
            seed: f.seed,
            trials: f.trials,
            max_rounds: f.max_rounds,
            rho: f.rho,
            bcd_sweeps: f.bcd_sweeps,
        }
    }
}

fn load_config(flags: RunFlags) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&flags.config)?;
    Overrides::from(flags.overrides).apply(&mut cfg)?;
    Ok(cfg)
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(f) => {
            let sizes = match (f.sizes, f.pi) {
                (Some(sizes), _) => sizes,
                (None, Some(pi)) => vec![pi; f.n],
                (None, None) => bail!("one of --pi or --sizes is required"),
            };
            cmd_synth(&SynthArgs {
                n: f.n,
                m: f.m,
                sizes,
                noise: f.noise,
                seed: f.seed,
                out: f.out,
            })?;
        }
        Command::Run(flags) => {
            let cfg = load_config(flags)?;
            let report = cmd_run(&cfg)?;
            if let Some(mis) = report.mean_final_misalignment() {
                println!("mean final misalignment {mis:.6e}");
            }
        }
        Command::Oracle(flags) => {
            let cfg = load_config(flags)?;
            for (j, sol) in cmd_oracle(&cfg)?.iter().enumerate() {
                println!("trial {j}: {} objective {:.12e}", sol.method, sol.objective_value);
            }
        }
        Command::Reproduce { preset, overrides } => {
            let reports = cmd_reproduce(&preset, &overrides.into()).with_context(|| format!("preset {preset}"))?;
            for (curve, report) in reports {
                println!(
                    "{curve}: final misalignment {:?}, centralized {:?}",
                    report.mean_final_misalignment(),
                    report.mean_centralized_misalignment()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
