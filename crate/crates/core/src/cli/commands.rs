use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::agent::Orientation;
use crate::data::FeaturePartition;
use crate::error::{Error, Result};
use crate::oracle::{calibrate_orientation, objective, solve_partition, OracleSolution, DEFAULT_MAX_ITER, DEFAULT_TOLERANCE};
use crate::simulator::{misalignment, run, RoundRecord, RunHistory, StopReason, HISTORY_HEADER};
use crate::topology::Topology;

use super::config::{ExperimentConfig, Source};
use super::presets::preset;

pub const THREADS_ENV: &str = "FEATADMM_THREADS";

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub max_rounds: Option<usize>,
    pub rho: Option<f64>,
    pub bcd_sweeps: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.run.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        if let Some(k) = self.max_rounds {
            cfg.run.max_rounds = k;
        }
        if let Some(rho) = self.rho {
            cfg.run.rho = rho;
        }
        if let Some(t) = self.bcd_sweeps {
            cfg.run.bcd.sweeps = t;
        }
        cfg.validate()
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.out
        .clone()
        .ok_or_else(|| Error::Unsupported("no output directory (set `out` or pass --out)".into()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthArgs {
    pub n: usize,
    pub m: usize,
    pub sizes: Vec<usize>,
    pub noise: f64,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<FeaturePartition<f64>> {
    if args.sizes.len() != args.n {
        return Err(Error::DimensionMismatch(format!("{} block sizes for n = {}", args.sizes.len(), args.n)));
    }
    let fp = FeaturePartition::synthesize(args.n, args.m, &args.sizes, args.noise, args.seed)?;
    fp.save(&args.out)?;
    log::info!("wrote {} blocks of {} samples to {}", args.n, args.m, args.out.display());
    Ok(fp)
}

/// Data and graph of trial `trial`.
pub fn trial_instance(cfg: &ExperimentConfig, trial: usize) -> Result<(FeaturePartition<f64>, Topology)> {
    let fp = match &cfg.source {
        Source::Synth { n, m, sizes, noise } => {
            if sizes.len() != *n {
                return Err(Error::DimensionMismatch(format!("{} block sizes for n = {n}", sizes.len())));
            }
            FeaturePartition::synthesize(*n, *m, sizes, *noise, cfg.data_seed(trial))?
        }
        Source::Dir(dir) => FeaturePartition::load(dir)?,
    };
    let topo = cfg.topology.build(fp.num_agents(), cfg.topology_seed(trial))?;
    Ok((fp, topo))
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: usize,
    pub history: RunHistory<f64>,
    pub oracle: Option<OracleSolution<f64>>,
    pub centralized_misalignment: Option<f64>,
    pub final_objective: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub orientation: Orientation,
    pub trials: Vec<TrialOutcome>,
}

impl RunReport {
    pub fn averaged_csv(&self) -> String {
        averaged_csv(&self.trials.iter().map(|t| &t.history).collect::<Vec<_>>())
    }

    pub fn mean_final_misalignment(&self) -> Option<f64> {
        mean(self.trials.iter().map(|t| t.history.last().misalignment))
    }

    pub fn mean_centralized_misalignment(&self) -> Option<f64> {
        mean(self.trials.iter().map(|t| t.centralized_misalignment))
    }

    pub fn summary_csv(&self, cfg: &ExperimentConfig) -> String {
        let mut s = String::from(
            "trial,data_seed,topology_seed,rounds,stop_reason,orientation,final_misalignment,centralized_misalignment,final_objective,oracle_objective\n",
        );
        let field = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for t in &self.trials {
            let last = t.history.last();
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                t.trial,
                cfg.data_seed(t.trial),
                cfg.topology_seed(t.trial),
                last.round,
                match t.history.stop_reason {
                    StopReason::Converged => "converged",
                    StopReason::MaxRounds => "max_rounds",
                },
                t.history.orientation,
                field(last.misalignment),
                field(t.centralized_misalignment),
                t.final_objective,
                field(t.oracle.as_ref().map(|o| o.objective_value)),
            )
            .expect("writing to a String");
        }
        s
    }
}

/// Mean of the values, `None` if any is missing or there are none.
fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let values: Option<Vec<f64>> = values.collect();
    let values = values?;
    let (first, rest) = values.split_first()?;
    Some(rest.iter().fold(*first, |acc, v| acc + v) / values.len() as f64)
}

fn record_or_last(h: &RunHistory<f64>, k: usize) -> &RoundRecord<f64> {
    &h.records[k.min(h.records.len() - 1)]
}

/// Per-round mean over trials; a trial that stopped early contributes its final record.
pub fn averaged_csv(histories: &[&RunHistory<f64>]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    let rounds = histories.iter().map(|h| h.records.len()).max().unwrap_or(0);
    let field = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for k in 0..rounds {
        let misalignment = mean(histories.iter().map(|h| record_or_last(h, k).misalignment));
        let consensus = mean(histories.iter().map(|h| Some(record_or_last(h, k).consensus_residual)));
        let mu_error = mean(histories.iter().map(|h| record_or_last(h, k).mu_error));
        let delta = mean(histories.iter().map(|h| Some(record_or_last(h, k).delta_k_mean)));
        writeln!(
            out,
            "{},{},{},{},{}",
            k + 1,
            field(misalignment),
            field(consensus),
            field(mu_error),
            field(delta)
        )
        .expect("writing to a String");
    }
    out
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let threads: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| Error::parse(THREADS_ENV, None, format!("expected a positive integer, found `{raw}`")))?;
        builder = builder.num_threads(threads);
    }
    builder
        .build()
        .map_err(|e| Error::Unsupported(format!("cannot start worker threads: {e}")))
}

fn resolve_orientation(cfg: &ExperimentConfig) -> Result<Orientation> {
    if let Some(o) = cfg.run.orientation {
        return Ok(o);
    }
    let n = match &cfg.source {
        Source::Synth { n, .. } => *n,
        Source::Dir(dir) => FeaturePartition::<f64>::load(dir)?.num_agents(),
    };
    let regs = cfg.regularizers(n)?;
    calibrate_orientation(&cfg.loss, &regs[0], cfg.seed)
}

fn run_trial(cfg: &ExperimentConfig, orientation: Orientation, trial: usize) -> Result<TrialOutcome> {
    let (fp, topo) = trial_instance(cfg, trial)?;
    let regs = cfg.regularizers(fp.num_agents())?;
    let oracle = if cfg.oracle {
        Some(solve_partition(&fp, &cfg.loss, &regs, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)?)
    } else {
        None
    };
    let mut run_cfg = cfg.run.clone();
    run_cfg.orientation = Some(orientation);
    let history = run(&fp, &topo, &cfg.loss, &regs, &run_cfg, oracle.as_ref())?;
    let a = fp.assemble();
    let final_objective = objective(a.view(), fp.response(), &cfg.loss, &regs, &fp.sizes(), history.stacked_estimate().view());
    let centralized_misalignment = match (&oracle, fp.truth()) {
        (Some(o), Some(truth)) => Some(misalignment(&o.x_star, &truth.to_owned())?),
        _ => None,
    };
    log::info!(
        "trial {trial}: {} rounds, final misalignment {:?}",
        history.last().round,
        history.last().misalignment
    );
    Ok(TrialOutcome {
        trial,
        history,
        oracle,
        centralized_misalignment,
        final_objective,
    })
}

/// Runs every trial (in parallel, merged by trial index) without touching the disk.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let orientation = resolve_orientation(cfg)?;
    log::info!("orientation {orientation}");
    let pool = thread_pool()?;
    let trials = pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|j| run_trial(cfg, orientation, j))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(RunReport { orientation, trials })
}

/// Writes `manifest.txt`, `trial_NNN.csv`, `averaged.csv` and `summary.csv`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let out = out_dir(cfg)?;
    create_dir(&out)?;
    write(&out.join("manifest.txt"), &cfg.to_manifest())?;
    let report = run_trials(cfg)?;
    for t in &report.trials {
        write(&out.join(format!("trial_{:03}.csv", t.trial)), &t.history.to_csv())?;
        if cfg.run.record_per_agent {
            write(&out.join(format!("trial_{:03}_agents.csv", t.trial)), &t.history.per_agent_csv())?;
        }
    }
    write(&out.join("averaged.csv"), &report.averaged_csv())?;
    write(&out.join("summary.csv"), &report.summary_csv(cfg))?;
    Ok(report)
}

/// Solves the centralized problem of every trial into `oracle_NNN/`.
pub fn cmd_oracle(cfg: &ExperimentConfig) -> Result<Vec<OracleSolution<f64>>> {
    cfg.validate()?;
    let out = out_dir(cfg)?;
    create_dir(&out)?;
    write(&out.join("manifest.txt"), &cfg.to_manifest())?;
    let mut solutions = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let (fp, _) = trial_instance(cfg, trial)?;
        let regs = cfg.regularizers(fp.num_agents())?;
        let sol = solve_partition(&fp, &cfg.loss, &regs, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)?;
        if !sol.converged {
            log::warn!("trial {trial}: oracle did not reach tolerance in {} iterations", sol.iterations_used);
        }
        sol.save(&out.join(format!("oracle_{trial:03}")))?;
        log::info!("trial {trial}: {} objective {}", sol.method, sol.objective_value);
        solutions.push(sol);
    }
    Ok(solutions)
}

/// Runs every curve of a preset into `<out>/<curve>/` and copies each averaged curve to `<out>/<curve>.csv`.
pub fn cmd_reproduce(name: &str, overrides: &Overrides) -> Result<Vec<(String, RunReport)>> {
    let out = overrides
        .out
        .clone()
        .ok_or_else(|| Error::Unsupported("reproduce needs --out".into()))?;
    create_dir(&out)?;
    let mut reports = Vec::new();
    let mut centralized = String::from("curve,final_misalignment,centralized_misalignment\n");
    for (curve, mut cfg) in preset(name)? {
        overrides.apply(&mut cfg)?;
        cfg.out = Some(out.join(&curve));
        log::info!("{name}/{curve}: {} trials", cfg.trials);
        let report = cmd_run(&cfg)?;
        write(&out.join(format!("{curve}.csv")), &report.averaged_csv())?;
        let field = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            centralized,
            "{curve},{},{}",
            field(report.mean_final_misalignment()),
            field(report.mean_centralized_misalignment())
        )
        .expect("writing to a String");
        reports.push((curve, report));
    }
    write(&out.join("centralized.csv"), &centralized)?;
    Ok(reports)
}
