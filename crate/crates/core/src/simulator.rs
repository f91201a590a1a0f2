//! Synchronous round engine: every agent runs compute_c + BCD, then all `μ_i`
//! are exchanged, then every agent runs its dual step.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{concatenate, Array1, Axis};
use rayon::prelude::*;

use crate::agent::{AgentState, MuMessage, Orientation};
use crate::data::FeaturePartition;
use crate::error::{Error, Result};
use crate::functions::FunctionSpec;
use crate::inner::{BcdConfig, BcdOutcome, LocalBlock};
use crate::linalg::{norm, norm_sq};
use crate::oracle::{calibrate_orientation, OracleSolution};
use crate::scalar::Real;
use crate::topology::Topology;

/// Rounds spanned by the estimate-stability test of the stopping rule.
pub const STABILITY_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Sequential,
    /// Agents within a phase run on the rayon pool.
    Parallel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig<T> {
    pub max_rounds: usize,
    pub rho: T,
    pub bcd: BcdConfig<T>,
    pub stop_consensus_tol: T,
    pub stop_estimate_tol: T,
    /// Seed of the orientation calibration instance.
    pub seed: u64,
    pub record_per_agent: bool,
    /// Keep every agent's full δ trace per round.
    pub record_traces: bool,
    /// `None` calibrates before the run.
    pub orientation: Option<Orientation>,
    pub schedule: Schedule,
}

impl<T: Real> Default for RunConfig<T> {
    fn default() -> Self {
        Self {
            max_rounds: 2000,
            rho: T::lit(2.0),
            bcd: BcdConfig::default(),
            stop_consensus_tol: T::lit(1e-10),
            stop_estimate_tol: T::lit(1e-8),
            seed: 0,
            record_per_agent: false,
            record_traces: false,
            orientation: None,
            schedule: Schedule::Sequential,
        }
    }
}

impl<T: Real> RunConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::InvalidSize("max_rounds must be at least 1".into()));
        }
        if !(self.rho > T::zero()) {
            return Err(Error::InvalidSize(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.stop_consensus_tol > T::zero() && self.stop_estimate_tol > T::zero()) {
            return Err(Error::InvalidSize("stopping tolerances must be positive".into()));
        }
        self.bcd.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxRounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord<T> {
    pub round: usize,
    /// `‖x^d(k) − ω‖²/‖ω‖²`; absent without ground truth.
    pub misalignment: Option<T>,
    pub consensus_residual: T,
    /// Mean over agents of `‖μ_i − μ°‖/‖μ°‖`; absent without an oracle `μ°`.
    pub mu_error: Option<T>,
    pub delta_k_mean: T,
    /// Smallest change of δ between consecutive half-steps over all agents.
    pub delta_min_increment: T,
    /// `‖Σ_i v_i‖`, zero up to rounding.
    pub dual_sum_norm: T,
    pub dual_max_norm: T,
    pub theta_converged: bool,
    pub wall_clock: Duration,
    pub estimates: Option<Vec<Array1<T>>>,
    pub delta_traces: Option<Vec<Vec<T>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory<T> {
    pub records: Vec<RoundRecord<T>>,
    pub final_estimates: Vec<Array1<T>>,
    pub final_mu: Vec<Array1<T>>,
    pub orientation: Orientation,
    pub stop_reason: StopReason,
}

fn opt_field<T: Real>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const HISTORY_HEADER: &str = "round,misalignment,consensus_residual,mu_error,delta_k_mean";

impl<T: Real> RunHistory<T> {
    pub fn stacked_estimate(&self) -> Array1<T> {
        let views: Vec<_> = self.final_estimates.iter().map(|x| x.view()).collect();
        concatenate(Axis(0), &views).expect("1-D blocks concatenate")
    }

    pub fn last(&self) -> &RoundRecord<T> {
        self.records.last().expect("a run executes at least one round")
    }

    /// First round whose consensus residual is at most `tol`.
    pub fn rounds_to_consensus(&self, tol: T) -> Option<usize> {
        self.records.iter().find(|r| r.consensus_residual <= tol).map(|r| r.round)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.round,
                opt_field(r.misalignment),
                r.consensus_residual,
                opt_field(r.mu_error),
                r.delta_k_mean
            )
            .expect("writing to a String");
        }
        out
    }

    /// `round,agent,estimate...`; empty unless the run recorded per-agent estimates.
    pub fn per_agent_csv(&self) -> String {
        let mut out = String::from("round,agent,estimate\n");
        for r in &self.records {
            for (i, x) in r.estimates.iter().flatten().enumerate() {
                write!(out, "{},{}", r.round, i + 1).expect("writing to a String");
                for v in x {
                    write!(out, ",{v}").expect("writing to a String");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// `Σ_{(i,j)∈E} ‖μ_i − μ_j‖²` with `mus[i − 1]` belonging to agent `i`.
pub fn consensus_residual<T: Real>(mus: &[Array1<T>], topo: &Topology) -> T {
    topo.edges()
        .map(|(i, j)| norm_sq((&mus[i - 1] - &mus[j - 1]).view()))
        .sum()
}

/// `‖x − ω‖²/‖ω‖²`.
pub fn misalignment<T: Real>(x: &Array1<T>, truth: &Array1<T>) -> Result<T> {
    if x.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!("estimate has {} entries, truth {}", x.len(), truth.len())));
    }
    let denom = norm_sq(truth.view());
    if denom == T::zero() {
        return Err(Error::ZeroTruth);
    }
    Ok(norm_sq((x - truth).view()) / denom)
}

struct Node<'a, T> {
    state: AgentState<T>,
    block: LocalBlock<T>,
    reg: &'a FunctionSpec<T>,
}

fn primal_phase<T: Real>(
    nodes: &mut [Node<'_, T>],
    f: &FunctionSpec<T>,
    b: &Array1<T>,
    rho: T,
    cfg: &BcdConfig<T>,
    schedule: Schedule,
) -> Result<Vec<BcdOutcome<T>>> {
    let n = nodes.len();
    let step = |node: &mut Node<'_, T>| -> Result<BcdOutcome<T>> {
        node.state.compute_c(rho)?;
        node.state.primal_step(f, node.reg, &node.block, b.view(), n, cfg)
    };
    match schedule {
        Schedule::Sequential => nodes.iter_mut().map(step).collect(),
        Schedule::Parallel => nodes.par_iter_mut().map(step).collect(),
    }
}

fn exchange<T: Real>(nodes: &mut [Node<'_, T>]) -> Result<()> {
    let messages: Vec<MuMessage<T>> = nodes.iter().map(|n| n.state.message()).collect();
    for node in nodes.iter_mut() {
        let neighbors: Vec<usize> = node.state.neighbor_ids().collect();
        for j in neighbors {
            node.state.receive(&messages[j - 1])?;
        }
    }
    Ok(())
}

fn dual_phase<T: Real>(nodes: &mut [Node<'_, T>], rho: T, schedule: Schedule) -> Result<()> {
    let step = |node: &mut Node<'_, T>| node.state.dual_step(rho).map(|_| ());
    match schedule {
        Schedule::Sequential => nodes.iter_mut().try_for_each(step),
        Schedule::Parallel => nodes.par_iter_mut().try_for_each(step),
    }
}

/// Runs the protocol until both stopping tolerances hold or `max_rounds` is reached.
pub fn run<T: Real>(
    fp: &FeaturePartition<T>,
    topo: &Topology,
    f: &FunctionSpec<T>,
    regs: &[FunctionSpec<T>],
    cfg: &RunConfig<T>,
    oracle: Option<&OracleSolution<T>>,
) -> Result<RunHistory<T>> {
    cfg.validate()?;
    let n = fp.num_agents();
    let m = fp.num_samples();
    if topo.num_agents() != n {
        return Err(Error::DimensionMismatch(format!("topology has {} agents, data has {n} blocks", topo.num_agents())));
    }
    if regs.len() != n {
        return Err(Error::DimensionMismatch(format!("{} regularizers for {n} agents", regs.len())));
    }
    if !f.is_loss() {
        return Err(Error::Unsupported(format!("{f} used as a loss")));
    }
    if let Some(r) = regs.iter().find(|r| r.is_loss()) {
        return Err(Error::Unsupported(format!("{r} used as a regularizer")));
    }
    if n < 2 {
        return Err(Error::InvalidTopology("a single agent has no neighbors".into()));
    }
    if let Some(oracle) = oracle {
        if oracle.x_star.len() != fp.total_features() {
            return Err(Error::DimensionMismatch("oracle solution does not match the partition".into()));
        }
    }
    if !topo.is_connected() {
        log::warn!("topology is disconnected; agents will not reach the centralized solution");
    }
    let orientation = match cfg.orientation {
        Some(o) => o,
        None => calibrate_orientation(f, &regs[0], cfg.seed)?,
    };

    let mut nodes = Vec::with_capacity(n);
    for (i, reg) in regs.iter().enumerate() {
        let block = fp.block(i + 1);
        nodes.push(Node {
            state: AgentState::new(i + 1, topo, cfg.rho, m, block.ncols())?,
            block: LocalBlock::new(block),
            reg,
        });
    }
    let b = fp.response().to_owned();
    let truth = fp.truth().map(|t| t.to_owned());
    let mu_star = oracle.and_then(|o| o.mu_star.as_ref());

    let tiny = T::min_positive_value();
    let consensus_target = cfg.stop_consensus_tol * T::from_count(n * m);
    let mut window: VecDeque<Array1<T>> = VecDeque::with_capacity(STABILITY_WINDOW + 1);
    let mut records = Vec::new();
    let mut stop_reason = StopReason::MaxRounds;

    for round in 1..=cfg.max_rounds {
        let started = Instant::now();
        let outcomes = primal_phase(&mut nodes, f, &b, cfg.rho, &cfg.bcd, cfg.schedule)?;
        exchange(&mut nodes)?;
        dual_phase(&mut nodes, cfg.rho, cfg.schedule)?;
        let wall_clock = started.elapsed();

        let mus: Vec<Array1<T>> = nodes.iter().map(|nd| nd.state.mu().to_owned()).collect();
        if let Some(i) = mus.iter().position(|mu| mu.iter().any(|x| !x.is_finite())) {
            return Err(Error::Numerical(format!("μ of agent {} is not finite at round {round}", i + 1)));
        }
        let estimates: Vec<Array1<T>> = nodes.iter().map(|nd| nd.state.recover_estimate(orientation)).collect();
        let stacked = concatenate(Axis(0), &estimates.iter().map(|x| x.view()).collect::<Vec<_>>())
            .expect("1-D blocks concatenate");

        let mut v_sum = Array1::<T>::zeros(m);
        let mut dual_max_norm = T::zero();
        for node in &nodes {
            v_sum += &node.state.v();
            dual_max_norm = dual_max_norm.max(norm(node.state.v()));
        }
        let delta_k_mean = outcomes.iter().map(|o| o.final_delta()).sum::<T>() / T::from_count(n);
        let delta_min_increment = outcomes
            .iter()
            .flat_map(|o| o.delta_trace.windows(2).map(|w| w[1] - w[0]))
            .fold(T::infinity(), T::min);
        let mu_error = mu_star.map(|ms| {
            let scale = norm(ms.view()).max(tiny);
            mus.iter().map(|mu| norm((mu - ms).view()) / scale).sum::<T>() / T::from_count(n)
        });
        let consensus = consensus_residual(&mus, topo);

        records.push(RoundRecord {
            round,
            misalignment: truth.as_ref().map(|t| misalignment(&stacked, t)).transpose()?,
            consensus_residual: consensus,
            mu_error,
            delta_k_mean,
            delta_min_increment,
            dual_sum_norm: norm(v_sum.view()),
            dual_max_norm,
            theta_converged: outcomes.iter().all(|o| o.theta_converged),
            wall_clock,
            estimates: cfg.record_per_agent.then(|| estimates.clone()),
            delta_traces: cfg.record_traces.then(|| outcomes.iter().map(|o| o.delta_trace.clone()).collect()),
        });

        window.push_back(stacked);
        if window.len() > STABILITY_WINDOW + 1 {
            window.pop_front();
        }
        if window.len() == STABILITY_WINDOW + 1 && consensus <= consensus_target {
            let (old, new) = (&window[0], &window[STABILITY_WINDOW]);
            let change = norm((new - old).view()) / norm(new.view()).max(tiny);
            if change <= cfg.stop_estimate_tol {
                stop_reason = StopReason::Converged;
                break;
            }
        }
    }

    Ok(RunHistory {
        final_estimates: nodes.iter().map(|nd| nd.state.recover_estimate(orientation)).collect(),
        final_mu: nodes.iter().map(|nd| nd.state.mu().to_owned()).collect(),
        records,
        orientation,
        stop_reason,
    })
}
