//! Per-agent primal subproblem, solved in the dual-of-dual domain by block
//! coordinate descent over `(θ, β)`.
//!
//! Agent `i` maximizes
//!
//! ```text
//! δ(θ, β) = −r(−θ) − ‖β‖²/(4ρ̄) − N·G(−c − Aθ − b/N − β)
//! ```
//!
//! where `G(e) = f(N·e)/N²` is the loss as seen by one of `N` agents. For the
//! squared loss `G = f`. The β block has the closed form
//! `β = q − prox_{2ρ̄N·G}(q)`; the θ block is solved iteratively on the
//! substituted variable `φ = −θ`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::functions::FunctionSpec;
use crate::linalg::{lambda_max, norm, norm_sq};
use crate::scalar::Real;

/// How the θ block is advanced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepRule {
    /// `FixedLipschitz` for smooth losses, `LinearizedDual` otherwise.
    #[default]
    Auto,
    /// Proximal gradient with step `1/L`, `L = N·curv(f)·λ_max(AᵀA)`.
    FixedLipschitz,
    /// Proximal subgradient steps `c/√t`, keeping the best iterate.
    DiminishingSubgradient,
    /// One proximal step per sweep along the loss subgradient selected by the
    /// block-optimal β, i.e. `Aᵀβ/(2ρ̄)`, with step `2ρ̄/λ_max(AᵀA)`.
    /// This is proximal gradient on the objective with β minimized out, and
    /// does not stall at the kinks of a non-smooth loss.
    LinearizedDual,
}

impl StepRule {
    /// Concrete rule used for loss `f`.
    pub fn resolve<T: Real>(self, f: &FunctionSpec<T>) -> StepRule {
        match self {
            StepRule::Auto if f.is_smooth() => StepRule::FixedLipschitz,
            StepRule::Auto => StepRule::LinearizedDual,
            StepRule::FixedLipschitz if !f.is_smooth() => StepRule::DiminishingSubgradient,
            other => other,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StepRule::Auto => "auto",
            StepRule::FixedLipschitz => "fixed_lipschitz",
            StepRule::DiminishingSubgradient => "diminishing_subgradient",
            StepRule::LinearizedDual => "linearized_dual",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            StepRule::Auto,
            StepRule::FixedLipschitz,
            StepRule::DiminishingSubgradient,
            StepRule::LinearizedDual,
        ]
        .into_iter()
        .find(|r| r.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdConfig<T> {
    /// Number of θ/β sweeps `T`.
    pub sweeps: usize,
    pub theta_budget: usize,
    /// Relative step-norm tolerance for the iterative θ solvers.
    pub theta_tolerance: T,
    pub step_rule: StepRule,
    /// `c` in the subgradient step `c/√t`.
    pub subgradient_scale: T,
}

impl<T: Real> Default for BcdConfig<T> {
    fn default() -> Self {
        Self {
            sweeps: 2,
            theta_budget: 200,
            theta_tolerance: T::lit(1e-8),
            step_rule: StepRule::Auto,
            subgradient_scale: T::lit(0.1),
        }
    }
}

impl<T: Real> BcdConfig<T> {
    pub fn validate(&self) -> crate::Result<()> {
        if self.sweeps == 0 || self.theta_budget == 0 {
            return Err(crate::Error::InvalidSize("BCD sweeps and theta budget must be at least 1".into()));
        }
        if !(self.theta_tolerance > T::zero()) || !(self.subgradient_scale > T::zero()) {
            return Err(crate::Error::InvalidSize("BCD tolerance and subgradient scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdState<T> {
    pub theta: Array1<T>,
    pub beta: Array1<T>,
}

impl<T: Real> BcdState<T> {
    pub fn zeros(features: usize, samples: usize) -> Self {
        Self {
            theta: Array1::zeros(features),
            beta: Array1::zeros(samples),
        }
    }
}

/// An agent's column block with the quantities the θ solvers reuse.
#[derive(Debug, Clone)]
pub struct LocalBlock<T> {
    a: Array2<T>,
    gram: Array2<T>,
    lambda_max: T,
}

impl<T: Real> LocalBlock<T> {
    pub fn new(a: ArrayView2<T>) -> Self {
        let gram = a.t().dot(&a);
        let lambda_max = lambda_max(gram.view());
        Self {
            a: a.to_owned(),
            gram,
            lambda_max,
        }
    }

    pub fn matrix(&self) -> ArrayView2<'_, T> {
        self.a.view()
    }

    /// `λ_max(AᵀA)`.
    pub fn lambda_max(&self) -> T {
        self.lambda_max
    }

    pub fn features(&self) -> usize {
        self.a.ncols()
    }

    pub fn samples(&self) -> usize {
        self.a.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaOutcome<T> {
    pub theta: Array1<T>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdOutcome<T> {
    pub state: BcdState<T>,
    /// `δ` at the warm start followed by its value after every half-step
    /// (θ then β), so `1 + 2T` entries.
    pub delta_trace: Vec<T>,
    pub theta_converged: bool,
    pub theta_iterations: usize,
}

impl<T: Real> BcdOutcome<T> {
    pub fn final_delta(&self) -> T {
        *self.delta_trace.last().expect("trace holds the warm-start value")
    }
}

/// `N·G(e) = f(N·e)/N`.
fn scaled_loss_value<T: Real>(f: &FunctionSpec<T>, n: T, e: ArrayView1<T>) -> T {
    f.value((&e * n).view()) / n
}

/// A subgradient of `φ ↦ N·G(q + Aφ)`, namely `Aᵀ ∂f(N(q + Aφ))`.
fn scaled_loss_subgradient<T: Real>(f: &FunctionSpec<T>, n: T, a: ArrayView2<T>, e: ArrayView1<T>) -> Array1<T> {
    a.t().dot(&f.subgradient((&e * n).view()))
}

/// Closed-form β block: the minimizer of `‖β‖²/(4ρ̄) + N·G(q − β)`.
pub fn beta_update<T: Real>(f: &FunctionSpec<T>, q: ArrayView1<T>, rho_bar: T, num_agents: usize) -> Array1<T> {
    let n = T::from_count(num_agents);
    let lambda = T::lit(2.0) * rho_bar * n;
    let s = f.prox(lambda, (&q * n).view()) / n;
    &q - &s
}

/// Objective of the θ block on `φ = −θ`: `r(φ) + N·G(q' + Aφ)`.
pub fn theta_objective<T: Real>(
    f: &FunctionSpec<T>,
    r: &FunctionSpec<T>,
    a: ArrayView2<T>,
    q_prime: ArrayView1<T>,
    num_agents: usize,
    theta: ArrayView1<T>,
) -> T {
    let phi = theta.mapv(|x| -x);
    let e = &q_prime + &a.dot(&phi);
    r.value(phi.view()) + scaled_loss_value(f, T::from_count(num_agents), e.view())
}

/// Approximately minimizes `r(−θ) + N·G(q' − Aθ)` starting from `init`.
///
/// Uses proximal gradient for a smooth loss and proximal subgradient steps
/// otherwise (`LinearizedDual` needs β and is handled by [`bcd_solve`]; here it
/// falls back to the subgradient rule). Running out of budget is reported in
/// the outcome, not as an error.
pub fn theta_update<T: Real>(
    f: &FunctionSpec<T>,
    r: &FunctionSpec<T>,
    block: &LocalBlock<T>,
    q_prime: ArrayView1<T>,
    num_agents: usize,
    init: ArrayView1<T>,
    cfg: &BcdConfig<T>,
) -> ThetaOutcome<T> {
    match cfg.step_rule.resolve(f) {
        StepRule::FixedLipschitz => proximal_gradient_theta(f, r, block, q_prime, num_agents, init, cfg),
        _ => subgradient_theta(f, r, block, q_prime, num_agents, init, cfg),
    }
}

fn proximal_gradient_theta<T: Real>(
    f: &FunctionSpec<T>,
    r: &FunctionSpec<T>,
    block: &LocalBlock<T>,
    q_prime: ArrayView1<T>,
    num_agents: usize,
    init: ArrayView1<T>,
    cfg: &BcdConfig<T>,
) -> ThetaOutcome<T> {
    let n = T::from_count(num_agents);
    let lipschitz = n * f.curvature() * block.lambda_max;
    if lipschitz == T::zero() {
        // The loss term is constant in θ and every regularizer is minimized at 0.
        return ThetaOutcome {
            theta: Array1::zeros(block.features()),
            converged: true,
            iterations: 0,
        };
    }
    let step = T::one() / lipschitz;
    let a = block.a.view();
    // for the squared loss the gradient only needs AᵀA and Aᵀq'
    let quadratic = matches!(f, FunctionSpec::SquaredL2Loss);
    let at_q = a.t().dot(&q_prime);
    let two_n = T::lit(2.0) * n;
    let mut phi = init.mapv(|x| -x);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.theta_budget {
        iterations += 1;
        let grad = if quadratic {
            (&at_q + &block.gram.dot(&phi)) * two_n
        } else {
            let e = &q_prime + &a.dot(&phi);
            a.t().dot(&f.subgradient((&e * n).view()))
        };
        let next = r.prox(step, (&phi - &(grad * step)).view());
        let moved = norm((&next - &phi).view());
        let scale = norm(next.view()).max(T::one());
        phi = next;
        if moved <= cfg.theta_tolerance * scale {
            converged = true;
            break;
        }
    }
    ThetaOutcome {
        theta: phi.mapv(|x| -x),
        converged,
        iterations,
    }
}

fn subgradient_theta<T: Real>(
    f: &FunctionSpec<T>,
    r: &FunctionSpec<T>,
    block: &LocalBlock<T>,
    q_prime: ArrayView1<T>,
    num_agents: usize,
    init: ArrayView1<T>,
    cfg: &BcdConfig<T>,
) -> ThetaOutcome<T> {
    let n = T::from_count(num_agents);
    let a = block.a.view();
    let objective = |phi: &Array1<T>| {
        let e = &q_prime + &a.dot(phi);
        r.value(phi.view()) + scaled_loss_value(f, n, e.view())
    };
    let mut phi = init.mapv(|x| -x);
    let mut best = phi.clone();
    let mut best_value = objective(&phi);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.theta_budget {
        iterations += 1;
        let step = cfg.subgradient_scale / T::from_count(iterations).sqrt();
        let e = &q_prime + &a.dot(&phi);
        let g = scaled_loss_subgradient(f, n, a, e.view());
        let next = r.prox(step, (&phi - &(g * step)).view());
        let moved = norm((&next - &phi).view());
        let scale = norm(next.view()).max(T::one());
        phi = next;
        let value = objective(&phi);
        if value < best_value {
            best_value = value;
            best.assign(&phi);
        }
        if moved <= cfg.theta_tolerance * scale {
            converged = true;
            break;
        }
    }
    ThetaOutcome {
        theta: best.mapv(|x| -x),
        converged,
        iterations,
    }
}

/// One linearized θ step. `w0 = −c − b/N`; the loss subgradient is the
/// block-optimal `β(θ)/(2ρ̄)` at the current θ.
pub fn linearized_theta_update<T: Real>(
    f: &FunctionSpec<T>,
    r: &FunctionSpec<T>,
    block: &LocalBlock<T>,
    w0: ArrayView1<T>,
    num_agents: usize,
    rho_bar: T,
    init: ArrayView1<T>,
) -> ThetaOutcome<T> {
    if block.lambda_max == T::zero() {
        return ThetaOutcome {
            theta: Array1::zeros(block.features()),
            converged: true,
            iterations: 0,
        };
    }
    let a = block.a.view();
    let two_rho_bar = T::lit(2.0) * rho_bar;
    let phi = init.mapv(|x| -x);
    let q = &w0 + &a.dot(&phi);
    let beta = beta_update(f, q.view(), rho_bar, num_agents);
    let grad = a.t().dot(&beta) / two_rho_bar;
    let step = two_rho_bar / block.lambda_max;
    let next = r.prox(step, (&phi - &(grad * step)).view());
    ThetaOutcome {
        theta: next.mapv(|x| -x),
        converged: false,
        iterations: 1,
    }
}

/// `δ(θ, β)` for the current outer iterate.
#[allow(clippy::too_many_arguments)]
pub fn delta_value<T: Real>(
    f: &FunctionSpec<T>,
    r: &FunctionSpec<T>,
    c_prev: ArrayView1<T>,
    a: ArrayView2<T>,
    b: ArrayView1<T>,
    num_agents: usize,
    rho_bar: T,
    theta: ArrayView1<T>,
    beta: ArrayView1<T>,
) -> T {
    let n = T::from_count(num_agents);
    let neg_theta = theta.mapv(|x| -x);
    let e = c_prev.mapv(|x| -x) - &a.dot(&theta) - &(&b / n) - beta;
    -r.value(neg_theta.view()) - norm_sq(beta) / (T::lit(4.0) * rho_bar) - scaled_loss_value(f, n, e.view())
}

/// Runs `T` sweeps of θ-update then β-update from the warm state.
#[allow(clippy::too_many_arguments)]
pub fn bcd_solve<T: Real>(
    f: &FunctionSpec<T>,
    r: &FunctionSpec<T>,
    block: &LocalBlock<T>,
    c_prev: ArrayView1<T>,
    b: ArrayView1<T>,
    num_agents: usize,
    rho_bar: T,
    warm: &BcdState<T>,
    cfg: &BcdConfig<T>,
) -> BcdOutcome<T> {
    let n = T::from_count(num_agents);
    let a = block.a.view();
    let w0 = c_prev.mapv(|x| -x) - &(&b / n);
    let rule = cfg.step_rule.resolve(f);
    let delta = |theta: &Array1<T>, beta: &Array1<T>| {
        delta_value(f, r, c_prev, a, b, num_agents, rho_bar, theta.view(), beta.view())
    };

    let mut theta = warm.theta.clone();
    let mut beta = warm.beta.clone();
    let mut trace = Vec::with_capacity(1 + 2 * cfg.sweeps);
    trace.push(delta(&theta, &beta));
    let mut theta_converged = true;
    let mut theta_iterations = 0;
    for _ in 0..cfg.sweeps {
        let outcome = match rule {
            StepRule::LinearizedDual => linearized_theta_update(f, r, block, w0.view(), num_agents, rho_bar, theta.view()),
            _ => {
                let q_prime = &w0 - &beta;
                theta_update(f, r, block, q_prime.view(), num_agents, theta.view(), cfg)
            }
        };
        theta = outcome.theta;
        theta_iterations += outcome.iterations;
        theta_converged &= outcome.converged || rule == StepRule::LinearizedDual;
        trace.push(delta(&theta, &beta));

        let q = &w0 - &a.dot(&theta);
        beta = beta_update(f, q.view(), rho_bar, num_agents);
        trace.push(delta(&theta, &beta));
    }
    BcdOutcome {
        state: BcdState { theta, beta },
        delta_trace: trace,
        theta_converged,
        theta_iterations,
    }
}
