//! Centralized reference solutions of `min_x f(Ax − b) + Σ_i r_i(x_i)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::agent::Orientation;
use crate::data::{write_vector_csv, FeaturePartition, DEFAULT_NOISE_VARIANCE};
use crate::error::{Error, Result};
use crate::functions::FunctionSpec;
use crate::linalg::{cholesky, cholesky_solve, lambda_max, norm, norm_sq};
use crate::scalar::Real;
use crate::simulator::{run, RunConfig};
use crate::topology::Topology;

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200_000;

pub const CALIBRATION_SAMPLES: usize = 8;
pub const CALIBRATION_ROUNDS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    ClosedFormRidge,
    /// Accelerated proximal gradient with adaptive restart (smooth `f`).
    ProximalGradient,
    /// Chambolle–Pock primal-dual splitting (non-smooth `f`).
    PrimalDual,
}

impl OracleMethod {
    pub fn name(self) -> &'static str {
        match self {
            OracleMethod::ClosedFormRidge => "closed-form-ridge",
            OracleMethod::ProximalGradient => "proximal-gradient",
            OracleMethod::PrimalDual => "primal-dual",
        }
    }
}

impl fmt::Display for OracleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OracleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [OracleMethod::ClosedFormRidge, OracleMethod::ProximalGradient, OracleMethod::PrimalDual]
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::parse("oracle method", None, format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution<T> {
    pub x_star: Array1<T>,
    /// `∇f(Ax° − b)`; absent for non-smooth `f`.
    pub mu_star: Option<Array1<T>>,
    pub objective_value: T,
    pub method: OracleMethod,
    pub iterations_used: usize,
    /// False when `max_iter` ran out before the tolerance was met.
    pub converged: bool,
}

impl<T: Real> OracleSolution<T> {
    pub fn summary_csv(&self) -> String {
        format!(
            "objective,method,iterations\n{},{},{}\n",
            self.objective_value, self.method, self.iterations_used
        )
    }

    /// Writes `x_star.csv`, `mu_star.csv` (when present) and `summary.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_vector_csv(&dir.join("x_star.csv"), self.x_star.view())?;
        if let Some(mu) = &self.mu_star {
            write_vector_csv(&dir.join("mu_star.csv"), mu.view())?;
        }
        let path = dir.join("summary.csv");
        std::fs::write(&path, self.summary_csv()).map_err(|e| Error::io(&path, e))
    }

    /// Slices `x°` into the per-agent blocks.
    pub fn blocks(&self, sizes: &[usize]) -> Vec<Array1<T>> {
        let mut offset = 0;
        sizes
            .iter()
            .map(|&p| {
                let block = self.x_star.slice(s![offset..offset + p]).to_owned();
                offset += p;
                block
            })
            .collect()
    }
}

fn check_problem<T: Real>(a: ArrayView2<T>, b: ArrayView1<T>, regs: &[FunctionSpec<T>], sizes: &[usize]) -> Result<()> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!("A has {} rows, b has {} entries", a.nrows(), b.len())));
    }
    if regs.len() != sizes.len() {
        return Err(Error::DimensionMismatch(format!("{} regularizers for {} blocks", regs.len(), sizes.len())));
    }
    if sizes.iter().sum::<usize>() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "block sizes sum to {}, A has {} columns",
            sizes.iter().sum::<usize>(),
            a.ncols()
        )));
    }
    if let Some(r) = regs.iter().find(|r| r.is_loss()) {
        return Err(Error::Unsupported(format!("{r} used as a regularizer")));
    }
    Ok(())
}

fn block_ranges(sizes: &[usize]) -> Vec<(usize, usize)> {
    let mut offset = 0;
    sizes
        .iter()
        .map(|&p| {
            let range = (offset, offset + p);
            offset += p;
            range
        })
        .collect()
}

fn reg_value<T: Real>(regs: &[FunctionSpec<T>], ranges: &[(usize, usize)], x: ArrayView1<T>) -> T {
    regs.iter()
        .zip(ranges)
        .map(|(r, &(lo, hi))| r.value(x.slice(s![lo..hi])))
        .sum()
}

fn reg_prox<T: Real>(regs: &[FunctionSpec<T>], ranges: &[(usize, usize)], step: T, q: ArrayView1<T>) -> Array1<T> {
    let mut out = Array1::zeros(q.len());
    for (r, &(lo, hi)) in regs.iter().zip(ranges) {
        out.slice_mut(s![lo..hi]).assign(&r.prox(step, q.slice(s![lo..hi])));
    }
    out
}

/// `f(Ax − b) + Σ_i r_i(x_i)`.
pub fn objective<T: Real>(
    a: ArrayView2<T>,
    b: ArrayView1<T>,
    f: &FunctionSpec<T>,
    regs: &[FunctionSpec<T>],
    sizes: &[usize],
    x: ArrayView1<T>,
) -> T {
    let residual = a.dot(&x) - b;
    f.value(residual.view()) + reg_value(regs, &block_ranges(sizes), x)
}

/// Distance of `0` from `Aᵀ∇f(Ax − b) + ∂r(x)`, measured blockwise; smooth `f` only.
pub fn kkt_residual<T: Real>(
    a: ArrayView2<T>,
    b: ArrayView1<T>,
    f: &FunctionSpec<T>,
    regs: &[FunctionSpec<T>],
    sizes: &[usize],
    x: ArrayView1<T>,
) -> Result<T> {
    if !f.is_smooth() {
        return Err(Error::Unsupported(format!("KKT residual for non-smooth loss {f}")));
    }
    let grad = a.t().dot(&f.gradient((a.dot(&x) - b).view())?);
    let mut total = T::zero();
    for (r, &(lo, hi)) in regs.iter().zip(&block_ranges(sizes)) {
        let neg = grad.slice(s![lo..hi]).mapv(|g| -g);
        let d = r.subdiff_distance(x.slice(s![lo..hi]), neg.view());
        total += d * d;
    }
    Ok(total.sqrt())
}

pub fn solve_centralized<T: Real>(
    a: ArrayView2<T>,
    b: ArrayView1<T>,
    f: &FunctionSpec<T>,
    regs: &[FunctionSpec<T>],
    sizes: &[usize],
    tol: T,
    max_iter: usize,
) -> Result<OracleSolution<T>> {
    check_problem(a, b, regs, sizes)?;
    if !f.is_loss() {
        return Err(Error::Unsupported(format!("{f} used as a loss")));
    }
    let ranges = block_ranges(sizes);
    let ridge = matches!(f, FunctionSpec::SquaredL2Loss)
        && regs.iter().all(|r| matches!(r, FunctionSpec::SquaredL2Reg { .. }));
    let closed = if ridge { closed_form_ridge(a, b, regs, &ranges) } else { None };
    let (x, method, iterations, converged) = match closed {
        Some(x) => (x, OracleMethod::ClosedFormRidge, 0, true),
        None if f.is_smooth() => {
            let (x, it, ok) = accelerated_proximal_gradient(a, b, f, regs, &ranges, tol, max_iter);
            (x, OracleMethod::ProximalGradient, it, ok)
        }
        None => {
            let (x, it, ok) = primal_dual(a, b, f, regs, &ranges, tol, max_iter);
            (x, OracleMethod::PrimalDual, it, ok)
        }
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("oracle iterate is not finite".into()));
    }
    if !converged {
        log::warn!("oracle ({method}) stopped at max_iter = {max_iter} before reaching tol");
    }
    let residual = a.dot(&x) - b;
    let mu_star = if f.is_smooth() { Some(f.gradient(residual.view())?) } else { None };
    Ok(OracleSolution {
        objective_value: f.value(residual.view()) + reg_value(regs, &ranges, x.view()),
        x_star: x,
        mu_star,
        method,
        iterations_used: iterations,
        converged,
    })
}

/// Oracle on a partition's assembled design matrix.
pub fn solve_partition<T: Real>(
    fp: &FeaturePartition<T>,
    f: &FunctionSpec<T>,
    regs: &[FunctionSpec<T>],
    tol: T,
    max_iter: usize,
) -> Result<OracleSolution<T>> {
    let a = fp.assemble();
    solve_centralized(a.view(), fp.response(), f, regs, &fp.sizes(), tol, max_iter)
}

/// `(AᵀA + D)x = Aᵀb` with `D` holding each block's `η`; `None` if not positive definite.
fn closed_form_ridge<T: Real>(
    a: ArrayView2<T>,
    b: ArrayView1<T>,
    regs: &[FunctionSpec<T>],
    ranges: &[(usize, usize)],
) -> Option<Array1<T>> {
    let mut system: Array2<T> = a.t().dot(&a);
    for (r, &(lo, hi)) in regs.iter().zip(ranges) {
        let FunctionSpec::SquaredL2Reg { eta } = *r else { return None };
        for j in lo..hi {
            system[[j, j]] += eta;
        }
    }
    let l = cholesky(system.view()).ok()?;
    Some(cholesky_solve(l.view(), a.t().dot(&b).view()))
}

fn accelerated_proximal_gradient<T: Real>(
    a: ArrayView2<T>,
    b: ArrayView1<T>,
    f: &FunctionSpec<T>,
    regs: &[FunctionSpec<T>],
    ranges: &[(usize, usize)],
    tol: T,
    max_iter: usize,
) -> (Array1<T>, usize, bool) {
    let p = a.ncols();
    let gram = a.t().dot(&a);
    let lipschitz = f.curvature() * lambda_max(gram.view());
    if lipschitz <= T::zero() {
        // A = 0: the loss is constant and only the regularizers matter
        return (Array1::zeros(p), 0, true);
    }
    let step = T::one() / lipschitz;
    let grad = |x: &Array1<T>| a.t().dot(&f.gradient((a.dot(x) - b).view()).expect("smooth loss"));
    let mapping = |y: &Array1<T>, g: &Array1<T>| {
        let next = reg_prox(regs, ranges, step, (y - &(g * step)).view());
        let gm = norm((y - &next).view()) * lipschitz;
        (next, gm)
    };

    let mut x = Array1::zeros(p);
    let (_, gm0) = mapping(&x, &grad(&x));
    // relative to the starting gradient-mapping norm so the target is scale-free
    let threshold = tol * gm0.max(T::one());
    let mut y = x.clone();
    let mut t = T::one();
    for it in 1..=max_iter {
        let (next, gm) = mapping(&y, &grad(&y));
        if gm <= threshold {
            return (next, it, true);
        }
        // gradient-based adaptive restart: drop momentum once it points uphill
        if (&y - &next).dot(&(&next - &x)) > T::zero() {
            t = T::one();
        }
        let t_next = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) / T::lit(2.0);
        y = &next + &((&next - &x) * ((t - T::one()) / t_next));
        x = next;
        t = t_next;
    }
    (x, max_iter, false)
}

/// Chambolle–Pock on `min_x R(x) + F(Ax)` with `F(z) = f(z − b)`, accelerated when `R` is strongly convex.
fn primal_dual<T: Real>(
    a: ArrayView2<T>,
    b: ArrayView1<T>,
    f: &FunctionSpec<T>,
    regs: &[FunctionSpec<T>],
    ranges: &[(usize, usize)],
    tol: T,
    max_iter: usize,
) -> (Array1<T>, usize, bool) {
    let (m, p) = a.dim();
    let op_norm = lambda_max(a.t().dot(&a).view()).sqrt();
    if op_norm <= T::zero() {
        return (Array1::zeros(p), 0, true);
    }
    let strong = regs
        .iter()
        .map(|r| r.curvature())
        .fold(T::infinity(), T::min);
    let gamma = if strong.is_finite() { strong } else { T::zero() };
    let mut tau = T::lit(0.99) / op_norm;
    let mut sigma = T::lit(0.99) / op_norm;

    let mut x: Array1<T> = Array1::zeros(p);
    let mut x_bar = x.clone();
    let mut y: Array1<T> = Array1::zeros(m);
    let scale = norm(a.t().dot(&b).view()).max(T::one());
    for it in 1..=max_iter {
        // prox of σF* via Moreau: z − σ·prox_{F/σ}(z/σ), prox_{F/σ}(w) = b + prox_{f/σ}(w − b)
        let z = &y + &(a.dot(&x_bar) * sigma);
        let w = &z / sigma - b;
        let prox_f = &f.prox(T::one() / sigma, w.view()) + &b;
        let y_next = &z - &(prox_f * sigma);
        let x_next = reg_prox(regs, ranges, tau, (&x - &(a.t().dot(&y_next) * tau)).view());

        let dx = &x_next - &x;
        let dy = &y_next - &y;
        let primal_res = &dx / tau + a.t().dot(&dy);
        let dual_res = &dy / sigma + a.dot(&dx);
        let residual = (norm_sq(primal_res.view()) + norm_sq(dual_res.view())).sqrt();

        let theta = if gamma > T::zero() {
            let th = T::one() / (T::one() + T::lit(2.0) * gamma * tau).sqrt();
            tau *= th;
            sigma /= th;
            th
        } else {
            T::one()
        };
        x_bar = &x_next + &(&dx * theta);
        x = x_next;
        y = y_next;
        if residual <= tol * scale {
            return (x, it, true);
        }
    }
    (x, max_iter, false)
}

/// `μ° = ∇f(Ax° − b)`, the common dual optimum every agent should reach.
pub fn dual_optimum<T: Real>(
    sol: &OracleSolution<T>,
    a: ArrayView2<T>,
    b: ArrayView1<T>,
    f: &FunctionSpec<T>,
) -> Result<Array1<T>> {
    if !f.is_smooth() {
        return Err(Error::Unsupported(format!("dual optimum for non-smooth loss {f}")));
    }
    f.gradient((a.dot(&sol.x_star) - b).view())
}

/// Picks the sign relating `θ` to `x̂` from a seeded two-agent run against the oracle.
pub fn calibrate_orientation<T: Real>(f: &FunctionSpec<T>, r: &FunctionSpec<T>, seed: u64) -> Result<Orientation> {
    let fp = FeaturePartition::synthesize(2, CALIBRATION_SAMPLES, &[1, 1], DEFAULT_NOISE_VARIANCE, seed)?;
    let topo = Topology::line(2)?;
    calibrate_on(&fp, &topo, f, &[*r, *r], CALIBRATION_ROUNDS)
}

/// Runs the protocol with `x̂ = θ` and compares both signs against the centralized optimum.
pub fn calibrate_on<T: Real>(
    fp: &FeaturePartition<T>,
    topo: &Topology,
    f: &FunctionSpec<T>,
    regs: &[FunctionSpec<T>],
    rounds: usize,
) -> Result<Orientation> {
    let oracle = solve_partition(fp, f, regs, T::lit(DEFAULT_TOLERANCE), DEFAULT_MAX_ITER)?;
    let cfg = RunConfig {
        max_rounds: rounds,
        orientation: Some(Orientation::Plus),
        ..RunConfig::default()
    };
    let history = run(fp, topo, f, regs, &cfg, None)?;
    let theta = history.stacked_estimate();
    let plus = norm((&theta - &oracle.x_star).view()).to_f64_lossy();
    let minus = norm((&theta + &oracle.x_star).view()).to_f64_lossy();
    let target = norm(oracle.x_star.view()).to_f64_lossy();
    if plus == minus || plus.min(minus) > 0.5 * target {
        return Err(Error::CalibrationFailed { plus, minus, target });
    }
    let orientation = if plus < minus { Orientation::Plus } else { Orientation::Minus };
    log::info!("calibrated orientation {orientation} (error +1: {plus:.3e}, error -1: {minus:.3e})");
    Ok(orientation)
}
