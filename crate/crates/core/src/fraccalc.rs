//! Fractional-calculus kernels for the memory inner product and Wick
//! integrals of step functions.
//!
//! For Hurst `H > 1/2` the space of step integrands carries the inner
//! product
//!
//! ```text
//! <phi, psi> = alpha_H  int int  phi(r) psi(s) |r - s|^{2H-2} dr ds,
//! alpha_H = H (2H - 1),
//! ```
//!
//! which this module computes by two independent routes: a closed form
//! per rectangle pair, and the `L^2` product of the transfer-kernel
//! images `K phi`, where
//!
//! ```text
//! (K 1_{(0,u]})(t) = C_H t^{1/2-H} int_t^u s^{H-1/2} (s-t)^{H-3/2} ds.
//! ```
//!
//! The singular factor `(s-t)^{H-3/2}` has exponent in `(-1, -1/2)` and
//! defeats plain rules; every such integral is evaluated after the exact
//! power-law substitution `sigma = (s-t)^{H-1/2}`, which turns the
//! integrand into a smooth function handled by adaptive Gauss-Kronrod.

use crate::fbm::{self, FbmError, FbmPath};
use crate::grid::TimeGrid;
use crate::hurst::{Hurst, HurstError};
use crate::quad::{adaptive_gk, gauss4, QuadError};
use crate::rng::NormalSource;
use crate::special::{beta, gamma};

#[derive(Debug, Clone, PartialEq)]
pub enum FracError {
    Hurst(HurstError),
    /// Step function breakpoints must start at 0 and increase strictly.
    InvalidStepFunction(String),
    /// Adaptive quadrature could not reach its tolerance; carries the
    /// residual error estimate.
    QuadratureFailure { residual: f64 },
    /// A computed error estimate exceeded the requested tolerance.
    ToleranceNotReached { estimate: f64, tolerance: f64 },
    /// A Wick integral breakpoint does not lie on the path grid.
    Alignment { breakpoint: f64 },
    /// The embedding ratio of the zero function is undefined.
    ZeroFunction,
    Fbm(FbmError),
}

impl std::fmt::Display for FracError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FracError::Hurst(e) => write!(f, "{e}"),
            FracError::InvalidStepFunction(msg) => write!(f, "invalid step function: {msg}"),
            FracError::QuadratureFailure { residual } => {
                write!(f, "quadrature failure, residual estimate {residual:.3e}")
            }
            FracError::ToleranceNotReached { estimate, tolerance } => write!(
                f,
                "quadrature error estimate {estimate:.3e} exceeds tolerance {tolerance:.3e}"
            ),
            FracError::Alignment { breakpoint } => {
                write!(f, "breakpoint {breakpoint} is not a grid point; no silent interpolation")
            }
            FracError::ZeroFunction => write!(f, "zero function has no embedding ratio"),
            FracError::Fbm(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for FracError {}

impl From<HurstError> for FracError {
    fn from(e: HurstError) -> Self {
        FracError::Hurst(e)
    }
}

impl From<FbmError> for FracError {
    fn from(e: FbmError) -> Self {
        FracError::Fbm(e)
    }
}

impl From<QuadError> for FracError {
    fn from(e: QuadError) -> Self {
        match e {
            QuadError::ToleranceNotReached { residual } => {
                FracError::QuadratureFailure { residual }
            }
        }
    }
}

/// Default absolute quadrature tolerance.
pub const DEFAULT_QUAD_TOL: f64 = 1e-8;

/// Derived constants of the Hurst parameter.
///
/// `alpha_h = H(2H - 1)` weighs the double-integral norm; `c_h` is the
/// prefactor of the transfer kernel,
/// `sqrt(H(2H-1) / B(2-2H, H-1/2))`. Both vanish at `H = 1/2`.
#[derive(Debug, Clone, Copy)]
pub struct FracConstants {
    pub alpha_h: f64,
    pub c_h: f64,
}

impl FracConstants {
    pub fn new(h: Hurst) -> Self {
        let hv = h.value();
        if h.is_brownian() {
            return FracConstants { alpha_h: 0.0, c_h: 0.0 };
        }
        let alpha_h = hv * (2.0 * hv - 1.0);
        let c_h = (alpha_h / beta(2.0 - 2.0 * hv, hv - 0.5)).sqrt();
        FracConstants { alpha_h, c_h }
    }
}

/// A step function `sum_k a_k 1_{(t_k, t_{k+1}]}` with
/// `0 = t_0 < ... < t_N`. Intervals are left-open right-closed, exactly
/// as in the underlying integration theory; no midpoint conventions.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
}

impl StepFunction {
    pub fn new(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self, FracError> {
        if breakpoints.len() < 2 {
            return Err(FracError::InvalidStepFunction(
                "need at least two breakpoints".into(),
            ));
        }
        if breakpoints[0] != 0.0 {
            return Err(FracError::InvalidStepFunction(format!(
                "first breakpoint must be 0, got {}",
                breakpoints[0]
            )));
        }
        if levels.len() != breakpoints.len() - 1 {
            return Err(FracError::InvalidStepFunction(format!(
                "{} breakpoints need {} levels, got {}",
                breakpoints.len(),
                breakpoints.len() - 1,
                levels.len()
            )));
        }
        for w in breakpoints.windows(2) {
            if !(w[1].is_finite() && w[1] > w[0]) {
                return Err(FracError::InvalidStepFunction(
                    "breakpoints must increase strictly".into(),
                ));
            }
        }
        if levels.iter().any(|a| !a.is_finite()) {
            return Err(FracError::InvalidStepFunction("levels must be finite".into()));
        }
        Ok(StepFunction { breakpoints, levels })
    }

    /// The indicator `1_{(a, b]}` for `0 <= a < b`.
    pub fn indicator(a: f64, b: f64) -> Result<Self, FracError> {
        if !(a >= 0.0 && b > a) {
            return Err(FracError::InvalidStepFunction(format!(
                "indicator needs 0 <= a < b, got ({a}, {b}]"
            )));
        }
        if a == 0.0 {
            StepFunction::new(vec![0.0, b], vec![1.0])
        } else {
            StepFunction::new(vec![0.0, a, b], vec![0.0, 1.0])
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// Value at `t`; intervals are `(t_k, t_{k+1}]`, so `value_at(0) = 0`.
    pub fn value_at(&self, t: f64) -> f64 {
        if t <= self.breakpoints[0] || t > self.horizon() {
            return 0.0;
        }
        // First breakpoint >= t closes the interval containing t.
        let idx = self.breakpoints.partition_point(|&p| p < t);
        self.levels[idx - 1]
    }

    /// Exact `L^2([0, max T])` inner product with another step function.
    pub fn l2_inner(&self, other: &StepFunction) -> f64 {
        let mut acc = 0.0;
        for (j, aj) in self.levels.iter().enumerate() {
            if *aj == 0.0 {
                continue;
            }
            let (p0, p1) = (self.breakpoints[j], self.breakpoints[j + 1]);
            for (k, bk) in other.levels.iter().enumerate() {
                if *bk == 0.0 {
                    continue;
                }
                let (q0, q1) = (other.breakpoints[k], other.breakpoints[k + 1]);
                let overlap = (p1.min(q1) - p0.max(q0)).max(0.0);
                acc += aj * bk * overlap;
            }
        }
        acc
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_inner(self).max(0.0).sqrt()
    }
}

/// Right-sided Riemann-Liouville fractional integral
/// `(1/Gamma(alpha)) int_t^T f(s) (s - t)^{alpha - 1} ds`.
///
/// The endpoint singularity is removed analytically by the substitution
/// `sigma = (s - t)^alpha`; the transformed integrand is smooth and is
/// handled by adaptive Gauss-Kronrod at tolerance `tol`. Returns 0 for
/// `t >= T` by convention.
pub fn rl_right_integral<F: Fn(f64) -> f64>(
    f: F,
    alpha: f64,
    t_end: f64,
    t: f64,
    tol: f64,
) -> Result<f64, FracError> {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    if t >= t_end {
        return Ok(0.0);
    }
    let span = (t_end - t).powf(alpha);
    let inv_alpha = 1.0 / alpha;
    let q = adaptive_gk(|sigma| f(t + sigma.powf(inv_alpha)), 0.0, span, tol * alpha, 48)?;
    Ok(q.value * inv_alpha / gamma(alpha))
}

/// Core singular integral of the transfer kernel:
/// `J(t, u) = int_t^u s^{H-1/2} (s - t)^{H-3/2} ds` for `t < u`, else 0.
///
/// Computed after the exact substitution `sigma = (s - t)^{H-1/2}`, so
/// the integrand `(t + sigma^{1/(H-1/2)})^{H-1/2}` is smooth on the
/// transformed interval (linear when `t = 0`).
fn kernel_core_integral(h: Hurst, t: f64, u: f64) -> f64 {
    debug_assert!(!h.is_brownian());
    if u <= t {
        return 0.0;
    }
    let beta_exp = h.value() - 0.5;
    if t == 0.0 {
        // int_0^u s^{2H-2} ds
        return u.powf(2.0 * beta_exp) / (2.0 * beta_exp);
    }
    let span = (u - t).powf(beta_exp);
    let inv_beta = 1.0 / beta_exp;
    let q = adaptive_gk(
        |sigma| (t + sigma.powf(inv_beta)).powf(beta_exp),
        0.0,
        span,
        1e-11 * span.max(1.0),
        48,
    )
    .expect("transformed kernel integrand is smooth");
    q.value * inv_beta
}

/// Pointwise value of the transfer kernel of the indicator `1_{(0, u]}`:
/// `C_H t^{1/2-H} J(t, u)` for `0 < t < u`, zero for `t >= u`.
///
/// At `H = 1/2` the kernel is the indicator itself. The value at `t = 0`
/// is reported as 0 even though the kernel diverges there for
/// `H > 1/2`; the kernel is an `L^2` object and the origin carries no
/// mass.
pub fn kernel_indicator_value(h: Hurst, u: f64, t: f64) -> f64 {
    if h.is_brownian() {
        return if t > 0.0 && t <= u { 1.0 } else { 0.0 };
    }
    if t >= u || t < 0.0 {
        return 0.0;
    }
    if t == 0.0 {
        return 0.0;
    }
    let c = FracConstants::new(h).c_h;
    c * t.powf(0.5 - h.value()) * kernel_core_integral(h, t, u)
}

/// A kernel sampled on a time grid.
#[derive(Debug, Clone)]
pub struct SampledKernel {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl SampledKernel {
    /// CSV rows `t,value`.
    pub fn to_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "t,value")?;
        for (t, v) in self.grid.points().iter().zip(&self.values) {
            writeln!(w, "{},{}", crate::report::fmt_f64(*t), crate::report::fmt_f64(*v))?;
        }
        Ok(())
    }
}

/// Transfer kernel of `1_{(0, u]}` sampled on a grid. Requires
/// `H >= 1/2` and `0 < u <= T`.
pub fn transfer_kernel_indicator(
    h: Hurst,
    u: f64,
    t_end: f64,
    grid: &TimeGrid,
) -> Result<SampledKernel, FracError> {
    h.require_analysis()?;
    if !(u > 0.0 && u <= t_end) {
        return Err(FracError::InvalidStepFunction(format!(
            "indicator upper endpoint must satisfy 0 < u <= T, got u = {u}, T = {t_end}"
        )));
    }
    let values = grid.points().iter().map(|&t| kernel_indicator_value(h, u, t)).collect();
    Ok(SampledKernel { grid: grid.clone(), values })
}

/// Kernel image of a whole step function at time `t`.
fn kernel_step_value(h: Hurst, phi: &StepFunction, t: f64) -> f64 {
    if h.is_brownian() {
        return phi.value_at(t);
    }
    if t <= 0.0 {
        return 0.0;
    }
    let mut core = 0.0;
    let bp = phi.breakpoints();
    for (j, a) in phi.levels().iter().enumerate() {
        if *a == 0.0 {
            continue;
        }
        core += a * (kernel_core_integral(h, t, bp[j + 1]) - kernel_core_integral(h, t, bp[j]));
    }
    let c = FracConstants::new(h).c_h;
    c * t.powf(0.5 - h.value()) * core
}

/// Closed-form memory inner product of two step functions.
///
/// Expands both functions over their rectangles and uses the identity
/// `<1_{(a,b]}, 1_{(c,d]}> = (|b-c|^{2H} + |a-d|^{2H} - |a-c|^{2H}
/// - |b-d|^{2H}) / 2`, which at `H = 1/2` degenerates to the overlap
/// length, i.e. the `L^2` product.
///
/// # Panics
/// Panics below the analysis range `H >= 1/2`.
pub fn inner_product_closed(phi: &StepFunction, psi: &StepFunction, h: Hurst) -> f64 {
    assert!(h.is_analysis(), "memory inner product requires H >= 1/2");
    let two_h = h.two_h();
    let rect = |a: f64, b: f64, c: f64, d: f64| {
        0.5 * ((b - c).abs().powf(two_h) + (a - d).abs().powf(two_h)
            - (a - c).abs().powf(two_h)
            - (b - d).abs().powf(two_h))
    };
    let mut acc = 0.0;
    let pb = phi.breakpoints();
    let qb = psi.breakpoints();
    for (j, aj) in phi.levels().iter().enumerate() {
        if *aj == 0.0 {
            continue;
        }
        for (k, bk) in psi.levels().iter().enumerate() {
            if *bk == 0.0 {
                continue;
            }
            acc += aj * bk * rect(pb[j], pb[j + 1], qb[k], qb[k + 1]);
        }
    }
    acc
}

/// Memory norm from the closed form.
pub fn memory_norm(phi: &StepFunction, h: Hurst) -> f64 {
    inner_product_closed(phi, phi, h).max(0.0).sqrt()
}

/// Value and error estimate of the kernel-route inner product.
#[derive(Debug, Clone, Copy)]
pub struct InnerProduct {
    pub value: f64,
    pub error_estimate: f64,
}

/// Memory inner product through the kernel route:
/// the `L^2([0, T])` product of the two kernel images, integrated on a
/// mesh of roughly `resolution` cells graded toward the kink points.
/// The `t -> 0` sliver, where both kernels blow up like `t^{1/2-H}`, is
/// integrated in closed form against the leading asymptotics.
///
/// Fails when the internal Richardson estimate (difference against the
/// half-resolution result) exceeds `tol`.
pub fn inner_product_via_kernel(
    phi: &StepFunction,
    psi: &StepFunction,
    h: Hurst,
    resolution: usize,
    tol: Option<f64>,
) -> Result<InnerProduct, FracError> {
    h.require_analysis()?;
    if h.is_brownian() {
        // The kernel is the identity; the product is exactly L^2.
        return Ok(InnerProduct { value: phi.l2_inner(psi), error_estimate: 0.0 });
    }
    let coarse = kernel_route_value(phi, psi, h, (resolution / 2).max(16));
    let fine = kernel_route_value(phi, psi, h, resolution.max(32));
    let estimate = (fine - coarse).abs();
    if let Some(tol) = tol {
        if estimate > tol {
            return Err(FracError::ToleranceNotReached { estimate, tolerance: tol });
        }
    }
    Ok(InnerProduct { value: fine, error_estimate: estimate })
}

fn kernel_route_value(phi: &StepFunction, psi: &StepFunction, h: Hurst, resolution: usize) -> f64 {
    let t_end = phi.horizon().max(psi.horizon());
    // Panels between consecutive kink points of either function.
    let mut kinks: Vec<f64> = phi
        .breakpoints()
        .iter()
        .chain(psi.breakpoints().iter())
        .copied()
        .filter(|&p| p <= t_end)
        .collect();
    kinks.push(0.0);
    kinks.push(t_end);
    kinks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    kinks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * t_end.max(1.0));

    let hv = h.value();
    let consts = FracConstants::new(h);
    let f = |t: f64| kernel_step_value(h, phi, t) * kernel_step_value(h, psi, t);

    let mut total = 0.0;
    for w in kinks.windows(2) {
        let (p, q) = (w[0], w[1]);
        let len = q - p;
        let cells = ((resolution as f64 * len / t_end) as usize).max(8);
        let depth = (cells / 4).clamp(3, 40);
        let n_mid = (cells.saturating_sub(2 * depth)).max(2);

        // Graded mesh: geometric toward both panel ends, uniform middle.
        let mut mesh = Vec::with_capacity(2 * depth + n_mid + 1);
        let quarter = 0.25 * len;
        mesh.push(p);
        for k in (1..=depth).rev() {
            mesh.push(p + quarter * 0.5f64.powi(k as i32 - 1));
        }
        let mid_lo = p + quarter;
        let mid_hi = q - quarter;
        for i in 1..n_mid {
            mesh.push(mid_lo + (mid_hi - mid_lo) * i as f64 / n_mid as f64);
        }
        mesh.push(mid_hi);
        for k in 1..=depth {
            mesh.push(q - quarter * 0.5f64.powi(k as i32));
        }
        mesh.push(q);

        let mut start = 0;
        if p == 0.0 {
            // Closed-form sliver: both kernels behave like
            // C_H t^{1/2-H} G(0) with G the moment of the step function
            // against s^{2H-2}.
            let eps = mesh[1];
            let g = |sf: &StepFunction| -> f64 {
                let bp = sf.breakpoints();
                let mut acc = 0.0;
                for (j, a) in sf.levels().iter().enumerate() {
                    acc += a
                        * (bp[j + 1].powf(2.0 * hv - 1.0) - bp[j].powf(2.0 * hv - 1.0))
                        / (2.0 * hv - 1.0);
                }
                acc
            };
            let power = 2.0 - 2.0 * hv;
            total += consts.c_h * consts.c_h * g(phi) * g(psi) * eps.powf(power) / power;
            start = 1;
        }
        for c in mesh.windows(2).skip(start) {
            total += gauss4(&f, c[0], c[1]);
        }
    }
    total
}

/// Ratio of the memory norm to the `L^2` norm, a finite-sample witness
/// of the embedding of `L^2` into the memory space.
pub fn embedding_ratio(phi: &StepFunction, h: Hurst) -> Result<f64, FracError> {
    let l2 = phi.l2_norm();
    if l2 == 0.0 {
        return Err(FracError::ZeroFunction);
    }
    Ok(memory_norm(phi, h) / l2)
}

/// Wick integral of a deterministic step function against a sampled
/// path: `sum_k a_k (B(t_{k+1}) - B(t_k))`. For deterministic
/// integrands this finite sum is the Skorokhod integral; there is no
/// correction term.
///
/// Every breakpoint must lie on the path grid; off-grid breakpoints are
/// an alignment error, never silently interpolated.
pub fn wick_integral(phi: &StepFunction, path: FbmPath<'_>) -> Result<f64, FracError> {
    let mut acc = 0.0;
    let bp = phi.breakpoints();
    for (j, a) in phi.levels().iter().enumerate() {
        if *a == 0.0 {
            // Zero levels contribute nothing; their endpoints need not
            // be resolvable on the grid.
            continue;
        }
        let lo = path
            .grid
            .index_of(bp[j])
            .ok_or(FracError::Alignment { breakpoint: bp[j] })?;
        let hi = path
            .grid
            .index_of(bp[j + 1])
            .ok_or(FracError::Alignment { breakpoint: bp[j + 1] })?;
        acc += a * (path.values[hi] - path.values[lo]);
    }
    Ok(acc)
}

/// Monte Carlo check of the integral isometry
/// `E[I(phi) I(psi)] = <phi, psi>`.
#[derive(Debug, Clone)]
pub struct IsometryReport {
    pub analytic: f64,
    pub mc_estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub pass: bool,
}

impl IsometryReport {
    /// CSV row `name,analytic,mc,se,pass` under the standard header.
    pub fn csv_row(&self, name: &str) -> Vec<String> {
        vec![
            name.to_string(),
            crate::report::fmt_f64(self.analytic),
            crate::report::fmt_f64(self.mc_estimate),
            crate::report::fmt_f64(self.std_error),
            if self.pass { "1".into() } else { "0".into() },
        ]
    }
}

/// Estimate `E[I(phi) I(psi)]` over a fresh ensemble and compare with
/// the closed-form inner product at three standard errors. Failure is a
/// reported outcome, not an error.
pub fn isometry_report(
    phi: &StepFunction,
    psi: &StepFunction,
    h: Hurst,
    n_paths: usize,
    master_seed: u64,
) -> Result<IsometryReport, FracError> {
    // Only breakpoint values of the path matter, so sample the paths
    // exactly on the merged breakpoints.
    let t_end = phi.horizon().max(psi.horizon());
    let mut pts: Vec<f64> =
        phi.breakpoints().iter().chain(psi.breakpoints().iter()).copied().collect();
    pts.push(0.0);
    pts.push(t_end);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * t_end.max(1.0));
    let grid = TimeGrid::from_points(pts).map_err(|_| {
        FracError::InvalidStepFunction("breakpoints do not form a valid grid".into())
    })?;
    let ens = fbm::sample_dense(h, &grid, n_paths, master_seed)?;

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for p in ens.paths() {
        let prod = wick_integral(phi, p)? * wick_integral(psi, p)?;
        sum += prod;
        sum_sq += prod * prod;
    }
    let n = n_paths as f64;
    let mc_estimate = sum / n;
    let var = (sum_sq / n - mc_estimate * mc_estimate).max(0.0);
    let std_error = (var / n).sqrt();
    let analytic = inner_product_closed(phi, psi, h);
    let pass = (mc_estimate - analytic).abs() <= 3.0 * std_error;
    Ok(IsometryReport { analytic, mc_estimate, std_error, n_paths, pass })
}

/// Mean of the Wick integral over an ensemble together with its
/// standard error; the divergence of a deterministic integrand is
/// centered, so this estimates zero.
pub fn wick_mean(
    phi: &StepFunction,
    ens: &fbm::PathEnsemble,
) -> Result<(f64, f64), FracError> {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for p in ens.paths() {
        let v = wick_integral(phi, p)?;
        sum += v;
        sum_sq += v * v;
    }
    let n = ens.n_paths() as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// Convenience used by tests and the verify suites: deterministic
/// pseudo-random step functions on `[0, horizon]`.
pub fn random_step_function(
    seed: u64,
    index: u64,
    horizon: f64,
    max_pieces: usize,
) -> StepFunction {
    let mut src = NormalSource::new(seed, index);
    let pieces = 2 + (src.next_normal().abs() * 2.0) as usize % max_pieces.max(1);
    let mut cuts: Vec<f64> = (0..pieces - 1)
        .map(|_| {
            let u = (src.next_normal().tanh() + 1.0) / 2.0; // in (0, 1)
            (0.05f64 + 0.9 * u) * horizon
        })
        .collect();
    cuts.push(horizon);
    cuts.push(0.0);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-3 * horizon);
    if *cuts.last().unwrap() < horizon {
        cuts.push(horizon);
    }
    let levels: Vec<f64> = (0..cuts.len() - 1).map(|_| src.next_normal()).collect();
    StepFunction::new(cuts, levels).expect("construction is valid by design")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn h(v: f64) -> Hurst {
        Hurst::new(v).unwrap()
    }

    #[test]
    fn constants_match_definitions() {
        let c = FracConstants::new(h(0.75));
        assert_relative_eq!(c.alpha_h, 0.75 * 0.5, max_relative = 1e-15);
        let expect = (0.375 / beta(0.5, 0.25)).sqrt();
        assert_relative_eq!(c.c_h, expect, max_relative = 1e-13);
        let b = FracConstants::new(h(0.5));
        assert_eq!(b.alpha_h, 0.0);
        assert_eq!(b.c_h, 0.0);
    }

    #[test]
    fn step_function_construction_and_lookup() {
        let s = StepFunction::new(vec![0.0, 0.25, 0.75, 1.0], vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(s.value_at(0.0), 0.0);
        assert_eq!(s.value_at(0.1), 1.0);
        assert_eq!(s.value_at(0.25), 1.0);
        assert_eq!(s.value_at(0.26), -2.0);
        assert_eq!(s.value_at(1.0), 0.5);
        assert_eq!(s.value_at(1.5), 0.0);
        assert!(StepFunction::new(vec![0.1, 0.5], vec![1.0]).is_err());
        assert!(StepFunction::new(vec![0.0, 0.5, 0.5], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn rl_integral_oracles() {
        // f = 0.
        let z = rl_right_integral(|_| 0.0, 0.3, 1.0, 0.2, 1e-10).unwrap();
        assert_abs_diff_eq!(z, 0.0, epsilon = 1e-14);
        // f = 1: closed form (T - t)^alpha / Gamma(alpha + 1).
        let v = rl_right_integral(|_| 1.0, 0.25, 1.0, 0.0, 1e-10).unwrap();
        let expect = 1.0 / gamma(1.25);
        assert_relative_eq!(v, expect, max_relative = 1e-9);
        assert_relative_eq!(v, 1.10326, max_relative = 1e-4);
        // f(s) = s at alpha = 1/2, t = 0, T = 1: the antiderivative gives
        // (1/Gamma(1/2)) * 2/3 = 2 / (3 sqrt(pi)).
        let v = rl_right_integral(|s| s, 0.5, 1.0, 0.0, 1e-10).unwrap();
        let expect = 2.0 / (3.0 * std::f64::consts::PI.sqrt());
        assert_relative_eq!(v, expect, max_relative = 1e-9);
        // General t: antiderivative t(T-t)^a/(a Gamma(a)) + (T-t)^{a+1}/((a+1) Gamma(a)).
        let (alpha, t, t_end) = (0.5, 0.3, 1.0);
        let v = rl_right_integral(|s| s, alpha, t_end, t, 1e-10).unwrap();
        let g = gamma(alpha);
        let expect = t * (t_end - t).powf(alpha) / (alpha * g)
            + (t_end - t).powf(alpha + 1.0) / ((alpha + 1.0) * g);
        assert_relative_eq!(v, expect, max_relative = 1e-9);
        // t past the horizon returns 0 by convention.
        assert_eq!(rl_right_integral(|s| s, 0.5, 1.0, 1.0, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn kernel_vanishes_beyond_support_and_reduces_at_half() {
        assert_eq!(kernel_indicator_value(h(0.75), 0.5, 0.5), 0.0);
        assert_eq!(kernel_indicator_value(h(0.75), 0.5, 0.9), 0.0);
        assert_eq!(kernel_indicator_value(h(0.5), 0.5, 0.2), 1.0);
        assert_eq!(kernel_indicator_value(h(0.5), 0.5, 0.7), 0.0);
    }

    #[test]
    fn kernel_squared_integrates_to_unit_variance() {
        // ||1_{(0,1]}||^2 in the memory space equals Var(B_1) = 1, and the
        // kernel route must reproduce it.
        let one = StepFunction::indicator(0.0, 1.0).unwrap();
        for hv in [0.6, 0.75, 0.9] {
            let ip = inner_product_via_kernel(&one, &one, h(hv), 4096, None).unwrap();
            assert_relative_eq!(ip.value, 1.0, max_relative = 2e-5);
        }
    }

    #[test]
    fn kernel_cross_product_matches_covariance_difference() {
        // <1_{(0,1]}, 1_{(0.25,0.75]}> = E[B_1 (B_{0.75} - B_{0.25})]
        //                              = 0.75^{2H} - 0.25^{2H} at H = 3/4.
        let one = StepFunction::indicator(0.0, 1.0).unwrap();
        let mid = StepFunction::indicator(0.25, 0.75).unwrap();
        let expect = 0.75f64.powf(1.5) - 0.25f64.powf(1.5);
        let ip = inner_product_via_kernel(&one, &mid, h(0.75), 4096, None).unwrap();
        assert_relative_eq!(ip.value, expect, max_relative = 5e-5);
        assert_relative_eq!(
            inner_product_closed(&one, &mid, h(0.75)),
            expect,
            max_relative = 1e-14
        );
        assert_relative_eq!(expect, 0.5245, max_relative = 1e-4);
    }

    #[test]
    fn closed_inner_product_against_brute_force_double_integral() {
        // Independent oracle: alpha_H * int_0^1 int_{0.25}^{0.75}
        // |r - s|^{2H-2} ds dr with the inner integral in closed form at
        // H = 0.75 (exponent -1/2).
        let inner = |r: f64| {
            let (c, d) = (0.25f64, 0.75f64);
            if r <= c {
                2.0 * ((d - r).sqrt() - (c - r).sqrt())
            } else if r >= d {
                2.0 * ((r - c).sqrt() - (r - d).sqrt())
            } else {
                2.0 * ((r - c).sqrt() + (d - r).sqrt())
            }
        };
        let alpha_h = FracConstants::new(h(0.75)).alpha_h;
        let oracle = alpha_h * adaptive_gk(inner, 0.0, 1.0, 1e-12, 40).unwrap().value;
        let one = StepFunction::indicator(0.0, 1.0).unwrap();
        let mid = StepFunction::indicator(0.25, 0.75).unwrap();
        assert_relative_eq!(
            inner_product_closed(&one, &mid, h(0.75)),
            oracle,
            max_relative = 1e-9
        );
    }

    #[test]
    fn inner_products_collapse_to_l2_at_brownian_boundary() {
        let a = StepFunction::new(vec![0.0, 0.3, 0.7, 1.0], vec![1.0, -1.0, 2.0]).unwrap();
        let b = StepFunction::new(vec![0.0, 0.5, 1.0], vec![0.5, 1.5]).unwrap();
        assert_relative_eq!(
            inner_product_closed(&a, &b, h(0.5)),
            a.l2_inner(&b),
            max_relative = 1e-12
        );
        let ip = inner_product_via_kernel(&a, &b, h(0.5), 128, None).unwrap();
        assert_eq!(ip.value, a.l2_inner(&b));
        // Distant disjoint supports are L^2-orthogonal at H = 1/2.
        let u = StepFunction::indicator(0.0, 0.2).unwrap();
        let v = StepFunction::indicator(0.7, 0.9).unwrap();
        assert_abs_diff_eq!(inner_product_closed(&u, &v, h(0.5)), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn via_kernel_converges_to_closed_form() {
        let a = random_step_function(5, 0, 1.0, 4);
        let b = random_step_function(5, 1, 1.0, 4);
        let hv = h(0.8);
        let closed = inner_product_closed(&a, &b, hv);
        let mut errs = Vec::new();
        for res in [64usize, 256, 1024] {
            let ip = inner_product_via_kernel(&a, &b, hv, res, None).unwrap();
            errs.push((ip.value - closed).abs());
        }
        assert!(errs[2] < 1e-5, "finest error {}", errs[2]);
        // Observed convergence order at least 1 in resolution.
        let order = (errs[0] / errs[2]).log2() / 4.0;
        assert!(
            order >= 1.0 || errs[2] < 1e-9,
            "order {order}, errors {errs:?}"
        );
    }

    #[test]
    fn embedding_ratio_examples() {
        let one = StepFunction::indicator(0.0, 1.0).unwrap();
        assert_relative_eq!(embedding_ratio(&one, h(0.75)).unwrap(), 1.0, max_relative = 1e-12);
        let any = random_step_function(9, 2, 1.0, 5);
        assert_relative_eq!(embedding_ratio(&any, h(0.5)).unwrap(), 1.0, max_relative = 1e-12);
        let zero = StepFunction::new(vec![0.0, 1.0], vec![0.0]).unwrap();
        assert!(matches!(embedding_ratio(&zero, h(0.75)), Err(FracError::ZeroFunction)));
    }

    #[test]
    fn embedding_ratio_finite_over_family() {
        // Exhaustive scan over a documented 50-function family.
        let hv = h(0.9);
        let mut max_ratio = 0.0f64;
        for i in 0..50 {
            let f = random_step_function(1234, i, 1.0, 6);
            if f.l2_norm() == 0.0 {
                continue;
            }
            let r = embedding_ratio(&f, hv).unwrap();
            assert!(r.is_finite());
            max_ratio = max_ratio.max(r);
        }
        assert!(max_ratio.is_finite() && max_ratio > 0.0);
    }

    #[test]
    fn wick_integral_telescopes_and_aligns() {
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let ens = fbm::sample_dense(h(0.7), &grid, 1, 3).unwrap();
        let path = ens.path(0);
        let full = StepFunction::indicator(0.0, 1.0).unwrap();
        let v = wick_integral(&full, path).unwrap();
        assert_relative_eq!(v, path.values[8], max_relative = 1e-15);
        let zero = StepFunction::new(vec![0.0, 1.0], vec![0.0]).unwrap();
        assert_eq!(wick_integral(&zero, path).unwrap(), 0.0);
        let off = StepFunction::indicator(0.3, 0.9).unwrap();
        assert!(matches!(wick_integral(&off, path), Err(FracError::Alignment { .. })));
    }

    #[test]
    fn wick_mean_is_centered() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let ens = fbm::sample_dense(h(0.75), &grid, 50_000, 11).unwrap();
        let phi = StepFunction::indicator(0.25, 0.75).unwrap();
        let (mean, se) = wick_mean(&phi, &ens).unwrap();
        assert!(mean.abs() <= 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn isometry_reports_pass_on_documented_cases() {
        let one = StepFunction::indicator(0.0, 1.0).unwrap();
        let mid = StepFunction::indicator(0.25, 0.75).unwrap();
        let r = isometry_report(&one, &one, h(0.75), 40_000, 5).unwrap();
        assert_relative_eq!(r.analytic, 1.0, max_relative = 1e-12);
        assert!(r.pass, "mc {} vs 1.0, se {}", r.mc_estimate, r.std_error);
        let r = isometry_report(&one, &mid, h(0.75), 40_000, 6).unwrap();
        let expect = 0.75f64.powf(1.5) - 0.25f64.powf(1.5);
        assert_relative_eq!(r.analytic, expect, max_relative = 1e-12);
        assert!(r.pass);
        // Disjoint supports at H = 1/2 are uncorrelated.
        let a = StepFunction::indicator(0.0, 0.25).unwrap();
        let b = StepFunction::indicator(0.5, 1.0).unwrap();
        let r = isometry_report(&a, &b, h(0.5), 40_000, 7).unwrap();
        assert_abs_diff_eq!(r.analytic, 0.0, epsilon = 1e-14);
        assert!(r.pass);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn closed_form_is_symmetric_and_bilinear(
            seed in 0u64..1000,
            hv in 0.5f64..0.95,
            scale in -3.0f64..3.0,
        ) {
            let hq = Hurst::new(hv).unwrap();
            let a = random_step_function(seed, 0, 1.0, 4);
            let b = random_step_function(seed, 1, 1.0, 4);
            let ab = inner_product_closed(&a, &b, hq);
            let ba = inner_product_closed(&b, &a, hq);
            prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab.abs()));

            // Scaling one argument scales the product.
            let scaled = StepFunction::new(
                a.breakpoints().to_vec(),
                a.levels().iter().map(|l| l * scale).collect(),
            ).unwrap();
            let s_ab = inner_product_closed(&scaled, &b, hq);
            prop_assert!((s_ab - scale * ab).abs() <= 1e-10 * (1.0 + ab.abs() * scale.abs()));
        }

        #[test]
        fn cauchy_schwarz_holds(seed in 0u64..1000, hv in 0.5f64..0.95) {
            let hq = Hurst::new(hv).unwrap();
            let a = random_step_function(seed, 2, 1.0, 5);
            let b = random_step_function(seed, 3, 1.0, 5);
            let ab = inner_product_closed(&a, &b, hq).abs();
            let bound = memory_norm(&a, hq) * memory_norm(&b, hq);
            prop_assert!(ab <= bound * (1.0 + 1e-9) + 1e-12);
        }

        #[test]
        fn wick_integral_is_linear(seed in 0u64..300, c in -2.0f64..2.0) {
            let grid = TimeGrid::uniform(1.0, 8).unwrap();
            let ens = fbm::sample_dense(Hurst::new(0.7).unwrap(), &grid, 1, seed).unwrap();
            let path = ens.path(0);
            let breaks = vec![0.0, 0.25, 0.5, 1.0];
            let a = StepFunction::new(breaks.clone(), vec![1.0, -0.5, 2.0]).unwrap();
            let b = StepFunction::new(breaks.clone(), vec![0.3, 1.1, -0.2]).unwrap();
            let combo = StepFunction::new(
                breaks,
                a.levels().iter().zip(b.levels()).map(|(x, y)| x + c * y).collect(),
            ).unwrap();
            let lhs = wick_integral(&combo, path).unwrap();
            let rhs = wick_integral(&a, path).unwrap() + c * wick_integral(&b, path).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }
}
