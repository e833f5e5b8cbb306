//! Monte Carlo experiment orchestration: moment estimation against the
//! closed-form law and growth bounds, stability probes, and report
//! emission.
//!
//! For the scalar equation the `p`-th moment has the exact law
//! `|x|^p exp(c_hat t^{2H} + p omega t)` with
//! `c_hat = b^2 (p^2 - p) / 2`, so estimates, standard errors and
//! provable bounds can all be cross-checked numerically.

use crate::evolution::LinearModel;
use crate::fbm;
use crate::grid::TimeGrid;
use crate::hurst::{Hurst, HurstError};
use crate::quad::adaptive_gk;
use crate::report::{fmt_f64, write_text_file};
use crate::solver;
use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub enum HarnessError {
    Hurst(HurstError),
    /// Moment order below 1 or not finite.
    InvalidOrder(f64),
    /// Heavy-tailed orders need a minimum ensemble size.
    InsufficientPaths { p: f64, required: usize, got: usize },
    EmptyEnsemble,
    /// Time index outside the grid.
    BadTimeIndex(usize),
}

impl std::fmt::Display for HarnessError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HarnessError::Hurst(e) => write!(f, "{e}"),
            HarnessError::InvalidOrder(p) => write!(f, "moment order must satisfy p >= 1, got {p}"),
            HarnessError::InsufficientPaths { p, required, got } => write!(
                f,
                "order p = {p} needs at least {required} paths (heavy tails), got {got}"
            ),
            HarnessError::EmptyEnsemble => write!(f, "ensemble is empty"),
            HarnessError::BadTimeIndex(i) => write!(f, "time index {i} outside the grid"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<HurstError> for HarnessError {
    fn from(e: HurstError) -> Self {
        HarnessError::Hurst(e)
    }
}

/// Jackknife standard error of the sample mean: leave-one-out
/// replicates `(S - x_i) / (n - 1)` with the usual `(n-1)/n` variance
/// inflation.
pub fn jackknife_se_mean(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return f64::NAN;
    }
    let nf = n as f64;
    let total: f64 = samples.iter().sum();
    let mean_loo = |x: f64| (total - x) / (nf - 1.0);
    let grand: f64 = samples.iter().map(|&x| mean_loo(x)).sum::<f64>() / nf;
    let ss: f64 = samples.iter().map(|&x| (mean_loo(x) - grand).powi(2)).sum();
    ((nf - 1.0) / nf * ss).sqrt()
}

/// Exact moment law of the scalar equation
/// `dX = omega X dt + b X dB`, `X_0 = x`.
#[derive(Debug, Clone, Copy)]
pub struct ScalarMomentLaw {
    pub drift: f64,
    pub noise: f64,
    pub hurst: Hurst,
    pub x0_abs: f64,
}

impl ScalarMomentLaw {
    /// `c_hat = b^2 (p^2 - p) / 2`.
    pub fn c_hat(&self, p: f64) -> f64 {
        0.5 * self.noise * self.noise * (p * p - p)
    }

    /// `E |X_t|^p = |x|^p exp(c_hat t^{2H} + p omega t)`.
    pub fn exact(&self, t: f64, p: f64) -> f64 {
        self.x0_abs.powf(p)
            * (self.c_hat(p) * t.powf(self.hurst.two_h()) + p * self.drift * t).exp()
    }
}

/// One `(t, p)` cell of a moment report.
#[derive(Debug, Clone)]
pub struct MomentEntry {
    pub t: f64,
    pub p: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub exact: Option<f64>,
    pub bound: Option<f64>,
    pub pass: Option<bool>,
    /// Paths excluded because the p-th power overflowed.
    pub excluded: usize,
}

#[derive(Debug, Clone)]
pub struct MomentReport {
    pub entries: Vec<MomentEntry>,
    pub n_paths: usize,
    /// The concrete constant `c_p = 2^{p-1}` used when bounds are
    /// attached (reported, never asserted).
    pub c_p_used: Option<f64>,
}

/// Minimum ensemble size for orders above 4; lognormal-type tails make
/// smaller ensembles meaningless there.
pub const HEAVY_TAIL_PATH_FLOOR: usize = 1_000_000;

/// Sample moments `E ||X_t||^p` with jackknife standard errors at the
/// selected grid indices, attaching exact values when a scalar law is
/// supplied.
pub fn estimate_moments(
    norms_per_path: &[Vec<f64>],
    grid: &TimeGrid,
    time_indices: &[usize],
    p_list: &[f64],
    law: Option<&ScalarMomentLaw>,
) -> Result<MomentReport, HarnessError> {
    if norms_per_path.is_empty() {
        return Err(HarnessError::EmptyEnsemble);
    }
    for &p in p_list {
        if !(p.is_finite() && p >= 1.0) {
            return Err(HarnessError::InvalidOrder(p));
        }
        if p > 4.0 && norms_per_path.len() < HEAVY_TAIL_PATH_FLOOR {
            return Err(HarnessError::InsufficientPaths {
                p,
                required: HEAVY_TAIL_PATH_FLOOR,
                got: norms_per_path.len(),
            });
        }
    }
    let pts = grid.points();
    let mut entries = Vec::new();
    let mut samples = Vec::with_capacity(norms_per_path.len());
    for &ti in time_indices {
        if ti >= pts.len() {
            return Err(HarnessError::BadTimeIndex(ti));
        }
        for &p in p_list {
            samples.clear();
            let mut excluded = 0usize;
            for norms in norms_per_path {
                let v = norms[ti].powf(p);
                if v.is_finite() {
                    samples.push(v);
                } else {
                    excluded += 1;
                }
            }
            let n = samples.len().max(1) as f64;
            let estimate = samples.iter().sum::<f64>() / n;
            let std_error = jackknife_se_mean(&samples);
            entries.push(MomentEntry {
                t: pts[ti],
                p,
                estimate,
                std_error,
                exact: law.map(|l| l.exact(pts[ti], p)),
                bound: None,
                pass: None,
                excluded,
            });
        }
    }
    Ok(MomentReport { entries, n_paths: norms_per_path.len(), c_p_used: None })
}

/// Parameters of the moment growth bound
/// `c_p M^p [ exp(c_hat t^{2H} + p omega t) ||x||^p
///   + t^{p-1} int_0^t exp(c_hat (t-s)^{2H} + p omega (t-s)) ||F(s)||^p ds ]`
/// with the concrete constant `c_p = 2^{p-1}`.
pub struct BoundParams<'a> {
    pub omega: f64,
    pub m_const: f64,
    pub noise: f64,
    pub hurst: Hurst,
    pub x0_norm: f64,
    /// `s -> ||F(s)||`; use `|_| 0.0` for no forcing.
    pub f_norm: &'a (dyn Fn(f64) -> f64 + Sync),
}

/// Evaluate the growth bound at `(t, p)`.
pub fn growth_bound(params: &BoundParams<'_>, t: f64, p: f64) -> f64 {
    let c_hat = 0.5 * params.noise * params.noise * (p * p - p);
    let two_h = params.hurst.two_h();
    let c_p = 2.0f64.powf(p - 1.0);
    let m_p = params.m_const.powf(p);
    let head = (c_hat * t.powf(two_h) + p * params.omega * t).exp() * params.x0_norm.powf(p);
    let tail = if t > 0.0 {
        let integrand = |s: f64| {
            let d = t - s;
            (c_hat * d.powf(two_h) + p * params.omega * d).exp() * (params.f_norm)(s).powf(p)
        };
        t.powf(p - 1.0) * adaptive_gk(integrand, 0.0, t, 1e-10, 40).map(|q| q.value).unwrap_or(f64::INFINITY)
    } else {
        0.0
    };
    c_p * m_p * (head + tail)
}

/// Attach bounds to a report and flag each entry:
/// pass when `estimate <= bound * (1 + 3 * relative standard error)`.
pub fn check_bounds(report: &mut MomentReport, params: &BoundParams<'_>) {
    report.c_p_used = Some(f64::NAN); // replaced below with the largest used
    let mut c_p_max: f64 = 1.0;
    for e in &mut report.entries {
        let bound = growth_bound(params, e.t, e.p);
        c_p_max = c_p_max.max(2.0f64.powf(e.p - 1.0));
        let rel_se = if e.estimate > 0.0 { e.std_error / e.estimate } else { 0.0 };
        e.pass = Some(e.estimate <= bound * (1.0 + 3.0 * rel_se));
        e.bound = Some(bound);
    }
    report.c_p_used = Some(c_p_max);
}

/// Outcome of the long-horizon dichotomy probe: moments driven by the
/// `c_hat t^{2H}` term against the pathwise decay of the median.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub p: f64,
    /// Grid times over which slopes were fitted (the late half of the
    /// horizon).
    pub window: Vec<f64>,
    /// Slope of `log E |X_t|^p` over the window from the exact law.
    pub exact_moment_slope: f64,
    /// Slope of the Monte Carlo moment estimates over the window.
    pub mc_moment_slope: f64,
    /// Largest single-path share in the final-time moment sum; above
    /// one half the Monte Carlo mean is dominated by one draw.
    pub mc_top_share: f64,
    pub mc_reliable: bool,
    /// Slope of the median of `log X_t^2` over the window.
    pub median_sq_slope: f64,
    /// Quantiles of `log X_T^2` at the final time.
    pub quantiles_final: Vec<(f64, f64)>,
    pub inconclusive: bool,
    pub moments_grow: bool,
    pub paths_decay: bool,
    /// Moments grow while the pathwise median decays.
    pub dichotomy: bool,
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Probe the moment/pathwise dichotomy of the scalar equation on
/// `[0, horizon]`.
///
/// The moment side reports both the Monte Carlo slope and the slope of
/// the exact law; for heavy-tailed regimes the Monte Carlo mean is
/// flagged unreliable through the top-path share diagnostic.
#[allow(clippy::too_many_arguments)]
pub fn stability_probe(
    model: &LinearModel,
    h: Hurst,
    horizon: f64,
    steps: usize,
    n_paths: usize,
    master_seed: u64,
    p: f64,
) -> Result<StabilityReport, HarnessError> {
    let LinearModel::Scalar { a: omega, b } = model else {
        return Err(HarnessError::InvalidOrder(f64::NAN));
    };
    if !(p.is_finite() && p >= 1.0) {
        return Err(HarnessError::InvalidOrder(p));
    }
    let grid = TimeGrid::uniform(horizon, steps).map_err(|_| HarnessError::BadTimeIndex(0))?;
    let ens = fbm::sample_circulant(h, &grid, n_paths, master_seed)
        .map_err(|_| HarnessError::EmptyEnsemble)?;
    let pts = grid.points();
    // Late-time window: second half of the horizon, at most 9 points.
    let half = pts.len() / 2;
    let stride = ((pts.len() - half) / 9).max(1);
    let window_idx: Vec<usize> = (half..pts.len()).step_by(stride).collect();
    let inconclusive = window_idx.len() < 3;
    let window: Vec<f64> = window_idx.iter().map(|&i| pts[i]).collect();

    let law = ScalarMomentLaw { drift: *omega, noise: *b, hurst: h, x0_abs: 1.0 };
    let two_h = h.two_h();

    // Pathwise values of log X^2 and |X|^p at the window times.
    let mut log_sq: Vec<Vec<f64>> = vec![Vec::with_capacity(n_paths); window_idx.len()];
    let mut powers: Vec<Vec<f64>> = vec![Vec::with_capacity(n_paths); window_idx.len()];
    for path in ens.paths() {
        for (w, &i) in window_idx.iter().enumerate() {
            let t = pts[i];
            let log_x = b * path.values[i] - 0.5 * b * b * t.powf(two_h) + omega * t;
            log_sq[w].push(2.0 * log_x);
            powers[w].push((p * log_x).exp());
        }
    }

    let exact_logs: Vec<f64> = window.iter().map(|&t| law.exact(t, p).ln()).collect();
    let exact_moment_slope = least_squares_slope(&window, &exact_logs);

    let mc_logs: Vec<f64> = powers
        .iter()
        .map(|vals| (vals.iter().sum::<f64>() / vals.len() as f64).ln())
        .collect();
    let mc_moment_slope = least_squares_slope(&window, &mc_logs);
    let last = powers.last().unwrap();
    let total: f64 = last.iter().sum();
    let mc_top_share = if total > 0.0 {
        last.iter().fold(0.0f64, |m, &v| m.max(v)) / total
    } else {
        0.0
    };
    let mc_reliable = mc_top_share < 0.5 && mc_logs.iter().all(|v| v.is_finite());

    let medians: Vec<f64> = log_sq
        .iter()
        .map(|vals| {
            let mut v = vals.clone();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            quantile(&v, 0.5)
        })
        .collect();
    let median_sq_slope = least_squares_slope(&window, &medians);

    let mut final_sorted = log_sq.last().unwrap().clone();
    final_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantiles_final = [0.1, 0.25, 0.5, 0.75, 0.9]
        .iter()
        .map(|&q| (q, quantile(&final_sorted, q)))
        .collect();

    let moments_grow = exact_moment_slope > 0.0;
    let paths_decay = median_sq_slope < 0.0;
    Ok(StabilityReport {
        p,
        window,
        exact_moment_slope,
        mc_moment_slope,
        mc_top_share,
        mc_reliable,
        median_sq_slope,
        quantiles_final,
        inconclusive,
        moments_grow,
        paths_decay,
        dichotomy: moments_grow && paths_decay && !inconclusive,
    })
}

/// Ensemble of scalar geometric solutions reduced to pathwise norms;
/// the common driver for moment and comparison experiments.
pub fn geometric_norm_ensemble(
    model: &LinearModel,
    h: Hurst,
    grid: &TimeGrid,
    x0: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<Vec<Vec<f64>>, HarnessError> {
    let ens =
        fbm::sample_circulant(h, grid, n_paths, master_seed).map_err(|_| HarnessError::EmptyEnsemble)?;
    let mut out = Vec::with_capacity(n_paths);
    for p in ens.paths() {
        let traj = solver::solve_geometric(model, h, p, x0)
            .map_err(|_| HarnessError::EmptyEnsemble)?;
        out.push(traj.norms());
    }
    Ok(out)
}

/// Write `moments.csv` (`t,p,estimate,se,exact,bound,pass`) and a
/// plain-text summary into `dir`; returns the created paths. Content is
/// a deterministic function of the report and the echoed configuration.
pub fn emit_moment_report(
    report: &MomentReport,
    dir: &Path,
    config_echo: &[(String, String)],
    seed: u64,
) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join("moments.csv");
    let mut rows = Vec::with_capacity(report.entries.len());
    for e in &report.entries {
        rows.push(vec![
            fmt_f64(e.t),
            fmt_f64(e.p),
            fmt_f64(e.estimate),
            fmt_f64(e.std_error),
            e.exact.map(fmt_f64).unwrap_or_default(),
            e.bound.map(fmt_f64).unwrap_or_default(),
            e.pass.map(|p| if p { "1" } else { "0" }.to_string()).unwrap_or_default(),
        ]);
    }
    crate::report::write_csv(&csv_path, "t,p,estimate,se,exact,bound,pass", &rows)?;

    let mut text = String::new();
    text.push_str("moment report\n");
    text.push_str(&format!("seed = {seed}\n"));
    text.push_str(&format!("paths = {}\n", report.n_paths));
    if let Some(cp) = report.c_p_used {
        text.push_str(&format!("c_p (concrete constant, reported not asserted) = {cp}\n"));
    }
    for (k, v) in config_echo {
        text.push_str(&format!("config {k} = {v}\n"));
    }
    let mut all_pass = true;
    for e in &report.entries {
        let status = match e.pass {
            Some(true) => "pass",
            Some(false) => {
                all_pass = false;
                "FAIL"
            }
            None => "n/a",
        };
        text.push_str(&format!(
            "t = {:.6}, p = {:.2}: estimate = {:.6e} (se {:.2e}), exact = {}, bound = {}, {} ({} excluded)\n",
            e.t,
            e.p,
            e.estimate,
            e.std_error,
            e.exact.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into()),
            e.bound.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into()),
            status,
            e.excluded
        ));
    }
    text.push_str(if all_pass { "overall: pass\n" } else { "overall: FAIL\n" });
    let summary_path = dir.join("summary.txt");
    write_text_file(&summary_path, &text)?;
    Ok(vec![csv_path, summary_path])
}

/// Write `stability.csv` and a plain-text summary for a stability
/// probe.
pub fn emit_stability_report(
    report: &StabilityReport,
    dir: &Path,
    config_echo: &[(String, String)],
    seed: u64,
) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join("stability.csv");
    let mut rows = vec![
        vec!["exact_moment_slope".into(), fmt_f64(report.exact_moment_slope)],
        vec!["mc_moment_slope".into(), fmt_f64(report.mc_moment_slope)],
        vec!["mc_top_share".into(), fmt_f64(report.mc_top_share)],
        vec!["median_sq_slope".into(), fmt_f64(report.median_sq_slope)],
    ];
    for (q, v) in &report.quantiles_final {
        rows.push(vec![format!("quantile_log_sq_{q}"), fmt_f64(*v)]);
    }
    crate::report::write_csv(&csv_path, "name,value", &rows)?;

    let mut text = String::new();
    text.push_str("stability probe\n");
    text.push_str(&format!("seed = {seed}\n"));
    for (k, v) in config_echo {
        text.push_str(&format!("config {k} = {v}\n"));
    }
    text.push_str(&format!("p = {}\n", report.p));
    text.push_str(&format!(
        "late window: [{:.4}, {:.4}] ({} points)\n",
        report.window.first().unwrap_or(&f64::NAN),
        report.window.last().unwrap_or(&f64::NAN),
        report.window.len()
    ));
    text.push_str(&format!(
        "exact moment log-slope = {:.6}\nmc moment log-slope = {:.6} (top share {:.3}, reliable: {})\n",
        report.exact_moment_slope, report.mc_moment_slope, report.mc_top_share, report.mc_reliable
    ));
    text.push_str(&format!("median pathwise log^2-slope = {:.6}\n", report.median_sq_slope));
    text.push_str(&format!(
        "moments grow: {} / paths decay: {} / dichotomy: {}{}\n",
        report.moments_grow,
        report.paths_decay,
        report.dichotomy,
        if report.inconclusive { " (inconclusive: horizon too short)" } else { "" }
    ));
    let summary_path = dir.join("summary.txt");
    write_text_file(&summary_path, &text)?;
    Ok(vec![csv_path, summary_path])
}
