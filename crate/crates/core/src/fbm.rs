//! Sampling of fractional Brownian motion on finite time grids.
//!
//! Three exact-in-distribution routes are provided and cross-checked:
//!
//! * [`sample_dense`] factors the full covariance matrix (any grid),
//! * [`sample_circulant`] embeds the stationary increment autocovariance
//!   in a circulant and samples by FFT (uniform grids, `O(n log n)`),
//! * [`sample_from_wiener`] builds paths from the integral representation
//!   `B_t = int_0^t (transfer kernel of the indicator)(s) dW_s` driven by
//!   Wiener increments (`H >= 1/2`, uniform grids).
//!
//! Paths are reproducible per index: path `i` of an ensemble is a pure
//! function of `(master_seed, i)`.

use crate::fraccalc;
use crate::grid::TimeGrid;
use crate::hurst::{Hurst, HurstError};
use crate::report::fmt_f64;
use crate::rng::NormalSource;
use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::io::{self, Write};
use std::sync::Arc;

/// Relative tolerance for negative circulant eigenvalues: anything in
/// `[-tol * max_eigenvalue, 0)` is treated as roundoff and clamped to
/// zero, anything below triggers the dense fallback.
pub const CIRCULANT_EIG_TOL: f64 = 1e-12;

/// Default sub-grid refinement of the Wiener-representation sampler.
pub const WIENER_REFINE_DEFAULT: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum FbmError {
    Hurst(HurstError),
    /// Sampling needs at least two grid points.
    GridTooShort,
    /// The circulant and Wiener routes need a uniform grid.
    NonUniformGrid,
    /// Cholesky factorization failed; carries the failing pivot index.
    NotPositiveSemiDefinite { pivot: usize },
    /// Ensemble must contain at least one path.
    EmptyEnsemble,
}

impl std::fmt::Display for FbmError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FbmError::Hurst(e) => write!(f, "{e}"),
            FbmError::GridTooShort => write!(f, "sampling needs a grid with at least 2 points"),
            FbmError::NonUniformGrid => write!(f, "this sampler requires a uniform grid"),
            FbmError::NotPositiveSemiDefinite { pivot } => {
                write!(f, "covariance factorization failed at pivot {pivot}")
            }
            FbmError::EmptyEnsemble => write!(f, "ensemble spec must request at least one path"),
        }
    }
}

impl std::error::Error for FbmError {}

impl From<HurstError> for FbmError {
    fn from(e: HurstError) -> Self {
        FbmError::Hurst(e)
    }
}

/// Covariance of fractional Brownian motion,
/// `E[B_s B_t] = (s^{2H} + t^{2H} - |t - s|^{2H}) / 2`.
///
/// # Panics
/// Panics when `s` or `t` is negative.
pub fn covariance(h: Hurst, s: f64, t: f64) -> f64 {
    assert!(s >= 0.0 && t >= 0.0, "covariance needs nonnegative times");
    let two_h = h.two_h();
    0.5 * (s.powf(two_h) + t.powf(two_h) - (t - s).abs().powf(two_h))
}

/// Autocovariance of the unit-lag increment sequence (fractional
/// Gaussian noise) at lag `k` for grid step `step`.
pub fn fgn_autocovariance(h: Hurst, k: usize, step: f64) -> f64 {
    let two_h = h.two_h();
    let k = k as f64;
    0.5 * ((k + 1.0).powf(two_h) + (k - 1.0).abs().powf(two_h) - 2.0 * k.powf(two_h))
        * step.powf(two_h)
}

/// Covariance matrix of the process on the full grid (including the
/// all-zero row and column at `t = 0`).
pub fn covariance_matrix(h: Hurst, grid: &TimeGrid) -> DMatrix<f64> {
    let pts = grid.points();
    let n = pts.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == 0 || j == 0 {
            0.0
        } else {
            covariance(h, pts[i], pts[j])
        }
    })
}

/// Lower Cholesky factor of the covariance on the grid with the zero
/// row/column at `t = 0` dropped. Fails with the pivot index when the
/// assembly is numerically not positive definite; the failure is
/// reported rather than regularized away.
pub fn factor_covariance(h: Hurst, grid: &TimeGrid) -> Result<DMatrix<f64>, FbmError> {
    let pts = &grid.points()[1..];
    let n = pts.len();
    let mut m = DMatrix::from_fn(n, n, |i, j| covariance(h, pts[i], pts[j]));
    cholesky_in_place(&mut m)?;
    Ok(m)
}

/// In-place lower Cholesky; reports the failing pivot index.
fn cholesky_in_place(m: &mut DMatrix<f64>) -> Result<(), FbmError> {
    let n = m.nrows();
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= m[(j, k)] * m[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(FbmError::NotPositiveSemiDefinite { pivot: j });
        }
        let d = d.sqrt();
        m[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= m[(i, k)] * m[(j, k)];
            }
            m[(i, j)] = s / d;
        }
        for i in 0..j {
            m[(i, j)] = 0.0;
        }
    }
    Ok(())
}

/// Which sampler produced an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMethod {
    Dense,
    Circulant,
    WienerRepresentation,
}

impl std::fmt::Display for SampleMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SampleMethod::Dense => write!(f, "dense"),
            SampleMethod::Circulant => write!(f, "circulant"),
            SampleMethod::WienerRepresentation => write!(f, "wiener"),
        }
    }
}

/// One sampled trajectory, borrowed from a [`PathEnsemble`].
#[derive(Debug, Clone, Copy)]
pub struct FbmPath<'a> {
    pub grid: &'a TimeGrid,
    pub values: &'a [f64],
}

impl<'a> FbmPath<'a> {
    pub fn value(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }
}

/// A seeded collection of fractional Brownian paths on a shared grid.
///
/// Regenerating with the same master seed reproduces bit-identical
/// values regardless of execution order or thread count.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: TimeGrid,
    n_paths: usize,
    /// Row-major, `n_paths` rows of `grid.len()` values each.
    values: Vec<f64>,
    master_seed: u64,
    method: SampleMethod,
    fallback: bool,
}

impl PathEnsemble {
    /// Assemble an ensemble from externally produced rows. Each row must
    /// start at zero.
    pub fn from_rows(
        grid: TimeGrid,
        rows: Vec<Vec<f64>>,
        master_seed: u64,
        method: SampleMethod,
    ) -> Result<Self, FbmError> {
        if rows.is_empty() {
            return Err(FbmError::EmptyEnsemble);
        }
        let n = grid.len();
        let mut values = Vec::with_capacity(rows.len() * n);
        for row in &rows {
            assert_eq!(row.len(), n, "row length must match the grid");
            assert_eq!(row[0], 0.0, "paths start at zero");
            values.extend_from_slice(row);
        }
        Ok(PathEnsemble {
            grid,
            n_paths: rows.len(),
            values,
            master_seed,
            method,
            fallback: false,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn method(&self) -> SampleMethod {
        self.method
    }

    /// True when the circulant sampler had to fall back to the dense
    /// route because the embedding had a genuinely negative eigenvalue.
    pub fn used_fallback(&self) -> bool {
        self.fallback
    }

    pub fn path(&self, index: usize) -> FbmPath<'_> {
        let n = self.grid.len();
        FbmPath { grid: &self.grid, values: &self.values[index * n..(index + 1) * n] }
    }

    pub fn paths(&self) -> impl Iterator<Item = FbmPath<'_>> {
        (0..self.n_paths).map(move |i| self.path(i))
    }

    /// Keep every `stride`-th grid point of every path.
    pub fn subsample(&self, stride: usize) -> Option<PathEnsemble> {
        let grid = self.grid.subsample(stride)?;
        let n_old = self.grid.len();
        let n_new = grid.len();
        let mut values = Vec::with_capacity(self.n_paths * n_new);
        for p in 0..self.n_paths {
            let row = &self.values[p * n_old..(p + 1) * n_old];
            values.extend(row.iter().copied().step_by(stride));
        }
        Some(PathEnsemble {
            grid,
            n_paths: self.n_paths,
            values,
            master_seed: self.master_seed,
            method: self.method,
            fallback: self.fallback,
        })
    }

    /// CSV with header `path_id,t,value`, row-major by path, floats with
    /// 17 significant digits.
    pub fn to_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "path_id,t,value")?;
        let pts = self.grid.points();
        for p in 0..self.n_paths {
            let path = self.path(p);
            for (t, v) in pts.iter().zip(path.values) {
                writeln!(w, "{},{},{}", p, fmt_f64(*t), fmt_f64(*v))?;
            }
        }
        Ok(())
    }
}

fn run_per_path<F>(grid: &TimeGrid, n_paths: usize, master_seed: u64, gen: F) -> Vec<f64>
where
    F: Fn(&mut NormalSource, &mut [f64]) + Sync,
{
    let n = grid.len();
    let mut values = vec![0.0f64; n_paths * n];
    values
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(idx, row)| {
            let mut src = NormalSource::new(master_seed, idx as u64);
            gen(&mut src, row);
        });
    values
}

/// Exact sampling through a dense Cholesky factor of the grid
/// covariance. Works on any valid grid.
pub fn sample_dense(
    h: Hurst,
    grid: &TimeGrid,
    n_paths: usize,
    master_seed: u64,
) -> Result<PathEnsemble, FbmError> {
    if grid.len() < 2 {
        return Err(FbmError::GridTooShort);
    }
    if n_paths == 0 {
        return Err(FbmError::EmptyEnsemble);
    }
    let chol = Arc::new(factor_covariance(h, grid)?);
    let n = grid.len();
    let m = n - 1;
    let values = run_per_path(grid, n_paths, master_seed, |src, row| {
        let mut z = vec![0.0f64; m];
        src.fill(&mut z);
        row[0] = 0.0;
        for i in 0..m {
            let mut acc = 0.0;
            for k in 0..=i {
                acc += chol[(i, k)] * z[k];
            }
            row[i + 1] = acc;
        }
    });
    Ok(PathEnsemble {
        grid: grid.clone(),
        n_paths,
        values,
        master_seed,
        method: SampleMethod::Dense,
        fallback: false,
    })
}

/// Circulant eigenvalues for the embedding of the increment
/// autocovariance; `None` when a genuinely negative eigenvalue shows up.
fn circulant_sqrt_eigs(h: Hurst, steps: usize, step: f64) -> Option<Vec<f64>> {
    let m = 2 * steps;
    let mut row = vec![Complex::new(0.0, 0.0); m];
    for k in 0..=steps {
        row[k].re = fgn_autocovariance(h, k, step);
    }
    for k in 1..steps {
        row[m - k].re = row[k].re;
    }
    let fft = FftPlanner::new().plan_fft_forward(m);
    fft.process(&mut row);
    let max = row.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
    let floor = -CIRCULANT_EIG_TOL * max;
    let mut eigs = Vec::with_capacity(m);
    for c in &row {
        if c.re < floor {
            return None;
        }
        eigs.push(c.re.max(0.0).sqrt());
    }
    Some(eigs)
}

/// Exact sampling by circulant embedding of the stationary increment
/// process (uniform grids). Falls back to [`sample_dense`] and records
/// the fallback when the embedding spectrum is genuinely negative.
pub fn sample_circulant(
    h: Hurst,
    grid: &TimeGrid,
    n_paths: usize,
    master_seed: u64,
) -> Result<PathEnsemble, FbmError> {
    if grid.len() < 2 {
        return Err(FbmError::GridTooShort);
    }
    if n_paths == 0 {
        return Err(FbmError::EmptyEnsemble);
    }
    let step = grid.step().ok_or(FbmError::NonUniformGrid)?;
    let steps = grid.steps();
    let Some(sqrt_eigs) = circulant_sqrt_eigs(h, steps, step) else {
        log::warn!("circulant embedding not PSD; falling back to dense sampling");
        let mut ens = sample_dense(h, grid, n_paths, master_seed)?;
        ens.method = SampleMethod::Circulant;
        ens.fallback = true;
        return Ok(ens);
    };
    let m = 2 * steps;
    let inv_sqrt_m = 1.0 / (m as f64).sqrt();
    let inv_sqrt_2m = 1.0 / (2.0 * m as f64).sqrt();
    let fft = FftPlanner::new().plan_fft_forward(m);
    let sqrt_eigs = Arc::new(sqrt_eigs);

    let n = grid.len();
    let mut values = vec![0.0f64; n_paths * n];
    values
        .par_chunks_mut(n)
        .enumerate()
        .for_each_init(
            || vec![Complex::new(0.0, 0.0); m],
            |buf, (idx, row)| {
                let mut src = NormalSource::new(master_seed, idx as u64);
                // Hermitian-symmetric spectral amplitudes; the draw order
                // (k = 0, k = m/2, then pairs) is part of the frozen
                // sampling scheme.
                buf[0] = Complex::new(sqrt_eigs[0] * inv_sqrt_m * src.next_normal(), 0.0);
                buf[steps] =
                    Complex::new(sqrt_eigs[steps] * inv_sqrt_m * src.next_normal(), 0.0);
                for k in 1..steps {
                    let amp = sqrt_eigs[k] * inv_sqrt_2m;
                    let re = amp * src.next_normal();
                    let im = amp * src.next_normal();
                    buf[k] = Complex::new(re, im);
                    buf[m - k] = Complex::new(re, -im);
                }
                fft.process(buf);
                row[0] = 0.0;
                let mut acc = 0.0;
                for i in 0..steps {
                    acc += buf[i].re;
                    row[i + 1] = acc;
                }
            },
        );
    Ok(PathEnsemble {
        grid: grid.clone(),
        n_paths,
        values,
        master_seed,
        method: SampleMethod::Circulant,
        fallback: false,
    })
}

/// Quadrature nodes of the Wiener-representation sampler: midpoints, with
/// the first node moved to the point that integrates the `s^{1-2H}`
/// factor of the squared kernel exactly over the first cell.
fn wiener_nodes(h: Hurst, n_nodes: usize, h_sub: f64) -> Vec<f64> {
    let mut nodes: Vec<f64> = (0..n_nodes).map(|j| (j as f64 + 0.5) * h_sub).collect();
    if !h.is_brownian() {
        let hv = h.value();
        let eff = (2.0 - 2.0 * hv).powf(1.0 / (2.0 * hv - 1.0)).clamp(0.05, 0.5);
        nodes[0] = eff * h_sub;
    }
    nodes
}

/// Sampling through the integral representation of the process against a
/// Wiener path, discretised on a sub-grid with `refine` nodes per grid
/// cell. Requires `H >= 1/2` and a uniform grid; at `H = 1/2` the kernel
/// is the indicator and the sampler reproduces its driving Wiener path.
pub fn sample_from_wiener(
    h: Hurst,
    grid: &TimeGrid,
    n_paths: usize,
    master_seed: u64,
    refine: usize,
) -> Result<PathEnsemble, FbmError> {
    h.require_analysis()?;
    if grid.len() < 2 {
        return Err(FbmError::GridTooShort);
    }
    if n_paths == 0 {
        return Err(FbmError::EmptyEnsemble);
    }
    let step = grid.step().ok_or(FbmError::NonUniformGrid)?;
    let refine = refine.max(1);
    let steps = grid.steps();
    let n_nodes = steps * refine;
    let h_sub = step / refine as f64;
    let nodes = wiener_nodes(h, n_nodes, h_sub);
    let pts = grid.points();

    // Kernel matrix row per grid time, scaled by sqrt of the node
    // spacing so per-path work is a plain dot product with unit normals.
    let sqrt_h_sub = h_sub.sqrt();
    let mut kernel = vec![0.0f64; steps * n_nodes];
    kernel
        .par_chunks_mut(n_nodes)
        .enumerate()
        .for_each(|(i, row)| {
            let u = pts[i + 1];
            for (j, &s) in nodes.iter().enumerate() {
                if s < u {
                    row[j] = fraccalc::kernel_indicator_value(h, u, s) * sqrt_h_sub;
                }
            }
        });
    let kernel = Arc::new(kernel);

    let n = grid.len();
    let mut values = vec![0.0f64; n_paths * n];
    values
        .par_chunks_mut(n)
        .enumerate()
        .for_each_init(
            || vec![0.0f64; n_nodes],
            |draws, (idx, row)| {
                let mut src = NormalSource::new(master_seed, idx as u64);
                src.fill(draws);
                row[0] = 0.0;
                for i in 0..steps {
                    let krow = &kernel[i * n_nodes..(i + 1) * n_nodes];
                    let mut acc = 0.0;
                    for (k, g) in krow.iter().zip(draws.iter()) {
                        acc += k * g;
                    }
                    row[i + 1] = acc;
                }
            },
        );
    Ok(PathEnsemble {
        grid: grid.clone(),
        n_paths,
        values,
        master_seed,
        method: SampleMethod::WienerRepresentation,
        fallback: false,
    })
}

/// Empirical second-moment matrix `mean over paths of B_{t_i} B_{t_j}`.
///
/// The process is centered by construction, so no mean is subtracted.
/// Accumulation runs over fixed-size path blocks combined in index
/// order, which keeps the result independent of the thread count.
pub fn empirical_covariance(ens: &PathEnsemble) -> DMatrix<f64> {
    let n = ens.grid().len();
    const BLOCK: usize = 2048;
    let n_blocks = ens.n_paths().div_ceil(BLOCK);
    let partials: Vec<DMatrix<f64>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = DMatrix::zeros(n, n);
            let lo = b * BLOCK;
            let hi = ((b + 1) * BLOCK).min(ens.n_paths());
            for p in lo..hi {
                let v = ens.path(p).values;
                for i in 0..n {
                    let vi = v[i];
                    for j in i..n {
                        acc[(i, j)] += vi * v[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = DMatrix::zeros(n, n);
    for part in partials {
        total += part;
    }
    let scale = 1.0 / ens.n_paths() as f64;
    for i in 0..n {
        for j in i..n {
            let v = total[(i, j)] * scale;
            total[(i, j)] = v;
            total[(j, i)] = v;
        }
    }
    total
}

/// Result of comparing an empirical covariance against the closed-form
/// covariance at every grid pair.
#[derive(Debug, Clone)]
pub struct CovarianceCheck {
    pub n_paths: usize,
    /// Largest |empirical - formula| / standard error over grid pairs.
    pub max_abs_z: f64,
    /// Relative error of the empirical variance at the horizon.
    pub horizon_var_rel_err: f64,
    pub pass_three_se: bool,
}

/// Compare the empirical covariance of an ensemble against the formula,
/// using the Gaussian standard error of each entry estimate.
pub fn covariance_self_check(ens: &PathEnsemble, h: Hurst) -> CovarianceCheck {
    let emp = empirical_covariance(ens);
    let pts = ens.grid().points();
    let n = pts.len();
    let n_paths = ens.n_paths() as f64;
    let mut max_abs_z: f64 = 0.0;
    for i in 1..n {
        for j in i..n {
            let exact = covariance(h, pts[i], pts[j]);
            let var_ii = covariance(h, pts[i], pts[i]);
            let var_jj = covariance(h, pts[j], pts[j]);
            // Var of the product estimator for centered Gaussians.
            let se = ((var_ii * var_jj + exact * exact) / n_paths).sqrt();
            let z = (emp[(i, j)] - exact) / se;
            max_abs_z = max_abs_z.max(z.abs());
        }
    }
    let t_end = pts[n - 1];
    let exact_end = covariance(h, t_end, t_end);
    let horizon_var_rel_err = (emp[(n - 1, n - 1)] - exact_end).abs() / exact_end;
    CovarianceCheck {
        n_paths: ens.n_paths(),
        max_abs_z,
        horizon_var_rel_err,
        pass_three_se: max_abs_z <= 3.0,
    }
}

/// Largest entrywise z-score between the empirical covariances of two
/// ensembles on the same grid, with the Gaussian standard error of the
/// difference computed from the closed-form covariance.
pub fn covariance_agreement(a: &PathEnsemble, b: &PathEnsemble, h: Hurst) -> f64 {
    assert_eq!(a.grid(), b.grid(), "ensembles must share the grid");
    let ca = empirical_covariance(a);
    let cb = empirical_covariance(b);
    let pts = a.grid().points();
    let n = pts.len();
    let mut max_abs_z: f64 = 0.0;
    for i in 1..n {
        for j in i..n {
            let exact = covariance(h, pts[i], pts[j]);
            let var_ii = covariance(h, pts[i], pts[i]);
            let var_jj = covariance(h, pts[j], pts[j]);
            let entry_var = var_ii * var_jj + exact * exact;
            let se = (entry_var / a.n_paths() as f64 + entry_var / b.n_paths() as f64).sqrt();
            let z = (ca[(i, j)] - cb[(i, j)]) / se;
            max_abs_z = max_abs_z.max(z.abs());
        }
    }
    max_abs_z
}
