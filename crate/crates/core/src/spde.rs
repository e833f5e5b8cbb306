//! Spectral realisation of the stochastic heat/reaction equation on
//! `(0, 1)` with Dirichlet boundary and multiplicative scalar fractional
//! noise `b u dB`.
//!
//! With eigenpairs `lambda_k = c - nu k^2 pi^2`,
//! `e_k(x) = sqrt(2) sin(k pi x)`, the equation diagonalises into
//! independent scalar affine mild equations that share one noise factor,
//! which is exactly the spectral-diagonal backend of the solver.

use crate::evolution::LinearModel;
use crate::fbm::FbmPath;
use crate::hurst::Hurst;
use crate::solver::{self, ForcingTerm, SolverError, Trajectory};
use nalgebra::DVector;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub enum SpdeError {
    InvalidParameter(String),
    /// Projection quadrature failed to converge under panel doubling.
    ProjectionFailure { mode: usize, estimate: f64 },
    Solver(SolverError),
}

impl std::fmt::Display for SpdeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpdeError::InvalidParameter(msg) => write!(f, "{msg}"),
            SpdeError::ProjectionFailure { mode, estimate } => {
                write!(f, "projection of mode {mode} did not converge, estimate {estimate:.3e}")
            }
            SpdeError::Solver(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for SpdeError {}

impl From<SolverError> for SpdeError {
    fn from(e: SolverError) -> Self {
        SpdeError::Solver(e)
    }
}

/// Heat/reaction model `du = (nu u_xx + c u + f) dt + b u dB` on
/// `(0, 1)` with Dirichlet boundary, truncated to `modes` spectral
/// modes.
#[derive(Debug, Clone, Copy)]
pub struct SpectralHeatModel {
    pub viscosity: f64,
    pub reaction: f64,
    pub modes: usize,
    pub noise: f64,
}

impl SpectralHeatModel {
    pub fn new(viscosity: f64, reaction: f64, modes: usize, noise: f64) -> Result<Self, SpdeError> {
        if !(viscosity.is_finite() && viscosity > 0.0) {
            return Err(SpdeError::InvalidParameter(format!(
                "viscosity must be positive, got {viscosity}"
            )));
        }
        if modes == 0 {
            return Err(SpdeError::InvalidParameter("need at least one mode".into()));
        }
        if !reaction.is_finite() || !noise.is_finite() {
            return Err(SpdeError::InvalidParameter("parameters must be finite".into()));
        }
        Ok(SpectralHeatModel { viscosity, reaction, modes, noise })
    }

    /// `lambda_k = c - nu k^2 pi^2`, 1-based mode index.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.reaction - self.viscosity * (k as f64 * PI).powi(2)
    }

    /// `e_k(x) = sqrt(2) sin(k pi x)`; exactly zero at the Dirichlet
    /// boundary (sin of an integer multiple of pi would otherwise leave
    /// roundoff there).
    pub fn eigenfunction(k: usize, x: f64) -> f64 {
        if x == 0.0 || x == 1.0 {
            return 0.0;
        }
        2.0f64.sqrt() * (k as f64 * PI * x).sin()
    }

    /// Growth rate of the dominating scalar equation: the top
    /// eigenvalue `lambda_1`.
    pub fn omega(&self) -> f64 {
        self.eigenvalue(1)
    }

    pub fn to_linear_model(&self) -> LinearModel {
        LinearModel::spectral(
            (1..=self.modes).map(|k| self.eigenvalue(k)).collect(),
            self.noise,
        )
        .expect("validated at construction")
    }
}

/// Default space grid for field snapshots: 257 uniform points on [0, 1].
pub fn default_space_grid() -> Vec<f64> {
    (0..257).map(|i| i as f64 / 256.0).collect()
}

/// Galerkin coefficients `<f, e_k>` for `k = 1..=modes`, by composite
/// Simpson quadrature with panel doubling until successive refinements
/// agree within `tol` for every mode.
pub fn project(
    f: impl Fn(f64) -> f64,
    modes: usize,
    tol: f64,
) -> Result<Vec<f64>, SpdeError> {
    let simpson = |panels: usize, k: usize| -> f64 {
        let h = 1.0 / panels as f64;
        let g = |x: f64| f(x) * SpectralHeatModel::eigenfunction(k, x);
        let mut acc = g(0.0) + g(1.0);
        for i in 1..panels {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * g(i as f64 * h);
        }
        acc * h / 3.0
    };
    // Start above the oscillation scale of the highest mode.
    let mut panels = (8 * modes).next_power_of_two().max(64);
    let mut current: Vec<f64> = (1..=modes).map(|k| simpson(panels, k)).collect();
    loop {
        panels *= 2;
        let refined: Vec<f64> = (1..=modes).map(|k| simpson(panels, k)).collect();
        let worst = current
            .iter()
            .zip(&refined)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if worst <= tol {
            return Ok(refined);
        }
        if panels >= 1 << 21 {
            let mode = current
                .iter()
                .zip(&refined)
                .enumerate()
                .max_by(|a, b| {
                    let da = (a.1 .0 - a.1 .1).abs();
                    let db = (b.1 .0 - b.1 .1).abs();
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(i, _)| i + 1)
                .unwrap_or(1);
            return Err(SpdeError::ProjectionFailure { mode, estimate: worst });
        }
        current = refined;
    }
}

/// A reconstructed field at one time.
#[derive(Debug, Clone)]
pub struct FieldSnapshot {
    pub time: f64,
    pub space: Vec<f64>,
    pub values: Vec<f64>,
}

/// Modal solution of the truncated equation for one driving path.
#[derive(Debug, Clone)]
pub struct FieldSolution {
    pub model: SpectralHeatModel,
    /// Modal coefficients along the grid; state dimension = modes.
    pub modal: Trajectory,
}

impl FieldSolution {
    /// Reconstruct `u(t_i, x)` on the given space points. Dirichlet
    /// boundary values are exactly zero because every eigenfunction
    /// vanishes there.
    pub fn snapshot(&self, time_index: usize, space: &[f64]) -> FieldSnapshot {
        let coeffs = &self.modal.states[time_index];
        let values = space
            .iter()
            .map(|&x| {
                let mut acc = 0.0;
                for k in 1..=self.model.modes {
                    acc += coeffs[k - 1] * SpectralHeatModel::eigenfunction(k, x);
                }
                acc
            })
            .collect();
        FieldSnapshot {
            time: self.modal.grid.points()[time_index],
            space: space.to_vec(),
            values,
        }
    }

    /// Spatial `L^2` norms (= modal Euclidean norms) along the grid.
    pub fn l2_norms(&self) -> Vec<f64> {
        self.modal.norms()
    }
}

/// Solve the truncated equation for one path: every mode solves the
/// scalar affine mild equation, all modes sharing the path's noise
/// factor.
pub fn solve_field(
    model: &SpectralHeatModel,
    h: Hurst,
    path: FbmPath<'_>,
    x0_coeffs: &[f64],
    forcing_coeffs: &ForcingTerm,
) -> Result<FieldSolution, SpdeError> {
    if x0_coeffs.len() != model.modes {
        return Err(SpdeError::InvalidParameter(format!(
            "initial condition has {} coefficients, model has {} modes",
            x0_coeffs.len(),
            model.modes
        )));
    }
    let linear = model.to_linear_model();
    let modal = solver::solve_affine_mild(
        &linear,
        h,
        path,
        forcing_coeffs,
        &DVector::from_column_slice(x0_coeffs),
        None,
    )?;
    Ok(FieldSolution { model: *model, modal })
}

/// Sup-norm differences between consecutive truncation levels on a
/// frozen path; rows are `(coarse modes, fine modes, sup difference)`.
///
/// Modes decouple, so all levels are read off one solve at the largest
/// requested truncation.
pub fn truncation_report(
    model: &SpectralHeatModel,
    h: Hurst,
    path: FbmPath<'_>,
    x0: impl Fn(f64) -> f64,
    forcing_profile: Option<(impl Fn(f64) -> f64 + Send + Sync + 'static, f64)>,
    n_list: &[usize],
    space: &[f64],
    projection_tol: f64,
) -> Result<Vec<(usize, usize, f64)>, SpdeError> {
    if n_list.windows(2).any(|w| w[1] <= w[0]) || n_list.is_empty() {
        return Err(SpdeError::InvalidParameter("mode list must increase strictly".into()));
    }
    let n_max = *n_list.last().unwrap();
    let full = SpectralHeatModel::new(model.viscosity, model.reaction, n_max, model.noise)?;
    let x0_coeffs = project(&x0, n_max, projection_tol)?;
    let forcing = match forcing_profile {
        Some((profile, scale)) => {
            let coeffs = project(&profile, n_max, projection_tol)?;
            let v = DVector::from_iterator(n_max, coeffs.iter().map(|c| c * scale));
            ForcingTerm::constant(v)
        }
        None => ForcingTerm::none(),
    };
    let sol = solve_field(&full, h, path, &x0_coeffs, &forcing)?;

    // Tail of the eigen-expansion between two truncation levels.
    let tail_sup = |lo: usize, hi: usize| -> f64 {
        let mut worst: f64 = 0.0;
        for (i, _) in sol.modal.grid.points().iter().enumerate() {
            let coeffs = &sol.modal.states[i];
            for &x in space {
                let mut acc = 0.0;
                for k in (lo + 1)..=hi {
                    acc += coeffs[k - 1] * SpectralHeatModel::eigenfunction(k, x);
                }
                worst = worst.max(acc.abs());
            }
        }
        worst
    };

    Ok(n_list
        .windows(2)
        .map(|w| (w[0], w[1], tail_sup(w[0], w[1])))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm;
    use crate::grid::TimeGrid;
    use crate::solver::solve_geometric;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn h(v: f64) -> Hurst {
        Hurst::new(v).unwrap()
    }

    #[test]
    fn eigenstructure() {
        let m = SpectralHeatModel::new(1.0, 0.0, 4, 1.0).unwrap();
        assert_relative_eq!(m.eigenvalue(1), -PI * PI, max_relative = 1e-15);
        assert_relative_eq!(m.eigenvalue(2), -4.0 * PI * PI, max_relative = 1e-15);
        assert!(m.eigenvalue(2) < m.eigenvalue(1));
        assert_relative_eq!(m.omega(), -PI * PI);
        assert!(SpectralHeatModel::new(0.0, 0.0, 4, 1.0).is_err());
        assert!(SpectralHeatModel::new(1.0, 0.0, 0, 1.0).is_err());
    }

    #[test]
    fn projection_oracles() {
        // Orthonormality: projecting e_1 gives the unit vector.
        let c = project(|x| SpectralHeatModel::eigenfunction(1, x), 4, 1e-10).unwrap();
        assert_relative_eq!(c[0], 1.0, max_relative = 1e-9);
        for v in &c[1..] {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-9);
        }
        // Zero function.
        let c = project(|_| 0.0, 3, 1e-12).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-14));
        // f(x) = x(1-x): odd modes 4 sqrt(2) / (k pi)^3, even modes 0.
        let c = project(|x| x * (1.0 - x), 6, 1e-12).unwrap();
        for (i, v) in c.iter().enumerate() {
            let k = i + 1;
            let expect = if k % 2 == 1 {
                4.0 * 2.0f64.sqrt() / (k as f64 * PI).powi(3)
            } else {
                0.0
            };
            if expect == 0.0 {
                assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-10);
            } else {
                assert_relative_eq!(*v, expect, max_relative = 1e-8);
            }
        }
    }

    fn one_path(hv: f64, steps: usize, seed: u64) -> fbm::PathEnsemble {
        let grid = TimeGrid::uniform(1.0, steps).unwrap();
        fbm::sample_circulant(h(hv), &grid, 1, seed).unwrap()
    }

    #[test]
    fn single_mode_field_matches_geometric_closed_form() {
        // x0 = e_1, f = 0, nu = 1, c = 0: the field is the geometric
        // solution with drift -pi^2 times the first eigenfunction.
        let ens = one_path(0.75, 64, 4);
        let path = ens.path(0);
        let model = SpectralHeatModel::new(1.0, 0.0, 8, 1.0).unwrap();
        let mut x0 = vec![0.0; 8];
        x0[0] = 1.0;
        let sol = solve_field(&model, h(0.75), path, &x0, &ForcingTerm::none()).unwrap();
        let scalar = LinearModel::scalar(-PI * PI, 1.0);
        let geo = solve_geometric(&scalar, h(0.75), path, 1.0).unwrap();
        for i in 0..=64 {
            assert_relative_eq!(
                sol.modal.states[i][0],
                geo.states[i][0],
                max_relative = 1e-12
            );
            for k in 1..8 {
                assert_abs_diff_eq!(sol.modal.states[i][k], 0.0, epsilon = 1e-14);
            }
            // Field value at x = 1/2 is the coefficient times e_1(1/2).
            let snap = sol.snapshot(i, &[0.0, 0.5, 1.0]);
            assert_abs_diff_eq!(snap.values[0], 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(snap.values[2], 0.0, epsilon = 1e-14);
            assert_relative_eq!(
                snap.values[1],
                geo.states[i][0] * 2.0f64.sqrt(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn noise_off_is_deterministic_heat_decay() {
        let ens = one_path(0.75, 32, 9);
        let path = ens.path(0);
        let model = SpectralHeatModel::new(1.0, 0.0, 4, 0.0).unwrap();
        let x0 = project(|x| x * (1.0 - x), 4, 1e-12).unwrap();
        let sol = solve_field(&model, h(0.75), path, &x0, &ForcingTerm::none()).unwrap();
        for (i, &t) in sol.modal.grid.points().iter().enumerate() {
            for k in 1..=4 {
                let expect = x0[k - 1] * (model.eigenvalue(k) * t).exp();
                assert_relative_eq!(sol.modal.states[i][k - 1], expect, max_relative = 1e-11);
            }
        }
    }

    #[test]
    fn reconstruction_at_time_zero_matches_projection() {
        let ens = one_path(0.7, 16, 13);
        let path = ens.path(0);
        let model = SpectralHeatModel::new(1.0, 0.5, 16, 0.7).unwrap();
        let x0_fn = |x: f64| x * (1.0 - x);
        let x0 = project(x0_fn, 16, 1e-12).unwrap();
        let sol = solve_field(&model, h(0.7), path, &x0, &ForcingTerm::none()).unwrap();
        let space = default_space_grid();
        let snap = sol.snapshot(0, &space);
        for (x, v) in space.iter().zip(&snap.values) {
            // Truncation error of the eigen-expansion at 16 modes.
            assert!(
                (v - x0_fn(*x)).abs() < 2e-4,
                "reconstruction at x = {x}: {v} vs {}",
                x0_fn(*x)
            );
        }
    }

    #[test]
    fn mode_decoupling_joint_vs_independent() {
        // Solving the 3-mode system at once equals solving each mode as
        // its own scalar equation.
        let ens = one_path(0.75, 32, 21);
        let path = ens.path(0);
        let model = SpectralHeatModel::new(0.3, 0.2, 3, 0.9).unwrap();
        let x0 = [0.5, -1.0, 2.0];
        let f_coeffs = [1.0, 0.0, -0.5];
        let joint = solve_field(
            &model,
            h(0.75),
            path,
            &x0,
            &ForcingTerm::constant(DVector::from_column_slice(&f_coeffs)),
        )
        .unwrap();
        for k in 1..=3 {
            let scalar = LinearModel::scalar(model.eigenvalue(k), 0.9);
            let traj = solver::solve_affine_mild(
                &scalar,
                h(0.75),
                path,
                &ForcingTerm::constant(DVector::from_element(1, f_coeffs[k - 1])),
                &DVector::from_element(1, x0[k - 1]),
                None,
            )
            .unwrap();
            for i in 0..=32 {
                assert_relative_eq!(
                    joint.modal.states[i][k - 1],
                    traj.states[i][0],
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn mean_field_matches_deterministic_heat_solution() {
        // E[U_Y] is the drift semigroup, so the mean modal coefficient
        // solves m' = lambda_k m + f_k.
        let hv = h(0.7);
        let grid = TimeGrid::uniform(1.0, 64).unwrap();
        let ens = fbm::sample_circulant(hv, &grid, 8000, 31).unwrap();
        let model = SpectralHeatModel::new(0.2, 0.0, 2, 0.8).unwrap();
        let x0 = [1.0, -0.5];
        let f = [0.7, 0.3];
        let forcing = ForcingTerm::constant(DVector::from_column_slice(&f));
        let n = ens.n_paths() as f64;
        let mut sum = [0.0f64; 2];
        let mut sum_sq = [0.0f64; 2];
        for p in ens.paths() {
            let sol = solve_field(&model, hv, p, &x0, &forcing).unwrap();
            for k in 0..2 {
                let v = sol.modal.states[64][k];
                sum[k] += v;
                sum_sq[k] += v * v;
            }
        }
        for k in 0..2 {
            let mean = sum[k] / n;
            let se = ((sum_sq[k] / n - mean * mean).max(0.0) / n).sqrt();
            let lam = model.eigenvalue(k + 1);
            let exact = (lam * 1.0f64).exp() * x0[k] + f[k] * ((lam * 1.0f64).exp() - 1.0) / lam;
            assert!(
                (mean - exact).abs() <= 3.0 * se + 1e-4,
                "mode {k}: mean {mean} vs {exact} (se {se})"
            );
        }
    }

    #[test]
    fn truncation_differences_decrease_with_order_two() {
        let ens = one_path(0.75, 32, 42);
        let path = ens.path(0);
        let model = SpectralHeatModel::new(1.0, 0.0, 1, 1.0).unwrap();
        let space = default_space_grid();
        let rows = truncation_report(
            &model,
            h(0.75),
            path,
            |x| x * (1.0 - x),
            None::<(fn(f64) -> f64, f64)>,
            &[4, 8, 16, 32],
            &space,
            1e-12,
        )
        .unwrap();
        assert!(rows[0].2 > rows[1].2 && rows[1].2 > rows[2].2, "{rows:?}");
        // Tail mass of x(1-x) falls like N^{-2}: order >= 2 in 1/N.
        let order = (rows[0].2 / rows[2].2).log2() / 2.0;
        assert!(order >= 1.8, "observed order {order}, rows {rows:?}");

        // Initial data with finite modal support: zero differences once
        // all modes are resolved.
        let rows = truncation_report(
            &model,
            h(0.75),
            path,
            |x| SpectralHeatModel::eigenfunction(2, x),
            None::<(fn(f64) -> f64, f64)>,
            &[4, 8, 16],
            &space,
            1e-12,
        )
        .unwrap();
        for (_, _, d) in rows {
            assert!(d < 1e-8, "finite support must truncate exactly, got {d}");
        }
    }
}
