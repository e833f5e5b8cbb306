//! Deterministic and random evolution operators.
//!
//! The deterministic side consists of the semigroup of the drift
//! operator `A`, the group of the noise operator `B`, and the evolution
//! system `U(t, s)` generated by the corrected drift
//! `A - H t^{2H-1} B^2`. For commuting backends `U` has the closed form
//! `exp(A (t-s)) exp(-B^2 (t^{2H} - s^{2H}) / 2)`; otherwise `U` is
//! integrated as a matrix ODE.
//!
//! The random side composes the group evaluated at a sampled noise
//! increment with the deterministic system, in the two flavours that
//! differ in how they consume time: the solution family uses
//! `U(t-s, 0)` and does not satisfy the composition identity, the
//! corrected family uses `U(t, s)` and does.

use crate::expm::{expm, expm_with_squarings};
use crate::fbm::FbmPath;
use crate::hurst::{Hurst, HurstError};
use nalgebra::{DMatrix, DVector};

/// Tolerance on the max-norm of `AB - BA` accepted for a model declared
/// commuting.
pub const COMMUTATOR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum EvolutionError {
    Hurst(HurstError),
    DimensionMismatch { expected: usize, got: usize },
    /// Declared commuting but the commutator is too large.
    NotCommuting { max_commutator: f64 },
    EmptySpectrum,
    NonFinite,
    /// Operators require `0 <= s <= t`.
    TimeOrder { t: f64, s: f64 },
    /// Random-evolution times must lie on the path grid.
    Alignment { time: f64 },
    /// A two-parameter family backs the corrected variant and a
    /// time-homogeneous family backs the solution variant.
    ModeVariantMismatch,
    /// The fixed-step integrator could not certify the tolerance.
    RefinementFailure { estimate: f64 },
}

impl std::fmt::Display for EvolutionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvolutionError::Hurst(e) => write!(f, "{e}"),
            EvolutionError::DimensionMismatch { expected, got } => {
                write!(f, "state dimension mismatch: expected {expected}, got {got}")
            }
            EvolutionError::NotCommuting { max_commutator } => {
                write!(f, "operators declared commuting but max |AB-BA| = {max_commutator:.3e}")
            }
            EvolutionError::EmptySpectrum => write!(f, "spectral model needs eigenvalues"),
            EvolutionError::NonFinite => write!(f, "model entries must be finite"),
            EvolutionError::TimeOrder { t, s } => {
                write!(f, "evolution requires 0 <= s <= t, got s = {s}, t = {t}")
            }
            EvolutionError::Alignment { time } => {
                write!(f, "time {time} is not a grid point of the driving path")
            }
            EvolutionError::ModeVariantMismatch => {
                write!(f, "variant and evolution mode are inconsistent")
            }
            EvolutionError::RefinementFailure { estimate } => {
                write!(f, "step size too coarse: error estimate {estimate:.3e} above tolerance")
            }
        }
    }
}

impl std::error::Error for EvolutionError {}

impl From<HurstError> for EvolutionError {
    fn from(e: HurstError) -> Self {
        EvolutionError::Hurst(e)
    }
}

/// The operator pair `(A, B)` in one of three backends.
#[derive(Debug, Clone)]
pub enum LinearModel {
    /// One-dimensional: `A = a`, `B = b`.
    Scalar { a: f64, b: f64 },
    /// Full matrices; `commuting` asserts `AB = BA` and is verified at
    /// construction.
    Matrix { a: DMatrix<f64>, b: DMatrix<f64>, commuting: bool },
    /// Diagonal drift with `B = b I`; the spectral picture of the
    /// parabolic example.
    SpectralDiagonal { eigenvalues: Vec<f64>, b: f64 },
}

impl LinearModel {
    pub fn scalar(a: f64, b: f64) -> Self {
        LinearModel::Scalar { a, b }
    }

    pub fn matrix(a: DMatrix<f64>, b: DMatrix<f64>, commuting: bool) -> Result<Self, EvolutionError> {
        if a.nrows() != a.ncols() || b.nrows() != b.ncols() || a.nrows() != b.nrows() {
            return Err(EvolutionError::DimensionMismatch {
                expected: a.nrows(),
                got: b.nrows(),
            });
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(EvolutionError::NonFinite);
        }
        if commuting {
            let comm = (&a * &b - &b * &a).abs().max();
            if comm >= COMMUTATOR_TOL {
                return Err(EvolutionError::NotCommuting { max_commutator: comm });
            }
        }
        Ok(LinearModel::Matrix { a, b, commuting })
    }

    pub fn spectral(eigenvalues: Vec<f64>, b: f64) -> Result<Self, EvolutionError> {
        if eigenvalues.is_empty() {
            return Err(EvolutionError::EmptySpectrum);
        }
        if eigenvalues.iter().any(|v| !v.is_finite()) || !b.is_finite() {
            return Err(EvolutionError::NonFinite);
        }
        Ok(LinearModel::SpectralDiagonal { eigenvalues, b })
    }

    pub fn state_dim(&self) -> usize {
        match self {
            LinearModel::Scalar { .. } => 1,
            LinearModel::Matrix { a, .. } => a.nrows(),
            LinearModel::SpectralDiagonal { eigenvalues, .. } => eigenvalues.len(),
        }
    }

    /// The scalar noise coefficient when `B = b I`.
    pub fn scalar_noise(&self) -> Option<f64> {
        match self {
            LinearModel::Scalar { b, .. } => Some(*b),
            LinearModel::SpectralDiagonal { b, .. } => Some(*b),
            LinearModel::Matrix { .. } => None,
        }
    }

    /// Whether the closed evolution form applies.
    pub fn has_closed_evolution(&self) -> bool {
        !matches!(self, LinearModel::Matrix { commuting: false, .. })
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<(), EvolutionError> {
        if x.len() != self.state_dim() {
            return Err(EvolutionError::DimensionMismatch {
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Semigroup action `exp(A t) x` for `t >= 0`.
    pub fn semigroup_apply(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>, EvolutionError> {
        assert!(t >= 0.0, "semigroup is defined for t >= 0");
        self.check_dim(x)?;
        Ok(match self {
            LinearModel::Scalar { a, .. } => x * (a * t).exp(),
            LinearModel::SpectralDiagonal { eigenvalues, .. } => {
                DVector::from_iterator(x.len(), eigenvalues.iter().zip(x.iter()).map(|(l, v)| (l * t).exp() * v))
            }
            LinearModel::Matrix { a, .. } => {
                let (e, squarings) = expm_with_squarings(&(a * t));
                if squarings > 40 {
                    log::warn!("matrix exponential used {squarings} squarings; conditioning is suspect");
                }
                &e * x
            }
        })
    }

    /// Group action `exp(B u) x` for any real `u`.
    pub fn group_apply(&self, u: f64, x: &DVector<f64>) -> Result<DVector<f64>, EvolutionError> {
        self.check_dim(x)?;
        Ok(match self {
            LinearModel::Scalar { b, .. } => x * (b * u).exp(),
            LinearModel::SpectralDiagonal { b, .. } => x * (b * u).exp(),
            LinearModel::Matrix { b, .. } => &expm(&(b * u)) * x,
        })
    }

    fn b_squared(&self) -> Option<DMatrix<f64>> {
        match self {
            LinearModel::Matrix { b, .. } => Some(b * b),
            _ => None,
        }
    }
}

/// How an evolution family consumes its two time arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvolutionMode {
    /// The genuine two-parameter system `U(t, s)`.
    TwoParameter,
    /// `U(t - s, 0)`: the form entering the solution family.
    TimeHomogeneous,
}

/// Fixed-step configuration of the non-commuting matrix integrator.
#[derive(Debug, Clone, Copy)]
pub struct OdeConfig {
    /// Step of the one-step method.
    pub step: f64,
    /// Acceptance threshold for the Richardson error estimate.
    pub tolerance: f64,
    /// Fraction of the right endpoint below which steps use the
    /// exact-coefficient exponential stage instead of the generic rule;
    /// the coefficient `t^{2H-1}` has unbounded derivatives at 0.
    pub exact_window_fraction: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig { step: 1e-3, tolerance: 1e-6, exact_window_fraction: 0.1 }
    }
}

/// The evolution system generated by `A - H t^{2H-1} B^2`.
#[derive(Debug, Clone)]
pub struct EvolutionFamily {
    model: LinearModel,
    hurst: Hurst,
    mode: EvolutionMode,
    ode: OdeConfig,
}

impl EvolutionFamily {
    pub fn new(model: LinearModel, hurst: Hurst, mode: EvolutionMode) -> Result<Self, EvolutionError> {
        hurst.require_analysis()?;
        Ok(EvolutionFamily { model, hurst, mode, ode: OdeConfig::default() })
    }

    pub fn with_ode_config(mut self, ode: OdeConfig) -> Self {
        self.ode = ode;
        self
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn hurst(&self) -> Hurst {
        self.hurst
    }

    pub fn mode(&self) -> EvolutionMode {
        self.mode
    }

    fn effective_times(&self, t: f64, s: f64) -> (f64, f64) {
        match self.mode {
            EvolutionMode::TwoParameter => (t, s),
            EvolutionMode::TimeHomogeneous => (t - s, 0.0),
        }
    }

    /// Apply `U(t, s)` (or `U(t-s, 0)` in time-homogeneous mode) to `x`.
    pub fn apply(&self, t: f64, s: f64, x: &DVector<f64>) -> Result<DVector<f64>, EvolutionError> {
        if !(0.0 <= s && s <= t) {
            return Err(EvolutionError::TimeOrder { t, s });
        }
        self.model.check_dim(x)?;
        let (te, se) = self.effective_times(t, s);
        if te == se {
            return Ok(x.clone());
        }
        let two_h = self.hurst.two_h();
        let decay = 0.5 * (te.powf(two_h) - se.powf(two_h));
        match &self.model {
            LinearModel::Scalar { a, b } => {
                Ok(x * (a * (te - se) - b * b * decay).exp())
            }
            LinearModel::SpectralDiagonal { eigenvalues, b } => {
                let noise = (-b * b * decay).exp();
                Ok(DVector::from_iterator(
                    x.len(),
                    eigenvalues.iter().zip(x.iter()).map(|(l, v)| (l * (te - se)).exp() * noise * v),
                ))
            }
            LinearModel::Matrix { a, commuting, .. } => {
                if *commuting {
                    let b2 = self.model.b_squared().unwrap();
                    let decay_op = expm(&(b2 * (-decay)));
                    let drift_op = expm(&(a * (te - se)));
                    Ok(drift_op * (decay_op * x))
                } else {
                    let u = self.integrated_operator(te, se)?;
                    Ok(u * x)
                }
            }
        }
    }

    /// The operator `U(t, s)` as a matrix; closed form where available,
    /// integrated otherwise. Scalar and spectral backends return the
    /// diagonal as a matrix.
    pub fn operator(&self, t: f64, s: f64) -> Result<DMatrix<f64>, EvolutionError> {
        if !(0.0 <= s && s <= t) {
            return Err(EvolutionError::TimeOrder { t, s });
        }
        let (te, se) = self.effective_times(t, s);
        let n = self.model.state_dim();
        if te == se {
            return Ok(DMatrix::identity(n, n));
        }
        match &self.model {
            LinearModel::Matrix { commuting: false, .. } => self.integrated_operator(te, se),
            _ => {
                let mut m = DMatrix::zeros(n, n);
                for k in 0..n {
                    let mut e = DVector::zeros(n);
                    e[k] = 1.0;
                    let col = self.apply(t, s, &e)?;
                    m.set_column(k, &col);
                }
                Ok(m)
            }
        }
    }

    /// Fixed-step integration of `dU/dt = (A - H t^{2H-1} B^2) U` from
    /// `se` to `te`, with a Richardson error estimate from a half-step
    /// rerun. Inside the window near `t = 0` each step applies the
    /// exponential of the exactly integrated generator (plus the leading
    /// commutator correction); outside it uses the classical 4th-order
    /// rule.
    fn integrated_operator(&self, te: f64, se: f64) -> Result<DMatrix<f64>, EvolutionError> {
        let coarse = self.integrate_once(te, se, self.ode.step);
        let fine = self.integrate_once(te, se, 0.5 * self.ode.step);
        let estimate = (&coarse - &fine).abs().max() / 15.0;
        if estimate > self.ode.tolerance {
            return Err(EvolutionError::RefinementFailure { estimate });
        }
        Ok(fine)
    }

    fn integrate_once(&self, te: f64, se: f64, step: f64) -> DMatrix<f64> {
        let (a, b2) = match &self.model {
            LinearModel::Matrix { a, .. } => (a, self.model.b_squared().unwrap()),
            _ => unreachable!("integration only runs for matrix backends"),
        };
        let n = a.nrows();
        let hurst = self.hurst.value();
        let two_h = self.hurst.two_h();
        let n_steps = ((te - se) / step).ceil().max(1.0) as usize;
        let h = (te - se) / n_steps as f64;
        let window_end = se.max(self.ode.exact_window_fraction * te);
        let comm = a * &b2 - &b2 * a;

        let generator = |t: f64| -> DMatrix<f64> { a - &b2 * (hurst * t.powf(two_h - 1.0)) };

        let mut u = DMatrix::identity(n, n);
        let mut r = se;
        for _ in 0..n_steps {
            if r < window_end {
                // Exactly integrated generator over the step plus the
                // first commutator term of the exponential expansion.
                let decay = 0.5 * ((r + h).powf(two_h) - r.powf(two_h));
                let omega1 = a * h - &b2 * decay;
                let w = magnus_weight(r, h, two_h);
                let omega = omega1 + &comm * (0.5 * hurst * w);
                u = expm(&omega) * u;
            } else {
                // Classical 4th-order step.
                let k1 = generator(r) * &u;
                let k2 = generator(r + 0.5 * h) * (&u + &k1 * (0.5 * h));
                let k3 = generator(r + 0.5 * h) * (&u + &k2 * (0.5 * h));
                let k4 = generator(r + h) * (&u + &k3 * h);
                u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            r += h;
        }
        u
    }
}

/// `int_r^{r+h} int_r^tau (tau^{2H-1} - sigma^{2H-1}) dsigma dtau`,
/// the weight of the commutator term of the exact-window step.
fn magnus_weight(r: f64, h: f64, two_h: f64) -> f64 {
    let anti = |tau: f64| -> f64 {
        (1.0 - 1.0 / two_h) * tau.powf(two_h + 1.0) / (two_h + 1.0)
            - r * tau.powf(two_h) / two_h
            + r.powf(two_h) * tau / two_h
    };
    anti(r + h) - anti(r)
}

/// Which random evolution family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// `S_B(dB) U(t-s, 0)`: the solution operator; no composition law.
    Uy,
    /// `S_B(dB) U(t, s)`: the corrected family with the composition law.
    UyBar,
}

impl Variant {
    /// The evolution mode this variant must be paired with.
    pub fn required_mode(self) -> EvolutionMode {
        match self {
            Variant::Uy => EvolutionMode::TimeHomogeneous,
            Variant::UyBar => EvolutionMode::TwoParameter,
        }
    }
}

/// A deterministic evolution family composed with the group evaluated
/// at increments of one sampled noise path.
#[derive(Debug, Clone)]
pub struct RandomEvolution<'a> {
    family: EvolutionFamily,
    path: FbmPath<'a>,
    variant: Variant,
}

impl<'a> RandomEvolution<'a> {
    pub fn new(
        family: EvolutionFamily,
        path: FbmPath<'a>,
        variant: Variant,
    ) -> Result<Self, EvolutionError> {
        if family.mode() != variant.required_mode() {
            return Err(EvolutionError::ModeVariantMismatch);
        }
        Ok(RandomEvolution { family, path, variant })
    }

    /// Build with the mode implied by the variant.
    pub fn from_model(
        model: LinearModel,
        hurst: Hurst,
        path: FbmPath<'a>,
        variant: Variant,
    ) -> Result<Self, EvolutionError> {
        let family = EvolutionFamily::new(model, hurst, variant.required_mode())?;
        RandomEvolution::new(family, path, variant)
    }

    pub fn family(&self) -> &EvolutionFamily {
        &self.family
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn path(&self) -> FbmPath<'a> {
        self.path
    }

    fn grid_value(&self, t: f64) -> Result<f64, EvolutionError> {
        let idx = self.path.grid.index_of(t).ok_or(EvolutionError::Alignment { time: t })?;
        Ok(self.path.values[idx])
    }

    /// Apply the random operator at grid times `0 <= s <= t`.
    pub fn apply(&self, t: f64, s: f64, x: &DVector<f64>) -> Result<DVector<f64>, EvolutionError> {
        if !(0.0 <= s && s <= t) {
            return Err(EvolutionError::TimeOrder { t, s });
        }
        if t == s {
            self.family.model().check_dim(x)?;
            return Ok(x.clone());
        }
        let db = self.grid_value(t)? - self.grid_value(s)?;
        let deterministic = self.family.apply(t, s, x)?;
        self.family.model().group_apply(db, &deterministic)
    }

    /// `|| V(t,r) V(r,s) x - V(t,s) x ||` for the selected variant.
    pub fn composition_defect(
        &self,
        t: f64,
        r: f64,
        s: f64,
        x: &DVector<f64>,
    ) -> Result<f64, EvolutionError> {
        if !(0.0 <= s && s <= r && r <= t) {
            return Err(EvolutionError::TimeOrder { t, s });
        }
        let inner = self.apply(r, s, x)?;
        let composed = self.apply(t, r, &inner)?;
        let direct = self.apply(t, s, x)?;
        Ok((composed - direct).norm())
    }
}

/// Operator norms of `U(t, s)` over a `(t, s)` lattice, plus the largest
/// observed value: a finite witness of the uniform bound on the system.
pub fn operator_norm_lattice(
    family: &EvolutionFamily,
    times: &[f64],
) -> Result<(Vec<(f64, f64, f64)>, f64), EvolutionError> {
    let mut rows = Vec::new();
    let mut c_u: f64 = 0.0;
    for (i, &t) in times.iter().enumerate() {
        for &s in &times[..=i] {
            let m = family.operator(t, s)?;
            let norm = m.svd(false, false).singular_values.max();
            c_u = c_u.max(norm);
            rows.push((t, s, norm));
        }
    }
    Ok((rows, c_u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm;
    use crate::grid::TimeGrid;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::{dmatrix, dvector};

    fn h(v: f64) -> Hurst {
        Hurst::new(v).unwrap()
    }

    #[test]
    fn semigroup_examples() {
        let m = LinearModel::scalar(-1.0, 0.0);
        let x = dvector![1.0];
        assert_relative_eq!(m.semigroup_apply(0.0, &x).unwrap()[0], 1.0);
        assert_relative_eq!(
            m.semigroup_apply(1.0, &x).unwrap()[0],
            (-1.0f64).exp(),
            max_relative = 1e-14
        );
        let nil = LinearModel::matrix(
            dmatrix![0.0, 1.0; 0.0, 0.0],
            DMatrix::zeros(2, 2),
            true,
        )
        .unwrap();
        let y = nil.semigroup_apply(1.0, &dvector![0.0, 1.0]).unwrap();
        assert_relative_eq!(y[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(y[1], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn group_examples_and_law() {
        let m = LinearModel::scalar(0.0, 2.0);
        let x = dvector![1.0];
        assert_relative_eq!(m.group_apply(0.0, &x).unwrap()[0], 1.0);
        assert_relative_eq!(
            m.group_apply(0.5, &x).unwrap()[0],
            std::f64::consts::E,
            max_relative = 1e-14
        );
        // Group law on a full matrix backend.
        let b = dmatrix![0.2, 0.7; -0.3, 0.1];
        let m = LinearModel::matrix(DMatrix::zeros(2, 2), b, false).unwrap();
        let x = dvector![1.0, -2.0];
        for &u in &[0.3, -1.1, 2.4] {
            let back = m.group_apply(-u, &m.group_apply(u, &x).unwrap()).unwrap();
            assert!((back - &x).norm() < 1e-12);
        }
    }

    #[test]
    fn commuting_flag_is_verified() {
        let a = dmatrix![0.0, 1.0; 0.0, 0.0];
        let b = dmatrix![0.0, 0.0; 1.0, 0.0];
        assert!(matches!(
            LinearModel::matrix(a.clone(), b.clone(), true),
            Err(EvolutionError::NotCommuting { .. })
        ));
        assert!(LinearModel::matrix(a, b, false).is_ok());
    }

    #[test]
    fn evolution_closed_form_examples() {
        let fam = EvolutionFamily::new(
            LinearModel::scalar(0.0, 1.0),
            h(0.75),
            EvolutionMode::TwoParameter,
        )
        .unwrap();
        let x = dvector![1.0];
        // U(s, s) = I.
        assert_relative_eq!(fam.apply(0.4, 0.4, &x).unwrap()[0], 1.0);
        // U(1, 0) = exp(-(1^{1.5} - 0) / 2).
        assert_relative_eq!(
            fam.apply(1.0, 0.0, &x).unwrap()[0],
            (-0.5f64).exp(),
            max_relative = 1e-14
        );
        // At H = 1/2 the correction is the Ito drift.
        let fam = EvolutionFamily::new(
            LinearModel::scalar(0.3, 0.8),
            h(0.5),
            EvolutionMode::TwoParameter,
        )
        .unwrap();
        let expect = ((0.3 - 0.8 * 0.8 / 2.0) * 0.6f64).exp();
        assert_relative_eq!(fam.apply(0.9, 0.3, &x).unwrap()[0], expect, max_relative = 1e-13);
    }

    #[test]
    fn magnus_weight_matches_numeric_double_integral() {
        let (r, step, two_h) = (0.03, 0.02, 1.5);
        let outer = crate::quad::adaptive_gk(
            |tau| {
                crate::quad::adaptive_gk(
                    |sigma| tau.powf(two_h - 1.0) - sigma.powf(two_h - 1.0),
                    r,
                    tau,
                    1e-13,
                    30,
                )
                .unwrap()
                .value
            },
            r,
            r + step,
            1e-12,
            30,
        )
        .unwrap()
        .value;
        assert_relative_eq!(magnus_weight(r, step, two_h), outer, max_relative = 1e-8);
    }

    #[test]
    fn integrated_evolution_matches_closed_form_on_commuting_input() {
        // Commuting pair pushed through the generic integrator.
        let a = dmatrix![-0.6, 0.25; 0.25, -0.4];
        let b = &a * 0.5 + DMatrix::identity(2, 2) * 0.3;
        let closed = EvolutionFamily::new(
            LinearModel::matrix(a.clone(), b.clone(), true).unwrap(),
            h(0.75),
            EvolutionMode::TwoParameter,
        )
        .unwrap();
        let generic = EvolutionFamily::new(
            LinearModel::matrix(a, b, false).unwrap(),
            h(0.75),
            EvolutionMode::TwoParameter,
        )
        .unwrap()
        .with_ode_config(OdeConfig { step: 1e-3, tolerance: 1e-6, exact_window_fraction: 0.1 });
        let x = dvector![1.0, -0.5];
        let want = closed.apply(1.0, 0.0, &x).unwrap();
        let got = generic.apply(1.0, 0.0, &x).unwrap();
        assert!((want - got).norm() < 1e-8);
    }

    #[test]
    fn refinement_failure_surfaces() {
        let a = dmatrix![0.0, 6.0; -6.0, 0.0];
        let b = dmatrix![0.4, 0.1; 0.0, 0.3];
        let fam = EvolutionFamily::new(
            LinearModel::matrix(a, b, false).unwrap(),
            h(0.7),
            EvolutionMode::TwoParameter,
        )
        .unwrap()
        .with_ode_config(OdeConfig { step: 0.5, tolerance: 1e-12, exact_window_fraction: 0.1 });
        assert!(matches!(
            fam.apply(1.0, 0.0, &dvector![1.0, 0.0]),
            Err(EvolutionError::RefinementFailure { .. })
        ));
    }

    fn frozen_path(steps: usize, seed: u64) -> fbm::PathEnsemble {
        let grid = TimeGrid::uniform(1.0, steps).unwrap();
        fbm::sample_circulant(h(0.75), &grid, 1, seed).unwrap()
    }

    #[test]
    fn random_families_match_scalar_closed_forms() {
        let ens = frozen_path(8, 42);
        let path = ens.path(0);
        let (a, b) = (0.4f64, 1.0f64);
        let x = dvector![1.0];
        let uy = RandomEvolution::from_model(
            LinearModel::scalar(a, b),
            h(0.75),
            path,
            Variant::Uy,
        )
        .unwrap();
        let uybar = RandomEvolution::from_model(
            LinearModel::scalar(a, b),
            h(0.75),
            path,
            Variant::UyBar,
        )
        .unwrap();
        let (t, s) = (0.75f64, 0.25f64);
        let db = path.values[6] - path.values[2];
        // Displayed forms of the two families for scalar coefficients.
        let want_uy = (b * db - 0.5 * b * b * (t - s).powf(1.5) + a * (t - s)).exp();
        let want_uybar =
            (b * db - 0.5 * b * b * (t.powf(1.5) - s.powf(1.5)) + a * (t - s)).exp();
        assert_relative_eq!(uy.apply(t, s, &x).unwrap()[0], want_uy, max_relative = 1e-13);
        assert_relative_eq!(uybar.apply(t, s, &x).unwrap()[0], want_uybar, max_relative = 1e-13);
        // t = s is the identity; s = 0 makes the variants agree.
        assert_relative_eq!(uy.apply(0.5, 0.5, &x).unwrap()[0], 1.0);
        assert_relative_eq!(
            uy.apply(0.5, 0.0, &x).unwrap()[0],
            uybar.apply(0.5, 0.0, &x).unwrap()[0],
            max_relative = 1e-14
        );
        // Noise off reduces to the drift semigroup.
        let plain = RandomEvolution::from_model(
            LinearModel::scalar(a, 0.0),
            h(0.75),
            path,
            Variant::Uy,
        )
        .unwrap();
        assert_relative_eq!(
            plain.apply(t, s, &x).unwrap()[0],
            (a * (t - s)).exp(),
            max_relative = 1e-14
        );
        // Off-grid times are an alignment error.
        assert!(matches!(
            uy.apply(0.33, 0.0, &x),
            Err(EvolutionError::Alignment { .. })
        ));
    }

    #[test]
    fn variants_coincide_at_brownian_boundary() {
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let ens = fbm::sample_circulant(h(0.5), &grid, 1, 9).unwrap();
        let path = ens.path(0);
        let x = dvector![1.0];
        let uy =
            RandomEvolution::from_model(LinearModel::scalar(0.2, 0.9), h(0.5), path, Variant::Uy)
                .unwrap();
        let uybar = RandomEvolution::from_model(
            LinearModel::scalar(0.2, 0.9),
            h(0.5),
            path,
            Variant::UyBar,
        )
        .unwrap();
        for i in 0..=8 {
            for j in 0..=i {
                let (t, s) = (i as f64 / 8.0, j as f64 / 8.0);
                assert_relative_eq!(
                    uy.apply(t, s, &x).unwrap()[0],
                    uybar.apply(t, s, &x).unwrap()[0],
                    max_relative = 1e-13
                );
            }
        }
    }

    #[test]
    fn composition_defect_dichotomy() {
        let ens = frozen_path(8, 42);
        let path = ens.path(0);
        let x = dvector![1.0];
        let uybar = RandomEvolution::from_model(
            LinearModel::scalar(0.0, 1.0),
            h(0.75),
            path,
            Variant::UyBar,
        )
        .unwrap();
        // The corrected family telescopes exactly.
        assert_abs_diff_eq!(
            uybar.composition_defect(1.0, 0.5, 0.0, &x).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let uy = RandomEvolution::from_model(
            LinearModel::scalar(0.0, 1.0),
            h(0.75),
            path,
            Variant::Uy,
        )
        .unwrap();
        // Closed-form defect: exp(B_1) |e^{-0.5^{1.5}} - e^{-1/2}|.
        let b1 = path.values[8];
        let expect = b1.exp() * ((-(0.5f64.powf(1.5))).exp() - (-0.5f64).exp()).abs();
        assert_relative_eq!(
            uy.composition_defect(1.0, 0.5, 0.0, &x).unwrap(),
            expect,
            max_relative = 1e-12
        );
        assert!(expect > 0.0);
    }

    #[test]
    fn mean_of_solution_family_is_the_drift_semigroup() {
        // E exp(b B_t - b^2 t^{2H} / 2) = 1, so the ensemble mean of the
        // random family applied to x is the semigroup alone.
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let hv = h(0.7);
        let ens = fbm::sample_circulant(hv, &grid, 30_000, 13).unwrap();
        let (a, b) = (-0.5, 0.8);
        let x = dvector![1.0];
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for p in ens.paths() {
            let re =
                RandomEvolution::from_model(LinearModel::scalar(a, b), hv, p, Variant::Uy).unwrap();
            let v = re.apply(1.0, 0.0, &x).unwrap()[0];
            sum += v;
            sum_sq += v * v;
        }
        let n = ens.n_paths() as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean).max(0.0) / n).sqrt();
        let expect = (a * 1.0f64).exp();
        assert!(
            (mean - expect).abs() <= 3.0 * se,
            "mean {mean}, expect {expect}, se {se}"
        );
    }

    #[test]
    fn lattice_norms_are_bounded() {
        let fam = EvolutionFamily::new(
            LinearModel::spectral(vec![-1.0, -4.0, -9.0], 1.0).unwrap(),
            h(0.75),
            EvolutionMode::TwoParameter,
        )
        .unwrap();
        let times: Vec<f64> = (0..=4).map(|i| i as f64 / 4.0).collect();
        let (rows, c_u) = operator_norm_lattice(&fam, &times).unwrap();
        assert_eq!(rows.len(), 15);
        assert!(c_u <= 1.0 + 1e-12, "dissipative system stays contractive, got {c_u}");
    }
}
