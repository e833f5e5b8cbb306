//! Numerical kernels for affine evolution equations driven by scalar
//! fractional Brownian motion with Hurst parameter `H > 1/2`, with
//! stochastic integration in the Skorokhod (Wick) sense.
//!
//! The crate is organised around the pipeline
//!
//! * [`fbm`] — exact-in-distribution sampling of fractional Brownian
//!   motion on finite grids (dense Cholesky, circulant embedding, and a
//!   Wiener-representation route) plus covariance utilities,
//! * [`fraccalc`] — fractional-calculus kernels: the right-sided
//!   Riemann-Liouville integral, the transfer kernel mapping step
//!   integrands into `L^2`, the memory inner product computed by two
//!   independent routes, and Wick integrals of step functions,
//! * [`evolution`] — semigroups, groups, the evolution system generated
//!   by the drift corrected with the `-H t^{2H-1} B^2` term, and the two
//!   random evolution families built from a sampled noise path,
//! * [`solver`] — geometric closed forms, affine mild solutions by
//!   quadrature, Picard iteration, and residual/comparison checks,
//! * [`spde`] — a spectral realisation of the stochastic heat/reaction
//!   equation on `(0,1)` with multiplicative scalar fractional noise,
//! * [`harness`] — Monte Carlo moment estimation against closed-form
//!   laws and growth bounds, stability probes, and report emission.
//!
//! All randomness flows through per-path counter-based generators so
//! that ensembles are bit-reproducible regardless of thread count.

pub mod evolution;
pub mod fbm;
pub mod fraccalc;
pub mod grid;
pub mod harness;
pub mod hurst;
pub mod quad;
pub mod report;
pub mod rng;
pub mod solver;
pub mod spde;
pub mod special;

mod expm;

pub use evolution::{EvolutionFamily, EvolutionMode, LinearModel, RandomEvolution, Variant};
pub use fbm::{FbmPath, PathEnsemble, SampleMethod};
pub use fraccalc::{FracConstants, SampledKernel, StepFunction};
pub use grid::TimeGrid;
pub use hurst::Hurst;
pub use solver::{ForcingTerm, Trajectory};
pub use spde::SpectralHeatModel;
