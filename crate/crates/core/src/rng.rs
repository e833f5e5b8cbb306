//! Deterministic per-path random sources.
//!
//! Every Monte Carlo path draws from a ChaCha12 generator keyed by the
//! master seed with the path index as the stream number. Path `i` of a
//! run is therefore reproducible in isolation, and ensembles do not
//! depend on scheduling or on the degree of parallelism.
//!
//! Gaussian variates use the Box-Muller transform on open-interval
//! uniforms built from the top 53 bits of the generator output:
//! `u = ((x >> 11) + 0.5) * 2^-53`, then
//! `z0 = sqrt(-2 ln u1) cos(2 pi u2)`, `z1 = sqrt(-2 ln u1) sin(2 pi u2)`.
//! The scheme is frozen so that seeded expected values in tests stay
//! valid across dependency upgrades.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};
use std::f64::consts::PI;

/// Generator for path `index` of an ensemble keyed by `master_seed`.
pub fn path_rng(master_seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Uniform on the open interval (0, 1) with 53-bit resolution.
#[inline]
fn unit_open(rng: &mut ChaCha12Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Stream of independent standard normal variates for one path.
pub struct NormalSource {
    rng: ChaCha12Rng,
    spare: Option<f64>,
}

impl NormalSource {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        NormalSource { rng: path_rng(master_seed, path_index), spare: None }
    }

    /// Next standard normal draw.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = unit_open(&mut self.rng);
        let u2 = unit_open(&mut self.rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fill `out` with independent standard normals.
    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.next_normal();
        }
    }
}
