//! Real matrix exponential by scaling-and-squaring with a degree-13
//! Pade approximant (Higham's method, real arithmetic).

use nalgebra::DMatrix;

/// theta_13 for double precision.
const THETA_13: f64 = 5.371_920_351_148_152;

/// Numerator coefficients of the (13, 13) Pade approximant to exp.
const B: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// exp(A) together with the number of squarings used; callers may warn
/// when the scaling stage indicates a badly conditioned exponent.
pub fn expm_with_squarings(a: &DMatrix<f64>) -> (DMatrix<f64>, u32) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix exponential needs a square matrix");
    if n == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    if n == 1 {
        return (DMatrix::from_element(1, 1, a[(0, 0)].exp()), 0);
    }

    let norm = one_norm(a);
    let s = if norm > THETA_13 { (norm / THETA_13).log2().ceil() as u32 } else { 0 };
    let scaled = a * 0.5f64.powi(s as i32);

    let eye = DMatrix::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let w1 = &a6 * B[13] + &a4 * B[11] + &a2 * B[9];
    let w2 = &w1 * &a6 + &a6 * B[7] + &a4 * B[5] + &a2 * B[3] + &eye * B[1];
    let u = &scaled * w2;
    let v1 = &a6 * B[12] + &a4 * B[10] + &a2 * B[8];
    let v = &v1 * &a6 + &a6 * B[6] + &a4 * B[4] + &a2 * B[2] + &eye * B[0];

    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut result = lhs
        .lu()
        .solve(&rhs)
        .expect("Pade denominator is nonsingular after scaling");
    for _ in 0..s {
        result = &result * &result;
    }
    (result, s)
}

/// exp(A).
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    expm_with_squarings(a).0
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    let mut max = 0.0f64;
    for j in 0..a.ncols() {
        let mut col = 0.0;
        for i in 0..a.nrows() {
            col += a[(i, j)].abs();
        }
        max = max.max(col);
    }
    max
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).abs().max()
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let z = DMatrix::zeros(4, 4);
        assert!(max_abs_diff(&expm(&z), &DMatrix::identity(4, 4)) < 1e-15);
    }

    #[test]
    fn exp_of_diagonal() {
        let d = dmatrix![1.0, 0.0; 0.0, -2.0];
        let e = expm(&d);
        assert!((e[(0, 0)] - 1.0f64.exp()).abs() < 1e-14);
        assert!((e[(1, 1)] - (-2.0f64).exp()).abs() < 1e-15);
        assert!(e[(0, 1)].abs() < 1e-16 && e[(1, 0)].abs() < 1e-16);
    }

    #[test]
    fn exp_of_nilpotent_is_polynomial() {
        let n = dmatrix![0.0, 1.0; 0.0, 0.0];
        let e = expm(&n);
        let expect = dmatrix![1.0, 1.0; 0.0, 1.0];
        assert!(max_abs_diff(&e, &expect) < 1e-15);
    }

    #[test]
    fn rotation_block_matches_trig() {
        let t = 0.7f64;
        let a = dmatrix![0.0, -t; t, 0.0];
        let e = expm(&a);
        let expect = dmatrix![t.cos(), -t.sin(); t.sin(), t.cos()];
        assert!(max_abs_diff(&e, &expect) < 1e-14);
    }

    #[test]
    fn large_norm_requires_scaling() {
        let a = dmatrix![50.0, 0.0; 0.0, -50.0];
        let (e, s) = expm_with_squarings(&a);
        assert!(s >= 3);
        assert!((e[(0, 0)] - 50.0f64.exp()).abs() / 50.0f64.exp() < 1e-12);
        assert!((e[(1, 1)] - (-50.0f64).exp()).abs() < 1e-25);
    }

    #[test]
    fn semigroup_property_on_random_matrix() {
        let mut src = crate::rng::NormalSource::new(31, 0);
        let a = DMatrix::from_fn(8, 8, |_, _| 0.4 * src.next_normal());
        let e1 = expm(&(&a * 0.3));
        let e2 = expm(&(&a * 0.7));
        let e = expm(&a);
        assert!(max_abs_diff(&(&e1 * &e2), &e) < 1e-10);
    }
}
