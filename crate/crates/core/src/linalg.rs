//! Small dense-matrix helpers shared across the crate.
//!
//! Unless stated otherwise, `norm` in this crate means the spectral norm
//! (largest singular value); nalgebra's `Matrix::norm` is Frobenius.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest singular value of `m` (the operator 2-norm). Zero-sized matrices
/// have norm 0.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    singular_values_desc(m).first().copied().unwrap_or(0.0)
}

/// Singular values of `m`, sorted in descending order.
pub fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let svd = m.clone().svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("singular values are finite"));
    sv
}

/// The `k`-th largest singular value (1-based). Returns 0 when `m` has fewer
/// than `k` singular values (e.g. a matrix with fewer than `k` columns).
pub fn kth_singular_value(m: &DMatrix<f64>, k: usize) -> f64 {
    assert!(k >= 1, "singular value index is 1-based");
    singular_values_desc(m).get(k - 1).copied().unwrap_or(0.0)
}

/// Spectral radius (largest eigenvalue modulus) of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral radius needs a square matrix");
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square());
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Replace `m` by its symmetric part `(m + m^T)/2`. Riccati-style recursions
/// apply this every step so roundoff cannot accumulate asymmetry.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// True when every entry of `m` is finite.
pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// True when every entry of `v` is finite.
pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Matrix power by repeated multiplication (exponents here are tiny).
pub fn matrix_power(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = m.nrows();
    assert!(m.is_square());
    let mut out = DMatrix::identity(n, n);
    for _ in 0..k {
        out = &out * m;
    }
    out
}

/// Fit a geometric envelope `norm(gap) <= zeta * eta^gap` to sampled
/// operator norms of matrix products.
///
/// `samples` holds `(gap, norm)` pairs with `gap >= 0`. The rate `eta` is the
/// largest per-step ratio `norm^(1/gap)` observed over "long" gaps (at least
/// half the largest sampled gap), inflated by a `1e-6` relative slack so the
/// fit is not tight to roundoff; the coefficient `zeta >= 1` then absorbs
/// every remaining sample, including short-gap transients. Errors when the
/// long-gap data is not contracting (`eta >= 1`).
pub fn geometric_envelope(samples: &[(usize, f64)]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("geometric envelope fit needs samples"));
    }
    if samples.iter().any(|&(_, v)| !v.is_finite() || v < 0.0) {
        return Err(Error::numerical(
            "geometric envelope fit saw a non-finite or negative norm",
        ));
    }
    let max_gap = samples.iter().map(|&(g, _)| g).max().unwrap();
    if max_gap == 0 {
        return Err(Error::invalid(
            "geometric envelope fit needs at least one sample with gap >= 1",
        ));
    }
    let long = max_gap.div_ceil(2).max(1);
    let mut eta: f64 = 0.0;
    for &(gap, norm) in samples {
        if gap >= long && norm > 0.0 {
            eta = eta.max(norm.powf(1.0 / gap as f64));
        }
    }
    eta *= 1.0 + 1e-6;
    if eta >= 1.0 {
        return Err(Error::numerical(format!(
            "geometric envelope fit found non-contracting rate {eta:.6} (>= 1)"
        )));
    }
    // Keep the rate strictly positive so zeta = norm / eta^gap stays finite.
    eta = eta.max(1e-12);
    let mut zeta: f64 = 1.0;
    for &(gap, norm) in samples {
        zeta = zeta.max(norm / eta.powi(gap as i32));
    }
    Ok((zeta, eta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spectral_norm_matches_hand_case() {
        // diag(3, -4): largest singular value 4.
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]);
        assert_relative_eq!(spectral_norm(&m), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn kth_singular_value_pads_with_zero() {
        // 2x1 matrix has a single singular value; the second is 0 by
        // convention (the padded square matrix is rank deficient).
        let m = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert_relative_eq!(kth_singular_value(&m, 1), 1.0, max_relative = 1e-12);
        assert_eq!(kth_singular_value(&m, 2), 0.0);
    }

    #[test]
    fn spectral_radius_of_rotation_scaling() {
        // 0.5 * rotation: complex eigenvalues of modulus 0.5.
        let c = 0.5 * std::f64::consts::FRAC_1_SQRT_2;
        let m = DMatrix::from_row_slice(2, 2, &[c, -c, c, c]);
        assert_relative_eq!(spectral_radius(&m), 0.5, max_relative = 1e-10);
    }

    #[test]
    fn envelope_recovers_exact_geometric_sequence() {
        // norms 0.5^k: expect zeta = 1 (clamped), eta = 0.5 within slack.
        let samples: Vec<(usize, f64)> = (0..=20).map(|k| (k, 0.5f64.powi(k as i32))).collect();
        let (zeta, eta) = geometric_envelope(&samples).unwrap();
        assert_relative_eq!(eta, 0.5, max_relative = 1e-5);
        assert_relative_eq!(zeta, 1.0, max_relative = 1e-5);
        for &(gap, norm) in &samples {
            assert!(norm <= zeta * eta.powi(gap as i32) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn envelope_absorbs_transient_growth_in_zeta() {
        // Transient bump at gap 1 must land in zeta, not eta.
        let samples = vec![(0, 1.0), (1, 3.0), (2, 0.25), (3, 0.125), (4, 0.0625)];
        let (zeta, eta) = geometric_envelope(&samples).unwrap();
        assert!(eta < 1.0);
        assert!(zeta >= 3.0 / eta);
        for &(gap, norm) in &samples {
            assert!(norm <= zeta * eta.powi(gap as i32) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn envelope_rejects_growth() {
        let samples: Vec<(usize, f64)> = (0..=10).map(|k| (k, 1.3f64.powi(k as i32))).collect();
        assert!(geometric_envelope(&samples).is_err());
    }

    #[test]
    fn envelope_handles_nilpotent_products() {
        // All long-gap norms zero (e.g. closed loop is nilpotent): eta is
        // floored at a tiny positive value and zeta stays 1.
        let samples = vec![(0, 1.0), (1, 0.0), (2, 0.0), (3, 0.0)];
        let (zeta, eta) = geometric_envelope(&samples).unwrap();
        assert!(eta > 0.0 && eta < 1.0);
        assert_relative_eq!(zeta, 1.0);
    }
}
