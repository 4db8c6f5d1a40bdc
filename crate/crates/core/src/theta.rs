//! Multi-dimensional theta series and their directional derivatives.
//!
//! Convention: `theta(z | B) = sum_{n in Z^g} exp(i pi n^T B n + 2 pi i n^T z)`.
//! The series is truncated to the ellipsoid `|| L^T (n + c) || < R` where
//! `Im B = L L^T` and `c = (Im B)^{-1} Im z` is the centre of the Gaussian
//! envelope. `R` is the smallest integer whose rigorous tail bound meets the
//! requested absolute error.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Symmetric `g x g` complex matrix with positive-definite imaginary part.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodMatrix {
    b: DMatrix<Complex64>,
    /// Upper-triangular `L^T` with `Im B = L L^T`.
    chol_upper: DMatrix<f64>,
    imag_inverse: DMatrix<f64>,
    /// Smallest singular value of `L^T`.
    min_singular: f64,
}

impl PeriodMatrix {
    pub fn new(b: DMatrix<Complex64>) -> Result<Self> {
        let g = b.nrows();
        if g == 0 || b.ncols() != g {
            return Err(Error::InvalidPeriodMatrix(format!(
                "expected a non-empty square matrix, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if b.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidPeriodMatrix("non-finite entry".into()));
        }
        for i in 0..g {
            for j in 0..i {
                if b[(i, j)] != b[(j, i)] {
                    return Err(Error::InvalidPeriodMatrix(format!(
                        "not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let imag = b.map(|z| z.im);
        let chol = imag
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidPeriodMatrix("Im B is not positive definite".into()))?;
        let chol_upper = chol.l().transpose();
        let imag_inverse = chol.inverse();
        let eig = imag.symmetric_eigen();
        let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min_eig > 0.0) {
            return Err(Error::InvalidPeriodMatrix("Im B is not positive definite".into()));
        }
        Ok(Self { b, chol_upper, imag_inverse, min_singular: min_eig.sqrt() })
    }

    /// Builds from row-major entries.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let g = rows.len();
        if rows.iter().any(|r| r.len() != g) {
            return Err(Error::InvalidPeriodMatrix("rows have unequal length".into()));
        }
        Self::new(DMatrix::from_fn(g, g, |i, j| rows[i][j]))
    }

    pub fn genus(&self) -> usize {
        self.b.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.b
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.b[(i, j)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationPolicy {
    pub target_abs_error: f64,
    pub max_radius: usize,
    /// `|theta| < divisor_threshold * sum |terms|` is treated as a zero.
    pub divisor_threshold: f64,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self { target_abs_error: 1e-14, max_radius: 12, divisor_threshold: 1e-10 }
    }
}

impl TruncationPolicy {
    pub fn new(target_abs_error: f64, max_radius: usize) -> Result<Self> {
        if !(target_abs_error > 0.0) || !target_abs_error.is_finite() {
            return Err(Error::InvalidParameter(
                "target_abs_error must be positive and finite".into(),
            ));
        }
        if max_radius < 1 {
            return Err(Error::InvalidParameter("max_radius must be at least 1".into()));
        }
        Ok(Self { target_abs_error, max_radius, ..Self::default() })
    }
}

/// Theta value with first and mixed second directional derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaJet {
    pub value: Complex64,
    /// `grad theta . dir1`
    pub d1: Complex64,
    /// `grad theta . dir2`
    pub d2: Complex64,
    /// `dir1^T Hess(theta) dir2`
    pub d12: Complex64,
    /// `sum |term|`, the natural magnitude scale of the series at `z`.
    pub scale: f64,
    pub radius: usize,
}

pub fn theta(z: &[Complex64], b: &PeriodMatrix, pol: &TruncationPolicy) -> Result<Complex64> {
    let zero = vec![Complex64::new(0.0, 0.0); b.genus()];
    Ok(theta_jet(z, b, &zero, &zero, pol)?.value)
}

/// `d^2/ds dr ln theta(z + s dir1 + r dir2)` at `s = r = 0`, from term-wise
/// differentiated series.
pub fn theta_log_d2(
    z: &[Complex64],
    b: &PeriodMatrix,
    dir1: &[Complex64],
    dir2: &[Complex64],
    pol: &TruncationPolicy,
) -> Result<Complex64> {
    let jet = theta_jet(z, b, dir1, dir2, pol)?;
    if jet.value.norm() < pol.divisor_threshold * jet.scale {
        return Err(Error::ThetaDivisor { abs: jet.value.norm(), scale: jet.scale });
    }
    let inv = jet.value.inv();
    Ok(jet.d12 * inv - jet.d1 * jet.d2 * inv * inv)
}

pub fn theta_jet(
    z: &[Complex64],
    b: &PeriodMatrix,
    dir1: &[Complex64],
    dir2: &[Complex64],
    pol: &TruncationPolicy,
) -> Result<ThetaJet> {
    let g = b.genus();
    for (name, v) in [("z", z), ("dir1", dir1), ("dir2", dir2)] {
        if v.len() != g {
            return Err(Error::Dimension(format!("{name} has length {}, genus is {g}", v.len())));
        }
        if v.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} has non-finite entries")));
        }
    }

    let y = DVector::from_iterator(g, z.iter().map(|c| c.im));
    let centre = &b.imag_inverse * &y;
    let envelope_log = PI * y.dot(&centre);
    let dir_norm = norm(dir1).max(norm(dir2));
    let radius = choose_radius(b, centre.norm(), dir_norm, envelope_log, pol)?;

    let two_pi_i = Complex64::new(0.0, 2.0 * PI);
    let mut jet = ThetaJet {
        value: Complex64::new(0.0, 0.0),
        d1: Complex64::new(0.0, 0.0),
        d2: Complex64::new(0.0, 0.0),
        d12: Complex64::new(0.0, 0.0),
        scale: 0.0,
        radius,
    };
    let mut n = vec![0i64; g];
    enumerate_ellipsoid(
        &b.chol_upper,
        centre.as_slice(),
        (radius * radius) as f64,
        g,
        &mut n,
        &mut |n| {
            let mut quad = Complex64::new(0.0, 0.0);
            for i in 0..g {
                let ni = n[i] as f64;
                quad += b.b[(i, i)] * ni * ni;
                for (j, nj) in n.iter().enumerate().take(i) {
                    quad += b.b[(i, j)] * (2.0 * ni * *nj as f64);
                }
            }
            let mut lin = Complex64::new(0.0, 0.0);
            let mut a1 = Complex64::new(0.0, 0.0);
            let mut a2 = Complex64::new(0.0, 0.0);
            for i in 0..g {
                let ni = n[i] as f64;
                lin += z[i] * ni;
                a1 += dir1[i] * ni;
                a2 += dir2[i] * ni;
            }
            let term = (Complex64::new(0.0, PI) * quad + two_pi_i * lin).exp();
            jet.value += term;
            jet.d1 += two_pi_i * a1 * term;
            jet.d2 += two_pi_i * a2 * term;
            jet.d12 += two_pi_i * two_pi_i * a1 * a2 * term;
            jet.scale += term.norm();
        },
    );
    Ok(jet)
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Upper bound on the sum of `|term| * poly` over lattice points outside the
/// ellipsoid of radius `r0`, excluding the `exp(envelope_log)` prefactor.
///
/// Points with `||L^T v|| < r` number at most `prod_i (2 r / L_ii + 1)`;
/// shells of width 1/2 are summed until they stop contributing.
fn tail_bound(b: &PeriodMatrix, r0: f64, centre_norm: f64, dir_norm: f64) -> f64 {
    let g = b.genus();
    let diag: Vec<f64> = (0..g).map(|i| b.chol_upper[(i, i)]).collect();
    let count = |r: f64| diag.iter().map(|d| 2.0 * r / d + 1.0).product::<f64>();
    let poly = |r: f64| {
        let n_max = r / b.min_singular + centre_norm;
        (1.0 + 2.0 * PI * n_max * dir_norm).powi(2)
    };
    let delta = 0.5;
    let mut total = 0.0;
    for m in 0..100_000 {
        let inner = r0 + m as f64 * delta;
        let outer = inner + delta;
        let shell = count(outer) * poly(outer) * (-PI * inner * inner).exp();
        total += shell;
        if shell <= 1e-40 * total.max(1e-300) || shell == 0.0 {
            break;
        }
    }
    total
}

fn choose_radius(
    b: &PeriodMatrix,
    centre_norm: f64,
    dir_norm: f64,
    envelope_log: f64,
    pol: &TruncationPolicy,
) -> Result<usize> {
    let target_log = pol.target_abs_error.ln();
    // Search a little past the cap so an overflow reports the radius needed.
    let search_cap = pol.max_radius.max(1) * 4 + 64;
    for r in 1..=search_cap {
        let bound_log = envelope_log + tail_bound(b, r as f64, centre_norm, dir_norm).ln();
        if bound_log <= target_log {
            if r > pol.max_radius {
                return Err(Error::TruncationOverflow { required: r, max_radius: pol.max_radius });
            }
            return Ok(r);
        }
    }
    Err(Error::TruncationOverflow { required: search_cap + 1, max_radius: pol.max_radius })
}

/// Visits every integer `n` with `|| U (n + c) ||^2 < r2`, `U` upper triangular.
fn enumerate_ellipsoid(
    upper: &DMatrix<f64>,
    centre: &[f64],
    r2: f64,
    level: usize,
    n: &mut [i64],
    visit: &mut dyn FnMut(&[i64]),
) {
    fn recurse(
        upper: &DMatrix<f64>,
        centre: &[f64],
        remaining: f64,
        i: usize,
        n: &mut [i64],
        visit: &mut dyn FnMut(&[i64]),
    ) {
        let g = n.len();
        // Contribution of already-fixed coordinates j > i to row i.
        let mut shift = 0.0;
        for j in (i + 1)..g {
            shift += upper[(i, j)] * (n[j] as f64 + centre[j]);
        }
        let d = upper[(i, i)];
        let half = remaining.max(0.0).sqrt();
        // d (n_i + c_i) + shift in (-half, half)
        let lo = ((-half - shift) / d - centre[i]).ceil() as i64;
        let hi = ((half - shift) / d - centre[i]).floor() as i64;
        for ni in lo..=hi {
            let row = d * (ni as f64 + centre[i]) + shift;
            let rest = remaining - row * row;
            if rest < 0.0 {
                continue;
            }
            n[i] = ni;
            if i == 0 {
                visit(n);
            } else {
                recurse(upper, centre, rest, i - 1, n, visit);
            }
        }
    }
    if level == 0 {
        visit(n);
        return;
    }
    recurse(upper, centre, r2, level - 1, n, visit);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn genus_one(b: Complex64) -> PeriodMatrix {
        PeriodMatrix::new(DMatrix::from_element(1, 1, b)).unwrap()
    }

    /// Brute-force `sum_{|n| <= 10}` for genus one.
    fn direct_sum_g1(z: Complex64, b: Complex64) -> Complex64 {
        (-10i64..=10)
            .map(|n| {
                let n = n as f64;
                (c(0.0, PI) * b * n * n + c(0.0, 2.0 * PI) * z * n).exp()
            })
            .sum()
    }

    #[test]
    fn genus_one_at_origin_matches_direct_sum() {
        let b = genus_one(c(0.0, 1.0));
        let value = theta(&[c(0.0, 0.0)], &b, &TruncationPolicy::default()).unwrap();
        let direct = direct_sum_g1(c(0.0, 0.0), c(0.0, 1.0));
        assert!((value - direct).norm() < 1e-14);
        assert!((value.re - 1.086434811213308).abs() < 1e-14);
        assert!(value.im.abs() < 1e-15);
    }

    #[test]
    fn integer_shift_and_evenness() {
        let b = genus_one(c(0.3, 0.8));
        let pol = TruncationPolicy::default();
        let z = c(0.21, -0.13);
        let a = theta(&[z], &b, &pol).unwrap();
        let shifted = theta(&[z + 1.0], &b, &pol).unwrap();
        let mirrored = theta(&[-z], &b, &pol).unwrap();
        assert!((a - shifted).norm() <= 10.0 * pol.target_abs_error * a.norm().max(1.0));
        assert!((a - mirrored).norm() <= 1e-12 * a.norm());
    }

    #[test]
    fn rejects_bad_period_matrices() {
        let not_pd = DMatrix::from_row_slice(2, 2, &[c(0.0, 1.0), c(0.0, 2.0), c(0.0, 2.0), c(0.0, 1.0)]);
        assert!(matches!(PeriodMatrix::new(not_pd), Err(Error::InvalidPeriodMatrix(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[c(0.0, 1.0), c(0.1, 0.0), c(0.2, 0.0), c(0.0, 1.0)]);
        assert!(matches!(PeriodMatrix::new(asym), Err(Error::InvalidPeriodMatrix(_))));
        assert!(PeriodMatrix::new(DMatrix::from_element(1, 1, c(1.0, -0.5))).is_err());
    }

    #[test]
    fn overflow_is_reported_not_truncated() {
        let b = genus_one(c(0.0, 0.01));
        let pol = TruncationPolicy::new(1e-14, 2).unwrap();
        match theta(&[c(0.0, 0.0)], &b, &pol) {
            Err(Error::TruncationOverflow { required, max_radius }) => {
                assert_eq!(max_radius, 2);
                assert!(required > 2);
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn policy_validation() {
        assert!(TruncationPolicy::new(0.0, 5).is_err());
        assert!(TruncationPolicy::new(1e-10, 0).is_err());
        assert!(TruncationPolicy::new(1e-10, 1).is_ok());
    }

    #[test]
    fn log_d2_zero_direction_and_symmetry() {
        let b = PeriodMatrix::from_rows(&[
            vec![c(0.1, 1.2), c(0.3, 0.2)],
            vec![c(0.3, 0.2), c(-0.2, 0.9)],
        ])
        .unwrap();
        let pol = TruncationPolicy::default();
        let z = [c(0.1, 0.05), c(-0.2, 0.1)];
        let d1 = [c(0.4, 0.0), c(0.7, 0.1)];
        let d2 = [c(-0.3, 0.2), c(0.5, 0.0)];
        let zero = [c(0.0, 0.0); 2];
        assert_eq!(theta_log_d2(&z, &b, &zero, &d2, &pol).unwrap(), c(0.0, 0.0));
        let a = theta_log_d2(&z, &b, &d1, &d2, &pol).unwrap();
        let s = theta_log_d2(&z, &b, &d2, &d1, &pol).unwrap();
        assert!((a - s).norm() <= 1e-13 * a.norm().max(1.0));
    }

    #[test]
    fn log_d2_matches_finite_differences_genus_one() {
        let b = genus_one(c(0.0, 1.0));
        let pol = TruncationPolicy::default();
        let z = c(0.3, 0.2);
        let one = [c(1.0, 0.0)];
        let analytic = theta_log_d2(&[z], &b, &one, &one, &pol).unwrap();
        let h = 1e-4;
        let lnt = |w: Complex64| theta(&[w], &b, &pol).unwrap().ln();
        let fd = (lnt(z + 2.0 * h) - 2.0 * lnt(z + h) + lnt(z)) / (h * h);
        // Second-order central version of the same derivative.
        let fd_central = (lnt(z + h) - 2.0 * lnt(z) + lnt(z - h)) / (h * h);
        assert!((analytic - fd_central).norm() <= 1e-6, "{analytic} vs {fd_central}");
        assert!((analytic - fd).norm() <= 1e-2);
    }

    #[test]
    fn divisor_is_detected() {
        // For B = i, theta vanishes at z = 1/2 + i/2.
        let b = genus_one(c(0.0, 1.0));
        let pol = TruncationPolicy::default();
        let one = [c(1.0, 0.0)];
        let err = theta_log_d2(&[c(0.5, 0.5)], &b, &one, &one, &pol).unwrap_err();
        assert!(matches!(err, Error::ThetaDivisor { .. }));
    }
}
