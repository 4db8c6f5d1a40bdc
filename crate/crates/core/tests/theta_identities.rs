use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use tzitzeica_core::theta::{theta, theta_log_d2, PeriodMatrix, TruncationPolicy};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `X + i (A A^T + I/2)` with `X` symmetric.
fn period_matrix(g: usize, re: &[f64], a: &[f64]) -> PeriodMatrix {
    let a = DMatrix::from_row_slice(g, g, &a[..g * g]);
    let y = &a * a.transpose() * 0.3 + DMatrix::identity(g, g) * 0.5;
    let mut b = DMatrix::from_element(g, g, c(0.0, 0.0));
    for i in 0..g {
        for j in 0..g {
            let (lo, hi) = (i.min(j), i.max(j));
            b[(i, j)] = c(re[lo * g + hi], y[(i, j)]);
        }
    }
    PeriodMatrix::new(b).unwrap()
}

fn arb_case() -> impl Strategy<Value = (PeriodMatrix, Vec<Complex64>, usize)> {
    (1usize..=3)
        .prop_flat_map(|g| {
            (
                Just(g),
                prop::collection::vec(-0.5f64..0.5, 9),
                prop::collection::vec(-1.0f64..1.0, 9),
                prop::collection::vec((-0.5f64..0.5, -0.3f64..0.3), g),
                0..g,
            )
        })
        .prop_map(|(g, re, a, z, j)| {
            (period_matrix(g, &re, &a), z.into_iter().map(|(x, y)| c(x, y)).collect(), j)
        })
}

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integer_period((b, z, j) in arb_case()) {
        let pol = TruncationPolicy::default();
        let mut shifted = z.clone();
        shifted[j] += 1.0;
        let a = theta(&z, &b, &pol).unwrap();
        let s = theta(&shifted, &b, &pol).unwrap();
        prop_assert!(rel(a, s) <= 1e-8, "{a} vs {s}");
    }

    #[test]
    fn lattice_period((b, z, j) in arb_case()) {
        let pol = TruncationPolicy::default();
        let g = b.genus();
        let shifted: Vec<Complex64> = (0..g).map(|i| z[i] + b.entry(i, j)).collect();
        let a = theta(&z, &b, &pol).unwrap();
        let s = theta(&shifted, &b, &pol).unwrap();
        let factor = (Complex64::new(0.0, -PI) * b.entry(j, j) - Complex64::new(0.0, 2.0 * PI) * z[j]).exp();
        prop_assert!(rel(s, factor * a) <= 1e-8, "{s} vs {}", factor * a);
    }

    #[test]
    fn even((b, z, _j) in arb_case()) {
        let pol = TruncationPolicy::default();
        let neg: Vec<Complex64> = z.iter().map(|w| -w).collect();
        let a = theta(&z, &b, &pol).unwrap();
        let m = theta(&neg, &b, &pol).unwrap();
        prop_assert!(rel(a, m) <= 1e-8);
    }

    #[test]
    fn log_d2_against_finite_differences((b, z, j) in arb_case()) {
        let pol = TruncationPolicy::default();
        let g = b.genus();
        let d1: Vec<Complex64> = (0..g).map(|i| c(if i == j { 1.0 } else { 0.3 }, 0.0)).collect();
        let d2: Vec<Complex64> = (0..g).map(|i| c(0.5 - 0.2 * i as f64, 0.1)).collect();
        let Ok(analytic) = theta_log_d2(&z, &b, &d1, &d2, &pol) else {
            // Too close to the theta divisor for a meaningful comparison.
            return Ok(());
        };
        let lnt = |s: f64, r: f64| {
            let w: Vec<Complex64> = (0..g).map(|i| z[i] + d1[i] * s + d2[i] * r).collect();
            theta(&w, &b, &pol).unwrap().ln()
        };
        let mixed = |h: f64| (lnt(h, h) - lnt(h, -h) - lnt(-h, h) + lnt(-h, -h)) / (4.0 * h * h);
        let fd = (4.0 * mixed(5e-4) - mixed(1e-3)) / 3.0;
        prop_assert!((analytic - fd).norm() <= 1e-6 * analytic.norm().max(1.0), "{analytic} vs {fd}");
    }
}
