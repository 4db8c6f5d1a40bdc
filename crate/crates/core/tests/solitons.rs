use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tzitzeica_core::asymptotics::{track_trajectory, velocity_lightcone, TrackWindow};
use tzitzeica_core::dressing::{exp_u, DressedField, DressingOptions, SolitonConfig};
use tzitzeica_core::grid::{CellFlag, GridSpec};
use tzitzeica_core::spectral_curve::{baker_vacuum, pairing, BackgroundProvider, SpectralPoint, VacuumProvider};
use tzitzeica_core::verify::{goursat_cross_check, sample_flagged, GoursatOptions};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn real(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|x| c(*x, 0.0)).collect()
}

#[test]
fn pairing_is_constant_in_x_and_t() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let p = SpectralPoint::new(c(rng.gen_range(0.3..2.0), rng.gen_range(-1.5..1.5))).unwrap();
        let expected = VacuumProvider.pairing_diag_constant(p);
        for ix in 0..20 {
            for it in 0..20 {
                let (x, t) = (-3.0 + 0.3 * ix as f64, -3.0 + 0.3 * it as f64);
                let v = pairing(&baker_vacuum(x, t, p), &baker_vacuum(x, t, p.sigma()), p.lambda());
                assert!((v - expected).norm() <= 1e-12 * expected.norm(), "{v} vs {expected}");
            }
        }
    }
}

#[test]
fn gauge_rescaling_leaves_field_unchanged() {
    let cfg = SolitonConfig::canonical(real(&[1.0, 2.2]), vec![c(1.0, 0.0), c(0.5, 0.2)]).unwrap();
    let base = DressingOptions::calibrated(&VacuumProvider).unwrap();
    let grid = GridSpec::square(-3.0, 3.0, 13).unwrap();
    let field = sample_flagged(&DressedField::with_options(&VacuumProvider, cfg.clone(), base), grid).unwrap();
    for s in [c(0.5, 0.0), c(-3.0, 0.0), c(0.0, 2.0)] {
        let opts = DressingOptions { kernel_scale: base.kernel_scale * s, ..base };
        let scaled = cfg.with_scaled_constants(s.inv());
        for it in 0..grid.nt {
            for ix in 0..grid.nx {
                if field.flag_at(ix, it) != CellFlag::Ok {
                    continue;
                }
                let a = field.exp_u[grid.index(ix, it)];
                let b = exp_u(grid.x(ix), grid.t(it), &scaled, &VacuumProvider, &opts).unwrap();
                assert!((a - b).norm() <= 1e-12 * a.norm(), "s = {s}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn two_soliton_slopes_match_formula() {
    let cfg = SolitonConfig::canonical(real(&[1.0, 2.2]), real(&[1.0, 1.0])).unwrap();
    let field = DressedField::new(&VacuumProvider, cfg.clone()).unwrap();
    let ts: Vec<f64> = (0..41).map(|i| 30.0 + 0.5 * i as f64).collect();
    // Windows follow x = -0.8 t, between the two trajectories.
    let left = TrackWindow { x_min: -40.0, x_max: 0.0, drift: -0.8, nx: 1601, separation: 3.0 };
    let right = TrackWindow { x_min: 0.0, x_max: 40.0, ..left };
    for (j, window) in [(0, left), (1, right)] {
        let v = velocity_lightcone(&cfg, &VacuumProvider, j).unwrap();
        let r = track_trajectory(&field, &ts, window).unwrap();
        assert!((r.velocity / v - 1.0).abs() < 0.02, "soliton {j}: v = {v}, tracked {}", r.velocity);
    }
}

#[test]
fn corrupted_goursat_boundary_does_not_converge() {
    let cfg = SolitonConfig::canonical(real(&[1.0]), real(&[1.0])).unwrap();
    let field = DressedField::new(&VacuumProvider, cfg).unwrap();
    let grid = GridSpec::new(0.5, 1.5, 0.0, 1.0, 21, 21).unwrap();
    let clean = goursat_cross_check(&field, grid, 3, GoursatOptions::default()).unwrap();
    let opts = GoursatOptions { boundary_perturbation: Some((0.5, c(0.1, 0.0))) };
    let bad = goursat_cross_check(&field, grid, 3, opts).unwrap();
    assert!(clean.finest_deviation() < 1e-4);
    assert!(bad.finest_deviation() > 1e-2, "{bad:?}");
    let shrink = bad.deviations[0] / bad.finest_deviation();
    assert!(shrink < 2.0, "{bad:?}");
}
