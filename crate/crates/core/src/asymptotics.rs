//! Soliton kinematics: light-cone slopes, lab-frame velocities and empirical
//! trajectory tracking.
//!
//! The free trajectory of soliton `j` is the line
//! `dk_inf x + dk_0 t = 0`, with `dk_inf = kappa_inf(sigma Lambda*) - kappa_inf(sigma Lambda)`
//! and `dk_0` likewise. [`velocity_lightcone`] returns `v = -dk_inf / dk_0`,
//! which is `dt/dx` along that line; the tracker reports both `dx/dt` and its
//! reciprocal so the two can be compared directly.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::dressing::SolitonConfig;
use crate::error::{Error, Result};
use crate::grid::FieldSource;
use crate::spectral_curve::BackgroundProvider;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rapidity {
    pub epsilon: f64,
}

impl Rapidity {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() {
            return Err(Error::InvalidParameter("rapidity must be finite".into()));
        }
        Ok(Self { epsilon })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolitonKinematics {
    pub index: usize,
    /// `kappa_inf(sigma Lambda*) - kappa_inf(sigma Lambda)`.
    pub d_kappa_inf: f64,
    /// `kappa_0(sigma Lambda*) - kappa_0(sigma Lambda)`.
    pub d_kappa_0: f64,
    pub v: f64,
    pub lab: Vec<LabVelocity>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabVelocity {
    pub epsilon: f64,
    pub velocity: f64,
}

/// `(dk_inf, dk_0)` for soliton `j`.
pub fn growth_exponents<B: BackgroundProvider + ?Sized>(cfg: &SolitonConfig, bg: &B, j: usize) -> Result<(f64, f64)> {
    let pts = cfg
        .points()
        .get(j)
        .ok_or_else(|| Error::Dimension(format!("soliton index {j} out of range for N = {}", cfg.len())))?;
    let (star, plain) = (bg.sigma(pts.star_point), bg.sigma(pts.lambda_point));
    Ok((bg.kappa_inf(star) - bg.kappa_inf(plain), bg.kappa_0(star) - bg.kappa_0(plain)))
}

/// `v = -dk_inf / dk_0`.
pub fn velocity_from_exponents(d_kappa_inf: f64, d_kappa_0: f64) -> Result<f64> {
    let scale = d_kappa_inf.abs().max(d_kappa_0.abs());
    if scale == 0.0 || d_kappa_0.abs() <= 1e-14 * scale {
        return Err(Error::DegenerateTrajectory);
    }
    Ok(-d_kappa_inf / d_kappa_0)
}

pub fn velocity_lightcone<B: BackgroundProvider + ?Sized>(cfg: &SolitonConfig, bg: &B, j: usize) -> Result<f64> {
    let (a, b) = growth_exponents(cfg, bg, j)?;
    velocity_from_exponents(a, b)
}

/// `V = (e^eps v + e^-eps) / (e^-eps - e^eps v)`.
pub fn velocity_lab(v: f64, eps: Rapidity) -> Result<f64> {
    let (ep, em) = (eps.epsilon.exp(), (-eps.epsilon).exp());
    let den = em - ep * v;
    if den.abs() <= 1e-14 * em.max((ep * v).abs()) {
        return Err(Error::LightSpeedDegenerate);
    }
    Ok((ep * v + em) / den)
}

/// Image of a light-cone slope under a boost of rapidity `eps`, so that
/// `velocity_lab(v, a + b) == velocity_lab(boost_lightcone(v, a), b)`.
pub fn boost_lightcone(v: f64, eps: Rapidity) -> f64 {
    (2.0 * eps.epsilon).exp() * v
}

pub fn kinematics<B: BackgroundProvider + ?Sized>(
    cfg: &SolitonConfig,
    bg: &B,
    rapidities: &[Rapidity],
) -> Result<Vec<SolitonKinematics>> {
    (0..cfg.len())
        .map(|j| {
            let (a, b) = growth_exponents(cfg, bg, j)?;
            let v = velocity_from_exponents(a, b)?;
            let lab = rapidities
                .iter()
                .map(|r| Ok(LabVelocity { epsilon: r.epsilon, velocity: velocity_lab(v, *r)? }))
                .collect::<Result<Vec<_>>>()?;
            Ok(SolitonKinematics { index: j, d_kappa_inf: a, d_kappa_0: b, v, lab })
        })
        .collect()
}

/// Search window `x in [x_min + drift t, x_max + drift t]` sampled at `nx` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackWindow {
    pub x_min: f64,
    pub x_max: f64,
    pub drift: f64,
    pub nx: usize,
    /// Peaks farther apart than this count as distinct solitons.
    pub separation: f64,
}

impl TrackWindow {
    pub fn fixed(x_min: f64, x_max: f64, nx: usize) -> Self {
        Self { x_min, x_max, drift: 0.0, nx, separation: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackResult {
    /// `(t, x_peak)` per slice.
    pub samples: Vec<(f64, f64)>,
    pub slope_dx_dt: f64,
    /// `dt/dx`, comparable with [`velocity_lightcone`].
    pub velocity: f64,
    pub intercept: f64,
    pub rms_residual: f64,
}

/// Second local maximum above this fraction of the top peak, farther than the
/// window's separation, makes a slice ambiguous.
const AMBIGUITY_RATIO: f64 = 0.5;

/// Fits the peak of `|e^u - e^v|` over the given time slices with a straight line.
pub fn track_trajectory<S: FieldSource + ?Sized>(
    source: &S,
    t_values: &[f64],
    window: TrackWindow,
) -> Result<TrackResult> {
    if t_values.len() < 2 {
        return Err(Error::InvalidParameter("need at least two time slices".into()));
    }
    if window.nx < 5 || !(window.x_max > window.x_min) {
        return Err(Error::InvalidParameter("tracking window needs x_max > x_min and nx >= 5".into()));
    }
    let samples = t_values
        .par_iter()
        .map(|&t| locate_peak(source, t, &window).map(|x| (t, x)))
        .collect::<Result<Vec<_>>>()?;

    let n = samples.len() as f64;
    let mean_t = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_x = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let stt: f64 = samples.iter().map(|s| (s.0 - mean_t).powi(2)).sum();
    let stx: f64 = samples.iter().map(|s| (s.0 - mean_t) * (s.1 - mean_x)).sum();
    if stt == 0.0 {
        return Err(Error::InvalidParameter("time slices must not all coincide".into()));
    }
    let slope = stx / stt;
    let intercept = mean_x - slope * mean_t;
    let rms = (samples.iter().map(|s| (s.1 - intercept - slope * s.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(TrackResult { samples, slope_dx_dt: slope, velocity: 1.0 / slope, intercept, rms_residual: rms })
}

fn locate_peak<S: FieldSource + ?Sized>(source: &S, t: f64, w: &TrackWindow) -> Result<f64> {
    let lo = w.x_min + w.drift * t;
    let h = (w.x_max - w.x_min) / (w.nx - 1) as f64;
    let xs: Vec<f64> = (0..w.nx).map(|i| lo + i as f64 * h).collect();
    // Points where the solution itself cannot be evaluated are skipped.
    let amp: Vec<f64> = xs
        .iter()
        .map(|&x| match (source.exp_u(x, t), source.exp_v(x, t)) {
            (Ok(a), Ok(b)) => {
                let d = (a - b).norm();
                if d.is_finite() { d } else { f64::NAN }
            }
            _ => f64::NAN,
        })
        .collect();
    let (top, top_val) = amp
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_finite())
        .fold((usize::MAX, 0.0), |acc, (i, a)| if *a > acc.1 { (i, *a) } else { acc });
    let reference = source.exp_v(xs[w.nx / 2], t).map(|v| v.norm()).unwrap_or(1.0).max(1.0);
    if top == usize::MAX || top_val <= 1e-8 * reference {
        return Err(Error::TrackingFailed(format!("no peak at t = {t}")));
    }
    if top == 0 || top == w.nx - 1 {
        return Err(Error::TrackingFailed(format!("peak on the window edge at t = {t}")));
    }
    for i in 1..w.nx - 1 {
        let is_local = amp[i].is_finite() && amp[i] >= amp[i - 1].min(f64::MAX) && amp[i] >= amp[i + 1].min(f64::MAX);
        if i != top && is_local && amp[i] >= AMBIGUITY_RATIO * top_val && (xs[i] - xs[top]).abs() > w.separation {
            return Err(Error::TrackingFailed(format!(
                "several peaks at t = {t}: x = {} and x = {}",
                xs[top], xs[i]
            )));
        }
    }
    let (a, b, c) = (amp[top - 1], amp[top], amp[top + 1]);
    let den = a - 2.0 * b + c;
    let shift = if a.is_finite() && c.is_finite() && den < 0.0 { 0.5 * (a - c) / den } else { 0.0 };
    Ok(xs[top] + shift.clamp(-0.5, 0.5) * h)
}

/// Convenience for reporting: `|e^u - e^v|` at a point.
pub fn dressing_amplitude<S: FieldSource + ?Sized>(source: &S, x: f64, t: f64) -> Result<f64> {
    let d: Complex64 = source.exp_u(x, t)? - source.exp_v(x, t)?;
    Ok(d.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dressing::DressedField;
    use crate::spectral_curve::VacuumProvider;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn lab_velocity_examples() {
        let zero = Rapidity::new(0.0).unwrap();
        assert_eq!(velocity_lab(0.0, zero).unwrap(), 1.0);
        assert_eq!(velocity_lab(-1.0, zero).unwrap(), 0.0);
        assert!(matches!(velocity_lab(1.0, zero), Err(Error::LightSpeedDegenerate)));
        assert!(Rapidity::new(f64::NAN).is_err());
    }

    #[test]
    fn boosts_compose() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let v = -rng.gen_range(0.01..10.0);
            let a = Rapidity::new(rng.gen_range(-2.0..2.0)).unwrap();
            let b = Rapidity::new(rng.gen_range(-2.0..2.0)).unwrap();
            let direct = velocity_lab(v, Rapidity::new(a.epsilon + b.epsilon).unwrap()).unwrap();
            let composed = velocity_lab(boost_lightcone(v, a), b).unwrap();
            assert!((direct - composed).abs() <= 1e-12 * direct.abs().max(1.0));
            // Relativistic subtraction of tanh(eps) from the rest-frame velocity.
            let v0 = velocity_lab(v, Rapidity::new(0.0).unwrap()).unwrap();
            let th = a.epsilon.tanh();
            let added = (v0 - th) / (1.0 - v0 * th);
            assert!((velocity_lab(v, a).unwrap() - added).abs() <= 1e-12);
        }
    }

    #[test]
    fn negative_slopes_are_subluminal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let v = -rng.gen_range(0.01..10.0);
            let e = Rapidity::new(rng.gen_range(-3.0..3.0)).unwrap();
            assert!(velocity_lab(v, e).unwrap().abs() < 1.0);
        }
    }

    #[test]
    fn canonical_velocity_is_minus_lambda_two_thirds() {
        for lam in [1.0, 2.2, 0.3] {
            let cfg = SolitonConfig::canonical(vec![c(lam)], vec![c(1.0)]).unwrap();
            let v = velocity_lightcone(&cfg, &VacuumProvider, 0).unwrap();
            let (a, b) = growth_exponents(&cfg, &VacuumProvider, 0).unwrap();
            assert!((a < 0.0) == (b < 0.0));
            assert!((v + lam.powf(2.0 / 3.0)).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        assert!(matches!(velocity_from_exponents(0.0, 0.0), Err(Error::DegenerateTrajectory)));
        assert!(matches!(velocity_from_exponents(1.0, 0.0), Err(Error::DegenerateTrajectory)));
        let cfg = SolitonConfig::canonical(vec![c(1.0)], vec![c(1.0)]).unwrap();
        assert!(velocity_lightcone(&cfg, &VacuumProvider, 3).is_err());
    }

    #[test]
    fn background_only_fails_to_track() {
        let src = |_x: f64, _t: f64| c(1.0);
        let ts: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let err = track_trajectory(&src, &ts, TrackWindow::fixed(-5.0, 5.0, 101));
        assert!(matches!(err, Err(Error::TrackingFailed(_))));
    }

    #[test]
    fn two_separated_bumps_are_ambiguous() {
        let src = |x: f64, _t: f64| c(1.0 + (-(x - 3.0) * (x - 3.0)).exp() + (-(x + 3.0) * (x + 3.0)).exp());
        let err = track_trajectory(&src, &[0.0, 1.0], TrackWindow::fixed(-8.0, 8.0, 161));
        assert!(matches!(err, Err(Error::TrackingFailed(_))));
    }

    #[test]
    fn tracks_moving_gaussian() {
        let src = |x: f64, t: f64| c(1.0 + (-(x + 0.4 * t - 1.0).powi(2)).exp());
        let ts: Vec<f64> = (0..21).map(|i| i as f64 * 0.5).collect();
        let r = track_trajectory(&src, &ts, TrackWindow::fixed(-10.0, 10.0, 401)).unwrap();
        assert!((r.slope_dx_dt + 0.4).abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn one_soliton_slope_is_reciprocal_of_v() {
        let lam = 2.2;
        let cfg = SolitonConfig::canonical(vec![c(lam)], vec![c(1.0)]).unwrap();
        let field = DressedField::new(&VacuumProvider, cfg.clone()).unwrap();
        let v = velocity_lightcone(&cfg, &VacuumProvider, 0).unwrap();
        let ts: Vec<f64> = (0..21).map(|i| 15.0 + i as f64 * 0.5).collect();
        let r = track_trajectory(&field, &ts, TrackWindow::fixed(-40.0, 40.0, 1601)).unwrap();
        assert!((r.velocity / v - 1.0).abs() < 0.02, "v = {v}, tracked dt/dx = {}", r.velocity);
    }
}
