//! Finite-gap background `e^v = c - 2 d_x d_t ln theta(U x + V t + z_D)`.
//!
//! Genus zero reduces to the constant `e^v = c`. All theta data are supplied
//! by the caller; nothing here derives them from a curve.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{FieldGrid, FieldSource, GridSpec};
use crate::theta::{theta_log_d2, PeriodMatrix, TruncationPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundData {
    pub c: Complex64,
    pub u_freq: Vec<Complex64>,
    pub v_freq: Vec<Complex64>,
    pub z_d: Vec<Complex64>,
    pub prym: Option<PeriodMatrix>,
    pub truncation: TruncationPolicy,
}

impl BackgroundData {
    /// `u = 0`, i.e. `e^v = 1`.
    pub fn vacuum() -> Self {
        Self::constant(Complex64::new(1.0, 0.0))
    }

    pub fn constant(c: Complex64) -> Self {
        Self {
            c,
            u_freq: Vec::new(),
            v_freq: Vec::new(),
            z_d: Vec::new(),
            prym: None,
            truncation: TruncationPolicy::default(),
        }
    }

    pub fn finite_gap(
        c: Complex64,
        u_freq: Vec<Complex64>,
        v_freq: Vec<Complex64>,
        z_d: Vec<Complex64>,
        prym: PeriodMatrix,
    ) -> Result<Self> {
        let data = Self { c, u_freq, v_freq, z_d, prym: Some(prym), truncation: TruncationPolicy::default() };
        data.validate()?;
        Ok(data)
    }

    pub fn genus(&self) -> usize {
        self.prym.as_ref().map_or(0, PeriodMatrix::genus)
    }

    pub fn is_vacuum(&self) -> bool {
        self.genus() == 0 && self.c == Complex64::new(1.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.genus();
        for (name, v) in [("U", &self.u_freq), ("V", &self.v_freq), ("z_D", &self.z_d)] {
            if v.len() != g {
                return Err(Error::Dimension(format!("{name} has length {}, genus is {g}", v.len())));
            }
            if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} has non-finite entries")));
            }
        }
        if !(self.c.re.is_finite() && self.c.im.is_finite()) {
            return Err(Error::InvalidParameter("c is not finite".into()));
        }
        Ok(())
    }

    /// `U x + V t + z_D`.
    pub fn phase(&self, x: f64, t: f64) -> Vec<Complex64> {
        self.u_freq
            .iter()
            .zip(&self.v_freq)
            .zip(&self.z_d)
            .map(|((u, v), z)| u * x + v * t + z)
            .collect()
    }
}

pub fn exp_v(data: &BackgroundData, x: f64, t: f64) -> Result<Complex64> {
    match &data.prym {
        None => Ok(data.c),
        Some(prym) => {
            let z = data.phase(x, t);
            let d2 = theta_log_d2(&z, prym, &data.u_freq, &data.v_freq, &data.truncation)?;
            Ok(data.c - 2.0 * d2)
        }
    }
}

/// Background alone, viewed as a field (`e^u = e^v`).
#[derive(Debug, Clone)]
pub struct BackgroundField<'a> {
    pub data: &'a BackgroundData,
}

impl FieldSource for BackgroundField<'_> {
    fn exp_u(&self, x: f64, t: f64) -> Result<Complex64> {
        exp_v(self.data, x, t)
    }

    fn exp_v(&self, x: f64, t: f64) -> Result<Complex64> {
        exp_v(self.data, x, t)
    }
}

/// Samples `v` on a grid. Theta-divisor hits are flagged, not fatal.
pub fn v_field(data: &BackgroundData, grid: GridSpec) -> Result<FieldGrid> {
    data.validate()?;
    FieldGrid::sample(&BackgroundField { data }, grid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealityCheck {
    /// `max |Im e^v| / |e^v|` over sampled points.
    pub max_rel_imag: f64,
    pub min_real: f64,
    pub real_positive: bool,
}

/// Checks that `e^v` is real and positive on the grid within `tol`. Only
/// meaningful for data asserted to come from a real nonsingular background.
pub fn check_real_positive(data: &BackgroundData, grid: GridSpec, tol: f64) -> Result<RealityCheck> {
    grid.validate()?;
    let mut max_rel_imag: f64 = 0.0;
    let mut min_real = f64::INFINITY;
    for it in 0..grid.nt {
        for ix in 0..grid.nx {
            let w = exp_v(data, grid.x(ix), grid.t(it))?;
            max_rel_imag = max_rel_imag.max(w.im.abs() / w.norm().max(f64::MIN_POSITIVE));
            min_real = min_real.min(w.re);
        }
    }
    Ok(RealityCheck { max_rel_imag, min_real, real_positive: max_rel_imag <= tol && min_real > 0.0 })
}
