//! Rectangular (x, t) lattices and sampled fields.
//!
//! Grid storage is t-major: the value at `(ix, it)` lives at `it * nx + ix`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x0: f64,
    pub x1: f64,
    pub t0: f64,
    pub t1: f64,
    pub nx: usize,
    pub nt: usize,
}

impl GridSpec {
    pub fn new(x0: f64, x1: f64, t0: f64, t1: f64, nx: usize, nt: usize) -> Result<Self> {
        let spec = Self { x0, x1, t0, t1, nx, nt };
        spec.validate()?;
        Ok(spec)
    }

    /// Square grid `[lo, hi]^2` with `n` nodes per side.
    pub fn square(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(lo, hi, lo, hi, n, n)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x0, self.x1, self.t0, self.t1].iter().all(|v| v.is_finite());
        if !finite || self.x1 <= self.x0 || self.t1 <= self.t0 {
            return Err(Error::InvalidParameter(format!(
                "grid bounds must be finite with x1 > x0 and t1 > t0, got [{}, {}] x [{}, {}]",
                self.x0, self.x1, self.t0, self.t1
            )));
        }
        if self.nx < 3 || self.nt < 3 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 3 nodes per axis, got nx = {}, nt = {}",
                self.nx, self.nt
            )));
        }
        Ok(())
    }

    pub fn hx(&self) -> f64 {
        (self.x1 - self.x0) / (self.nx - 1) as f64
    }

    pub fn ht(&self) -> f64 {
        (self.t1 - self.t0) / (self.nt - 1) as f64
    }

    pub fn x(&self, ix: usize) -> f64 {
        if ix + 1 == self.nx {
            self.x1
        } else {
            self.x0 + ix as f64 * self.hx()
        }
    }

    pub fn t(&self, it: usize) -> f64 {
        if it + 1 == self.nt {
            self.t1
        } else {
            self.t0 + it as f64 * self.ht()
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.nt
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, it: usize) -> usize {
        it * self.nx + ix
    }

    /// Grid with every spacing halved (same bounds, `2n - 1` nodes per axis).
    pub fn refined(&self) -> Self {
        Self { nx: 2 * self.nx - 1, nt: 2 * self.nt - 1, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellFlag {
    Ok,
    Singular,
    Branch,
}

impl CellFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            CellFlag::Ok => "ok",
            CellFlag::Singular => "singular",
            CellFlag::Branch => "branch",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ok" => Some(CellFlag::Ok),
            "singular" => Some(CellFlag::Singular),
            "branch" => Some(CellFlag::Branch),
            _ => None,
        }
    }
}

/// Anything that can be evaluated pointwise as `e^u` over a background `e^v`.
pub trait FieldSource: Sync {
    fn exp_u(&self, x: f64, t: f64) -> Result<Complex64>;

    fn exp_v(&self, x: f64, t: f64) -> Result<Complex64>;

    /// The tau function `det(1 - Omega C)` if the source has one.
    fn tau(&self, _x: f64, _t: f64) -> Option<Complex64> {
        None
    }
}

impl<F> FieldSource for F
where
    F: Fn(f64, f64) -> Complex64 + Sync,
{
    fn exp_u(&self, x: f64, t: f64) -> Result<Complex64> {
        Ok(self(x, t))
    }

    fn exp_v(&self, _x: f64, _t: f64) -> Result<Complex64> {
        Ok(Complex64::new(1.0, 0.0))
    }
}

/// Sampled complex field `u` together with `e^u` on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub spec: GridSpec,
    pub u: Vec<Complex64>,
    pub exp_u: Vec<Complex64>,
    pub flags: Vec<CellFlag>,
}

impl FieldGrid {
    /// Samples `source` on `spec`. Points where evaluation fails are flagged
    /// singular; the logarithm is tracked continuously along rows.
    pub fn sample<S: FieldSource + ?Sized>(source: &S, spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let values: Vec<Option<Complex64>> = (0..spec.len())
            .into_par_iter()
            .map(|idx| {
                let (ix, it) = (idx % spec.nx, idx / spec.nx);
                source
                    .exp_u(spec.x(ix), spec.t(it))
                    .ok()
                    .filter(|w| w.re.is_finite() && w.im.is_finite())
            })
            .collect();
        Ok(Self::from_exp_values(spec, values))
    }

    /// Builds the grid from `e^u` samples (`None` marks a singular node).
    pub fn from_exp_values(spec: GridSpec, values: Vec<Option<Complex64>>) -> Self {
        assert_eq!(values.len(), spec.len());
        let nan = Complex64::new(f64::NAN, f64::NAN);
        let mut flags: Vec<CellFlag> = values
            .iter()
            .map(|v| match v {
                Some(w) if w.norm() > 0.0 => CellFlag::Ok,
                _ => CellFlag::Singular,
            })
            .collect();
        let exp_u: Vec<Complex64> = values.iter().map(|v| v.unwrap_or(nan)).collect();

        let rows: Vec<(Vec<Complex64>, Vec<bool>)> = (0..spec.nt)
            .into_par_iter()
            .map(|it| {
                let row = &exp_u[it * spec.nx..(it + 1) * spec.nx];
                let ok: Vec<bool> = flags[it * spec.nx..(it + 1) * spec.nx]
                    .iter()
                    .map(|f| *f == CellFlag::Ok)
                    .collect();
                track_log_row(row, &ok)
            })
            .collect();

        let mut u = vec![nan; spec.len()];
        for (it, (row_u, row_branch)) in rows.into_iter().enumerate() {
            for ix in 0..spec.nx {
                let idx = spec.index(ix, it);
                u[idx] = row_u[ix];
                if row_branch[ix] && flags[idx] == CellFlag::Ok {
                    flags[idx] = CellFlag::Branch;
                }
            }
        }

        // Stitch rows so that each row continues the previous one.
        for it in 1..spec.nt {
            let shared = (0..spec.nx).find(|&ix| {
                flags[spec.index(ix, it)] == CellFlag::Ok
                    && flags[spec.index(ix, it - 1)] == CellFlag::Ok
            });
            if let Some(ix) = shared {
                let diff = u[spec.index(ix, it - 1)].im - u[spec.index(ix, it)].im;
                let turns = (diff / (2.0 * PI)).round();
                if turns != 0.0 {
                    for jx in 0..spec.nx {
                        u[spec.index(jx, it)].im += 2.0 * PI * turns;
                    }
                }
            }
        }

        Self { spec, u, exp_u, flags }
    }

    /// Builds a grid from an already-continuous `u` (e.g. re-ingested CSV).
    pub fn from_u(spec: GridSpec, u: Vec<Complex64>, flags: Vec<CellFlag>) -> Self {
        let exp_u = u.iter().map(|z| z.exp()).collect();
        Self { spec, u, exp_u, flags }
    }

    pub fn u_at(&self, ix: usize, it: usize) -> Complex64 {
        self.u[self.spec.index(ix, it)]
    }

    pub fn flag_at(&self, ix: usize, it: usize) -> CellFlag {
        self.flags[self.spec.index(ix, it)]
    }

    pub fn count_flag(&self, flag: CellFlag) -> usize {
        self.flags.iter().filter(|f| **f == flag).count()
    }
}

/// Largest phase step between neighbours that is still unambiguous.
const MAX_PHASE_STEP: f64 = 0.5 * PI;

fn track_log_row(row: &[Complex64], ok: &[bool]) -> (Vec<Complex64>, Vec<bool>) {
    let nan = Complex64::new(f64::NAN, f64::NAN);
    let mut u = vec![nan; row.len()];
    let mut branch = vec![false; row.len()];
    let mut prev: Option<(Complex64, Complex64)> = None;
    for (ix, w) in row.iter().enumerate() {
        if !ok[ix] {
            continue;
        }
        let principal = w.ln();
        let value = match prev {
            None => principal,
            Some((prev_u, prev_w)) => {
                let step = (w / prev_w).arg();
                if step.abs() > MAX_PHASE_STEP {
                    branch[ix] = true;
                }
                let turns = ((prev_u.im - principal.im) / (2.0 * PI)).round();
                Complex64::new(principal.re, principal.im + 2.0 * PI * turns)
            }
        };
        u[ix] = value;
        prev = Some((value, *w));
    }
    (u, branch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spec_rejects_degenerate_bounds() {
        assert!(GridSpec::new(1.0, 1.0, 0.0, 1.0, 5, 5).is_err());
        assert!(GridSpec::new(0.0, 1.0, 0.0, 1.0, 2, 5).is_err());
        assert!(GridSpec::new(0.0, f64::NAN, 0.0, 1.0, 5, 5).is_err());
        let g = GridSpec::square(-5.0, 5.0, 41).unwrap();
        assert_eq!(g.hx(), 0.25);
        assert_eq!(g.x(40), 5.0);
        assert_eq!(g.refined().nx, 81);
    }

    #[test]
    fn log_tracking_follows_winding_phase() {
        // e^u = exp(i * 3x) winds several times over [0, 5].
        let spec = GridSpec::new(0.0, 5.0, 0.0, 1.0, 101, 3).unwrap();
        let src = |x: f64, _t: f64| Complex64::new(0.0, 3.0 * x).exp();
        let field = FieldGrid::sample(&src, spec).unwrap();
        for it in 0..3 {
            for ix in 0..101 {
                let expected = 3.0 * spec.x(ix);
                assert!((field.u_at(ix, it).im - expected).abs() < 1e-12);
            }
        }
        assert_eq!(field.count_flag(CellFlag::Branch), 0);
    }

    #[test]
    fn rows_are_stitched_across_t() {
        let spec = GridSpec::new(0.0, 1.0, 0.0, 6.0, 5, 121).unwrap();
        let src = |_x: f64, t: f64| Complex64::new(0.0, 2.0 * t).exp();
        let field = FieldGrid::sample(&src, spec).unwrap();
        let last = field.u_at(4, 120);
        assert!((last.im - 12.0).abs() < 1e-12);
    }

    #[test]
    fn coarse_winding_is_flagged_as_branch() {
        let spec = GridSpec::new(0.0, 10.0, 0.0, 1.0, 6, 3).unwrap();
        let src = |x: f64, _t: f64| Complex64::new(0.0, 1.4 * x).exp();
        let field = FieldGrid::sample(&src, spec).unwrap();
        assert!(field.count_flag(CellFlag::Branch) > 0);
    }
}
