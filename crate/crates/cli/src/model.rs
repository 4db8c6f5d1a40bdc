//! The field a run configuration describes.

use num_complex::Complex64;
use tzitzeica_core::background::{self, BackgroundData};
use tzitzeica_core::dressing::{DressedField, SolitonConfig};
use tzitzeica_core::grid::{FieldSource, GridSpec};
use tzitzeica_core::spectral_curve::VacuumProvider;
use tzitzeica_core::Result;

use crate::config::RunConfig;
use crate::error::CliError;

static VACUUM: VacuumProvider = VacuumProvider;

pub enum Model {
    /// Solitons dressed onto the vacuum (`N = 0` included).
    Vacuum(DressedField<'static, VacuumProvider>),
    /// A finite-gap background without solitons.
    Theta(BackgroundData),
}

impl Model {
    pub fn from_config(cfg: &RunConfig) -> std::result::Result<Self, CliError> {
        let data = cfg.background_data()?;
        let solitons = cfg.soliton_config()?;
        if data.is_vacuum() {
            return Ok(Model::Vacuum(DressedField::new(&VACUUM, solitons)?));
        }
        if !solitons.is_empty() {
            return Err(CliError::Config(
                "solitons on a theta background are not supported; only the vacuum provider is available".into(),
            ));
        }
        Ok(Model::Theta(data))
    }

    pub fn solitons(&self) -> Option<&SolitonConfig> {
        match self {
            Model::Vacuum(f) => Some(&f.cfg),
            Model::Theta(_) => None,
        }
    }
}

impl FieldSource for Model {
    fn exp_u(&self, x: f64, t: f64) -> Result<Complex64> {
        match self {
            Model::Vacuum(f) => f.exp_u(x, t),
            Model::Theta(d) => background::exp_v(d, x, t),
        }
    }

    fn exp_v(&self, x: f64, t: f64) -> Result<Complex64> {
        match self {
            Model::Vacuum(f) => f.exp_v(x, t),
            Model::Theta(d) => background::exp_v(d, x, t),
        }
    }

    fn tau(&self, x: f64, t: f64) -> Option<Complex64> {
        match self {
            Model::Vacuum(f) => f.tau(x, t),
            Model::Theta(_) => None,
        }
    }
}

/// Test hook: multiplies `e^u` by `1 + a g(x, t)` with a narrow Gaussian `g`
/// centred on the grid.
pub struct Corrupted<'a, S: FieldSource + ?Sized> {
    pub inner: &'a S,
    pub centre: (f64, f64),
    pub amplitude: f64,
    pub width: f64,
}

impl<'a, S: FieldSource + ?Sized> Corrupted<'a, S> {
    pub fn on_grid(inner: &'a S, grid: &GridSpec) -> Self {
        Self {
            inner,
            centre: (0.5 * (grid.x0 + grid.x1), 0.5 * (grid.t0 + grid.t1)),
            amplitude: 1e-3,
            width: 0.25 * (grid.x1 - grid.x0).min(grid.t1 - grid.t0) / 4.0,
        }
    }

    fn factor(&self, x: f64, t: f64) -> f64 {
        let (dx, dt) = (x - self.centre.0, t - self.centre.1);
        1.0 + self.amplitude * (-(dx * dx + dt * dt) / (self.width * self.width)).exp()
    }
}

impl<S: FieldSource + ?Sized> FieldSource for Corrupted<'_, S> {
    fn exp_u(&self, x: f64, t: f64) -> Result<Complex64> {
        Ok(self.inner.exp_u(x, t)? * self.factor(x, t))
    }

    fn exp_v(&self, x: f64, t: f64) -> Result<Complex64> {
        self.inner.exp_v(x, t)
    }

    fn tau(&self, x: f64, t: f64) -> Option<Complex64> {
        self.inner.tau(x, t)
    }
}
