//! Run configuration, read from a TOML file.
//!
//! Complex numbers are written as `[re, im]`. Unknown keys are rejected, and
//! every physical parameter must be given explicitly; the only implicit
//! background is `kind = "vacuum"`.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Deserialize;
use tzitzeica_core::background::BackgroundData;
use tzitzeica_core::dressing::{SolitonConfig, SolitonPoints};
use tzitzeica_core::grid::GridSpec;
use tzitzeica_core::spectral_curve::SpectralPoint;
use tzitzeica_core::theta::{PeriodMatrix, TruncationPolicy};

use crate::error::CliError;

pub type Cplx = [f64; 2];

fn cplx(z: Cplx) -> Complex64 {
    Complex64::new(z[0], z[1])
}

fn cplx_vec(v: &[Cplx]) -> Vec<Complex64> {
    v.iter().copied().map(cplx).collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub background: BackgroundSection,
    pub solitons: Option<SolitonSection>,
    pub grid: GridSpec,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub kinematics: KinematicsSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackgroundSection {
    Vacuum {},
    Theta {
        c: Cplx,
        period_matrix: Vec<Vec<Cplx>>,
        u: Vec<Cplx>,
        v: Vec<Cplx>,
        z_d: Vec<Cplx>,
        truncation: Option<TruncationSection>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSection {
    pub target_abs_error: f64,
    pub max_radius: usize,
    pub divisor_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Canonical,
    Explicit,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolitonSection {
    pub placement: Placement,
    pub lambdas: Vec<Cplx>,
    pub c: Vec<Cplx>,
    /// `k` of `Lambda_j`, explicit placement only.
    pub lambda_points: Option<Vec<Cplx>>,
    /// `k` of `Lambda_j*`, explicit placement only.
    pub star_points: Option<Vec<Cplx>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub residual_tol: f64,
    pub lab_residual_tol: f64,
    pub probe_step: f64,
    pub route_tol: f64,
    pub route_points: usize,
    pub lax_tol: f64,
    pub lax_order_tol: f64,
    pub residue_tol: f64,
    pub goursat: Option<GoursatSection>,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            residual_tol: 1e-8,
            lab_residual_tol: 1e-7,
            probe_step: tzitzeica_core::verify::DEFAULT_PROBE_STEP,
            route_tol: 1e-9,
            route_points: 25,
            lax_tol: 1e-12,
            lax_order_tol: 0.3,
            residue_tol: 1e-8,
            goursat: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoursatSection {
    pub grid: GridSpec,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_order_tol")]
    pub order_tol: f64,
}

fn default_levels() -> usize {
    4
}

fn default_order_tol() -> f64 {
    0.3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KinematicsSection {
    pub rapidities: Vec<f64>,
}

impl Default for KinematicsSection {
    fn default() -> Self {
        Self { rapidities: vec![0.0] }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub field: Option<PathBuf>,
    pub verify: Option<PathBuf>,
    pub scan: Option<PathBuf>,
    pub velocities: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Runs every constructor so invalid configs fail before any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        self.grid.validate().map_err(|e| CliError::Config(format!("grid: {e}")))?;
        self.background_data()?;
        self.soliton_config()?;
        if let Some(g) = &self.verify.goursat {
            g.grid.validate().map_err(|e| CliError::Config(format!("verify.goursat.grid: {e}")))?;
            if g.levels < 2 {
                return Err(CliError::Config("verify.goursat.levels must be at least 2".into()));
            }
        }
        let v = &self.verify;
        for (name, value) in [
            ("residual_tol", v.residual_tol),
            ("lab_residual_tol", v.lab_residual_tol),
            ("probe_step", v.probe_step),
            ("route_tol", v.route_tol),
            ("lax_tol", v.lax_tol),
            ("lax_order_tol", v.lax_order_tol),
            ("residue_tol", v.residue_tol),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(CliError::Config(format!("verify.{name} must be positive and finite")));
            }
        }
        if self.kinematics.rapidities.iter().any(|e| !e.is_finite()) {
            return Err(CliError::Config("kinematics.rapidities must be finite".into()));
        }
        Ok(())
    }

    pub fn background_data(&self) -> Result<BackgroundData, CliError> {
        match &self.background {
            BackgroundSection::Vacuum {} => Ok(BackgroundData::vacuum()),
            BackgroundSection::Theta { c, period_matrix, u, v, z_d, truncation } => {
                let rows: Vec<Vec<Complex64>> = period_matrix.iter().map(|r| cplx_vec(r)).collect();
                let prym =
                    PeriodMatrix::from_rows(&rows).map_err(|e| CliError::Config(format!("background.period_matrix: {e}")))?;
                let mut data = BackgroundData::finite_gap(cplx(*c), cplx_vec(u), cplx_vec(v), cplx_vec(z_d), prym)
                    .map_err(|e| CliError::Config(format!("background: {e}")))?;
                if let Some(t) = truncation {
                    let mut policy = TruncationPolicy::new(t.target_abs_error, t.max_radius)
                        .map_err(|e| CliError::Config(format!("background.truncation: {e}")))?;
                    if let Some(d) = t.divisor_threshold {
                        if !(d > 0.0 && d.is_finite()) {
                            return Err(CliError::Config("background.truncation.divisor_threshold must be positive".into()));
                        }
                        policy.divisor_threshold = d;
                    }
                    data.truncation = policy;
                }
                Ok(data)
            }
        }
    }

    pub fn soliton_config(&self) -> Result<SolitonConfig, CliError> {
        let Some(s) = &self.solitons else {
            return Ok(SolitonConfig::empty());
        };
        let wrap = |e: tzitzeica_core::Error| CliError::Config(format!("solitons: {e}"));
        match s.placement {
            Placement::Canonical => {
                if s.lambda_points.is_some() || s.star_points.is_some() {
                    return Err(CliError::Config(
                        "solitons: lambda_points/star_points are only allowed with placement = \"explicit\"".into(),
                    ));
                }
                SolitonConfig::canonical(cplx_vec(&s.lambdas), cplx_vec(&s.c)).map_err(wrap)
            }
            Placement::Explicit => {
                let missing = |k: &str| CliError::Config(format!("solitons: missing field `{k}` for explicit placement"));
                let lp = s.lambda_points.as_ref().ok_or_else(|| missing("lambda_points"))?;
                let sp = s.star_points.as_ref().ok_or_else(|| missing("star_points"))?;
                if lp.len() != sp.len() {
                    return Err(CliError::Config("solitons: lambda_points and star_points differ in length".into()));
                }
                let points = lp
                    .iter()
                    .zip(sp)
                    .map(|(a, b)| {
                        Ok(SolitonPoints {
                            lambda_point: SpectralPoint::new(cplx(*a))?,
                            star_point: SpectralPoint::new(cplx(*b))?,
                        })
                    })
                    .collect::<tzitzeica_core::Result<Vec<_>>>()
                    .map_err(wrap)?;
                SolitonConfig::explicit(cplx_vec(&s.lambdas), points, cplx_vec(&s.c)).map_err(wrap)
            }
        }
    }
}
