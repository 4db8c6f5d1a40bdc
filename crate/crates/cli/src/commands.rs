//! Subcommand implementations. Each returns the text to be written.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tzitzeica_core::asymptotics::{self, Rapidity, SolitonKinematics};
use tzitzeica_core::dressing::{self, SolitonConfig};
use tzitzeica_core::grid::{CellFlag, FieldGrid, FieldSource, GridSpec};
use tzitzeica_core::spectral_curve::{BackgroundProvider, SpectralPoint, VacuumProvider};
use tzitzeica_core::verify::{
    self, GoursatOptions, GoursatReport, LabFrame, LaxDerivatives, LaxFieldData, VerificationReport,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::model::{Corrupted, Model};

pub const FIELD_HEADER: &str = "x,t,re_u,im_u,re_exp_u,im_exp_u,flag";
pub const SCAN_HEADER: &str = "x,t,abs_det";

/// Finite-difference steps for the Lax order estimate.
const LAX_STEPS: [f64; 2] = [1e-3, 5e-4];
/// Draws allowed per requested route point before giving up.
const ROUTE_DRAW_FACTOR: usize = 10;
/// Finest Goursat deviation allowed for a field that passes the residual check.
const GOURSAT_MAX_DEVIATION: f64 = 1e-4;

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Runs `f` on the model, wrapped in the corruption hook when requested.
fn with_source<R>(model: &Model, grid: &GridSpec, corrupt: bool, f: impl FnOnce(&dyn FieldSource) -> R) -> R {
    if corrupt {
        f(&Corrupted::on_grid(model, grid))
    } else {
        f(model)
    }
}

pub fn field_csv(cfg: &RunConfig, corrupt: bool) -> Result<String, CliError> {
    let model = Model::from_config(cfg)?;
    let grid = with_source(&model, &cfg.grid, corrupt, |s| verify::sample_flagged(s, cfg.grid))?;
    Ok(write_field_csv(&grid))
}

pub fn write_field_csv(grid: &FieldGrid) -> String {
    let spec = grid.spec;
    let mut out = String::with_capacity(spec.len() * 140);
    out.push_str(FIELD_HEADER);
    out.push('\n');
    for it in 0..spec.nt {
        for ix in 0..spec.nx {
            let idx = spec.index(ix, it);
            let (u, w) = (grid.u[idx], grid.exp_u[idx]);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                fmt(spec.x(ix)),
                fmt(spec.t(it)),
                fmt(u.re),
                fmt(u.im),
                fmt(w.re),
                fmt(w.im),
                grid.flags[idx].as_str()
            );
        }
    }
    out
}

/// Parses a field CSV back into a grid, keeping `u` and `e^u` as written.
pub fn read_field_csv(text: &str) -> Result<FieldGrid, CliError> {
    let bad = |line: usize, msg: &str| CliError::Config(format!("field csv line {line}: {msg}"));
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == FIELD_HEADER => {}
        _ => return Err(bad(1, &format!("expected header `{FIELD_HEADER}`"))),
    }
    let mut xs = Vec::new();
    let mut ts = Vec::new();
    let mut u = Vec::new();
    let mut exp_u = Vec::new();
    let mut flags = Vec::new();
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(bad(lineno, "expected 7 columns"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(lineno, &format!("bad number `{s}`")));
        xs.push(num(cols[0])?);
        ts.push(num(cols[1])?);
        u.push(Complex64::new(num(cols[2])?, num(cols[3])?));
        exp_u.push(Complex64::new(num(cols[4])?, num(cols[5])?));
        flags.push(CellFlag::parse(cols[6].trim()).ok_or_else(|| bad(lineno, "bad flag"))?);
    }
    if ts.is_empty() {
        return Err(CliError::Config("field csv has no rows".into()));
    }
    let nx = ts.iter().take_while(|t| **t == ts[0]).count();
    if nx == 0 || ts.len() % nx != 0 {
        return Err(CliError::Config("field csv rows do not form a rectangular grid".into()));
    }
    let nt = ts.len() / nx;
    let spec = GridSpec::new(xs[0], xs[nx - 1], ts[0], ts[ts.len() - 1], nx, nt)
        .map_err(|e| CliError::Config(format!("field csv grid: {e}")))?;
    Ok(FieldGrid { spec, u, exp_u, flags })
}

pub fn scan_csv(cfg: &RunConfig) -> Result<String, CliError> {
    let model = Model::from_config(cfg)?;
    let scan = verify::singularity_scan(&model, cfg.grid)?;
    let mut out = String::from(SCAN_HEADER);
    out.push('\n');
    for c in &scan.cells {
        let _ = writeln!(out, "{},{},{}", fmt(c.x), fmt(c.t), fmt(c.abs_det));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct VelocitiesReport {
    pub rapidities: Vec<f64>,
    pub solitons: Vec<SolitonKinematics>,
}

pub fn velocities(cfg: &RunConfig) -> Result<VelocitiesReport, CliError> {
    let model = Model::from_config(cfg)?;
    let rapidities = rapidities(cfg)?;
    let solitons = match model.solitons() {
        Some(s) => asymptotics::kinematics(s, &VacuumProvider, &rapidities)?,
        None => Vec::new(),
    };
    Ok(VelocitiesReport { rapidities: cfg.kinematics.rapidities.clone(), solitons })
}

fn rapidities(cfg: &RunConfig) -> Result<Vec<Rapidity>, CliError> {
    cfg.kinematics
        .rapidities
        .iter()
        .map(|e| Rapidity::new(*e).map_err(|e| CliError::Config(format!("kinematics: {e}"))))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct GoursatSummary {
    pub grid: GridSpec,
    pub report: Option<GoursatReport>,
    pub error: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct LaxPoint {
    pub k: [f64; 2],
    pub analytic_x: f64,
    pub analytic_t: f64,
    pub fd_steps: [f64; 2],
    pub fd_x: [f64; 2],
    pub fd_t: [f64; 2],
    pub order_x: f64,
    pub order_t: f64,
}

#[derive(Debug, Serialize)]
pub struct LaxSummary {
    pub x: f64,
    pub t: f64,
    pub points: Vec<LaxPoint>,
    pub max_analytic: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct ResidueSummary {
    pub kernel_scale: [f64; 2],
    pub points: Vec<[f64; 2]>,
    /// `max |Res - 1|` over points, contour radii and `(x, t)` positions.
    pub max_deviation: f64,
    /// Largest difference between positions for the same point and radius.
    pub max_position_spread: f64,
    pub error: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct RouteSummary {
    pub seed: u64,
    pub requested: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub max_rel_diff: f64,
    pub argmax: Option<[f64; 2]>,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct KinematicsSummary {
    pub solitons: Vec<SolitonKinematics>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    /// `"formula"` for a config run, `"file"` for a re-ingested field CSV.
    pub source: String,
    pub residual_lightcone: VerificationReport,
    pub residual_lab: Option<VerificationReport>,
    /// Grid-mode residual on the sampled field, comparable with file mode.
    pub residual_lightcone_grid: Option<VerificationReport>,
    pub goursat: Option<GoursatSummary>,
    pub lax: Option<LaxSummary>,
    pub residue_identity: Option<ResidueSummary>,
    pub route_equivalence: Option<RouteSummary>,
    pub kinematics: Option<KinematicsSummary>,
    pub failures: Vec<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    pub corrupt: bool,
}

pub fn verify(cfg: &RunConfig, opts: VerifyOptions) -> Result<VerifyReport, CliError> {
    let model = Model::from_config(cfg)?;
    let v = &cfg.verify;
    let grid = cfg.grid;

    let (light, lab, light_grid, goursat) = with_source(&model, &grid, opts.corrupt, |s| {
        let light = verify::residual_lightcone_probe(s, grid, v.probe_step)?;
        let lab = verify::residual_lab_probe(&LabFrame { inner: s }, grid, v.probe_step)?;
        let light_grid = verify::residual_lightcone(&verify::sample_flagged(s, grid)?);
        let goursat = v.goursat.as_ref().map(|g| {
            let result = verify::goursat_cross_check(s, g.grid, g.levels, GoursatOptions::default());
            goursat_summary(g.grid, result, g.order_tol)
        });
        Ok::<_, CliError>((light, lab, light_grid, goursat))
    })?;

    let solitons = model.solitons();
    let centre = (0.5 * (grid.x0 + grid.x1), 0.5 * (grid.t0 + grid.t1));
    let lax = solitons.map(|s| lax_summary(s, centre, v.lax_tol, v.lax_order_tol));
    let residue = solitons.map(|s| residue_summary(s, &model, &grid, v.residue_tol));
    let route = match &model {
        Model::Vacuum(f) if !f.cfg.is_empty() => Some(route_summary(f, &grid, v.route_points, v.route_tol, opts.seed)),
        _ => None,
    };
    let kinematics = match solitons {
        Some(s) if !s.is_empty() => Some(match asymptotics::kinematics(s, &VacuumProvider, &rapidities(cfg)?) {
            Ok(table) => KinematicsSummary { solitons: table, error: None },
            Err(e) => KinematicsSummary { solitons: Vec::new(), error: Some(e.to_string()) },
        }),
        _ => None,
    };

    let mut failures = Vec::new();
    if !(light.rel_residual <= v.residual_tol) {
        failures.push("residual_lightcone".to_string());
    }
    if !(lab.rel_residual <= v.lab_residual_tol) {
        failures.push("residual_lab".to_string());
    }
    if goursat.as_ref().is_some_and(|g| !g.pass) {
        failures.push("goursat".to_string());
    }
    if lax.as_ref().is_some_and(|l| !l.pass) {
        failures.push("lax".to_string());
    }
    if residue.as_ref().is_some_and(|r| !r.pass) {
        failures.push("residue_identity".to_string());
    }
    if route.as_ref().is_some_and(|r| !r.pass) {
        failures.push("route_equivalence".to_string());
    }
    Ok(VerifyReport {
        source: "formula".to_string(),
        residual_lightcone: light,
        residual_lab: Some(lab),
        residual_lightcone_grid: Some(light_grid),
        goursat,
        lax,
        residue_identity: residue,
        route_equivalence: route,
        kinematics,
        pass: failures.is_empty(),
        failures,
    })
}

/// File mode: grid-mode residual of a field CSV written by `field`.
pub fn verify_file(cfg: &RunConfig, csv: &str) -> Result<VerifyReport, CliError> {
    let grid = read_field_csv(csv)?;
    let light = verify::residual_lightcone(&grid);
    let mut failures = Vec::new();
    if !(light.rel_residual <= cfg.verify.residual_tol) {
        failures.push("residual_lightcone".to_string());
    }
    Ok(VerifyReport {
        source: "file".to_string(),
        residual_lightcone: light,
        residual_lab: None,
        residual_lightcone_grid: None,
        goursat: None,
        lax: None,
        residue_identity: None,
        route_equivalence: None,
        kinematics: None,
        pass: failures.is_empty(),
        failures,
    })
}

fn goursat_summary(grid: GridSpec, result: tzitzeica_core::Result<GoursatReport>, order_tol: f64) -> GoursatSummary {
    match result {
        Ok(report) => {
            let finest = report.finest_deviation();
            let exact = report.deviations.iter().all(|d| *d <= verify::GOURSAT_FLOOR);
            let orders_ok = !report.orders.is_empty()
                && report.orders.iter().all(|o| o.is_some_and(|o| (o - 2.0).abs() <= order_tol));
            let pass = !report.blow_up && finest <= GOURSAT_MAX_DEVIATION && (exact || orders_ok);
            GoursatSummary { grid, report: Some(report), error: None, pass }
        }
        Err(e) => GoursatSummary { grid, report: None, error: Some(e.to_string()), pass: false },
    }
}

fn probe_points(cfg: &SolitonConfig) -> Vec<SpectralPoint> {
    let mut pts = cfg.row_points();
    if pts.is_empty() {
        pts = [Complex64::new(1.0, 0.0), Complex64::new(0.6, 0.8), Complex64::new(-1.3, 0.4)]
            .into_iter()
            .filter_map(|k| SpectralPoint::new(k).ok())
            .collect();
    }
    pts
}

fn lax_summary(cfg: &SolitonConfig, (x, t): (f64, f64), tol: f64, order_tol: f64) -> LaxSummary {
    let bg = VacuumProvider;
    let (u, u_x) = bg.background_u(x, t).unwrap_or_default();
    let field = LaxFieldData { u, u_x };
    let mut max_analytic: f64 = 0.0;
    let mut pass = true;
    let points = probe_points(cfg)
        .into_iter()
        .map(|p| {
            let a = verify::lax_check(x, t, p, field, &bg, LaxDerivatives::Analytic, None);
            let fd = LAX_STEPS.map(|h| verify::lax_check(x, t, p, field, &bg, LaxDerivatives::FiniteDifference(h), None));
            let ratio = (LAX_STEPS[0] / LAX_STEPS[1]).log2();
            let order_x = (fd[0].x_equation / fd[1].x_equation).log2() / ratio;
            let order_t = (fd[0].t_equation / fd[1].t_equation).log2() / ratio;
            let analytic = a.x_equation.max(a.t_equation);
            max_analytic = max_analytic.max(analytic);
            pass &= analytic <= tol && (order_x - 2.0).abs() <= order_tol && (order_t - 2.0).abs() <= order_tol;
            LaxPoint {
                k: [p.k().re, p.k().im],
                analytic_x: a.x_equation,
                analytic_t: a.t_equation,
                fd_steps: LAX_STEPS,
                fd_x: fd.map(|d| d.x_equation),
                fd_t: fd.map(|d| d.t_equation),
                order_x,
                order_t,
            }
        })
        .collect();
    LaxSummary { x, t, points, max_analytic, pass }
}

fn residue_summary(cfg: &SolitonConfig, model: &Model, grid: &GridSpec, tol: f64) -> ResidueSummary {
    let scale = match model {
        Model::Vacuum(f) => f.opts.kernel_scale,
        Model::Theta(_) => Complex64::new(1.0, 0.0),
    };
    let mut summary = ResidueSummary {
        kernel_scale: [scale.re, scale.im],
        points: Vec::new(),
        max_deviation: 0.0,
        max_position_spread: 0.0,
        error: None,
        pass: false,
    };
    let positions = [
        (0.5 * (grid.x0 + grid.x1), 0.5 * (grid.t0 + grid.t1)),
        (grid.x0, grid.t0),
        (grid.x1, grid.t1),
    ];
    let mut pts = cfg.column_points();
    pts.extend(probe_points(&SolitonConfig::empty()));
    for q in pts {
        summary.points.push([q.k().re, q.k().im]);
        let base = 0.1 * q.k().norm();
        for radius in [base, 0.5 * base] {
            let mut values = Vec::new();
            for (x, t) in positions {
                match dressing::residue_identity_check(q, &VacuumProvider, scale, radius, 256, x, t) {
                    Ok(r) => values.push(r),
                    Err(e) => {
                        summary.error = Some(e.to_string());
                        return summary;
                    }
                }
            }
            for r in &values {
                summary.max_deviation = summary.max_deviation.max((r - 1.0).norm());
                summary.max_position_spread = summary.max_position_spread.max((r - values[0]).norm());
            }
        }
    }
    summary.pass = summary.max_deviation <= tol;
    summary
}

fn route_summary(
    field: &dressing::DressedField<'_, VacuumProvider>,
    grid: &GridSpec,
    points: usize,
    tol: f64,
    seed: u64,
) -> RouteSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary =
        RouteSummary { seed, requested: points, evaluated: 0, skipped: 0, max_rel_diff: 0.0, argmax: None, pass: false };
    let mut draws = 0;
    while summary.evaluated < points && draws < points * ROUTE_DRAW_FACTOR {
        draws += 1;
        let x = rng.gen_range(grid.x0..=grid.x1);
        let t = rng.gen_range(grid.t0..=grid.t1);
        let det = dressing::exp_u(x, t, &field.cfg, field.bg, &field.opts);
        let lin = dressing::exp_u_via_linear_system(x, t, &field.cfg, field.bg, &field.opts);
        match (det, lin) {
            (Ok(a), Ok(b)) if a.norm() > 0.0 && a.norm().is_finite() => {
                let rel = (a - b).norm() / a.norm();
                summary.evaluated += 1;
                if !(rel <= summary.max_rel_diff) {
                    summary.max_rel_diff = rel;
                    summary.argmax = Some([x, t]);
                }
            }
            _ => summary.skipped += 1,
        }
    }
    summary.pass = summary.evaluated >= points && summary.max_rel_diff <= tol;
    summary
}
