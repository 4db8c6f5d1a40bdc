//! Independent checks on candidate solutions.
//!
//! Residuals come in two flavours:
//!
//! * grid mode ([`residual_lightcone`], [`residual_lab`]) differentiates a
//!   sampled [`FieldGrid`] with fourth-order stencils at the grid spacing;
//! * probe mode ([`residual_lightcone_probe`], [`residual_lab_probe`])
//!   evaluates a [`FieldSource`] on local stencils of steps `h` and `2h`
//!   around each grid node and extrapolates, so the truncation error is set by
//!   `h` rather than by the grid spacing.
//!
//! Nodes flagged singular or branch-ambiguous are excluded together with a
//! two-cell buffer around them.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{CellFlag, FieldGrid, FieldSource, GridSpec};
use crate::spectral_curve::{lax_a, lax_l, mat3_apply, BAValue, BackgroundProvider, SpectralPoint};

/// Cells around a flagged node that are left out of residual statistics.
pub const EXCLUSION_BUFFER: usize = 2;

/// Default local stencil step for probe-mode residuals.
pub const DEFAULT_PROBE_STEP: f64 = 2e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deviation {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub check: String,
    /// `"grid"` or `"probe"`.
    pub mode: String,
    /// Probe step, probe mode only.
    pub probe_step: Option<f64>,
    pub max_abs_residual: f64,
    /// `max_abs_residual / max |e^u|` over the evaluated nodes.
    pub rel_residual: f64,
    pub max_abs_exp_u: f64,
    /// Location of the largest residual.
    pub argmax: Option<[f64; 2]>,
    pub evaluated_nodes: usize,
    pub excluded_nodes: usize,
    pub singular_nodes: usize,
    pub branch_nodes: usize,
    pub convergence_order: Option<f64>,
    pub deviations: Vec<Deviation>,
}

impl VerificationReport {
    fn empty(check: &str) -> Self {
        Self {
            check: check.to_string(),
            mode: "grid".to_string(),
            probe_step: None,
            max_abs_residual: 0.0,
            rel_residual: 0.0,
            max_abs_exp_u: 0.0,
            argmax: None,
            evaluated_nodes: 0,
            excluded_nodes: 0,
            singular_nodes: 0,
            branch_nodes: 0,
            convergence_order: None,
            deviations: Vec::new(),
        }
    }
}

/// `e^u - e^{-2u}`.
pub fn nonlinearity(exp_u: Complex64) -> Complex64 {
    exp_u - (exp_u * exp_u).inv()
}

// Fourth-order first derivative weights for offsets -2..=2, over 12 h.
const D1: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];
// Fourth-order second derivative weights for offsets -2..=2, over 12 h^2.
const D2: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];

/// Nodes that are at least `buffer` cells away from every non-ok node.
fn usable_mask(spec: &GridSpec, flags: &[CellFlag], buffer: usize) -> Vec<bool> {
    let mut usable = vec![true; spec.len()];
    for it in 0..spec.nt {
        for ix in 0..spec.nx {
            if flags[spec.index(ix, it)] == CellFlag::Ok {
                continue;
            }
            let (x_lo, x_hi) = (ix.saturating_sub(buffer), (ix + buffer).min(spec.nx - 1));
            let (t_lo, t_hi) = (it.saturating_sub(buffer), (it + buffer).min(spec.nt - 1));
            for jt in t_lo..=t_hi {
                for jx in x_lo..=x_hi {
                    usable[spec.index(jx, jt)] = false;
                }
            }
        }
    }
    usable
}

fn finish(
    check: &str,
    spec: &GridSpec,
    flags: &[CellFlag],
    per_node: Vec<Option<(Complex64, Complex64)>>,
    interior_nodes: usize,
) -> VerificationReport {
    let mut report = VerificationReport::empty(check);
    report.singular_nodes = flags.iter().filter(|f| **f == CellFlag::Singular).count();
    report.branch_nodes = flags.iter().filter(|f| **f == CellFlag::Branch).count();
    for (idx, item) in per_node.iter().enumerate() {
        if let Some((res, exp_u)) = item {
            report.evaluated_nodes += 1;
            let r = res.norm();
            if r > report.max_abs_residual || report.argmax.is_none() {
                report.max_abs_residual = r;
                report.argmax = Some([spec.x(idx % spec.nx), spec.t(idx / spec.nx)]);
            }
            report.max_abs_exp_u = report.max_abs_exp_u.max(exp_u.norm());
        }
    }
    report.excluded_nodes = interior_nodes - report.evaluated_nodes;
    if report.max_abs_exp_u > 0.0 {
        report.rel_residual = report.max_abs_residual / report.max_abs_exp_u;
    }
    report
}

/// Grid-mode residual of `u_xt = e^u - e^{-2u}`.
pub fn residual_lightcone(field: &FieldGrid) -> VerificationReport {
    grid_residual(field, "residual_lightcone", |u, ix, it, hx, ht| {
        let mut acc = Complex64::new(0.0, 0.0);
        for (a, wa) in D1.iter().enumerate() {
            if *wa == 0.0 {
                continue;
            }
            for (b, wb) in D1.iter().enumerate() {
                if *wb == 0.0 {
                    continue;
                }
                acc += u(ix + a - 2, it + b - 2) * (wa * wb);
            }
        }
        acc / (144.0 * hx * ht)
    })
}

/// Grid-mode residual of `u_tt - u_xx = e^u - e^{-2u}` with `x`, `t` lab
/// coordinates.
pub fn residual_lab(field: &FieldGrid) -> VerificationReport {
    grid_residual(field, "residual_lab", |u, ix, it, hx, ht| {
        let mut u_tt = Complex64::new(0.0, 0.0);
        let mut u_xx = Complex64::new(0.0, 0.0);
        for (a, w) in D2.iter().enumerate() {
            u_tt += u(ix, it + a - 2) * *w;
            u_xx += u(ix + a - 2, it) * *w;
        }
        u_tt / (12.0 * ht * ht) - u_xx / (12.0 * hx * hx)
    })
}

fn grid_residual<F>(field: &FieldGrid, check: &str, operator: F) -> VerificationReport
where
    F: Fn(&dyn Fn(usize, usize) -> Complex64, usize, usize, f64, f64) -> Complex64 + Sync,
{
    let spec = field.spec;
    if spec.nx < 5 || spec.nt < 5 {
        return VerificationReport::empty(check);
    }
    let usable = usable_mask(&spec, &field.flags, EXCLUSION_BUFFER);
    let (hx, ht) = (spec.hx(), spec.ht());
    let u = |ix: usize, it: usize| field.u[spec.index(ix, it)];
    let per_node: Vec<Option<(Complex64, Complex64)>> = (0..spec.len())
        .into_par_iter()
        .map(|idx| {
            let (ix, it) = (idx % spec.nx, idx / spec.nx);
            if ix < 2 || it < 2 || ix + 2 >= spec.nx || it + 2 >= spec.nt || !usable[idx] {
                return None;
            }
            let lhs = operator(&u, ix, it, hx, ht);
            let exp_u = field.exp_u[idx];
            Some((lhs - nonlinearity(exp_u), exp_u))
        })
        .collect();
    let interior = (spec.nx - 4) * (spec.nt - 4);
    finish(check, &spec, &field.flags, per_node, interior)
}

/// Node flags for a source: evaluation failures, zeros of tau and zeros of
/// `e^u` are marked singular.
pub fn source_flags<S: FieldSource + ?Sized>(source: &S, spec: GridSpec) -> Result<Vec<CellFlag>> {
    spec.validate()?;
    let mut flags: Vec<CellFlag> = (0..spec.len())
        .into_par_iter()
        .map(|idx| {
            let (ix, it) = (idx % spec.nx, idx / spec.nx);
            match source.exp_u(spec.x(ix), spec.t(it)) {
                Ok(w) if w.re.is_finite() && w.im.is_finite() && w.norm() > 0.0 => CellFlag::Ok,
                _ => CellFlag::Singular,
            }
        })
        .collect();
    mark_scan(&mut flags, &spec, &singularity_scan(source, spec)?);
    mark_scan(&mut flags, &spec, &exp_u_zero_cells(source, spec)?);
    Ok(flags)
}

fn mark_scan(flags: &mut [CellFlag], spec: &GridSpec, scan: &ScanResult) {
    for cell in &scan.cells {
        for (dx, dt) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let (ix, it) = (cell.ix + dx, cell.it + dt);
            if ix < spec.nx && it < spec.nt {
                flags[spec.index(ix, it)] = CellFlag::Singular;
            }
        }
    }
}

/// Samples a source on a grid, then applies [`source_flags`].
pub fn sample_flagged<S: FieldSource + ?Sized>(source: &S, spec: GridSpec) -> Result<FieldGrid> {
    let mut field = FieldGrid::sample(source, spec)?;
    for (flag, extra) in field.flags.iter_mut().zip(source_flags(source, spec)?) {
        if extra == CellFlag::Singular {
            *flag = CellFlag::Singular;
        }
    }
    Ok(field)
}

/// Probe-mode residual of `u_xt = e^u - e^{-2u}` at the nodes of `spec`.
pub fn residual_lightcone_probe<S: FieldSource + ?Sized>(
    source: &S,
    spec: GridSpec,
    h: f64,
) -> Result<VerificationReport> {
    probe_residual(source, spec, h, "residual_lightcone", |log_at, h| {
        richardson(|m| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (a, wa) in D1.iter().enumerate() {
                for (b, wb) in D1.iter().enumerate() {
                    if *wa == 0.0 || *wb == 0.0 {
                        continue;
                    }
                    acc += log_at(m * (a as i32 - 2), m * (b as i32 - 2))? * (wa * wb);
                }
            }
            Ok(acc / (144.0 * h * h * (m * m) as f64))
        })
    })
}

/// Probe-mode residual of `u_tt - u_xx = e^u - e^{-2u}`.
pub fn residual_lab_probe<S: FieldSource + ?Sized>(
    source: &S,
    spec: GridSpec,
    h: f64,
) -> Result<VerificationReport> {
    probe_residual(source, spec, h, "residual_lab", |log_at, h| {
        richardson(|m| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (a, w) in D2.iter().enumerate() {
                let o = m * (a as i32 - 2);
                acc += (log_at(0, o)? - log_at(o, 0)?) * *w;
            }
            Ok(acc / (12.0 * h * h * (m * m) as f64))
        })
    })
}

/// Sixth-order combination of fourth-order estimates at steps `h` and `2h`.
fn richardson(d: impl Fn(i32) -> Result<Complex64>) -> Result<Complex64> {
    Ok((16.0 * d(1)? - d(2)?) / 15.0)
}

type LogProbe<'a> = dyn Fn(i32, i32) -> Result<Complex64> + 'a;

fn probe_residual<S, F>(source: &S, spec: GridSpec, h: f64, check: &str, operator: F) -> Result<VerificationReport>
where
    S: FieldSource + ?Sized,
    F: Fn(&LogProbe<'_>, f64) -> Result<Complex64> + Sync,
{
    if !(h > 0.0) {
        return Err(Error::InvalidParameter("probe step must be positive".into()));
    }
    let flags = source_flags(source, spec)?;
    let usable = usable_mask(&spec, &flags, EXCLUSION_BUFFER);
    let per_node: Vec<Option<(Complex64, Complex64)>> = (0..spec.len())
        .into_par_iter()
        .map(|idx| {
            if !usable[idx] {
                return None;
            }
            let (x, t) = (spec.x(idx % spec.nx), spec.t(idx / spec.nx));
            let centre = source.exp_u(x, t).ok()?;
            // u(p) - u(centre) through a principal log of a ratio close to 1.
            let log_at = |a: i32, b: i32| -> Result<Complex64> {
                if a == 0 && b == 0 {
                    return Ok(Complex64::new(0.0, 0.0));
                }
                let w = source.exp_u(x + a as f64 * h, t + b as f64 * h)?;
                Ok((w / centre).ln())
            };
            let lhs = operator(&log_at, h).ok()?;
            Some((lhs - nonlinearity(centre), centre))
        })
        .collect();
    let mut report = finish(check, &spec, &flags, per_node, spec.len());
    report.mode = "probe".to_string();
    report.probe_step = Some(h);
    Ok(report)
}

/// Light-cone field viewed in lab coordinates: `U(X, T) = u((T + X)/2, (T - X)/2)`,
/// which turns `u_xt` into `U_TT - U_XX`.
#[derive(Debug, Clone)]
pub struct LabFrame<'a, S: FieldSource + ?Sized> {
    pub inner: &'a S,
}

impl<S: FieldSource + ?Sized> FieldSource for LabFrame<'_, S> {
    fn exp_u(&self, x: f64, t: f64) -> Result<Complex64> {
        self.inner.exp_u(0.5 * (t + x), 0.5 * (t - x))
    }

    fn exp_v(&self, x: f64, t: f64) -> Result<Complex64> {
        self.inner.exp_v(0.5 * (t + x), 0.5 * (t - x))
    }

    fn tau(&self, x: f64, t: f64) -> Option<Complex64> {
        self.inner.tau(0.5 * (t + x), 0.5 * (t - x))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GoursatOptions {
    /// Adds `delta` to the boundary trace on `x = x0` at the node nearest `t`.
    pub boundary_perturbation: Option<(f64, Complex64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoursatReport {
    /// Nodes per axis at each refinement level.
    pub nodes: Vec<usize>,
    /// `max |e^{u_num} - e^{u_formula}|` on the coarse nodes, per level.
    pub deviations: Vec<f64>,
    /// `log2(dev_l / dev_{l+1})` for consecutive levels; `None` when either
    /// deviation is at round-off level.
    pub orders: Vec<Option<f64>>,
    pub blow_up: bool,
}

impl GoursatReport {
    pub fn finest_deviation(&self) -> f64 {
        self.deviations.last().copied().unwrap_or(f64::NAN)
    }
}

/// Deviations below this are treated as exact in the order estimate.
pub const GOURSAT_FLOOR: f64 = 1e-13;

/// Integrates `u_xt = e^u - e^{-2u}` from the source's traces on `x = x0`
/// and `t = t0` with the second-order characteristic scheme
///
/// `u[i+1,j+1] = u[i+1,j] + u[i,j+1] - u[i,j] + hx ht (F(u[i+1,j]) + F(u[i,j+1])) / 2`
///
/// on `levels` successively halved grids, and compares with the source.
pub fn goursat_cross_check<S: FieldSource + ?Sized>(
    source: &S,
    grid: GridSpec,
    levels: usize,
    opts: GoursatOptions,
) -> Result<GoursatReport> {
    grid.validate()?;
    if levels < 1 {
        return Err(Error::InvalidParameter("need at least one refinement level".into()));
    }
    let mut report = GoursatReport { nodes: Vec::new(), deviations: Vec::new(), orders: Vec::new(), blow_up: false };
    let singular = singularity_scan(source, grid)?.cells.len() + exp_u_zero_cells(source, grid)?.cells.len();
    if singular > 0 {
        return Err(Error::InvalidParameter(format!("{singular} singular cells inside the Goursat domain")));
    }
    let mut spec = grid;
    for level in 0..levels {
        let stride = 1usize << level;
        let exact = FieldGrid::sample(source, spec)?;
        if exact.flags.iter().any(|f| *f != CellFlag::Ok) {
            return Err(Error::InvalidParameter("formula field is not regular on the Goursat domain".into()));
        }
        let mut u = vec![Complex64::new(0.0, 0.0); spec.len()];
        for ix in 0..spec.nx {
            u[spec.index(ix, 0)] = exact.u[spec.index(ix, 0)];
        }
        for it in 0..spec.nt {
            u[spec.index(0, it)] = exact.u[spec.index(0, it)];
        }
        if let Some((t_at, delta)) = opts.boundary_perturbation {
            let it = (((t_at - spec.t0) / spec.ht()).round().max(0.0) as usize).min(spec.nt - 1);
            u[spec.index(0, it)] += delta;
        }
        let cell = spec.hx() * spec.ht();
        let f = |z: Complex64| z.exp() - (-2.0 * z).exp();
        let mut blew_up = false;
        'outer: for it in 0..spec.nt - 1 {
            for ix in 0..spec.nx - 1 {
                let right = u[spec.index(ix + 1, it)];
                let up = u[spec.index(ix, it + 1)];
                let next = right + up - u[spec.index(ix, it)] + 0.5 * cell * (f(right) + f(up));
                if !(next.re.is_finite() && next.im.is_finite()) || next.norm() > 1e6 {
                    blew_up = true;
                    break 'outer;
                }
                u[spec.index(ix + 1, it + 1)] = next;
            }
        }
        if blew_up {
            report.blow_up = true;
            report.nodes.push(spec.nx);
            report.deviations.push(f64::INFINITY);
            break;
        }
        let mut dev: f64 = 0.0;
        for it in (0..spec.nt).step_by(stride) {
            for ix in (0..spec.nx).step_by(stride) {
                let idx = spec.index(ix, it);
                dev = dev.max((u[idx].exp() - exact.exp_u[idx]).norm());
            }
        }
        report.nodes.push(spec.nx);
        report.deviations.push(dev);
        spec = spec.refined();
    }
    report.orders = report
        .deviations
        .windows(2)
        .map(|w| (w[0] > GOURSAT_FLOOR && w[1] > GOURSAT_FLOOR && w[0].is_finite()).then(|| (w[0] / w[1]).log2()))
        .collect();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LaxDerivatives {
    Analytic,
    /// Central differences with step `h`.
    FiniteDifference(f64),
}

/// Field data entering the Lax matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaxFieldData {
    pub u: Complex64,
    pub u_x: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaxDeviation {
    /// `|| psi_x - L psi ||`
    pub x_equation: f64,
    /// `|| psi_t - A psi ||`
    pub t_equation: f64,
}

/// Checks both spectral equations for the background Baker–Akhiezer vector.
/// `lambda_override` replaces `lambda(P)` inside `L` and `A` (negative control).
pub fn lax_check<B: BackgroundProvider + ?Sized>(
    x: f64,
    t: f64,
    p: SpectralPoint,
    field: LaxFieldData,
    bg: &B,
    derivatives: LaxDerivatives,
    lambda_override: Option<Complex64>,
) -> LaxDeviation {
    let lam = lambda_override.unwrap_or_else(|| bg.lambda(p));
    let (psi, psi_x, psi_t) = match derivatives {
        LaxDerivatives::Analytic => {
            let jet = bg.baker_jet(x, t, p);
            (jet.value, jet.dx, jet.dt)
        }
        LaxDerivatives::FiniteDifference(h) => {
            let diff = |a: BAValue, b: BAValue| {
                let (a, b) = (a.as_array(), b.as_array());
                BAValue::from_array([0, 1, 2].map(|i| (a[i] - b[i]) / (2.0 * h)))
            };
            (
                bg.baker(x, t, p),
                diff(bg.baker(x + h, t, p), bg.baker(x - h, t, p)),
                diff(bg.baker(x, t + h, p), bg.baker(x, t - h, p)),
            )
        }
    };
    let dist = |a: BAValue, b: BAValue| {
        a.as_array().iter().zip(b.as_array()).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt()
    };
    LaxDeviation {
        x_equation: dist(psi_x, mat3_apply(&lax_l(field.u_x, lam), &psi)),
        t_equation: dist(psi_t, mat3_apply(&lax_a(field.u, lam), &psi)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingularCell {
    pub ix: usize,
    pub it: usize,
    /// Cell centre.
    pub x: f64,
    pub t: f64,
    /// Smallest `|det|` seen on the cell boundary.
    pub abs_det: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub cells: Vec<SingularCell>,
    pub max_abs_det: f64,
    pub min_abs_det: f64,
    /// Relative threshold for near-zero `|det|`.
    pub rel_threshold: f64,
}

/// Relative near-zero threshold used by [`singularity_scan`].
pub const SCAN_REL_THRESHOLD: f64 = 1e-12;

/// Finds grid cells containing zeros of the source's tau function.
///
/// A cell is flagged when a corner has `|det|` below `1e-12` times the largest
/// corner value of that cell, when `det` winds around the cell boundary
/// (complex tau), or when a real-valued `det` changes sign across the cell.
pub fn singularity_scan<S: FieldSource + ?Sized>(source: &S, spec: GridSpec) -> Result<ScanResult> {
    spec.validate()?;
    Ok(zero_cells(&|x, t| source.tau(x, t), spec))
}

/// Cells where `e^u` itself vanishes; `u` has a logarithmic singularity there
/// and `e^{-2u}` a pole.
pub fn exp_u_zero_cells<S: FieldSource + ?Sized>(source: &S, spec: GridSpec) -> Result<ScanResult> {
    spec.validate()?;
    Ok(zero_cells(&|x, t| source.exp_u(x, t).ok(), spec))
}

type Sampler<'a> = dyn Fn(f64, f64) -> Option<Complex64> + Sync + 'a;

fn zero_cells(f: &Sampler<'_>, spec: GridSpec) -> ScanResult {
    let nodes: Vec<Option<Complex64>> = (0..spec.len())
        .into_par_iter()
        .map(|idx| f(spec.x(idx % spec.nx), spec.t(idx / spec.nx)))
        .collect();
    if nodes.iter().all(Option::is_none) {
        return ScanResult { cells: Vec::new(), max_abs_det: 0.0, min_abs_det: 0.0, rel_threshold: SCAN_REL_THRESHOLD };
    }
    let abs: Vec<f64> = nodes.iter().map(|d| d.map_or(0.0, |d| d.norm())).collect();
    let max_abs_det = abs.iter().cloned().fold(0.0, f64::max);
    let min_abs_det = abs.iter().cloned().fold(f64::INFINITY, f64::min);

    let cells: Vec<SingularCell> = (0..(spec.nx - 1) * (spec.nt - 1))
        .into_par_iter()
        .filter_map(|cell| {
            let (ix, it) = (cell % (spec.nx - 1), cell / (spec.nx - 1));
            let corners = [(ix, it), (ix + 1, it), (ix + 1, it + 1), (ix, it + 1)];
            let vals: Vec<Option<Complex64>> = corners.iter().map(|&(a, b)| nodes[spec.index(a, b)]).collect();
            let norms: Vec<f64> = vals.iter().map(|v| v.map_or(0.0, |d| d.norm())).collect();
            let min_corner = norms.iter().cloned().fold(f64::INFINITY, f64::min);
            let max_corner = norms.iter().cloned().fold(0.0, f64::max);
            let centre = (0.5 * (spec.x(ix) + spec.x(ix + 1)), 0.5 * (spec.t(it) + spec.t(it + 1)));
            let hit = SingularCell { ix, it, x: centre.0, t: centre.1, abs_det: min_corner };
            if vals.iter().any(Option::is_none) || !(min_corner > SCAN_REL_THRESHOLD * max_corner) {
                return Some(hit);
            }
            let vals: Vec<Complex64> = vals.into_iter().flatten().collect();
            let real = vals.iter().all(|v| v.im.abs() <= 1e-12 * v.norm());
            if real {
                let pos = vals.iter().filter(|v| v.re > 0.0).count();
                return (pos != 0 && pos != 4).then_some(hit);
            }
            let path = corners.map(|(a, b)| (spec.x(a), spec.t(b)));
            match winding_number(f, &path) {
                Some(0) => None,
                _ => Some(hit),
            }
        })
        .collect();
    ScanResult { cells, max_abs_det, min_abs_det, rel_threshold: SCAN_REL_THRESHOLD }
}

/// Winding number of `f` around the closed polygon, refining each edge until
/// every phase step is below `pi/2`. `None` if `f` is unavailable or the
/// refinement cap is hit.
fn winding_number(f: &Sampler<'_>, path: &[(f64, f64)]) -> Option<i64> {
    let mut total = 0.0;
    for e in 0..path.len() {
        let (a, b) = (path[e], path[(e + 1) % path.len()]);
        let mut m = 4;
        loop {
            let mut sum = 0.0;
            let mut ok = true;
            let mut prev = f(a.0, a.1)?;
            for s in 1..=m {
                let r = s as f64 / m as f64;
                let cur = f(a.0 + r * (b.0 - a.0), a.1 + r * (b.1 - a.1))?;
                let step = (cur / prev).arg();
                if step.abs() > 0.5 * PI {
                    ok = false;
                    break;
                }
                sum += step;
                prev = cur;
            }
            if ok {
                total += sum;
                break;
            }
            m *= 2;
            if m > 1024 {
                return None;
            }
        }
    }
    Some((total / (2.0 * PI)).round() as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_curve::VacuumProvider;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn grid_from_u(spec: GridSpec, u: impl Fn(f64, f64) -> Complex64) -> FieldGrid {
        let vals: Vec<Complex64> = (0..spec.len()).map(|i| u(spec.x(i % spec.nx), spec.t(i / spec.nx))).collect();
        FieldGrid::from_u(spec, vals, vec![CellFlag::Ok; spec.len()])
    }

    #[test]
    fn zero_field_has_zero_residual() {
        let spec = GridSpec::square(-5.0, 5.0, 41).unwrap();
        let field = grid_from_u(spec, |_, _| c(0.0, 0.0));
        let r = residual_lightcone(&field);
        assert_eq!(r.max_abs_residual, 0.0);
        assert_eq!(r.evaluated_nodes, 37 * 37);
        assert_eq!(residual_lab(&field).max_abs_residual, 0.0);
    }

    #[test]
    fn negative_controls() {
        let spec = GridSpec::square(-1.0, 1.0, 21).unwrap();
        let xt = grid_from_u(spec, |x, t| c(x * t, 0.0));
        let r = residual_lightcone(&xt);
        // At the origin the residual is |1 - (e^0 - e^0)| = 1.
        let centre = (1.0 - nonlinearity(c(1.0, 0.0))).norm();
        assert!((centre - 1.0).abs() < 1e-15);
        assert!(r.max_abs_residual >= 1.0 - 1e-12);

        let sq = grid_from_u(spec, |x, _| c(x * x, 0.0));
        let r = residual_lab(&sq);
        assert!(r.max_abs_residual >= 2.0 - 1e-12);
    }

    #[test]
    fn stencils_exact_on_cubic_polynomials() {
        let spec = GridSpec::new(-1.0, 1.3, -0.7, 0.9, 13, 11).unwrap();
        let u = |x: f64, t: f64| c(0.3 * x * x * x * t * t + 0.2 * x * t * t * t - 0.1 * x * x + 0.05 * t, 0.02 * x * t);
        let u_xt = |x: f64, t: f64| c(0.3 * 3.0 * x * x * 2.0 * t + 0.2 * 3.0 * t * t, 0.02);
        let u_tt_minus_xx = |x: f64, t: f64| {
            c(0.3 * x * x * x * 2.0 + 0.2 * x * 6.0 * t - (0.3 * 6.0 * x * t * t + 0.2 * 0.0 - 0.2), 0.0)
        };
        let field = grid_from_u(spec, u);
        let r_lc = residual_lightcone(&field);
        let r_lab = residual_lab(&field);
        // Compare against the analytic residual at the reported worst node and globally.
        let mut worst_lc: f64 = 0.0;
        let mut worst_lab: f64 = 0.0;
        for it in 2..spec.nt - 2 {
            for ix in 2..spec.nx - 2 {
                let (x, t) = (spec.x(ix), spec.t(it));
                let e = u(x, t).exp();
                worst_lc = worst_lc.max((u_xt(x, t) - nonlinearity(e)).norm());
                worst_lab = worst_lab.max((u_tt_minus_xx(x, t) - nonlinearity(e)).norm());
            }
        }
        assert!((r_lc.max_abs_residual - worst_lc).abs() <= 1e-12 * worst_lc.max(1.0));
        assert!((r_lab.max_abs_residual - worst_lab).abs() <= 1e-12 * worst_lab.max(1.0));
    }

    #[test]
    fn flagged_nodes_are_buffered() {
        let spec = GridSpec::square(0.0, 1.0, 21).unwrap();
        let mut field = grid_from_u(spec, |_, _| c(0.0, 0.0));
        field.flags[spec.index(10, 10)] = CellFlag::Singular;
        let r = residual_lightcone(&field);
        assert_eq!(r.singular_nodes, 1);
        assert_eq!(r.evaluated_nodes, 17 * 17 - 25);
    }

    #[test]
    fn lax_vacuum_analytic_and_fd() {
        let p = SpectralPoint::new(c(1.0, 1.0)).unwrap();
        let zero = LaxFieldData { u: c(0.0, 0.0), u_x: c(0.0, 0.0) };
        let dev = lax_check(0.3, -0.7, p, zero, &VacuumProvider, LaxDerivatives::Analytic, None);
        assert!(dev.x_equation <= 1e-12 && dev.t_equation <= 1e-12, "{dev:?}");
        let d1 = lax_check(0.3, -0.7, p, zero, &VacuumProvider, LaxDerivatives::FiniteDifference(1e-3), None);
        let d2 = lax_check(0.3, -0.7, p, zero, &VacuumProvider, LaxDerivatives::FiniteDifference(5e-4), None);
        let order_x = (d1.x_equation / d2.x_equation).log2();
        let order_t = (d1.t_equation / d2.t_equation).log2();
        assert!((order_x - 2.0).abs() < 0.1 && (order_t - 2.0).abs() < 0.1, "{order_x} {order_t}");
        let wrong = lax_check(
            0.3,
            -0.7,
            p,
            zero,
            &VacuumProvider,
            LaxDerivatives::Analytic,
            Some(p.lambda() + 1.0),
        );
        assert!(wrong.x_equation > 1e-2);
    }

    #[test]
    fn goursat_zero_boundary_stays_zero() {
        let src = |_x: f64, _t: f64| c(1.0, 0.0);
        let rep = goursat_cross_check(&src, GridSpec::square(0.0, 1.0, 11).unwrap(), 2, GoursatOptions::default())
            .unwrap();
        assert!(rep.deviations.iter().all(|d| *d == 0.0));
        assert!(!rep.blow_up);
    }

    #[test]
    fn scan_sees_nothing_without_tau() {
        let src = |_x: f64, _t: f64| c(1.0, 0.0);
        let scan = singularity_scan(&src, GridSpec::square(0.0, 1.0, 5).unwrap()).unwrap();
        assert!(scan.cells.is_empty());
    }

    struct Tau<F: Fn(f64, f64) -> Complex64 + Sync>(F);
    impl<F: Fn(f64, f64) -> Complex64 + Sync> FieldSource for Tau<F> {
        fn exp_u(&self, _x: f64, _t: f64) -> Result<Complex64> {
            Ok(c(1.0, 0.0))
        }
        fn exp_v(&self, _x: f64, _t: f64) -> Result<Complex64> {
            Ok(c(1.0, 0.0))
        }
        fn tau(&self, x: f64, t: f64) -> Option<Complex64> {
            Some((self.0)(x, t))
        }
    }

    #[test]
    fn scan_detects_complex_zero_and_real_sign_change() {
        let spec = GridSpec::square(-1.0, 1.0, 11).unwrap();
        let point_zero = Tau(|x: f64, t: f64| c(x - 0.13, t + 0.27));
        let scan = singularity_scan(&point_zero, spec).unwrap();
        assert_eq!(scan.cells.len(), 1);
        let cell = scan.cells[0];
        assert!((cell.x - 0.1).abs() < 1e-12 && (cell.t + 0.3).abs() < 1e-12);

        let line_zero = Tau(|x: f64, t: f64| c(x + t - 0.05, 0.0));
        let scan = singularity_scan(&line_zero, spec).unwrap();
        assert!(scan.cells.len() >= 10);

        let no_zero = Tau(|x: f64, t: f64| c(2.0 + x, t));
        assert!(singularity_scan(&no_zero, spec).unwrap().cells.is_empty());
    }
}
