//! N-soliton dressing of a background solution.
//!
//! The kernel `Omega(P, Q) = s <e(P)|e(sigma Q)> / (lambda(P) - lambda(Q))`
//! is evaluated on the `2N x 2N` grid of points
//!
//! ```text
//!            Lambda_j              Lambda_j*
//! sigma Lambda_i*   Omega(sL*_i, L_j)    Omega(sL*_i, L*_j)
//! sigma Lambda_i    Omega(sL_i,  L_j)    Omega(sL_i,  L*_j)
//! ```
//!
//! Row `m` is evaluated at the point whose Baker–Akhiezer value enters the
//! residue condition at column `m`: the residue of `Psi` at `Lambda_j` is tied
//! to `Psi(sigma Lambda_j*)` and the residue at `Lambda_j*` to
//! `Psi(sigma Lambda_j)`. With `C = diag(C_1..C_N, -C_1..-C_N)` the field is
//!
//! ```text
//! e^u = e^v - d_x d_t ln det(1 - Omega C).
//! ```
//!
//! The same field is also reachable without determinants: solve the residue
//! conditions for the pole coefficients `alpha` of `Psi_3` and read `e^u` off
//! the `k^-4 e^{kx}` coefficient of `Psi_3` at `P_inf`,
//! `e^u = e^v - s d_t sum_m e_2(sigma Q_m) alpha_m`. Both routes are exposed so
//! they can be checked against each other.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::FieldSource;
use crate::spectral_curve::{cube_root_of_unity, preimages, BackgroundProvider, KernelJet, SpectralPoint};

type CMat = DMatrix<Complex64>;

/// The points attached to one soliton: `Lambda_j` over `lambda_j` and
/// `Lambda_j*` over `-lambda_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolitonPoints {
    pub lambda_point: SpectralPoint,
    pub star_point: SpectralPoint,
}

impl SolitonPoints {
    pub fn sigma_lambda(&self) -> SpectralPoint {
        self.lambda_point.sigma()
    }

    pub fn sigma_star(&self) -> SpectralPoint {
        self.star_point.sigma()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolitonConfig {
    lambdas: Vec<Complex64>,
    points: Vec<SolitonPoints>,
    constants: Vec<Complex64>,
}

impl SolitonConfig {
    pub fn empty() -> Self {
        Self { lambdas: Vec::new(), points: Vec::new(), constants: Vec::new() }
    }

    /// `Lambda_j` is the principal preimage of `lambda_j` and
    /// `sigma Lambda_j* = exp(2 pi i / 3) Lambda_j`, so both lie over `lambda_j`.
    pub fn canonical(lambdas: Vec<Complex64>, constants: Vec<Complex64>) -> Result<Self> {
        let eps = cube_root_of_unity();
        let points = lambdas
            .iter()
            .map(|&lam| {
                let lambda_point = preimages(lam)?[0];
                let star_point = SpectralPoint::new(-(lambda_point.k() * eps))?;
                Ok(SolitonPoints { lambda_point, star_point })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::explicit(lambdas, points, constants)
    }

    pub fn explicit(
        lambdas: Vec<Complex64>,
        points: Vec<SolitonPoints>,
        constants: Vec<Complex64>,
    ) -> Result<Self> {
        let cfg = Self { lambdas, points, constants };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.lambdas.len();
        if self.points.len() != n || self.constants.len() != n {
            return Err(Error::Dimension(format!(
                "{} lambdas, {} point pairs, {} constants",
                n,
                self.points.len(),
                self.constants.len()
            )));
        }
        for (j, lam) in self.lambdas.iter().enumerate() {
            if *lam == Complex64::new(0.0, 0.0) || !(lam.re.is_finite() && lam.im.is_finite()) {
                return Err(Error::InvalidParameter(format!("lambda_{} must be finite and nonzero", j + 1)));
            }
            let c = self.constants[j];
            if c == Complex64::new(0.0, 0.0) || !(c.re.is_finite() && c.im.is_finite()) {
                return Err(Error::InvalidParameter(format!("C_{} must be finite and nonzero", j + 1)));
            }
            let pts = &self.points[j];
            let tol = 1e-10 * lam.norm();
            if (pts.lambda_point.lambda() - lam).norm() > tol {
                return Err(Error::InvalidParameter(format!("lambda(Lambda_{}) != lambda_{}", j + 1, j + 1)));
            }
            if (pts.star_point.lambda() + lam).norm() > tol {
                return Err(Error::InvalidParameter(format!(
                    "lambda(Lambda*_{}) != -lambda_{}",
                    j + 1,
                    j + 1
                )));
            }
            let gap = (pts.sigma_star().k() - pts.lambda_point.k()).norm();
            if gap <= 1e-10 * pts.lambda_point.k().norm() {
                return Err(Error::InvalidParameter(format!(
                    "sigma Lambda*_{} coincides with Lambda_{}",
                    j + 1,
                    j + 1
                )));
            }
            for i in 0..j {
                let li = self.lambdas[i];
                if (li * li - lam * lam).norm() <= 1e-12 * (li * li).norm().max((lam * lam).norm()) {
                    return Err(Error::InvalidParameter(format!(
                        "lambda_{}^2 = lambda_{}^2",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn lambdas(&self) -> &[Complex64] {
        &self.lambdas
    }

    pub fn points(&self) -> &[SolitonPoints] {
        &self.points
    }

    pub fn constants(&self) -> &[Complex64] {
        &self.constants
    }

    /// Same spectral data with every `C_j` multiplied by `factor`.
    pub fn with_scaled_constants(&self, factor: Complex64) -> Self {
        Self {
            constants: self.constants.iter().map(|c| c * factor).collect(),
            ..self.clone()
        }
    }

    /// Evaluation points of the matrix rows.
    pub fn row_points(&self) -> Vec<SpectralPoint> {
        self.points
            .iter()
            .map(SolitonPoints::sigma_star)
            .chain(self.points.iter().map(SolitonPoints::sigma_lambda))
            .collect()
    }

    /// Pole points of the matrix columns.
    pub fn column_points(&self) -> Vec<SpectralPoint> {
        self.points
            .iter()
            .map(|p| p.lambda_point)
            .chain(self.points.iter().map(|p| p.star_point))
            .collect()
    }

    /// `(C_1, .., C_N, -C_1, .., -C_N)`.
    pub fn signed_constants(&self) -> Vec<Complex64> {
        self.constants.iter().copied().chain(self.constants.iter().map(|c| -c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DressingOptions {
    /// Multiplier `s` applied to the raw pairing quotient.
    pub kernel_scale: Complex64,
    /// `|det M|` below this times the magnitude bound of `M` (Hadamard bound,
    /// or sum of expansion terms) counts as singular.
    pub singular_rel_threshold: f64,
    /// Largest matrix order `2N` evaluated through the principal-minor
    /// expansion when the kernel separates; `0` always uses LU.
    pub max_expansion_order: usize,
}

impl DressingOptions {
    /// Options with `s` fixed by the residue identity on `bg`.
    pub fn calibrated<B: BackgroundProvider + ?Sized>(bg: &B) -> Result<Self> {
        Ok(Self {
            kernel_scale: calibrate_kernel_scale(bg)?,
            singular_rel_threshold: 1e-12,
            max_expansion_order: 6,
        })
    }
}

/// Raw residue `Res_{P=Q} 3 Omega lambda^2 omega` with the given kernel scale,
/// by the trapezoid rule on the circle `|k - k(Q)| = radius`.
pub fn residue_identity_check<B: BackgroundProvider + ?Sized>(
    q: SpectralPoint,
    bg: &B,
    kernel_scale: Complex64,
    radius: f64,
    quadrature_points: usize,
    x: f64,
    t: f64,
) -> Result<Complex64> {
    if !(radius > 0.0) || radius >= q.k().norm() {
        return Err(Error::InvalidParameter(format!(
            "contour radius {radius} must be positive and exclude k = 0 (|k(Q)| = {})",
            q.k().norm()
        )));
    }
    if quadrature_points < 8 {
        return Err(Error::InvalidParameter("need at least 8 quadrature points".into()));
    }
    let coarse = residue_trapezoid(q, bg, kernel_scale, radius, quadrature_points, x, t)?;
    let fine = residue_trapezoid(q, bg, kernel_scale, radius, 2 * quadrature_points, x, t)?;
    let change = (fine - coarse).norm();
    if change > 1e-8 {
        return Err(Error::QuadratureNotConverged { change });
    }
    Ok(fine)
}

fn residue_trapezoid<B: BackgroundProvider + ?Sized>(
    q: SpectralPoint,
    bg: &B,
    kernel_scale: Complex64,
    radius: f64,
    n: usize,
    x: f64,
    t: f64,
) -> Result<Complex64> {
    let mut sum = Complex64::new(0.0, 0.0);
    for j in 0..n {
        let theta = 2.0 * PI * j as f64 / n as f64;
        let offset = Complex64::from_polar(radius, theta);
        let p = SpectralPoint::new(q.k() + offset)?;
        let omega = bg.kernel_jet(x, t, p, q)?.value * kernel_scale;
        let lam = bg.lambda(p);
        let integrand = 3.0 * omega * lam * lam * bg.omega_weight(p);
        // dk = i r e^{i theta} d theta
        sum += integrand * Complex64::new(0.0, 1.0) * offset;
    }
    // (1 / 2 pi i) * (2 pi / n) * sum
    Ok(sum / (Complex64::new(0.0, 1.0) * n as f64))
}

/// Kernel scale `s` making `Res_{P=Q} 3 Omega lambda^2 omega = 1`.
pub fn calibrate_kernel_scale<B: BackgroundProvider + ?Sized>(bg: &B) -> Result<Complex64> {
    let reference = SpectralPoint::new(Complex64::new(1.0, 0.0))?;
    let raw = residue_identity_check(reference, bg, Complex64::new(1.0, 0.0), 0.1, 256, 0.0, 0.0)?;
    Ok(raw.inv())
}

/// `Omega(x, t, P, Q)` including the kernel scale.
pub fn omega_kernel<B: BackgroundProvider + ?Sized>(
    x: f64,
    t: f64,
    p: SpectralPoint,
    q: SpectralPoint,
    bg: &B,
    kernel_scale: Complex64,
) -> Result<Complex64> {
    Ok(bg.kernel_jet(x, t, p, q)?.value * kernel_scale)
}

/// Kernel matrix and its `x`, `t`, `xt` derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub omega: CMat,
    pub dx: CMat,
    pub dt: CMat,
    pub dxt: CMat,
}

pub fn build_matrix<B: BackgroundProvider + ?Sized>(
    x: f64,
    t: f64,
    cfg: &SolitonConfig,
    bg: &B,
    kernel_scale: Complex64,
) -> Result<KernelMatrix> {
    let rows = cfg.row_points();
    let cols = cfg.column_points();
    let n = rows.len();
    let mut jets: Vec<KernelJet> = Vec::with_capacity(n * n);
    for r in &rows {
        for q in &cols {
            jets.push(bg.kernel_jet(x, t, *r, *q)?.scale(kernel_scale));
        }
    }
    let pick = |f: fn(&KernelJet) -> Complex64| CMat::from_fn(n, n, |i, j| f(&jets[i * n + j]));
    Ok(KernelMatrix {
        omega: pick(|j| j.value),
        dx: pick(|j| j.dx),
        dt: pick(|j| j.dt),
        dxt: pick(|j| j.dxt),
    })
}

/// `diag(C_1, .., C_N, -C_1, .., -C_N)`.
pub fn diag_c(cfg: &SolitonConfig) -> CMat {
    CMat::from_diagonal(&DVector::from_vec(cfg.signed_constants()))
}

/// `det(1 - Omega C)` and `d_x d_t ln det(1 - Omega C)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauJet {
    pub det: Complex64,
    /// Magnitude bound the determinant is compared against: the Hadamard bound
    /// `prod_i ||row_i||` on the LU path, the sum of term magnitudes on the
    /// expansion path.
    pub bound: f64,
    pub log_dxt: Option<Complex64>,
}

/// Principal-minor expansion of `det(1 - Omega C)` for a separable kernel
/// `Omega(P, Q) = s exp(phi(P) - phi(Q)) g(P, Q)`.
///
/// A diagonal similarity turns the matrix into `1 - s G diag(c_j e^{theta_j})`
/// with `theta_j = phi(R_j) - phi(Q_j)`, so
/// `det = sum_S W_S exp(theta_S)` over subsets `S` with constant
/// `W_S = (-s)^|S| det(G_SS) prod_{j in S} c_j` and `theta_S = sum_{j in S} theta_j`.
/// The mixed log-derivative then follows from the bilinear form
/// `tau tau_xt - tau_x tau_t = sum_{S<T} W_S W_T e^{theta_S + theta_T} (a_S - a_T)(b_S - b_T)`,
/// with `a`, `b` the `x`, `t` rates, which avoids the cancellation of the
/// matrix route near zeros of `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct HirotaExpansion {
    weights: Vec<Complex64>,
    rate_x: Vec<Complex64>,
    rate_t: Vec<Complex64>,
}

impl HirotaExpansion {
    /// `None` if the kernel does not separate or `2N` exceeds `max_order`.
    pub fn new<B: BackgroundProvider + ?Sized>(
        cfg: &SolitonConfig,
        bg: &B,
        scale: Complex64,
        max_order: usize,
    ) -> Result<Option<Self>> {
        let (rows, cols) = (cfg.row_points(), cfg.column_points());
        let n = rows.len();
        if n > max_order {
            return Ok(None);
        }
        let mut g = CMat::zeros(n, n);
        for (i, r) in rows.iter().enumerate() {
            for (j, q) in cols.iter().enumerate() {
                match bg.kernel_core(*r, *q)? {
                    Some(v) => g[(i, j)] = v,
                    None => return Ok(None),
                }
            }
        }
        let mut theta = Vec::with_capacity(n);
        for (r, q) in rows.iter().zip(&cols) {
            match (bg.kernel_phase_rates(*r), bg.kernel_phase_rates(*q)) {
                (Some(a), Some(b)) => theta.push((a.0 - b.0, a.1 - b.1)),
                _ => return Ok(None),
            }
        }
        let c = cfg.signed_constants();
        let subsets = 1usize << n;
        let mut weights = Vec::with_capacity(subsets);
        let mut rate_x = Vec::with_capacity(subsets);
        let mut rate_t = Vec::with_capacity(subsets);
        for mask in 0..subsets {
            let idx: Vec<usize> = (0..n).filter(|j| mask >> j & 1 == 1).collect();
            let minor = if idx.is_empty() {
                Complex64::new(1.0, 0.0)
            } else {
                CMat::from_fn(idx.len(), idx.len(), |a, b| g[(idx[a], idx[b])]).determinant()
            };
            let w = idx.iter().fold(minor, |acc, &j| acc * (-scale) * c[j]);
            weights.push(w);
            rate_x.push(idx.iter().map(|&j| theta[j].0).sum());
            rate_t.push(idx.iter().map(|&j| theta[j].1).sum());
        }
        Ok(Some(Self { weights, rate_x, rate_t }))
    }

    pub fn jet(&self, x: f64, t: f64, singular_rel_threshold: f64) -> TauJet {
        let phase: Vec<Complex64> = self.rate_x.iter().zip(&self.rate_t).map(|(a, b)| a * x + b * t).collect();
        // Factor out the largest exponential; ln tau changes by a linear term only.
        let top = phase
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| w.norm() > 0.0)
            .map(|(p, _)| p.re)
            .fold(f64::NEG_INFINITY, f64::max);
        let terms: Vec<Complex64> = phase.iter().zip(&self.weights).map(|(p, w)| w * (p - top).exp()).collect();
        let tau: Complex64 = terms.iter().sum();
        let bound: f64 = terms.iter().map(|z| z.norm()).sum();
        let det = tau * top.exp();
        let bound_abs = bound * top.exp();
        if !(tau.norm() > singular_rel_threshold * bound) {
            return TauJet { det, bound: bound_abs, log_dxt: None };
        }
        let mut bilinear = Complex64::new(0.0, 0.0);
        for s in 0..terms.len() {
            for r in s + 1..terms.len() {
                bilinear += terms[s] * terms[r] * (self.rate_x[s] - self.rate_x[r]) * (self.rate_t[s] - self.rate_t[r]);
            }
        }
        TauJet { det, bound: bound_abs, log_dxt: Some(bilinear / (tau * tau)) }
    }
}

pub fn tau_jet<B: BackgroundProvider + ?Sized>(
    x: f64,
    t: f64,
    cfg: &SolitonConfig,
    bg: &B,
    opts: &DressingOptions,
) -> Result<TauJet> {
    if cfg.is_empty() {
        return Ok(TauJet {
            det: Complex64::new(1.0, 0.0),
            bound: 1.0,
            log_dxt: Some(Complex64::new(0.0, 0.0)),
        });
    }
    if let Some(expansion) = HirotaExpansion::new(cfg, bg, opts.kernel_scale, opts.max_expansion_order)? {
        return Ok(expansion.jet(x, t, opts.singular_rel_threshold));
    }
    tau_jet_lu(x, t, cfg, bg, opts)
}

/// [`tau_jet`] through an LU factorisation of the `2N x 2N` matrix.
pub fn tau_jet_lu<B: BackgroundProvider + ?Sized>(
    x: f64,
    t: f64,
    cfg: &SolitonConfig,
    bg: &B,
    opts: &DressingOptions,
) -> Result<TauJet> {
    if cfg.is_empty() {
        return tau_jet(x, t, cfg, bg, &DressingOptions { max_expansion_order: 0, ..*opts });
    }
    let km = build_matrix(x, t, cfg, bg, opts.kernel_scale)?;
    let c = diag_c(cfg);
    let n = km.omega.nrows();
    let m = CMat::identity(n, n) - &km.omega * &c;
    let m_x = -(&km.dx * &c);
    let m_t = -(&km.dt * &c);
    let m_xt = -(&km.dxt * &c);

    let hadamard = hadamard_bound(&m);
    // Constant scalings R M C leave all traces below unchanged.
    let (r, cs) = equilibrate(&m);
    let scaled = |a: CMat| CMat::from_fn(n, n, |i, j| a[(i, j)] * (r[i] * cs[j]));
    let (m, m_x, m_t, m_xt) = (scaled(m), scaled(m_x), scaled(m_t), scaled(m_xt));
    let lu = m.lu();
    let det = lu.determinant() / (r.iter().product::<f64>() * cs.iter().product::<f64>());
    if !(det.norm() > opts.singular_rel_threshold * hadamard) {
        return Ok(TauJet { det, bound: hadamard, log_dxt: None });
    }
    let a_x = lu.solve(&m_x).ok_or(Error::SolutionSingular { x, t, abs_det: det.norm() })?;
    let a_t = lu.solve(&m_t).ok_or(Error::SolutionSingular { x, t, abs_det: det.norm() })?;
    let a_xt = lu.solve(&m_xt).ok_or(Error::SolutionSingular { x, t, abs_det: det.norm() })?;
    // d_xt ln det M = tr(M^-1 M_xt) - tr(M^-1 M_x M^-1 M_t)
    let log_dxt = a_xt.trace() - (&a_x * &a_t).trace();
    Ok(TauJet { det, bound: hadamard, log_dxt: Some(log_dxt) })
}

/// Row and column scalings `(r, c)`, powers of two, such that every row and
/// column of `diag(r) m diag(c)` has largest entry of order one.
fn equilibrate(m: &CMat) -> (Vec<f64>, Vec<f64>) {
    let n = m.nrows();
    let pow2 = |v: f64| if v > 0.0 && v.is_finite() { (-v.log2().round()).exp2() } else { 1.0 };
    let r: Vec<f64> = (0..n).map(|i| pow2((0..n).map(|j| m[(i, j)].norm()).fold(0.0, f64::max))).collect();
    let c: Vec<f64> = (0..n).map(|j| pow2((0..n).map(|i| m[(i, j)].norm() * r[i]).fold(0.0, f64::max))).collect();
    (r, c)
}

fn hadamard_bound(m: &CMat) -> f64 {
    m.row_iter().map(|r| r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).product()
}

/// `e^u = e^v - d_x d_t ln det(1 - Omega C)`.
pub fn exp_u<B: BackgroundProvider + ?Sized>(
    x: f64,
    t: f64,
    cfg: &SolitonConfig,
    bg: &B,
    opts: &DressingOptions,
) -> Result<Complex64> {
    let ev = bg.background_field(x, t)?;
    let jet = tau_jet(x, t, cfg, bg, opts)?;
    match jet.log_dxt {
        Some(d) => Ok(ev - d),
        None => Err(Error::SolutionSingular { x, t, abs_det: jet.det.norm() }),
    }
}

/// `e^u` from the residue conditions on the ansatz
/// `Psi_3(P) = e_3(P) + sum_m Omega(P, Q_m) alpha_m`.
///
/// The conditions read `alpha = c (e_3(R) + Omega alpha)` with `R` the row
/// points and `c` the signed constants; `e^u` comes from the `t`-derivative
/// of `sum_m e_2(sigma Q_m) alpha_m`. Assumes a calibrated kernel scale.
pub fn exp_u_via_linear_system<B: BackgroundProvider + ?Sized>(
    x: f64,
    t: f64,
    cfg: &SolitonConfig,
    bg: &B,
    opts: &DressingOptions,
) -> Result<Complex64> {
    let ev = bg.background_field(x, t)?;
    if cfg.is_empty() {
        return Ok(ev);
    }
    let rows = cfg.row_points();
    let cols = cfg.column_points();
    let weights = cfg.signed_constants();
    let n = rows.len();

    let mut omega = CMat::zeros(n, n);
    let mut omega_t = CMat::zeros(n, n);
    for (i, r) in rows.iter().enumerate() {
        for (j, q) in cols.iter().enumerate() {
            let jet = bg.kernel_jet(x, t, *r, *q)?.scale(opts.kernel_scale);
            omega[(i, j)] = jet.value;
            omega_t[(i, j)] = jet.dt;
        }
    }
    let row_baker: Vec<_> = rows.iter().map(|r| bg.baker_jet(x, t, *r)).collect();
    let col_baker: Vec<_> = cols.iter().map(|q| bg.baker_jet(x, t, bg.sigma(*q))).collect();

    let system = CMat::from_fn(n, n, |i, j| {
        let delta = if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
        delta - weights[i] * omega[(i, j)]
    });
    let scale = hadamard_bound(&system);
    // Solve the scaled system (R S C) (C^-1 alpha) = R rhs.
    let (r, cs) = equilibrate(&system);
    let system = CMat::from_fn(n, n, |i, j| system[(i, j)] * (r[i] * cs[j]));
    let omega_t = CMat::from_fn(n, n, |i, j| omega_t[(i, j)] * (r[i] * cs[j]));
    let rhs = DVector::from_fn(n, |i, _| weights[i] * row_baker[i].value.psi3 * r[i]);
    let lu = system.lu();
    let det = lu.determinant() / (r.iter().product::<f64>() * cs.iter().product::<f64>());
    if !(det.norm() > opts.singular_rel_threshold * scale) {
        return Err(Error::SolutionSingular { x, t, abs_det: det.norm() });
    }
    let alpha = lu.solve(&rhs).ok_or(Error::SolutionSingular { x, t, abs_det: det.norm() })?;
    let omega_t_alpha = &omega_t * &alpha;
    let rhs_t = DVector::from_fn(n, |i, _| weights[i] * (row_baker[i].dt.psi3 * r[i] + omega_t_alpha[i]));
    let alpha_t = lu.solve(&rhs_t).ok_or(Error::SolutionSingular { x, t, abs_det: det.norm() })?;

    let sum_t: Complex64 = (0..n)
        .map(|m| (col_baker[m].dt.psi2 * alpha[m] + col_baker[m].value.psi2 * alpha_t[m]) * cs[m])
        .sum();
    Ok(ev - opts.kernel_scale * sum_t)
}

/// An N-soliton field on a background, evaluated pointwise.
#[derive(Debug, Clone)]
pub struct DressedField<'a, B: BackgroundProvider + ?Sized> {
    pub bg: &'a B,
    pub cfg: SolitonConfig,
    pub opts: DressingOptions,
}

impl<'a, B: BackgroundProvider + ?Sized> DressedField<'a, B> {
    pub fn new(bg: &'a B, cfg: SolitonConfig) -> Result<Self> {
        let opts = DressingOptions::calibrated(bg)?;
        Ok(Self { bg, cfg, opts })
    }

    pub fn with_options(bg: &'a B, cfg: SolitonConfig, opts: DressingOptions) -> Self {
        Self { bg, cfg, opts }
    }
}

impl<B: BackgroundProvider + ?Sized> FieldSource for DressedField<'_, B> {
    fn exp_u(&self, x: f64, t: f64) -> Result<Complex64> {
        exp_u(x, t, &self.cfg, self.bg, &self.opts)
    }

    fn exp_v(&self, x: f64, t: f64) -> Result<Complex64> {
        self.bg.background_field(x, t)
    }

    fn tau(&self, x: f64, t: f64) -> Option<Complex64> {
        tau_jet(x, t, &self.cfg, self.bg, &self.opts).ok().map(|j| j.det)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_curve::VacuumProvider;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn pt(re: f64, im: f64) -> SpectralPoint {
        SpectralPoint::new(c(re, im)).unwrap()
    }

    fn one_soliton() -> SolitonConfig {
        SolitonConfig::canonical(vec![c(1.0, 0.0)], vec![c(1.0, 0.0)]).unwrap()
    }

    #[test]
    fn kernel_example_at_origin() {
        let v = omega_kernel(0.0, 0.0, pt(2.0, 0.0), pt(1.0, 0.0), &VacuumProvider, c(1.0, 0.0)).unwrap();
        assert!((v - c(-0.25, 0.0)).norm() < 1e-15);
        // d/dx = (k - kk) Omega
        let h = 1e-6;
        let f = |x: f64| omega_kernel(x, 0.0, pt(2.0, 0.0), pt(1.0, 0.0), &VacuumProvider, c(1.0, 0.0)).unwrap();
        let fd = (f(h) - f(-h)) / (2.0 * h);
        let jet = VacuumProvider.kernel_jet(0.0, 0.0, pt(2.0, 0.0), pt(1.0, 0.0)).unwrap();
        assert!((jet.dx - c(-0.25, 0.0)).norm() < 1e-15);
        assert!((fd - jet.dx).norm() < 1e-8);
    }

    #[test]
    fn kernel_decays_to_minus_infinity() {
        let p = pt(2.0, 0.3);
        let q = pt(1.0, 0.0);
        let near = omega_kernel(-5.0, 0.3, p, q, &VacuumProvider, c(1.0, 0.0)).unwrap().norm();
        let far = omega_kernel(-40.0, 0.3, p, q, &VacuumProvider, c(1.0, 0.0)).unwrap().norm();
        assert!(far < 1e-15 && far < near);
    }

    #[test]
    fn calibration_is_minus_one_third_on_vacuum() {
        let s = calibrate_kernel_scale(&VacuumProvider).unwrap();
        assert!((s - c(-1.0 / 3.0, 0.0)).norm() < 1e-13, "{s}");
    }

    #[test]
    fn residue_identity_is_stable() {
        let s = c(-1.0 / 3.0, 0.0);
        let q = pt(1.0, 0.0);
        let base = residue_identity_check(q, &VacuumProvider, s, 0.1, 256, 0.0, 0.0).unwrap();
        assert!((base - 1.0).norm() < 1e-10);
        for r in [0.05, 0.2] {
            let v = residue_identity_check(q, &VacuumProvider, s, r, 256, 0.0, 0.0).unwrap();
            assert!((v - base).norm() < 1e-9);
        }
        for (x, t) in [(1.5, -0.5), (-2.0, 3.0)] {
            let v = residue_identity_check(q, &VacuumProvider, s, 0.1, 256, x, t).unwrap();
            assert!((v - base).norm() < 1e-9);
        }
        assert!(residue_identity_check(q, &VacuumProvider, s, 1.5, 256, 0.0, 0.0).is_err());
    }

    #[test]
    fn matrix_shapes_and_diag() {
        let cfg = one_soliton();
        let km = build_matrix(0.1, 0.2, &cfg, &VacuumProvider, c(-1.0 / 3.0, 0.0)).unwrap();
        assert_eq!(km.omega.shape(), (2, 2));
        let cfg3 = SolitonConfig::canonical(vec![c(1.0, 0.0)], vec![c(3.0, 0.0)]).unwrap();
        let d = diag_c(&cfg3);
        assert_eq!(d[(0, 0)], c(3.0, 0.0));
        assert_eq!(d[(1, 1)], c(-3.0, 0.0));
        assert_eq!(d[(0, 1)], c(0.0, 0.0));

        let cfg2 = SolitonConfig::canonical(vec![c(1.0, 0.0), c(2.2, 0.0)], vec![c(1.0, 0.0), c(0.5, 0.0)]).unwrap();
        let km2 = build_matrix(0.3, -0.4, &cfg2, &VacuumProvider, c(-1.0 / 3.0, 0.0)).unwrap();
        assert_eq!(km2.omega.shape(), (4, 4));
        assert!(km2.omega.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    }

    #[test]
    fn empty_config_returns_background() {
        let opts = DressingOptions::calibrated(&VacuumProvider).unwrap();
        let cfg = SolitonConfig::empty();
        assert_eq!(exp_u(0.3, 0.1, &cfg, &VacuumProvider, &opts).unwrap(), c(1.0, 0.0));
        assert_eq!(exp_u_via_linear_system(0.3, 0.1, &cfg, &VacuumProvider, &opts).unwrap(), c(1.0, 0.0));
    }

    #[test]
    fn tiny_constants_leave_background() {
        let opts = DressingOptions::calibrated(&VacuumProvider).unwrap();
        let cfg = SolitonConfig::canonical(vec![c(1.0, 0.0)], vec![c(1e-8, 0.0)]).unwrap();
        let w = exp_u(0.4, -0.2, &cfg, &VacuumProvider, &opts).unwrap();
        assert!((w - 1.0).norm() <= 1e-6);
    }

    #[test]
    fn config_validation() {
        let bad_sq = SolitonConfig::canonical(vec![c(1.0, 0.0), c(-1.0, 0.0)], vec![c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(bad_sq.is_err());
        let zero_c = SolitonConfig::canonical(vec![c(1.0, 0.0)], vec![c(0.0, 0.0)]);
        assert!(zero_c.is_err());
        let lengths = SolitonConfig::canonical(vec![c(1.0, 0.0)], vec![]);
        assert!(matches!(lengths, Err(Error::Dimension(_))));
        // Lambda* over +lambda instead of -lambda.
        let wrong = SolitonConfig::explicit(
            vec![c(1.0, 0.0)],
            vec![SolitonPoints { lambda_point: pt(1.0, 0.0), star_point: pt(1.0, 0.0) }],
            vec![c(1.0, 0.0)],
        );
        assert!(wrong.is_err());
        // sigma Lambda* = Lambda.
        let coincident = SolitonConfig::explicit(
            vec![c(1.0, 0.0)],
            vec![SolitonPoints { lambda_point: pt(1.0, 0.0), star_point: pt(-1.0, 0.0) }],
            vec![c(1.0, 0.0)],
        );
        assert!(coincident.is_err());
    }

    #[test]
    fn canonical_placement_is_over_lambda() {
        let cfg = SolitonConfig::canonical(vec![c(2.2, 0.0), c(0.3, 1.0)], vec![c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        for (lam, p) in cfg.lambdas().iter().zip(cfg.points()) {
            assert!((p.lambda_point.lambda() - lam).norm() < 1e-13);
            assert!((p.sigma_star().lambda() - lam).norm() < 1e-13);
        }
        // Real positive lambda: Lambda itself sits on the positive k axis.
        let k = cfg.points()[0].lambda_point.k();
        assert!(k.im.abs() < 1e-16 && k.re > 0.0);
    }

    #[test]
    fn routes_agree_for_one_soliton() {
        let opts = DressingOptions::calibrated(&VacuumProvider).unwrap();
        let cfg = SolitonConfig::canonical(vec![c(1.0, 0.0)], vec![c(0.7, 0.0)]).unwrap();
        for (x, t) in [(0.3, -0.2), (1.1, 0.5), (-2.0, 1.7)] {
            let a = exp_u(x, t, &cfg, &VacuumProvider, &opts).unwrap();
            let b = exp_u_via_linear_system(x, t, &cfg, &VacuumProvider, &opts).unwrap();
            assert!((a - b).norm() <= 1e-10 * a.norm(), "{a} vs {b}");
        }
    }

    #[test]
    fn expansion_matches_lu() {
        let opts = DressingOptions::calibrated(&VacuumProvider).unwrap();
        let cfg = SolitonConfig::canonical(vec![c(1.0, 0.0), c(2.2, 0.0)], vec![c(1.0, 0.0), c(0.5, 0.3)]).unwrap();
        let exp = HirotaExpansion::new(&cfg, &VacuumProvider, opts.kernel_scale, 6).unwrap().unwrap();
        for (x, t) in [(0.3, -0.2), (1.1, 0.5), (-2.0, 1.7), (4.0, 4.0)] {
            let a = exp.jet(x, t, 1e-12);
            let b = tau_jet_lu(x, t, &cfg, &VacuumProvider, &opts).unwrap();
            assert!((a.det - b.det).norm() <= 1e-11 * a.det.norm(), "{} vs {}", a.det, b.det);
            let (da, db) = (a.log_dxt.unwrap(), b.log_dxt.unwrap());
            assert!((da - db).norm() <= 1e-10 * da.norm().max(1.0), "{da} vs {db}");
        }
        assert!(HirotaExpansion::new(&cfg, &VacuumProvider, opts.kernel_scale, 2).unwrap().is_none());
    }
}
