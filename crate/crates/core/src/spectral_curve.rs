//! Genus-zero spectral curve `lambda = k^3`, its involutions, the vacuum
//! Baker–Akhiezer vector and the bilinear pairing between Baker–Akhiezer
//! vectors.
//!
//! Points are represented by the local coordinate `k` near `P_inf`; the
//! coordinate near `P_0` is `q = 1/k`. The marked points themselves
//! (`k = 0` and `k = inf`) are never represented as [`SpectralPoint`]s.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `exp(2 pi i / 3)`.
pub fn cube_root_of_unity() -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPoint {
    k: Complex64,
}

impl SpectralPoint {
    pub fn new(k: Complex64) -> Result<Self> {
        if !(k.re.is_finite() && k.im.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite spectral coordinate {k}")));
        }
        if k == Complex64::new(0.0, 0.0) {
            return Err(Error::MarkedPoint);
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> Complex64 {
        self.k
    }

    pub fn q(&self) -> Complex64 {
        self.k.inv()
    }

    pub fn lambda(&self) -> Complex64 {
        self.k * self.k * self.k
    }

    /// Holomorphic involution, `lambda(sigma P) = -lambda(P)`.
    pub fn sigma(&self) -> Self {
        Self { k: -self.k }
    }

    /// Antiholomorphic involution, `lambda(tau P) = conj(lambda(P))`.
    pub fn tau(&self) -> Self {
        Self { k: self.k.conj() }
    }

    /// `Re int Omega_inf` with `Omega_inf = dk`.
    pub fn kappa_inf(&self) -> f64 {
        self.k.re
    }

    /// `Re int Omega_0` with `Omega_0 = dq`, `q = 1/k`.
    pub fn kappa_0(&self) -> f64 {
        self.k.inv().re
    }
}

/// The three points over `lambda0`: the principal cube root
/// (argument in `(-pi/3, pi/3]`) followed by its two rotations by `exp(2 pi i/3)`.
pub fn preimages(lambda0: Complex64) -> Result<[SpectralPoint; 3]> {
    if lambda0 == Complex64::new(0.0, 0.0) {
        return Err(Error::MarkedPoint);
    }
    let k0 = principal_cube_root(lambda0);
    let eps = cube_root_of_unity();
    Ok([
        SpectralPoint::new(k0)?,
        SpectralPoint::new(k0 * eps)?,
        SpectralPoint::new(k0 * eps * eps)?,
    ])
}

pub fn principal_cube_root(z: Complex64) -> Complex64 {
    let (r, phi) = z.to_polar();
    // to_polar gives phi in (-pi, pi]; phi / 3 lands in (-pi/3, pi/3].
    Complex64::from_polar(r.cbrt(), phi / 3.0)
}

/// Components of a Baker–Akhiezer vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BAValue {
    pub psi1: Complex64,
    pub psi2: Complex64,
    pub psi3: Complex64,
}

impl BAValue {
    pub fn as_array(&self) -> [Complex64; 3] {
        [self.psi1, self.psi2, self.psi3]
    }

    pub fn from_array(a: [Complex64; 3]) -> Self {
        Self { psi1: a[0], psi2: a[1], psi3: a[2] }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self { psi1: self.psi1 * s, psi2: self.psi2 * s, psi3: self.psi3 * s }
    }
}

/// A Baker–Akhiezer value with its `x` and `t` derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BakerJet {
    pub value: BAValue,
    pub dx: BAValue,
    pub dt: BAValue,
}

/// Vacuum (`u = 0`) Baker–Akhiezer vector `(k^-1, k^-2, k^-3) exp(k x + t/k)`.
pub fn baker_vacuum(x: f64, t: f64, p: SpectralPoint) -> BAValue {
    baker_vacuum_jet(x, t, p).value
}

pub fn baker_vacuum_jet(x: f64, t: f64, p: SpectralPoint) -> BakerJet {
    let k = p.k();
    let q = k.inv();
    let e = (k * x + q * t).exp();
    let value = BAValue { psi1: q * e, psi2: q * q * e, psi3: q * q * q * e };
    BakerJet { value, dx: value.scale(k), dt: value.scale(q) }
}

/// `<psi | phi> = -psi1 phi2 + psi2 phi1 + lambda psi3 phi3`.
pub fn pairing(psi: &BAValue, phi: &BAValue, lam_p: Complex64) -> Complex64 {
    -psi.psi1 * phi.psi2 + psi.psi2 * phi.psi1 + lam_p * psi.psi3 * phi.psi3
}

pub type Mat3 = [[Complex64; 3]; 3];

/// `L` of the zero-curvature pair, for a given `u_x` and spectral value.
pub fn lax_l(u_x: Complex64, lambda: Complex64) -> Mat3 {
    let z = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    [[-u_x, z, lambda], [one, u_x, z], [z, one, z]]
}

/// `A` of the zero-curvature pair, for a given `u` and spectral value.
pub fn lax_a(u: Complex64, lambda: Complex64) -> Mat3 {
    let z = Complex64::new(0.0, 0.0);
    [[z, (-2.0 * u).exp(), z], [z, z, u.exp()], [u.exp() / lambda, z, z]]
}

pub fn mat3_apply(m: &Mat3, v: &BAValue) -> BAValue {
    let a = v.as_array();
    let row = |i: usize| m[i][0] * a[0] + m[i][1] * a[1] + m[i][2] * a[2];
    BAValue { psi1: row(0), psi2: row(1), psi3: row(2) }
}

/// Raw kernel `<e(P)|e(sigma Q)> / (lambda(P) - lambda(Q))` and its `x`, `t`
/// and mixed derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelJet {
    pub value: Complex64,
    pub dx: Complex64,
    pub dt: Complex64,
    pub dxt: Complex64,
}

impl KernelJet {
    pub fn scale(&self, s: Complex64) -> Self {
        Self { value: self.value * s, dx: self.dx * s, dt: self.dt * s, dxt: self.dxt * s }
    }
}

/// What the soliton construction needs from a background solution.
///
/// Only the vacuum provider ships; a theta-function provider for genus > 0
/// would implement the same contract.
pub trait BackgroundProvider: Sync {
    fn lambda(&self, p: SpectralPoint) -> Complex64 {
        p.lambda()
    }

    fn sigma(&self, p: SpectralPoint) -> SpectralPoint {
        p.sigma()
    }

    fn baker(&self, x: f64, t: f64, p: SpectralPoint) -> BAValue {
        self.baker_jet(x, t, p).value
    }

    fn baker_jet(&self, x: f64, t: f64, p: SpectralPoint) -> BakerJet;

    /// `<e(P) | e(sigma P)>`, independent of `(x, t)`.
    fn pairing_diag_constant(&self, p: SpectralPoint) -> Complex64;

    /// `omega / dk` at `P` for the third-kind differential with residue `+1` at `P_0`.
    fn omega_weight(&self, p: SpectralPoint) -> Complex64;

    fn kappa_inf(&self, p: SpectralPoint) -> f64;

    fn kappa_0(&self, p: SpectralPoint) -> f64;

    /// `e^v` at `(x, t)`.
    fn background_field(&self, x: f64, t: f64) -> Result<Complex64>;

    /// Background `u` and `u_x` at `(x, t)`.
    fn background_u(&self, x: f64, t: f64) -> Result<(Complex64, Complex64)>;

    /// Raw (unit-scale) kernel with derivatives. Fails only when `P = Q`.
    fn kernel_jet(&self, x: f64, t: f64, p: SpectralPoint, q: SpectralPoint) -> Result<KernelJet>;

    /// For kernels of the form `exp(phi(P) - phi(Q)) g(P, Q)` with `phi`
    /// linear in `(x, t)` and vanishing at the origin: `(d_x phi, d_t phi)` at `P`.
    fn kernel_phase_rates(&self, _p: SpectralPoint) -> Option<(Complex64, Complex64)> {
        None
    }

    /// `g(P, Q)` of a separable kernel, `None` if the kernel does not separate.
    fn kernel_core(&self, _p: SpectralPoint, _q: SpectralPoint) -> Result<Option<Complex64>> {
        Ok(None)
    }
}

/// The trivial background `u = 0` on the Riemann sphere.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VacuumProvider;

impl BackgroundProvider for VacuumProvider {
    fn baker_jet(&self, x: f64, t: f64, p: SpectralPoint) -> BakerJet {
        baker_vacuum_jet(x, t, p)
    }

    fn pairing_diag_constant(&self, p: SpectralPoint) -> Complex64 {
        -3.0 / p.lambda()
    }

    fn omega_weight(&self, p: SpectralPoint) -> Complex64 {
        p.q()
    }

    fn kappa_inf(&self, p: SpectralPoint) -> f64 {
        p.kappa_inf()
    }

    fn kappa_0(&self, p: SpectralPoint) -> f64 {
        p.kappa_0()
    }

    fn background_field(&self, _x: f64, _t: f64) -> Result<Complex64> {
        Ok(Complex64::new(1.0, 0.0))
    }

    fn background_u(&self, _x: f64, _t: f64) -> Result<(Complex64, Complex64)> {
        Ok((Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)))
    }

    /// Closed form `-exp((k - kk) x + (1/k - 1/kk) t) / (k^2 kk^3 (k - kk))`.
    ///
    /// The factor `k^2 + k kk + kk^2` cancels between the pairing and
    /// `lambda(P) - lambda(Q)`, so points over the same `lambda` are fine.
    fn kernel_jet(&self, x: f64, t: f64, p: SpectralPoint, q: SpectralPoint) -> Result<KernelJet> {
        let (k, kk) = (p.k(), q.k());
        let diff = k - kk;
        if diff.norm() <= 1e-14 * k.norm().max(kk.norm()) {
            return Err(Error::CoincidentSpectrum { re: kk.re, im: kk.im });
        }
        let rate_x = diff;
        let rate_t = k.inv() - kk.inv();
        let value = -(rate_x * x + rate_t * t).exp() / (k * k * kk * kk * kk * diff);
        Ok(KernelJet {
            value,
            dx: rate_x * value,
            dt: rate_t * value,
            dxt: rate_x * rate_t * value,
        })
    }

    fn kernel_phase_rates(&self, p: SpectralPoint) -> Option<(Complex64, Complex64)> {
        Some((p.k(), p.q()))
    }

    fn kernel_core(&self, p: SpectralPoint, q: SpectralPoint) -> Result<Option<Complex64>> {
        let (k, kk) = (p.k(), q.k());
        let diff = k - kk;
        if diff.norm() <= 1e-14 * k.norm().max(kk.norm()) {
            return Err(Error::CoincidentSpectrum { re: kk.re, im: kk.im });
        }
        Ok(Some(-1.0 / (k * k * kk * kk * kk * diff)))
    }
}
