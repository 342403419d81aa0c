//! Physical constants, drift fields, the electromagnetic potential, the
//! diffusion tensor built from the current drift, and residual evaluators
//! for the equations a candidate `(u, v, A)` must satisfy.
//!
//! Conventions:
//! - `u`, `v` are contravariant; the potential `A` is covariant with
//!   `A₀ = V/c` and `A_k = −A⃗ᵏ` for spatial `k`.
//! - The diffusion tensor is `wⁱʲ = (h/4πm)[2vⁱvʲ/(v_k vᵏ) − gⁱʲ]`. Its
//!   matrix inverse has the closed form `(4πm/h)[2v_i v_j/(v_k vᵏ) − g_ij]`.
//! - `h` is the full (non-reduced) Planck constant.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ConstantField, FdConfig, ScalarField, SharedField, VectorField};
use crate::gauge::Gauge;
use crate::geometry::{metric_trace, Covector, FourVector, Metric, Tensor2, METRIC_DIAG};

/// Mass, charge, speed of light and Planck's constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConstants {
    pub m: f64,
    pub q: f64,
    pub c: f64,
    pub h: f64,
}

/// CODATA electron mass (kg).
pub const ELECTRON_MASS: f64 = 9.109_383_7e-31;
/// Elementary charge (C).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Speed of light (m/s).
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;
/// Planck constant (J·s).
pub const PLANCK: f64 = 6.626_070_15e-34;

impl PhysicalConstants {
    pub fn new(m: f64, q: f64, c: f64, h: f64) -> Result<Self> {
        let k = PhysicalConstants { m, q, c, h };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !(ok(self.m) && ok(self.c) && ok(self.h) && self.q.is_finite()) {
            return Err(Error::Domain(format!(
                "constants require m, c, h > 0 and finite q: {self:?}"
            )));
        }
        Ok(())
    }

    /// `m = c = h = 1`, `q = 0`.
    pub fn natural() -> Self {
        PhysicalConstants {
            m: 1.0,
            q: 0.0,
            c: 1.0,
            h: 1.0,
        }
    }

    pub fn electron() -> Self {
        PhysicalConstants {
            m: ELECTRON_MASS,
            q: -ELEMENTARY_CHARGE,
            c: SPEED_OF_LIGHT,
            h: PLANCK,
        }
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn with_q(mut self, q: f64) -> Self {
        self.q = q;
        self
    }

    /// `h/(4πm)`, the diffusion coefficient of the particle at rest.
    pub fn diffusion_scale(&self) -> f64 {
        self.h / (4.0 * PI * self.m)
    }

    /// `2πmc²/h`, decay rate of the spacelike/timelike density ratio.
    pub fn spacelike_rate(&self) -> f64 {
        2.0 * PI * self.m * self.c * self.c / self.h
    }
}

/// Osmotic drift `u` and current drift `v`, both parameter-free.
#[derive(Clone)]
pub struct DriftFields {
    pub u: SharedField,
    pub v: SharedField,
}

struct HalfCombination {
    a: SharedField,
    b: SharedField,
    sign: f64,
}

impl VectorField for HalfCombination {
    fn value(&self, x: &FourVector) -> Result<[f64; 4]> {
        let a = self.a.value(x)?;
        let b = self.b.value(x)?;
        Ok(std::array::from_fn(|k| 0.5 * (a[k] + self.sign * b[k])))
    }
    fn jacobian(&self, x: &FourVector, fd: &FdConfig) -> Result<crate::fields::Jacobian> {
        let a = self.a.jacobian(x, fd)?;
        let b = self.b.jacobian(x, fd)?;
        Ok(std::array::from_fn(|i| {
            std::array::from_fn(|k| 0.5 * (a[i][k] + self.sign * b[i][k]))
        }))
    }
    fn hessian(&self, x: &FourVector, fd: &FdConfig) -> Result<crate::fields::Hessian> {
        let a = self.a.hessian(x, fd)?;
        let b = self.b.hessian(x, fd)?;
        Ok(std::array::from_fn(|k| {
            std::array::from_fn(|i| {
                std::array::from_fn(|j| 0.5 * (a[k][i][j] + self.sign * b[k][i][j]))
            })
        }))
    }
    fn has_analytic_derivatives(&self) -> bool {
        self.a.has_analytic_derivatives() && self.b.has_analytic_derivatives()
    }
}

impl DriftFields {
    pub fn new(u: SharedField, v: SharedField) -> Self {
        DriftFields { u, v }
    }

    pub fn constant(u: FourVector, v: FourVector) -> Self {
        DriftFields {
            u: Arc::new(ConstantField(u.0)),
            v: Arc::new(ConstantField(v.0)),
        }
    }

    /// `u = 0`, `v = (c, 0, 0, 0)`.
    pub fn free_particle_rest(k: &PhysicalConstants) -> Self {
        Self::constant(FourVector::ZERO, FourVector::new(k.c, 0.0, 0.0, 0.0))
    }

    /// Builds `u = (v₊ − v₋)/2`, `v = (v₊ + v₋)/2`.
    pub fn from_forward_backward(v_plus: SharedField, v_minus: SharedField) -> Self {
        DriftFields {
            u: Arc::new(HalfCombination {
                a: Arc::clone(&v_plus),
                b: Arc::clone(&v_minus),
                sign: -1.0,
            }),
            v: Arc::new(HalfCombination {
                a: v_plus,
                b: v_minus,
                sign: 1.0,
            }),
        }
    }

    pub fn u_at(&self, x: &FourVector) -> Result<FourVector> {
        Ok(FourVector(self.u.value(x)?))
    }

    pub fn v_at(&self, x: &FourVector) -> Result<FourVector> {
        Ok(FourVector(self.v.value(x)?))
    }
}

/// Covariant electromagnetic four-potential `A_i(x̄)`.
#[derive(Clone)]
pub struct EMPotential {
    pub a: SharedField,
}

impl EMPotential {
    pub fn new(a: SharedField) -> Self {
        EMPotential { a }
    }

    pub fn zero() -> Self {
        EMPotential {
            a: Arc::new(ConstantField([0.0; 4])),
        }
    }

    /// Constant scalar potential `V`: `A₀ = V/c`.
    pub fn constant_scalar(potential: f64, c: f64) -> Self {
        EMPotential {
            a: Arc::new(ConstantField([potential / c, 0.0, 0.0, 0.0])),
        }
    }

    /// `A₀ = slope · x¹`, a uniform field along the first spatial axis.
    pub fn linear(slope: f64) -> Self {
        let mut m = [[0.0; 4]; 4];
        m[0][1] = slope;
        EMPotential {
            a: Arc::new(crate::fields::AffineField {
                offset: [0.0; 4],
                slope: m,
            }),
        }
    }

    /// From a scalar potential `V` and vector potential `A⃗`.
    pub fn from_scalar_vector(potential: f64, vector: [f64; 3], c: f64) -> Self {
        EMPotential {
            a: Arc::new(ConstantField([
                potential / c,
                -vector[0],
                -vector[1],
                -vector[2],
            ])),
        }
    }

    pub fn at(&self, x: &FourVector) -> Result<Covector> {
        Ok(Covector(self.a.value(x)?))
    }
}

/// `(v₊, v₋) = (v + u, v − u)` at `x̄`.
pub fn forward_backward_drifts(d: &DriftFields, x: &FourVector) -> Result<(FourVector, FourVector)> {
    let u = d.u_at(x)?;
    let v = d.v_at(x)?;
    Ok((v + u, v - u))
}

/// Closed-form diffusion tensor for a given current drift value.
pub fn diffusion_from_drift(v: &FourVector, k: &PhysicalConstants) -> Result<Tensor2> {
    let n = v.dot(v);
    if !(n > 1e-14 * v.max_abs().powi(2)) || !n.is_finite() {
        return Err(Error::Singular(format!(
            "current drift {v} is not timelike (v_k v^k = {n:e})"
        )));
    }
    Ok((v.outer(v) * (2.0 / n) - Metric::upper()) * k.diffusion_scale())
}

/// Closed-form matrix inverse `w_ij` for a given current drift value.
pub fn diffusion_inverse_from_drift(v: &FourVector, k: &PhysicalConstants) -> Result<Tensor2> {
    let n = v.dot(v);
    if !(n > 1e-14 * v.max_abs().powi(2)) || !n.is_finite() {
        return Err(Error::Singular(format!(
            "current drift {v} is not timelike (v_k v^k = {n:e})"
        )));
    }
    let vl = FourVector(v.lower().0);
    Ok((vl.outer(&vl) * (2.0 / n) - Metric::lower()) / k.diffusion_scale())
}

/// `wⁱʲ(x̄)`.
pub fn diffusion_tensor(d: &DriftFields, k: &PhysicalConstants, x: &FourVector) -> Result<Tensor2> {
    diffusion_from_drift(&d.v_at(x)?, k)
}

/// Covariant inverse `w_ij(x̄)` with `w_ik wʲᵏ = δ_iʲ`.
pub fn diffusion_inverse(d: &DriftFields, k: &PhysicalConstants, x: &FourVector) -> Result<Tensor2> {
    diffusion_inverse_from_drift(&d.v_at(x)?, k)
}

/// Residuals of the algebraic identities of the diffusion tensor built
/// from a current drift `v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiffusionIdentities {
    /// `max |wⁱʲ − wʲⁱ|`
    pub symmetry: f64,
    /// `max |w_ik wʲᵏ − δ_iʲ|`
    pub inverse: f64,
    /// `max |w_ij vʲ − (4πm/h) v_i|` relative to `(4πm/h) max|v_i|`
    pub contraction: f64,
    /// `|g_ij wⁱʲ + h/(2πm)|` relative to `h/(2πm)`
    pub trace: f64,
    /// Smallest eigenvalue of the matrix `wⁱʲ`.
    pub min_eigenvalue: f64,
}

pub fn diffusion_identities(v: &FourVector, k: &PhysicalConstants) -> Result<DiffusionIdentities> {
    let w = diffusion_from_drift(v, k)?;
    let winv = diffusion_inverse_from_drift(v, k)?;
    let max_abs = |t: &Tensor2| t.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let inverse = max_abs(&(winv * w - Tensor2::identity()));
    let lowered = v.lower();
    let target = 1.0 / k.diffusion_scale();
    let wv = winv * v.to_na();
    let contraction = (0..4)
        .map(|i| (wv[i] - target * lowered[i]).abs())
        .fold(0.0_f64, f64::max)
        / (target * v.max_abs());
    let tr = 2.0 * k.diffusion_scale();
    let trace = (metric_trace(&w) + tr).abs() / tr;
    let min_eigenvalue = nalgebra::SymmetricEigen::new(w).eigenvalues.min();
    Ok(DiffusionIdentities {
        symmetry: max_abs(&(w - w.transpose())),
        inverse,
        contraction,
        trace,
        min_eigenvalue,
    })
}

/// `g_ij(vⁱvʲ + uⁱuʲ) − c²`.
pub fn normalization_residual(d: &DriftFields, k: &PhysicalConstants, x: &FourVector) -> Result<f64> {
    let u = d.u_at(x)?;
    let v = d.v_at(x)?;
    Ok(v.dot(&v) + u.dot(&u) - k.c * k.c)
}

/// `(ũ, ṽ) = (c u/|v|, c v/|v|)` with `|v|² = g_ij(vⁱvʲ + uⁱuʲ)`.
pub fn normalized_vectors(
    d: &DriftFields,
    k: &PhysicalConstants,
    x: &FourVector,
) -> Result<(FourVector, FourVector)> {
    normalize_pair(&d.u_at(x)?, &d.v_at(x)?, k.c)
}

pub fn normalize_pair(u: &FourVector, v: &FourVector, c: f64) -> Result<(FourVector, FourVector)> {
    let n2 = v.dot(v) + u.dot(u);
    if !(n2 > 0.0) || !n2.is_finite() {
        return Err(Error::Domain(format!(
            "normalization needs |v|^2 > 0, got {n2:e}"
        )));
    }
    let f = c / n2.sqrt();
    Ok((*u * f, *v * f))
}

/// Simple form of the first Nelson equation, `uʲv_j + wⁱʲ∂_i v_j`.
pub fn nelson1_residual(
    d: &DriftFields,
    k: &PhysicalConstants,
    x: &FourVector,
    fd: &FdConfig,
) -> Result<f64> {
    let u = d.u_at(x)?;
    let v = d.v_at(x)?;
    let w = diffusion_from_drift(&v, k)?;
    let jac = d.v.jacobian(x, fd)?;
    let mut r = u.dot(&v);
    for i in 0..4 {
        for j in 0..4 {
            r += w[(i, j)] * METRIC_DIAG[j] * jac[i][j];
        }
    }
    Ok(r)
}

/// General form `w_ij uⁱvʲ + wⁱʲ∂_i[w_jk vᵏ]`, with the derivative of
/// `w_jk vᵏ` always taken by finite differences.
pub fn nelson1_general_residual(
    d: &DriftFields,
    k: &PhysicalConstants,
    x: &FourVector,
    fd: &FdConfig,
) -> Result<f64> {
    let u = d.u_at(x)?;
    let v = d.v_at(x)?;
    let w = diffusion_from_drift(&v, k)?;
    let winv = diffusion_inverse_from_drift(&v, k)?;
    let lowered = |y: &FourVector| -> Result<[f64; 4]> {
        let vy = d.v_at(y)?;
        let wy = diffusion_inverse_from_drift(&vy, k)?;
        Ok(FourVector::from_na(&(wy * vy.to_na())).0)
    };
    let jac = fd.jacobian(lowered, x)?;
    let mut r = (u.to_na().transpose() * winv * v.to_na())[(0, 0)];
    for i in 0..4 {
        for j in 0..4 {
            r += w[(i, j)] * jac[i][j];
        }
    }
    Ok(r)
}

/// Second Nelson equation residual, one covariant component per `k`:
/// `m[vⁱ∂_i v_k − uⁱ∂_i u_k − wⁱʲ∂²_ij u_k] − q vⁱ[∂_k A_i − ∂_i A_k]`.
pub fn nelson2_residual(
    d: &DriftFields,
    k: &PhysicalConstants,
    a: &EMPotential,
    x: &FourVector,
    fd: &FdConfig,
) -> Result<Covector> {
    let u = d.u_at(x)?;
    let v = d.v_at(x)?;
    let w = diffusion_from_drift(&v, k)?;
    let jv = d.v.jacobian(x, fd)?;
    let ju = d.u.jacobian(x, fd)?;
    let hu = d.u.hessian(x, fd)?;
    let ja = a.a.jacobian(x, fd)?;
    let mut out = [0.0; 4];
    for (c, o) in out.iter_mut().enumerate() {
        let g = METRIC_DIAG[c];
        let mut kinetic = 0.0;
        let mut force = 0.0;
        for i in 0..4 {
            kinetic += v[i] * g * jv[i][c] - u[i] * g * ju[i][c];
            for j in 0..4 {
                kinetic -= w[(i, j)] * g * hu[c][i][j];
            }
            force += v[i] * (ja[c][i] - ja[i][c]);
        }
        *o = k.m * kinetic - k.q * force;
    }
    Ok(Covector(out))
}

/// Electromagnetic field `B_ij = ∂_j A_i − ∂_i A_j`.
pub fn field_tensor(a: &EMPotential, x: &FourVector, fd: &FdConfig) -> Result<Tensor2> {
    let ja = a.a.jacobian(x, fd)?;
    Ok(Tensor2::from_fn(|i, j| ja[j][i] - ja[i][j]))
}

/// Curl `∂_j(m v_i + q A_i) − ∂_i(m v_j + q A_j)`; vanishes iff
/// `m v_i + q A_i` is locally a gradient.
pub fn gradient_condition_residual(
    d: &DriftFields,
    k: &PhysicalConstants,
    a: &EMPotential,
    x: &FourVector,
    fd: &FdConfig,
) -> Result<Tensor2> {
    let jv = d.v.jacobian(x, fd)?;
    let ja = a.a.jacobian(x, fd)?;
    // dp[j][i] = ∂_j (m v_i + q A_i)
    let dp: [[f64; 4]; 4] = std::array::from_fn(|j| {
        std::array::from_fn(|i| k.m * METRIC_DIAG[i] * jv[j][i] + k.q * ja[j][i])
    });
    Ok(Tensor2::from_fn(|i, j| dp[j][i] - dp[i][j]))
}

/// `L = mc√(g_ij[vⁱvʲ + uⁱuʲ]) − q A_j vʲ` for given drift values.
pub fn lagrangian_from_values(
    u: &FourVector,
    v: &FourVector,
    a: &Covector,
    k: &PhysicalConstants,
) -> Result<f64> {
    let rad = v.dot(v) + u.dot(u);
    if !(rad >= 0.0) {
        return Err(Error::Domain(format!("negative Lagrangian radicand {rad:e}")));
    }
    Ok(k.m * k.c * rad.sqrt() - k.q * a.contract(v))
}

/// Lagrangian with the drifts scaled by `ġ(s)`.
pub fn lagrangian(
    d: &DriftFields,
    k: &PhysicalConstants,
    a: &EMPotential,
    x: &FourVector,
    gauge: &Gauge,
    s: f64,
) -> Result<f64> {
    let gd = gauge.try_deriv(s)?;
    lagrangian_from_values(&(d.u_at(x)? * gd), &(d.v_at(x)? * gd), &a.at(x)?, k)
}

/// Analytic `(∂L/∂uᵏ, ∂L/∂vᵏ) = (m ũ_k, m ṽ_k − q A_k)`.
pub fn canonical_momenta(
    d: &DriftFields,
    k: &PhysicalConstants,
    a: &EMPotential,
    x: &FourVector,
) -> Result<(Covector, Covector)> {
    let (ut, vt) = normalized_vectors(d, k, x)?;
    let av = a.at(x)?;
    let pu = Covector(ut.lower().0.map(|c| k.m * c));
    let vl = vt.lower();
    let pv = Covector(std::array::from_fn(|i| k.m * vl[i] - k.q * av[i]));
    Ok((pu, pv))
}

/// `p uⁱ − ∂_j(p wⁱʲ)` at `(x̄, s)`.
pub fn osmotic_relation_residual(
    d: &DriftFields,
    k: &PhysicalConstants,
    p: &dyn ScalarField,
    x: &FourVector,
    s: f64,
    fd: &FdConfig,
) -> Result<FourVector> {
    let u = d.u_at(x)?;
    let pw = |y: &FourVector| -> Result<[f64; 16]> {
        let w = diffusion_tensor(d, k, y)?;
        let py = p.value(y, s);
        Ok(std::array::from_fn(|n| py * w[(n / 4, n % 4)]))
    };
    let mut div = [0.0; 4];
    for j in 0..4 {
        let dj = fd.partial(pw, x, j)?;
        for (i, dv) in div.iter_mut().enumerate() {
            *dv += dj[i * 4 + j];
        }
    }
    let px = p.value(x, s);
    Ok(FourVector(std::array::from_fn(|i| px * u[i] - div[i])))
}

/// `(1/ġ(s)) ∂p/∂s + ∂_i(p vⁱ)` at `(x̄, s)`.
pub fn continuity_residual(
    d: &DriftFields,
    p: &dyn ScalarField,
    gauge: &Gauge,
    s: f64,
    x: &FourVector,
    fd: &FdConfig,
) -> Result<f64> {
    let gd = gauge.try_deriv(s)?;
    let dps = fd.derivative_1d(|t| p.value(x, t), s);
    let flux = |y: &FourVector| -> Result<[f64; 4]> {
        let v = d.v_at(y)?;
        let py = p.value(y, s);
        Ok(v.0.map(|c| c * py))
    };
    let mut div = 0.0;
    for i in 0..4 {
        div += fd.partial(flux, x, i)?[i];
    }
    Ok(dps / gd + div)
}

/// Returns a warning when the potential carries a non-zero field somewhere
/// while the current drift vanishes there: a non-zero `B_ij` requires a
/// non-zero `v_i`.
pub fn field_drift_consistency(
    d: &DriftFields,
    a: &EMPotential,
    points: &[FourVector],
    fd: &FdConfig,
) -> Result<Option<String>> {
    for x in points {
        let b = field_tensor(a, x, fd)?;
        let bmax = b.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        let v = d.v_at(x)?;
        if bmax > 1e-12 && v.max_abs() == 0.0 {
            let msg = format!(
                "inconsistent input at {x}: electromagnetic field max|B_ij| = {bmax:e} \
                 with vanishing current drift; a non-zero field requires v_i != 0"
            );
            log::warn!("{msg}");
            return Ok(Some(msg));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AffineField, FnField};

    fn nat() -> PhysicalConstants {
        PhysicalConstants::natural()
    }

    fn max_abs(t: &Tensor2) -> f64 {
        t.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    #[test]
    fn constants_validation() {
        assert!(PhysicalConstants::new(0.0, 0.0, 1.0, 1.0).is_err());
        assert!(PhysicalConstants::new(1.0, 0.0, -1.0, 1.0).is_err());
        assert!(PhysicalConstants::new(1.0, 2.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn forward_backward_examples() {
        let k = nat();
        let x = FourVector::ZERO;
        let (vp, vm) = forward_backward_drifts(&DriftFields::free_particle_rest(&k), &x).unwrap();
        assert_eq!(vp, FourVector::new(1.0, 0.0, 0.0, 0.0));
        assert_eq!(vm, vp);
        let same = FourVector::new(0.3, 0.1, 0.0, -0.2);
        let (_, vm) = forward_backward_drifts(&DriftFields::constant(same, same), &x).unwrap();
        assert_eq!(vm, FourVector::ZERO);
    }

    #[test]
    fn rest_diffusion_tensor_is_isotropic() {
        let k = nat();
        let w = diffusion_tensor(&DriftFields::free_particle_rest(&k), &k, &FourVector::ZERO).unwrap();
        let q = 1.0 / (4.0 * PI);
        assert!(max_abs(&(w - Tensor2::identity() * q)) < 1e-16);
        assert!((crate::geometry::metric_trace(&w) + 1.0 / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn lightlike_drift_is_singular() {
        let k = nat();
        let d = DriftFields::constant(FourVector::ZERO, FourVector::new(1.0, 1.0, 0.0, 0.0));
        assert!(matches!(
            diffusion_tensor(&d, &k, &FourVector::ZERO),
            Err(Error::Singular(_))
        ));
        assert!(diffusion_inverse(&d, &k, &FourVector::ZERO).is_err());
    }

    #[test]
    fn rest_inverse_and_contraction() {
        let k = nat();
        let d = DriftFields::free_particle_rest(&k);
        let x = FourVector::ZERO;
        let w = diffusion_tensor(&d, &k, &x).unwrap();
        let wi = diffusion_inverse(&d, &k, &x).unwrap();
        assert!(max_abs(&(wi - Tensor2::identity() * (4.0 * PI))) < 1e-13);
        assert!(max_abs(&(wi * w - Tensor2::identity())) < 1e-15);
    }

    #[test]
    fn normalization_examples() {
        let k = nat().with_c(2.0);
        let x = FourVector::ZERO;
        let rest = DriftFields::free_particle_rest(&k);
        assert_eq!(normalization_residual(&rest, &k, &x).unwrap(), 0.0);
        let d = DriftFields::constant(FourVector::ZERO, FourVector::new(4.0, 0.0, 0.0, 0.0));
        assert_eq!(normalization_residual(&d, &k, &x).unwrap(), 3.0 * 4.0);
        let (ut, vt) = normalized_vectors(&d, &k, &x).unwrap();
        assert_eq!(ut, FourVector::ZERO);
        assert_eq!(vt, FourVector::new(2.0, 0.0, 0.0, 0.0));
        let (ut, vt) = normalized_vectors(&rest, &k, &x).unwrap();
        assert_eq!((ut, vt), (FourVector::ZERO, FourVector::new(2.0, 0.0, 0.0, 0.0)));
        let bad = DriftFields::constant(FourVector::ZERO, FourVector::new(0.0, 1.0, 0.0, 0.0));
        assert!(normalized_vectors(&bad, &k, &x).is_err());
    }

    #[test]
    fn nelson1_constant_osmotic_along_time() {
        // u = (εc,0,0,0), v = (c,0,0,0): residual uʲv_j = εc²
        let c = 3.0;
        let eps = 0.01;
        let k = nat().with_c(c);
        let d = DriftFields::constant(FourVector::new(eps * c, 0.0, 0.0, 0.0), FourVector::new(c, 0.0, 0.0, 0.0));
        let r = nelson1_residual(&d, &k, &FourVector::ZERO, &FdConfig::default()).unwrap();
        assert!((r - eps * c * c).abs() < 1e-14);
        let d = DriftFields::constant(FourVector::new(0.0, eps * c, 0.0, 0.0), FourVector::new(c, 0.0, 0.0, 0.0));
        assert_eq!(nelson1_residual(&d, &k, &FourVector::ZERO, &FdConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn nelson2_linear_potential_force() {
        let c = 2.0;
        let q = 0.7;
        let slope = 1.5;
        let k = nat().with_c(c).with_q(q);
        let d = DriftFields::free_particle_rest(&k);
        let a = EMPotential::linear(slope);
        let r = nelson2_residual(&d, &k, &a, &FourVector::ZERO, &FdConfig::default()).unwrap();
        // k = 1: −q v⁰(∂₁A₀ − ∂₀A₁) = −q c slope
        assert!((r[1] + q * c * slope).abs() < 1e-14);
        assert_eq!(r[0], 0.0);
        assert_eq!(r[2], 0.0);
        let free = nelson2_residual(&d, &k, &EMPotential::zero(), &FourVector::ZERO, &FdConfig::default()).unwrap();
        assert_eq!(free, Covector::ZERO);
    }

    #[test]
    fn field_tensor_examples() {
        let fd = FdConfig::default();
        let x = FourVector::new(0.2, 0.3, -0.1, 0.4);
        let b = field_tensor(&EMPotential::linear(1.0), &x, &fd).unwrap();
        assert_eq!(b[(0, 1)], 1.0);
        assert_eq!(b[(1, 0)], -1.0);
        // gradient of φ = x0 x1 + sin(x2) x3
        let grad = FnField::new(|y: &FourVector| [y[1], y[0], y[2].cos() * y[3], y[2].sin()]);
        let b = field_tensor(&EMPotential::new(Arc::new(grad)), &x, &fd).unwrap();
        assert!(max_abs(&b) < 1e-9);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(b[(i, j)], -b[(j, i)]);
            }
        }
    }

    #[test]
    fn rotational_drift_has_curl() {
        let k = nat();
        let mut slope = [[0.0; 4]; 4];
        slope[2][1] = 0.5; // v² = 0.5 x¹
        let v = AffineField { offset: [1.0, 0.0, 0.0, 0.0], slope };
        let d = DriftFields::new(Arc::new(ConstantField([0.0; 4])), Arc::new(v));
        let r = gradient_condition_residual(&d, &k, &EMPotential::zero(), &FourVector::ZERO, &FdConfig::default())
            .unwrap();
        // v_2 = −0.5 x¹ ⇒ C_21 = ∂_1 v_2 = −0.5
        assert_eq!(r[(2, 1)], -0.5);
        assert_eq!(r[(1, 2)], 0.5);
        let rest = DriftFields::free_particle_rest(&k);
        let r0 = gradient_condition_residual(&rest, &k, &EMPotential::zero(), &FourVector::ZERO, &FdConfig::default())
            .unwrap();
        assert_eq!(max_abs(&r0), 0.0);
    }

    #[test]
    fn lagrangian_examples() {
        let c = 3.0;
        let k = nat().with_c(c).with_q(0.5);
        let d = DriftFields::free_particle_rest(&k);
        let x = FourVector::ZERO;
        let l0 = lagrangian(&d, &k, &EMPotential::zero(), &x, &Gauge::Identity, 0.0).unwrap();
        assert!((l0 - k.m * c * c).abs() < 1e-12);
        let vpot = 4.0;
        let l1 = lagrangian(&d, &k, &EMPotential::constant_scalar(vpot, c), &x, &Gauge::Identity, 0.0).unwrap();
        assert!((l1 - (k.m * c * c - k.q * vpot)).abs() < 1e-12);
        let bad = DriftFields::constant(FourVector::ZERO, FourVector::new(0.0, 1.0, 0.0, 0.0));
        assert!(lagrangian(&bad, &k, &EMPotential::zero(), &x, &Gauge::Identity, 0.0).is_err());
    }

    #[test]
    fn field_consistency_warning() {
        let k = nat();
        let still = DriftFields::constant(FourVector::ZERO, FourVector::ZERO);
        let pts = [FourVector::ZERO];
        let fd = FdConfig::default();
        assert!(field_drift_consistency(&still, &EMPotential::linear(1.0), &pts, &fd)
            .unwrap()
            .is_some());
        assert!(field_drift_consistency(&still, &EMPotential::zero(), &pts, &fd)
            .unwrap()
            .is_none());
        let moving = DriftFields::free_particle_rest(&k);
        assert!(field_drift_consistency(&moving, &EMPotential::linear(1.0), &pts, &fd)
            .unwrap()
            .is_none());
    }
}
