//! Minkowski-space algebra: four-vectors, the metric diag(+1,−1,−1,−1),
//! interval classification and Lorentz transformations.
//!
//! Component 0 carries units of length (`x⁰ = ct`). Vectors are stored with
//! contravariant components; [`Covector`] holds the lowered form.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rank-2 tensor components in the coordinate basis.
pub type Tensor2 = Matrix4<f64>;

/// Diagonal of the metric tensor. `g_ij` and `g^ij` coincide numerically.
pub const METRIC_DIAG: [f64; 4] = [1.0, -1.0, -1.0, -1.0];

/// Default relative tolerance used to call an interval lightlike.
pub const LIGHTLIKE_TOL: f64 = 1e-12;

/// Contravariant four-vector `vⁱ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FourVector(pub [f64; 4]);

/// A point of Minkowski space, referenced by its contravariant coordinates.
pub type SpacetimePoint = FourVector;

/// Covariant components `v_i = g_ij vʲ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Covector(pub [f64; 4]);

impl FourVector {
    pub const ZERO: FourVector = FourVector([0.0; 4]);

    pub const fn new(x0: f64, x1: f64, x2: f64, x3: f64) -> Self {
        FourVector([x0, x1, x2, x3])
    }

    /// Like [`FourVector::new`] but rejects NaN and infinite components.
    pub fn try_new(components: [f64; 4]) -> Result<Self> {
        if components.iter().all(|c| c.is_finite()) {
            Ok(FourVector(components))
        } else {
            Err(Error::NonFinite(format!("{components:?}")))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn lower(&self) -> Covector {
        lower_index(self)
    }

    /// Minkowski product `g_ij aⁱ bʲ`.
    pub fn dot(&self, other: &FourVector) -> f64 {
        (0..4).map(|i| METRIC_DIAG[i] * self.0[i] * other.0[i]).sum()
    }

    pub fn norm2(&self) -> f64 {
        minkowski_norm2(self)
    }

    pub fn to_na(&self) -> Vector4<f64> {
        Vector4::from(self.0)
    }

    pub fn from_na(v: &Vector4<f64>) -> Self {
        FourVector([v[0], v[1], v[2], v[3]])
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    /// Outer product `aⁱ bʲ`.
    pub fn outer(&self, other: &FourVector) -> Tensor2 {
        Tensor2::from_fn(|i, j| self.0[i] * other.0[j])
    }
}

impl Covector {
    pub const ZERO: Covector = Covector([0.0; 4]);

    pub fn raise(&self) -> FourVector {
        FourVector(std::array::from_fn(|i| METRIC_DIAG[i] * self.0[i]))
    }

    /// Full contraction `a_i vⁱ`.
    pub fn contract(&self, v: &FourVector) -> f64 {
        (0..4).map(|i| self.0[i] * v.0[i]).sum()
    }
}

impl Index<usize> for FourVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for FourVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Index<usize> for Covector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for FourVector {
    type Output = FourVector;
    fn add(self, rhs: FourVector) -> FourVector {
        FourVector(std::array::from_fn(|i| self.0[i] + rhs.0[i]))
    }
}

impl AddAssign for FourVector {
    fn add_assign(&mut self, rhs: FourVector) {
        for i in 0..4 {
            self.0[i] += rhs.0[i];
        }
    }
}

impl Sub for FourVector {
    type Output = FourVector;
    fn sub(self, rhs: FourVector) -> FourVector {
        FourVector(std::array::from_fn(|i| self.0[i] - rhs.0[i]))
    }
}

impl Neg for FourVector {
    type Output = FourVector;
    fn neg(self) -> FourVector {
        FourVector(self.0.map(|c| -c))
    }
}

impl Mul<f64> for FourVector {
    type Output = FourVector;
    fn mul(self, k: f64) -> FourVector {
        FourVector(self.0.map(|c| c * k))
    }
}

impl Mul<FourVector> for f64 {
    type Output = FourVector;
    fn mul(self, v: FourVector) -> FourVector {
        v * self
    }
}

impl fmt::Display for FourVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "({a}, {b}, {c}, {d})")
    }
}

/// Fixed metric tensor of flat spacetime.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Metric;

impl Metric {
    /// `g_ij`
    pub fn lower() -> Tensor2 {
        Tensor2::from_diagonal(&Vector4::from(METRIC_DIAG))
    }

    /// `g^ij`
    pub fn upper() -> Tensor2 {
        Tensor2::from_diagonal(&Vector4::from(METRIC_DIAG))
    }

    pub fn component(i: usize, j: usize) -> f64 {
        if i == j {
            METRIC_DIAG[i]
        } else {
            0.0
        }
    }
}

pub fn lower_index(v: &FourVector) -> Covector {
    Covector(std::array::from_fn(|i| METRIC_DIAG[i] * v.0[i]))
}

pub fn raise_index(a: &Covector) -> FourVector {
    a.raise()
}

/// `g_ij vⁱ vʲ = (v⁰)² − (v¹)² − (v²)² − (v³)²`.
pub fn minkowski_norm2(v: &FourVector) -> f64 {
    let [a, b, c, d] = v.0;
    a * a - b * b - c * c - d * d
}

/// Full contraction `g_ij Tⁱʲ` of a contravariant tensor.
pub fn metric_trace(t: &Tensor2) -> f64 {
    (0..4).map(|i| METRIC_DIAG[i] * t[(i, i)]).sum()
}

/// Causal character of the separation between two events.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalKind {
    Timelike,
    Spacelike,
    Lightlike,
}

/// Classifies `x1 − x0` with the default relative tolerance.
pub fn classify_interval(x1: &SpacetimePoint, x0: &SpacetimePoint) -> IntervalKind {
    classify_interval_with_tol(x1, x0, LIGHTLIKE_TOL)
}

/// `|Δ·Δ| ≤ tol · max|Δⁱ|²` is treated as lightlike.
pub fn classify_interval_with_tol(
    x1: &SpacetimePoint,
    x0: &SpacetimePoint,
    tol: f64,
) -> IntervalKind {
    let delta = *x1 - *x0;
    let q = minkowski_norm2(&delta);
    let scale = delta.max_abs().powi(2);
    if q.abs() <= tol * scale {
        IntervalKind::Lightlike
    } else if q > 0.0 {
        IntervalKind::Timelike
    } else {
        IntervalKind::Spacelike
    }
}

/// A linear map `Xʳ = Λʳ_i xⁱ` preserving the Minkowski quadratic form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LorentzTransform {
    matrix: Tensor2,
}

impl LorentzTransform {
    /// Relative tolerance on `ΛᵀgΛ = g`.
    pub const TOL: f64 = 1e-12;

    pub fn identity() -> Self {
        LorentzTransform {
            matrix: Tensor2::identity(),
        }
    }

    /// Accepts any matrix passing the `ΛᵀgΛ = g` check.
    pub fn from_matrix(matrix: Tensor2) -> Result<Self> {
        let t = LorentzTransform { matrix };
        let scale = matrix.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        let dev = t.metric_defect();
        if !dev.is_finite() || dev > Self::TOL * scale {
            return Err(Error::NotLorentz(dev));
        }
        Ok(t)
    }

    /// Pure boost with velocity `β = v/c`.
    pub fn boost(beta: [f64; 3]) -> Result<Self> {
        let b2: f64 = beta.iter().map(|b| b * b).sum();
        if !b2.is_finite() || b2 >= 1.0 {
            return Err(Error::Domain(format!(
                "boost requires |beta| < 1, got |beta| = {}",
                b2.sqrt()
            )));
        }
        let gamma = 1.0 / (1.0 - b2).sqrt();
        let mut m = Tensor2::identity();
        m[(0, 0)] = gamma;
        for i in 0..3 {
            m[(0, i + 1)] = gamma * beta[i];
            m[(i + 1, 0)] = gamma * beta[i];
        }
        if b2 > 0.0 {
            for i in 0..3 {
                for j in 0..3 {
                    m[(i + 1, j + 1)] += (gamma - 1.0) * beta[i] * beta[j] / b2;
                }
            }
        }
        Ok(LorentzTransform { matrix: m })
    }

    /// Relabels the spatial axes: new axis `k` is old axis `perm[k]`.
    pub fn axis_permutation(perm: [usize; 3]) -> Result<Self> {
        let mut seen = [false; 3];
        for &p in &perm {
            if p > 2 || seen[p] {
                return Err(Error::Domain(format!("invalid axis permutation {perm:?}")));
            }
            seen[p] = true;
        }
        let mut m = Tensor2::zeros();
        m[(0, 0)] = 1.0;
        for (k, &p) in perm.iter().enumerate() {
            m[(k + 1, p + 1)] = 1.0;
        }
        Ok(LorentzTransform { matrix: m })
    }

    pub fn matrix(&self) -> &Tensor2 {
        &self.matrix
    }

    /// `max|ΛᵀgΛ − g|`.
    pub fn metric_defect(&self) -> f64 {
        let g = Metric::lower();
        let d = self.matrix.transpose() * g * self.matrix - g;
        d.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &LorentzTransform) -> LorentzTransform {
        LorentzTransform {
            matrix: self.matrix * first.matrix,
        }
    }

    /// `Λ⁻¹ = g Λᵀ g`.
    pub fn inverse(&self) -> LorentzTransform {
        let g = Metric::lower();
        LorentzTransform {
            matrix: g * self.matrix.transpose() * g,
        }
    }

    pub fn transform_vector(&self, v: &FourVector) -> FourVector {
        transform_vector(self, v)
    }

    pub fn transform_tensor2(&self, w: &Tensor2) -> Tensor2 {
        transform_tensor2(self, w)
    }
}

/// `Vʳ = Λʳ_i vⁱ`.
pub fn transform_vector(l: &LorentzTransform, v: &FourVector) -> FourVector {
    FourVector::from_na(&(l.matrix * v.to_na()))
}

/// `Wʳˢ = Λʳ_i Λˢ_j wⁱʲ`.
pub fn transform_tensor2(l: &LorentzTransform, w: &Tensor2) -> Tensor2 {
    let t = l.matrix * w * l.matrix.transpose();
    // exact symmetry for symmetric input
    (t + t.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: f64 = 2.5;

    #[test]
    fn lower_flips_spatial_signs() {
        let v = FourVector::new(1.0, 2.0, 3.0, 4.0);
        assert_eq!(v.lower().0, [1.0, -2.0, -3.0, -4.0]);
        assert_eq!(FourVector::ZERO.lower().0, [0.0; 4]);
        assert_eq!(v.lower().raise(), v);
    }

    #[test]
    fn metric_inverse_is_exact() {
        assert_eq!(Metric::lower() * Metric::upper(), Tensor2::identity());
    }

    #[test]
    fn norms() {
        assert_eq!(minkowski_norm2(&FourVector::new(C, 0.0, 0.0, 0.0)), C * C);
        assert_eq!(minkowski_norm2(&FourVector::new(1.0, 1.0, 0.0, 0.0)), 0.0);
        let l = LorentzTransform::boost([0.3, -0.4, 0.5]).unwrap();
        let v = l.transform_vector(&FourVector::new(C, 0.0, 0.0, 0.0));
        assert!((v.norm2() - C * C).abs() <= 1e-12 * C * C);
    }

    #[test]
    fn classify_examples() {
        let o = FourVector::ZERO;
        let tau = 0.7;
        assert_eq!(
            classify_interval(&FourVector::new(C * tau, 0.0, 0.0, 0.0), &o),
            IntervalKind::Timelike
        );
        assert_eq!(
            classify_interval(&FourVector::new(0.0, C * tau, 0.0, 0.0), &o),
            IntervalKind::Spacelike
        );
        assert_eq!(
            classify_interval(&FourVector::new(3.3, 3.3, 0.0, 0.0), &o),
            IntervalKind::Lightlike
        );
        assert_eq!(classify_interval(&o, &o), IntervalKind::Lightlike);
    }

    #[test]
    fn boost_examples() {
        assert_eq!(
            *LorentzTransform::boost([0.0; 3]).unwrap().matrix(),
            Tensor2::identity()
        );
        // γ = 1.25 for β = 0.6: (γc, γβc, 0, 0)
        let l = LorentzTransform::boost([0.6, 0.0, 0.0]).unwrap();
        let v = l.transform_vector(&FourVector::new(C, 0.0, 0.0, 0.0));
        let want = [1.25 * C, 0.75 * C, 0.0, 0.0];
        for i in 0..4 {
            assert!((v[i] - want[i]).abs() < 1e-14, "{v}");
        }
        assert!(l.metric_defect() <= 1e-12);
    }

    #[test]
    fn boost_rejects_superluminal() {
        assert!(LorentzTransform::boost([1.0, 0.0, 0.0]).is_err());
        assert!(LorentzTransform::boost([0.8, 0.7, 0.0]).is_err());
        assert!(LorentzTransform::boost([f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn from_matrix_checks_form() {
        let mut m = Tensor2::identity();
        m[(1, 1)] = 2.0;
        assert!(LorentzTransform::from_matrix(m).is_err());
        let p = LorentzTransform::axis_permutation([2, 0, 1]).unwrap();
        let b = LorentzTransform::boost([0.2, 0.1, 0.0]).unwrap();
        assert!(LorentzTransform::from_matrix(*p.compose(&b).matrix()).is_ok());
        assert!(LorentzTransform::axis_permutation([0, 0, 1]).is_err());
    }

    #[test]
    fn composition_and_inverse() {
        let a = LorentzTransform::boost([0.3, 0.0, 0.1]).unwrap();
        let b = LorentzTransform::boost([-0.2, 0.5, 0.0]).unwrap();
        let v = FourVector::new(1.0, -0.5, 0.25, 2.0);
        let once = b.compose(&a).transform_vector(&v);
        let twice = b.transform_vector(&a.transform_vector(&v));
        for i in 0..4 {
            assert!((once[i] - twice[i]).abs() < 1e-13);
        }
        let back = a.inverse().transform_vector(&a.transform_vector(&v));
        for i in 0..4 {
            assert!((back[i] - v[i]).abs() < 1e-13);
        }
        assert_eq!(LorentzTransform::identity().transform_vector(&v), v);
    }

    #[test]
    fn tensor_transform_of_rest_diffusion() {
        let k = 1.0 / (4.0 * std::f64::consts::PI);
        let w = Tensor2::identity() * k;
        let l = LorentzTransform::boost([0.6, 0.0, 0.0]).unwrap();
        let big = l.transform_tensor2(&w);
        // hand product: W⁰⁰ = k(γ² + γ²β²), W⁰¹ = 2kγ²β
        let (g, b) = (1.25_f64, 0.6_f64);
        assert!((big[(0, 0)] - k * (g * g + g * g * b * b)).abs() < 1e-15);
        assert!((big[(0, 1)] - 2.0 * k * g * g * b).abs() < 1e-15);
        assert!((big[(2, 2)] - k).abs() < 1e-15);
        assert_eq!(big, big.transpose());
        assert!((metric_trace(&big) - metric_trace(&w)).abs() < 1e-14);
        assert_eq!(LorentzTransform::identity().transform_tensor2(&w), w);
    }
}
