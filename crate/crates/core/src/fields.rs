//! Vector and scalar fields on Minkowski space, with analytic derivatives
//! where a field knows them and central finite differences otherwise.

use std::collections::BTreeMap;
use std::io::Read;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::FourVector;

/// `jac[i][k] = ∂_i f_k`.
pub type Jacobian = [[f64; 4]; 4];

/// `hess[k][i][j] = ∂_i ∂_j f_k`.
pub type Hessian = [[[f64; 4]; 4]; 4];

/// Finite-difference settings.
///
/// First derivatives use the 5-point central stencil, pure second
/// derivatives the 5-point central stencil, mixed second derivatives the
/// 4-point cross stencil.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdConfig {
    pub step: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig { step: 1e-4 }
    }
}

impl FdConfig {
    /// Step `rel × length` for fields varying on the scale `length`.
    pub fn relative(rel: f64, length: f64) -> Self {
        FdConfig { step: rel * length }
    }

    fn shifted(x: &FourVector, axis: usize, by: f64) -> FourVector {
        let mut y = *x;
        y[axis] += by;
        y
    }

    /// `∂_axis f` of an array-valued function.
    pub fn partial<const N: usize, F>(&self, f: F, x: &FourVector, axis: usize) -> Result<[f64; N]>
    where
        F: Fn(&FourVector) -> Result<[f64; N]>,
    {
        let h = self.step;
        let p1 = f(&Self::shifted(x, axis, h))?;
        let m1 = f(&Self::shifted(x, axis, -h))?;
        let p2 = f(&Self::shifted(x, axis, 2.0 * h))?;
        let m2 = f(&Self::shifted(x, axis, -2.0 * h))?;
        Ok(std::array::from_fn(|n| {
            (8.0 * (p1[n] - m1[n]) - (p2[n] - m2[n])) / (12.0 * h)
        }))
    }

    /// `∂_i ∂_j f` of an array-valued function.
    pub fn partial2<const N: usize, F>(
        &self,
        f: F,
        x: &FourVector,
        i: usize,
        j: usize,
    ) -> Result<[f64; N]>
    where
        F: Fn(&FourVector) -> Result<[f64; N]>,
    {
        let h = self.step;
        if i == j {
            let c = f(x)?;
            let p1 = f(&Self::shifted(x, i, h))?;
            let m1 = f(&Self::shifted(x, i, -h))?;
            let p2 = f(&Self::shifted(x, i, 2.0 * h))?;
            let m2 = f(&Self::shifted(x, i, -2.0 * h))?;
            Ok(std::array::from_fn(|n| {
                (-(p2[n] + m2[n]) + 16.0 * (p1[n] + m1[n]) - 30.0 * c[n]) / (12.0 * h * h)
            }))
        } else {
            let at = |a: f64, b: f64| {
                let mut y = *x;
                y[i] += a;
                y[j] += b;
                f(&y)
            };
            let pp = at(h, h)?;
            let pm = at(h, -h)?;
            let mp = at(-h, h)?;
            let mm = at(-h, -h)?;
            Ok(std::array::from_fn(|n| {
                (pp[n] - pm[n] - mp[n] + mm[n]) / (4.0 * h * h)
            }))
        }
    }

    pub fn jacobian<F>(&self, f: F, x: &FourVector) -> Result<Jacobian>
    where
        F: Fn(&FourVector) -> Result<[f64; 4]>,
    {
        let mut jac = [[0.0; 4]; 4];
        for (i, row) in jac.iter_mut().enumerate() {
            *row = self.partial(&f, x, i)?;
        }
        Ok(jac)
    }

    pub fn hessian<F>(&self, f: F, x: &FourVector) -> Result<Hessian>
    where
        F: Fn(&FourVector) -> Result<[f64; 4]>,
    {
        let mut hess = [[[0.0; 4]; 4]; 4];
        for i in 0..4 {
            for j in i..4 {
                let d = self.partial2(&f, x, i, j)?;
                for k in 0..4 {
                    hess[k][i][j] = d[k];
                    hess[k][j][i] = d[k];
                }
            }
        }
        Ok(hess)
    }

    pub fn gradient<F>(&self, f: F, x: &FourVector) -> Result<[f64; 4]>
    where
        F: Fn(&FourVector) -> Result<f64>,
    {
        let g = |y: &FourVector| f(y).map(|v| [v]);
        let mut out = [0.0; 4];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.partial(g, x, i)?[0];
        }
        Ok(out)
    }

    pub fn scalar_hessian<F>(&self, f: F, x: &FourVector) -> Result<[[f64; 4]; 4]>
    where
        F: Fn(&FourVector) -> Result<f64>,
    {
        let g = |y: &FourVector| f(y).map(|v| [v]);
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in i..4 {
                let d = self.partial2(g, x, i, j)?[0];
                out[i][j] = d;
                out[j][i] = d;
            }
        }
        Ok(out)
    }

    /// Derivative of a scalar function of one real variable.
    pub fn derivative_1d<F>(&self, f: F, t: f64) -> f64
    where
        F: Fn(f64) -> f64,
    {
        let h = self.step;
        (8.0 * (f(t + h) - f(t - h)) - (f(t + 2.0 * h) - f(t - 2.0 * h))) / (12.0 * h)
    }
}

/// A four-component field `x̄ ↦ fₖ(x̄)`. Whether the components are
/// contravariant or covariant is fixed by the owner (drift vs potential).
pub trait VectorField: Send + Sync {
    fn value(&self, x: &FourVector) -> Result<[f64; 4]>;

    /// `∂_i f_k`; finite differences unless overridden.
    fn jacobian(&self, x: &FourVector, fd: &FdConfig) -> Result<Jacobian> {
        fd.jacobian(|y| self.value(y), x)
    }

    /// `∂_i ∂_j f_k`; finite differences unless overridden.
    fn hessian(&self, x: &FourVector, fd: &FdConfig) -> Result<Hessian> {
        fd.hessian(|y| self.value(y), x)
    }

    fn has_analytic_derivatives(&self) -> bool {
        false
    }
}

/// Scalar field depending on the point and on the dynamical parameter,
/// e.g. a density `p(x̄, s)` or a test function `f(x̄, s)`.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &FourVector, s: f64) -> f64;
}

impl<F> ScalarField for F
where
    F: Fn(&FourVector, f64) -> f64 + Send + Sync,
{
    fn value(&self, x: &FourVector, s: f64) -> f64 {
        self(x, s)
    }
}

pub type SharedField = Arc<dyn VectorField>;

/// Constant components everywhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantField(pub [f64; 4]);

impl VectorField for ConstantField {
    fn value(&self, _x: &FourVector) -> Result<[f64; 4]> {
        Ok(self.0)
    }
    fn jacobian(&self, _x: &FourVector, _fd: &FdConfig) -> Result<Jacobian> {
        Ok([[0.0; 4]; 4])
    }
    fn hessian(&self, _x: &FourVector, _fd: &FdConfig) -> Result<Hessian> {
        Ok([[[0.0; 4]; 4]; 4])
    }
    fn has_analytic_derivatives(&self) -> bool {
        true
    }
}

/// Affine field `f_k(x̄) = offset_k + Σᵢ slope[k][i] xⁱ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineField {
    pub offset: [f64; 4],
    pub slope: [[f64; 4]; 4],
}

impl VectorField for AffineField {
    fn value(&self, x: &FourVector) -> Result<[f64; 4]> {
        Ok(std::array::from_fn(|k| {
            self.offset[k] + (0..4).map(|i| self.slope[k][i] * x[i]).sum::<f64>()
        }))
    }
    fn jacobian(&self, _x: &FourVector, _fd: &FdConfig) -> Result<Jacobian> {
        Ok(std::array::from_fn(|i| std::array::from_fn(|k| self.slope[k][i])))
    }
    fn hessian(&self, _x: &FourVector, _fd: &FdConfig) -> Result<Hessian> {
        Ok([[[0.0; 4]; 4]; 4])
    }
    fn has_analytic_derivatives(&self) -> bool {
        true
    }
}

type ValueFn = dyn Fn(&FourVector) -> [f64; 4] + Send + Sync;
type JacFn = dyn Fn(&FourVector) -> Jacobian + Send + Sync;
type HessFn = dyn Fn(&FourVector) -> Hessian + Send + Sync;

/// Closure-backed field. Derivatives fall back to finite differences
/// unless supplied.
#[derive(Clone)]
pub struct FnField {
    value: Arc<ValueFn>,
    jacobian: Option<Arc<JacFn>>,
    hessian: Option<Arc<HessFn>>,
}

impl FnField {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&FourVector) -> [f64; 4] + Send + Sync + 'static,
    {
        FnField {
            value: Arc::new(f),
            jacobian: None,
            hessian: None,
        }
    }

    pub fn with_jacobian<J>(mut self, j: J) -> Self
    where
        J: Fn(&FourVector) -> Jacobian + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(j));
        self
    }

    pub fn with_hessian<H>(mut self, h: H) -> Self
    where
        H: Fn(&FourVector) -> Hessian + Send + Sync + 'static,
    {
        self.hessian = Some(Arc::new(h));
        self
    }
}

impl VectorField for FnField {
    fn value(&self, x: &FourVector) -> Result<[f64; 4]> {
        let v = (self.value)(x);
        if v.iter().all(|c| c.is_finite()) {
            Ok(v)
        } else {
            Err(Error::Field {
                point: x.to_string(),
                reason: "non-finite field value".into(),
            })
        }
    }
    fn jacobian(&self, x: &FourVector, fd: &FdConfig) -> Result<Jacobian> {
        match &self.jacobian {
            Some(j) => Ok(j(x)),
            None => fd.jacobian(|y| self.value(y), x),
        }
    }
    fn hessian(&self, x: &FourVector, fd: &FdConfig) -> Result<Hessian> {
        match &self.hessian {
            Some(h) => Ok(h(x)),
            None => fd.hessian(|y| self.value(y), x),
        }
    }
    fn has_analytic_derivatives(&self) -> bool {
        self.jacobian.is_some() && self.hessian.is_some()
    }
}

/// Hides a field's analytic derivatives so they are recomputed by
/// finite differences.
pub struct FiniteDifference<F>(pub F);

impl<F: VectorField> VectorField for FiniteDifference<F> {
    fn value(&self, x: &FourVector) -> Result<[f64; 4]> {
        self.0.value(x)
    }
}

impl<T: VectorField + ?Sized> VectorField for Arc<T> {
    fn value(&self, x: &FourVector) -> Result<[f64; 4]> {
        (**self).value(x)
    }
    fn jacobian(&self, x: &FourVector, fd: &FdConfig) -> Result<Jacobian> {
        (**self).jacobian(x, fd)
    }
    fn hessian(&self, x: &FourVector, fd: &FdConfig) -> Result<Hessian> {
        (**self).hessian(x, fd)
    }
    fn has_analytic_derivatives(&self) -> bool {
        (**self).has_analytic_derivatives()
    }
}

/// Samples on a rectilinear 4D grid, read from CSV with header
/// `x0,x1,x2,x3,u0..u3,v0..v3[,A0..A3]`.
///
/// Values are interpolated multilinearly (trilinear in space, linear in
/// `x⁰`). Derivatives of an interpolated field are piecewise constant, so
/// residuals evaluated on it carry an error of the order of the sample
/// spacing.
#[derive(Debug)]
pub struct SampledGrid {
    axes: [Vec<f64>; 4],
    // row-major over (x0, x1, x2, x3); 12 channels: u, v, A
    data: Vec<[f64; 12]>,
    has_potential: bool,
}

const REQUIRED: [&str; 12] = [
    "x0", "x1", "x2", "x3", "u0", "u1", "u2", "u3", "v0", "v1", "v2", "v3",
];
const POTENTIAL: [&str; 4] = ["A0", "A1", "A2", "A3"];

/// Which channel of a [`SampledGrid`] a [`GridField`] exposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridChannel {
    Osmotic,
    Current,
    Potential,
}

impl SampledGrid {
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let mut idx = Vec::with_capacity(16);
        for name in REQUIRED {
            idx.push(col(name).ok_or_else(|| Error::Parse(format!("missing column {name}")))?);
        }
        let pot: Vec<Option<usize>> = POTENTIAL.iter().map(|n| col(n)).collect();
        let has_potential = pot.iter().all(Option::is_some);
        if !has_potential && pot.iter().any(Option::is_some) {
            return Err(Error::Parse("potential columns must be A0..A3 together".into()));
        }
        if has_potential {
            idx.extend(pot.into_iter().flatten());
        }

        let mut samples: BTreeMap<[u64; 4], [f64; 12]> = BTreeMap::new();
        let mut coords: [Vec<f64>; 4] = Default::default();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let mut vals = [0.0; 16];
            for (slot, &c) in idx.iter().enumerate() {
                let field = rec
                    .get(c)
                    .ok_or_else(|| Error::Parse(format!("row {}: short record", line + 2)))?;
                vals[slot] = field.parse::<f64>().map_err(|e| {
                    Error::Parse(format!("row {}: {field:?}: {e}", line + 2))
                })?;
                if !vals[slot].is_finite() {
                    return Err(Error::Parse(format!("row {}: non-finite value", line + 2)));
                }
            }
            let key = [vals[0], vals[1], vals[2], vals[3]];
            for a in 0..4 {
                coords[a].push(key[a]);
            }
            let mut ch = [0.0; 12];
            ch[..8].copy_from_slice(&vals[4..12]);
            if has_potential {
                ch[8..].copy_from_slice(&vals[12..16]);
            }
            if samples.insert(key.map(f64::to_bits), ch).is_some() {
                return Err(Error::Parse(format!("row {}: duplicate sample point", line + 2)));
            }
        }
        let axes = coords.map(|mut c| {
            c.sort_by(|a, b| a.total_cmp(b));
            c.dedup();
            c
        });
        let n: usize = axes.iter().map(Vec::len).product();
        if n == 0 || n != samples.len() {
            return Err(Error::Parse(format!(
                "samples do not form a complete rectilinear grid ({} samples, {} grid nodes)",
                samples.len(),
                n
            )));
        }
        let mut data = Vec::with_capacity(n);
        for &a in &axes[0] {
            for &b in &axes[1] {
                for &c in &axes[2] {
                    for &d in &axes[3] {
                        let key = [a, b, c, d].map(f64::to_bits);
                        data.push(*samples.get(&key).ok_or_else(|| {
                            Error::Parse(format!("missing grid node ({a}, {b}, {c}, {d})"))
                        })?);
                    }
                }
            }
        }
        Ok(SampledGrid {
            axes,
            data,
            has_potential,
        })
    }

    pub fn has_potential(&self) -> bool {
        self.has_potential
    }

    pub fn axes(&self) -> &[Vec<f64>; 4] {
        &self.axes
    }

    fn flat(&self, idx: [usize; 4]) -> usize {
        ((idx[0] * self.axes[1].len() + idx[1]) * self.axes[2].len() + idx[2]) * self.axes[3].len()
            + idx[3]
    }

    /// Multilinear interpolation of all 12 channels.
    pub fn interpolate(&self, x: &FourVector) -> Result<[f64; 12]> {
        let mut lo = [0usize; 4];
        let mut t = [0.0f64; 4];
        for a in 0..4 {
            let ax = &self.axes[a];
            let xa = x[a];
            if ax.len() == 1 {
                continue;
            }
            if !(xa >= ax[0] && xa <= ax[ax.len() - 1]) {
                return Err(Error::Field {
                    point: x.to_string(),
                    reason: format!("outside sampled range on axis {a}"),
                });
            }
            let k = ax.partition_point(|&c| c <= xa).clamp(1, ax.len() - 1) - 1;
            lo[a] = k;
            t[a] = (xa - ax[k]) / (ax[k + 1] - ax[k]);
        }
        let mut out = [0.0; 12];
        for corner in 0..16usize {
            let mut weight = 1.0;
            let mut idx = lo;
            for a in 0..4 {
                let up = (corner >> a) & 1 == 1;
                if self.axes[a].len() == 1 {
                    if up {
                        weight = 0.0;
                    }
                    continue;
                }
                if up {
                    idx[a] += 1;
                    weight *= t[a];
                } else {
                    weight *= 1.0 - t[a];
                }
            }
            if weight == 0.0 {
                continue;
            }
            let s = &self.data[self.flat(idx)];
            for c in 0..12 {
                out[c] += weight * s[c];
            }
        }
        Ok(out)
    }

    pub fn field(self: &Arc<Self>, channel: GridChannel) -> GridField {
        GridField {
            grid: Arc::clone(self),
            channel,
        }
    }
}

/// One channel of a sampled grid viewed as a vector field.
#[derive(Clone, Debug)]
pub struct GridField {
    grid: Arc<SampledGrid>,
    channel: GridChannel,
}

impl VectorField for GridField {
    fn value(&self, x: &FourVector) -> Result<[f64; 4]> {
        let all = self.grid.interpolate(x)?;
        let off = match self.channel {
            GridChannel::Osmotic => 0,
            GridChannel::Current => 4,
            GridChannel::Potential => 8,
        };
        Ok([all[off], all[off + 1], all[off + 2], all[off + 3]])
    }
}
