//! Closed-form free-particle solution: constant drift `V`, constant
//! diffusion tensor `W` and the Gaussian conditional density
//!
//! ```text
//! P(X̄, s | X̄₀, s₀) = √(det W_ij / (4πS)⁴) · exp(−W_ij Yⁱ Yʲ / (4S)),
//! S = g(s) − g(s₀),   Yⁱ = Xⁱ − X₀ⁱ − Vⁱ S,
//! ```
//!
//! together with numerical checks of its semigroup property, Kolmogorov
//! equations, normalization and non-relativistic limit.

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::Normal;

use crate::error::{Error, Result};
use crate::gauge::Gauge;
use crate::geometry::{FourVector, LorentzTransform, Tensor2};
use crate::process::{diffusion_from_drift, DriftFields, PhysicalConstants};
use crate::sde::ProcessSpec;

#[derive(Clone, Debug, PartialEq)]
pub enum Frame {
    Rest,
    Boosted(LorentzTransform),
}

#[derive(Clone, Debug)]
pub struct FreeParticleSolution {
    pub v: FourVector,
    pub w: Tensor2,
    w_inv: Tensor2,
    det_w_inv: f64,
    pub gauge: Gauge,
    pub constants: PhysicalConstants,
    pub frame: Frame,
}

impl FreeParticleSolution {
    fn from_parts(v: FourVector, w: Tensor2, gauge: Gauge, k: PhysicalConstants, frame: Frame) -> Result<Self> {
        let w = (w + w.transpose()) * 0.5;
        let w_inv = w
            .try_inverse()
            .ok_or_else(|| Error::Singular("free-particle diffusion tensor".into()))?;
        let w_inv = (w_inv + w_inv.transpose()) * 0.5;
        let det_w_inv = w_inv.determinant();
        if !(det_w_inv > 0.0) {
            return Err(Error::Singular(format!("det W_ij = {det_w_inv:e}")));
        }
        Ok(FreeParticleSolution {
            v,
            w,
            w_inv,
            det_w_inv,
            gauge,
            constants: k,
            frame,
        })
    }

    /// `u = 0`, `V = (c, 0, 0, 0)`, `W = (h/4πm) I₄`.
    pub fn rest_solution(k: &PhysicalConstants, gauge: Gauge) -> Result<Self> {
        k.validate()?;
        Self::from_parts(
            FourVector::new(k.c, 0.0, 0.0, 0.0),
            Tensor2::identity() * k.diffusion_scale(),
            gauge,
            *k,
            Frame::Rest,
        )
    }

    /// Rest solution carried to another frame: `V = L(c,0,0,0)`, `W = L w Lᵀ`.
    pub fn boosted_solution(k: &PhysicalConstants, gauge: Gauge, l: &LorentzTransform) -> Result<Self> {
        let rest = Self::rest_solution(k, gauge.clone())?;
        Self::from_parts(
            l.transform_vector(&rest.v),
            l.transform_tensor2(&rest.w),
            gauge,
            *k,
            Frame::Boosted(*l),
        )
    }

    /// Solution for an arbitrary constant timelike drift, with `W` from the
    /// closed-form construction.
    pub fn with_drift(k: &PhysicalConstants, gauge: Gauge, v: FourVector) -> Result<Self> {
        let w = diffusion_from_drift(&v, k)?;
        Self::from_parts(v, w, gauge, *k, Frame::Rest)
    }

    /// `h/(mc²)`, the parameter scale of the residual grids.
    pub fn time_unit(&self) -> f64 {
        let k = &self.constants;
        k.h / (k.m * k.c * k.c)
    }

    /// `h/(mc)`.
    pub fn length_unit(&self) -> f64 {
        let k = &self.constants;
        k.h / (k.m * k.c)
    }

    /// Covariant inverse `W_ij`.
    pub fn w_inv(&self) -> &Tensor2 {
        &self.w_inv
    }

    pub fn det_w_inv(&self) -> f64 {
        self.det_w_inv
    }

    pub fn drifts(&self) -> DriftFields {
        DriftFields::constant(FourVector::ZERO, self.v)
    }

    pub fn process_spec(&self) -> ProcessSpec {
        ProcessSpec::new(self.constants, self.drifts())
    }

    /// Eigenvalues and orthonormal eigenvectors (columns) of `W`.
    pub fn principal_axes(&self) -> ([f64; 4], Tensor2) {
        let e = SymmetricEigen::new(self.w);
        ([e.eigenvalues[0], e.eigenvalues[1], e.eigenvalues[2], e.eigenvalues[3]], e.eigenvectors)
    }

    /// `Q(Y, S)`.
    pub fn kernel_q(&self, y: &FourVector, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::Domain(format!("kernel needs S > 0, got {s}")));
        }
        let yv = y.to_na();
        let quad = (yv.transpose() * self.w_inv * yv)[(0, 0)];
        let norm = self.det_w_inv.sqrt() / (4.0 * std::f64::consts::PI * s).powi(2);
        Ok(norm * (-quad / (4.0 * s)).exp())
    }

    /// `Y = X − X₀ − V S`.
    pub fn shifted(&self, x: &FourVector, x0: &FourVector, big_s: f64) -> FourVector {
        *x - *x0 - self.v * big_s
    }

    fn delta_g(&self, s: f64, s0: f64) -> Result<f64> {
        let d = self.gauge.try_eval(s)? - self.gauge.try_eval(s0)?;
        if !(d > 0.0) {
            return Err(Error::Domain(format!(
                "conditional density needs g(s) > g(s0), got g(s) - g(s0) = {d}"
            )));
        }
        Ok(d)
    }

    /// `P(X̄, s | X̄₀, s₀)`.
    pub fn conditional_density(&self, x: &FourVector, s: f64, x0: &FourVector, s0: f64) -> Result<f64> {
        let big_s = self.delta_g(s, s0)?;
        self.kernel_q(&self.shifted(x, x0, big_s), big_s)
    }

    /// Density as a function of the gauge difference `S = g − g₀` directly.
    pub fn density_at_delta(&self, x: &FourVector, x0: &FourVector, big_s: f64) -> Result<f64> {
        self.kernel_q(&self.shifted(x, x0, big_s), big_s)
    }

    /// Parameter-free backward drift `v₋ = V + Y/S` of the process started
    /// at `(X̄₀, s₀)`.
    pub fn backward_drift(&self, x: &FourVector, s: f64, x0: &FourVector, s0: f64) -> Result<FourVector> {
        let big_s = self.delta_g(s, s0)?;
        Ok(self.v + self.shifted(x, x0, big_s) * (1.0 / big_s))
    }

    /// Mean `X̄₀ + V S` and covariance `2 W S`.
    pub fn moments(&self, x0: &FourVector, big_s: f64) -> (FourVector, Tensor2) {
        (*x0 + self.v * big_s, self.w * (2.0 * big_s))
    }

    /// CDF of the projection of `X − X₀ − V S` on a principal axis of `W`.
    pub fn principal_marginal(&self, axis: usize, big_s: f64) -> Result<Normal> {
        let (vals, _) = self.principal_axes();
        Normal::new(0.0, (2.0 * vals[axis] * big_s).sqrt())
            .map_err(|e| Error::Domain(format!("marginal: {e}")))
    }
}

/// `exp(−2πmc²τ/h)`: ratio of the density at a spacelike displacement `cτ`
/// along x¹ to the one at a timelike displacement `cτ` along x⁰.
pub fn spacelike_timelike_ratio(tau: f64, k: &PhysicalConstants) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::Domain(format!("tau must be >= 0, got {tau}")));
    }
    Ok((-k.spacelike_rate() * tau).exp())
}

/// Uniform grid `[-n_sigma σ, n_sigma σ]` with trapezoid weights.
fn trapezoid_axis(points: usize, half_width: f64) -> (Vec<f64>, Vec<f64>) {
    let h = 2.0 * half_width / (points - 1) as f64;
    let nodes = (0..points).map(|i| -half_width + h * i as f64).collect();
    let weights = (0..points)
        .map(|i| if i == 0 || i == points - 1 { 0.5 * h } else { h })
        .collect();
    (nodes, weights)
}

fn gaussian_1d(z: f64, var: f64) -> f64 {
    (-0.5 * z * z / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CkGrid {
    /// Quadrature points per principal axis.
    pub points: usize,
    /// Half-width of the quadrature grid in standard deviations of the
    /// longer transition.
    pub n_sigma: f64,
    /// Comparison points per principal axis, spread over ±3σ.
    pub eval_points: usize,
}

impl Default for CkGrid {
    fn default() -> Self {
        CkGrid {
            points: 256,
            n_sigma: 6.0,
            eval_points: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CkReport {
    pub max_abs_error: f64,
    pub max_density: f64,
    pub mass_deficit: f64,
    pub n_points: usize,
}

/// Verifies `p(·,s₂|·,s₀) = ∫ p(·,s₂|x̄₁,s₁) p(x̄₁,s₁|·,s₀) dx̄₁` by
/// trapezoid convolution along each principal axis of `W`, compared with
/// the closed form at a lattice of end points.
pub fn chapman_kolmogorov_check(
    sol: &FreeParticleSolution,
    x0: &FourVector,
    params: (f64, f64, f64),
    grid: &CkGrid,
) -> Result<CkReport> {
    let (s0, s1, s2) = params;
    if !(s0 < s1 && s1 < s2) {
        return Err(Error::Domain(format!(
            "parameters must be ordered s0 < s1 < s2, got {params:?}"
        )));
    }
    if grid.points < 8 || grid.eval_points < 1 || !(grid.n_sigma > 0.0) {
        return Err(Error::Domain(format!("invalid grid {grid:?}")));
    }
    let g = &sol.gauge;
    let (g0, g1, g2) = (g.try_eval(s0)?, g.try_eval(s1)?, g.try_eval(s2)?);
    let (s10, s21, s20) = (g1 - g0, g2 - g1, g2 - g0);
    let (vals, vecs) = sol.principal_axes();

    // per axis: quadrature nodes/weights and the mass of the first factor
    let mut axes = Vec::with_capacity(4);
    let mut mass_deficit = 0.0_f64;
    for &lam in &vals {
        let var10 = 2.0 * lam * s10;
        let var21 = 2.0 * lam * s21;
        let sd20 = (2.0 * lam * s20).sqrt();
        let (nodes, weights) = trapezoid_axis(grid.points, grid.n_sigma * sd20);
        let mass: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(z, w)| w * gaussian_1d(*z, var10))
            .sum();
        mass_deficit = mass_deficit.max((1.0 - mass).abs());
        axes.push((nodes, weights, var10, var21, sd20));
    }
    if mass_deficit > 1e-3 {
        return Err(Error::Domain(format!(
            "quadrature grid loses mass {mass_deficit:e}; widen or refine it"
        )));
    }

    let m = grid.eval_points;
    let coords: Vec<f64> = if m == 1 {
        vec![0.0]
    } else {
        (0..m).map(|i| -3.0 + 6.0 * i as f64 / (m - 1) as f64).collect()
    };
    let conv = |axis: usize, z2: f64| -> f64 {
        let (nodes, weights, var10, var21, _) = &axes[axis];
        nodes
            .iter()
            .zip(weights)
            .map(|(z1, w)| w * gaussian_1d(z2 - z1, *var21) * gaussian_1d(*z1, *var10))
            .sum()
    };
    let n_points = m.pow(4);
    let results: Vec<Result<(f64, f64)>> = (0..n_points)
        .into_par_iter()
        .map(|idx| {
            let mut zeta = [0.0; 4];
            let mut rem = idx;
            for (a, z) in zeta.iter_mut().enumerate() {
                *z = coords[rem % m] * axes[a].4;
                rem /= m;
            }
            let y = vecs * nalgebra::Vector4::from(zeta);
            let x2 = *x0 + sol.v * s20 + FourVector::from_na(&y);
            let numeric: f64 = (0..4).map(|a| conv(a, zeta[a])).product();
            let exact = sol.conditional_density(&x2, s2, x0, s0)?;
            Ok(((numeric - exact).abs(), exact))
        })
        .collect();
    let mut max_abs_error = 0.0_f64;
    let mut max_density = 0.0_f64;
    for r in results {
        let (e, p) = r?;
        max_abs_error = max_abs_error.max(e);
        max_density = max_density.max(p);
    }
    Ok(CkReport {
        max_abs_error,
        max_density,
        mass_deficit,
        n_points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormalizationGrid {
    pub points: usize,
    pub n_sigma: f64,
}

impl Default for NormalizationGrid {
    fn default() -> Self {
        NormalizationGrid {
            points: 32,
            n_sigma: 8.0,
        }
    }
}

/// `∫ P(X̄, s | X̄₀, s₀) dX̄` by a tensor trapezoid rule in the principal
/// axes of `W`, centred on the mean.
pub fn normalization_integral(
    sol: &FreeParticleSolution,
    big_s: f64,
    grid: &NormalizationGrid,
) -> Result<f64> {
    if !(big_s > 0.0) {
        return Err(Error::Domain(format!("S must be > 0, got {big_s}")));
    }
    if grid.points < 2 {
        return Err(Error::Domain("normalization grid needs >= 2 points".into()));
    }
    let (vals, vecs) = sol.principal_axes();
    let axes: Vec<(Vec<f64>, Vec<f64>)> = vals
        .iter()
        .map(|lam| trapezoid_axis(grid.points, grid.n_sigma * (2.0 * lam * big_s).sqrt()))
        .collect();
    let n = grid.points;
    let total: Result<Vec<f64>> = (0..n * n)
        .into_par_iter()
        .map(|outer| {
            let (i0, i1) = (outer % n, outer / n);
            let mut acc = 0.0;
            for i2 in 0..n {
                for i3 in 0..n {
                    let idx = [i0, i1, i2, i3];
                    let zeta = nalgebra::Vector4::from_fn(|a, _| axes[a].0[idx[a]]);
                    let weight: f64 = (0..4).map(|a| axes[a].1[idx[a]]).product();
                    let y = FourVector::from_na(&(vecs * zeta));
                    acc += weight * sol.kernel_q(&y, big_s)?;
                }
            }
            Ok(acc)
        })
        .collect();
    Ok(total?.iter().sum())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KolmogorovGrid {
    /// Gauge differences `S` in units of `h/(mc²)`.
    pub s_values: Vec<f64>,
    /// Points per principal axis, spread over ±`n_sigma` σ.
    pub points: usize,
    pub n_sigma: f64,
    /// Finite-difference step: `fd_step·h/(mc)` in the coordinates and
    /// `fd_step·h/(mc²)` in `g`.
    pub fd_step: f64,
    /// Smallest admissible `S`, same units as `s_values`.
    pub s_min: f64,
}

impl KolmogorovGrid {
    /// Default grid with `S` stretched by `(h/4πm)/λ_min(W)`, so the
    /// narrowest principal width of a boosted density matches the rest
    /// frame.
    pub fn for_solution(sol: &FreeParticleSolution) -> Self {
        let (vals, _) = sol.principal_axes();
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let stretch = (sol.constants.diffusion_scale() / min).max(1.0);
        let base = KolmogorovGrid::default();
        KolmogorovGrid {
            s_values: base.s_values.iter().map(|s| s * stretch).collect(),
            ..base
        }
    }
}

impl Default for KolmogorovGrid {
    fn default() -> Self {
        KolmogorovGrid {
            s_values: vec![1.0, 1.5, 2.0],
            points: 5,
            n_sigma: 2.0,
            fd_step: 1e-2,
            s_min: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KolmogorovReport {
    pub backward_max: f64,
    pub forward_max: f64,
    /// Largest magnitude of any single term on the grid.
    pub scale: f64,
    pub backward_rel: f64,
    pub forward_rel: f64,
}

/// Second-order central derivatives of `f` in the four coordinates.
fn fd2_grad_hess(f: &dyn Fn(&FourVector) -> Result<f64>, x: &FourVector, h: f64) -> Result<([f64; 4], [[f64; 4]; 4])> {
    let at = |d: [f64; 4]| f(&(*x + FourVector(d)));
    let unit = |i: usize, a: f64| {
        let mut d = [0.0; 4];
        d[i] = a;
        d
    };
    let c = f(x)?;
    let mut grad = [0.0; 4];
    let mut hess = [[0.0; 4]; 4];
    for i in 0..4 {
        let p = at(unit(i, h))?;
        let m = at(unit(i, -h))?;
        grad[i] = (p - m) / (2.0 * h);
        hess[i][i] = (p - 2.0 * c + m) / (h * h);
        for j in 0..i {
            let mut pp = unit(i, h);
            pp[j] = h;
            let mut pm = unit(i, h);
            pm[j] = -h;
            let mut mp = unit(i, -h);
            mp[j] = h;
            let mut mm = unit(i, -h);
            mm[j] = -h;
            let d = (at(pp)? - at(pm)? - at(mp)? + at(mm)?) / (4.0 * h * h);
            hess[i][j] = d;
            hess[j][i] = d;
        }
    }
    Ok((grad, hess))
}

/// Residuals of the backward equation in `(X̄₀, s₀)` and of the forward
/// equation in `(X̄, s)`, both with second-order central differences.
pub fn kolmogorov_residuals(sol: &FreeParticleSolution, grid: &KolmogorovGrid) -> Result<KolmogorovReport> {
    if grid.s_values.is_empty() || grid.points < 1 || !(grid.fd_step > 0.0) {
        return Err(Error::Domain(format!("invalid residual grid {grid:?}")));
    }
    if let Some(bad) = grid.s_values.iter().find(|&&s| !(s >= grid.s_min)) {
        return Err(Error::Domain(format!(
            "S = {bad} below the cutoff {}",
            grid.s_min
        )));
    }
    let gauge = &sol.gauge;
    let s0 = 0.0;
    let g0 = gauge.try_eval(s0)?;
    let x0 = FourVector::ZERO;
    let (vals, vecs) = sol.principal_axes();
    let t_unit = sol.time_unit();
    let h = grid.fd_step * sol.length_unit();
    let hg = grid.fd_step * t_unit;
    let m = grid.points;
    let coords: Vec<f64> = if m == 1 {
        vec![0.0]
    } else {
        (0..m)
            .map(|i| grid.n_sigma * (-1.0 + 2.0 * i as f64 / (m - 1) as f64))
            .collect()
    };
    let w = &sol.w;
    let v = &sol.v;

    let mut tasks = Vec::new();
    for &big_s in &grid.s_values {
        for idx in 0..m.pow(4) {
            tasks.push((big_s * t_unit, idx));
        }
    }
    let rows: Vec<Result<(f64, f64, f64)>> = tasks
        .par_iter()
        .map(|&(big_s, idx)| {
            let s = gauge.inverse(g0 + big_s)?;
            let mut zeta = [0.0; 4];
            let mut rem = idx;
            for (a, z) in zeta.iter_mut().enumerate() {
                *z = coords[rem % m] * (2.0 * vals[a] * big_s).sqrt();
                rem /= m;
            }
            let y = FourVector::from_na(&(vecs * nalgebra::Vector4::from(zeta)));
            let x = x0 + *v * big_s + y;

            // backward: vary the initial point and parameter
            let p_init = |z: &FourVector| sol.conditional_density(&x, s, z, s0);
            let (g_b, h_b) = fd2_grad_hess(&p_init, &x0, h)?;
            let d0 = gauge.try_deriv(s0)?;
            let e0 = hg / d0;
            let ds0 = (sol.conditional_density(&x, s, &x0, s0 + e0)?
                - sol.conditional_density(&x, s, &x0, s0 - e0)?)
                / (2.0 * e0);
            let t1 = ds0 / d0;
            let t2: f64 = (0..4).map(|i| v[i] * g_b[i]).sum();
            let t3: f64 = (0..4)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .map(|(i, j)| w[(i, j)] * h_b[i][j])
                .sum();
            let back = t1 + t2 + t3;

            // forward: vary the final point and parameter
            let p_final = |z: &FourVector| sol.conditional_density(z, s, &x0, s0);
            let (g_f, h_f) = fd2_grad_hess(&p_final, &x, h)?;
            let d1 = gauge.try_deriv(s)?;
            let e1 = hg / d1;
            let ds = (sol.conditional_density(&x, s + e1, &x0, s0)?
                - sol.conditional_density(&x, s - e1, &x0, s0)?)
                / (2.0 * e1);
            let f1 = ds / d1;
            let f2: f64 = (0..4).map(|i| v[i] * g_f[i]).sum();
            let f3: f64 = (0..4)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .map(|(i, j)| w[(i, j)] * h_f[i][j])
                .sum();
            let fwd = f1 + f2 - f3;
            let scale = [t1, t2, t3, f1, f2, f3]
                .iter()
                .fold(0.0_f64, |a, b| a.max(b.abs()));
            Ok((back.abs(), fwd.abs(), scale))
        })
        .collect();
    let mut report = KolmogorovReport {
        backward_max: 0.0,
        forward_max: 0.0,
        scale: 0.0,
        backward_rel: 0.0,
        forward_rel: 0.0,
    };
    for r in rows {
        let (b, f, sc) = r?;
        report.backward_max = report.backward_max.max(b);
        report.forward_max = report.forward_max.max(f);
        report.scale = report.scale.max(sc);
    }
    report.backward_rel = report.backward_max / report.scale;
    report.forward_rel = report.forward_max / report.scale;
    Ok(report)
}

/// Residuals at `fd_step` and `fd_step/2`, with the reduction ratios.
pub fn kolmogorov_convergence(
    sol: &FreeParticleSolution,
    grid: &KolmogorovGrid,
) -> Result<(KolmogorovReport, KolmogorovReport, f64, f64)> {
    let coarse = kolmogorov_residuals(sol, grid)?;
    let fine_grid = KolmogorovGrid {
        fd_step: grid.fd_step / 2.0,
        ..grid.clone()
    };
    let fine = kolmogorov_residuals(sol, &fine_grid)?;
    let rb = coarse.backward_max / fine.backward_max;
    let rf = coarse.forward_max / fine.forward_max;
    Ok((coarse, fine, rb, rf))
}

/// Drift template for the non-relativistic limit scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum NrTemplate {
    /// `v = (c, 0, 0, 0)`.
    Rest,
    /// `v = (c, v̂)` with a fixed spatial part.
    Moving([f64; 3]),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NonRelLimitReport {
    pub c_values: Vec<f64>,
    pub delta_g: f64,
    /// Standard deviation of `t = x⁰/c` under the rest density, by quadrature.
    pub t_marginal_std: Vec<f64>,
    /// `√(hΔg/(2πm))/c`.
    pub t_marginal_std_closed_form: Vec<f64>,
    /// `v⁰/c`.
    pub v0_over_c: Vec<f64>,
    pub spatial_drift: Vec<[f64; 3]>,
    pub w00: Vec<f64>,
    pub w0i: Vec<[f64; 3]>,
    pub wij: Vec<[[f64; 3]; 3]>,
    /// `|v|²/c²`.
    pub norm_ratio: Vec<f64>,
    /// Largest relative deviation between the spatial factor of the rest
    /// density and the non-relativistic Gaussian kernel.
    pub spatial_factor_deviation: Vec<f64>,
    /// `h/4πm`, the common limit of `w⁰⁰` and the spatial diagonal.
    pub w_limit: f64,
    pub std_slope: f64,
    /// Log-log slopes of the distances to the limits; `None` when the
    /// distances vanish identically.
    pub w00_exponent: Option<f64>,
    pub w0i_exponent: Option<f64>,
    pub wij_exponent: Option<f64>,
    pub norm_exponent: Option<f64>,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Insufficient("slope fit needs >= 2 aligned points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

fn exponent_of(c: &[f64], dev: &[f64]) -> Result<Option<f64>> {
    if dev.iter().all(|d| *d == 0.0) {
        Ok(None)
    } else {
        loglog_slope(c, dev).map(Some)
    }
}

/// Standard deviation of the `t = x⁰/c` marginal of the rest density,
/// computed by trapezoid quadrature along `x⁰` at the spatial mean (the
/// rest density factorizes, so the slice has the marginal's shape).
fn t_marginal_std(sol: &FreeParticleSolution, big_s: f64) -> Result<f64> {
    let c = sol.constants.c;
    let sd_guess = (2.0 * sol.w[(0, 0)] * big_s).sqrt();
    let centre = c * big_s;
    let (nodes, weights) = trapezoid_axis(2001, 10.0 * sd_guess);
    let x0 = FourVector::ZERO;
    let mut m0 = 0.0;
    let mut m1 = 0.0;
    for (z, wt) in nodes.iter().zip(&weights) {
        let t = (centre + z) / c;
        let p = sol.density_at_delta(&FourVector::new(centre + z, 0.0, 0.0, 0.0), &x0, big_s)?;
        m0 += wt * p;
        m1 += wt * p * t;
    }
    let mean = m1 / m0;
    // second moment about the mean, formed directly to avoid cancellation
    let mut var = 0.0;
    for (z, wt) in nodes.iter().zip(&weights) {
        let t = (centre + z) / c;
        let p = sol.density_at_delta(&FourVector::new(centre + z, 0.0, 0.0, 0.0), &x0, big_s)?;
        var += wt * p * (t - mean).powi(2);
    }
    Ok((var / m0).sqrt())
}

/// Maximum relative deviation between `P / (x⁰ factor at its mode)` and the
/// three-dimensional Gaussian of variance `hΔg/(2πm)` per axis.
fn spatial_factor_deviation(sol: &FreeParticleSolution, big_s: f64) -> Result<f64> {
    let k = &sol.constants;
    let var = k.h * big_s / (2.0 * std::f64::consts::PI * k.m);
    let sd = var.sqrt();
    let t_mode = (sol.w_inv[(0, 0)] / (4.0 * std::f64::consts::PI * big_s)).sqrt();
    let nr_norm = (2.0 * std::f64::consts::PI * var).powf(-1.5);
    let mut worst = 0.0_f64;
    let offsets = [-2.0, -0.7, 0.0, 0.4, 1.5];
    for &a in &offsets {
        for &b in &offsets {
            for &cc in &offsets {
                let dx = [a * sd, b * sd, cc * sd];
                let x = FourVector::new(k.c * big_s, dx[0], dx[1], dx[2]);
                let p = sol.density_at_delta(&x, &FourVector::ZERO, big_s)?;
                let r2 = dx.iter().map(|d| d * d).sum::<f64>();
                let nr = nr_norm * (-0.5 * r2 / var).exp();
                worst = worst.max((p / t_mode - nr).abs() / nr);
            }
        }
    }
    Ok(worst)
}

/// Scans the speed of light over `c_values` (ascending) keeping `m` and `h`
/// of the template.
pub fn nr_limit_scan(
    c_values: &[f64],
    template: &PhysicalConstants,
    gauge: &Gauge,
    drift: NrTemplate,
    delta_g: f64,
) -> Result<NonRelLimitReport> {
    if c_values.len() < 2 || c_values.windows(2).any(|w| !(w[1] > w[0])) || !(c_values[0] > 0.0) {
        return Err(Error::Domain(
            "c_values must be positive, strictly ascending, with >= 2 entries".into(),
        ));
    }
    if !(delta_g > 0.0) {
        return Err(Error::Domain(format!("delta_g must be > 0, got {delta_g}")));
    }
    let w_limit = template.diffusion_scale();
    let mut r = NonRelLimitReport {
        c_values: c_values.to_vec(),
        delta_g,
        t_marginal_std: vec![],
        t_marginal_std_closed_form: vec![],
        v0_over_c: vec![],
        spatial_drift: vec![],
        w00: vec![],
        w0i: vec![],
        wij: vec![],
        norm_ratio: vec![],
        spatial_factor_deviation: vec![],
        w_limit,
        std_slope: 0.0,
        w00_exponent: None,
        w0i_exponent: None,
        wij_exponent: None,
        norm_exponent: None,
    };
    for &c in c_values {
        let k = template.with_c(c);
        k.validate()?;
        let rest = FreeParticleSolution::rest_solution(&k, gauge.clone())?;
        r.t_marginal_std.push(t_marginal_std(&rest, delta_g)?);
        r.t_marginal_std_closed_form
            .push((k.h * delta_g / (2.0 * std::f64::consts::PI * k.m)).sqrt() / c);
        r.spatial_factor_deviation
            .push(spatial_factor_deviation(&rest, delta_g)?);

        let v = match drift {
            NrTemplate::Rest => FourVector::new(c, 0.0, 0.0, 0.0),
            NrTemplate::Moving(vh) => FourVector::new(c, vh[0], vh[1], vh[2]),
        };
        let w = diffusion_from_drift(&v, &k)?;
        r.v0_over_c.push(v[0] / c);
        r.spatial_drift.push([v[1], v[2], v[3]]);
        r.w00.push(w[(0, 0)]);
        r.w0i.push([w[(0, 1)], w[(0, 2)], w[(0, 3)]]);
        r.wij
            .push(std::array::from_fn(|i| std::array::from_fn(|j| w[(i + 1, j + 1)])));
        r.norm_ratio.push(v.dot(&v) / (c * c));
    }
    r.std_slope = loglog_slope(c_values, &r.t_marginal_std)?;
    let dev00: Vec<f64> = r.w00.iter().map(|w| (w - w_limit).abs()).collect();
    let dev0i: Vec<f64> = r
        .w0i
        .iter()
        .map(|a| a.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
        .collect();
    let devij: Vec<f64> = r
        .wij
        .iter()
        .map(|a| {
            let mut m = 0.0_f64;
            for (i, row) in a.iter().enumerate() {
                for (j, x) in row.iter().enumerate() {
                    let target = if i == j { w_limit } else { 0.0 };
                    m = m.max((x - target).abs());
                }
            }
            m
        })
        .collect();
    let devn: Vec<f64> = r.norm_ratio.iter().map(|x| (x - 1.0).abs()).collect();
    r.w00_exponent = exponent_of(c_values, &dev00)?;
    r.w0i_exponent = exponent_of(c_values, &dev0i)?;
    r.wij_exponent = exponent_of(c_values, &devij)?;
    r.norm_exponent = exponent_of(c_values, &devn)?;
    Ok(r)
}

/// Periodized 1D Gaussian density on `[0, period)`, summed over images.
pub fn wrapped_gaussian(x: f64, mean: f64, var: f64, period: f64, images: i32) -> f64 {
    (-images..=images)
        .map(|n| gaussian_1d(x - mean + n as f64 * period, var))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn nat() -> PhysicalConstants {
        PhysicalConstants::natural()
    }

    fn rest() -> FreeParticleSolution {
        FreeParticleSolution::rest_solution(&nat(), Gauge::Identity).unwrap()
    }

    #[test]
    fn rest_values() {
        let sol = rest();
        assert_eq!(sol.v, FourVector::new(1.0, 0.0, 0.0, 0.0));
        for i in 0..4 {
            assert!((sol.w[(i, i)] - 1.0 / (4.0 * PI)).abs() < 1e-15);
        }
        assert!((sol.det_w_inv() - (4.0 * PI).powi(4)).abs() < 1e-9 * (4.0 * PI).powi(4));
        assert!((sol.kernel_q(&FourVector::ZERO, 1.0).unwrap() - 1.0).abs() < 1e-13);
        assert!(sol.kernel_q(&FourVector::ZERO, 0.0).is_err());
    }

    #[test]
    fn boosted_drift() {
        let l = LorentzTransform::boost([0.6, 0.0, 0.0]).unwrap();
        let sol = FreeParticleSolution::boosted_solution(&nat(), Gauge::Identity, &l).unwrap();
        assert!((sol.v[0] - 1.25).abs() < 1e-14);
        assert!((sol.v[1] - 0.75).abs() < 1e-14);
        assert!((sol.v.norm2() - 1.0).abs() < 1e-14);
        let tr = crate::geometry::metric_trace(&sol.w);
        assert!((tr + 1.0 / (2.0 * PI)).abs() < 1e-14);
        let id = FreeParticleSolution::boosted_solution(&nat(), Gauge::Identity, &LorentzTransform::identity()).unwrap();
        assert_eq!(id.w, rest().w);
    }

    #[test]
    fn timelike_and_spacelike_points() {
        let sol = rest();
        let p1 = sol
            .conditional_density(&FourVector::new(1.0, 0.0, 0.0, 0.0), 1.0, &FourVector::ZERO, 0.0)
            .unwrap();
        assert!((p1 - 1.0).abs() < 1e-13);
        let p2 = sol
            .conditional_density(&FourVector::new(0.0, 1.0, 0.0, 0.0), 1.0, &FourVector::ZERO, 0.0)
            .unwrap();
        assert!((p2 - (-2.0 * PI).exp()).abs() < 1e-15);
        assert!(sol
            .conditional_density(&FourVector::ZERO, 0.0, &FourVector::ZERO, 0.0)
            .is_err());
    }

    #[test]
    fn ratio_values() {
        assert_eq!(spacelike_timelike_ratio(0.0, &nat()).unwrap(), 1.0);
        let r = spacelike_timelike_ratio(1.0, &nat()).unwrap();
        assert!((r - 1.8674e-3).abs() < 1e-7);
        let rate = PhysicalConstants::electron().spacelike_rate();
        assert!((rate / 7.7634e20 - 1.0).abs() < 5e-5);
    }

    #[test]
    fn backward_drift_matches_density_gradient() {
        let sol = rest();
        let spec = sol.process_spec();
        let x0 = FourVector::ZERO;
        let p = |x: &FourVector, s: f64| sol.conditional_density(x, s, &x0, 0.0).unwrap_or(0.0);
        let x = FourVector::new(0.9, 0.2, -0.1, 0.3);
        let fd = crate::fields::FdConfig { step: 1e-3 };
        let numeric = crate::sde::backward_drift_from_density(&spec, &p, &x, 1.0, &fd).unwrap();
        let exact = sol.backward_drift(&x, 1.0, &x0, 0.0).unwrap();
        for i in 0..4 {
            assert!((numeric[i] - exact[i]).abs() < 1e-8, "{numeric} vs {exact}");
        }
    }

    #[test]
    fn slope_fit() {
        let x = [1.0, 2.0, 4.0];
        let y = [3.0, 0.75, 0.1875];
        assert!((loglog_slope(&x, &y).unwrap() + 2.0).abs() < 1e-14);
    }

    #[test]
    fn wrapped_gaussian_is_periodic_and_normalized() {
        let per = 2.0 * PI;
        let a = wrapped_gaussian(0.3, 1.0, 0.5, per, 10);
        let b = wrapped_gaussian(0.3 + per, 1.0, 0.5, per, 10);
        assert!((a - b).abs() < 1e-14);
        let n = 2000;
        let h = per / n as f64;
        let total: f64 = (0..n).map(|i| wrapped_gaussian(i as f64 * h, 1.0, 0.5, per, 10) * h).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
