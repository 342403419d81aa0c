//! Euler–Maruyama simulation of the forward/backward stochastic difference
//! equations and Monte Carlo estimators for drifts, diffusion tensors,
//! stochastic derivatives and the integration-by-parts identity.
//!
//! One step in direction `±` with parameter step `Δs > 0`:
//!
//! ```text
//! x ← x ± v±(x) ġ(s) Δs + b(x) √(ġ(s) Δs) ξ,    b bᵀ = 2 w(x),  ξ ~ N(0, I₄)
//! ```
//!
//! which makes the noise a time-changed Wiener process with `T(s) = g(s)`.
//! Every path draws from its own ChaCha stream keyed by `(seed, path_id)`,
//! so ensembles do not depend on thread count or scheduling.

use nalgebra::{Cholesky, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{FdConfig, ScalarField};
use crate::gauge::Gauge;
use crate::geometry::{FourVector, LorentzTransform, Tensor2, METRIC_DIAG};
use crate::process::{diffusion_from_drift, DriftFields, PhysicalConstants};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// Where the diffusion tensor comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DiffusionModel {
    /// Built from the current drift by the closed-form construction.
    FromDrift,
    /// Fixed tensor; the zero tensor gives deterministic paths.
    Constant(Tensor2),
}

/// Everything needed to step a path: constants, drifts and diffusion.
#[derive(Clone)]
pub struct ProcessSpec {
    pub constants: PhysicalConstants,
    pub drifts: DriftFields,
    pub diffusion: DiffusionModel,
}

/// `b` with `b bᵀ = 2w` (lower-triangular Cholesky factor of `2w`).
pub fn diffusion_factor(w: &Tensor2) -> Result<Tensor2> {
    let asym = (w - w.transpose()).iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let scale = w.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    if asym > 1e-12 * scale {
        return Err(Error::Factorization(format!(
            "diffusion tensor is not symmetric (defect {asym:e})"
        )));
    }
    Cholesky::new(w * 2.0)
        .map(|c| c.l())
        .ok_or_else(|| Error::Factorization("diffusion tensor is not positive definite".into()))
}

impl ProcessSpec {
    pub fn new(constants: PhysicalConstants, drifts: DriftFields) -> Self {
        ProcessSpec {
            constants,
            drifts,
            diffusion: DiffusionModel::FromDrift,
        }
    }

    pub fn with_diffusion(mut self, diffusion: DiffusionModel) -> Self {
        self.diffusion = diffusion;
        self
    }

    pub fn free_particle_rest(k: &PhysicalConstants) -> Self {
        Self::new(*k, DriftFields::free_particle_rest(k))
    }

    /// Parameter-free `v₊` or `v₋`.
    pub fn drift(&self, x: &FourVector, dir: Direction) -> Result<FourVector> {
        let u = self.drifts.u_at(x)?;
        let v = self.drifts.v_at(x)?;
        Ok(match dir {
            Direction::Forward => v + u,
            Direction::Backward => v - u,
        })
    }

    /// Parameter-free `wⁱʲ(x̄)`.
    pub fn diffusion_at(&self, x: &FourVector) -> Result<Tensor2> {
        match &self.diffusion {
            DiffusionModel::FromDrift => diffusion_from_drift(&self.drifts.v_at(x)?, &self.constants),
            DiffusionModel::Constant(w) => Ok(*w),
        }
    }

    fn factor_at(&self, x: &FourVector) -> Result<Tensor2> {
        match &self.diffusion {
            DiffusionModel::Constant(w) if w.iter().all(|c| *c == 0.0) => Ok(Tensor2::zeros()),
            _ => diffusion_factor(&self.diffusion_at(x)?),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimulationConfig {
    /// Parameter step `Δs > 0`; the direction sets its sign.
    pub step: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub direction: Direction,
    pub seed: u64,
    pub gauge: Gauge,
    /// Keep every `record_stride`-th point; the final point is always kept.
    pub record_stride: usize,
}

impl SimulationConfig {
    pub fn new(step: f64, n_steps: usize, n_paths: usize, seed: u64) -> Self {
        SimulationConfig {
            step,
            n_steps,
            n_paths,
            direction: Direction::Forward,
            seed,
            gauge: Gauge::Identity,
            record_stride: 1,
        }
    }

    pub fn backward(mut self) -> Self {
        self.direction = Direction::Backward;
        self
    }

    pub fn with_gauge(mut self, gauge: Gauge) -> Self {
        self.gauge = gauge;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::Domain(format!("step must be > 0, got {}", self.step)));
        }
        if self.n_steps == 0 || self.n_paths == 0 || self.record_stride == 0 {
            return Err(Error::Domain(
                "n_steps, n_paths and record_stride must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Signed parameter value after `n` steps from `s0`.
    pub fn s_at(&self, s0: f64, n: usize) -> f64 {
        s0 + self.direction.sign() * n as f64 * self.step
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
    pub s_values: Vec<f64>,
    pub points: Vec<FourVector>,
    pub direction: Direction,
    /// Set when the path was truncated because a coefficient could not be
    /// evaluated at a visited point.
    pub failure: Option<String>,
}

impl SamplePath {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    pub x0: FourVector,
    pub s0: f64,
    pub direction: Direction,
    pub gauge: Gauge,
    pub paths: Vec<SamplePath>,
}

/// RNG for one path. Streams are disjoint for distinct `path_id`.
pub fn path_rng(seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

/// Raw generalized-Wiener increments with variance `dt` per component.
pub fn wiener_increments(seed: u64, stream: u64, n: usize, dt: f64) -> Vec<[f64; 4]> {
    let mut rng = path_rng(seed, stream);
    let sd = dt.sqrt();
    (0..n)
        .map(|_| std::array::from_fn(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        }))
        .collect()
}

/// Steps one path and hands every state (including the initial one) to
/// `visit(step_index, s, x)`. Returns the error that stopped the path early.
pub fn run_path<F>(
    spec: &ProcessSpec,
    x0: &FourVector,
    s0: f64,
    cfg: &SimulationConfig,
    path_id: u64,
    mut visit: F,
) -> std::result::Result<(), (usize, Error)>
where
    F: FnMut(usize, f64, &FourVector),
{
    let mut rng = path_rng(cfg.seed, path_id);
    let sign = cfg.direction.sign();
    let mut x = *x0;
    visit(0, s0, &x);
    for n in 0..cfg.n_steps {
        let s = cfg.s_at(s0, n);
        let step = (|| -> Result<FourVector> {
            let gd = cfg.gauge.try_deriv(s)?;
            let drift = spec.drift(&x, cfg.direction)?;
            let b = spec.factor_at(&x)?;
            let xi = Vector4::from_fn(|_, _| -> f64 { StandardNormal.sample(&mut rng) });
            let noise = b * xi * (gd * cfg.step).sqrt();
            let next = x + drift * (sign * gd * cfg.step) + FourVector::from_na(&noise);
            if next.is_finite() {
                Ok(next)
            } else {
                Err(Error::NonFinite(format!("state after step {n}")))
            }
        })();
        match step {
            Ok(next) => {
                x = next;
                visit(n + 1, cfg.s_at(s0, n + 1), &x);
            }
            Err(e) => return Err((n, e)),
        }
    }
    Ok(())
}

/// Simulates `cfg.n_paths` independent paths from `(x̄₀, s₀)`.
pub fn simulate_ensemble(
    spec: &ProcessSpec,
    x0: &FourVector,
    s0: f64,
    cfg: &SimulationConfig,
) -> Result<Ensemble> {
    cfg.validate()?;
    let stride = cfg.record_stride;
    let paths = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|id| {
            let cap = cfg.n_steps / stride + 2;
            let mut s_values = Vec::with_capacity(cap);
            let mut points = Vec::with_capacity(cap);
            let mut last = (0usize, s0, *x0);
            let res = run_path(spec, x0, s0, cfg, id, |n, s, x| {
                if n % stride == 0 {
                    s_values.push(s);
                    points.push(*x);
                }
                last = (n, s, *x);
            });
            if !last.0.is_multiple_of(stride) {
                s_values.push(last.1);
                points.push(last.2);
            }
            SamplePath {
                s_values,
                points,
                direction: cfg.direction,
                failure: res
                    .err()
                    .map(|(n, e)| format!("path {id} stopped at step {n}: {e}")),
            }
        })
        .collect::<Vec<_>>();
    let failed = paths.iter().filter(|p| p.failure.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} paths truncated", paths.len());
    }
    Ok(Ensemble {
        x0: *x0,
        s0,
        direction: cfg.direction,
        gauge: cfg.gauge.clone(),
        paths,
    })
}

impl Ensemble {
    pub fn failed_paths(&self) -> usize {
        self.paths.iter().filter(|p| p.failure.is_some()).count()
    }

    /// Every point mapped through `L`; parameters are unchanged.
    pub fn transformed(&self, l: &LorentzTransform) -> Ensemble {
        Ensemble {
            x0: l.transform_vector(&self.x0),
            s0: self.s0,
            direction: self.direction,
            gauge: self.gauge.clone(),
            paths: self
                .paths
                .iter()
                .map(|p| SamplePath {
                    s_values: p.s_values.clone(),
                    points: p.points.iter().map(|x| l.transform_vector(x)).collect(),
                    direction: p.direction,
                    failure: p.failure.clone(),
                })
                .collect(),
        }
    }

    fn index_for_window(&self, window: f64) -> Result<usize> {
        let target = self.s0 + self.direction.sign() * window;
        let path = self
            .paths
            .iter()
            .find(|p| p.is_complete())
            .ok_or_else(|| Error::Insufficient("no complete paths".into()))?;
        let tol = 1e-9 * window.abs().max(1e-300);
        path.s_values
            .iter()
            .position(|&s| (s - target).abs() <= tol.max(1e-12 * target.abs()))
            .ok_or_else(|| {
                Error::Domain(format!(
                    "window {window} does not land on a recorded parameter value"
                ))
            })
    }

    /// Increments `x(s₀ ± window) − x̄₀` of all complete paths.
    pub fn increments(&self, window: f64) -> Result<Vec<FourVector>> {
        if !(window > 0.0) {
            return Err(Error::Domain(format!("window must be > 0, got {window}")));
        }
        let k = self.index_for_window(window)?;
        Ok(self
            .paths
            .iter()
            .filter(|p| p.is_complete() && p.points.len() > k)
            .map(|p| p.points[k] - self.x0)
            .collect())
    }

    /// Points at `s₀ ± window` of all complete paths.
    pub fn points_at(&self, window: f64) -> Result<Vec<FourVector>> {
        Ok(self
            .increments(window)?
            .into_iter()
            .map(|d| d + self.x0)
            .collect())
    }
}

/// Estimate with per-component standard errors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftEstimate {
    pub value: [f64; 4],
    pub stderr: [f64; 4],
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiffusionEstimate {
    pub value: [[f64; 4]; 4],
    pub stderr: [[f64; 4]; 4],
    /// `g_ij ŵⁱʲ`
    pub metric_contraction: f64,
    pub metric_contraction_stderr: f64,
    pub n: usize,
}

fn mean_and_stderr(xs: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = xs.clone().sum::<f64>() / nf;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

/// Sample mean of increments over `window`, divided by `±ġ(s₀)·window`.
pub fn estimate_drift(e: &Ensemble, window: f64) -> Result<DriftEstimate> {
    let inc = e.increments(window)?;
    let n = inc.len();
    if n < 2 {
        return Err(Error::Insufficient(format!(
            "{n} complete paths; standard errors need at least 2"
        )));
    }
    let denom = e.direction.sign() * e.gauge.deriv(e.s0) * window;
    let mut value = [0.0; 4];
    let mut stderr = [0.0; 4];
    // shift by the first increment so identical increments give zero spread
    let r = inc[0];
    for i in 0..4 {
        let (m, se) = mean_and_stderr(inc.iter().map(|d| d[i] - r[i]), n);
        value[i] = (m + r[i]) / denom;
        stderr[i] = se / denom.abs();
    }
    Ok(DriftEstimate { value, stderr, n })
}

/// Sample covariance of increments over `window`, divided by
/// `2ġ(s₀)·window`, plus the metric contraction `g_ij ŵⁱʲ`.
pub fn estimate_diffusion(e: &Ensemble, window: f64) -> Result<DiffusionEstimate> {
    let inc = e.increments(window)?;
    let n = inc.len();
    if n < 2 {
        return Err(Error::Insufficient(format!(
            "{n} complete paths; standard errors need at least 2"
        )));
    }
    let denom = 2.0 * e.gauge.deriv(e.s0) * window;
    let nf = n as f64;
    let r = inc[0];
    let shifted: Vec<[f64; 4]> = inc.iter().map(|d| std::array::from_fn(|i| d[i] - r[i])).collect();
    let mean: [f64; 4] = std::array::from_fn(|i| shifted.iter().map(|d| d[i]).sum::<f64>() / nf);
    let centered: Vec<[f64; 4]> = shifted
        .iter()
        .map(|d| std::array::from_fn(|i| d[i] - mean[i]))
        .collect();
    let mut value = [[0.0; 4]; 4];
    let mut stderr = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in i..4 {
            let prod = centered.iter().map(|z| z[i] * z[j]);
            let (m, se) = mean_and_stderr(prod, n);
            // unbiased covariance
            let cov = m * nf / (nf - 1.0);
            value[i][j] = cov / denom;
            value[j][i] = value[i][j];
            stderr[i][j] = se / denom;
            stderr[j][i] = stderr[i][j];
        }
    }
    let contraction = centered
        .iter()
        .map(|z| (0..4).map(|i| METRIC_DIAG[i] * z[i] * z[i]).sum::<f64>());
    let (m, se) = mean_and_stderr(contraction, n);
    Ok(DiffusionEstimate {
        value,
        stderr,
        metric_contraction: m * nf / (nf - 1.0) / denom,
        metric_contraction_stderr: se / denom,
        n,
    })
}

/// `D± f = ∂f/∂s + ġ(s)[v±ⁱ∂_i f ± wⁱʲ∂²_ij f]`.
pub fn stochastic_derivative(
    f: &dyn ScalarField,
    spec: &ProcessSpec,
    x: &FourVector,
    s: f64,
    dir: Direction,
    gauge: &Gauge,
    fd: &FdConfig,
) -> Result<f64> {
    let drift = spec.drift(x, dir)?;
    generator_with_drift(f, spec, &drift, x, s, dir, gauge, fd)
}

#[allow(clippy::too_many_arguments)]
fn generator_with_drift(
    f: &dyn ScalarField,
    spec: &ProcessSpec,
    drift: &FourVector,
    x: &FourVector,
    s: f64,
    dir: Direction,
    gauge: &Gauge,
    fd: &FdConfig,
) -> Result<f64> {
    let gd = gauge.try_deriv(s)?;
    let w = spec.diffusion_at(x)?;
    let ds = fd.derivative_1d(|t| f.value(x, t), s);
    let grad = fd.gradient(|y| Ok(f.value(y, s)), x)?;
    let hess = fd.scalar_hessian(|y| Ok(f.value(y, s)), x)?;
    let mut transport = 0.0;
    let mut diffusive = 0.0;
    for i in 0..4 {
        transport += drift[i] * grad[i];
        for j in 0..4 {
            diffusive += w[(i, j)] * hess[i][j];
        }
    }
    Ok(ds + gd * (transport + dir.sign() * diffusive))
}

/// Parameter-free backward drift of a process with one-time density
/// `p(x̄, s)`: `v₋ⁱ = v₊ⁱ − (2/p) ∂_j(p wⁱʲ)`.
pub fn backward_drift_from_density(
    spec: &ProcessSpec,
    p: &dyn ScalarField,
    x: &FourVector,
    s: f64,
    fd: &FdConfig,
) -> Result<FourVector> {
    let vp = spec.drift(x, Direction::Forward)?;
    let pw = |y: &FourVector| -> Result<[f64; 16]> {
        let w = spec.diffusion_at(y)?;
        let py = p.value(y, s);
        Ok(std::array::from_fn(|n| py * w[(n / 4, n % 4)]))
    };
    let mut div = [0.0; 4];
    for j in 0..4 {
        let dj = fd.partial(pw, x, j)?;
        for (i, d) in div.iter_mut().enumerate() {
            *d += dj[i * 4 + j];
        }
    }
    let px = p.value(x, s);
    if !(px > 0.0) {
        return Err(Error::Domain(format!("density {px:e} at {x} is not positive")));
    }
    Ok(FourVector(std::array::from_fn(|i| vp[i] - 2.0 * div[i] / px)))
}

/// Outcome of a Monte Carlo check of
/// `E{f(b)g(b) − f(a)g(a)} = ∫ₐᵇ E{g D₊f + f D₋g} ds`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IbpReport {
    pub lhs: f64,
    pub rhs: f64,
    pub abs_diff: f64,
    /// Standard error of the paired per-path difference.
    pub stderr: f64,
    /// `3·stderr + Δs·(|lhs| + |rhs|)/(b − a)`.
    pub budget: f64,
    pub pass: bool,
    pub n: usize,
}

/// Parameter-free backward drift `v₋(x̄, s)` of the simulated process.
pub type BackwardDrift<'a> = dyn Fn(&FourVector, f64) -> Result<FourVector> + Sync + 'a;

/// Checks the integration-by-parts identity on a forward ensemble from
/// `(x̄₀, s₀)`. `a` and `b` must lie on the step grid with `s₀ ≤ a < b`.
///
/// The backward derivative `D₋` needs the backward drift of the process
/// actually simulated, which for a process started at a point differs from
/// `v − u` of the stationary fields; it is supplied by the caller.
#[allow(clippy::too_many_arguments)]
pub fn integration_by_parts_check(
    f: &dyn ScalarField,
    g: &dyn ScalarField,
    spec: &ProcessSpec,
    backward: &BackwardDrift<'_>,
    x0: &FourVector,
    s0: f64,
    interval: (f64, f64),
    cfg: &SimulationConfig,
    fd: &FdConfig,
) -> Result<IbpReport> {
    cfg.validate()?;
    if cfg.direction != Direction::Forward {
        return Err(Error::Domain("integration by parts runs forward".into()));
    }
    let (a, b) = interval;
    let to_index = |s: f64| -> Result<usize> {
        let r = (s - s0) / cfg.step;
        let n = r.round();
        if n < 0.0 || (r - n).abs() > 1e-6 {
            return Err(Error::Domain(format!("s = {s} is not on the step grid")));
        }
        Ok(n as usize)
    };
    let (na, nb) = (to_index(a)?, to_index(b)?);
    if !(na < nb) || nb > cfg.n_steps {
        return Err(Error::Domain(format!(
            "interval [{a}, {b}] must be increasing and within the simulated range"
        )));
    }
    let step_cfg = SimulationConfig {
        n_steps: nb,
        ..cfg.clone()
    };
    let gauge = &cfg.gauge;
    let per_path: Vec<Result<(f64, f64)>> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|id| {
            let mut fa = 0.0;
            let mut fb = 0.0;
            let mut integral = 0.0;
            let mut prev: Option<f64> = None;
            let mut err: Option<Error> = None;
            let run = run_path(spec, x0, s0, &step_cfg, id, |n, s, x| {
                if n < na || err.is_some() {
                    return;
                }
                let val = (|| -> Result<f64> {
                    let dpf = stochastic_derivative(f, spec, x, s, Direction::Forward, gauge, fd)?;
                    let vm = backward(x, s)?;
                    let dmg = generator_with_drift(g, spec, &vm, x, s, Direction::Backward, gauge, fd)?;
                    Ok(g.value(x, s) * dpf + f.value(x, s) * dmg)
                })();
                match val {
                    Ok(v) => {
                        if let Some(p) = prev {
                            integral += 0.5 * (p + v) * cfg.step;
                        }
                        prev = Some(v);
                    }
                    Err(e) => err = Some(e),
                }
                if n == na {
                    fa = f.value(x, s) * g.value(x, s);
                }
                if n == nb {
                    fb = f.value(x, s) * g.value(x, s);
                }
            });
            if let Err((_, e)) = run {
                return Err(e);
            }
            if let Some(e) = err {
                return Err(e);
            }
            Ok((fb - fa, integral))
        })
        .collect();
    let pairs = per_path.into_iter().collect::<Result<Vec<_>>>()?;
    let n = pairs.len();
    if n < 2 {
        return Err(Error::Insufficient("need at least 2 paths".into()));
    }
    let nf = n as f64;
    let lhs = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let rhs = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (_, stderr) = mean_and_stderr(pairs.iter().map(|p| p.0 - p.1), n);
    let abs_diff = (lhs - rhs).abs();
    let budget = 3.0 * stderr + cfg.step * (lhs.abs() + rhs.abs()) / (b - a);
    Ok(IbpReport {
        lhs,
        rhs,
        abs_diff,
        stderr,
        budget,
        pass: abs_diff <= budget,
        n,
    })
}
