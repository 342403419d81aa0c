//! The experiments behind `relkin <experiment>`.

use std::f64::consts::PI;
use std::path::PathBuf;

use serde::Serialize;

use relkin_core::export::{self, spectrum_records, ComplexValue};
use relkin_core::fields::FdConfig;
use relkin_core::free_particle::{
    chapman_kolmogorov_check, kolmogorov_convergence, normalization_integral, nr_limit_scan,
    spacelike_timelike_ratio, wrapped_gaussian, CkGrid, CkReport, Frame, FreeParticleSolution,
    KolmogorovGrid, KolmogorovReport, NonRelLimitReport, NormalizationGrid, NrTemplate,
};
use relkin_core::geometry::metric_trace;
use relkin_core::process::{
    diffusion_from_drift, diffusion_identities, field_drift_consistency, gradient_condition_residual,
    nelson1_general_residual, nelson1_residual, nelson2_residual, normalization_residual,
    DiffusionIdentities,
};
use relkin_core::sde::{
    estimate_diffusion, estimate_drift, integration_by_parts_check, simulate_ensemble,
    wiener_increments, Direction, Ensemble, IbpReport, ProcessSpec, SimulationConfig,
};
use relkin_core::spectral::{
    assemble_backward, assemble_forward, decay_rate_fit, markov_factorization_check, solve, Axis,
    GridCoefficients, PeriodicGrid, SpectralDiagnostics, SpectralExpansion,
};
use relkin_core::{FourVector, Gauge, PhysicalConstants};

use crate::config::{ConfigError, ExperimentConfig, ResolvedField, SimulationBlock};
use crate::report::Check;

/// Name and one-line description of every experiment.
pub const EXPERIMENTS: &[(&str, &str)] = &[
    ("identities", "algebraic identities of the diffusion tensor for random timelike drifts"),
    ("simulate", "forward or backward ensemble of sample paths, written as CSV"),
    ("estimate", "drift and diffusion estimated from an ensemble, against the field values"),
    ("free-particle", "closed-form density: normalization, Kolmogorov residuals, slices"),
    ("ck-check", "semigroup property of the free-particle density"),
    ("ratio-table", "spacelike to timelike density ratio for a list of intervals"),
    ("nr-limit", "non-relativistic limit of the free-particle process"),
    ("spectral", "eigenfunction expansion of the transition density on a periodic grid"),
    ("nelson-check", "normalization, Nelson and gradient-condition residuals of a field"),
    ("ibp-check", "Monte Carlo check of the stochastic integration-by-parts identity"),
];

/// Seed of the random drifts drawn by `identities`.
const IDENTITY_SEED: u64 = 0x005e_ed1d;

#[derive(Debug)]
pub enum RunError {
    /// Bad or incomplete configuration (exit code 2).
    Config(String),
    /// A numerical routine failed (exit code 1).
    Numeric(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "configuration error: {m}"),
            RunError::Numeric(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

impl From<relkin_core::Error> for RunError {
    fn from(e: relkin_core::Error) -> Self {
        RunError::Numeric(e.to_string())
    }
}

type Outcome = Result<Vec<Check>, RunError>;

fn config_err(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub k: PhysicalConstants,
    pub gauge: Gauge,
    pub field: ResolvedField,
    pub out: PathBuf,
    /// `--seed`, falling back to the simulation block.
    pub seed: Option<u64>,
    pub artifacts: Vec<String>,
    pub warnings: Vec<String>,
}

impl Context<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), RunError> {
        export::write_atomic(&self.out.join(name), bytes)
            .map_err(|e| RunError::Numeric(format!("writing {name}: {e}")))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let mut bytes = serde_json::to_vec_pretty(value)
            .map_err(|e| RunError::Numeric(format!("serializing {name}: {e}")))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn tol(&self, name: &str, default: f64) -> f64 {
        self.cfg.tolerance(name, default)
    }

    fn simulation(&self) -> Result<&SimulationBlock, RunError> {
        self.cfg
            .simulation
            .as_ref()
            .ok_or_else(|| config_err("this experiment needs a simulation block"))
    }

    fn seed(&self) -> Result<u64, RunError> {
        self.seed
            .ok_or_else(|| config_err("a seed is required: pass --seed or set simulation.seed"))
    }

    fn solution(&self) -> Result<&FreeParticleSolution, RunError> {
        self.field.solution.as_ref().ok_or_else(|| {
            config_err("this experiment needs a free-particle field (free_particle_rest or constant_potential)")
        })
    }

    fn spec(&self) -> ProcessSpec {
        ProcessSpec::new(self.k, self.field.drifts.clone())
    }

    /// `h/(mc²)`.
    fn time_unit(&self) -> f64 {
        self.k.h / (self.k.m * self.k.c * self.k.c)
    }

    /// `h/(mc)`.
    fn length_unit(&self) -> f64 {
        self.k.h / (self.k.m * self.k.c)
    }

    fn sim_config(&self, sim: &SimulationBlock, seed: u64) -> Result<SimulationConfig, RunError> {
        let mut cfg = SimulationConfig::new(sim.step, sim.n_steps, sim.n_paths, seed)
            .with_gauge(self.gauge.clone())
            .with_stride(sim.record_stride);
        if sim.direction == Direction::Backward {
            cfg = cfg.backward();
        }
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }
}

pub fn is_known(name: &str) -> bool {
    EXPERIMENTS.iter().any(|(n, _)| *n == name)
}

pub fn run_experiment(name: &str, ctx: &mut Context<'_>) -> Outcome {
    match name {
        "identities" => identities(ctx),
        "simulate" => simulate(ctx),
        "estimate" => estimate(ctx),
        "free-particle" => free_particle(ctx),
        "ck-check" => ck_check(ctx),
        "ratio-table" => ratio_table(ctx),
        "nr-limit" => nr_limit(ctx),
        "spectral" => spectral(ctx),
        "nelson-check" => nelson_check(ctx),
        "ibp-check" => ibp_check(ctx),
        other => Err(config_err(format!("unknown experiment {other:?}"))),
    }
}

fn max_of(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0_f64, |m, x| if x.is_nan() || m.is_nan() { f64::NAN } else { m.max(x) })
}

/// Random timelike drift `λc(cosh η, sinh η n̂)` from two standard normal
/// 4-tuples.
fn random_timelike(a: [f64; 4], b: [f64; 4], c: f64) -> FourVector {
    let norm = (a[1] * a[1] + a[2] * a[2] + a[3] * a[3]).sqrt();
    let dir = if norm > 0.0 {
        [a[1] / norm, a[2] / norm, a[3] / norm]
    } else {
        [1.0, 0.0, 0.0]
    };
    let eta = (1.5 * a[0]).abs().min(3.0);
    let scale = c * (0.5 * b[0]).exp();
    FourVector::new(
        scale * eta.cosh(),
        scale * eta.sinh() * dir[0],
        scale * eta.sinh() * dir[1],
        scale * eta.sinh() * dir[2],
    )
}

fn identities(ctx: &mut Context<'_>) -> Outcome {
    let n = ctx.cfg.params.n_random.unwrap_or(1000);
    let normals = wiener_increments(IDENTITY_SEED, 0, 2 * n, 1.0);
    let mut drifts: Vec<FourVector> = normals
        .chunks_exact(2)
        .map(|p| random_timelike(p[0], p[1], ctx.k.c))
        .collect();
    if let Some(points) = &ctx.cfg.params.points {
        for p in points {
            drifts.push(ctx.field.drifts.v_at(&FourVector(*p))?);
        }
    } else if ctx.field.solution.is_some() {
        drifts.push(ctx.field.drifts.v_at(&FourVector::ZERO)?);
    }

    let mut rows = Vec::with_capacity(drifts.len());
    let mut all: Vec<DiffusionIdentities> = Vec::with_capacity(drifts.len());
    let mut symmetry_rel = 0.0_f64;
    let mut min_ratio = f64::INFINITY;
    for v in &drifts {
        let id = diffusion_identities(v, &ctx.k)?;
        let w = diffusion_from_drift(v, &ctx.k)?;
        let wmax = w.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        symmetry_rel = symmetry_rel.max(id.symmetry / wmax);
        min_ratio = min_ratio.min(id.min_eigenvalue / wmax);
        rows.push(vec![
            v[0],
            v[1],
            v[2],
            v[3],
            id.symmetry,
            id.inverse,
            id.contraction,
            id.trace,
            id.min_eigenvalue,
        ]);
        all.push(id);
    }
    let csv = export::table_csv(
        &["v0", "v1", "v2", "v3", "symmetry", "inverse", "contraction", "trace", "min_eigenvalue"],
        rows,
    )?;
    ctx.write("identities.csv", csv.as_bytes())?;
    Ok(vec![
        Check::at_most("symmetry", symmetry_rel, ctx.tol("symmetry", 1e-14)),
        Check::at_most("inverse", max_of(all.iter().map(|i| i.inverse)), ctx.tol("inverse", 1e-10)),
        Check::at_most(
            "contraction",
            max_of(all.iter().map(|i| i.contraction)),
            ctx.tol("contraction", 1e-10),
        ),
        Check::at_most("trace", max_of(all.iter().map(|i| i.trace)), ctx.tol("trace", 1e-10)),
        Check::above("positive_definite", min_ratio, 0.0),
    ])
}

fn run_ensemble(ctx: &Context<'_>) -> Result<(Ensemble, SimulationConfig), RunError> {
    let sim = ctx.simulation()?;
    let seed = ctx.seed()?;
    let cfg = ctx.sim_config(sim, seed)?;
    let e = simulate_ensemble(&ctx.spec(), &FourVector(sim.x0), sim.s0, &cfg)?;
    Ok((e, cfg))
}

fn simulate(ctx: &mut Context<'_>) -> Outcome {
    let (e, _) = run_ensemble(ctx)?;
    let failed = e.failed_paths();
    if let Some(msg) = e.paths.iter().find_map(|p| p.failure.clone()) {
        ctx.warnings.push(msg);
    }
    let csv = export::ensemble_csv(&e)?;
    ctx.write("ensemble.csv", csv.as_bytes())?;
    Ok(vec![Check::at_most("failed_paths", failed as f64, 0.0)])
}

#[derive(Serialize)]
struct EstimateOutput {
    window: f64,
    drift: relkin_core::sde::DriftEstimate,
    drift_target: [f64; 4],
    diffusion: relkin_core::sde::DiffusionEstimate,
    diffusion_target: [[f64; 4]; 4],
}

/// Tolerance `n_sigma·stderr`, floored for components with no spread.
fn sigma_band(n_sigma: f64, se: f64, target: f64) -> f64 {
    (n_sigma * se).max(1e-12 * target.abs().max(f64::MIN_POSITIVE))
}

fn estimate(ctx: &mut Context<'_>) -> Outcome {
    let (e, cfg) = run_ensemble(ctx)?;
    let window = ctx
        .cfg
        .params
        .window
        .unwrap_or(cfg.step * cfg.n_steps as f64);
    let drift = estimate_drift(&e, window)?;
    let diffusion = estimate_diffusion(&e, window)?;
    let spec = ctx.spec();
    let drift_target = spec.drift(&e.x0, e.direction)?;
    let w_target = spec.diffusion_at(&e.x0)?;
    let n_sigma = ctx.tol("n_sigma", 3.0);

    let mut checks = Vec::new();
    for i in 0..4 {
        checks.push(Check::near(
            format!("drift[{i}]"),
            drift.value[i],
            drift_target[i],
            sigma_band(n_sigma, drift.stderr[i], drift_target[i]),
        ));
    }
    for i in 0..4 {
        for j in i..4 {
            checks.push(Check::near(
                format!("diffusion[{i}][{j}]"),
                diffusion.value[i][j],
                w_target[(i, j)],
                sigma_band(n_sigma, diffusion.stderr[i][j], w_target[(i, j)]),
            ));
        }
    }
    let trace = metric_trace(&w_target);
    checks.push(Check::near(
        "metric_contraction",
        diffusion.metric_contraction,
        trace,
        sigma_band(n_sigma, diffusion.metric_contraction_stderr, trace),
    ));
    checks.push(Check::at_most("failed_paths", e.failed_paths() as f64, 0.0));
    let out = EstimateOutput {
        window,
        drift_target: drift_target.0,
        diffusion_target: std::array::from_fn(|i| std::array::from_fn(|j| w_target[(i, j)])),
        drift,
        diffusion,
    };
    ctx.write_json("estimate.json", &out)?;
    Ok(checks)
}

/// `(x_time, x_space)` displacements of length `cτ`: along the drift and
/// along the frame's first spatial axis.
fn ratio_points(sol: &FreeParticleSolution, tau: f64) -> (FourVector, FourVector) {
    let c = sol.constants.c;
    let spatial = FourVector::new(0.0, c * tau, 0.0, 0.0);
    let space = match &sol.frame {
        Frame::Rest => spatial,
        Frame::Boosted(l) => l.transform_vector(&spatial),
    };
    (sol.v * tau, space)
}

/// Density ratio `P(x_space)/P(x_time)` with `g − g₀ = τ`.
fn density_ratio(sol: &FreeParticleSolution, tau: f64) -> Result<f64, RunError> {
    let (t, x) = ratio_points(sol, tau);
    let z = FourVector::ZERO;
    Ok(sol.density_at_delta(&x, &z, tau)? / sol.density_at_delta(&t, &z, tau)?)
}

#[derive(Serialize)]
struct FreeParticleOutput {
    delta_g: f64,
    normalization: f64,
    kolmogorov_grid: KolmogorovGrid,
    kolmogorov: KolmogorovReport,
    kolmogorov_half_step: KolmogorovReport,
    backward_order: f64,
    forward_order: f64,
}

fn free_particle(ctx: &mut Context<'_>) -> Outcome {
    let sol = ctx.solution()?.clone();
    let delta_g = ctx.cfg.params.delta_g.unwrap_or(ctx.time_unit());
    if !(delta_g > 0.0) {
        return Err(config_err("params.delta_g must be > 0"));
    }
    let norm = normalization_integral(&sol, delta_g, &NormalizationGrid::default())?;
    let mut grid = KolmogorovGrid::for_solution(&sol);
    if let Some(h) = ctx.cfg.params.fd_step {
        grid.fd_step = h;
    }
    let (coarse, fine, rb, rf) = kolmogorov_convergence(&sol, &grid)?;

    let tau = 1.0 / ctx.k.spacelike_rate();
    let ratio = density_ratio(&sol, tau)?;

    // slices through the mean along x⁰ and along x¹, in units of the rest width
    let sd = (2.0 * ctx.k.diffusion_scale() * delta_g).sqrt();
    let mean = sol.v * delta_g;
    let z = FourVector::ZERO;
    let mut rows = Vec::new();
    for i in 0..=160 {
        let off = -4.0 + 0.05 * i as f64;
        let mut a = mean;
        a[0] += off * sd;
        let mut b = mean;
        b[1] += off * sd;
        rows.push(vec![
            off,
            sol.density_at_delta(&a, &z, delta_g)?,
            sol.density_at_delta(&b, &z, delta_g)?,
        ]);
    }
    let csv = export::table_csv(&["offset_sigma", "p_x0", "p_x1"], rows)?;
    ctx.write("density_slices.csv", csv.as_bytes())?;
    let checks = vec![
        Check::at_most("normalization", (norm - 1.0).abs(), ctx.tol("normalization", 1e-4)),
        Check::at_most("kolmogorov_backward", coarse.backward_rel, ctx.tol("kolmogorov_backward", 1e-3)),
        Check::at_most("kolmogorov_forward", coarse.forward_rel, ctx.tol("kolmogorov_forward", 1e-3)),
        Check::near("kolmogorov_backward_order", rb, 4.0, ctx.tol("kolmogorov_backward_order", 0.5)),
        Check::near("kolmogorov_forward_order", rf, 4.0, ctx.tol("kolmogorov_forward_order", 0.5)),
        Check::at_most(
            "spacelike_ratio",
            (ratio / (-1.0_f64).exp() - 1.0).abs(),
            ctx.tol("spacelike_ratio", 1e-10),
        ),
    ];
    ctx.write_json(
        "free_particle.json",
        &FreeParticleOutput {
            delta_g,
            normalization: norm,
            kolmogorov_grid: grid,
            kolmogorov: coarse,
            kolmogorov_half_step: fine,
            backward_order: rb,
            forward_order: rf,
        },
    )?;
    Ok(checks)
}

#[derive(Serialize)]
struct CkOutput {
    split: [f64; 3],
    grid: CkGrid,
    report: CkReport,
    relative_error: f64,
}

fn ck_check(ctx: &mut Context<'_>) -> Outcome {
    let sol = ctx.solution()?.clone();
    let t = ctx.time_unit();
    let split = ctx.cfg.params.split.unwrap_or([0.0, 0.5 * t, t]);
    let x0 = ctx.cfg.simulation.as_ref().map_or(FourVector::ZERO, |s| FourVector(s.x0));
    let grid = CkGrid::default();
    let report = chapman_kolmogorov_check(&sol, &x0, (split[0], split[1], split[2]), &grid)
        .map_err(|e| match e {
            relkin_core::Error::Domain(m) if m.contains("ordered") => config_err(m),
            other => other.into(),
        })?;
    let rel = report.max_abs_error / report.max_density;
    ctx.write_json(
        "ck.json",
        &CkOutput {
            split,
            grid,
            report,
            relative_error: rel,
        },
    )?;
    Ok(vec![
        Check::at_most("ck_relative_error", rel, ctx.tol("ck_relative_error", 1e-5)),
        Check::at_most("ck_mass_deficit", report.mass_deficit, 1e-3),
    ])
}

fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let e = x.abs().log10().floor() as i32;
    let f = 10f64.powi(digits - 1 - e);
    (x * f).round() / f
}

fn ratio_table(ctx: &mut Context<'_>) -> Outcome {
    let rate = ctx.k.spacelike_rate();
    let taus = ctx
        .cfg
        .params
        .taus
        .clone()
        .unwrap_or_else(|| [0.0, 0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|a| a / rate).collect());
    if taus.is_empty() || taus.iter().any(|t| !(*t >= 0.0)) {
        return Err(config_err("params.taus must be a non-empty list of values >= 0"));
    }
    let rest = FreeParticleSolution::rest_solution(&ctx.k, Gauge::Identity)?;
    let mut rows = Vec::new();
    let mut worst = 0.0_f64;
    for &tau in &taus {
        let closed = spacelike_timelike_ratio(tau, &ctx.k)?;
        let from_density = if tau > 0.0 { density_ratio(&rest, tau)? } else { 1.0 };
        if closed > 0.0 {
            worst = worst.max((from_density / closed - 1.0).abs());
        }
        rows.push(vec![tau, rate * tau, closed, from_density]);
    }
    let csv = export::table_csv(&["tau", "rate_tau", "ratio", "ratio_from_density"], rows.clone())?;
    ctx.write("ratio_table.csv", csv.as_bytes())?;

    let mut sorted: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[2])).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = sorted
        .windows(2)
        .all(|w| w[1].0 == w[0].0 || w[1].1 < w[0].1 || w[1].1 == 0.0);
    let mut checks = vec![
        Check::at_most("ratio_from_density", worst, ctx.tol("ratio_from_density", 1e-10)),
        Check::flag("ratio_monotone", monotone),
    ];
    if ctx.k == PhysicalConstants::electron() {
        let reference = 7.7634e20;
        checks.push(Check::near(
            "electron_rate",
            rate,
            reference,
            0.5e-3 * 10f64.powi(reference.log10().floor() as i32),
        ));
        checks.push(Check::flag(
            "electron_rate_4_digits",
            round_sig(rate, 4) == round_sig(reference, 4),
        ));
    }
    Ok(checks)
}

fn nr_limit(ctx: &mut Context<'_>) -> Outcome {
    let c_values = ctx
        .cfg
        .params
        .c_values
        .clone()
        .unwrap_or_else(|| [1.0, 2.0, 4.0, 8.0, 16.0].iter().map(|a| a * ctx.k.c).collect());
    let delta_g = ctx.cfg.params.delta_g.unwrap_or(ctx.time_unit());
    let rest = nr_limit_scan(&c_values, &ctx.k, &ctx.gauge, NrTemplate::Rest, delta_g)
        .map_err(|e| config_err(e.to_string()))?;
    let lim = rest.w_limit;

    let mut doubling = 0.0_f64;
    let mut have_doubling = false;
    for i in 1..c_values.len() {
        if (c_values[i] / c_values[i - 1] - 2.0).abs() < 1e-12 {
            have_doubling = true;
            let r = rest.t_marginal_std[i] / rest.t_marginal_std[i - 1];
            doubling = doubling.max((r - 0.5).abs());
        }
    }
    let closed = max_of(
        rest.t_marginal_std
            .iter()
            .zip(&rest.t_marginal_std_closed_form)
            .map(|(a, b)| (a / b - 1.0).abs()),
    );
    let mut checks = vec![
        Check::near("std_slope", rest.std_slope, -1.0, ctx.tol("std_slope", 1e-6)),
        Check::at_most("std_closed_form", closed, ctx.tol("std_closed_form", 1e-10)),
        Check::at_most(
            "v0_over_c",
            max_of(rest.v0_over_c.iter().map(|r| (r - 1.0).abs())),
            ctx.tol("v0_over_c", 1e-12),
        ),
        Check::at_most(
            "w00_limit",
            max_of(rest.w00.iter().map(|w| (w - lim).abs() / lim)),
            ctx.tol("w00_limit", 1e-12),
        ),
        Check::at_most(
            "w0i_limit",
            max_of(rest.w0i.iter().flatten().map(|w| w.abs() / lim)),
            ctx.tol("w0i_limit", 1e-12),
        ),
        Check::at_most(
            "wij_limit",
            max_of(rest.wij.iter().flat_map(|m| {
                (0..3).flat_map(move |i| (0..3).map(move |j| (m[i][j] - if i == j { lim } else { 0.0 }).abs() / lim))
            })),
            ctx.tol("wij_limit", 1e-12),
        ),
        Check::at_most(
            "spatial_factor",
            max_of(rest.spatial_factor_deviation.iter().cloned()),
            ctx.tol("spatial_factor", 1e-12),
        ),
    ];
    if have_doubling {
        checks.push(Check::at_most("std_doubling_ratio", doubling, ctx.tol("std_doubling_ratio", 1e-10)));
    }
    let mut reports: Vec<NonRelLimitReport> = vec![rest];
    if let Some(vh) = ctx.cfg.params.moving_drift {
        let moving = nr_limit_scan(&c_values, &ctx.k, &ctx.gauge, NrTemplate::Moving(vh), delta_g)
            .map_err(|e| config_err(e.to_string()))?;
        let tol = ctx.tol("exponent", 0.1);
        for (name, value, target) in [
            ("w00_exponent", moving.w00_exponent, -2.0),
            ("w0i_exponent", moving.w0i_exponent, -1.0),
            ("wij_exponent", moving.wij_exponent, -2.0),
            ("norm_exponent", moving.norm_exponent, -2.0),
        ] {
            match value {
                Some(v) => checks.push(Check::near(name, v, target, tol)),
                None => ctx
                    .warnings
                    .push(format!("{name}: deviation vanishes identically, no exponent")),
            }
        }
        reports.push(moving);
    }
    ctx.write_json("nr_limit.json", &reports)?;
    Ok(checks)
}

#[derive(Serialize)]
struct SpectrumOutput {
    eigenvalues: Vec<ComplexValue>,
    diagnostics: SpectralDiagnostics,
    delta_g: f64,
    x0_index: usize,
    n_modes: usize,
}

fn smallest_decay(exp: &SpectralExpansion) -> Option<f64> {
    let top = exp.eigenvalues.iter().fold(1.0_f64, |m, z| m.max(z.norm()));
    exp.eigenvalues
        .iter()
        .map(|z| z.re)
        .filter(|&r| r > 1e-8 * top)
        .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |v| v.min(r))))
}

fn spectral(ctx: &mut Context<'_>) -> Outcome {
    let g = ctx
        .cfg
        .grid
        .as_ref()
        .ok_or_else(|| config_err("spectral needs a grid block"))?;
    if g.lengths.len() != g.points.len() {
        return Err(config_err("grid.lengths and grid.points must have the same length"));
    }
    let dim = g.points.len();
    let grid = PeriodicGrid::new(
        g.lengths
            .iter()
            .zip(&g.points)
            .map(|(&length, &points)| Axis { length, points })
            .collect(),
    )
    .map_err(|e| config_err(e.to_string()))?;
    let coef = match (&g.v, &g.w) {
        (Some(v), Some(w)) => {
            if v.len() != dim || w.len() != dim || w.iter().any(|r| r.len() != dim) {
                return Err(config_err(format!("grid.v and grid.w must be {dim}-dimensional")));
            }
            let vv = std::array::from_fn(|i| v.get(i).copied().unwrap_or(0.0));
            let ww = std::array::from_fn(|i| std::array::from_fn(|j| w.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0)));
            GridCoefficients::constant(vv, ww)
        }
        (None, None) => {
            let axes = g.axes.clone().unwrap_or_else(|| (1..=dim).collect());
            if axes.len() != dim {
                return Err(config_err("grid.axes must name one coordinate per grid dimension"));
            }
            GridCoefficients::from_process(ctx.spec(), axes, FourVector(g.base))
                .map_err(|e| config_err(e.to_string()))?
        }
        _ => return Err(config_err("give both grid.v and grid.w, or neither")),
    };
    let exp = solve(&coef, &grid)?;
    let n = grid.len();
    let n_modes = g.n_modes.unwrap_or(n);
    let x0 = g.x0_index;
    if x0 >= n {
        return Err(config_err(format!("grid.x0_index {x0} outside the {n}-node grid")));
    }
    let delta_g = ctx.cfg.params.delta_g.unwrap_or(0.2);
    let p = exp.density_field(x0, delta_g, n_modes)?;
    let stat = exp.stationary();
    let mass: f64 = p.iter().sum::<f64>() * grid.cell();
    let d = &exp.diagnostics;
    let mut checks = vec![
        Check::at_most("biorthonormality", d.biorthonormality, ctx.tol("biorthonormality", 1e-8)),
        Check::at_most("lambda0", d.lambda0, ctx.tol("lambda0", 1e-10)),
        Check::at_most("adjoint_spectrum", d.adjoint_mismatch, ctx.tol("adjoint_spectrum", 1e-8)),
        Check::at_most("mass", (mass - 1.0).abs(), ctx.tol("mass", 1e-8)),
    ];

    if let Some(rate) = smallest_decay(&exp) {
        let dgs: Vec<f64> = [2.0, 3.0, 4.0, 5.0, 6.0].iter().map(|a| a / rate).collect();
        let fit = decay_rate_fit(&exp, x0, &dgs)?;
        checks.push(Check::near("decay_rate", fit / rate, 1.0, ctx.tol("decay_rate", 0.05)));
        let params: Vec<f64> = [0.0, 0.5, 2.0, 3.0].iter().map(|a| a / rate).collect();
        let markov = markov_factorization_check(&exp, x0, &params, &Gauge::Identity)?;
        checks.push(Check::at_most("markov", markov, ctx.tol("markov", 1e-8)));
    }

    if coef.is_constant() && dim == 1 {
        let (v, w) = (coef.drift_at(&[0.0, 0.0])?[0], coef.diffusion_at(&[0.0, 0.0])?[0][0]);
        let length = grid.axes()[0].length;
        let k0 = 2.0 * PI / length;
        let mut worst = 0.0_f64;
        for k in -10i32..=10 {
            if k == 0 || (k.unsigned_abs() as usize) * 2 >= n {
                continue;
            }
            let kk = k as f64 * k0;
            let target = num_complex::Complex64::new(w * kk * kk, v * kk);
            let dist = exp
                .eigenvalues
                .iter()
                .map(|z| (z - target).norm())
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(dist / target.norm());
        }
        let bound = 10.0 * (2.0 * PI / n as f64).powi(2);
        checks.push(Check::at_most("eigenvalues", worst, ctx.tol("eigenvalues", bound)));
        let xs = grid.coords(x0)[0];
        let wg = max_of(p.iter().enumerate().map(|(i, pv)| {
            let x = grid.coords(i)[0];
            (pv - wrapped_gaussian(x, xs + v * delta_g, 2.0 * w * delta_g, length, 20)).abs()
        }));
        checks.push(Check::at_most("wrapped_gaussian", wg, ctx.tol("wrapped_gaussian", 1e-4)));
    }

    let ops = (assemble_backward(&coef, &grid)?, assemble_forward(&coef, &grid)?);
    ctx.write("operator_backward.csv", export::operator_csv(&ops.0)?.as_bytes())?;
    ctx.write("operator_forward.csv", export::operator_csv(&ops.1)?.as_bytes())?;
    let header: Vec<&str> = if dim == 1 {
        vec!["x", "p", "stationary"]
    } else {
        vec!["x", "y", "p", "stationary"]
    };
    let rows = (0..n).map(|i| {
        let c = grid.coords(i);
        let mut r = c[..dim].to_vec();
        r.push(p[i]);
        r.push(stat[i]);
        r
    });
    ctx.write("density.csv", export::table_csv(&header, rows)?.as_bytes())?;
    ctx.write_json(
        "spectrum.json",
        &SpectrumOutput {
            eigenvalues: spectrum_records(&exp.eigenvalues),
            diagnostics: exp.diagnostics.clone(),
            delta_g,
            x0_index: x0,
            n_modes,
        },
    )?;
    Ok(checks)
}

#[derive(Serialize)]
struct NelsonRow {
    point: [f64; 4],
    normalization: f64,
    nelson1: f64,
    nelson1_general: f64,
    nelson2: [f64; 4],
    gradient_condition: f64,
}

fn nelson_check(ctx: &mut Context<'_>) -> Outcome {
    let l = ctx.length_unit();
    let points: Vec<FourVector> = match &ctx.cfg.params.points {
        Some(p) if !p.is_empty() => p.iter().map(|x| FourVector(*x)).collect(),
        Some(_) => return Err(config_err("params.points is empty")),
        None if ctx.field.analytic_derivatives => [
            [0.0, 0.0, 0.0, 0.0],
            [0.5, 0.1, -0.2, 0.3],
            [1.0, 1.0, 1.0, 1.0],
        ]
        .iter()
        .map(|x| FourVector(*x) * l)
        .collect(),
        None => return Err(config_err("a grid field needs params.points inside the grid")),
    };
    let fd = FdConfig::relative(ctx.cfg.params.fd_step.unwrap_or(1e-4), l);
    let k = ctx.k;
    let d = &ctx.field.drifts;
    let a = &ctx.field.potential;
    let c2 = k.c * k.c;
    let force_scale = k.m * c2 / l;
    let curl_scale = k.m * k.c / l;
    let mut rows = Vec::new();
    for x in &points {
        let n2 = nelson2_residual(d, &k, a, x, &fd)?;
        let curl = gradient_condition_residual(d, &k, a, x, &fd)?;
        rows.push(NelsonRow {
            point: x.0,
            normalization: normalization_residual(d, &k, x)? / c2,
            nelson1: nelson1_residual(d, &k, x, &fd)? / c2,
            nelson1_general: nelson1_general_residual(d, &k, x, &fd)? / c2,
            nelson2: n2.0.map(|r| r / force_scale),
            gradient_condition: curl.iter().fold(0.0_f64, |m, c| m.max(c.abs())) / curl_scale,
        });
    }
    if let Some(w) = field_drift_consistency(d, a, &points, &fd)? {
        ctx.warnings.push(w);
    }
    let tol = if ctx.field.analytic_derivatives { 1e-10 } else { 1e-6 };
    let checks = vec![
        Check::at_most(
            "normalization",
            max_of(rows.iter().map(|r| r.normalization.abs())),
            ctx.tol("normalization", 1e-10),
        ),
        Check::at_most("nelson1", max_of(rows.iter().map(|r| r.nelson1.abs())), ctx.tol("nelson1", tol)),
        Check::at_most(
            "nelson1_general",
            max_of(rows.iter().map(|r| r.nelson1_general.abs())),
            ctx.tol("nelson1_general", tol),
        ),
        Check::at_most(
            "nelson2",
            max_of(rows.iter().flat_map(|r| r.nelson2.map(f64::abs))),
            ctx.tol("nelson2", tol),
        ),
        Check::at_most(
            "gradient_condition",
            max_of(rows.iter().map(|r| r.gradient_condition)),
            ctx.tol("gradient_condition", tol),
        ),
    ];
    ctx.write_json("nelson.json", &rows)?;
    Ok(checks)
}

#[derive(Serialize)]
struct IbpOutput {
    case: &'static str,
    interval: [f64; 2],
    report: IbpReport,
}

fn ibp_check(ctx: &mut Context<'_>) -> Outcome {
    let sol = ctx.solution()?.clone();
    let sim = ctx.simulation()?;
    let seed = ctx.seed()?;
    if sim.direction != Direction::Forward {
        return Err(config_err("ibp-check simulates forward paths"));
    }
    let t = ctx.time_unit();
    let [a, b] = ctx
        .cfg
        .params
        .interval
        .unwrap_or([sim.s0 + 0.1 * t, sim.s0 + 0.5 * t]);
    if !(sim.s0 < a && a < b) {
        return Err(config_err("params.interval must satisfy s0 < a < b"));
    }
    let mut cfg = ctx.sim_config(sim, seed)?;
    cfg.n_steps = cfg.n_steps.max(((b - sim.s0) / cfg.step).round() as usize);
    let x0 = FourVector(sim.x0);
    let s0 = sim.s0;
    let l = ctx.length_unit();
    let fd = FdConfig::relative(ctx.cfg.params.fd_step.unwrap_or(1e-3), l);
    let spec = sol.process_spec();
    let backward = |x: &FourVector, s: f64| sol.backward_drift(x, s, &x0, s0);

    let one = |_: &FourVector, _: f64| 1.0;
    let time = move |x: &FourVector, _: f64| x[0] / l;
    let space = move |x: &FourVector, _: f64| x[1] / l;
    type Case<'f> = (&'static str, &'f (dyn relkin_core::fields::ScalarField + Sync), &'f (dyn relkin_core::fields::ScalarField + Sync));
    let cases: [Case<'_>; 3] = [("1_1", &one, &one), ("x0_1", &time, &one), ("x1_x1", &space, &space)];
    let mut checks = Vec::new();
    let mut out = Vec::new();
    for (name, f, g) in cases {
        let r = integration_by_parts_check(f, g, &spec, &backward, &x0, s0, (a, b), &cfg, &fd)
            .map_err(|e| match e {
                relkin_core::Error::Domain(m) => config_err(m),
                other => other.into(),
            })?;
        checks.push(Check::at_most(format!("ibp_{name}"), r.abs_diff, r.budget));
        out.push(IbpOutput {
            case: name,
            interval: [a, b],
            report: r,
        });
    }
    ctx.write_json("ibp.json", &out)?;
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_complete() {
        assert_eq!(EXPERIMENTS.len(), 10);
        assert!(is_known("spectral"));
        assert!(!is_known("spectrum"));
    }

    #[test]
    fn random_drifts_are_timelike() {
        let normals = wiener_increments(IDENTITY_SEED, 0, 200, 1.0);
        for p in normals.chunks_exact(2) {
            let v = random_timelike(p[0], p[1], 1.0);
            assert!(v.norm2() > 0.0 && v[0] > 0.0);
        }
    }

    #[test]
    fn significant_figures() {
        assert_eq!(round_sig(7.76344e20, 4), 7.763e20);
        assert_eq!(round_sig(-0.012345, 2), -0.012);
    }
}
