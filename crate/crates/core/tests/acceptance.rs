//! The ten acceptance criteria at their stated tolerances. Each criterion
//! prints one PASS/FAIL line (written straight to stderr so it shows even
//! when test output is captured).

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use relkin_core::fields::{ConstantField, FdConfig, FiniteDifference};
use relkin_core::free_particle::{
    chapman_kolmogorov_check, kolmogorov_convergence, normalization_integral, nr_limit_scan,
    wrapped_gaussian, CkGrid, FreeParticleSolution, KolmogorovGrid, NormalizationGrid, NrTemplate,
};
use relkin_core::process::{
    diffusion_identities, gradient_condition_residual, nelson1_residual, nelson2_residual,
    normalization_residual,
};
use relkin_core::sde::{
    estimate_diffusion, estimate_drift, integration_by_parts_check, simulate_ensemble,
    wiener_increments, DiffusionEstimate, DriftEstimate, Ensemble, SimulationConfig,
};
use relkin_core::spectral::{decay_rate_fit, solve, GridCoefficients, PeriodicGrid};
use relkin_core::{DriftFields, EMPotential, FourVector, Gauge, LorentzTransform, PhysicalConstants, Tensor2};
use statrs::distribution::{ContinuousCDF, Normal};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn criterion(n: usize, name: &str, limit: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let t = Instant::now();
    let v = f();
    let elapsed = t.elapsed();
    let ok = v.pass && elapsed <= limit;
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n:>2} {name:<28} {}  {} [{:.3} s, limit {} s]",
        if ok { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    ok
}

fn nat() -> PhysicalConstants {
    PhysicalConstants::natural()
}

fn rest() -> FreeParticleSolution {
    FreeParticleSolution::rest_solution(&nat(), Gauge::Identity).unwrap()
}

fn boost() -> LorentzTransform {
    LorentzTransform::boost([0.6, 0.0, 0.0]).unwrap()
}

/// Largest |estimate − target| in units of the standard error, over the
/// drift, the upper triangle of the diffusion tensor and the metric
/// contraction.
fn worst_z(d: &DriftEstimate, w: &DiffusionEstimate, v: &FourVector, wt: &Tensor2, trace: f64) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..4 {
        worst = worst.max((d.value[i] - v[i]).abs() / d.stderr[i]);
        for j in i..4 {
            worst = worst.max((w.value[i][j] - wt[(i, j)]).abs() / w.stderr[i][j]);
        }
    }
    worst.max((w.metric_contraction - trace).abs() / w.metric_contraction_stderr)
}

fn ks_statistic(mut xs: Vec<f64>, dist: &Normal) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = dist.cdf(*x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

fn c1_electron_rate() -> Verdict {
    let rate = PhysicalConstants::electron().spacelike_rate();
    let round4 = |x: f64| {
        let e = x.log10().floor() as i32;
        let f = 10f64.powi(3 - e);
        (x * f).round() / f
    };
    verdict(
        round4(rate) == round4(7.7634e20),
        format!("2πmc²/h = {rate:.6e} s^-1"),
    )
}

fn c2_identities() -> Verdict {
    let k = nat();
    let normals = wiener_increments(20_251_017, 0, 2000, 1.0);
    let mut worst = [0.0_f64; 3];
    let mut min_eig = f64::INFINITY;
    for p in normals.chunks_exact(2) {
        let (a, b) = (p[0], p[1]);
        let n = (a[1] * a[1] + a[2] * a[2] + a[3] * a[3]).sqrt();
        let eta = (1.5 * a[0]).abs().min(3.0);
        let scale = (0.5 * b[0]).exp();
        let v = FourVector::new(
            scale * eta.cosh(),
            scale * eta.sinh() * a[1] / n,
            scale * eta.sinh() * a[2] / n,
            scale * eta.sinh() * a[3] / n,
        );
        let id = diffusion_identities(&v, &k).unwrap();
        worst[0] = worst[0].max(id.inverse);
        worst[1] = worst[1].max(id.contraction);
        worst[2] = worst[2].max(id.trace);
        min_eig = min_eig.min(id.min_eigenvalue);
    }
    verdict(
        worst.iter().all(|w| *w <= 1e-10) && min_eig > 0.0,
        format!(
            "inverse {:.2e}, contraction {:.2e}, trace {:.2e}, min eigenvalue {:.2e}",
            worst[0], worst[1], worst[2], min_eig
        ),
    )
}

fn c3_free_particle() -> Verdict {
    let sol = rest();
    let (coarse, _, rb, rf) = kolmogorov_convergence(&sol, &KolmogorovGrid::default()).unwrap();
    let norm = normalization_integral(&sol, 1.0, &NormalizationGrid::default()).unwrap();
    let ck = chapman_kolmogorov_check(&sol, &FourVector::ZERO, (0.0, 0.5, 1.0), &CkGrid::default()).unwrap();
    let pass = coarse.backward_rel <= 1e-3
        && coarse.forward_rel <= 1e-3
        && (rb - 4.0).abs() <= 0.5
        && (rf - 4.0).abs() <= 0.5
        && (norm - 1.0).abs() <= 1e-4
        && ck.max_abs_error <= 1e-5;
    verdict(
        pass,
        format!(
            "residuals {:.2e}/{:.2e}, ratios {rb:.3}/{rf:.3}, norm-1 {:.1e}, CK {:.1e}",
            coarse.backward_rel,
            coarse.forward_rel,
            norm - 1.0,
            ck.max_abs_error
        ),
    )
}

fn ensemble(sol: &FreeParticleSolution, n_paths: usize, n_steps: usize, seed: u64) -> Ensemble {
    let cfg = SimulationConfig::new(1e-3, n_steps, n_paths, seed).with_stride(n_steps);
    simulate_ensemble(&sol.process_spec(), &FourVector::ZERO, 0.0, &cfg).unwrap()
}

fn c4_monte_carlo() -> Verdict {
    let sol = rest();
    let window = 0.1;
    let e = ensemble(&sol, 100_000, 100, 14);
    let d = estimate_drift(&e, window).unwrap();
    let w = estimate_diffusion(&e, window).unwrap();
    let z = worst_z(&d, &w, &sol.v, &sol.w, -1.0 / (2.0 * PI));

    let pts = e.points_at(window).unwrap();
    let n = 10_000;
    let crit = 1.628 / (n as f64).sqrt();
    let mut ks = 0.0_f64;
    for axis in 0..4 {
        let mean = sol.v[axis] * window;
        let dist = Normal::new(mean, (2.0 * sol.w[(axis, axis)] * window).sqrt()).unwrap();
        ks = ks.max(ks_statistic(pts[..n].iter().map(|p| p[axis]).collect(), &dist));
    }
    verdict(
        z <= 3.0 && ks < crit,
        format!(
            "w00 {:.5}, contraction {:.5}, worst |z| {z:.2}, KS {ks:.4} < {crit:.4}",
            w.value[0][0], w.metric_contraction
        ),
    )
}

fn c5_lorentz() -> Verdict {
    let l = boost();
    let r = rest();
    let b = FreeParticleSolution::boosted_solution(&nat(), Gauge::Identity, &l).unwrap();
    let normals = wiener_increments(55, 1, 200, 1.0);
    let mut worst = 0.0_f64;
    for (i, y) in normals.iter().enumerate() {
        let big_s = 0.5 + (i % 4) as f64 * 0.5;
        let x = r.v * big_s + FourVector(*y) * (2.0 * r.w[(0, 0)] * big_s).sqrt();
        let pr = r.density_at_delta(&x, &FourVector::ZERO, big_s).unwrap();
        let pb = b.density_at_delta(&l.transform_vector(&x), &FourVector::ZERO, big_s).unwrap();
        worst = worst.max((pb / pr - 1.0).abs());
    }
    let window = 0.1;
    let e = ensemble(&b, 100_000, 100, 5);
    let d = estimate_drift(&e, window).unwrap();
    let w = estimate_diffusion(&e, window).unwrap();
    let z = worst_z(&d, &w, &b.v, &b.w, -1.0 / (2.0 * PI));
    verdict(
        worst <= 1e-10 && z <= 3.0,
        format!("density covariance {worst:.2e}, worst |z| {z:.2}"),
    )
}

fn c6_gauge() -> Verdict {
    let id = rest();
    let af = FreeParticleSolution::rest_solution(&nat(), Gauge::affine(2.0, 0.5).unwrap()).unwrap();
    let normals = wiener_increments(66, 0, 50, 0.3);
    let mut worst = 0.0_f64;
    for y in &normals {
        let x = FourVector::new(1.0 + y[0], y[1], y[2], y[3]);
        // g(1.3) - g(0.3) = 1 for the identity, g(0.6) - g(0.1) = 1 for g = 2s + 0.5
        let p1 = id.conditional_density(&x, 1.3, &FourVector::ZERO, 0.3).unwrap();
        let p2 = af.conditional_density(&x, 0.6, &FourVector::ZERO, 0.1).unwrap();
        worst = worst.max((p1 - p2).abs() / p1);
    }
    verdict(worst <= 1e-10, format!("max relative difference {worst:.2e}"))
}

fn c7_nr_limit() -> Verdict {
    let r = nr_limit_scan(&[1.0, 2.0, 4.0, 8.0, 16.0], &nat(), &Gauge::Identity, NrTemplate::Rest, 1.0).unwrap();
    let lim = r.w_limit;
    let mut w_err = 0.0_f64;
    for i in 0..r.c_values.len() {
        w_err = w_err.max((r.w00[i] - lim).abs() / lim);
        for a in 0..3 {
            w_err = w_err.max(r.w0i[i][a].abs() / lim);
            for b in 0..3 {
                let t = if a == b { lim } else { 0.0 };
                w_err = w_err.max((r.wij[i][a][b] - t).abs() / lim);
            }
        }
    }
    verdict(
        (r.std_slope + 1.0).abs() <= 1e-6 && w_err <= 1e-12,
        format!("slope {:.9}, w limits {w_err:.1e}", r.std_slope),
    )
}

fn c8_spectral() -> Verdict {
    let n = 128;
    let (w, v) = (10.0, 2.0);
    let grid = PeriodicGrid::line(2.0 * PI, n).unwrap();
    let e = solve(&GridCoefficients::constant_1d(v, w), &grid).unwrap();
    let mut eig = 0.0_f64;
    for k in -10i32..=10 {
        if k == 0 {
            continue;
        }
        let target = num_complex::Complex64::new(w * (k * k) as f64, v * k as f64);
        let d = e.eigenvalues.iter().map(|z| (z - target).norm()).fold(f64::INFINITY, f64::min);
        eig = eig.max(d / target.norm());
    }
    let bound = (2.0 * PI / n as f64).powi(2) * 10.0;
    let x0 = 40;
    let p = e.density_field(x0, 0.2, n).unwrap();
    let xs = grid.coords(x0)[0];
    let wg = p
        .iter()
        .enumerate()
        .map(|(i, pv)| (pv - wrapped_gaussian(grid.coords(i)[0], xs + v * 0.2, 2.0 * w * 0.2, 2.0 * PI, 20)).abs())
        .fold(0.0, f64::max);
    let lambda1 = e.eigenvalues[1].re;
    let rate = decay_rate_fit(&e, x0, &[0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
    let dg = &e.diagnostics;
    verdict(
        eig <= bound
            && dg.biorthonormality <= 1e-8
            && dg.lambda0 <= 1e-10
            && wg <= 1e-4
            && (rate / lambda1 - 1.0).abs() <= 0.05,
        format!(
            "eigenvalues {eig:.4} <= {bound:.4}, |B-I| {:.1e}, λ0 {:.1e}, wrapped {wg:.1e}, decay {rate:.3}/{lambda1:.3}",
            dg.biorthonormality, dg.lambda0
        ),
    )
}

fn c9_integration_by_parts() -> Verdict {
    let sol = rest();
    let spec = sol.process_spec();
    let x0 = FourVector::ZERO;
    let backward = |x: &FourVector, s: f64| sol.backward_drift(x, s, &x0, 0.0);
    let cfg = SimulationConfig::new(0.01, 50, 100_000, 9);
    let fd = FdConfig { step: 1e-3 };
    let one = |_: &FourVector, _: f64| 1.0;
    let time = |x: &FourVector, _: f64| x[0];
    let space = |x: &FourVector, _: f64| x[1];
    let mut ok = true;
    let mut detail = Vec::new();
    let cases: [(&str, &(dyn relkin_core::fields::ScalarField + Sync), &(dyn relkin_core::fields::ScalarField + Sync)); 3] =
        [("(1,1)", &one, &one), ("(x0,1)", &time, &one), ("(x1,x1)", &space, &space)];
    for (name, f, g) in cases {
        let r = integration_by_parts_check(f, g, &spec, &backward, &x0, 0.0, (0.1, 0.5), &cfg, &fd).unwrap();
        ok &= r.pass;
        detail.push(format!("{name} {:.1e}<={:.1e}", r.abs_diff, r.budget));
    }
    verdict(ok, detail.join(", "))
}

fn c10_nelson() -> Verdict {
    let k = nat();
    let analytic = DriftFields::free_particle_rest(&k);
    let numeric = DriftFields::new(
        Arc::new(FiniteDifference(ConstantField([0.0; 4]))),
        Arc::new(FiniteDifference(ConstantField([1.0, 0.0, 0.0, 0.0]))),
    );
    let a = EMPotential::zero();
    let fd = FdConfig::default();
    let points = [
        FourVector::ZERO,
        FourVector::new(0.5, 0.1, -0.2, 0.3),
        FourVector::new(3.0, -1.0, 2.0, 0.5),
    ];
    let worst = |d: &DriftFields| -> f64 {
        let mut m = 0.0_f64;
        for x in &points {
            m = m.max(normalization_residual(d, &k, x).unwrap().abs());
            m = m.max(nelson1_residual(d, &k, x, &fd).unwrap().abs());
            m = m.max(nelson2_residual(d, &k, &a, x, &fd).unwrap().0.iter().fold(0.0, |a, b| a.max(b.abs())));
            m = m.max(gradient_condition_residual(d, &k, &a, x, &fd).unwrap().abs().max());
        }
        m
    };
    let (wa, wf) = (worst(&analytic), worst(&numeric));
    verdict(
        wa <= 1e-10 && wf <= 1e-6,
        format!("analytic {wa:.1e}, finite differences {wf:.1e}"),
    )
}

#[test]
fn acceptance_criteria() {
    let ms = Duration::from_millis;
    let s = Duration::from_secs;
    let results = [
        criterion(1, "electron constant", ms(1), c1_electron_rate),
        criterion(2, "diffusion-tensor identities", s(1), c2_identities),
        criterion(3, "free-particle exactness", s(30), c3_free_particle),
        criterion(4, "Monte Carlo consistency", s(60), c4_monte_carlo),
        criterion(5, "Lorentz covariance", s(60), c5_lorentz),
        criterion(6, "gauge invariance", s(1), c6_gauge),
        criterion(7, "non-relativistic limit", s(1), c7_nr_limit),
        criterion(8, "spectral suite", s(30), c8_spectral),
        criterion(9, "integration by parts", s(60), c9_integration_by_parts),
        criterion(10, "Nelson verification", s(1), c10_nelson),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
