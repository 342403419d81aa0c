use relkin_core::free_particle::FreeParticleSolution;
use relkin_core::sde::{
    estimate_diffusion, estimate_drift, simulate_ensemble, wiener_increments, DiffusionEstimate,
    DriftEstimate, Ensemble, SimulationConfig,
};
use relkin_core::{FourVector, Gauge, LorentzTransform, PhysicalConstants, Tensor2};

fn rest() -> FreeParticleSolution {
    FreeParticleSolution::rest_solution(&PhysicalConstants::natural(), Gauge::Identity).unwrap()
}

fn assert_moments(d: &DriftEstimate, w: &DiffusionEstimate, v: &FourVector, wt: &Tensor2, n_sigma: f64) {
    for i in 0..4 {
        let z = (d.value[i] - v[i]).abs() / d.stderr[i];
        assert!(z <= n_sigma, "drift[{i}] {} vs {} ({z:.2} sigma)", d.value[i], v[i]);
        for j in 0..4 {
            let z = (w.value[i][j] - wt[(i, j)]).abs() / w.stderr[i][j];
            assert!(z <= n_sigma, "w[{i}][{j}] {} vs {} ({z:.2} sigma)", w.value[i][j], wt[(i, j)]);
        }
    }
}

fn run(sol: &FreeParticleSolution, cfg: &SimulationConfig) -> Ensemble {
    simulate_ensemble(&sol.process_spec(), &FourVector::ZERO, 0.0, cfg).unwrap()
}

#[test]
fn wiener_increment_moments() {
    let n = 1_000_000;
    let dt = 0.01;
    let inc = wiener_increments(123, 7, n, dt);
    let nf = n as f64;
    for i in 0..4 {
        let mean = inc.iter().map(|d| d[i]).sum::<f64>() / nf;
        assert!(mean.abs() <= 4.0 * (dt / nf).sqrt(), "mean[{i}] = {mean}");
        for j in i..4 {
            let cov = inc.iter().map(|d| d[i] * d[j]).sum::<f64>() / nf;
            let (target, sd) = if i == j {
                (dt, (2.0 * dt * dt / nf).sqrt())
            } else {
                (0.0, dt / nf.sqrt())
            };
            assert!((cov - target).abs() <= 4.0 * sd, "cov[{i}][{j}] = {cov}");
        }
    }
}

#[test]
fn streams_are_reproducible_and_distinct() {
    assert_eq!(wiener_increments(1, 2, 10, 1.0), wiener_increments(1, 2, 10, 1.0));
    assert_ne!(wiener_increments(1, 2, 10, 1.0), wiener_increments(1, 3, 10, 1.0));
    assert_ne!(wiener_increments(1, 2, 10, 1.0), wiener_increments(2, 2, 10, 1.0));
}

#[test]
fn path_does_not_depend_on_ensemble_size() {
    let sol = rest();
    let small = run(&sol, &SimulationConfig::new(0.01, 20, 3, 77));
    let large = run(&sol, &SimulationConfig::new(0.01, 20, 30, 77));
    for k in 0..3 {
        assert_eq!(small.paths[k].points, large.paths[k].points);
    }
}

#[test]
fn backward_ensemble_recovers_the_backward_drift() {
    let sol = rest();
    let cfg = SimulationConfig::new(0.01, 10, 40_000, 31).with_stride(10).backward();
    let e = run(&sol, &cfg);
    let end = e.points_at(0.1).unwrap();
    let mean_t = end.iter().map(|p| p[0]).sum::<f64>() / end.len() as f64;
    assert!(mean_t < 0.0, "backward paths run to smaller x0, got mean {mean_t}");
    let d = estimate_drift(&e, 0.1).unwrap();
    let w = estimate_diffusion(&e, 0.1).unwrap();
    assert_moments(&d, &w, &sol.v, &sol.w, 4.0);
}

#[test]
fn boosted_rest_ensemble_matches_transformed_moments() {
    let l = LorentzTransform::boost([0.0, 0.6, 0.3]).unwrap();
    let sol = rest();
    let e = run(&sol, &SimulationConfig::new(0.01, 10, 40_000, 32).with_stride(10)).transformed(&l);
    let d = estimate_drift(&e, 0.1).unwrap();
    let w = estimate_diffusion(&e, 0.1).unwrap();
    assert_moments(&d, &w, &l.transform_vector(&sol.v), &l.transform_tensor2(&sol.w), 4.0);
    let trace = -1.0 / (2.0 * std::f64::consts::PI);
    assert!((w.metric_contraction - trace).abs() <= 4.0 * w.metric_contraction_stderr);
}

#[test]
fn affine_gauge_rescales_the_parameter_only() {
    let gauge = Gauge::affine(3.0, -1.0).unwrap();
    let sol = FreeParticleSolution::rest_solution(&PhysicalConstants::natural(), gauge.clone()).unwrap();
    let cfg = SimulationConfig::new(0.01, 10, 40_000, 33).with_stride(10).with_gauge(gauge);
    let e = run(&sol, &cfg);
    let d = estimate_drift(&e, 0.1).unwrap();
    let w = estimate_diffusion(&e, 0.1).unwrap();
    assert_moments(&d, &w, &sol.v, &sol.w, 4.0);
    // in g the mean displacement is V Δg = 3 V Δs
    let end = e.points_at(0.1).unwrap();
    let mean_t = end.iter().map(|p| p[0]).sum::<f64>() / end.len() as f64;
    assert!((mean_t - 0.3).abs() < 0.01, "mean x0 {mean_t}");
}

#[test]
fn end_points_follow_the_analytic_covariance() {
    let l = LorentzTransform::boost([0.6, 0.0, 0.0]).unwrap();
    let sol = FreeParticleSolution::boosted_solution(&PhysicalConstants::natural(), Gauge::Identity, &l).unwrap();
    let cfg = SimulationConfig::new(0.05, 20, 40_000, 34).with_stride(20);
    let e = run(&sol, &cfg);
    let pts = e.points_at(1.0).unwrap();
    let (mean, cov) = sol.moments(&FourVector::ZERO, 1.0);
    let n = pts.len() as f64;
    for i in 0..4 {
        let m = pts.iter().map(|p| p[i]).sum::<f64>() / n;
        assert!((m - mean[i]).abs() <= 4.0 * (cov[(i, i)] / n).sqrt(), "mean[{i}] {m} vs {}", mean[i]);
        let var = pts.iter().map(|p| (p[i] - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - cov[(i, i)]).abs() <= 4.0 * cov[(i, i)] * (2.0 / n).sqrt(), "var[{i}] {var}");
    }
}
