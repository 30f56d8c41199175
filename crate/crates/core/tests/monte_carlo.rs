//! Statistical checks of the simulator against the moment equations.

use qec_memory::model::{FilterMode, MemoryParams, SourceSpec};
use qec_memory::numerics::{rel_frobenius, Matrix, Vector};
use qec_memory::openloop::steady_state;
use qec_memory::scenario::{coherent_scenario, Scenario, ScenarioSpec};
use qec_memory::simulate::{
    ensemble_statistics, innovation_diagnostics, psd_sqrt, simulate_ensemble, simulate_trajectory, stream_rng,
    TrajectoryConfig,
};
use rand_distr::{Distribution, StandardNormal};

fn config(s: &Scenario, seed: u64, control: bool, dt_scale: f64) -> TrajectoryConfig {
    let rate = s.params().total_rate();
    TrajectoryConfig {
        dt: dt_scale / rate,
        duration: 30.0 / rate,
        record_stride: (0.5 / dt_scale).round() as usize,
        ..TrajectoryConfig::for_scenario(s, seed, control)
    }
}

fn unit_rates(gamma: f64, n: f64) -> MemoryParams {
    MemoryParams::new(1.0, gamma, n).unwrap()
}

fn true_innovation_cov(s: &Scenario) -> Matrix {
    &s.mm.d * &s.noise.sigma_w * s.mm.d.transpose()
}

#[test]
fn lossless_vacuum_memory_keeps_vacuum_variance() {
    let s = coherent_scenario(unit_rates(0.0, 0.0), 0.0, FilterMode::S1, None).unwrap();
    let trajs = simulate_ensemble(&config(&s, 1, false, 1e-2), &s, 3000).unwrap();
    let stats = ensemble_statistics(&trajs, &[]).unwrap();
    for i in 0..6 {
        let v = stats.steady_cov[(i, i)];
        assert!((v - 0.5).abs() < 0.025, "quadrature {i}: {v}");
    }
}

#[test]
fn uncontrolled_ensemble_matches_lyapunov_steady_state() {
    let s = coherent_scenario(unit_rates(0.5, 2.0), -0.4, FilterMode::S1, None).unwrap();
    let trajs = simulate_ensemble(&config(&s, 2, false, 1e-2), &s, 3000).unwrap();
    let stats = ensemble_statistics(&trajs, &[]).unwrap();
    let open = steady_state(&s.sys, &s.noise).unwrap();
    let vx = stats.steady_cov.view((0, 0), (6, 6)).into_owned();
    assert!(rel_frobenius(&vx, &open.cov) < 0.05);
    let joint = s.moments().unwrap().vz;
    assert!(rel_frobenius(&stats.steady_cov, &joint) < 0.05);
}

#[test]
fn euler_bias_is_small_at_half_step() {
    let s = coherent_scenario(unit_rates(0.5, 2.0), -0.4, FilterMode::S2, Some(0.05)).unwrap();
    let vz = s.moments().unwrap().vz;
    for dt_scale in [1e-2, 5e-3] {
        let trajs = simulate_ensemble(&config(&s, 3, true, dt_scale), &s, 2000).unwrap();
        let stats = ensemble_statistics(&trajs, &[]).unwrap();
        assert!(rel_frobenius(&stats.steady_cov, &vz) < 0.05, "dt scale {dt_scale}");
    }
}

#[test]
fn innovation_covariance_tracks_ancilla_squeezing() {
    let s = coherent_scenario(unit_rates(0.5, 2.0), -2.0, FilterMode::S2, None).unwrap();
    let trajs = simulate_ensemble(&config(&s, 4, false, 1e-3), &s, 200).unwrap();
    let expected = Matrix::identity(2, 2) * (-2.0f64).exp();
    assert!(rel_frobenius(&true_innovation_cov(&s), &expected) < 1e-12);
    let rep = innovation_diagnostics(&trajs, &expected).unwrap();
    assert!(rep.covariance_pass && rep.whiteness_pass && rep.mean_pass, "{rep:?}");
}

#[test]
fn doubled_gain_fails_whiteness() {
    let good = coherent_scenario(MemoryParams::reference(), -0.4, FilterMode::S1, Some(1e-9)).unwrap();
    let mut bad = good.clone();
    bad.syndrome_filter.k_syn *= 2.0;
    let cfg = TrajectoryConfig::for_scenario(&good, 5, true);
    let expected = true_innovation_cov(&good);
    let rep_good = innovation_diagnostics(&simulate_ensemble(&cfg, &good, 200).unwrap(), &expected).unwrap();
    let rep_bad = innovation_diagnostics(&simulate_ensemble(&cfg, &bad, 200).unwrap(), &expected).unwrap();
    assert!(rep_good.whiteness_pass, "{:?}", rep_good.lag1);
    assert!(!rep_bad.whiteness_pass, "{:?}", rep_bad.lag1);
}

#[test]
fn plant_and_sensor_increments_share_noise() {
    let s = coherent_scenario(unit_rates(0.5, 2.0), -0.7, FilterMode::S1, None).unwrap();
    let factor = psd_sqrt(&s.noise.sigma_w).unwrap();
    let dt: f64 = 1e-3;
    let mut rng = stream_rng(9, 0);
    let n = 200_000;
    let mut cross = Matrix::zeros(6, 3);
    for _ in 0..n {
        let xi = Vector::from_fn(12, |_, _| StandardNormal.sample(&mut rng));
        let dw = &factor * xi * dt.sqrt();
        cross += (&s.sys.b * &dw) * (&s.mm.d * &dw).transpose();
    }
    cross /= n as f64 * dt;
    let expected = &s.sys.b * &s.noise.sigma_w * s.mm.d.transpose();
    assert!(rel_frobenius(&cross, &expected) < 0.05);
    assert!(rel_frobenius(&expected, &s.mm.cross) < 1e-12);
}

#[test]
fn feedback_suppresses_syndrome_fluctuations() {
    let spec = ScenarioSpec {
        params: MemoryParams::reference(),
        source: SourceSpec::coherent(1.0),
        mu: -0.4,
        mode: FilterMode::S1,
        r: Some(1e-9),
        drive: None,
    };
    let s = Scenario::build(spec).unwrap();
    let on = simulate_trajectory(&TrajectoryConfig::for_scenario(&s, 11, true), &s).unwrap();
    let off = simulate_trajectory(&TrajectoryConfig::for_scenario(&s, 11, false), &s).unwrap();
    // The third S1 syndrome estimates q2 − q3 of the memory.
    let variance = |t: &qec_memory::simulate::Trajectory| {
        let tail: Vec<f64> = t.pi_s[t.len() / 5..].iter().map(|v| v[2]).collect();
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (tail.len() - 1) as f64
    };
    let ratio = variance(&on) / variance(&off);
    assert!(ratio < 1.0, "variance ratio {ratio}");
}
