//! Seeded Monte Carlo of the plant, the filters and the feedback loop.
//!
//! The quadrature dynamics are linear with Gaussian noise, so a classical
//! surrogate with the same drift and diffusion reproduces every first and
//! symmetrized second moment of the quantum model. Plant increments and
//! measurement increments are driven by the same `dW`.

use std::io::Write;
use std::path::Path;

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::FilterMode;
use crate::numerics::{symmetrize, Matrix, Vector};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryConfig {
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    pub control_enabled: bool,
    pub mode: FilterMode,
    /// Steps between recorded samples; innovations are summed over each window.
    pub record_stride: usize,
}

impl TrajectoryConfig {
    /// `dt = 1e-3/(ν+Γ)` over `30/(ν+Γ)`, recording every 500 steps.
    pub fn for_scenario(s: &Scenario, seed: u64, control_enabled: bool) -> Self {
        let rate = s.params().total_rate();
        TrajectoryConfig {
            dt: 1e-3 / rate,
            duration: 30.0 / rate,
            seed,
            control_enabled,
            mode: s.spec.mode,
            record_stride: 500,
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::arg(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.duration >= self.dt) {
            return Err(Error::arg("duration must be at least one step"));
        }
        if self.record_stride == 0 {
            return Err(Error::arg("record_stride must be at least 1"));
        }
        Ok(())
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.dt == other.dt
            && self.duration == other.duration
            && self.control_enabled == other.control_enabled
            && self.mode == other.mode
            && self.record_stride == other.record_stride
    }
}

/// Samples taken every `record_stride` steps, starting at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub config: TrajectoryConfig,
    pub stream: u64,
    pub times: Vec<f64>,
    pub x: Vec<Vector>,
    pub pi_s: Vec<Vector>,
    /// Full-state estimate from a filter that also knows the drive; kept for
    /// evaluation only and never fed back.
    pub pi_x: Vec<Vector>,
    pub u: Vec<Vector>,
    /// `Σ (dy − √(2ν) π(s) dt)` over the window ending at each sample; zero at `t = 0`.
    pub innovations: Vec<Vector>,
    pub err_band: Vec<Vector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `(x, π(s))` at sample `k`.
    pub fn joint(&self, k: usize) -> Vector {
        let m = self.pi_s[k].len();
        Vector::from_fn(6 + m, |i, _| if i < 6 { self.x[k][i] } else { self.pi_s[k][i - 6] })
    }
}

/// Symmetric square root of a PSD matrix. Eigenvalues slightly below zero
/// (round-off) are clipped; clearly negative ones are an error.
pub fn psd_sqrt(sigma: &Matrix) -> Result<Matrix> {
    let sym = symmetrize(sigma);
    let tol = 1e-12 * sym.norm().max(1.0);
    let budget = 200 * sym.nrows().max(1);
    let eig = nalgebra::linalg::SymmetricEigen::try_new(sym, f64::EPSILON, budget)
        .ok_or(Error::NotConverged { solver: "symmetric eigensolver", residual: f64::NAN })?;
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| l < -tol) {
        return Err(Error::arg(format!("noise covariance is not PSD: eigenvalue {bad:e}")));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * Matrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Generator for trajectory `stream` of master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Run one trajectory on stream 0 of `cfg.seed`.
pub fn simulate_trajectory(cfg: &TrajectoryConfig, s: &Scenario) -> Result<Trajectory> {
    simulate_stream(cfg, s, 0)
}

/// Run one trajectory on the given stream of `cfg.seed`.
pub fn simulate_stream(cfg: &TrajectoryConfig, s: &Scenario, stream: u64) -> Result<Trajectory> {
    cfg.validate()?;
    if cfg.mode != s.spec.mode {
        return Err(Error::arg("trajectory mode differs from the scenario's filter mode"));
    }
    if cfg.control_enabled && !s.gains.is_enabled() {
        return Err(Error::arg("control requested but the scenario has no control penalty"));
    }
    let rate = s.params().total_rate();
    if cfg.dt * rate >= 0.1 {
        return Err(Error::arg(format!("dt·(ν+Γ) = {:.3} must stay below 0.1", cfg.dt * rate)));
    }

    let m = s.mm.dim();
    let dt = cfg.dt;
    let sqrt_dt = dt.sqrt();
    let factor = psd_sqrt(&s.noise.sigma_w)?;
    let decay = 1.0 + s.sys.a[(0, 0)] * dt;
    let err_band = (&s.mm.btil * &s.filter.vc * s.mm.btil.transpose()).diagonal().map(|v| v.max(0.0).sqrt());
    let bound = 1e8 * (1.0 + s.sys.drive.norm() / rate + s.noise.sigma_w.norm().sqrt());

    let mut rng = stream_rng(cfg.seed, stream);
    let mut xi = Vector::zeros(12);
    let mut dw = Vector::zeros(12);
    let mut dy = Vector::zeros(m);
    let mut innov = Vector::zeros(m);
    let mut innov_full = Vector::zeros(m);
    let mut innov_sum = Vector::zeros(m);
    let mut u = Vector::zeros(6);

    // Vacuum memory: mean zero, covariance I/2. Filters start at zero.
    let mut x = Vector::from_fn(6, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * 0.5f64.sqrt()
    });
    let mut pi_s = Vector::zeros(m);
    let mut pi_x = Vector::zeros(6);

    let steps = cfg.steps();
    let capacity = steps / cfg.record_stride + 1;
    let mut traj = Trajectory {
        config: cfg.clone(),
        stream,
        times: Vec::with_capacity(capacity),
        x: Vec::with_capacity(capacity),
        pi_s: Vec::with_capacity(capacity),
        pi_x: Vec::with_capacity(capacity),
        u: Vec::with_capacity(capacity),
        innovations: Vec::with_capacity(capacity),
        err_band: Vec::with_capacity(capacity),
    };
    let record =
        |traj: &mut Trajectory, k: usize, x: &Vector, pi_s: &Vector, pi_x: &Vector, u: &Vector, inn: &Vector| {
            traj.times.push(k as f64 * dt);
            traj.x.push(x.clone());
            traj.pi_s.push(pi_s.clone());
            traj.pi_x.push(pi_x.clone());
            traj.u.push(u.clone());
            traj.innovations.push(inn.clone());
            traj.err_band.push(err_band.clone());
        };
    record(&mut traj, 0, &x, &pi_s, &pi_x, &u, &innov_sum);

    for step in 1..=steps {
        for v in xi.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        dw.gemv(sqrt_dt, &factor, &xi, 0.0);

        // dy = C x dt + D dW, using the plant state before the update.
        dy.gemv(dt, &s.mm.c, &x, 0.0);
        dy.gemv(1.0, &s.mm.d, &dw, 1.0);

        x *= decay;
        x.axpy(dt, &u, 1.0);
        x.axpy(dt, &s.sys.drive, 1.0);
        x.gemv(1.0, &s.sys.b, &dw, 1.0);

        s.syndrome_filter.advance(&mut pi_s, &dy, &u, dt, &mut innov);
        s.filter.advance(&mut pi_x, &dy, &u, dt, &s.mm, &s.sys, &mut innov_full);
        innov_sum += &innov;

        if cfg.control_enabled {
            u.gemv(1.0, &s.gains.fgain, &pi_s, 0.0);
        }

        if step % cfg.record_stride == 0 {
            if !x.iter().all(|v| v.is_finite()) || x.norm() > bound {
                return Err(Error::Diverged { step });
            }
            record(&mut traj, step, &x, &pi_s, &pi_x, &u, &innov_sum);
            innov_sum.fill(0.0);
        }
    }
    Ok(traj)
}

/// `count` independent trajectories; trajectory `k` runs on stream `k`, so
/// the result does not depend on scheduling.
pub fn simulate_ensemble(cfg: &TrajectoryConfig, s: &Scenario, count: usize) -> Result<Vec<Trajectory>> {
    debug!("simulating {count} trajectories of {} steps", cfg.steps());
    (0..count as u64).into_par_iter().map(|k| simulate_stream(cfg, s, k)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStatistics {
    pub trajectories: usize,
    pub times: Vec<f64>,
    /// Mean of `(x, π(s))` at each sample.
    pub mean: Vec<Vector>,
    /// Unbiased covariance of `(x, π(s))` at the requested sample indices.
    pub covariances: Vec<(usize, Matrix)>,
    /// Pooled over the final 20% of samples of every trajectory.
    pub steady_mean: Vector,
    pub steady_cov: Matrix,
    pub steady_samples: usize,
}

/// Index of the first sample in the final 20% of a series of length `len`.
pub fn steady_window_start(len: usize) -> usize {
    ((len as f64) * 0.8).floor() as usize
}

fn check_matched(trajs: &[Trajectory]) -> Result<()> {
    let first = trajs.first().ok_or_else(|| Error::arg("no trajectories"))?;
    for t in trajs {
        if !t.config.same_layout(&first.config) || t.len() != first.len() {
            return Err(Error::arg("trajectories were produced with different configurations"));
        }
    }
    Ok(())
}

fn sample_covariance(samples: &[Vector], mean: &Vector) -> Matrix {
    let n = mean.len();
    let mut cov = Matrix::zeros(n, n);
    for v in samples {
        let d = v - mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov / (samples.len().saturating_sub(1).max(1)) as f64
}

fn sample_mean(samples: &[Vector]) -> Vector {
    let mut mean = Vector::zeros(samples[0].len());
    for v in samples {
        mean += v;
    }
    mean / samples.len() as f64
}

pub fn ensemble_statistics(trajs: &[Trajectory], covariance_at: &[usize]) -> Result<EnsembleStatistics> {
    check_matched(trajs)?;
    let len = trajs[0].len();
    let mean: Vec<Vector> =
        (0..len).map(|k| sample_mean(&trajs.iter().map(|t| t.joint(k)).collect::<Vec<_>>())).collect();
    let mut covariances = Vec::new();
    if trajs.len() >= 2 {
        for &k in covariance_at {
            if k >= len {
                return Err(Error::arg(format!("sample index {k} out of range")));
            }
            let samples: Vec<Vector> = trajs.iter().map(|t| t.joint(k)).collect();
            covariances.push((k, sample_covariance(&samples, &mean[k])));
        }
    }
    let start = steady_window_start(len);
    let pooled: Vec<Vector> = trajs.iter().flat_map(|t| (start..len).map(move |k| t.joint(k))).collect();
    let steady_mean = sample_mean(&pooled);
    let steady_cov = sample_covariance(&pooled, &steady_mean);
    Ok(EnsembleStatistics {
        trajectories: trajs.len(),
        times: trajs[0].times.clone(),
        mean,
        covariances,
        steady_mean,
        steady_samples: pooled.len(),
        steady_cov,
    })
}

/// Statistics of the recorded innovation window sums.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnovationReport {
    pub windows: usize,
    /// Empirical covariance per unit time, row-major.
    pub covariance: Vec<f64>,
    pub expected: Vec<f64>,
    pub covariance_rel_error: f64,
    /// Per channel lag-1 autocorrelation of the window sums.
    pub lag1: Vec<f64>,
    /// Per channel mean increment per unit time.
    pub mean: Vec<f64>,
    /// Three standard errors of `mean`.
    pub mean_bound: Vec<f64>,
    pub covariance_pass: bool,
    pub whiteness_pass: bool,
    pub mean_pass: bool,
}

impl InnovationReport {
    pub fn passed(&self) -> bool {
        self.covariance_pass && self.whiteness_pass && self.mean_pass
    }
}

/// Innovation checks against the covariance `expected` (`2 Z Λ Zᵀ` of the
/// true source). The first 20% of each trajectory is skipped as transient.
pub fn innovation_diagnostics(trajs: &[Trajectory], expected: &Matrix) -> Result<InnovationReport> {
    check_matched(trajs)?;
    let cfg = &trajs[0].config;
    let m = trajs[0].innovations[0].len();
    if expected.shape() != (m, m) {
        return Err(Error::arg("expected innovation covariance has wrong shape"));
    }
    let window = cfg.dt * cfg.record_stride as f64;
    let skip = (trajs[0].len() / 5).max(1);

    let mut sum = Vector::zeros(m);
    let mut second = Matrix::zeros(m, m);
    let mut lag_num = Vector::zeros(m);
    let mut lag_den = Vector::zeros(m);
    let mut count = 0usize;
    for t in trajs {
        let series = &t.innovations[skip..];
        for (k, b) in series.iter().enumerate() {
            sum += b;
            second.ger(1.0, b, b, 1.0);
            count += 1;
            if let Some(next) = series.get(k + 1) {
                lag_num += b.component_mul(next);
                lag_den += b.component_mul(b);
            }
        }
    }
    if count < 2 {
        return Err(Error::arg("too few innovation windows"));
    }
    let n = count as f64;
    let mean_window = &sum / n;
    let cov_window = (&second - &mean_window * mean_window.transpose() * n) / (n - 1.0);
    let covariance = &cov_window / window;
    let rel = (&covariance - expected).norm() / expected.norm();
    let lag1: Vec<f64> = (0..m).map(|i| lag_num[i] / lag_den[i]).collect();
    let mean: Vec<f64> = mean_window.iter().map(|v| v / window).collect();
    let mean_bound: Vec<f64> = (0..m).map(|i| 3.0 * (cov_window[(i, i)] / n).sqrt() / window).collect();
    Ok(InnovationReport {
        windows: count,
        covariance: covariance.transpose().as_slice().to_vec(),
        expected: expected.transpose().as_slice().to_vec(),
        covariance_rel_error: rel,
        covariance_pass: rel < 0.05,
        whiteness_pass: lag1.iter().all(|r| r.abs() < 0.05),
        mean_pass: mean.iter().zip(&mean_bound).all(|(m, b)| m.abs() < *b),
        lag1,
        mean,
        mean_bound,
    })
}

/// Mean and three-standard-error bound of `x − π(x)` across trajectories at sample `k`.
pub fn estimation_bias(trajs: &[Trajectory], k: usize) -> Result<(Vector, Vector)> {
    check_matched(trajs)?;
    if trajs.len() < 2 || k >= trajs[0].len() {
        return Err(Error::arg("need two trajectories and a valid sample index"));
    }
    let errors: Vec<Vector> = trajs.iter().map(|t| &t.x[k] - &t.pi_x[k]).collect();
    let mean = sample_mean(&errors);
    let cov = sample_covariance(&errors, &mean);
    let bound = cov.diagonal().map(|v| 3.0 * (v / errors.len() as f64).sqrt());
    Ok((mean, bound))
}

/// Write one trajectory as CSV with a `#` comment header of `meta` lines.
///
/// Columns: `t, x1..x6, pis1..pism, u1..u6, errband1..errbandm`.
pub fn write_trajectory_csv<W: Write>(out: W, traj: &Trajectory, meta: &[(String, String)]) -> Result<()> {
    let mut out = out;
    for (k, v) in meta {
        writeln!(out, "# {k} = {v}")?;
    }
    let m = traj.pi_s.first().map_or(0, |v| v.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=6).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("pis{i}")));
    header.extend((1..=6).map(|i| format!("u{i}")));
    header.extend((1..=m).map(|i| format!("errband{i}")));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header)?;
    for k in 0..traj.len() {
        let mut row = vec![traj.times[k].to_string()];
        row.extend(traj.x[k].iter().map(f64::to_string));
        row.extend(traj.pi_s[k].iter().map(f64::to_string));
        row.extend(traj.u[k].iter().map(f64::to_string));
        row.extend(traj.err_band[k].iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_file(path: &Path, traj: &Trajectory, meta: &[(String, String)]) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trajectory_csv(file, traj, meta)
}
