//! Continuous-time Kalman filtering of the memory from homodyne records.
//!
//! The plant noise `B dW` and the sensor noise `D dW` share the field
//! increments, so the gain carries the cross term `B Σ_W Dᵀ = −√(2ν) T Λ Zᵀ`.

use log::warn;

use crate::error::{Error, Result};
use crate::model::{Encoding, FilterMode, MemoryParams, NoiseModel};
use crate::numerics::{solve_care_from_gain, symmetrize, Matrix, Vector};
use crate::openloop::SystemMatrices;

/// `dY = C x dt + D dW` together with the noise statistics the filter assumes.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub mode: FilterMode,
    /// `√(2ν) B̃`
    pub c: Matrix,
    /// `√2 (Z, O)`
    pub d: Matrix,
    pub z: Matrix,
    pub btil: Matrix,
    /// `−√(2ν) T Λ Zᵀ`
    pub cross: Matrix,
    /// `2 Z Λ Zᵀ`
    pub innovation_cov: Matrix,
    pub sqrt_2nu: f64,
}

impl MeasurementModel {
    pub fn dim(&self) -> usize {
        self.mode.dim()
    }
}

/// `noise` is the statistics the estimator is allowed to know; pass
/// [`NoiseModel::redacted`] for a source-blind filter.
pub fn measurement_model(
    mode: FilterMode,
    enc: &Encoding,
    params: &MemoryParams,
    noise: &NoiseModel,
) -> MeasurementModel {
    let z = enc.z(mode).clone();
    let btil = enc.btil(mode).clone();
    let m = mode.dim();
    let sqrt_2nu = (2.0 * params.nu).sqrt();
    let c = &btil * sqrt_2nu;
    let mut d = Matrix::zeros(m, 12);
    d.view_mut((0, 0), (m, 6)).copy_from(&(&z * 2f64.sqrt()));
    let cross = &enc.t * &noise.lambda * z.transpose() * -sqrt_2nu;
    let innovation_cov = symmetrize(&(&z * &noise.lambda * z.transpose() * 2.0));
    MeasurementModel { mode, c, d, z, btil, cross, innovation_cov, sqrt_2nu }
}

fn innovation_inverse(mm: &MeasurementModel) -> Result<Matrix> {
    let chol = mm.innovation_cov.clone().cholesky().ok_or_else(|| {
        Error::Singular(format!(
            "innovation covariance 2ZΛZᵀ ({}) is singular; use a finite squeezing such as MU_FLOOR",
            mm.mode
        ))
    })?;
    Ok(chol.inverse())
}

/// `K = (V_c Cᵀ − √(2ν) T Λ Zᵀ)(2 Z Λ Zᵀ)⁻¹`.
pub fn kalman_gain(vc: &Matrix, mm: &MeasurementModel) -> Result<Matrix> {
    Ok((vc * mm.c.transpose() + &mm.cross) * innovation_inverse(mm)?)
}

/// Right-hand side of the conditional-covariance Riccati equation.
pub fn riccati_flow(vc: &Matrix, mm: &MeasurementModel, sys: &SystemMatrices, noise: &NoiseModel) -> Result<Matrix> {
    let k = kalman_gain(vc, mm)?;
    Ok(&sys.a * vc + vc * sys.a.transpose() + sys.diffusion(noise) - &k * &mm.innovation_cov * k.transpose())
}

/// Stationary conditional covariance, via the dual algebraic Riccati equation
/// `(A − S R⁻¹ C) V + V (…)ᵀ + (B Σ Bᵀ − S R⁻¹ Sᵀ) − V Cᵀ R⁻¹ C V = 0`.
///
/// The zero Kalman gain is stabilizing because `A` is, which in the dual
/// problem is the feedback `−R⁻¹ Sᵀ`; Newton iteration starts there.
pub fn steady_conditional_covariance(
    mm: &MeasurementModel,
    sys: &SystemMatrices,
    noise: &NoiseModel,
) -> Result<Matrix> {
    let r_inv = innovation_inverse(mm)?;
    let a_dual = &sys.a - &mm.cross * &r_inv * &mm.c;
    let q = symmetrize(&(sys.diffusion(noise) - &mm.cross * &r_inv * mm.cross.transpose()));
    let l0 = -&r_inv * mm.cross.transpose();
    let vc = solve_care_from_gain(&a_dual.transpose(), &mm.c.transpose(), &q, &mm.innovation_cov, &l0)?;
    Ok(symmetrize(&vc))
}

/// Conditional mean and covariance of the memory.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub pi_x: Vector,
    pub vc: Matrix,
}

impl FilterState {
    /// Vacuum memory before the transfer starts.
    pub fn vacuum() -> Self {
        FilterState { pi_x: Vector::zeros(6), vc: Matrix::identity(6, 6) * 0.5 }
    }
}

fn check_step(dt: f64, sys: &SystemMatrices) {
    let stiffness = -sys.a[(0, 0)] * 2.0 * dt;
    if stiffness > 0.1 {
        warn!("filter step dt·(ν+Γ) = {stiffness:.3} exceeds 0.1");
    }
}

/// One Euler step of the time-varying filter:
/// `dπ = A π dt + u dt + drive dt + K (dy − C π dt)`, `V_c += flow · dt`.
pub fn filter_step(
    fs: &FilterState,
    dy: &Vector,
    u: &Vector,
    dt: f64,
    mm: &MeasurementModel,
    sys: &SystemMatrices,
    noise: &NoiseModel,
) -> Result<FilterState> {
    check_step(dt, sys);
    let k = kalman_gain(&fs.vc, mm)?;
    let innovation = dy - &mm.c * &fs.pi_x * dt;
    let pi_x = &fs.pi_x + (&sys.a * &fs.pi_x + u + &sys.drive) * dt + k * innovation;
    let vc = symmetrize(&(&fs.vc + riccati_flow(&fs.vc, mm, sys, noise)? * dt));
    Ok(FilterState { pi_x, vc })
}

/// Kalman filter frozen at its stationary gain.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryFilter {
    pub vc: Matrix,
    /// Full 6×m gain.
    pub k: Matrix,
    /// `B̃ K`, m×m.
    pub k_syn: Matrix,
}

impl StationaryFilter {
    pub fn new(mm: &MeasurementModel, sys: &SystemMatrices, noise: &NoiseModel) -> Result<Self> {
        let vc = steady_conditional_covariance(mm, sys, noise)?;
        let k = kalman_gain(&vc, mm)?;
        let k_syn = &mm.btil * &k;
        Ok(StationaryFilter { vc, k, k_syn })
    }

    pub fn syndrome_filter(&self, mm: &MeasurementModel, sys: &SystemMatrices) -> SyndromeFilter {
        SyndromeFilter::new(self.k_syn.clone(), mm, sys)
    }

    /// In-place Euler step of the full estimate; `innovation` receives `dy − C π dt`.
    pub fn advance(
        &self,
        pi_x: &mut Vector,
        dy: &Vector,
        u: &Vector,
        dt: f64,
        mm: &MeasurementModel,
        sys: &SystemMatrices,
        innovation: &mut Vector,
    ) {
        innovation.copy_from(dy);
        innovation.gemv(-dt, &mm.c, pi_x, 1.0);
        // A is a multiple of the identity.
        let decay = 1.0 + sys.a[(0, 0)] * dt;
        *pi_x *= decay;
        pi_x.axpy(dt, u, 1.0);
        pi_x.axpy(dt, &sys.drive, 1.0);
        pi_x.gemv(1.0, &self.k, innovation, 1.0);
    }
}

/// Conditional mean of the syndrome vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SyndromeFilterState {
    pub pi_s: Vector,
}

impl SyndromeFilterState {
    pub fn zeros(mode: FilterMode) -> Self {
        SyndromeFilterState { pi_s: Vector::zeros(mode.dim()) }
    }
}

/// `dπ(s) = Ã π(s) dt + B̃ u dt + K̃ (dy − √(2ν) π(s) dt)` with `Ã = −(ν+Γ)/2 I`.
///
/// The drive never enters because `B̃ β = 0`, so the update needs neither
/// the source mean nor (in mode S2) its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SyndromeFilter {
    pub k_syn: Matrix,
    pub a_tilde: f64,
    pub btil: Matrix,
    pub sqrt_2nu: f64,
}

impl SyndromeFilter {
    pub fn new(k_syn: Matrix, mm: &MeasurementModel, sys: &SystemMatrices) -> Self {
        SyndromeFilter { k_syn, a_tilde: sys.a[(0, 0)], btil: mm.btil.clone(), sqrt_2nu: mm.sqrt_2nu }
    }

    pub fn advance(&self, pi_s: &mut Vector, dy: &Vector, u: &Vector, dt: f64, innovation: &mut Vector) {
        innovation.copy_from(dy);
        innovation.axpy(-self.sqrt_2nu * dt, pi_s, 1.0);
        *pi_s *= 1.0 + self.a_tilde * dt;
        pi_s.gemv(dt, &self.btil, u, 1.0);
        pi_s.gemv(1.0, &self.k_syn, innovation, 1.0);
    }

    pub fn step(&self, ss: &SyndromeFilterState, dy: &Vector, u: &Vector, dt: f64) -> SyndromeFilterState {
        let mut pi_s = ss.pi_s.clone();
        let mut innovation = Vector::zeros(dy.len());
        self.advance(&mut pi_s, dy, u, dt, &mut innovation);
        SyndromeFilterState { pi_s }
    }
}

/// `syndrome_filter_step` as a free function.
pub fn syndrome_filter_step(
    ss: &SyndromeFilterState,
    dy: &Vector,
    u: &Vector,
    dt: f64,
    filter: &SyndromeFilter,
) -> SyndromeFilterState {
    filter.step(ss, dy, u, dt)
}

/// Projected estimation-error variances `diag(B̃ V_c B̃ᵀ)`.
pub fn syndrome_error_variances(vc: &Matrix, btil: &Matrix) -> Vector {
    (btil * vc * btil.transpose()).diagonal()
}
