//! Uncontrolled moment dynamics of the three-mode memory.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Encoding, FieldMode, MemoryParams, NoiseModel};
use crate::numerics::{determinant, min_eigenvalue, solve_lyapunov_steady, symmetrize, Matrix, Vector};

/// Mean and symmetrized covariance of the memory quadratures.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: Vector,
    pub cov: Matrix,
}

impl GaussianState {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        if mean.len() != cov.nrows() || !cov.is_square() {
            return Err(Error::arg("mean and covariance dimensions disagree"));
        }
        if !crate::numerics::is_symmetric(&cov, 1e-12) {
            return Err(Error::arg("covariance is not symmetric"));
        }
        // Deep squeezing spreads the spectrum past double precision, so only
        // reject eigenvalues negative beyond round-off.
        let floor = min_eigenvalue(&cov);
        if floor < -1e-12 * cov.norm().max(1.0) {
            return Err(Error::arg(format!("covariance is not physical: min eigenvalue {floor:e}")));
        }
        Ok(GaussianState { mean, cov })
    }
}

/// `dx = A x dt + u dt + drive dt + B dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    /// `−(ν + Γ)/2 · I₆`
    pub a: Matrix,
    /// `(−√ν T, −√Γ I₆)`, 6×12
    pub b: Matrix,
    /// `−√ν β`
    pub drive: Vector,
}

pub fn system_matrices(params: &MemoryParams, enc: &Encoding) -> SystemMatrices {
    let a = Matrix::identity(6, 6) * (-params.total_rate() / 2.0);
    let mut b = Matrix::zeros(6, 12);
    b.view_mut((0, 0), (6, 6)).copy_from(&(&enc.t * -params.nu.sqrt()));
    b.view_mut((0, 6), (6, 6)).fill_diagonal(-params.gamma.sqrt());
    let drive = &enc.beta * -params.nu.sqrt();
    SystemMatrices { a, b, drive }
}

impl SystemMatrices {
    /// Replace `−√ν β` by an explicitly given drive.
    pub fn with_drive(mut self, drive: Vector) -> Result<Self> {
        if drive.len() != 6 {
            return Err(Error::arg("drive must have six entries"));
        }
        self.drive = drive;
        Ok(self)
    }

    /// `B Σ_W Bᵀ = ν T Λ Tᵀ + Γ (n + 1/2) I₆`.
    pub fn diffusion(&self, noise: &NoiseModel) -> Matrix {
        symmetrize(&(&self.b * &noise.sigma_w * self.b.transpose()))
    }
}

/// Right-hand side of the covariance Lyapunov flow.
pub fn covariance_flow(v: &Matrix, sys: &SystemMatrices, noise: &NoiseModel) -> Matrix {
    &sys.a * v + v * sys.a.transpose() + sys.diffusion(noise)
}

/// Long-time mean `−A⁻¹ · drive` and covariance of the open-loop memory.
pub fn steady_state(sys: &SystemMatrices, noise: &NoiseModel) -> Result<GaussianState> {
    let cov = solve_lyapunov_steady(&sys.a, &sys.diffusion(noise))?;
    let mean = sys.a.clone().lu().solve(&(-&sys.drive)).ok_or_else(|| Error::Singular("drift".into()))?;
    GaussianState::new(mean, cov)
}

/// Closed-form steady variances `(v⁺, v⁻)` of one rotated mode with real `M`.
pub fn steady_mode_variances(params: &MemoryParams, mode: &FieldMode) -> (f64, f64) {
    let (nu, gamma) = (params.nu, params.gamma);
    let thermal = gamma * (1.0 + 2.0 * params.n_occ);
    let denom = 2.0 * (nu + gamma);
    (
        (nu * (2.0 * mode.n + 2.0 * mode.m.re + 1.0) + thermal) / denom,
        (nu * (2.0 * mode.n - 2.0 * mode.m.re + 1.0) + thermal) / denom,
    )
}

/// Single-mode memory driven by a coherent field: `(⟨b(∞)⟩, ⟨Δq²⟩ = ⟨Δp²⟩)`.
pub fn single_mode_check(params: &MemoryParams, alpha_in: f64) -> (Complex64, f64) {
    let total = params.total_rate();
    let mean = Complex64::new(-2.0 * params.nu.sqrt() * alpha_in / total, 0.0);
    let var = 0.5 + params.gamma * params.n_occ / total;
    (mean, var)
}

/// Overlap `1 / √det(V + V_in)` of mean-matched Gaussian states.
pub fn fidelity(v: &Matrix, v_in: &Matrix) -> Result<f64> {
    if v.shape() != v_in.shape() {
        return Err(Error::arg("covariance shapes differ"));
    }
    let det = determinant(&(v + v_in));
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::Singular(format!("V + V_in has determinant {det:e}")));
    }
    Ok(1.0 / det.sqrt())
}

/// Product form of the open-loop fidelity for a coherent source.
pub fn fidelity_closed_form(mu: f64, params: &MemoryParams) -> f64 {
    let (nu, gamma, n) = (params.nu, params.gamma, params.n_occ);
    [0.0, mu, -mu]
        .iter()
        .map(|&s| {
            let e = f64::exp(s);
            2.0 * (nu + gamma) / (2.0 * nu * e + gamma * (e + 1.0 + 2.0 * n))
        })
        .product()
}

fn pair_form(i: usize, j: usize) -> Vector {
    let mut e = Vector::zeros(6);
    e[2 * i] = 1.0;
    e[2 * j] = -1.0;
    e
}

fn quad(v: &Matrix, e: &Vector) -> f64 {
    (e.transpose() * v * e)[(0, 0)]
}

/// Pairwise position-difference variances for (1,2), (2,3), (3,1).
pub fn syndrome_statistics(v: &Matrix) -> [f64; 3] {
    [(0, 1), (1, 2), (2, 0)].map(|(i, j)| quad(v, &pair_form(i, j)))
}

/// Ideal-encoding syndrome variance `Γ(2n + 1)/(ν + Γ)`.
pub fn ideal_syndrome_variance(params: &MemoryParams) -> f64 {
    params.gamma * (2.0 * params.n_occ + 1.0) / params.total_rate()
}

/// `Σ ⟨Δ(q_i − q_j)²⟩ + 3⟨Δ(p1 + p2 + p3)²⟩` evaluated on `v`.
pub fn witness(v: &Matrix) -> f64 {
    let pairs: f64 = syndrome_statistics(v).iter().sum();
    let psum = Vector::from_vec(vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    pairs + 3.0 * quad(v, &psum)
}

/// Entanglement witness of the memory state.
pub fn psys(v: &Matrix) -> f64 {
    witness(v)
}

/// Steady witness value for a coherent source.
pub fn psys_closed_form(mu: f64, params: &MemoryParams) -> f64 {
    let total = params.total_rate();
    (4.5 + 3.0 * mu.exp()) * params.nu / total + (7.5 + 15.0 * params.n_occ) * params.gamma / total
}

/// Growth rate of the field witness for ancillas squeezed by `mu`.
pub fn pfd_rate(mu: f64, source: &FieldMode) -> f64 {
    3.0 * mu.exp() + 4.5 * (2.0 * source.n - 2.0 * source.m.re + 1.0)
}

/// Symmetric three-mode states with witness rate below this are entangled.
pub const ENTANGLEMENT_BOUND: f64 = 6.0;
/// Witness rate of three coherent fields.
pub const CLASSICAL_BOUND: f64 = 7.5;

/// Largest `n` for which the ideal-encoding memory stays entangled.
pub fn psys_occupation_threshold(params: &MemoryParams) -> f64 {
    0.1 * params.nu / params.gamma - 0.1
}

/// Scalar report of the open-loop quantities.
#[derive(Debug, Clone, Serialize)]
pub struct OpenLoopReport {
    pub single_mode_mean: f64,
    pub single_mode_variance: f64,
    pub v_plus: [f64; 3],
    pub v_minus: [f64; 3],
    pub steady_mean: Vec<f64>,
    pub pfd_rate: f64,
    pub pfd_entangled: bool,
    pub psys: f64,
    pub psys_entangled: bool,
    pub syndrome_variances: [f64; 3],
    pub ideal_syndrome_variance: f64,
    pub fidelity: f64,
    pub fidelity_closed_form: Option<f64>,
}

pub fn open_loop_report(
    params: &MemoryParams,
    source: &FieldMode,
    mu: f64,
    alpha_in: f64,
    sys: &SystemMatrices,
    noise: &NoiseModel,
) -> Result<OpenLoopReport> {
    let state = steady_state(sys, noise)?;
    let (mean, var) = single_mode_check(params, alpha_in);
    let anc = crate::model::squeezed_vacuum(mu);
    let modes = [*source, anc, anc];
    let vs = modes.map(|m| steady_mode_variances(params, &m));
    let coherent = source.n == 0.0 && source.m.norm() == 0.0;
    let pfd = pfd_rate(mu, source);
    let p = psys(&state.cov);
    Ok(OpenLoopReport {
        single_mode_mean: mean.re,
        single_mode_variance: var,
        v_plus: vs.map(|v| v.0),
        v_minus: vs.map(|v| v.1),
        steady_mean: state.mean.iter().copied().collect(),
        pfd_rate: pfd,
        pfd_entangled: pfd < ENTANGLEMENT_BOUND,
        psys: p,
        psys_entangled: p < ENTANGLEMENT_BOUND,
        syndrome_variances: syndrome_statistics(&state.cov),
        ideal_syndrome_variance: ideal_syndrome_variance(params),
        fidelity: fidelity(&state.cov, &noise.input_covariance())?,
        fidelity_closed_form: coherent.then(|| fidelity_closed_form(mu, params)),
    })
}
