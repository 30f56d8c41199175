//! Stationary moments of the joint plant–estimator loop `z = (x, π(s))`.
//!
//! ```text
//! dz = [[A, F], [K̃C, Ã − √(2ν)K̃ + B̃F]] z dt + [[B], [K̃D]] dW
//! ```

use serde::Serialize;

use crate::control::Gains;
use crate::error::{Error, Result};
use crate::estimation::{MeasurementModel, StationaryFilter};
use crate::model::{Encoding, MemoryParams, NoiseModel};
use crate::numerics::{
    complex_eigenvalues, inverse, lyapunov_residual, rel_frobenius, solve_lyapunov_steady, symmetrize, Matrix, Vector,
};
use crate::openloop::{fidelity, SystemMatrices};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    pub az: Matrix,
    pub bz: Matrix,
    /// Noise covariance of the true plant, not the controller's view of it.
    pub sigma: Matrix,
    pub drive_z: Vector,
    pub m: usize,
}

impl AugmentedModel {
    pub fn diffusion(&self) -> Matrix {
        symmetrize(&(&self.bz * &self.sigma * self.bz.transpose()))
    }
}

/// Assemble the joint drift and noise map. `noise` is the plant's true noise;
/// the filter gain may have been designed from a redacted view.
pub fn build_augmented(
    sys: &SystemMatrices,
    noise: &NoiseModel,
    mm: &MeasurementModel,
    filter: &StationaryFilter,
    g: &Gains,
) -> Result<AugmentedModel> {
    let am = assemble(sys, noise, mm, filter, g)?;
    let worst =
        complex_eigenvalues(&am.az).into_iter().max_by(|a, b| a.re.total_cmp(&b.re)).expect("non-empty spectrum");
    if !(worst.re < 0.0) {
        return Err(Error::ClosedLoopUnstable { re: worst.re, im: worst.im });
    }
    Ok(am)
}

fn assemble(
    sys: &SystemMatrices,
    noise: &NoiseModel,
    mm: &MeasurementModel,
    filter: &StationaryFilter,
    g: &Gains,
) -> Result<AugmentedModel> {
    let m = mm.dim();
    if g.mode != mm.mode || filter.k_syn.shape() != (m, m) {
        return Err(Error::arg("gains, filter and measurement model disagree on the filter mode"));
    }
    let a_tilde = sys.a[(0, 0)];
    let n = 6 + m;
    let mut az = Matrix::zeros(n, n);
    az.view_mut((0, 0), (6, 6)).copy_from(&sys.a);
    az.view_mut((0, 6), (6, m)).copy_from(&g.fgain);
    az.view_mut((6, 0), (m, 6)).copy_from(&(&filter.k_syn * &mm.c));
    let lower = Matrix::identity(m, m) * a_tilde - &filter.k_syn * mm.sqrt_2nu + &mm.btil * &g.fgain;
    az.view_mut((6, 6), (m, m)).copy_from(&lower);

    let mut bz = Matrix::zeros(n, 12);
    bz.view_mut((0, 0), (6, 12)).copy_from(&sys.b);
    bz.view_mut((6, 0), (m, 12)).copy_from(&(&filter.k_syn * &mm.d));

    let mut drive_z = Vector::zeros(n);
    drive_z.rows_mut(0, 6).copy_from(&sys.drive);
    Ok(AugmentedModel { az, bz, sigma: noise.sigma_w.clone(), drive_z, m })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopMoments {
    pub vz: Matrix,
    pub vprime: Matrix,
    pub mean_z: Vector,
}

/// Stationary covariance of `z` and its memory block `V'`.
pub fn closed_loop_covariance(am: &AugmentedModel) -> Result<(Matrix, Matrix)> {
    let vz = solve_lyapunov_steady(&am.az, &am.diffusion())?;
    let vprime = vz.view((0, 0), (6, 6)).into_owned();
    Ok((vz, vprime))
}

/// `−A_z⁻¹ (drive, 0)`.
pub fn closed_loop_mean(am: &AugmentedModel) -> Result<Vector> {
    let lu = am.az.clone().lu();
    let sol = lu.solve(&am.drive_z).ok_or_else(|| Error::Singular("closed-loop drift".into()))?;
    Ok(-sol)
}

pub fn closed_loop_moments(am: &AugmentedModel) -> Result<ClosedLoopMoments> {
    let (vz, vprime) = closed_loop_covariance(am)?;
    Ok(ClosedLoopMoments { vz, vprime, mean_z: closed_loop_mean(am)? })
}

pub fn controlled_fidelity(vprime: &Matrix, v_in: &Matrix) -> Result<f64> {
    fidelity(vprime, v_in)
}

/// Ways of reading the gain symbols in the explicit stationary formula
/// for `V'`. Printed literally, the first factor is 6×12 while the stacked
/// noise map has `6 + m` rows, so some lift of the filter row to 6 rows is
/// unavoidable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymbolReading {
    /// Symbols as printed; rejected on dimensions.
    Verbatim,
    /// `K` is the full 6×m Kalman gain; the noise row is lifted to `B̃ᵀ K̃ D`.
    FullGainLifted,
    /// `K` is replaced by `B̃ᵀ K̃`; the noise row is lifted to `B̃ᵀ K̃ D`.
    SyndromeGainLifted,
    /// `K` is the full gain and the noise row is `K D`.
    FullGainFullNoise,
}

impl SymbolReading {
    pub const ALL: [SymbolReading; 4] = [
        SymbolReading::Verbatim,
        SymbolReading::FullGainLifted,
        SymbolReading::SyndromeGainLifted,
        SymbolReading::FullGainFullNoise,
    ];
    /// Reading adopted for acceptance: the unfiltered gain symbol is the full Kalman gain.
    pub const ADOPTED: SymbolReading = SymbolReading::FullGainLifted;
}

/// Evaluate the explicit stationary formula for `V'` under `reading`.
pub fn vprime_explicit(
    reading: SymbolReading,
    params: &MemoryParams,
    enc: &Encoding,
    sys: &SystemMatrices,
    noise: &NoiseModel,
    mm: &MeasurementModel,
    filter: &StationaryFilter,
    g: &Gains,
) -> Result<Matrix> {
    let lifted = mm.btil.transpose() * &filter.k_syn;
    let (k, noise_row) = match reading {
        SymbolReading::Verbatim => {
            return Err(Error::arg(format!(
                "verbatim reading multiplies a 6x12 row by a {}x12 noise stack",
                6 + mm.dim()
            )))
        }
        SymbolReading::FullGainLifted => (filter.k.clone(), &lifted * &mm.d),
        SymbolReading::SyndromeGainLifted => (lifted.clone(), &lifted * &mm.d),
        SymbolReading::FullGainFullNoise => (filter.k.clone(), &filter.k * &mm.d),
    };
    let a = &sys.a;
    let kc = &k * &mm.c;
    let fb = &g.fgain * &mm.btil;

    let mut left = Matrix::zeros(6, 12);
    left.view_mut((0, 0), (6, 6)).copy_from(&(a - &kc + &fb));
    left.view_mut((0, 6), (6, 6)).copy_from(&(-&fb));
    let mut stack = Matrix::zeros(12, 12);
    stack.view_mut((0, 0), (6, 12)).copy_from(&sys.b);
    stack.view_mut((6, 0), (6, 12)).copy_from(&noise_row);
    let right = left.transpose();

    let outer = inverse(&(a * 2.0 - &kc + &fb), "2A − KC + FB̃")?;
    let inv_est = inverse(&(a - &kc), "A − KC")?;
    let inv_ctl = inverse(&(&fb + a), "FB̃ + A")?;
    let middle = &left * &stack * &noise.sigma_w * stack.transpose() * right * inv_est * inv_ctl;
    let thermal = Matrix::identity(6, 6) * (params.gamma * (params.n_occ + 0.5));
    let source = enc.t.clone() * &noise.lambda * enc.t.transpose() * params.nu;
    Ok(symmetrize(&(outer * (middle + thermal + source) * -0.5)))
}

/// Mismatch of one 2×2 mode block of `V'`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockMismatch {
    /// Mode indices, 1-based.
    pub row_mode: usize,
    pub col_mode: usize,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadingOutcome {
    pub reading: SymbolReading,
    /// `None` when the reading cannot be evaluated.
    pub rel_error: Option<f64>,
    pub matches: bool,
    pub failure: Option<String>,
    pub mismatched_blocks: Vec<BlockMismatch>,
}

/// Comparison of every symbol reading against the Lyapunov solution,
/// which is authoritative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplicitFormulaReport {
    pub tolerance: f64,
    pub adopted: SymbolReading,
    pub adopted_matches: bool,
    pub outcomes: Vec<ReadingOutcome>,
}

fn block_mismatches(candidate: &Matrix, reference: &Matrix, tol: f64) -> Vec<BlockMismatch> {
    let scale = reference.norm().max(f64::MIN_POSITIVE);
    let mut out = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            let diff = (candidate.view((2 * i, 2 * j), (2, 2)) - reference.view((2 * i, 2 * j), (2, 2))).norm();
            let rel = diff / scale;
            if rel > tol {
                out.push(BlockMismatch { row_mode: i + 1, col_mode: j + 1, rel_error: rel });
            }
        }
    }
    out
}

pub fn explicit_formula_report(
    params: &MemoryParams,
    enc: &Encoding,
    sys: &SystemMatrices,
    noise: &NoiseModel,
    mm: &MeasurementModel,
    filter: &StationaryFilter,
    g: &Gains,
    vprime: &Matrix,
    tolerance: f64,
) -> ExplicitFormulaReport {
    let outcomes: Vec<ReadingOutcome> = SymbolReading::ALL
        .iter()
        .map(|&reading| match vprime_explicit(reading, params, enc, sys, noise, mm, filter, g) {
            Ok(candidate) => {
                let rel = rel_frobenius(&candidate, vprime);
                ReadingOutcome {
                    reading,
                    rel_error: Some(rel),
                    matches: rel <= tolerance,
                    failure: None,
                    mismatched_blocks: block_mismatches(&candidate, vprime, tolerance),
                }
            }
            Err(e) => ReadingOutcome {
                reading,
                rel_error: None,
                matches: false,
                failure: Some(e.to_string()),
                mismatched_blocks: Vec::new(),
            },
        })
        .collect();
    let adopted_matches = outcomes.iter().any(|o| o.reading == SymbolReading::ADOPTED && o.matches);
    ExplicitFormulaReport { tolerance, adopted: SymbolReading::ADOPTED, adopted_matches, outcomes }
}

/// Comparison of the two possible scalings of the printed feedback law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConventionReport {
    pub r: f64,
    pub dt: f64,
    /// `f₂/3`, from solving the Riccati equation exactly.
    pub lambda_adopted: f64,
    /// `f₂/(3r)`, as the coefficient is printed next to `P = diag(f_i)`.
    pub lambda_printed: f64,
    pub adopted_abscissa: f64,
    pub printed_abscissa: f64,
    /// Spectral radius of the Euler map `I + dt A_z`.
    pub adopted_euler_radius: f64,
    pub printed_euler_radius: f64,
    pub adopted_euler_stable: bool,
    pub printed_euler_stable: bool,
}

pub fn convention_diagnostic(
    sys: &SystemMatrices,
    noise: &NoiseModel,
    mm: &MeasurementModel,
    filter: &StationaryFilter,
    g: &Gains,
    dt: f64,
) -> Result<ConventionReport> {
    if !g.is_enabled() {
        return Err(Error::arg("convention diagnostic needs active feedback"));
    }
    let mut printed = g.clone();
    printed.fgain = &g.fgain / g.r;
    let measure = |gains: &Gains| -> Result<(f64, f64)> {
        let am = assemble(sys, noise, mm, filter, gains)?;
        let eig = complex_eigenvalues(&am.az);
        let abscissa = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let radius = eig.iter().map(|z| ((1.0 + dt * z.re).powi(2) + (dt * z.im).powi(2)).sqrt()).fold(0.0, f64::max);
        Ok((abscissa, radius))
    };
    let (adopted_abscissa, adopted_euler_radius) = measure(g)?;
    let (printed_abscissa, printed_euler_radius) = measure(&printed)?;
    Ok(ConventionReport {
        r: g.r,
        dt,
        lambda_adopted: g.lambda(),
        lambda_printed: g.lambda() / g.r,
        adopted_abscissa,
        printed_abscissa,
        adopted_euler_radius,
        printed_euler_radius,
        adopted_euler_stable: adopted_euler_radius < 1.0,
        printed_euler_stable: printed_euler_radius < 1.0,
    })
}

/// Residual of the stationary joint Lyapunov equation, relative to its noise term.
pub fn augmented_residual(am: &AugmentedModel, vz: &Matrix) -> f64 {
    let q = am.diffusion();
    lyapunov_residual(&am.az, vz, &q).norm() / q.norm().max(f64::MIN_POSITIVE)
}
