//! Physical parameters, field statistics and the three-mode tritter encoding.
//!
//! Quadratures are ordered `(q1, p1, q2, p2, q3, p3)`; vacuum variance is 1/2.
//! All rates are angular frequencies (rad/s).

use std::f64::consts::PI;
use std::fmt;

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{is_psd, Matrix, Vector};

/// Surrogate for the ideal-squeezing limit μ → −∞.
pub const MU_FLOOR: f64 = -20.0;

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Occupation number quoted alongside T = 4 K, ω_m/2π = 10 MHz. Direct
/// evaluation of the Bose–Einstein formula gives about 8.33e3 instead.
pub const QUOTED_N_OCC: f64 = 8.8e3;

/// Which syndrome vector is estimated and fed back.
///
/// `S1` measures `(P1, Q2, Q3)` of the re-encoded output field, so it also
/// tracks `p1 + p2 + p3` but sees the source fluctuation. `S2` measures only
/// `(Q2, Q3)` and is blind to the source state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    S1,
    S2,
}

impl FilterMode {
    pub fn dim(self) -> usize {
        match self {
            FilterMode::S1 => 3,
            FilterMode::S2 => 2,
        }
    }
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterMode::S1 => "s1",
            FilterMode::S2 => "s2",
        })
    }
}

impl std::str::FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(FilterMode::S1),
            "s2" => Ok(FilterMode::S2),
            other => Err(Error::Config(format!("filter mode must be s1 or s2, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryParams {
    /// Coupling to the input field, rad/s.
    pub nu: f64,
    /// Coupling to the thermal environment, rad/s.
    pub gamma: f64,
    /// Environment occupation number.
    pub n_occ: f64,
}

impl MemoryParams {
    pub fn new(nu: f64, gamma: f64, n_occ: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::arg(format!("nu must be positive, got {nu}")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::arg(format!("gamma must be non-negative, got {gamma}")));
        }
        if !(n_occ >= 0.0 && n_occ.is_finite()) {
            return Err(Error::arg(format!("n_occ must be non-negative, got {n_occ}")));
        }
        Ok(MemoryParams { nu, gamma, n_occ })
    }

    /// Rates given as ν/2π and Γ/2π in Hz.
    pub fn from_hz(nu_hz: f64, gamma_hz: f64, n_occ: f64) -> Result<Self> {
        Self::new(2.0 * PI * nu_hz, 2.0 * PI * gamma_hz, n_occ)
    }

    /// ν/2π = 30 kHz, Γ/2π = 1 Hz, n = 8.8e3.
    pub fn reference() -> Self {
        Self::from_hz(30e3, 1.0, QUOTED_N_OCC).expect("reference parameters are valid")
    }

    pub fn total_rate(&self) -> f64 {
        self.nu + self.gamma
    }
}

/// Second-order statistics `(N, M)` of a Gaussian field mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldMode {
    pub n: f64,
    pub m: Complex64,
    /// Squeezing parameter when the mode is a squeezed vacuum; lets
    /// [`FieldMode::block`] avoid the cancellation in `N ± M + 1/2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    squeezing: Option<f64>,
}

impl FieldMode {
    pub fn new(n: f64, m: Complex64) -> Result<Self> {
        if !(n >= 0.0 && n.is_finite() && m.re.is_finite() && m.im.is_finite()) {
            return Err(Error::arg(format!("occupation must be finite and non-negative, got {n}")));
        }
        let bound = n * (n + 1.0);
        if bound < m.norm_sqr() - 1e-12 * bound.max(1.0) {
            return Err(Error::arg(format!("Heisenberg bound violated: N(N+1) = {bound} < |M|^2 = {}", m.norm_sqr())));
        }
        Ok(FieldMode { n, m, squeezing: None })
    }

    pub fn vacuum() -> Self {
        FieldMode { n: 0.0, m: Complex64::new(0.0, 0.0), squeezing: Some(0.0) }
    }

    pub fn squeezing(&self) -> Option<f64> {
        self.squeezing
    }

    pub fn is_pure(&self, tol: f64) -> bool {
        (self.n * (self.n + 1.0) - self.m.norm_sqr()).abs() <= tol
    }

    /// Quadrature covariance block of the field increments per unit time.
    pub fn block(&self) -> Matrix2<f64> {
        if let Some(mu) = self.squeezing {
            return Matrix2::new(mu.exp() / 2.0, 0.0, 0.0, (-mu).exp() / 2.0);
        }
        Matrix2::new(self.n + self.m.re + 0.5, self.m.im, self.m.im, self.n - self.m.re + 0.5)
    }
}

/// Pure squeezed vacuum with position variance `e^μ / 2`.
pub fn squeezed_vacuum(mu: f64) -> FieldMode {
    // N = (e^μ + e^−μ − 2)/4 = sinh²(μ/2), M = (e^μ − e^−μ)/4 = sinh(μ)/2.
    FieldMode { n: (mu / 2.0).sinh().powi(2), m: Complex64::new(mu.sinh() / 2.0, 0.0), squeezing: Some(mu) }
}

/// The unknown input to be stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    /// Real mean amplitude (Hz^{1/2}); the momentum mean is zero.
    pub alpha_in: f64,
    pub mode: FieldMode,
    /// The filter may use `(N1, M1)` only when this is set.
    pub covariance_known: bool,
    pub mean_known: bool,
}

impl SourceSpec {
    pub fn coherent(alpha_in: f64) -> Self {
        SourceSpec { alpha_in, mode: FieldMode::vacuum(), covariance_known: true, mean_known: false }
    }

    /// Source squeezed with `μ1 = log(2M1 + 2N1 + 1)`, `M1` real.
    pub fn squeezed(alpha_in: f64, mu1: f64, covariance_known: bool) -> Self {
        SourceSpec { alpha_in, mode: squeezed_vacuum(mu1), covariance_known, mean_known: false }
    }
}

/// The tritter: 1:2 beam splitter followed by a balanced one.
pub fn tritter() -> Matrix {
    let a = (1.0f64 / 3.0).sqrt();
    let b = (2.0f64 / 3.0).sqrt();
    let c = (1.0f64 / 6.0).sqrt();
    let d = (0.5f64).sqrt();
    #[rustfmt::skip]
    let t = Matrix::from_row_slice(6, 6, &[
        a, 0.0, -b, 0.0, 0.0, 0.0,
        0.0, a, 0.0, -b, 0.0, 0.0,
        a, 0.0, c, 0.0, d, 0.0,
        0.0, a, 0.0, c, 0.0, d,
        a, 0.0, c, 0.0, -d, 0.0,
        0.0, a, 0.0, c, 0.0, -d,
    ]);
    t
}

/// Encoded drive `β = √(2/3) α_in (1, 0, 1, 0, 1, 0)ᵀ`.
pub fn drive_vector(alpha_in: f64) -> Vector {
    let s = (2.0f64 / 3.0).sqrt() * alpha_in;
    Vector::from_vec(vec![s, 0.0, s, 0.0, s, 0.0])
}

/// Bose–Einstein occupation `1 / (exp(ħω / k_B T) − 1)`.
pub fn thermal_occupation(temp_k: f64, omega: f64) -> Result<f64> {
    if !(temp_k > 0.0) || !(omega > 0.0) {
        return Err(Error::arg("temperature and frequency must be positive"));
    }
    let x = HBAR * omega / (BOLTZMANN * temp_k);
    if x > 700.0 {
        return Ok(0.0);
    }
    Ok(1.0 / x.exp_m1())
}

fn selector(rows: &[usize]) -> Matrix {
    let mut z = Matrix::zeros(rows.len(), 6);
    for (i, &c) in rows.iter().enumerate() {
        z[(i, c)] = 1.0;
    }
    z
}

/// Tritter plus syndrome selectors; fixed for a given source amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub t: Matrix,
    pub beta: Vector,
    /// Selects `(P1, Q2, Q3)`.
    pub z1: Matrix,
    /// Selects `(Q2, Q3)`.
    pub z2: Matrix,
    pub btil1: Matrix,
    pub btil2: Matrix,
}

impl Encoding {
    pub fn new(alpha_in: f64) -> Result<Self> {
        let t = tritter();
        let beta = drive_vector(alpha_in);
        let z1 = selector(&[1, 2, 4]);
        let z2 = selector(&[2, 4]);
        let btil1 = &z1 * t.transpose();
        let btil2 = &z2 * t.transpose();
        let enc = Encoding { t, beta, z1, z2, btil1, btil2 };
        enc.check()?;
        Ok(enc)
    }

    fn check(&self) -> Result<()> {
        let eye = Matrix::identity(6, 6);
        if (self.t.transpose() * &self.t - eye).norm() > 1e-12 {
            return Err(Error::arg("tritter is not orthogonal"));
        }
        for mode in [FilterMode::S1, FilterMode::S2] {
            let b = self.btil(mode);
            let m = mode.dim();
            if (b * b.transpose() - Matrix::identity(m, m)).norm() > 1e-12 {
                return Err(Error::arg(format!("syndrome map {mode} is not an isometry")));
            }
            if (b * &self.beta).norm() > 1e-12 * self.beta.norm().max(1.0) {
                return Err(Error::arg(format!("syndrome map {mode} sees the drive")));
            }
        }
        Ok(())
    }

    pub fn z(&self, mode: FilterMode) -> &Matrix {
        match mode {
            FilterMode::S1 => &self.z1,
            FilterMode::S2 => &self.z2,
        }
    }

    pub fn btil(&self, mode: FilterMode) -> &Matrix {
        match mode {
            FilterMode::S1 => &self.btil1,
            FilterMode::S2 => &self.btil2,
        }
    }
}

/// `Λ = diag{Λ1, Λ2, Λ3}` with `Λj` from [`FieldMode::block`].
pub fn lambda_matrix(m1: FieldMode, m2: FieldMode, m3: FieldMode) -> Result<Matrix> {
    let mut lambda = Matrix::zeros(6, 6);
    for (j, mode) in [m1, m2, m3].into_iter().enumerate() {
        FieldMode::new(mode.n, mode.m)?;
        lambda.view_mut((2 * j, 2 * j), (2, 2)).copy_from(&mode.block());
    }
    Ok(lambda)
}

/// Covariance `T Λ Tᵀ` of the encoded input field.
pub fn input_covariance(lambda: &Matrix) -> Matrix {
    let t = tritter();
    crate::numerics::symmetrize(&(&t * lambda * t.transpose()))
}

/// Joint covariance of the field and environment noise increments.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub lambda: Matrix,
    /// `diag{Λ, (n + 1/2) I₆}`, 12×12.
    pub sigma_w: Matrix,
}

impl NoiseModel {
    pub fn new(lambda: Matrix, params: &MemoryParams) -> Result<Self> {
        if lambda.shape() != (6, 6) {
            return Err(Error::arg("Lambda must be 6x6"));
        }
        for j in 0..3 {
            let block = lambda.view((2 * j, 2 * j), (2, 2)).clone_owned();
            if !is_psd(&block, 1e-12) {
                return Err(Error::arg(format!("Lambda block {} is not PSD", j + 1)));
            }
        }
        if (lambda.view((2, 2), (2, 2)) - lambda.view((4, 4), (2, 2))).norm() > 1e-12 {
            return Err(Error::arg("ancilla blocks of Lambda must coincide"));
        }
        let mut sigma_w = Matrix::zeros(12, 12);
        sigma_w.view_mut((0, 0), (6, 6)).copy_from(&lambda);
        sigma_w.view_mut((6, 6), (6, 6)).fill_diagonal(params.n_occ + 0.5);
        Ok(NoiseModel { lambda, sigma_w })
    }

    /// Source with statistics `source`, ancillas squeezed by `mu`.
    pub fn encoded(source: FieldMode, mu: f64, params: &MemoryParams) -> Result<Self> {
        let anc = squeezed_vacuum(mu);
        Self::new(lambda_matrix(source, anc, anc)?, params)
    }

    /// Copy with the source block replaced by vacuum: what a controller that
    /// does not know `(N1, M1)` is allowed to see.
    pub fn redacted(&self, params: &MemoryParams) -> Result<Self> {
        let mut lambda = self.lambda.clone();
        lambda.view_mut((0, 0), (2, 2)).copy_from(&FieldMode::vacuum().block());
        Self::new(lambda, params)
    }

    pub fn input_covariance(&self) -> Matrix {
        input_covariance(&self.lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn tritter_is_orthogonal_with_printed_first_row() {
        let t = tritter();
        assert!((t.transpose() * &t - Matrix::identity(6, 6)).norm() < 1e-12);
        let row: Vec<f64> = t.row(0).iter().copied().collect();
        let expect = [(1.0f64 / 3.0).sqrt(), 0.0, -(2.0f64 / 3.0).sqrt(), 0.0, 0.0, 0.0];
        for (a, b) in row.iter().zip(expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn syndrome_maps_annihilate_codespace() {
        let enc = Encoding::new(1.0).unwrap();
        for c in [-3.0, 0.7, 12.0] {
            let x = Vector::from_vec(vec![c, 0.0, c, 0.0, c, 0.0]);
            assert!((&enc.btil1 * &x).norm() < 1e-12);
            assert!((&enc.btil2 * &x).norm() < 1e-12);
        }
    }

    #[test]
    fn syndrome_rows_match_quadrature_combinations() {
        let enc = Encoding::new(0.0).unwrap();
        let s6 = 6f64.sqrt();
        #[rustfmt::skip]
        let expect = Matrix::from_row_slice(3, 6, &[
            0.0, 2f64.sqrt() / s6, 0.0, 2f64.sqrt() / s6, 0.0, 2f64.sqrt() / s6,
            -2.0 / s6, 0.0, 1.0 / s6, 0.0, 1.0 / s6, 0.0,
            0.0, 0.0, 3f64.sqrt() / s6, 0.0, -(3f64.sqrt()) / s6, 0.0,
        ]);
        assert_relative_eq!(enc.btil1, expect, epsilon = 1e-14);
        assert_relative_eq!(enc.btil2, expect.rows(1, 2).clone_owned(), epsilon = 1e-14);
    }

    #[test]
    fn squeezed_vacuum_limits() {
        let v = squeezed_vacuum(0.0);
        assert_eq!(v.n, 0.0);
        assert_eq!(v.m.re, 0.0);
        let deep = squeezed_vacuum(-20.0);
        let var_q = deep.block()[(0, 0)];
        assert_relative_eq!(var_q, (-20f64).exp() / 2.0, max_relative = 1e-14);
        assert_relative_eq!(var_q, 1.03e-9, max_relative = 0.01);
    }

    #[test]
    fn drive_vector_scaling_and_blindness() {
        assert_eq!(drive_vector(0.0), Vector::zeros(6));
        let d = drive_vector((1.5f64).sqrt());
        assert_relative_eq!(d, Vector::from_vec(vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]), epsilon = 1e-15);
        let enc = Encoding::new(-230.0).unwrap();
        assert!((&enc.btil1 * drive_vector(-230.0)).norm() < 1e-12);
        assert!((&enc.btil2 * drive_vector(-230.0)).norm() < 1e-12);
    }

    #[test]
    fn thermal_occupation_values() {
        // ħω/kT = ln 2 gives exactly one quantum.
        let omega = 2f64.ln() * BOLTZMANN * 1.0 / HBAR;
        assert_relative_eq!(thermal_occupation(1.0, omega).unwrap(), 1.0, epsilon = 1e-12);
        let n = thermal_occupation(4.0, 2.0 * PI * 10e6).unwrap();
        assert!((n - 8.33e3).abs() < 10.0, "n = {n}");
        assert!(thermal_occupation(1e-9, 2.0 * PI * 10e6).unwrap() == 0.0);
        assert!(thermal_occupation(0.0, 1.0).is_err());
    }

    #[test]
    fn lambda_blocks() {
        let vac = FieldMode::vacuum();
        let l = lambda_matrix(vac, vac, vac).unwrap();
        assert_relative_eq!(l, Matrix::identity(6, 6) * 0.5, epsilon = 1e-15);

        let mu = -0.7;
        let sq = squeezed_vacuum(mu);
        let l = lambda_matrix(vac, sq, sq).unwrap();
        assert_relative_eq!(l[(2, 2)], mu.exp() / 2.0, epsilon = 1e-14);
        assert_relative_eq!(l[(3, 3)], (-mu).exp() / 2.0, epsilon = 1e-14);
        assert_relative_eq!(l[(4, 4)], mu.exp() / 2.0, epsilon = 1e-14);

        let m1 = FieldMode::new(0.5, Complex64::new(0.1, 0.3)).unwrap();
        let l = lambda_matrix(m1, vac, vac).unwrap();
        assert_eq!(l[(0, 1)], 0.3);
        assert_eq!(l[(1, 0)], 0.3);
    }

    #[test]
    fn heisenberg_violation_is_rejected() {
        assert!(FieldMode::new(0.1, Complex64::new(1.0, 0.0)).is_err());
        assert!(FieldMode::new(-0.1, Complex64::new(0.0, 0.0)).is_err());
        let bad = FieldMode { n: 0.0, m: Complex64::new(0.5, 0.0), squeezing: None };
        assert!(lambda_matrix(bad, FieldMode::vacuum(), FieldMode::vacuum()).is_err());
    }

    #[test]
    fn input_covariance_of_vacuum_and_determinant() {
        let l = Matrix::identity(6, 6) * 0.5;
        assert_relative_eq!(input_covariance(&l), l, epsilon = 1e-15);
        let sq = squeezed_vacuum(-1.3);
        let m1 = FieldMode::new(0.4, Complex64::new(0.2, -0.1)).unwrap();
        let l = lambda_matrix(m1, sq, sq).unwrap();
        let v = input_covariance(&l);
        assert_relative_eq!(v.determinant(), l.determinant(), max_relative = 1e-12);
    }

    #[test]
    fn ideal_encoding_is_ghz_like() {
        let sq = squeezed_vacuum(MU_FLOOR);
        let v = input_covariance(&lambda_matrix(FieldMode::vacuum(), sq, sq).unwrap());
        for (i, j) in [(0, 2), (2, 4), (4, 0)] {
            let mut e = Vector::zeros(6);
            e[i] = 1.0;
            e[j] = -1.0;
            let var = (e.transpose() * &v * &e)[(0, 0)];
            assert!(var < 1e-8, "pair ({i},{j}) variance {var}");
        }
    }

    #[test]
    fn redaction_keeps_ancillas() {
        let params = MemoryParams::new(1.0, 1.0, 2.0).unwrap();
        let src = squeezed_vacuum(0.8);
        let noise = NoiseModel::encoded(src, -0.4, &params).unwrap();
        let red = noise.redacted(&params).unwrap();
        assert_relative_eq!(red.lambda.view((0, 0), (2, 2)).clone_owned(), Matrix::identity(2, 2) * 0.5);
        assert_eq!(red.lambda.view((2, 2), (4, 4)), noise.lambda.view((2, 2), (4, 4)));
        assert_eq!(red.sigma_w[(11, 11)], 2.5);
    }

    #[test]
    fn filter_mode_parsing() {
        assert_eq!("S2".parse::<FilterMode>().unwrap(), FilterMode::S2);
        assert!("s3".parse::<FilterMode>().is_err());
    }

    proptest! {
        #[test]
        fn squeezed_vacuum_is_pure(mu in -20.0f64..20.0) {
            let f = squeezed_vacuum(mu);
            let scale = f.n * (f.n + 1.0);
            prop_assert!((scale - f.m.norm_sqr()).abs() <= 1e-12 * scale.max(1.0));
            let magnitude = 2.0 * f.m.re.abs() + 2.0 * f.n + 1.0;
            prop_assert!(((2.0 * f.m.re + 2.0 * f.n + 1.0) - mu.exp()).abs() <= 1e-14 * magnitude);
            let b = f.block();
            prop_assert!((b[(0, 0)] - (f.n + f.m.re + 0.5)).abs() <= 1e-14 * magnitude);
            prop_assert!((f.block().determinant() - 0.25).abs() <= 1e-12 * mu.abs().exp());
        }

        #[test]
        fn sigma_w_is_psd(
            n1 in 0.0f64..5.0, phase in 0.0f64..6.3, frac in 0.0f64..1.0,
            mu in -5.0f64..5.0, n_occ in 0.0f64..1e4,
        ) {
            let params = MemoryParams::new(1.0, 0.5, n_occ).unwrap();
            let m = Complex64::from_polar(frac * (n1 * (n1 + 1.0)).sqrt(), phase);
            let noise = NoiseModel::encoded(FieldMode::new(n1, m).unwrap(), mu, &params).unwrap();
            prop_assert!(crate::numerics::is_symmetric(&noise.sigma_w, 1e-14));
            prop_assert!(is_psd(&noise.sigma_w, 1e-9));
        }
    }
}
