//! Dense real-matrix kernel.
//!
//! Steady Lyapunov equations are solved by vectorization (Kronecker sum),
//! which is exact up to LU round-off and comfortably fast for the 6..9 state
//! systems handled here. The continuous algebraic Riccati equation is solved
//! by Newton–Kleinman iteration; when the open-loop drift is not Hurwitz the
//! iteration is seeded from the matrix-sign-function solution of the
//! associated Hamiltonian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Controls for time-marching a matrix flow to its fixed point.
///
/// Convergence is declared when `‖rhs(X)‖ / (rate_scale · max(1, ‖X‖))`
/// falls below `convergence_tol`. `rate_scale` makes the measure
/// dimensionless; use the characteristic rate of the flow (ν + Γ here).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadySolveOptions {
    pub step: f64,
    pub convergence_tol: f64,
    pub max_time: f64,
    pub rate_scale: f64,
}

impl SteadySolveOptions {
    /// Defaults scaled to a flow whose slowest mode relaxes at `rate / 2`.
    pub fn for_rate(rate: f64) -> Self {
        SteadySolveOptions { step: 1e-3 / rate, convergence_tol: 1e-10, max_time: 50.0 / rate, rate_scale: rate }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::arg(format!("step must be positive, got {}", self.step)));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::arg("convergence_tol must be positive"));
        }
        if !(self.max_time > self.step) {
            return Err(Error::arg("max_time must exceed step"));
        }
        if !(self.rate_scale > 0.0) {
            return Err(Error::arg("rate_scale must be positive"));
        }
        Ok(())
    }
}

impl Default for SteadySolveOptions {
    fn default() -> Self {
        Self::for_rate(1.0)
    }
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &Matrix, rel_tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).norm() <= rel_tol * m.norm().max(f64::MIN_POSITIVE)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    let sym = symmetrize(m);
    let budget = 200 * sym.nrows().max(1);
    nalgebra::linalg::SymmetricEigen::try_new(sym, f64::EPSILON, budget)
        .map(|e| e.eigenvalues.min())
        .unwrap_or(f64::NAN)
}

pub fn is_psd(m: &Matrix, tol: f64) -> bool {
    min_eigenvalue(m) >= -tol
}

/// Spectrum of a real square matrix.
///
/// nalgebra's unbounded Schur sweep can cycle forever on highly structured
/// input, so the iteration count is capped and the decomposition retried under
/// a few fixed Householder similarities. If every attempt stalls the result
/// is NaN, which downstream stability checks treat as failure.
pub fn complex_eigenvalues(m: &Matrix) -> Vec<nalgebra::Complex<f64>> {
    let n = m.nrows();
    let budget = 200 * n.max(1);
    for attempt in 0..6 {
        let candidate = if attempt == 0 {
            m.clone()
        } else {
            let v = Vector::from_fn(n, |i, _| ((attempt * (i + 1)) as f64 * 0.731).sin() + 0.1);
            let v = &v / v.norm();
            let h = Matrix::identity(n, n) - &v * v.transpose() * 2.0;
            &h * m * &h
        };
        if let Some(schur) = nalgebra::linalg::Schur::try_new(candidate, f64::EPSILON, budget) {
            return schur.complex_eigenvalues().iter().copied().collect();
        }
        log::debug!("Schur iteration stalled on attempt {attempt}; retrying under a similarity");
    }
    vec![nalgebra::Complex::new(f64::NAN, f64::NAN); n]
}

/// Largest real part over the spectrum of a square matrix.
pub fn spectral_abscissa(m: &Matrix) -> f64 {
    complex_eigenvalues(m).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(m: &Matrix) -> bool {
    spectral_abscissa(m) < 0.0
}

/// Frobenius norm of `a - b` relative to `‖b‖`.
pub fn rel_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn determinant(m: &Matrix) -> f64 {
    m.clone().lu().determinant()
}

pub fn inverse(m: &Matrix, what: &str) -> Result<Matrix> {
    m.clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular(what.to_string()))
}

fn require_square(m: &Matrix, name: &str) -> Result<usize> {
    if m.is_square() && m.nrows() > 0 {
        Ok(m.nrows())
    } else {
        Err(Error::arg(format!("{name} must be square and non-empty, got {}x{}", m.nrows(), m.ncols())))
    }
}

/// Residual `A X + X Aᵀ + Qn`.
pub fn lyapunov_residual(a: &Matrix, x: &Matrix, qn: &Matrix) -> Matrix {
    a * x + x * a.transpose() + qn
}

/// Steady solution of `A X + X Aᵀ + Qn = 0` for Hurwitz `A`.
pub fn solve_lyapunov_steady(a: &Matrix, qn: &Matrix) -> Result<Matrix> {
    let n = require_square(a, "drift")?;
    if qn.shape() != (n, n) {
        return Err(Error::arg(format!("noise matrix is {}x{}, drift is {n}x{n}", qn.nrows(), qn.ncols())));
    }
    if !is_symmetric(qn, 1e-10) {
        return Err(Error::arg("noise matrix must be symmetric"));
    }
    let abscissa = spectral_abscissa(a);
    if !(abscissa < 0.0) {
        return Err(Error::UnstableDrift { abscissa });
    }

    // Scalar drift −c I has the exact solution Q / 2c.
    let c = -a[(0, 0)];
    if (a + Matrix::identity(n, n) * c).iter().all(|&e| e == 0.0) {
        return Ok(symmetrize(&(qn / (2.0 * c))));
    }

    // Column-major vec: vec(A X) = (I ⊗ A) vec X, vec(X Aᵀ) = (A ⊗ I) vec X.
    let eye = Matrix::identity(n, n);
    let kron_sum = eye.kronecker(a) + a.kronecker(&eye);
    let lu = kron_sum.lu();
    let solve = |rhs: &Matrix| -> Result<Matrix> {
        let v = Vector::from_column_slice(rhs.as_slice());
        let sol = lu.solve(&v).ok_or_else(|| Error::Singular("Lyapunov operator".into()))?;
        Ok(Matrix::from_column_slice(n, n, sol.as_slice()))
    };

    let mut x = symmetrize(&solve(&(-qn))?);
    let scale = qn.norm();
    // Iterative refinement; one pass is normally enough.
    for _ in 0..3 {
        let res = lyapunov_residual(a, &x, qn);
        if res.norm() <= 1e-13 * scale {
            break;
        }
        x = symmetrize(&(&x + solve(&(-res))?));
    }
    let residual = lyapunov_residual(a, &x, qn).norm();
    if residual > 1e-10 * scale {
        return Err(Error::NotConverged { solver: "Lyapunov", residual: residual / scale });
    }
    Ok(x)
}

fn rk4_step<F>(rhs: &F, x: &Matrix, k1: &Matrix, h: f64) -> Result<Matrix>
where
    F: Fn(&Matrix) -> Result<Matrix>,
{
    let k2 = rhs(&symmetrize(&(x + k1 * (h / 2.0))))?;
    let k3 = rhs(&symmetrize(&(x + &k2 * (h / 2.0))))?;
    let k4 = rhs(&symmetrize(&(x + &k3 * h)))?;
    Ok(symmetrize(&(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))))
}

/// Marches `dX/dt = rhs(X)` from `x0` until the flow is stationary.
///
/// Classical RK4; a step whose residual grows by more than 50% is rejected
/// and retried at half the step size.
pub fn integrate_to_steady<F>(rhs: F, x0: &Matrix, opts: &SteadySolveOptions) -> Result<Matrix>
where
    F: Fn(&Matrix) -> Result<Matrix>,
{
    opts.validate()?;
    let measure = |k: &Matrix, x: &Matrix| k.norm() / (opts.rate_scale * x.norm().max(1.0));
    let min_step = opts.step / 1024.0;

    let mut x = symmetrize(x0);
    let mut k1 = rhs(&x)?;
    let mut res = measure(&k1, &x);
    let mut h = opts.step;
    let mut t = 0.0;
    loop {
        if !res.is_finite() {
            return Err(Error::SteadyStateNotReached { time: t, residual: res });
        }
        if res < opts.convergence_tol {
            return Ok(x);
        }
        if t >= opts.max_time {
            return Err(Error::SteadyStateNotReached { time: t, residual: res });
        }
        let candidate = rk4_step(&rhs, &x, &k1, h)?;
        let k_new = rhs(&candidate)?;
        let res_new = measure(&k_new, &candidate);
        if (res_new > 1.5 * res || !res_new.is_finite()) && h > min_step {
            h /= 2.0;
            continue;
        }
        x = candidate;
        k1 = k_new;
        res = res_new;
        t += h;
    }
}

/// Residual `Aᵀ P + P A + Q − P G P` with `G = B R⁻¹ Bᵀ`.
pub fn care_residual(a: &Matrix, g: &Matrix, q: &Matrix, p: &Matrix) -> Matrix {
    a.transpose() * p + p * a + q - p * g * p
}

/// Stabilizing solution of `Aᵀ P + P A + Q − P B R⁻¹ Bᵀ P = 0`.
pub fn solve_care(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    let g = care_setup(a, b, q, r)?;
    let p0 = if is_hurwitz(a) {
        Matrix::zeros(a.nrows(), a.nrows())
    } else {
        let p0 = care_sign_function(a, &g, q)?;
        if !is_hurwitz(&(a - &g * &p0)) {
            return Err(Error::NotConverged {
                solver: "CARE (no stabilizing initial gain)",
                residual: care_residual(a, &g, q, &p0).norm(),
            });
        }
        p0
    };
    newton_kleinman(a, &g, q, p0)
}

/// Stabilizing CARE solution, seeded from a feedback `u = −L₀ x` known to
/// make `A − B L₀` Hurwitz. Avoids the Hamiltonian sign iteration, which
/// loses accuracy when the weights span many orders of magnitude.
pub fn solve_care_from_gain(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, l0: &Matrix) -> Result<Matrix> {
    let g = care_setup(a, b, q, r)?;
    if l0.shape() != (b.ncols(), a.nrows()) {
        return Err(Error::arg("initial gain has wrong shape"));
    }
    let closed = a - b * l0;
    if !is_hurwitz(&closed) {
        return Err(Error::arg("initial gain is not stabilizing"));
    }
    let rhs = symmetrize(&(q + l0.transpose() * r * l0));
    let p1 = solve_lyapunov_steady(&closed.transpose(), &rhs)?;
    newton_kleinman(a, &g, q, p1)
}

/// Validates the CARE data and returns `G = B R⁻¹ Bᵀ`.
fn care_setup(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    let m = require_square(a, "state matrix")?;
    let k = require_square(r, "input penalty")?;
    if b.shape() != (m, k) {
        return Err(Error::arg(format!("input matrix is {}x{}, expected {m}x{k}", b.nrows(), b.ncols())));
    }
    if q.shape() != (m, m) {
        return Err(Error::arg("state weight has wrong shape"));
    }
    if !is_symmetric(q, 1e-10) || !is_psd(q, 1e-10 * q.norm().max(1.0)) {
        return Err(Error::arg("state weight must be symmetric positive semidefinite"));
    }
    if !is_symmetric(r, 1e-10) {
        return Err(Error::arg("input penalty must be symmetric"));
    }
    let r_chol = symmetrize(r).cholesky().ok_or_else(|| Error::arg("input penalty must be positive definite"))?;
    Ok(symmetrize(&(b * r_chol.solve(&b.transpose()))))
}

/// `(A − G P_k)ᵀ P_{k+1} + P_{k+1} (A − G P_k) + Q + P_k G P_k = 0` from a stabilizing `P₀`.
fn newton_kleinman(a: &Matrix, g: &Matrix, q: &Matrix, p0: Matrix) -> Result<Matrix> {
    let mut p = p0;
    for _ in 0..100 {
        let closed = a - g * &p;
        let rhs = symmetrize(&(q + &p * g * &p));
        let next = solve_lyapunov_steady(&closed.transpose(), &rhs)?;
        let step = (&next - &p).norm();
        p = next;
        if step <= 1e-15 * p.norm() {
            break;
        }
    }

    let residual = care_residual(a, g, q, &p).norm();
    let scale = q.norm().max(2.0 * (a.transpose() * &p).norm()).max((&p * g * &p).norm());
    let bound = 1e-8 * scale.max(f64::MIN_POSITIVE);
    if residual > bound {
        return Err(Error::NotConverged { solver: "CARE", residual });
    }
    Ok(p)
}

/// CARE solution from the sign of the Hamiltonian `[[A, −G], [−Q, −Aᵀ]]`.
fn care_sign_function(a: &Matrix, g: &Matrix, q: &Matrix) -> Result<Matrix> {
    let m = a.nrows();
    let mut h = Matrix::zeros(2 * m, 2 * m);
    h.view_mut((0, 0), (m, m)).copy_from(a);
    h.view_mut((0, m), (m, m)).copy_from(&(-g));
    h.view_mut((m, 0), (m, m)).copy_from(&(-q));
    h.view_mut((m, m), (m, m)).copy_from(&(-a.transpose()));

    let mut z = h;
    let mut converged = false;
    for _ in 0..200 {
        let det = determinant(&z).abs();
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::Singular("Hamiltonian has imaginary-axis eigenvalues".into()));
        }
        let c = det.powf(-1.0 / (2.0 * m as f64));
        let zs = &z * c;
        let next = (&zs + inverse(&zs, "sign iteration")?) * 0.5;
        let change = (&next - &z).norm();
        z = next;
        if change <= 1e-13 * z.norm() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged { solver: "matrix sign function", residual: f64::NAN });
    }

    // Stable subspace span[I; P] lies in ker(W + I).
    let mut lhs = Matrix::zeros(2 * m, m);
    lhs.view_mut((0, 0), (m, m)).copy_from(&z.view((0, m), (m, m)));
    lhs.view_mut((m, 0), (m, m)).copy_from(&(z.view((m, m), (m, m)) + Matrix::identity(m, m)));
    let mut rhs = Matrix::zeros(2 * m, m);
    rhs.view_mut((0, 0), (m, m)).copy_from(&(-(z.view((0, 0), (m, m)) + Matrix::identity(m, m))));
    rhs.view_mut((m, 0), (m, m)).copy_from(&(-z.view((m, 0), (m, m))));
    // Thin QR least squares; nalgebra's SVD can stall on exactly sparse inputs.
    let qr = lhs.qr();
    let r = qr.r();
    let qt_rhs = qr.q().transpose() * rhs;
    let p = r.solve_upper_triangular(&qt_rhs).ok_or_else(|| Error::Singular("sign-function extraction".into()))?;
    Ok(symmetrize(&p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lyapunov_identity_balance() {
        let a = -Matrix::identity(2, 2);
        let q = Matrix::identity(2, 2) * 2.0;
        let x = solve_lyapunov_steady(&a, &q).unwrap();
        assert_relative_eq!(x, Matrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn lyapunov_scalar_drift_scales_noise() {
        let c = 3.7;
        let a = -Matrix::identity(6, 6) * c;
        let raw = Matrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.5);
        let q = symmetrize(&raw);
        let x = solve_lyapunov_steady(&a, &q).unwrap();
        assert_relative_eq!(x, &q / (2.0 * c), epsilon = 1e-13);
    }

    #[test]
    fn lyapunov_rejects_unstable_drift() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![-1.0, 0.5]));
        let err = solve_lyapunov_steady(&a, &Matrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::UnstableDrift { .. }));
    }

    #[test]
    fn lyapunov_rejects_dimension_mismatch() {
        let err = solve_lyapunov_steady(&(-Matrix::identity(3, 3)), &Matrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn lyapunov_nondiagonal_drift() {
        let a = Matrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.0, -0.5, -1.0, 0.3, 0.0, 0.2, -4.0]);
        let q = Matrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.2, 0.0, 0.2, 3.0]);
        let x = solve_lyapunov_steady(&a, &q).unwrap();
        assert!(lyapunov_residual(&a, &x, &q).norm() < 1e-12);
        assert!(is_psd(&x, 1e-12));
    }

    #[test]
    fn zero_flow_returns_initial_condition() {
        let x0 = Matrix::identity(3, 3) * 0.5;
        let x = integrate_to_steady(|x| Ok(Matrix::zeros(x.nrows(), x.ncols())), &x0, &Default::default()).unwrap();
        assert_eq!(x, x0);
    }

    #[test]
    fn integration_reports_non_convergence() {
        let a = -Matrix::identity(2, 2) * 0.01;
        let q = Matrix::identity(2, 2);
        let opts = SteadySolveOptions { step: 0.1, convergence_tol: 1e-10, max_time: 1.0, rate_scale: 1.0 };
        let err = integrate_to_steady(|x| Ok(lyapunov_residual(&a, x, &q)), &Matrix::zeros(2, 2), &opts).unwrap_err();
        match err {
            Error::SteadyStateNotReached { residual, .. } => assert!(residual > 0.0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn options_validation() {
        let mut opts = SteadySolveOptions::default();
        assert!(opts.validate().is_ok());
        opts.max_time = opts.step / 2.0;
        assert!(opts.validate().is_err());
        opts = SteadySolveOptions { step: -1.0, ..Default::default() };
        assert!(opts.validate().is_err());
    }

    #[test]
    fn care_scalar_quadratic_root() {
        let p = solve_care(
            &Matrix::from_element(1, 1, -1.0),
            &Matrix::from_element(1, 1, 1.0),
            &Matrix::from_element(1, 1, 3.0),
            &Matrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn care_zero_cost_gives_zero() {
        let a = -Matrix::identity(3, 3);
        let b = Matrix::identity(3, 3);
        let p = solve_care(&a, &b, &Matrix::zeros(3, 3), &Matrix::identity(3, 3)).unwrap();
        assert_eq!(p, Matrix::zeros(3, 3));
    }

    #[test]
    fn care_rejects_indefinite_penalty() {
        let err = solve_care(
            &Matrix::from_element(1, 1, -1.0),
            &Matrix::from_element(1, 1, 1.0),
            &Matrix::from_element(1, 1, 1.0),
            &Matrix::from_element(1, 1, -1.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn care_unstable_drift_uses_sign_seed() {
        // Double integrator: A = [[0,1],[0,0]], B = e2, Q = I, R = 1.
        // Known solution P = [[√3, 1], [1, √3]].
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let p = solve_care(&a, &b, &Matrix::identity(2, 2), &Matrix::identity(1, 1)).unwrap();
        let s3 = 3f64.sqrt();
        assert_relative_eq!(p, Matrix::from_row_slice(2, 2, &[s3, 1.0, 1.0, s3]), epsilon = 1e-10);

        // Strictly anti-stable scalar: a = 1, b = 1, q = 1, r = 1 → p = 1 + √2.
        let p = solve_care(
            &Matrix::from_element(1, 1, 1.0),
            &Matrix::from_element(1, 1, 1.0),
            &Matrix::from_element(1, 1, 1.0),
            &Matrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0 + 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn care_from_stabilizing_gain() {
        // Double integrator again, seeded with u = −(x1 + x2).
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let q = Matrix::identity(2, 2);
        let r = Matrix::identity(1, 1);
        let p = solve_care_from_gain(&a, &b, &q, &r, &Matrix::from_row_slice(1, 2, &[1.0, 1.0])).unwrap();
        assert_relative_eq!(p, solve_care(&a, &b, &q, &r).unwrap(), epsilon = 1e-10);

        let zero = Matrix::zeros(1, 2);
        assert!(matches!(solve_care_from_gain(&a, &b, &q, &r, &zero), Err(Error::Argument(_))));
        assert!(solve_care_from_gain(&a, &b, &q, &r, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn min_eigenvalue_and_hurwitz() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, -0.25, 1.0]));
        assert_relative_eq!(min_eigenvalue(&m), -0.25, epsilon = 1e-14);
        assert!(!is_psd(&m, 1e-10));
        assert!(is_hurwitz(&(-Matrix::identity(2, 2))));
        let rot = Matrix::from_row_slice(2, 2, &[0.1, -1.0, 1.0, 0.1]);
        assert!(!is_hurwitz(&rot));
        assert_relative_eq!(spectral_abscissa(&rot), 0.1, epsilon = 1e-12);
    }
}
