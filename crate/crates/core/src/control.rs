//! LQG feedback on the estimated syndromes.
//!
//! The Riccati equation `Ãᵀ P + P Ã + Q − P B̃ R⁻¹ B̃ᵀ P = 0` is diagonal in
//! the syndrome basis because `B̃ B̃ᵀ = I`, so every channel obeys the scalar
//! quadratic `−(ν+Γ) p + q − p²/r = 0` and `P = r·diag(f_i)` with
//! `f_i = −(ν+Γ)/2 + √((ν+Γ)²/4 + q_i/r)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Encoding, FilterMode, MemoryParams};
use crate::numerics::{solve_care, symmetrize, Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct LqgConfig {
    pub mode: FilterMode,
    /// Input penalty, `R = r I₆`.
    pub r: f64,
    pub qw: Matrix,
}

impl LqgConfig {
    pub fn new(mode: FilterMode, r: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::arg(format!("control penalty r must be positive and finite, got {r}")));
        }
        Ok(LqgConfig { mode, r, qw: syndrome_weights(mode) })
    }
}

/// `diag{9, 3, 3}` for S1 and `diag{3, 3}` for S2.
///
/// With these weights `sᵀ Q s` is the sum of squared pairwise position
/// differences, plus `3 (p₁+p₂+p₃)²` in mode S1.
pub fn syndrome_weights(mode: FilterMode) -> Matrix {
    match mode {
        FilterMode::S1 => Matrix::from_diagonal(&Vector::from_vec(vec![9.0, 3.0, 3.0])),
        FilterMode::S2 => Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 3.0])),
    }
}

/// Stationary optimal feedback `u = F π(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    pub mode: FilterMode,
    pub r: f64,
    pub p: Matrix,
    /// `F = −R⁻¹ B̃ᵀ P`, 6×m.
    pub fgain: Matrix,
    pub f1: f64,
    pub f2: f64,
    pub btil: Matrix,
}

impl Gains {
    /// Feedback switched off; used for uncontrolled baselines.
    pub fn disabled(mode: FilterMode, enc: &Encoding) -> Self {
        let m = mode.dim();
        Gains {
            mode,
            r: f64::INFINITY,
            p: Matrix::zeros(m, m),
            fgain: Matrix::zeros(6, m),
            f1: 0.0,
            f2: 0.0,
            btil: enc.btil(mode).clone(),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.r.is_finite()
    }

    /// Coefficient of the pairwise position-difference feedback, `f₂/3`.
    pub fn lambda(&self) -> f64 {
        self.f2 / 3.0
    }
}

/// Positive root of `−(ν+Γ) f + q/r − f² = 0`, evaluated without cancellation.
pub fn closed_form_rate(total_rate: f64, q: f64, r: f64) -> f64 {
    let half = total_rate / 2.0;
    let disc = (half * half + q / r).sqrt();
    (q / r) / (half + disc)
}

pub fn lqg_gains(cfg: &LqgConfig, params: &MemoryParams, enc: &Encoding) -> Result<Gains> {
    if !(cfg.r > 0.0) {
        return Err(Error::arg("control penalty r must be positive"));
    }
    let m = cfg.mode.dim();
    if cfg.qw.shape() != (m, m) {
        return Err(Error::arg("weight matrix does not match filter mode"));
    }
    let btil = enc.btil(cfg.mode).clone();
    let a_tilde = Matrix::identity(m, m) * (-params.total_rate() / 2.0);
    let r_mat = Matrix::identity(6, 6) * cfg.r;
    let p = symmetrize(&solve_care(&a_tilde, &btil, &cfg.qw, &r_mat)?);
    let fgain = -btil.transpose() * &p / cfg.r;
    let rate = params.total_rate();
    Ok(Gains {
        mode: cfg.mode,
        r: cfg.r,
        p,
        fgain,
        f1: closed_form_rate(rate, 9.0, cfg.r),
        f2: closed_form_rate(rate, 3.0, cfg.r),
        btil,
    })
}

/// `r · diag(f_i)` for the configured weights.
pub fn closed_form_p(cfg: &LqgConfig, params: &MemoryParams) -> Matrix {
    let rate = params.total_rate();
    Matrix::from_diagonal(&cfg.qw.diagonal().map(|q| cfg.r * closed_form_rate(rate, q, cfg.r)))
}

pub fn control_input(g: &Gains, pi_s: &Vector) -> Vector {
    &g.fgain * pi_s
}

/// Stationary cost per unit time `E[ŝᵀ Q ŝ] + E[uᵀ R u]`.
///
/// `vz` and `mean_z` are the stationary covariance and mean of `(x, π(s))`.
pub fn cost_rate(vz: &Matrix, mean_z: &Vector, g: &Gains, cfg: &LqgConfig) -> Result<CostBreakdown> {
    let m = cfg.mode.dim();
    if vz.shape() != (6 + m, 6 + m) || mean_z.len() != 6 + m {
        return Err(Error::arg("joint covariance does not match filter mode"));
    }
    let second = vz + mean_z * mean_z.transpose();
    let sx = &g.btil * second.view((0, 0), (6, 6)) * g.btil.transpose();
    let syndrome = (&cfg.qw * sx).trace();
    let control = if g.is_enabled() {
        let su = &g.fgain * second.view((6, 6), (m, m)) * g.fgain.transpose();
        cfg.r * su.trace()
    } else {
        0.0
    };
    Ok(CostBreakdown { syndrome, control, total: syndrome + control })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub syndrome: f64,
    pub control: f64,
    pub total: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::care_residual;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn enc() -> Encoding {
        Encoding::new(1.0).unwrap()
    }

    fn pairwise_q(x: &Vector) -> f64 {
        let q = [x[0], x[2], x[4]];
        (q[0] - q[1]).powi(2) + (q[1] - q[2]).powi(2) + (q[2] - q[0]).powi(2)
    }

    #[test]
    fn weight_expansion_on_unit_vector() {
        let e = enc();
        let x = Vector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let s = e.btil(FilterMode::S1) * &x;
        assert_relative_eq!((s.transpose() * syndrome_weights(FilterMode::S1) * &s)[(0, 0)], 2.0, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn weight_expansions(v in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let e = enc();
            let x = Vector::from_vec(v);
            let s2 = e.btil(FilterMode::S2) * &x;
            let q2 = (s2.transpose() * syndrome_weights(FilterMode::S2) * &s2)[(0, 0)];
            prop_assert!((q2 - pairwise_q(&x)).abs() < 1e-10);
            let s1 = e.btil(FilterMode::S1) * &x;
            let q1 = (s1.transpose() * syndrome_weights(FilterMode::S1) * &s1)[(0, 0)];
            let psum = x[1] + x[3] + x[5];
            prop_assert!((q1 - q2 - 3.0 * psum * psum).abs() < 1e-10);
        }

        #[test]
        fn feedback_has_sign_function_structure(v in proptest::collection::vec(-5.0f64..5.0, 6), log_r in -12.0f64..0.0) {
            let e = enc();
            let params = MemoryParams::new(3.0, 0.5, 10.0).unwrap();
            let cfg = LqgConfig::new(FilterMode::S1, 10f64.powf(log_r)).unwrap();
            let g = lqg_gains(&cfg, &params, &e).unwrap();
            let pi_x = Vector::from_vec(v);
            let u = control_input(&g, &(e.btil(FilterMode::S1) * &pi_x));
            let q = [pi_x[0], pi_x[2], pi_x[4]];
            let psum = pi_x[1] + pi_x[3] + pi_x[5];
            let lam = g.lambda();
            for i in 0..3 {
                let j = (i + 1) % 3;
                let k = (i + 2) % 3;
                let expect_q = lam * ((q[j] - q[i]) + (q[k] - q[i]));
                let scale = 1.0 + expect_q.abs() + lam * 10.0;
                prop_assert!((u[2 * i] - expect_q).abs() < 1e-9 * scale);
                let expect_p = -g.f1 / 3.0 * psum;
                prop_assert!((u[2 * i + 1] - expect_p).abs() < 1e-9 * (1.0 + g.f1 * 10.0));
            }
        }
    }

    #[test]
    fn unit_rate_example() {
        assert_relative_eq!(closed_form_rate(2.0, 3.0, 3.0), 2f64.sqrt() - 1.0, epsilon = 1e-15);
    }

    #[test]
    fn care_matches_closed_form_across_penalties() {
        let params = MemoryParams::reference();
        let e = enc();
        for mode in [FilterMode::S1, FilterMode::S2] {
            for r in [1e-3, 1e-6, 1e-9, 1e-12, 1e-15] {
                let cfg = LqgConfig::new(mode, r).unwrap();
                let g = lqg_gains(&cfg, &params, &e).unwrap();
                let p_closed = closed_form_p(&cfg, &params);
                assert!((&g.p - &p_closed).norm() <= 1e-8 * p_closed.norm(), "mode {mode} r {r}");
                let fdiag = p_closed.diagonal() / r;
                let f_closed = -g.btil.transpose() * Matrix::from_diagonal(&fdiag);
                assert!((&g.fgain - &f_closed).norm() <= 1e-8 * f_closed.norm());
                let a = Matrix::identity(mode.dim(), mode.dim()) * (-params.total_rate() / 2.0);
                let res = care_residual(&a, &(Matrix::identity(mode.dim(), mode.dim()) / r), &cfg.qw, &g.p);
                assert!(res.norm() < 1e-8 * cfg.qw.norm());
                assert!(g.f1 >= g.f2 && g.f2 > 0.0);
            }
        }
    }

    #[test]
    fn reference_penalty_rate() {
        let params = MemoryParams::reference();
        let rate = params.total_rate();
        let f2 = -rate / 2.0 + (rate * rate / 4.0 + 3e9).sqrt();
        assert_relative_eq!(closed_form_rate(rate, 3.0, 1e-9), f2, max_relative = 1e-9);
    }

    #[test]
    fn feedback_vanishes_as_penalty_grows() {
        let params = MemoryParams::new(1.0, 1.0, 1.0).unwrap();
        let cfg = LqgConfig::new(FilterMode::S1, 1e12).unwrap();
        let g = lqg_gains(&cfg, &params, &enc()).unwrap();
        assert!(g.fgain.norm() < 1e-11 && g.f1 < 1e-11);
        assert_eq!(Gains::disabled(FilterMode::S2, &enc()).fgain.norm(), 0.0);
    }

    #[test]
    fn codespace_is_not_corrected() {
        let params = MemoryParams::new(1.0, 1.0, 1.0).unwrap();
        let e = enc();
        for mode in [FilterMode::S1, FilterMode::S2] {
            let g = lqg_gains(&LqgConfig::new(mode, 1e-4).unwrap(), &params, &e).unwrap();
            assert_eq!(control_input(&g, &Vector::zeros(mode.dim())), Vector::zeros(6));
            let shift = Vector::from_vec(vec![2.0, 0.0, 2.0, 0.0, 2.0, 0.0]);
            assert!((&g.fgain * e.btil(mode) * shift).norm() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_positive_penalty() {
        assert!(LqgConfig::new(FilterMode::S1, 0.0).is_err());
        assert!(LqgConfig::new(FilterMode::S1, -1.0).is_err());
        assert!(LqgConfig::new(FilterMode::S1, f64::NAN).is_err());
    }

    #[test]
    fn cost_without_control_is_syndrome_variance() {
        let e = enc();
        let g = Gains::disabled(FilterMode::S2, &e);
        let cfg = LqgConfig::new(FilterMode::S2, 1.0).unwrap();
        let vz = Matrix::identity(8, 8) * 0.5;
        let c = cost_rate(&vz, &Vector::zeros(8), &g, &cfg).unwrap();
        // Each of the three pairwise differences has variance 1.
        assert_relative_eq!(c.total, 3.0, epsilon = 1e-12);
        assert_eq!(c.control, 0.0);
    }
}
