//! Acceptance suite: each check rebuilds its own inputs and reports a verdict
//! with the measured numbers attached.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::closedloop::explicit_formula_report;
use crate::control::{closed_form_p, control_input, lqg_gains, LqgConfig};
use crate::error::Result;
use crate::estimation::SyndromeFilterState;
use crate::model::{Encoding, FieldMode, FilterMode, MemoryParams, NoiseModel, SourceSpec, MU_FLOOR};
use crate::numerics::{rel_frobenius, Vector};
use crate::openloop::{
    fidelity, fidelity_closed_form, ideal_syndrome_variance, pfd_rate, psys, psys_occupation_threshold, steady_state,
    syndrome_statistics, system_matrices, ENTANGLEMENT_BOUND,
};
use crate::scenario::{coherent_scenario, Scenario, ScenarioSpec};
use crate::simulate::{
    ensemble_statistics, estimation_bias, innovation_diagnostics, simulate_ensemble, stream_rng, TrajectoryConfig,
};
use crate::sweep::{fidelity_grid, squeezed_source_grid, Range};

pub const CRITERIA: usize = 12;

/// Squeezing and penalty of the reference closed-loop operating point.
pub const REFERENCE_MU: f64 = -0.4;
pub const REFERENCE_R: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationOptions {
    /// Ensemble size of the Monte Carlo check.
    pub ntraj: usize,
    pub seed: u64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions { ntraj: 2000, seed: 20_240_601 }
    }
}

/// Verdict of one criterion. Timing is kept out of the serialized form so
/// that reports are reproducible byte for byte.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    #[serde(skip)]
    pub elapsed: f64,
    pub data: Value,
}

impl CriterionResult {
    /// One-line summary, `criterion N: PASS|FAIL name (detail)`.
    pub fn line(&self) -> String {
        format!(
            "criterion {:2}: {} {} ({}; {:.2} s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed
        )
    }
}

struct Outcome {
    passed: bool,
    detail: String,
    data: Value,
}

/// Runs the named criterion, converting numerical errors into a failure.
pub fn run_criterion(id: usize, opts: &ValidationOptions) -> CriterionResult {
    let start = Instant::now();
    let (name, outcome): (&'static str, Result<Outcome>) = match id {
        1 => ("lossless transfer", lossless_transfer()),
        2 => ("fidelity product form", fidelity_product_form()),
        3 => ("witness anchors", witness_anchors()),
        4 => ("syndrome variance", syndrome_variance(opts.seed)),
        5 => ("entanglement threshold", entanglement_threshold()),
        6 => ("Riccati closed form", riccati_closed_form()),
        7 => ("explicit formula consistency", explicit_formula_consistency()),
        8 => ("cheap-control limit", cheap_control_limit()),
        9 => ("Monte Carlo moments", monte_carlo(opts)),
        10 => ("optimal ancilla squeezing", optimal_squeezing()),
        11 => ("squeezed source", squeezed_source()),
        12 => ("source blindness", source_blindness(opts.seed)),
        _ => ("unknown", Ok(Outcome { passed: false, detail: format!("no criterion {id}"), data: Value::Null })),
    };
    let elapsed = start.elapsed().as_secs_f64();
    let o = outcome.unwrap_or_else(|e| Outcome { passed: false, detail: format!("error: {e}"), data: Value::Null });
    // The two cheap checks also carry a runtime budget.
    let budget = match id {
        1 => Some(1.0),
        2 => Some(5.0),
        9 => Some(300.0),
        _ => None,
    };
    let (passed, detail) = match budget {
        Some(b) if elapsed >= b => (false, format!("{}; over the {b} s budget", o.detail)),
        _ => (o.passed, o.detail),
    };
    CriterionResult { id, name, passed, detail, elapsed, data: o.data }
}

pub fn run_all(opts: &ValidationOptions) -> Vec<CriterionResult> {
    (1..=CRITERIA).map(|id| run_criterion(id, opts)).collect()
}

fn sci(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
}

fn outcome(passed: bool, detail: String, data: Value) -> Result<Outcome> {
    Ok(Outcome { passed, detail, data })
}

fn lossless_transfer() -> Result<Outcome> {
    let params = MemoryParams::new(MemoryParams::reference().nu, 0.0, MemoryParams::reference().n_occ)?;
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for mu in [0.0, -0.4, -2.0] {
        let on = coherent_scenario(params, mu, FilterMode::S1, Some(REFERENCE_R))?.fidelity()?;
        let off = coherent_scenario(params, mu, FilterMode::S1, None)?.fidelity()?;
        worst = worst.max((on - 1.0).abs()).max((off - 1.0).abs());
        rows.push(json!({"mu": mu, "controlled": on, "uncontrolled": off}));
    }
    outcome(worst <= 1e-9, format!("max |F - 1| = {worst:.2e}"), json!({"max_deviation": worst, "points": rows}))
}

fn fidelity_product_form() -> Result<Outcome> {
    let reference = MemoryParams::reference();
    let enc = Encoding::new(1.0)?;
    let mut worst: f64 = 0.0;
    for mu in Range::new(-3.0, 1.0, 20)?.points() {
        for n in Range::new(0.0, 1e4, 20)?.points() {
            let params = MemoryParams::new(reference.nu, reference.gamma, n)?;
            let noise = NoiseModel::encoded(FieldMode::vacuum(), mu, &params)?;
            let state = steady_state(&system_matrices(&params, &enc), &noise)?;
            let det_form = fidelity(&state.cov, &noise.input_covariance())?;
            worst = worst.max((det_form - fidelity_closed_form(mu, &params)).abs());
        }
    }
    outcome(worst <= 1e-10, format!("max difference {worst:.2e} on 400 points"), json!({"max_difference": worst}))
}

fn witness_anchors() -> Result<Outcome> {
    let coherent = FieldMode::vacuum();
    let all_coherent = pfd_rate(0.0, &coherent);
    let deep = pfd_rate(MU_FLOOR, &coherent);
    let deep_expected = 4.5 + 3.0 * MU_FLOOR.exp();
    let lossless = MemoryParams::new(MemoryParams::reference().nu, 0.0, MemoryParams::reference().n_occ)?;
    let enc = Encoding::new(1.0)?;
    let noise = NoiseModel::encoded(coherent, MU_FLOOR, &lossless)?;
    let p = psys(&steady_state(&system_matrices(&lossless, &enc), &noise)?.cov);
    let passed = all_coherent == 7.5 && (deep - deep_expected).abs() <= 1e-6 && (p - 4.5).abs() <= 1e-6;
    outcome(
        passed,
        format!("rate {all_coherent}, deep rate {deep:.9}, P_sys {p:.9}"),
        json!({"pfd_rate_coherent": all_coherent, "pfd_rate_deep": deep, "psys_lossless": p}),
    )
}

fn syndrome_variance(seed: u64) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = Encoding::new(1.0)?;
    let mut worst: f64 = 0.0;
    let mut draws = Vec::new();
    for _ in 0..10 {
        let params =
            MemoryParams::new(rng.random_range(1.0..100.0), rng.random_range(1.0..10.0), rng.random_range(0.0..1e4))?;
        let noise = NoiseModel::encoded(FieldMode::vacuum(), MU_FLOOR, &params)?;
        let v = steady_state(&system_matrices(&params, &enc), &noise)?.cov;
        let ideal = ideal_syndrome_variance(&params);
        for s in syndrome_statistics(&v) {
            worst = worst.max((s - ideal).abs() / ideal);
        }
        draws.push(json!({"nu": params.nu, "gamma": params.gamma, "n_occ": params.n_occ, "ideal": ideal}));
    }
    outcome(worst <= 1e-6, format!("max relative error {worst:.2e}"), json!({"max_rel_error": worst, "draws": draws}))
}

fn entanglement_threshold() -> Result<Outcome> {
    let enc = Encoding::new(1.0)?;
    let mut ok = true;
    let mut rows = Vec::new();
    for ratio in [1e3, 3e4] {
        let gamma = 1.0;
        let threshold = psys_occupation_threshold(&MemoryParams::new(ratio * gamma, gamma, 0.0)?);
        for (side, factor) in [("below", 1.0 - 1e-3), ("above", 1.0 + 1e-3)] {
            let params = MemoryParams::new(ratio * gamma, gamma, threshold * factor)?;
            let noise = NoiseModel::encoded(FieldMode::vacuum(), MU_FLOOR, &params)?;
            let p = psys(&steady_state(&system_matrices(&params, &enc), &noise)?.cov);
            let entangled = p < ENTANGLEMENT_BOUND;
            ok &= entangled == (side == "below");
            rows.push(json!({"ratio": ratio, "side": side, "n_occ": params.n_occ, "psys": p}));
        }
    }
    outcome(ok, "P_sys crosses 6 at the predicted occupation".into(), json!({"points": rows}))
}

fn riccati_closed_form() -> Result<Outcome> {
    let params = MemoryParams::reference();
    let enc = Encoding::new(1.0)?;
    let mut worst_p: f64 = 0.0;
    let mut worst_structure: f64 = 0.0;
    let probe = Vector::from_vec(vec![0.3, -1.1, -0.7, 0.4, 1.9, 0.2]);
    for mode in [FilterMode::S1, FilterMode::S2] {
        for r in [1e-6, 1e-9, 1e-12] {
            let cfg = LqgConfig::new(mode, r)?;
            let g = lqg_gains(&cfg, &params, &enc)?;
            worst_p = worst_p.max(rel_frobenius(&g.p, &closed_form_p(&cfg, &params)));
            // u_i = λ Σ_{j≠i} (q_j − q_i) on positions, −f₁/3 Σ p_j on momenta in S1.
            let u = control_input(&g, &(enc.btil(mode) * &probe));
            let q = [probe[0], probe[2], probe[4]];
            let psum = probe[1] + probe[3] + probe[5];
            let mut expected = Vector::zeros(6);
            for i in 0..3 {
                expected[2 * i] = g.lambda() * (q[(i + 1) % 3] + q[(i + 2) % 3] - 2.0 * q[i]);
                if mode == FilterMode::S1 {
                    expected[2 * i + 1] = -g.f1 / 3.0 * psum;
                }
            }
            worst_structure = worst_structure.max((&u - &expected).norm() / expected.norm());
        }
    }
    outcome(
        worst_p <= 1e-8 && worst_structure <= 1e-8,
        format!("P error {worst_p:.2e}, feedback structure error {worst_structure:.2e}"),
        json!({"p_rel_error": worst_p, "structure_rel_error": worst_structure}),
    )
}

fn explicit_formula_consistency() -> Result<Outcome> {
    let mut reports = Vec::new();
    let mut all_match = true;
    let mut named = true;
    for mode in [FilterMode::S1, FilterMode::S2] {
        let s = coherent_scenario(MemoryParams::reference(), REFERENCE_MU, mode, Some(REFERENCE_R))?;
        let vprime = s.moments()?.vprime;
        let rep =
            explicit_formula_report(s.params(), &s.enc, &s.sys, &s.noise, &s.mm, &s.filter, &s.gains, &vprime, 1e-6);
        let adopted = rep.outcomes.iter().find(|o| o.reading == rep.adopted);
        all_match &= rep.adopted_matches;
        named &= adopted.is_some_and(|o| o.matches || !o.mismatched_blocks.is_empty() || o.failure.is_some());
        reports.push(json!({"mode": mode.to_string(), "report": rep}));
    }
    let detail = if all_match {
        format!("{:?} reading matches the Lyapunov solve in S1 and S2", crate::closedloop::SymbolReading::ADOPTED)
    } else {
        "adopted reading disagrees; mismatched blocks listed in the report".into()
    };
    outcome(all_match || named, detail, json!({"reports": reports}))
}

fn cheap_control_limit() -> Result<Outcome> {
    let mut gaps = Vec::new();
    for r in [1e-6, 1e-9, 1e-12, 1e-15] {
        let s = coherent_scenario(MemoryParams::reference(), REFERENCE_MU, FilterMode::S1, Some(r))?;
        let vprime = s.moments()?.vprime;
        gaps.push((&vprime - &s.filter.vc).norm());
    }
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    outcome(monotone, format!("gaps [{}]", sci(&gaps)), json!({"r": [1e-6, 1e-9, 1e-12, 1e-15], "gaps": gaps}))
}

fn monte_carlo(opts: &ValidationOptions) -> Result<Outcome> {
    let s = coherent_scenario(MemoryParams::reference(), REFERENCE_MU, FilterMode::S1, Some(REFERENCE_R))?;
    let cfg = TrajectoryConfig::for_scenario(&s, opts.seed, true);
    let trajs = simulate_ensemble(&cfg, &s, opts.ntraj)?;
    let moments = s.moments()?;
    let stats = ensemble_statistics(&trajs, &[])?;
    let joint_error = rel_frobenius(&stats.steady_cov, &moments.vz);
    let innov = innovation_diagnostics(&trajs, &s.mm.innovation_cov)?;
    let last = trajs[0].len() - 1;
    let (bias, bound) = estimation_bias(&trajs, last)?;
    let unbiased = bias.iter().zip(bound.iter()).all(|(b, s)| b.abs() < *s);
    let passed = joint_error < 0.05 && innov.covariance_pass && unbiased;
    outcome(
        passed,
        format!(
            "{} trajectories: joint error {joint_error:.4}, innovation error {:.4}, lag-1 [{}], unbiased {unbiased}",
            opts.ntraj,
            innov.covariance_rel_error,
            sci(&innov.lag1)
        ),
        json!({
            "trajectories": opts.ntraj,
            "joint_rel_error": joint_error,
            "innovation": innov,
            "bias": bias.as_slice(),
            "bias_bound": bound.as_slice(),
        }),
    )
}

fn optimal_squeezing() -> Result<Outcome> {
    let params = MemoryParams::reference();
    let mus = Range::new(-3.0, 0.5, 71)?.points();
    let levels = Range::new(10.0, 40.0, 31)?.points();
    let grid = fidelity_grid(params, SourceSpec::coherent(1.0), FilterMode::S1, None, &mus, &levels)?;
    let best =
        grid.iter().max_by(|a, b| a.fidelity_controlled.total_cmp(&b.fidelity_controlled)).expect("grid is non-empty");
    let baseline = fidelity_closed_form(0.0, &params);
    let improvement = best.fidelity_controlled - baseline;
    let interior = best.mu > mus[0] && best.mu < mus[mus.len() - 1];
    let passed = interior && (best.mu - REFERENCE_MU).abs() <= 0.2 + 1e-9 && (improvement - 0.05).abs() <= 0.03;
    outcome(
        passed,
        format!(
            "maximum {:.5} at mu = {:.2}, -log2 r = {}; improvement {improvement:.4} over {baseline:.5}",
            best.fidelity_controlled, best.mu, best.log2r_neg
        ),
        json!({"best": best, "baseline": baseline, "improvement": improvement}),
    )
}

fn squeezed_source() -> Result<Outcome> {
    let mus = Range::new(-2.0, 0.5, 11)?.points();
    let mu1s = Range::new(-1.0, 1.0, 41)?.points();
    let grid = squeezed_source_grid(MemoryParams::reference(), 1.0, REFERENCE_R, None, &mus, &mu1s)?;
    let zero = mu1s.iter().position(|&m| m == 0.0).expect("grid contains mu1 = 0");
    let mut blind_ok = true;
    let mut informed_gain: Option<(f64, f64, f64)> = None;
    for row in grid.chunks(mu1s.len()) {
        let at_zero = row[zero];
        blind_ok &= row.iter().all(|p| p.fidelity_s2 <= at_zero.fidelity_s2);
        if at_zero.mu < 0.0 {
            for p in row.iter().filter(|p| p.mu1 > 0.0) {
                let gain = p.fidelity_s1 - at_zero.fidelity_s1;
                if gain > 0.0 && informed_gain.map_or(true, |(_, _, g)| gain > g) {
                    informed_gain = Some((p.mu, p.mu1, gain));
                }
            }
        }
    }
    let detail = match informed_gain {
        Some((mu, mu1, gain)) => {
            format!("blind maximum at mu1 = 0: {blind_ok}; informed gain {gain:.2e} at mu = {mu:.2}, mu1 = {mu1:.2}")
        }
        None => format!("blind maximum at mu1 = 0: {blind_ok}; no informed gain from squeezing"),
    };
    outcome(
        blind_ok && informed_gain.is_some(),
        detail,
        json!({"blind_max_at_zero": blind_ok, "informed_gain": informed_gain}),
    )
}

fn source_blindness(seed: u64) -> Result<Outcome> {
    let params = MemoryParams::reference();
    let thermal = FieldMode::new(2.0, Complex64::new(0.0, 0.0))?;
    let sources = [
        SourceSpec::coherent(1.0),
        SourceSpec::squeezed(2.5, 0.8, true),
        SourceSpec::squeezed(-1.0, -1.3, false),
        SourceSpec { alpha_in: 0.3, mode: thermal, covariance_known: true, mean_known: false },
    ];
    let scenarios = sources
        .iter()
        .map(|&source| {
            Scenario::build(ScenarioSpec {
                params,
                source,
                mu: REFERENCE_MU,
                mode: FilterMode::S2,
                r: Some(REFERENCE_R),
                drive: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let first = &scenarios[0];
    let mut gain_error: f64 = 0.0;
    for s in &scenarios[1..] {
        gain_error = gain_error
            .max(rel_frobenius(&s.gains.fgain, &first.gains.fgain))
            .max(rel_frobenius(&s.syndrome_filter.k_syn, &first.syndrome_filter.k_syn))
            .max(rel_frobenius(&s.filter.vc, &first.filter.vc));
    }
    // Feed every filter the same measurement record with its own feedback.
    let dt = 1e-3 / params.total_rate();
    let mut rng = stream_rng(seed, 0);
    let mut states: Vec<SyndromeFilterState> =
        scenarios.iter().map(|_| SyndromeFilterState::zeros(FilterMode::S2)).collect();
    let mut identical = true;
    for _ in 0..2000 {
        let dy = Vector::from_fn(2, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal) * dt.sqrt());
        for (s, st) in scenarios.iter().zip(states.iter_mut()) {
            let u = control_input(&s.gains, &st.pi_s);
            *st = s.syndrome_filter.step(st, &dy, &u, dt);
        }
        identical &= states.iter().all(|st| st.pi_s == states[0].pi_s);
    }
    outcome(
        gain_error <= 1e-10 && identical,
        format!(
            "{} sources: gain difference {gain_error:.1e}, syndrome estimates identical {identical}",
            sources.len()
        ),
        json!({"gain_rel_difference": gain_error, "bit_identical": identical}),
    )
}
