//! Experiment dispatch and artifact writing.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use qec_memory::control::cost_rate;
use qec_memory::model::{MemoryParams, SourceSpec};
use qec_memory::openloop::{open_loop_report, OpenLoopReport};
use qec_memory::scenario::{Scenario, ScenarioSpec};
use qec_memory::simulate::{simulate_trajectory, write_trajectory_file, Trajectory, TrajectoryConfig};
use qec_memory::sweep::{fidelity_grid, squeezed_source_grid};
use qec_memory::validation::{run_all, CriterionResult, ValidationOptions};
use qec_memory::Result;

use crate::config::{ExperimentSpec, Kind};

/// What an experiment produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    /// `false` only when a validation criterion failed.
    pub passed: bool,
    /// Human-readable lines for the terminal.
    pub messages: Vec<String>,
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunSummary> {
    info!("running {} with seed {}", spec.kind, spec.seed);
    match spec.kind {
        Kind::Steady => steady(spec),
        Kind::SweepFidelity => sweep_fidelity(spec),
        Kind::SweepSqueezed => sweep_squeezed(spec),
        Kind::Trajectory => trajectory(spec),
        Kind::Validate => validate(spec),
    }
}

fn scenario(spec: &ExperimentSpec, r: Option<f64>) -> Result<Scenario> {
    Scenario::build(ScenarioSpec {
        params: spec.params,
        source: SourceSpec::squeezed(spec.alpha_in, spec.mu1.start, spec.source_known),
        mu: spec.mu.start,
        mode: spec.filter,
        r,
        drive: Some(spec.drive_vector()),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_header<W: Write>(out: &mut W, spec: &ExperimentSpec) -> Result<()> {
    for (k, v) in spec.header() {
        writeln!(out, "# {k} = {v}")?;
    }
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, spec: &ExperimentSpec, rows: &[T]) -> Result<()> {
    let mut out = create(path)?;
    write_header(&mut out, spec)?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Provenance {
    program: String,
    schema: u32,
}

fn provenance() -> Provenance {
    Provenance { program: format!("qecmem {}", env!("CARGO_PKG_VERSION")), schema: crate::SCHEMA_VERSION }
}

#[derive(Debug, Serialize)]
pub struct ClosedLoopSummary {
    pub r: f64,
    pub f1: f64,
    pub f2: f64,
    pub lambda: f64,
    pub fidelity: f64,
    pub cost_syndrome: f64,
    pub cost_control: f64,
}

#[derive(Debug, Serialize)]
struct SteadyReport<'a> {
    #[serde(flatten)]
    provenance: Provenance,
    spec: &'a ExperimentSpec,
    params: MemoryParams,
    open_loop: OpenLoopReport,
    uncontrolled_fidelity: f64,
    controlled: ClosedLoopSummary,
}

fn steady(spec: &ExperimentSpec) -> Result<RunSummary> {
    let s = scenario(spec, Some(spec.r))?;
    let open_loop = open_loop_report(s.params(), &s.spec.source.mode, spec.mu.start, spec.alpha_in, &s.sys, &s.noise)?;
    let uncontrolled_fidelity = s.uncontrolled()?.fidelity()?;
    let moments = s.moments()?;
    let cfg = s.lqg.as_ref().expect("steady scenario has feedback");
    let cost = cost_rate(&moments.vz, &moments.mean_z, &s.gains, cfg)?;
    let controlled = ClosedLoopSummary {
        r: spec.r,
        f1: s.gains.f1,
        f2: s.gains.f2,
        lambda: s.gains.lambda(),
        fidelity: s.fidelity()?,
        cost_syndrome: cost.syndrome,
        cost_control: cost.control,
    };
    let report = SteadyReport {
        provenance: provenance(),
        spec,
        params: *s.params(),
        open_loop,
        uncontrolled_fidelity,
        controlled,
    };
    write_json(&spec.out, &report)?;
    Ok(RunSummary {
        files: vec![spec.out.clone()],
        passed: true,
        messages: vec![format!(
            "fidelity {:.6} controlled, {:.6} uncontrolled; P_sys {:.4}",
            report.controlled.fidelity, uncontrolled_fidelity, report.open_loop.psys
        )],
    })
}

fn sweep_fidelity(spec: &ExperimentSpec) -> Result<RunSummary> {
    let source = SourceSpec::squeezed(spec.alpha_in, spec.mu1.start, spec.source_known);
    let grid = fidelity_grid(
        spec.params,
        source,
        spec.filter,
        Some(spec.drive_vector()),
        &spec.mu.points(),
        &spec.log2r.points(),
    )?;
    write_csv(&spec.out, spec, &grid)?;
    let best = grid.iter().max_by(|a, b| a.fidelity_controlled.total_cmp(&b.fidelity_controlled));
    let messages = best
        .map(|p| {
            format!(
                "{} points; maximum {:.6} at mu = {}, -log2 r = {}",
                grid.len(),
                p.fidelity_controlled,
                p.mu,
                p.log2r_neg
            )
        })
        .into_iter()
        .collect();
    Ok(RunSummary { files: vec![spec.out.clone()], passed: true, messages })
}

fn sweep_squeezed(spec: &ExperimentSpec) -> Result<RunSummary> {
    let grid = squeezed_source_grid(
        spec.params,
        spec.alpha_in,
        spec.r,
        Some(spec.drive_vector()),
        &spec.mu.points(),
        &spec.mu1.points(),
    )?;
    write_csv(&spec.out, spec, &grid)?;
    Ok(RunSummary { files: vec![spec.out.clone()], passed: true, messages: vec![format!("{} points", grid.len())] })
}

/// Sample variance of the last syndrome estimate, a position difference in
/// both modes, over the final 80% of a trace.
fn syndrome_trace_variance(t: &Trajectory) -> f64 {
    let tail: Vec<f64> = t.pi_s[t.len() / 5..].iter().map(|v| v[v.len() - 1]).collect();
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)
}

fn trajectory(spec: &ExperimentSpec) -> Result<RunSummary> {
    let s = scenario(spec, Some(spec.r))?;
    fs::create_dir_all(&spec.out)?;
    let mut files = Vec::new();
    let mut variances = Vec::new();
    for &control in &spec.control {
        let mut cfg = TrajectoryConfig::for_scenario(&s, spec.seed, control);
        if let Some(dt) = spec.dt {
            cfg.dt = dt;
        }
        if let Some(duration) = spec.duration {
            cfg.duration = duration;
        }
        // About 3000 rows, enough to plot the transient.
        cfg.record_stride = (cfg.steps() / 3000).max(1);
        let traj = simulate_trajectory(&cfg, &s)?;
        let label = if control { "on" } else { "off" };
        let path = spec.out.join(format!("trajectory_control_{label}.csv"));
        let mut meta = spec.header();
        meta.push(("control".into(), label.into()));
        meta.push(("dt_used".into(), format!("{:?}", cfg.dt)));
        meta.push(("duration_used".into(), format!("{:?}", cfg.duration)));
        meta.push(("record_stride".into(), cfg.record_stride.to_string()));
        write_trajectory_file(&path, &traj, &meta)?;
        variances.push((label, syndrome_trace_variance(&traj)));
        files.push(path);
    }
    let mut messages: Vec<String> =
        variances.iter().map(|(label, v)| format!("control {label}: syndrome trace variance {v:.4e}")).collect();
    if let (Some(on), Some(off)) = (variances.iter().find(|v| v.0 == "on"), variances.iter().find(|v| v.0 == "off")) {
        messages.push(format!("variance ratio on/off {:.4}", on.1 / off.1));
    }
    Ok(RunSummary { files, passed: true, messages })
}

#[derive(Debug, Serialize)]
struct ValidationReport<'a> {
    #[serde(flatten)]
    provenance: Provenance,
    options: ValidationOptions,
    passed: bool,
    criteria: &'a [CriterionResult],
}

fn validate(spec: &ExperimentSpec) -> Result<RunSummary> {
    let options = ValidationOptions { ntraj: spec.ntraj, seed: spec.seed };
    let results = run_all(&options);
    let passed = results.iter().all(|r| r.passed);
    write_json(&spec.out, &ValidationReport { provenance: provenance(), options, passed, criteria: &results })?;
    let mut messages: Vec<String> = results.iter().map(CriterionResult::line).collect();
    let failed = results.iter().filter(|r| !r.passed).count();
    messages.push(format!("{} of {} criteria passed", results.len() - failed, results.len()));
    Ok(RunSummary { files: vec![spec.out.clone()], passed, messages })
}
