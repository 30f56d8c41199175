//! Experiment configuration: a flat TOML file, overridden by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qec_memory::model::{thermal_occupation, FilterMode, MemoryParams, QUOTED_N_OCC};
use qec_memory::numerics::Vector;
use qec_memory::sweep::Range;
use qec_memory::validation::ValidationOptions;
use qec_memory::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Steady,
    SweepFidelity,
    SweepSqueezed,
    Trajectory,
    Validate,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Steady => "steady",
            Kind::SweepFidelity => "sweep-fidelity",
            Kind::SweepSqueezed => "sweep-squeezed",
            Kind::Trajectory => "trajectory",
            Kind::Validate => "validate",
        }
    }

    fn default_out(self) -> &'static str {
        match self {
            Kind::Steady => "steady.json",
            Kind::SweepFidelity => "sweep_fidelity.csv",
            Kind::SweepSqueezed => "sweep_squeezed.csv",
            Kind::Trajectory => "trajectory",
            Kind::Validate => "validation.json",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A number or a `start:stop:count` string.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum RangeValue {
    Number(f64),
    Text(String),
}

impl RangeValue {
    fn resolve(&self, key: &str) -> Result<Range> {
        match self {
            RangeValue::Number(v) => Ok(Range::single(*v)),
            RangeValue::Text(s) => s.parse().map_err(|e| Error::Config(format!("key `{key}`: {e}"))),
        }
    }
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub nu_hz: Option<f64>,
    pub gamma_hz: Option<f64>,
    pub n_occ: Option<f64>,
    pub temp_k: Option<f64>,
    pub omega_m_hz: Option<f64>,
    pub alpha_in: Option<f64>,
    /// Set to `false` for a source whose covariance the filter may not use.
    pub source_known: Option<bool>,
    pub mu: Option<RangeValue>,
    pub mu1: Option<RangeValue>,
    pub log2r: Option<RangeValue>,
    pub r: Option<f64>,
    pub filter_mode: Option<String>,
    pub drive: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub duration: Option<f64>,
    pub ntraj: Option<usize>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        match Self::parse(&text) {
            Err(Error::Config(msg)) => Err(Error::Config(format!("{}: {msg}", path.display()))),
            other => other,
        }
    }
}

/// Values given on the command line; these win over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mu: Option<Range>,
    pub mu1: Option<Range>,
    pub log2r: Option<Range>,
    pub r: Option<f64>,
    pub filter: Option<FilterMode>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub duration: Option<f64>,
    pub ntraj: Option<usize>,
    pub out: Option<PathBuf>,
    pub control: Vec<bool>,
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub kind: Kind,
    pub params: MemoryParams,
    pub alpha_in: f64,
    pub source_known: bool,
    pub mu: Range,
    pub mu1: Range,
    pub log2r: Range,
    pub r: f64,
    pub filter: FilterMode,
    pub drive: Vec<f64>,
    pub seed: u64,
    /// Seconds; `1e-3/(ν+Γ)` when unset.
    pub dt: Option<f64>,
    /// Seconds; `30/(ν+Γ)` when unset.
    pub duration: Option<f64>,
    pub ntraj: usize,
    pub out: PathBuf,
    /// Feedback settings to simulate, in order.
    pub control: Vec<bool>,
}

pub const DEFAULT_DRIVE: [f64; 6] = [100.0, 0.0, 100.0, 0.0, 100.0, 0.0];

fn default_mu(kind: Kind) -> Range {
    match kind {
        Kind::SweepFidelity => Range { start: -3.0, stop: 0.5, count: 71 },
        Kind::SweepSqueezed => Range { start: -2.0, stop: 0.5, count: 11 },
        _ => Range::single(-0.4),
    }
}

fn default_mu1(kind: Kind) -> Range {
    match kind {
        Kind::SweepSqueezed => Range { start: -1.0, stop: 1.0, count: 41 },
        _ => Range::single(0.0),
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("key `{key}` must be positive, got {v}")))
    }
}

fn single(key: &str, range: Range, kind: Kind) -> Result<Range> {
    if range.count == 1 {
        Ok(range)
    } else {
        Err(Error::Config(format!("key `{key}` must be a single value for {kind}")))
    }
}

impl ExperimentSpec {
    pub fn resolve(kind: Kind, file: &FileConfig, cli: &Overrides) -> Result<Self> {
        let reference = MemoryParams::reference();
        let nu_hz = file.nu_hz.map(|v| positive("nu_hz", v)).transpose()?;
        let gamma_hz = file.gamma_hz;
        if gamma_hz.is_some_and(|g| !(g >= 0.0 && g.is_finite())) {
            return Err(Error::Config("key `gamma_hz` must be non-negative".into()));
        }
        let n_occ = match (file.n_occ, file.temp_k, file.omega_m_hz) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(Error::Config("key `n_occ` conflicts with `temp_k`/`omega_m_hz`".into()));
            }
            (Some(n), None, None) => n,
            (None, Some(t), Some(w)) => {
                thermal_occupation(positive("temp_k", t)?, 2.0 * std::f64::consts::PI * positive("omega_m_hz", w)?)?
            }
            (None, Some(_), None) => return Err(Error::Config("key `temp_k` needs `omega_m_hz`".into())),
            (None, None, Some(_)) => return Err(Error::Config("key `omega_m_hz` needs `temp_k`".into())),
            (None, None, None) => QUOTED_N_OCC,
        };
        let two_pi = 2.0 * std::f64::consts::PI;
        let params = MemoryParams::new(
            nu_hz.map_or(reference.nu, |v| two_pi * v),
            gamma_hz.map_or(reference.gamma, |v| two_pi * v),
            n_occ,
        )
        .map_err(|e| Error::Config(e.to_string()))?;

        let range = |key: &str, cli: Option<Range>, file: &Option<RangeValue>, default: Range| -> Result<Range> {
            match (cli, file) {
                (Some(r), _) => Ok(r),
                (None, Some(v)) => v.resolve(key),
                (None, None) => Ok(default),
            }
        };
        let mut mu = range("mu", cli.mu, &file.mu, default_mu(kind))?;
        let mut mu1 = range("mu1", cli.mu1, &file.mu1, default_mu1(kind))?;
        let log2r = range("log2r", cli.log2r, &file.log2r, Range { start: 10.0, stop: 40.0, count: 31 })?;
        match kind {
            Kind::Steady | Kind::Trajectory => {
                mu = single("mu", mu, kind)?;
                mu1 = single("mu1", mu1, kind)?;
            }
            Kind::SweepFidelity | Kind::Validate => mu1 = single("mu1", mu1, kind)?,
            Kind::SweepSqueezed => {}
        }
        let r = match (cli.r, file.r) {
            (Some(r), _) | (None, Some(r)) => positive("r", r)?,
            (None, None) => 1e-9,
        };
        let filter = match (cli.filter, &file.filter_mode) {
            (Some(m), _) => m,
            (None, Some(s)) => s.parse().map_err(|e: Error| Error::Config(format!("key `filter_mode`: {e}")))?,
            (None, None) => FilterMode::S1,
        };
        let drive = file.drive.clone().unwrap_or_else(|| DEFAULT_DRIVE.to_vec());
        if drive.len() != 6 || drive.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("key `drive` must hold six finite numbers".into()));
        }
        let dt = cli.dt.or(file.dt).map(|v| positive("dt", v)).transpose()?;
        let duration = cli.duration.or(file.duration).map(|v| positive("duration", v)).transpose()?;
        let ntraj = cli.ntraj.or(file.ntraj).unwrap_or(2000);
        if ntraj == 0 {
            return Err(Error::Config("key `ntraj` must be at least 1".into()));
        }
        let alpha_in = file.alpha_in.unwrap_or(1.0);
        if !alpha_in.is_finite() {
            return Err(Error::Config("key `alpha_in` must be finite".into()));
        }
        let control = if cli.control.is_empty() { vec![true, false] } else { cli.control.clone() };
        Ok(ExperimentSpec {
            kind,
            params,
            alpha_in,
            source_known: file.source_known.unwrap_or(true),
            mu,
            mu1,
            log2r,
            r,
            filter,
            drive,
            seed: cli.seed.or(file.seed).unwrap_or(ValidationOptions::default().seed),
            dt,
            duration,
            ntraj,
            out: cli.out.clone().unwrap_or_else(|| PathBuf::from(kind.default_out())),
            control,
        })
    }

    pub fn drive_vector(&self) -> Vector {
        Vector::from_column_slice(&self.drive)
    }

    /// `key = value` lines recorded at the top of every output file.
    pub fn header(&self) -> Vec<(String, String)> {
        // Debug formatting of f64 is the shortest exact representation.
        let num = |v: f64| format!("{v:?}");
        let list = |v: &[f64]| v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(",");
        vec![
            ("program".into(), format!("qecmem {}", env!("CARGO_PKG_VERSION"))),
            ("schema".into(), crate::SCHEMA_VERSION.to_string()),
            ("kind".into(), self.kind.to_string()),
            ("nu".into(), num(self.params.nu)),
            ("gamma".into(), num(self.params.gamma)),
            ("n_occ".into(), num(self.params.n_occ)),
            ("alpha_in".into(), num(self.alpha_in)),
            ("source_known".into(), self.source_known.to_string()),
            ("mu".into(), self.mu.to_string()),
            ("mu1".into(), self.mu1.to_string()),
            ("log2r".into(), self.log2r.to_string()),
            ("r".into(), num(self.r)),
            ("filter".into(), self.filter.to_string()),
            ("drive".into(), list(&self.drive)),
            ("seed".into(), self.seed.to_string()),
            ("dt".into(), self.dt.map_or("default".into(), num)),
            ("duration".into(), self.duration.map_or("default".into(), num)),
            ("ntraj".into(), self.ntraj.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_configuration() {
        let spec = ExperimentSpec::resolve(Kind::Steady, &FileConfig::default(), &Overrides::default()).unwrap();
        assert_eq!(spec.params, MemoryParams::reference());
        assert_eq!(spec.mu, Range::single(-0.4));
        assert_eq!(spec.r, 1e-9);
        assert_eq!(spec.drive, DEFAULT_DRIVE.to_vec());
        assert_eq!(spec.control, vec![true, false]);
        assert_eq!(spec.out, PathBuf::from("steady.json"));
    }

    #[test]
    fn flags_override_file_values() {
        let file = FileConfig::parse("mu = \"-1:0:5\"\nr = 1e-6\nfilter_mode = \"s2\"\nseed = 3\n").unwrap();
        let cli = Overrides { mu: Some(Range::new(-2.0, 0.0, 3).unwrap()), seed: Some(9), ..Overrides::default() };
        let spec = ExperimentSpec::resolve(Kind::SweepFidelity, &file, &cli).unwrap();
        assert_eq!(spec.mu.count, 3);
        assert_eq!(spec.seed, 9);
        assert_eq!(spec.r, 1e-6);
        assert_eq!(spec.filter, FilterMode::S2);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = FileConfig::parse("nu_hz = 1.0\nnuu = 2\n").unwrap_err();
        assert!(err.to_string().contains("nuu"), "{err}");
    }

    #[test]
    fn occupation_from_temperature() {
        let file = FileConfig::parse("temp_k = 4.0\nomega_m_hz = 10e6\n").unwrap();
        let spec = ExperimentSpec::resolve(Kind::Steady, &file, &Overrides::default()).unwrap();
        assert!((spec.params.n_occ - 8334.0).abs() < 1.0, "{}", spec.params.n_occ);
        let both = FileConfig::parse("temp_k = 4.0\nomega_m_hz = 10e6\nn_occ = 1.0\n").unwrap();
        assert!(ExperimentSpec::resolve(Kind::Steady, &both, &Overrides::default()).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let cases = [
            "r = -1.0",
            "drive = [1.0, 2.0]",
            "filter_mode = \"s3\"",
            "mu = \"0:1\"",
            "nu_hz = 0.0",
            "ntraj = 0",
            "temp_k = 4.0",
        ];
        for text in cases {
            let file = FileConfig::parse(text).unwrap();
            let err = ExperimentSpec::resolve(Kind::Steady, &file, &Overrides::default());
            assert!(matches!(err, Err(Error::Config(_))), "{text}: {err:?}");
        }
        let sweep = FileConfig::parse("mu = \"-1:0:3\"").unwrap();
        assert!(ExperimentSpec::resolve(Kind::Steady, &sweep, &Overrides::default()).is_err());
    }
}
