//! Parameter grids over squeezing and control strength.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{FilterMode, MemoryParams, SourceSpec};
use crate::numerics::Vector;
use crate::scenario::{Scenario, ScenarioSpec};

/// `count` evenly spaced points from `start` to `stop` inclusive, written `start:stop:count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Range {
    pub fn new(start: f64, stop: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("range count must be at least 1".into()));
        }
        if !start.is_finite() || !stop.is_finite() {
            return Err(Error::Config("range bounds must be finite".into()));
        }
        if count == 1 && start != stop {
            return Err(Error::Config("a single-point range needs start == stop".into()));
        }
        Ok(Range { start, stop, count })
    }

    pub fn single(value: f64) -> Self {
        Range { start: value, stop: value, count: 1 }
    }

    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count).map(|i| if i + 1 == self.count { self.stop } else { self.start + step * i as f64 }).collect()
    }
}

impl FromStr for Range {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| -> Result<f64> {
            p.trim().parse::<f64>().map_err(|_| Error::Config(format!("invalid number {p:?} in range {s:?}")))
        };
        match parts.as_slice() {
            [v] => Ok(Range::single(num(v)?)),
            [a, b, n] => {
                let count = n
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("invalid count {n:?} in range {s:?}")))?;
                Range::new(num(a)?, num(b)?, count)
            }
            _ => Err(Error::Config(format!("range {s:?} must be start:stop:count or a single value"))),
        }
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.count)
    }
}

/// One point of the control-strength sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FidelityPoint {
    pub mu: f64,
    /// `−log₂ r`
    pub log2r_neg: f64,
    pub fidelity_controlled: f64,
    pub fidelity_uncontrolled: f64,
}

/// Controlled and uncontrolled fidelity over `(μ, −log₂ r)` for a coherent source.
pub fn fidelity_grid(
    params: MemoryParams,
    source: SourceSpec,
    mode: FilterMode,
    drive: Option<Vector>,
    mus: &[f64],
    log2r_negs: &[f64],
) -> Result<Vec<FidelityPoint>> {
    let spec = |mu: f64, r: Option<f64>| ScenarioSpec { params, source, mu, mode, r, drive: drive.clone() };
    let uncontrolled: Vec<f64> =
        mus.par_iter().map(|&mu| Scenario::build(spec(mu, None))?.fidelity()).collect::<Result<_>>()?;
    let cells: Vec<(usize, f64)> =
        mus.iter().enumerate().flat_map(|(i, _)| log2r_negs.iter().map(move |&l| (i, l))).collect();
    cells
        .par_iter()
        .map(|&(i, l)| {
            let r = 2f64.powf(-l);
            Ok(FidelityPoint {
                mu: mus[i],
                log2r_neg: l,
                fidelity_controlled: Scenario::build(spec(mus[i], Some(r)))?.fidelity()?,
                fidelity_uncontrolled: uncontrolled[i],
            })
        })
        .collect()
}

/// One point of the source-squeezing sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SqueezedPoint {
    pub mu: f64,
    pub mu1: f64,
    /// Filter S1, which is told the source covariance.
    pub fidelity_s1: f64,
    /// Filter S2, blind to the source.
    pub fidelity_s2: f64,
}

/// Controlled fidelity over `(μ, μ₁)` for a squeezed source, both filter modes.
pub fn squeezed_source_grid(
    params: MemoryParams,
    alpha_in: f64,
    r: f64,
    drive: Option<Vector>,
    mus: &[f64],
    mu1s: &[f64],
) -> Result<Vec<SqueezedPoint>> {
    let cells: Vec<(f64, f64)> = mus.iter().flat_map(|&mu| mu1s.iter().map(move |&mu1| (mu, mu1))).collect();
    cells
        .par_iter()
        .map(|&(mu, mu1)| {
            let run = |mode: FilterMode| -> Result<f64> {
                Scenario::build(ScenarioSpec {
                    params,
                    source: SourceSpec::squeezed(alpha_in, mu1, mode == FilterMode::S1),
                    mu,
                    mode,
                    r: Some(r),
                    drive: drive.clone(),
                })?
                .fidelity()
            };
            Ok(SqueezedPoint { mu, mu1, fidelity_s1: run(FilterMode::S1)?, fidelity_s2: run(FilterMode::S2)? })
        })
        .collect()
}
