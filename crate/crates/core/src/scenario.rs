//! One fully specified transfer experiment, from parameters to closed loop.

use log::debug;

use crate::closedloop::{build_augmented, closed_loop_moments, controlled_fidelity, AugmentedModel, ClosedLoopMoments};
use crate::control::{lqg_gains, Gains, LqgConfig};
use crate::error::Result;
use crate::estimation::{measurement_model, MeasurementModel, StationaryFilter, SyndromeFilter};
use crate::model::{Encoding, FilterMode, MemoryParams, NoiseModel, SourceSpec};
use crate::numerics::Vector;
use crate::openloop::{system_matrices, SystemMatrices};

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub params: MemoryParams,
    pub source: SourceSpec,
    /// Ancilla squeezing.
    pub mu: f64,
    pub mode: FilterMode,
    /// Control penalty; `None` runs the filter without feedback.
    pub r: Option<f64>,
    /// Replaces the default drive `−√ν β`.
    pub drive: Option<Vector>,
}

/// Everything needed to analyse or simulate one configuration.
///
/// `noise` is the truth; `filter_noise` is what the estimator and
/// controller were designed from.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub enc: Encoding,
    pub sys: SystemMatrices,
    pub noise: NoiseModel,
    pub filter_noise: NoiseModel,
    pub mm: MeasurementModel,
    pub filter: StationaryFilter,
    pub syndrome_filter: SyndromeFilter,
    pub lqg: Option<LqgConfig>,
    pub gains: Gains,
    pub augmented: AugmentedModel,
}

impl Scenario {
    pub fn build(spec: ScenarioSpec) -> Result<Self> {
        let params = spec.params;
        let enc = Encoding::new(spec.source.alpha_in)?;
        let mut sys = system_matrices(&params, &enc);
        if let Some(drive) = &spec.drive {
            sys = sys.with_drive(drive.clone())?;
        }
        let noise = NoiseModel::encoded(spec.source.mode, spec.mu, &params)?;
        // Mode S2 never needs the source statistics, so it is always built blind.
        let blind = spec.mode == FilterMode::S2 || !spec.source.covariance_known;
        let filter_noise = if blind { noise.redacted(&params)? } else { noise.clone() };
        let mm = measurement_model(spec.mode, &enc, &params, &filter_noise);
        let filter = StationaryFilter::new(&mm, &sys, &filter_noise)?;
        let syndrome_filter = filter.syndrome_filter(&mm, &sys);
        let (lqg, gains) = match spec.r {
            Some(r) => {
                let cfg = LqgConfig::new(spec.mode, r)?;
                let gains = lqg_gains(&cfg, &params, &enc)?;
                (Some(cfg), gains)
            }
            None => (None, Gains::disabled(spec.mode, &enc)),
        };
        // The measurement matrices do not depend on the noise view, so the
        // true noise enters only through Σ_W here.
        let augmented = build_augmented(&sys, &noise, &mm, &filter, &gains)?;
        debug!("scenario mode={} mu={} r={:?}: f1={:.4e} f2={:.4e}", spec.mode, spec.mu, spec.r, gains.f1, gains.f2);
        Ok(Scenario { spec, enc, sys, noise, filter_noise, mm, filter, syndrome_filter, lqg, gains, augmented })
    }

    pub fn params(&self) -> &MemoryParams {
        &self.spec.params
    }

    pub fn moments(&self) -> Result<ClosedLoopMoments> {
        closed_loop_moments(&self.augmented)
    }

    /// Transfer fidelity of the stationary memory against the encoded input.
    pub fn fidelity(&self) -> Result<f64> {
        let moments = self.moments()?;
        controlled_fidelity(&moments.vprime, &self.noise.input_covariance())
    }

    /// The same configuration with feedback switched off.
    pub fn uncontrolled(&self) -> Result<Scenario> {
        Scenario::build(ScenarioSpec { r: None, ..self.spec.clone() })
    }
}

/// Coherent-source scenario at the given squeezing and penalty.
pub fn coherent_scenario(params: MemoryParams, mu: f64, mode: FilterMode, r: Option<f64>) -> Result<Scenario> {
    Scenario::build(ScenarioSpec { params, source: SourceSpec::coherent(1.0), mu, mode, r, drive: None })
}
