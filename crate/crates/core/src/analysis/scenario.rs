//! What-if projections: re-evaluate the exact statistics under modified
//! model or schedule parameters.

use serde::{Deserialize, Serialize};

use super::exact::exact_heralded_pmf;
use super::predict::{predict_single_read, PredictedStats};
use super::report::ClassifierConfig;
use super::threshold::{optimize_threshold, ThresholdChoice};
use crate::model::Nuclear;
use crate::protocol::ProtocolSpec;
use crate::trajectory::ShotModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioOverrides {
    /// Multiplies `lambda_bright` (collection efficiency).
    pub lambda_bright_scale: Option<f64>,
    /// Multiplies both flip probabilities.
    pub flip_scale: Option<f64>,
    pub lambda_dark: Option<f64>,
    pub nuclear_init_error: Option<f64>,
    pub charge_error: Option<f64>,
    /// Fixed number of readout cycles.
    pub cycles: Option<u32>,
    /// Upper bound on the readout duration; the readout is cut to the
    /// largest cycle count that fits.
    pub readout_budget_us: Option<f64>,
}

impl ScenarioOverrides {
    pub fn apply(&self, model: &ShotModel) -> Result<ShotModel> {
        let mut m = *model;
        if let Some(s) = self.lambda_bright_scale {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::param("lambda_bright_scale", "must be finite and >= 0"));
            }
            m.lambda_bright *= s;
        }
        if let Some(s) = self.flip_scale {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::param("flip_scale", "must be finite and >= 0"));
            }
            m.flip_bd *= s;
            m.flip_db *= s;
        }
        if let Some(v) = self.lambda_dark {
            m.lambda_dark = v;
        }
        if let Some(v) = self.nuclear_init_error {
            m.nuclear_init_error = v;
        }
        if let Some(v) = self.charge_error {
            m.charge_error = v;
        }
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalChoice {
    pub cycles: u32,
    pub herald_cycles: u32,
    pub threshold: ThresholdChoice,
    pub kept_bright: f64,
    pub kept_dark: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub model: ShotModel,
    pub overrides: ScenarioOverrides,
    pub cycle_duration_us: f64,
    /// The protocol's cycle count, the `cycles` override, or as many cycles
    /// as fit in the budget, whichever is smallest.
    pub cycles: u32,
    /// Statistics with the classifier rule as configured.
    pub baseline: PredictedStats,
    /// Raw readout at the best cutoff.
    pub raw_optimized: ThresholdChoice,
    /// Post-selected readout with the herald window kept at the configured
    /// fraction of the readout, at the best cutoff.
    pub conditional_optimized: ConditionalChoice,
    pub readout_duration_us: f64,
    pub total_duration_us: f64,
    /// Headline single-shot readout fidelity (post-selected, optimized).
    pub fidelity: f64,
}

fn conditional_at(
    model: &ShotModel,
    cycles: u32,
    herald_fraction: f64,
) -> Result<ConditionalChoice> {
    let k = ((herald_fraction * cycles as f64).round() as u32).clamp(1, cycles);
    let up = exact_heralded_pmf(model, cycles, Nuclear::Up, k)?;
    let dn = exact_heralded_pmf(model, cycles, Nuclear::Down, k)?;
    Ok(ConditionalChoice {
        cycles,
        herald_cycles: k,
        threshold: optimize_threshold(&up.nonzero, &dn.zero)?,
        kept_bright: up.nonzero_mass(),
        kept_dark: dn.zero_mass(),
    })
}

fn raw_at(model: &ShotModel, cycles: u32) -> Result<ThresholdChoice> {
    let up = super::exact::exact_count_pmf(model, cycles, Nuclear::Up)?;
    let dn = super::exact::exact_count_pmf(model, cycles, Nuclear::Down)?;
    optimize_threshold(&up, &dn)
}

pub fn scenario(
    model: &ShotModel,
    protocol: &ProtocolSpec,
    config: &ClassifierConfig,
    overrides: &ScenarioOverrides,
) -> Result<ScenarioReport> {
    let m = overrides.apply(model)?;
    let cycle_us = protocol.cycle_duration_us();
    let base_cycles = overrides.cycles.unwrap_or(protocol.cycles);
    if base_cycles == 0 {
        return Err(Error::param("cycles", "must be >= 1"));
    }
    let herald_fraction = config.herald_cycles as f64 / protocol.cycles as f64;
    let cycles = match overrides.readout_budget_us {
        Some(budget) => {
            let max = (budget / cycle_us).floor();
            if !(max >= 1.0) {
                return Err(Error::param(
                    "readout_budget_us",
                    format!("budget {budget} µs is shorter than one {cycle_us} µs cycle"),
                ));
            }
            (max as u32).min(base_cycles)
        }
        None => base_cycles,
    };
    let baseline_config = ClassifierConfig {
        herald_cycles: config.herald_cycles.min(cycles),
        ..*config
    };
    let baseline = predict_single_read(&m, cycles, &baseline_config)?;
    let raw_optimized = raw_at(&m, cycles)?;
    let conditional_optimized = conditional_at(&m, cycles, herald_fraction)?;
    let chosen = protocol.with_cycles(conditional_optimized.cycles)?;
    Ok(ScenarioReport {
        model: m,
        overrides: *overrides,
        cycle_duration_us: cycle_us,
        cycles,
        baseline,
        raw_optimized,
        conditional_optimized,
        readout_duration_us: chosen.readout_duration_us(),
        total_duration_us: chosen.total_duration_us(),
        fidelity: conditional_optimized.threshold.fidelity,
    })
}
