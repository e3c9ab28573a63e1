//! Exact readout statistics of an effective model, from the count PMFs.

use serde::{Deserialize, Serialize};

use super::exact::{exact_heralded_pmf, exact_joint_pmf, pmf_mean};
use super::report::ClassifierConfig;
use crate::model::Nuclear;
use crate::trajectory::ShotModel;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictedStats {
    pub mean_bright: f64,
    pub mean_dark: f64,
    pub raw_misread_bright: f64,
    pub raw_misread_dark: f64,
    pub conditional_misread_bright: f64,
    pub conditional_misread_dark: f64,
    pub conditional_kept_bright: f64,
    pub conditional_kept_dark: f64,
}

impl PredictedStats {
    pub fn raw_fidelity(&self) -> f64 {
        1.0 - 0.5 * (self.raw_misread_bright + self.raw_misread_dark)
    }

    pub fn conditional_fidelity(&self) -> f64 {
        1.0 - 0.5 * (self.conditional_misread_bright + self.conditional_misread_dark)
    }
}

fn head(pmf: &[f64], cutoff: u32) -> f64 {
    pmf.iter().take(cutoff as usize + 1).sum()
}

fn tail(pmf: &[f64], cutoff: u32) -> f64 {
    pmf.iter().skip(cutoff as usize + 1).sum()
}

/// Single-read statistics for `cycles` cycles under `config`.
pub fn predict_single_read(
    model: &ShotModel,
    cycles: u32,
    config: &ClassifierConfig,
) -> Result<PredictedStats> {
    let up = exact_heralded_pmf(model, cycles, Nuclear::Up, config.herald_cycles)?;
    let dn = exact_heralded_pmf(model, cycles, Nuclear::Down, config.herald_cycles)?;
    let (up_all, dn_all) = (up.combined(), dn.combined());
    let n = config.cutoff;
    Ok(PredictedStats {
        mean_bright: pmf_mean(&up_all),
        mean_dark: pmf_mean(&dn_all),
        raw_misread_bright: head(&up_all, n),
        raw_misread_dark: tail(&dn_all, n),
        conditional_misread_bright: head(&up.nonzero, n) / up.nonzero_mass(),
        conditional_misread_dark: tail(&dn.zero, n) / dn.zero_mass(),
        conditional_kept_bright: up.nonzero_mass(),
        conditional_kept_dark: dn.zero_mass(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedDual {
    pub misread_bright: f64,
    pub misread_dark: f64,
    pub kept_bright: f64,
    pub kept_dark: f64,
}

impl PredictedDual {
    pub fn fidelity(&self) -> f64 {
        1.0 - 0.5 * (self.misread_bright + self.misread_dark)
    }
}

/// Dual-step statistics from the exact joint PMF of the two read totals.
pub fn predict_dual_step(
    model: &ShotModel,
    cycles: u32,
    config: &ClassifierConfig,
) -> Result<PredictedDual> {
    let outcome = |prepared| -> Result<(f64, f64)> {
        let joint = exact_joint_pmf(model, cycles, prepared)?;
        let (n1, n2) = joint.dims();
        let (mut up, mut dn) = (0.0, 0.0);
        for i in 0..n1 {
            for j in 0..n2 {
                match super::report::classify_dual(i as u32, j as u32, config) {
                    Some(Nuclear::Up) => up += joint.get(i, j),
                    Some(Nuclear::Down) => dn += joint.get(i, j),
                    None => {}
                }
            }
        }
        Ok((up, dn))
    };
    let (bu, bd) = outcome(Nuclear::Up)?;
    let (du, dd) = outcome(Nuclear::Down)?;
    Ok(PredictedDual {
        misread_bright: bd / (bu + bd),
        misread_dark: du / (du + dd),
        kept_bright: bu + bd,
        kept_dark: du + dd,
    })
}
