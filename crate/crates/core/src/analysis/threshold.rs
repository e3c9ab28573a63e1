//! Exhaustive cutoff search.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub cutoff: u32,
    pub fidelity: f64,
    pub misread_bright: f64,
    pub misread_dark: f64,
}

fn normalized(pmf: &[f64], name: &'static str) -> Result<Vec<f64>> {
    let total: f64 = pmf.iter().sum();
    if pmf.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(Error::param(name, "entries must be finite and non-negative"));
    }
    if total <= 0.0 {
        return Err(Error::param(name, "distribution has no mass"));
    }
    Ok(pmf.iter().map(|p| p / total).collect())
}

/// Cutoff `N` maximizing `1 - (P(total <= N | bright) + P(total > N | dark)) / 2`.
/// Inputs are normalized first, so raw histogram counts are accepted. Ties
/// go to the smaller cutoff.
pub fn optimize_threshold(pmf_bright: &[f64], pmf_dark: &[f64]) -> Result<ThresholdChoice> {
    let up = normalized(pmf_bright, "pmf_bright")?;
    let dn = normalized(pmf_dark, "pmf_dark")?;
    let len = up.len().max(dn.len());
    let mut best: Option<ThresholdChoice> = None;
    let (mut cdf_up, mut cdf_dn) = (0.0, 0.0);
    for n in 0..len {
        cdf_up += up.get(n).copied().unwrap_or(0.0);
        cdf_dn += dn.get(n).copied().unwrap_or(0.0);
        let misread_dark = (1.0 - cdf_dn).max(0.0);
        let fidelity = 1.0 - 0.5 * (cdf_up + misread_dark);
        // The tolerance keeps rounding noise from breaking ties upward.
        if best.is_none_or(|b| fidelity > b.fidelity + 1e-12) {
            best = Some(ThresholdChoice {
                cutoff: n as u32,
                fidelity,
                misread_bright: cdf_up,
                misread_dark,
            });
        }
    }
    Ok(best.expect("non-empty distributions"))
}
