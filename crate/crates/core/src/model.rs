//! Physical parameters, the hyperfine-split ground-state manifold and
//! synthesized ODMR spectra.
//!
//! Microwave frequencies are relative to the line center of the electron pair
//! they drive. The nuclear-conditioned `A` line sits at `+splitting/2` when it
//! is conditioned on `↑` and at `-splitting/2` when conditioned on `↓`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Nuclear spin projection. `Up` is the bright state of the standard readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nuclear {
    Up,
    Down,
}

impl Nuclear {
    pub fn flipped(self) -> Self {
        match self {
            Nuclear::Up => Nuclear::Down,
            Nuclear::Down => Nuclear::Up,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Nuclear::Up => "↑",
            Nuclear::Down => "↓",
        }
    }
}

impl fmt::Display for Nuclear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Nuclear::Up => "up",
            Nuclear::Down => "down",
        })
    }
}

/// Electron spin projection of the spin-3/2 ground state, plus a shelved
/// (metastable) label used by the optical model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Electron {
    PlusThreeHalves,
    PlusHalf,
    MinusHalf,
    MinusThreeHalves,
    Shelved,
}

impl Electron {
    pub const GROUND: [Electron; 4] = [
        Electron::PlusThreeHalves,
        Electron::PlusHalf,
        Electron::MinusHalf,
        Electron::MinusThreeHalves,
    ];

    /// True for the `±3/2` doublet that cycles on the A2 line.
    pub fn is_three_halves(self) -> bool {
        matches!(self, Electron::PlusThreeHalves | Electron::MinusThreeHalves)
    }

    pub fn is_one_half(self) -> bool {
        matches!(self, Electron::PlusHalf | Electron::MinusHalf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterState {
    pub electron: Electron,
    pub nuclear: Nuclear,
    pub charge_ok: bool,
}

impl RegisterState {
    pub fn new(electron: Electron, nuclear: Nuclear) -> Self {
        RegisterState {
            electron,
            nuclear,
            charge_ok: true,
        }
    }
}

/// Physical constants of the defect and its nuclear register.
///
/// Units: field in gauss, frequencies in MHz, optical lifetimes in ns,
/// electron T2* in µs, nuclear T2* in ms, wavelength in nm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    pub magnetic_field: f64,
    pub hyperfine_splitting: f64,
    pub odmr_linewidth_fwhm: f64,
    pub lifetime_a1: f64,
    pub lifetime_a2: f64,
    pub electron_t2_star: f64,
    pub nuclear_t2_star: f64,
    pub pi_pulse_fidelity: f64,
    pub electron_init_fidelity: f64,
    pub nuclear_init_fidelity: f64,
    pub zpl_wavelength: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            magnetic_field: 942.0,
            hyperfine_splitting: 8.0,
            odmr_linewidth_fwhm: 0.6,
            lifetime_a1: 6.45,
            lifetime_a2: 10.58,
            electron_t2_star: 0.8,
            nuclear_t2_star: 9.9,
            pi_pulse_fidelity: 0.967,
            electron_init_fidelity: 0.99,
            nuclear_init_fidelity: 0.93,
            zpl_wavelength: 916.0,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("magnetic_field", self.magnetic_field),
            ("odmr_linewidth_fwhm", self.odmr_linewidth_fwhm),
            ("lifetime_a1", self.lifetime_a1),
            ("lifetime_a2", self.lifetime_a2),
            ("electron_t2_star", self.electron_t2_star),
            ("nuclear_t2_star", self.nuclear_t2_star),
            ("zpl_wavelength", self.zpl_wavelength),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::param(name, format!("must be > 0, got {value}")));
            }
        }
        // A vanishing splitting is the degenerate-hyperfine limit, not an error.
        if !(self.hyperfine_splitting.is_finite() && self.hyperfine_splitting >= 0.0) {
            return Err(Error::param(
                "hyperfine_splitting",
                format!("must be >= 0, got {}", self.hyperfine_splitting),
            ));
        }
        let fidelities = [
            ("pi_pulse_fidelity", self.pi_pulse_fidelity),
            ("electron_init_fidelity", self.electron_init_fidelity),
            ("nuclear_init_fidelity", self.nuclear_init_fidelity),
        ];
        for (name, value) in fidelities {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::param(name, format!("must lie in [0, 1], got {value}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransitionKind {
    /// Electron π-rotation between `pair`, resonant only for one nuclear state.
    Microwave {
        pair: (Electron, Electron),
        condition: Nuclear,
    },
    /// Optical line cycling on one ground doublet.
    Optical { three_halves: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub label: String,
    pub kind: TransitionKind,
}

/// Ground manifold: four electron levels times two nuclear levels, with the
/// microwave and optical transitions that the pulse schedules refer to.
///
/// MW1 drives `-1/2 ↔ -3/2` and MW3 drives `+1/2 ↔ +3/2`; the `A` variant is
/// resonant when the nucleus is `↑`, the `B` variant when it is `↓`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelDiagram {
    pub electron_levels: [Electron; 4],
    pub nuclear_levels: [Nuclear; 2],
    pub transitions: Vec<Transition>,
}

impl Default for LevelDiagram {
    fn default() -> Self {
        Self::standard()
    }
}

impl LevelDiagram {
    pub fn standard() -> Self {
        let mw = |label: &str, pair, condition| Transition {
            label: label.to_string(),
            kind: TransitionKind::Microwave { pair, condition },
        };
        let minus = (Electron::MinusHalf, Electron::MinusThreeHalves);
        let plus = (Electron::PlusHalf, Electron::PlusThreeHalves);
        LevelDiagram {
            electron_levels: Electron::GROUND,
            nuclear_levels: [Nuclear::Up, Nuclear::Down],
            transitions: vec![
                mw("MW1A", minus, Nuclear::Up),
                mw("MW1B", minus, Nuclear::Down),
                mw("MW3A", plus, Nuclear::Up),
                mw("MW3B", plus, Nuclear::Down),
                Transition {
                    label: "A1".into(),
                    kind: TransitionKind::Optical {
                        three_halves: false,
                    },
                },
                Transition {
                    label: "A2".into(),
                    kind: TransitionKind::Optical { three_halves: true },
                },
            ],
        }
    }

    /// The same diagram with the nuclear basis relabeled (`↑ ↔ ↓`).
    pub fn with_swapped_nuclear_basis(&self) -> Self {
        let mut out = self.clone();
        out.nuclear_levels.reverse();
        for t in &mut out.transitions {
            if let TransitionKind::Microwave { condition, .. } = &mut t.kind {
                *condition = condition.flipped();
            }
        }
        out
    }

    pub fn ground_state_count(&self) -> usize {
        self.electron_levels.len() * self.nuclear_levels.len()
    }

    pub fn transition(&self, label: &str) -> Result<&Transition> {
        self.transitions
            .iter()
            .find(|t| t.label == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn microwave(&self, label: &str) -> Result<((Electron, Electron), Nuclear)> {
        match self.transition(label)?.kind {
            TransitionKind::Microwave { pair, condition } => Ok((pair, condition)),
            TransitionKind::Optical { .. } => Err(Error::UnknownLabel(format!(
                "{label} (optical line used where a microwave transition is required)"
            ))),
        }
    }

    pub fn is_optical(&self, label: &str) -> Result<bool> {
        Ok(matches!(
            self.transition(label)?.kind,
            TransitionKind::Optical { .. }
        ))
    }
}

/// Relative microwave frequencies (MHz) keyed by label.
pub fn transition_frequencies(
    params: &PhysicalParams,
    diagram: &LevelDiagram,
) -> Result<BTreeMap<String, f64>> {
    params.validate()?;
    let mut out = BTreeMap::new();
    for t in &diagram.transitions {
        if let TransitionKind::Microwave { condition, .. } = t.kind {
            out.insert(t.label.clone(), conditioned_offset(params, condition));
        }
    }
    Ok(out)
}

/// Relative frequency of a single microwave line.
pub fn transition_frequency(
    params: &PhysicalParams,
    diagram: &LevelDiagram,
    label: &str,
) -> Result<f64> {
    params.validate()?;
    let (_, condition) = diagram.microwave(label)?;
    Ok(conditioned_offset(params, condition))
}

fn conditioned_offset(params: &PhysicalParams, condition: Nuclear) -> f64 {
    match condition {
        Nuclear::Up => 0.5 * params.hyperfine_splitting,
        Nuclear::Down => -0.5 * params.hyperfine_splitting,
    }
}

/// Unit-height Gaussian with the given full width at half maximum.
pub fn gaussian_line(detuning: f64, fwhm: f64) -> f64 {
    let sigma = fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    (-0.5 * (detuning / sigma).powi(2)).exp()
}

/// ODMR contrast on the MW3 pair for a given nuclear population
/// `(p_up, p_down)`: one Gaussian per hyperfine line, height equal to the
/// population of the nuclear state that line is conditioned on.
pub fn odmr_spectrum(
    params: &PhysicalParams,
    diagram: &LevelDiagram,
    nuclear_population: (f64, f64),
    freq_grid: &[f64],
) -> Result<Vec<f64>> {
    params.validate()?;
    let (p_up, p_dn) = nuclear_population;
    if p_up < 0.0 || p_dn < 0.0 {
        return Err(Error::param(
            "nuclear_population",
            format!("populations must be non-negative, got ({p_up}, {p_dn})"),
        ));
    }
    if ((p_up + p_dn) - 1.0).abs() > 1e-9 {
        return Err(Error::param(
            "nuclear_population",
            format!("populations must sum to 1, got {}", p_up + p_dn),
        ));
    }
    if freq_grid.is_empty() {
        return Err(Error::param("freq_grid", "grid is empty"));
    }
    let mut lines = Vec::with_capacity(2);
    for label in ["MW3A", "MW3B"] {
        let (_, condition) = diagram.microwave(label)?;
        let weight = match condition {
            Nuclear::Up => p_up,
            Nuclear::Down => p_dn,
        };
        lines.push((conditioned_offset(params, condition), weight));
    }
    let fwhm = params.odmr_linewidth_fwhm;
    Ok(freq_grid
        .iter()
        .map(|&f| {
            lines
                .iter()
                .map(|&(center, weight)| weight * gaussian_line(f - center, fwhm))
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let p = PhysicalParams::default();
        p.validate().unwrap();
        assert_eq!(p.magnetic_field, 942.0);
        assert_eq!(p.lifetime_a2, 10.58);
        assert_eq!(p.nuclear_init_fidelity, 0.93);
    }

    #[test]
    fn rejects_out_of_range_fidelity() {
        let p = PhysicalParams {
            pi_pulse_fidelity: 1.2,
            ..Default::default()
        };
        assert!(matches!(
            p.validate(),
            Err(Error::InvalidParameter {
                name: "pi_pulse_fidelity",
                ..
            })
        ));
        let p = PhysicalParams {
            lifetime_a1: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn diagram_has_eight_ground_states() {
        let d = LevelDiagram::standard();
        assert_eq!(d.ground_state_count(), 8);
    }

    #[test]
    fn a_and_b_labels_differ_only_in_condition() {
        let d = LevelDiagram::standard();
        for n in ["1", "3"] {
            let (pa, ca) = d.microwave(&format!("MW{n}A")).unwrap();
            let (pb, cb) = d.microwave(&format!("MW{n}B")).unwrap();
            assert_eq!(pa, pb);
            assert_ne!(ca, cb);
        }
    }

    #[test]
    fn hyperfine_separation() {
        let d = LevelDiagram::standard();
        for (splitting, expected) in [(8.0, 8.0), (0.0, 0.0), (2.0, 2.0)] {
            let p = PhysicalParams {
                hyperfine_splitting: splitting,
                ..Default::default()
            };
            let f = transition_frequencies(&p, &d).unwrap();
            assert_eq!((f["MW3A"] - f["MW3B"]).abs(), expected);
            assert_eq!((f["MW1A"] - f["MW1B"]).abs(), expected);
        }
    }

    #[test]
    fn unknown_label_is_an_error() {
        let p = PhysicalParams::default();
        let d = LevelDiagram::standard();
        assert_eq!(
            transition_frequency(&p, &d, "MW2A"),
            Err(Error::UnknownLabel("MW2A".into()))
        );
        assert!(transition_frequency(&p, &d, "A2").is_err());
    }

    #[test]
    fn relabeling_nuclear_basis_swaps_a_and_b() {
        let p = PhysicalParams::default();
        let d = LevelDiagram::standard();
        let s = d.with_swapped_nuclear_basis();
        let f = transition_frequencies(&p, &d).unwrap();
        let g = transition_frequencies(&p, &s).unwrap();
        assert_eq!(f["MW3A"], g["MW3B"]);
        assert_eq!(f["MW1B"], g["MW1A"]);
        assert_eq!((g["MW3A"] - g["MW3B"]).abs(), 8.0);
    }

    #[test]
    fn odmr_symmetric_mixture_gives_equal_peaks() {
        let p = PhysicalParams::default();
        let d = LevelDiagram::standard();
        let s = odmr_spectrum(&p, &d, (0.5, 0.5), &[-4.0, 4.0]).unwrap();
        assert!((s[0] - s[1]).abs() < 1e-15);
    }

    #[test]
    fn odmr_single_line_matches_closed_form() {
        let p = PhysicalParams::default();
        let d = LevelDiagram::standard();
        let s = odmr_spectrum(&p, &d, (1.0, 0.0), &[4.0, 4.3]).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12);
        // Half maximum at half the FWHM from center.
        assert!((s[1] - 0.5).abs() < 1e-3, "{}", s[1]);
        let sigma = 0.6 / (8.0 * 2f64.ln()).sqrt();
        let closed = (-(0.3f64).powi(2) / (2.0 * sigma * sigma)).exp();
        assert!((s[1] - closed).abs() < 1e-12);
    }

    #[test]
    fn odmr_amplitude_ratio_follows_populations() {
        let p = PhysicalParams::default();
        let d = LevelDiagram::standard();
        let s = odmr_spectrum(&p, &d, (0.93, 0.07), &[4.0, -4.0]).unwrap();
        assert!((s[1] / s[0] - 0.07 / 0.93).abs() < 1e-6);
    }

    #[test]
    fn odmr_rejects_bad_populations() {
        let p = PhysicalParams::default();
        let d = LevelDiagram::standard();
        assert!(odmr_spectrum(&p, &d, (-0.1, 1.1), &[0.0]).is_err());
        assert!(odmr_spectrum(&p, &d, (0.5, 0.6), &[0.0]).is_err());
        assert!(odmr_spectrum(&p, &d, (0.5, 0.5), &[]).is_err());
    }
}
