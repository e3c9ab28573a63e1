//! Threshold classification, post-selection and fidelity reports.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::Nuclear;
use crate::stats::{binomial_std_error, wilson_interval, Interval, ONE_SIGMA};
use crate::trajectory::{BatchResult, ShotRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    /// Bright iff `total > cutoff`.
    pub cutoff: u32,
    /// Post-selection window for conditional readout, in cycles.
    pub herald_cycles: u32,
    /// Dual-step bright outcome: `read1 >= dual_min_bright` and
    /// `read2 <= dual_max_dark`. The dark outcome is the mirror image.
    pub dual_min_bright: u32,
    pub dual_max_dark: u32,
    pub confidence_level: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            cutoff: 1,
            herald_cycles: 120,
            dual_min_bright: 2,
            dual_max_dark: 1,
            confidence_level: ONE_SIGMA,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self, cycles: u32) -> Result<()> {
        if self.herald_cycles > cycles {
            return Err(Error::param(
                "herald_cycles",
                format!("must not exceed the cycle count {cycles}, got {}", self.herald_cycles),
            ));
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(Error::param(
                "confidence_level",
                format!("must lie in (0, 1), got {}", self.confidence_level),
            ));
        }
        if self.dual_max_dark >= self.dual_min_bright {
            return Err(Error::param(
                "dual_max_dark",
                "must be below dual_min_bright so the two outcomes are exclusive",
            ));
        }
        Ok(())
    }
}

pub fn classify(total: u32, config: &ClassifierConfig) -> Nuclear {
    if total > config.cutoff {
        Nuclear::Up
    } else {
        Nuclear::Down
    }
}

pub fn classify_record(record: &ShotRecord, config: &ClassifierConfig) -> Nuclear {
    classify(record.total1(), config)
}

/// Two-read rule; `None` is an inconclusive outcome.
pub fn classify_dual(read1: u32, read2: u32, config: &ClassifierConfig) -> Option<Nuclear> {
    if read1 >= config.dual_min_bright && read2 <= config.dual_max_dark {
        Some(Nuclear::Up)
    } else if read1 <= config.dual_max_dark && read2 >= config.dual_min_bright {
        Some(Nuclear::Down)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMode {
    Raw,
    Conditional,
    DualStep,
}

impl fmt::Display for ReadoutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReadoutMode::Raw => "raw",
            ReadoutMode::Conditional => "conditional",
            ReadoutMode::DualStep => "dual-step",
        })
    }
}

/// The statistics of one shot that every analysis mode needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotTotals {
    pub prepared: Nuclear,
    pub total1: u32,
    pub total2: Option<u32>,
    /// Read1 photons in the first `herald_cycles` cycles.
    pub herald_count: u32,
    pub herald_cycles: u32,
}

impl ShotTotals {
    pub fn from_record(record: &ShotRecord, herald_cycles: u32) -> Self {
        ShotTotals {
            prepared: record.prepared,
            total1: record.total1(),
            total2: record.total2(),
            herald_count: record.read1.count_in_first(herald_cycles),
            herald_cycles,
        }
    }

    pub fn from_batch(batch: &BatchResult, herald_cycles: u32) -> Vec<Self> {
        batch
            .records
            .iter()
            .map(|r| Self::from_record(r, herald_cycles))
            .collect()
    }
}

/// One misread rate with its binomial interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub value: f64,
    pub errors: u64,
    pub trials: u64,
    pub interval: Interval,
}

impl RateEstimate {
    fn new(errors: u64, trials: u64, level: f64) -> Self {
        RateEstimate {
            value: errors as f64 / trials as f64,
            errors,
            trials,
            interval: wilson_interval(errors, trials, level),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionCounts {
    pub total: u64,
    pub kept: u64,
    pub discarded: u64,
    pub success_efficiency: f64,
}

impl SelectionCounts {
    fn new(total: u64, kept: u64) -> Self {
        SelectionCounts {
            total,
            kept,
            discarded: total - kept,
            success_efficiency: kept as f64 / total as f64,
        }
    }
}

/// Misread rates and fidelities of one readout scheme.
///
/// `misread_bright_as_dark` is printed as p(↑|↓) and
/// `misread_dark_as_bright` as p(↓|↑), the customary false-negative and
/// false-positive symbols for this measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub mode: ReadoutMode,
    pub config: ClassifierConfig,
    pub misread_bright_as_dark: RateEstimate,
    pub misread_dark_as_bright: RateEstimate,
    pub fidelity_bright: f64,
    pub fidelity_dark: f64,
    pub fidelity: f64,
    pub fidelity_std_error: f64,
    pub selection_bright: SelectionCounts,
    pub selection_dark: SelectionCounts,
}

impl FidelityReport {
    /// `p(↑|↓)` in the customary notation.
    pub fn p_up_given_dn(&self) -> f64 {
        self.misread_bright_as_dark.value
    }

    /// `p(↓|↑)` in the customary notation.
    pub fn p_dn_given_up(&self) -> f64 {
        self.misread_dark_as_bright.value
    }
}

impl fmt::Display for FidelityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |x: f64| 100.0 * x;
        writeln!(f, "mode: {}", self.mode)?;
        for (symbol, name, r) in [
            ("p(↑|↓)", "bright read as dark", &self.misread_bright_as_dark),
            ("p(↓|↑)", "dark read as bright", &self.misread_dark_as_bright),
        ] {
            writeln!(
                f,
                "  {symbol} {name}: {:.4} [{:.4}, {:.4}] ({}/{})",
                r.value, r.interval.lower, r.interval.upper, r.errors, r.trials
            )?;
        }
        writeln!(
            f,
            "  fidelity: {:.2} ± {:.2} %  (bright {:.2} %, dark {:.2} %)",
            pct(self.fidelity),
            pct(self.fidelity_std_error),
            pct(self.fidelity_bright),
            pct(self.fidelity_dark)
        )?;
        write!(
            f,
            "  kept: bright {}/{} ({:.2} %), dark {}/{} ({:.2} %)",
            self.selection_bright.kept,
            self.selection_bright.total,
            pct(self.selection_bright.success_efficiency),
            self.selection_dark.kept,
            self.selection_dark.total,
            pct(self.selection_dark.success_efficiency)
        )
    }
}

/// Counts (kept, errors) for one prepared state.
fn tally(
    shots: &[ShotTotals],
    expected: Nuclear,
    config: &ClassifierConfig,
    mode: ReadoutMode,
) -> Result<(u64, u64)> {
    let mut kept = 0u64;
    let mut errors = 0u64;
    for s in shots {
        if s.prepared != expected {
            return Err(Error::ModeMismatch(format!(
                "batch for {expected} contains a shot prepared {}",
                s.prepared
            )));
        }
        let outcome = match mode {
            ReadoutMode::Raw => Some(classify(s.total1, config)),
            ReadoutMode::Conditional => {
                if s.herald_cycles != config.herald_cycles {
                    return Err(Error::ModeMismatch(format!(
                        "shots carry herald counts for {} cycles, analysis asks for {}",
                        s.herald_cycles, config.herald_cycles
                    )));
                }
                let keep = match expected {
                    Nuclear::Up => s.herald_count > 0,
                    Nuclear::Down => s.herald_count == 0,
                };
                keep.then(|| classify(s.total1, config))
            }
            ReadoutMode::DualStep => {
                let total2 = s.total2.ok_or_else(|| {
                    Error::ModeMismatch(
                        "dual-step analysis needs records with a second read".into(),
                    )
                })?;
                classify_dual(s.total1, total2, config)
            }
        };
        if let Some(o) = outcome {
            kept += 1;
            if o != expected {
                errors += 1;
            }
        }
    }
    Ok((kept, errors))
}

pub fn fidelity_report(
    bright: &[ShotTotals],
    dark: &[ShotTotals],
    config: &ClassifierConfig,
    mode: ReadoutMode,
) -> Result<FidelityReport> {
    if bright.is_empty() || dark.is_empty() {
        return Err(Error::EmptySelection {
            context: "fidelity report needs non-empty batches for both preparations".into(),
        });
    }
    if !(config.confidence_level > 0.0 && config.confidence_level < 1.0) {
        return Err(Error::param("confidence_level", "must lie in (0, 1)"));
    }
    let (kept_b, err_b) = tally(bright, Nuclear::Up, config, mode)?;
    let (kept_d, err_d) = tally(dark, Nuclear::Down, config, mode)?;
    if kept_b == 0 || kept_d == 0 {
        return Err(Error::EmptySelection {
            context: format!(
                "{mode} post-selection kept {kept_b} bright and {kept_d} dark shots"
            ),
        });
    }
    let level = config.confidence_level;
    let bd = RateEstimate::new(err_b, kept_b, level);
    let db = RateEstimate::new(err_d, kept_d, level);
    let se = 0.5
        * (binomial_std_error(bd.value, kept_b).powi(2)
            + binomial_std_error(db.value, kept_d).powi(2))
        .sqrt();
    Ok(FidelityReport {
        mode,
        config: *config,
        misread_bright_as_dark: bd,
        misread_dark_as_bright: db,
        fidelity_bright: 1.0 - bd.value,
        fidelity_dark: 1.0 - db.value,
        fidelity: 1.0 - 0.5 * (bd.value + db.value),
        fidelity_std_error: se,
        selection_bright: SelectionCounts::new(bright.len() as u64, kept_b),
        selection_dark: SelectionCounts::new(dark.len() as u64, kept_d),
    })
}

/// Convenience wrapper over full batches.
pub fn fidelity_report_batches(
    bright: &BatchResult,
    dark: &BatchResult,
    config: &ClassifierConfig,
    mode: ReadoutMode,
) -> Result<FidelityReport> {
    config.validate(bright.cycles.min(dark.cycles))?;
    fidelity_report(
        &ShotTotals::from_batch(bright, config.herald_cycles),
        &ShotTotals::from_batch(dark, config.herald_cycles),
        config,
        mode,
    )
}

/// Total-photon histogram per prepared state.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CountHistogram {
    pub up: Vec<u64>,
    pub dn: Vec<u64>,
}

fn bump(bins: &mut Vec<u64>, k: usize, by: u64) {
    if bins.len() <= k {
        bins.resize(k + 1, 0);
    }
    bins[k] += by;
}

impl CountHistogram {
    pub fn add(&mut self, prepared: Nuclear, total: u32) {
        let bins = match prepared {
            Nuclear::Up => &mut self.up,
            Nuclear::Down => &mut self.dn,
        };
        bump(bins, total as usize, 1);
    }

    pub fn from_totals<'a>(shots: impl IntoIterator<Item = &'a ShotTotals>) -> Self {
        let mut h = CountHistogram::default();
        for s in shots {
            h.add(s.prepared, s.total1);
        }
        h
    }

    pub fn merge(&mut self, other: &CountHistogram) {
        for (k, &c) in other.up.iter().enumerate() {
            bump(&mut self.up, k, c);
        }
        for (k, &c) in other.dn.iter().enumerate() {
            bump(&mut self.dn, k, c);
        }
    }

    pub fn shots(&self, prepared: Nuclear) -> u64 {
        match prepared {
            Nuclear::Up => self.up.iter().sum(),
            Nuclear::Down => self.dn.iter().sum(),
        }
    }

    pub fn normalized(&self, prepared: Nuclear) -> Vec<f64> {
        let bins = match prepared {
            Nuclear::Up => &self.up,
            Nuclear::Down => &self.dn,
        };
        let n = self.shots(prepared) as f64;
        bins.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin,count_up_prepared,count_dn_prepared")?;
        for k in 0..self.up.len().max(self.dn.len()) {
            writeln!(
                w,
                "{k},{},{}",
                self.up.get(k).copied().unwrap_or(0),
                self.dn.get(k).copied().unwrap_or(0)
            )?;
        }
        Ok(())
    }
}

/// Histogram over `(total_read1, total_read2)` for one prepared state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointHistogram {
    pub prepared: Nuclear,
    /// `bins[read1][read2]`.
    pub bins: Vec<Vec<u64>>,
}

impl JointHistogram {
    pub fn new(prepared: Nuclear) -> Self {
        JointHistogram {
            prepared,
            bins: Vec::new(),
        }
    }

    pub fn add(&mut self, read1: u32, read2: u32) {
        let (i, j) = (read1 as usize, read2 as usize);
        if self.bins.len() <= i {
            self.bins.resize(i + 1, Vec::new());
        }
        bump(&mut self.bins[i], j, 1);
    }

    pub fn from_totals<'a>(
        prepared: Nuclear,
        shots: impl IntoIterator<Item = &'a ShotTotals>,
    ) -> Result<Self> {
        let mut h = JointHistogram::new(prepared);
        for s in shots {
            if s.prepared != prepared {
                continue;
            }
            let t2 = s.total2.ok_or_else(|| {
                Error::ModeMismatch("joint histogram needs records with a second read".into())
            })?;
            h.add(s.total1, t2);
        }
        Ok(h)
    }

    pub fn merge(&mut self, other: &JointHistogram) {
        for (i, row) in other.bins.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c > 0 {
                    if self.bins.len() <= i {
                        self.bins.resize(i + 1, Vec::new());
                    }
                    bump(&mut self.bins[i], j, c);
                }
            }
        }
    }

    /// Histogram of `total_read1` (summed over read2).
    pub fn marginal_read1(&self) -> Vec<u64> {
        self.bins.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn shots(&self) -> u64 {
        self.bins.iter().flatten().sum()
    }

    /// Sparse CSV triples; zero bins are omitted.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "read1,read2,count")?;
        for (i, row) in self.bins.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c > 0 {
                    writeln!(w, "{i},{j},{c}")?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shot(prepared: Nuclear, total1: u32, total2: Option<u32>, herald_count: u32) -> ShotTotals {
        ShotTotals {
            prepared,
            total1,
            total2,
            herald_count,
            herald_cycles: 120,
        }
    }

    #[test]
    fn cutoff_semantics() {
        let c = ClassifierConfig::default();
        assert_eq!(classify(0, &c), Nuclear::Down);
        assert_eq!(classify(1, &c), Nuclear::Down);
        assert_eq!(classify(2, &c), Nuclear::Up);
    }

    #[test]
    fn dual_rule() {
        let c = ClassifierConfig::default();
        assert_eq!(classify_dual(2, 1, &c), Some(Nuclear::Up));
        assert_eq!(classify_dual(1, 2, &c), Some(Nuclear::Down));
        assert_eq!(classify_dual(3, 3, &c), None);
        assert_eq!(classify_dual(0, 0, &c), None);
    }

    #[test]
    fn raw_report_counts() {
        let c = ClassifierConfig::default();
        let up = [shot(Nuclear::Up, 5, None, 2), shot(Nuclear::Up, 1, None, 0)];
        let dn = [
            shot(Nuclear::Down, 0, None, 0),
            shot(Nuclear::Down, 0, None, 0),
            shot(Nuclear::Down, 0, None, 0),
            shot(Nuclear::Down, 3, None, 1),
        ];
        let r = fidelity_report(&up, &dn, &c, ReadoutMode::Raw).unwrap();
        assert_eq!(r.p_up_given_dn(), 0.5);
        assert_eq!(r.p_dn_given_up(), 0.25);
        assert!((r.fidelity - (1.0 - 0.375)).abs() < 1e-15);
        assert_eq!(r.selection_dark.kept + r.selection_dark.discarded, 4);

        let r = fidelity_report(&up, &dn, &c, ReadoutMode::Conditional).unwrap();
        assert_eq!(r.selection_bright.kept, 1);
        assert_eq!(r.selection_dark.kept, 3);
        assert_eq!(r.fidelity, 1.0);
    }

    #[test]
    fn dual_mode_needs_second_read() {
        let c = ClassifierConfig::default();
        let up = [shot(Nuclear::Up, 5, None, 2)];
        let dn = [shot(Nuclear::Down, 0, None, 0)];
        assert!(matches!(
            fidelity_report(&up, &dn, &c, ReadoutMode::DualStep),
            Err(Error::ModeMismatch(_))
        ));
    }

    #[test]
    fn empty_selection_is_an_error() {
        let c = ClassifierConfig::default();
        let up = [shot(Nuclear::Up, 5, Some(5), 2)];
        let dn = [shot(Nuclear::Down, 0, Some(0), 0)];
        let err = fidelity_report(&up, &dn, &c, ReadoutMode::DualStep).unwrap_err();
        assert!(err.to_string().contains("kept 0"), "{err}");
    }

    #[test]
    fn histogram_csv() {
        let shots = [shot(Nuclear::Up, 2, None, 0), shot(Nuclear::Down, 0, None, 0)];
        let h = CountHistogram::from_totals(&shots);
        let mut out = Vec::new();
        h.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "bin,count_up_prepared,count_dn_prepared\n0,0,1\n1,0,0\n2,1,0\n"
        );
    }

    #[test]
    fn joint_marginal() {
        let shots = [
            shot(Nuclear::Up, 2, Some(0), 0),
            shot(Nuclear::Up, 2, Some(3), 0),
            shot(Nuclear::Up, 0, Some(1), 0),
        ];
        let j = JointHistogram::from_totals(Nuclear::Up, &shots).unwrap();
        assert_eq!(j.marginal_read1(), CountHistogram::from_totals(&shots).up);
        let mut out = Vec::new();
        j.write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("read1,read2,count\n0,1,1\n"));
    }
}
