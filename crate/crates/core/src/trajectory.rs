//! Monte Carlo engine for single-shot readout runs.
//!
//! Each shot: sample an initialization error (nuclear state inverted), then a
//! charge error (defect optically inactive for the whole shot). Every cycle
//! first samples a nuclear flip, then draws Poisson photon counts for each
//! read window of the cycle.
//!
//! Seeding: shot `i` of a batch uses `ChaCha8Rng::seed_from_u64(s_i)` where
//! `s_i` is output `i + 1` of a SplitMix64 generator started at
//! `master_seed ^ salt(prepared)`. Shots are independent, so the batch is the
//! same for any number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Electron, LevelDiagram, Nuclear, PhysicalParams, RegisterState};
use crate::optics::{expected_cycle_photons, propagate, OpticalModel, DEFAULT_STEP_US};
use crate::protocol::{fnv1a, gate_action, ProtocolSpec, Pulse, ReadChannel, ReadSlot};
use crate::stats::{binomial_std_error, PoissonTable};
use crate::{Error, Result};

/// Derived per-window constants for the pulse-level ("microscopic") mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroscopicParams {
    /// Expected detected photons in one read window starting in `±3/2`.
    pub photons_per_window: f64,
    /// Probability that one window pumps the electron out of `±3/2`.
    pub pump_fidelity: f64,
    pub pi_pulse_fidelity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ShotMode {
    /// Read windows are bright or dark according to the nuclear state alone.
    #[default]
    Effective,
    /// The electron is tracked through every pulse of the cycle.
    Microscopic(MicroscopicParams),
}

/// Effective stochastic readout model.
///
/// `lambda_*` are expected detected photons per read window; flips are per
/// readout cycle; `nuclear_init_error` and `charge_error` are per shot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotModel {
    pub lambda_bright: f64,
    pub lambda_dark: f64,
    pub flip_bd: f64,
    pub flip_db: f64,
    pub nuclear_init_error: f64,
    pub charge_error: f64,
    #[serde(default)]
    pub mode: ShotMode,
}

impl Default for ShotModel {
    /// Calibrated against the measured bright/dark means and the raw and
    /// post-selected misread rates (see `analysis::fit_shot_model`).
    fn default() -> Self {
        ShotModel {
            lambda_bright: 0.032_278_37,
            lambda_dark: 2.802_816e-4,
            flip_bd: 7.7e-4,
            flip_db: 8.997_94e-5,
            nuclear_init_error: 0.039_940_53,
            charge_error: 0.117_146_88,
            mode: ShotMode::Effective,
        }
    }
}

impl ShotModel {
    /// Directly measured values before calibration: 2.8 % detection per
    /// window, dark mean 0.4 over 250 windows, symmetric 7.7e-4 flips and a
    /// 93 % initialization. Used as the starting point of the fit.
    pub fn nominal() -> Self {
        ShotModel {
            lambda_bright: 0.028,
            lambda_dark: 0.4 / 250.0,
            flip_bd: 7.7e-4,
            flip_db: 7.7e-4,
            nuclear_init_error: 0.07,
            charge_error: 0.0,
            mode: ShotMode::Effective,
        }
    }

    /// No flips, no preparation errors, no background.
    pub fn ideal(lambda_bright: f64) -> Self {
        ShotModel {
            lambda_bright,
            lambda_dark: 0.0,
            flip_bd: 0.0,
            flip_db: 0.0,
            nuclear_init_error: 0.0,
            charge_error: 0.0,
            mode: ShotMode::Effective,
        }
    }

    /// Pulse-level variant: per-window photons and pumping come from the
    /// optical model, π-pulse errors from the physical parameters.
    pub fn microscopic(
        &self,
        optics: &OpticalModel,
        params: &PhysicalParams,
        laser_window_us: f64,
    ) -> Result<Self> {
        let start = RegisterState::new(Electron::PlusThreeHalves, Nuclear::Up);
        let photons = expected_cycle_photons(optics, laser_window_us, &start)?;
        let curve = propagate(
            &optics.with_start(crate::optics::Populations::in_g32()),
            laser_window_us,
            DEFAULT_STEP_US.min(laser_window_us),
        )?;
        let pump_fidelity = *curve.target_population.last().expect("non-empty curve");
        Ok(ShotModel {
            mode: ShotMode::Microscopic(MicroscopicParams {
                photons_per_window: photons,
                pump_fidelity: pump_fidelity.clamp(0.0, 1.0),
                pi_pulse_fidelity: params.pi_pulse_fidelity,
            }),
            ..*self
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_bright", self.lambda_bright),
            ("lambda_dark", self.lambda_dark),
        ] {
            if !(v.is_finite() && (0.0..=100.0).contains(&v)) {
                return Err(Error::param(name, format!("must lie in [0, 100], got {v}")));
            }
        }
        for (name, v) in [
            ("flip_bd", self.flip_bd),
            ("flip_db", self.flip_db),
            ("nuclear_init_error", self.nuclear_init_error),
            ("charge_error", self.charge_error),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        if let ShotMode::Microscopic(m) = self.mode {
            for (name, v) in [
                ("pump_fidelity", m.pump_fidelity),
                ("pi_pulse_fidelity", m.pi_pulse_fidelity),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::param(name, format!("must lie in [0, 1], got {v}")));
                }
            }
            if !(m.photons_per_window.is_finite() && m.photons_per_window >= 0.0) {
                return Err(Error::param(
                    "photons_per_window",
                    format!("must be >= 0, got {}", m.photons_per_window),
                ));
            }
        }
        Ok(())
    }

    pub fn is_effective(&self) -> bool {
        matches!(self.mode, ShotMode::Effective)
    }

    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(80);
        for v in [
            self.lambda_bright,
            self.lambda_dark,
            self.flip_bd,
            self.flip_db,
            self.nuclear_init_error,
            self.charge_error,
        ] {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        if let ShotMode::Microscopic(m) = self.mode {
            for v in [m.photons_per_window, m.pump_fidelity, m.pi_pulse_fidelity] {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        fnv1a(&bytes)
    }
}

/// Per-cycle photon counts of one read channel, stored sparsely as
/// `(cycle, count)` for the cycles that saw photons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadTrace {
    cycles: u32,
    hits: Vec<(u32, u32)>,
}

impl ReadTrace {
    pub fn empty(cycles: u32) -> Self {
        ReadTrace {
            cycles,
            hits: Vec::new(),
        }
    }

    pub fn from_dense(counts: &[u32]) -> Self {
        ReadTrace {
            cycles: counts.len() as u32,
            hits: counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, &c)| (i as u32, c))
                .collect(),
        }
    }

    #[inline]
    fn push(&mut self, cycle: u32, count: u32) {
        self.hits.push((cycle, count));
    }

    pub fn cycles(&self) -> u32 {
        self.cycles
    }

    pub fn hits(&self) -> &[(u32, u32)] {
        &self.hits
    }

    pub fn total(&self) -> u32 {
        self.hits.iter().map(|h| h.1).sum()
    }

    /// Photons in cycles `0..k`.
    pub fn count_in_first(&self, k: u32) -> u32 {
        self.hits
            .iter()
            .take_while(|h| h.0 < k)
            .map(|h| h.1)
            .sum()
    }

    pub fn dense(&self) -> Vec<u32> {
        let mut out = vec![0; self.cycles as usize];
        for &(c, n) in &self.hits {
            out[c as usize] = n;
        }
        out
    }
}

/// One single-shot readout run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub prepared: Nuclear,
    pub seed: u64,
    pub read1: ReadTrace,
    pub read2: Option<ReadTrace>,
    /// Nuclear state right after initialization (simulation ground truth).
    pub initial_nuclear: Nuclear,
    pub charge_ok: bool,
}

impl ShotRecord {
    pub fn total1(&self) -> u32 {
        self.read1.total()
    }

    pub fn total2(&self) -> Option<u32> {
        self.read2.as_ref().map(ReadTrace::total)
    }

    pub fn counts_read1(&self) -> Vec<u32> {
        self.read1.dense()
    }

    pub fn counts_read2(&self) -> Option<Vec<u32>> {
        self.read2.as_ref().map(ReadTrace::dense)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub prepared: Nuclear,
    pub master_seed: u64,
    pub cycles: u32,
    pub reads_per_cycle: u8,
    pub model: ShotModel,
    pub model_fingerprint: u64,
    pub protocol_fingerprint: u64,
    pub records: Vec<ShotRecord>,
}

impl BatchResult {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn mean_total1(&self) -> f64 {
        self.records.iter().map(|r| r.total1() as f64).sum::<f64>() / self.len() as f64
    }

    /// Empirical distribution of `total1`.
    pub fn total1_distribution(&self) -> Vec<f64> {
        let max = self.records.iter().map(ShotRecord::total1).max().unwrap_or(0) as usize;
        let mut counts = vec![0u64; max + 1];
        for r in &self.records {
            counts[r.total1() as usize] += 1;
        }
        let n = self.len() as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn prepared_salt(prepared: Nuclear) -> u64 {
    match prepared {
        Nuclear::Up => 0,
        Nuclear::Down => 0xD1B5_4A32_D192_ED03,
    }
}

/// Seed of shot `index` within a batch.
pub fn shot_seed(master_seed: u64, prepared: Nuclear, index: u64) -> u64 {
    let state = (master_seed ^ prepared_salt(prepared)).wrapping_add(GOLDEN.wrapping_mul(index + 1));
    splitmix64(state)
}

/// Precomputed sampling tables for one (model, protocol) pair.
struct Engine {
    model: ShotModel,
    cycles: u32,
    dual: bool,
    slots: Vec<ReadSlot>,
    bright: PoissonTable,
    dark: PoissonTable,
    micro: Option<Micro>,
}

struct Micro {
    pulses: Vec<Pulse>,
    params: PhysicalParams,
    diagram: LevelDiagram,
    pump_fidelity: f64,
}

impl Engine {
    fn new(model: &ShotModel, protocol: &ProtocolSpec) -> Result<Self> {
        model.validate()?;
        let diagram = LevelDiagram::standard();
        protocol.validate(&diagram)?;
        let slots = protocol.read_slots(&diagram)?;
        let (bright_mean, micro) = match model.mode {
            ShotMode::Effective => (model.lambda_bright, None),
            ShotMode::Microscopic(m) => {
                let params = PhysicalParams {
                    pi_pulse_fidelity: m.pi_pulse_fidelity,
                    ..Default::default()
                };
                let pulses = protocol.readout.flatten().into_iter().cloned().collect();
                (
                    m.photons_per_window + model.lambda_dark,
                    Some(Micro {
                        pulses,
                        params,
                        diagram,
                        pump_fidelity: m.pump_fidelity,
                    }),
                )
            }
        };
        Ok(Engine {
            model: *model,
            cycles: protocol.cycles,
            dual: protocol.reads_per_cycle == 2,
            slots,
            bright: PoissonTable::new(bright_mean),
            dark: PoissonTable::new(model.lambda_dark),
            micro,
        })
    }

    fn run(&self, prepared: Nuclear, seed: u64) -> ShotRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = &self.model;
        let mut nuclear = if rng.random::<f64>() < m.nuclear_init_error {
            prepared.flipped()
        } else {
            prepared
        };
        let initial_nuclear = nuclear;
        let charge_ok = rng.random::<f64>() >= m.charge_error;

        let mut traces = [ReadTrace::empty(self.cycles), ReadTrace::empty(self.cycles)];
        let mut electron = if rng.random::<f64>() < 0.5 {
            Electron::PlusHalf
        } else {
            Electron::MinusHalf
        };

        for cycle in 0..self.cycles {
            let flip = match nuclear {
                Nuclear::Up => m.flip_bd,
                Nuclear::Down => m.flip_db,
            };
            if flip > 0.0 && rng.random::<f64>() < flip {
                nuclear = nuclear.flipped();
            }
            match &self.micro {
                None => {
                    for slot in &self.slots {
                        let table = if charge_ok && slot.addresses == nuclear {
                            &self.bright
                        } else {
                            &self.dark
                        };
                        let k = table.sample(&mut rng);
                        if k > 0 {
                            traces[slot.channel.index()].push(cycle, k);
                        }
                    }
                }
                Some(micro) => {
                    electron =
                        self.micro_cycle(micro, cycle, nuclear, charge_ok, electron, &mut traces, &mut rng);
                }
            }
        }

        let [read1, read2] = traces;
        ShotRecord {
            prepared,
            seed,
            read1,
            read2: self.dual.then_some(read2),
            initial_nuclear,
            charge_ok,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn micro_cycle(
        &self,
        micro: &Micro,
        cycle: u32,
        nuclear: Nuclear,
        charge_ok: bool,
        mut electron: Electron,
        traces: &mut [ReadTrace; 2],
        rng: &mut ChaCha8Rng,
    ) -> Electron {
        for pulse in &micro.pulses {
            match pulse {
                Pulse::Laser { label, read, .. } => {
                    let three_halves = label == "A2";
                    let cycling = if three_halves {
                        electron.is_three_halves()
                    } else {
                        electron.is_one_half()
                    };
                    let emitting = charge_ok && cycling;
                    if let Some(channel) = read {
                        let table = if emitting { &self.bright } else { &self.dark };
                        let k = table.sample(rng);
                        if k > 0 {
                            traces[channel.index()].push(cycle, k);
                        }
                    }
                    if emitting && rng.random::<f64>() < micro.pump_fidelity {
                        electron = match electron {
                            Electron::PlusThreeHalves => Electron::PlusHalf,
                            Electron::MinusThreeHalves => Electron::MinusHalf,
                            Electron::PlusHalf => Electron::PlusThreeHalves,
                            Electron::MinusHalf => Electron::MinusThreeHalves,
                            Electron::Shelved => Electron::Shelved,
                        };
                    }
                }
                other => {
                    let state = RegisterState {
                        electron,
                        nuclear,
                        charge_ok,
                    };
                    // Labels were validated when the engine was built.
                    electron = gate_action(other, state, &micro.params, &micro.diagram, rng)
                        .map(|s| s.electron)
                        .unwrap_or(electron);
                }
            }
        }
        electron
    }
}

/// Simulates one shot from an explicit seed.
pub fn simulate_shot(
    model: &ShotModel,
    protocol: &ProtocolSpec,
    prepared: Nuclear,
    seed: u64,
) -> Result<ShotRecord> {
    Ok(Engine::new(model, protocol)?.run(prepared, seed))
}

/// Simulates `n_shots` independent shots. Records are ordered by shot index.
pub fn simulate_batch(
    model: &ShotModel,
    protocol: &ProtocolSpec,
    prepared: Nuclear,
    n_shots: usize,
    master_seed: u64,
) -> Result<BatchResult> {
    if n_shots == 0 {
        return Err(Error::param("n_shots", "must be >= 1"));
    }
    let engine = Engine::new(model, protocol)?;
    let one = |i: usize| engine.run(prepared, shot_seed(master_seed, prepared, i as u64));

    #[cfg(feature = "parallel")]
    let records: Vec<ShotRecord> = {
        use rayon::prelude::*;
        (0..n_shots).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let records: Vec<ShotRecord> = (0..n_shots).map(one).collect();

    Ok(BatchResult {
        prepared,
        master_seed,
        cycles: protocol.cycles,
        reads_per_cycle: protocol.reads_per_cycle,
        model: *model,
        model_fingerprint: model.fingerprint(),
        protocol_fingerprint: protocol.fingerprint(),
        records,
    })
}

/// Per-cycle detection statistics of one read channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCurve {
    pub shots: u64,
    /// Number of shots with at least one photon in each cycle.
    pub detections: Vec<u64>,
}

impl DetectionCurve {
    pub fn probability(&self) -> Vec<f64> {
        self.detections
            .iter()
            .map(|&d| d as f64 / self.shots as f64)
            .collect()
    }

    pub fn std_error(&self) -> Vec<f64> {
        self.probability()
            .into_iter()
            .map(|p| binomial_std_error(p, self.shots))
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "cycle,detection_probability,std_error")?;
        for (k, (p, e)) in self.probability().iter().zip(self.std_error()).enumerate() {
            writeln!(w, "{},{},{}", k + 1, p, e)?;
        }
        Ok(())
    }
}

/// Fraction of shots with at least one photon in cycle `k`, for every `k`.
pub fn cycle_detection_curve(batch: &BatchResult) -> Result<DetectionCurve> {
    cycle_detection_curve_for(batch, ReadChannel::Read1)
}

pub fn cycle_detection_curve_for(batch: &BatchResult, channel: ReadChannel) -> Result<DetectionCurve> {
    if batch.is_empty() {
        return Err(Error::param("batch", "batch is empty"));
    }
    let mut detections = vec![0u64; batch.cycles as usize];
    for r in &batch.records {
        let trace = match channel {
            ReadChannel::Read1 => &r.read1,
            ReadChannel::Read2 => r.read2.as_ref().ok_or_else(|| {
                Error::ModeMismatch("batch has no second read channel".into())
            })?,
        };
        for &(c, _) in trace.hits() {
            detections[c as usize] += 1;
        }
    }
    Ok(DetectionCurve {
        shots: batch.len() as u64,
        detections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{build_dual_step_readout, build_standard_readout};

    fn standard() -> ProtocolSpec {
        build_standard_readout(&PhysicalParams::default()).unwrap()
    }

    #[test]
    fn totals_match_lists() {
        let rec = simulate_shot(&ShotModel::default(), &standard(), Nuclear::Up, 11).unwrap();
        let dense = rec.counts_read1();
        assert_eq!(dense.len(), 250);
        assert_eq!(dense.iter().sum::<u32>(), rec.total1());
        assert_eq!(rec.read1.count_in_first(250), rec.total1());
        assert!(rec.read2.is_none());
        assert_eq!(ReadTrace::from_dense(&dense), rec.read1);
    }

    #[test]
    fn dual_records_have_two_channels() {
        let p = build_dual_step_readout(&PhysicalParams::default()).unwrap();
        let rec = simulate_shot(&ShotModel::default(), &p, Nuclear::Down, 3).unwrap();
        assert_eq!(rec.counts_read2().unwrap().len(), 250);
    }

    #[test]
    fn shot_is_reproducible_from_its_seed() {
        let b = simulate_batch(&ShotModel::default(), &standard(), Nuclear::Up, 50, 7).unwrap();
        let r = &b.records[17];
        let again = simulate_shot(&ShotModel::default(), &standard(), Nuclear::Up, r.seed).unwrap();
        assert_eq!(&again, r);
    }

    #[test]
    fn same_master_seed_same_batch() {
        let a = simulate_batch(&ShotModel::default(), &standard(), Nuclear::Down, 500, 42).unwrap();
        let b = simulate_batch(&ShotModel::default(), &standard(), Nuclear::Down, 500, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_batch(&ShotModel::default(), &standard(), Nuclear::Down, 500, 43).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn zero_shots_rejected() {
        assert!(simulate_batch(&ShotModel::default(), &standard(), Nuclear::Up, 0, 1).is_err());
    }

    #[test]
    fn ideal_bright_mean_is_seven() {
        let b = simulate_batch(&ShotModel::ideal(0.028), &standard(), Nuclear::Up, 100_000, 1).unwrap();
        let mean = b.mean_total1();
        // σ_mean = sqrt(7 / 1e5) ≈ 0.0084
        assert!((mean - 7.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn flat_curve_without_flips() {
        let b = simulate_batch(&ShotModel::ideal(0.028), &standard(), Nuclear::Up, 40_000, 2).unwrap();
        let curve = cycle_detection_curve(&b).unwrap();
        let expected = 1.0 - (-0.028f64).exp();
        let p = curve.probability();
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        let se = (expected * (1.0 - expected) / (40_000.0 * 250.0)).sqrt();
        assert!((mean - expected).abs() < 5.0 * se, "{mean} vs {expected}");
    }

    #[test]
    fn microscopic_mode_tracks_the_electron() {
        let optics = OpticalModel::default();
        let params = PhysicalParams {
            pi_pulse_fidelity: 1.0,
            ..Default::default()
        };
        let ideal = ShotModel::ideal(0.0).microscopic(&optics, &params, 1.5).unwrap();
        let ShotMode::Microscopic(mp) = ideal.mode else {
            unreachable!()
        };
        let b = simulate_batch(&ideal, &standard(), Nuclear::Up, 20_000, 9).unwrap();
        // A window that fails to pump leaves the electron in ±3/2, which the
        // next mapping gate turns dark; that cycle's successor is bright again.
        let q = mp.pump_fidelity;
        let bright_fraction = 1.0 / (2.0 - q);
        let expected = 250.0 * mp.photons_per_window * bright_fraction;
        let mean = b.mean_total1();
        assert!((mean - expected).abs() < 0.05 * expected, "{mean} vs {expected}");

        let dark = simulate_batch(&ideal, &standard(), Nuclear::Down, 2_000, 9).unwrap();
        assert_eq!(dark.mean_total1(), 0.0);
    }

    #[test]
    fn invalid_model_rejected() {
        let m = ShotModel {
            flip_bd: 1.5,
            ..Default::default()
        };
        assert!(simulate_shot(&m, &standard(), Nuclear::Up, 0).is_err());
    }
}
