//! Pulse schedules for initialization and repetitive readout, and the action
//! of each pulse on the electron–nuclear register.

mod text;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Electron, LevelDiagram, Nuclear, PhysicalParams, RegisterState};
use crate::{Error, Result};

pub use text::{parse_sequence, parse_sequence_with, print_blocks, print_sequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadChannel {
    Read1,
    Read2,
}

impl ReadChannel {
    pub fn index(self) -> usize {
        match self {
            ReadChannel::Read1 => 0,
            ReadChannel::Read2 => 1,
        }
    }
}

impl fmt::Display for ReadChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReadChannel::Read1 => "read1",
            ReadChannel::Read2 => "read2",
        })
    }
}

/// Durations are in µs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Pulse {
    MwPi {
        label: String,
    },
    Laser {
        label: String,
        duration_us: f64,
        read: Option<ReadChannel>,
    },
    Wait {
        duration_us: f64,
    },
    /// Electron → nuclear state transfer (net effect of the swap-gate
    /// composition), restricted to the `+3/2 / +1/2` electron subspace.
    Swap {
        duration_us: f64,
    },
}

impl Pulse {
    pub fn mw(label: &str) -> Self {
        Pulse::MwPi {
            label: label.to_string(),
        }
    }

    pub fn laser(label: &str, duration_us: f64, read: Option<ReadChannel>) -> Self {
        Pulse::Laser {
            label: label.to_string(),
            duration_us,
            read,
        }
    }

    /// Scheduled length; π pulses take `pi_pulse_us`.
    pub fn duration_us(&self, pi_pulse_us: f64) -> f64 {
        match self {
            Pulse::MwPi { .. } => pi_pulse_us,
            Pulse::Laser { duration_us, .. }
            | Pulse::Wait { duration_us }
            | Pulse::Swap { duration_us } => *duration_us,
        }
    }

    fn validate(&self, diagram: &LevelDiagram) -> Result<()> {
        let check_duration = |d: f64| {
            if d > 0.0 && d.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidProtocol(format!(
                    "pulse duration must be > 0, got {d}"
                )))
            }
        };
        match self {
            Pulse::MwPi { label } => diagram.microwave(label).map(|_| ()),
            Pulse::Laser {
                label, duration_us, ..
            } => {
                if !diagram.is_optical(label)? {
                    return Err(Error::UnknownLabel(format!(
                        "{label} (microwave line used as a laser)"
                    )));
                }
                check_duration(*duration_us)
            }
            Pulse::Wait { duration_us } | Pulse::Swap { duration_us } => {
                check_duration(*duration_us)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Pulse(Pulse),
    Repeat { count: u32, body: Vec<Block> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub name: String,
    pub blocks: Vec<Block>,
}

impl Sequence {
    pub fn new(name: &str, pulses: impl IntoIterator<Item = Pulse>) -> Self {
        Sequence {
            name: name.to_string(),
            blocks: pulses.into_iter().map(Block::Pulse).collect(),
        }
    }

    pub fn validate(&self, diagram: &LevelDiagram) -> Result<()> {
        fn walk(blocks: &[Block], diagram: &LevelDiagram) -> Result<()> {
            for b in blocks {
                match b {
                    Block::Pulse(p) => p.validate(diagram)?,
                    Block::Repeat { count, body } => {
                        if *count == 0 {
                            return Err(Error::InvalidProtocol(
                                "repeat count must be >= 1".into(),
                            ));
                        }
                        walk(body, diagram)?;
                    }
                }
            }
            Ok(())
        }
        walk(&self.blocks, diagram)
    }

    /// Pulses in execution order with repeats unrolled.
    pub fn flatten(&self) -> Vec<&Pulse> {
        fn walk<'a>(blocks: &'a [Block], out: &mut Vec<&'a Pulse>) {
            for b in blocks {
                match b {
                    Block::Pulse(p) => out.push(p),
                    Block::Repeat { count, body } => {
                        for _ in 0..*count {
                            walk(body, out);
                        }
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.blocks, &mut out);
        out
    }

    pub fn duration_us(&self, pi_pulse_us: f64) -> f64 {
        fn walk(blocks: &[Block], pi: f64) -> f64 {
            blocks
                .iter()
                .map(|b| match b {
                    Block::Pulse(p) => p.duration_us(pi),
                    Block::Repeat { count, body } => *count as f64 * walk(body, pi),
                })
                .sum()
        }
        walk(&self.blocks, pi_pulse_us)
    }

    pub fn read_slot_count(&self) -> usize {
        self.flatten()
            .iter()
            .filter(|p| matches!(p, Pulse::Laser { read: Some(_), .. }))
            .count()
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_sequence(self))
    }
}

/// Timing knobs of the standard schedules (µs). The π-pulse length is not a
/// measured quantity; 1.51 µs makes 250 cycles last 1.13 ms, and the
/// initialization blocks add up to the 0.11 ms between that and 1.24 ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutTiming {
    pub cycles: u32,
    pub pi_pulse_us: f64,
    pub laser_window_us: f64,
    pub electron_init_us: f64,
    pub swap_us: f64,
    pub pre_pump_us: f64,
}

impl Default for ReadoutTiming {
    fn default() -> Self {
        ReadoutTiming {
            cycles: 250,
            pi_pulse_us: 1.51,
            laser_window_us: 1.5,
            electron_init_us: 50.0,
            swap_us: 50.0,
            pre_pump_us: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub init: Sequence,
    /// One readout cycle.
    pub readout: Sequence,
    pub cycles: u32,
    pub reads_per_cycle: u8,
    pub pi_pulse_us: f64,
}

/// Where a read window sits in the cycle and which nuclear state its mapping
/// gates address (the state that makes this window bright).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadSlot {
    pub channel: ReadChannel,
    pub addresses: Nuclear,
}

impl ProtocolSpec {
    pub fn validate(&self, diagram: &LevelDiagram) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::InvalidProtocol("cycles must be >= 1".into()));
        }
        if !(self.pi_pulse_us > 0.0) {
            return Err(Error::InvalidProtocol(
                "π-pulse duration must be > 0".into(),
            ));
        }
        self.init.validate(diagram)?;
        self.readout.validate(diagram)?;
        let slots = self.read_slots(diagram)?;
        let channels: Vec<ReadChannel> = {
            let mut c: Vec<_> = slots.iter().map(|s| s.channel).collect();
            c.sort_by_key(|c| c.index());
            c.dedup();
            c
        };
        let expected: &[ReadChannel] = match self.reads_per_cycle {
            1 => &[ReadChannel::Read1],
            2 => &[ReadChannel::Read1, ReadChannel::Read2],
            n => {
                return Err(Error::InvalidProtocol(format!(
                    "reads_per_cycle must be 1 or 2, got {n}"
                )))
            }
        };
        if channels != expected {
            return Err(Error::InvalidProtocol(format!(
                "read tags {channels:?} do not match reads_per_cycle = {}",
                self.reads_per_cycle
            )));
        }
        Ok(())
    }

    /// Read windows of one cycle. Each must be preceded (within the cycle) by
    /// a conditional π pulse, whose nuclear condition it inherits.
    pub fn read_slots(&self, diagram: &LevelDiagram) -> Result<Vec<ReadSlot>> {
        let mut condition = None;
        let mut out = Vec::new();
        for p in self.readout.flatten() {
            match p {
                Pulse::MwPi { label } => condition = Some(diagram.microwave(label)?.1),
                Pulse::Laser {
                    read: Some(channel),
                    ..
                } => {
                    let addresses = condition.ok_or_else(|| {
                        Error::InvalidProtocol(format!(
                            "{channel} window is not preceded by a mapping gate"
                        ))
                    })?;
                    out.push(ReadSlot {
                        channel: *channel,
                        addresses,
                    });
                }
                _ => {}
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidProtocol(
                "readout cycle has no read window".into(),
            ));
        }
        Ok(out)
    }

    pub fn cycle_duration_us(&self) -> f64 {
        self.readout.duration_us(self.pi_pulse_us)
    }

    pub fn readout_duration_us(&self) -> f64 {
        self.cycles as f64 * self.cycle_duration_us()
    }

    pub fn init_duration_us(&self) -> f64 {
        self.init.duration_us(self.pi_pulse_us)
    }

    pub fn total_duration_us(&self) -> f64 {
        self.init_duration_us() + self.readout_duration_us()
    }

    pub fn laser_time_per_cycle_us(&self) -> f64 {
        self.readout
            .flatten()
            .iter()
            .map(|p| match p {
                Pulse::Laser { duration_us, .. } => *duration_us,
                _ => 0.0,
            })
            .sum()
    }

    /// Same protocol with a different cycle count.
    pub fn with_cycles(&self, cycles: u32) -> Result<Self> {
        if cycles == 0 {
            return Err(Error::InvalidProtocol("cycles must be >= 1".into()));
        }
        Ok(ProtocolSpec {
            cycles,
            ..self.clone()
        })
    }

    /// Stable 64-bit FNV-1a digest of the printed schedule.
    pub fn fingerprint(&self) -> u64 {
        let text = format!(
            "{}\n--\n{}\ncycles={} reads={} pi={}",
            print_sequence(&self.init),
            print_sequence(&self.readout),
            self.cycles,
            self.reads_per_cycle,
            self.pi_pulse_us
        );
        fnv1a(text.as_bytes())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Electron initialization, swap onto the nucleus, then a weak A2 pump that
/// parks the electron in `±1/2` before the first readout cycle.
pub fn build_init(timing: &ReadoutTiming) -> Sequence {
    Sequence::new(
        "init",
        [
            Pulse::laser("A1", timing.electron_init_us, None),
            Pulse::Swap {
                duration_us: timing.swap_us,
            },
            Pulse::laser("A2", timing.pre_pump_us, None),
        ],
    )
}

pub fn build_standard_readout(params: &PhysicalParams) -> Result<ProtocolSpec> {
    build_standard_readout_with(params, &ReadoutTiming::default())
}

/// Per cycle: MW1A π, MW3A π, A2 laser window counted as `read1`.
pub fn build_standard_readout_with(
    params: &PhysicalParams,
    timing: &ReadoutTiming,
) -> Result<ProtocolSpec> {
    params.validate()?;
    let readout = Sequence::new(
        "readout",
        [
            Pulse::mw("MW1A"),
            Pulse::mw("MW3A"),
            Pulse::laser("A2", timing.laser_window_us, Some(ReadChannel::Read1)),
        ],
    );
    finish(timing, readout, 1)
}

pub fn build_dual_step_readout(params: &PhysicalParams) -> Result<ProtocolSpec> {
    build_dual_step_readout_with(params, &ReadoutTiming::default())
}

/// Per cycle: the standard `read1` block, then MW1B π, MW3B π and a second A2
/// window counted as `read2`.
pub fn build_dual_step_readout_with(
    params: &PhysicalParams,
    timing: &ReadoutTiming,
) -> Result<ProtocolSpec> {
    params.validate()?;
    let readout = Sequence::new(
        "dual_readout",
        [
            Pulse::mw("MW1A"),
            Pulse::mw("MW3A"),
            Pulse::laser("A2", timing.laser_window_us, Some(ReadChannel::Read1)),
            Pulse::mw("MW1B"),
            Pulse::mw("MW3B"),
            Pulse::laser("A2", timing.laser_window_us, Some(ReadChannel::Read2)),
        ],
    );
    finish(timing, readout, 2)
}

fn finish(timing: &ReadoutTiming, readout: Sequence, reads: u8) -> Result<ProtocolSpec> {
    let spec = ProtocolSpec {
        init: build_init(timing),
        readout,
        cycles: timing.cycles,
        reads_per_cycle: reads,
        pi_pulse_us: timing.pi_pulse_us,
    };
    spec.validate(&LevelDiagram::standard())?;
    Ok(spec)
}

fn partner(pair: (Electron, Electron), e: Electron) -> Option<Electron> {
    if e == pair.0 {
        Some(pair.1)
    } else if e == pair.1 {
        Some(pair.0)
    } else {
        None
    }
}

/// Applies one pulse to the register.
///
/// A conditional π pulse flips its electron pair with probability
/// `pi_pulse_fidelity` when the nucleus matches its condition; a failed pulse
/// leaves the population in place. Lasers and waits leave the register
/// untouched here (optical emission and pumping belong to the trajectory
/// engine). The swap copies `+3/2 → ↑`, `+1/2 → ↓` onto the nucleus with
/// success probability `nuclear_init_fidelity` and hands the old nuclear
/// state back to the electron.
pub fn gate_action<R: Rng + ?Sized>(
    pulse: &Pulse,
    state: RegisterState,
    params: &PhysicalParams,
    diagram: &LevelDiagram,
    rng: &mut R,
) -> Result<RegisterState> {
    match pulse {
        Pulse::MwPi { label } => {
            let (pair, condition) = diagram.microwave(label)?;
            if state.nuclear != condition {
                return Ok(state);
            }
            match partner(pair, state.electron) {
                Some(target) if rng.random::<f64>() < params.pi_pulse_fidelity => {
                    Ok(RegisterState {
                        electron: target,
                        ..state
                    })
                }
                _ => Ok(state),
            }
        }
        Pulse::Laser { label, .. } => {
            diagram.transition(label)?;
            Ok(state)
        }
        Pulse::Wait { .. } => Ok(state),
        Pulse::Swap { .. } => {
            let copied = match state.electron {
                Electron::PlusThreeHalves => Nuclear::Up,
                Electron::PlusHalf => Nuclear::Down,
                _ => return Ok(state),
            };
            let nuclear = if rng.random::<f64>() < params.nuclear_init_fidelity {
                copied
            } else {
                copied.flipped()
            };
            let electron = match state.nuclear {
                Nuclear::Up => Electron::PlusThreeHalves,
                Nuclear::Down => Electron::PlusHalf,
            };
            Ok(RegisterState {
                electron,
                nuclear,
                charge_ok: state.charge_ok,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ideal() -> PhysicalParams {
        PhysicalParams {
            pi_pulse_fidelity: 1.0,
            nuclear_init_fidelity: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn standard_readout_shape() {
        let p = build_standard_readout(&PhysicalParams::default()).unwrap();
        assert_eq!(p.cycles, 250);
        assert_eq!(p.reads_per_cycle, 1);
        assert_eq!(p.laser_time_per_cycle_us(), 1.5);
        assert_eq!(p.readout.read_slot_count(), 1);
        // 250 × (1.5 + 2 × 1.51) µs
        assert!((p.readout_duration_us() - 1130.0).abs() < 1e-9);
        assert!((p.total_duration_us() - 1240.0).abs() < 1e-9);
    }

    #[test]
    fn single_cycle_has_one_read_slot() {
        let timing = ReadoutTiming {
            cycles: 1,
            ..Default::default()
        };
        let p = build_standard_readout_with(&PhysicalParams::default(), &timing).unwrap();
        let total: usize = (0..p.cycles).map(|_| p.readout.read_slot_count()).sum();
        assert_eq!(total, 1);
    }

    #[test]
    fn dual_step_shape() {
        let p = build_dual_step_readout(&PhysicalParams::default()).unwrap();
        assert_eq!(p.reads_per_cycle, 2);
        assert_eq!(p.cycles, 250);
        assert_eq!(p.laser_time_per_cycle_us(), 3.0);
        let slots = p.read_slots(&LevelDiagram::standard()).unwrap();
        assert_eq!(
            slots,
            vec![
                ReadSlot {
                    channel: ReadChannel::Read1,
                    addresses: Nuclear::Up
                },
                ReadSlot {
                    channel: ReadChannel::Read2,
                    addresses: Nuclear::Down
                },
            ]
        );
    }

    #[test]
    fn zero_cycles_rejected() {
        let timing = ReadoutTiming {
            cycles: 0,
            ..Default::default()
        };
        assert!(matches!(
            build_dual_step_readout_with(&PhysicalParams::default(), &timing),
            Err(Error::InvalidProtocol(_))
        ));
    }

    #[test]
    fn read_without_mapping_gate_rejected() {
        let mut p = build_standard_readout(&PhysicalParams::default()).unwrap();
        p.readout = Sequence::new("bad", [Pulse::laser("A2", 1.5, Some(ReadChannel::Read1))]);
        assert!(p.validate(&LevelDiagram::standard()).is_err());
    }

    #[test]
    fn cnot_flips_only_for_up() {
        let d = LevelDiagram::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = RegisterState::new(Electron::PlusHalf, Nuclear::Up);
        let out = gate_action(&Pulse::mw("MW3A"), s, &ideal(), &d, &mut rng).unwrap();
        assert_eq!(out.electron, Electron::PlusThreeHalves);

        let s = RegisterState::new(Electron::PlusHalf, Nuclear::Down);
        let out = gate_action(&Pulse::mw("MW3A"), s, &ideal(), &d, &mut rng).unwrap();
        assert_eq!(out, s);

        // not addressed by the MW3 pair
        let s = RegisterState::new(Electron::MinusHalf, Nuclear::Up);
        let out = gate_action(&Pulse::mw("MW3A"), s, &ideal(), &d, &mut rng).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn pi_pulse_infidelity_is_binomial() {
        let d = LevelDiagram::standard();
        let params = PhysicalParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let trials = 100_000;
        let s = RegisterState::new(Electron::MinusHalf, Nuclear::Up);
        let flips = (0..trials)
            .filter(|_| {
                gate_action(&Pulse::mw("MW1A"), s, &params, &d, &mut rng)
                    .unwrap()
                    .electron
                    == Electron::MinusThreeHalves
            })
            .count();
        let frac = flips as f64 / trials as f64;
        let sigma = (0.967 * 0.033 / trials as f64).sqrt();
        assert!((frac - 0.967).abs() < 3.0 * sigma, "{frac}");
    }

    #[test]
    fn swap_copies_electron_onto_nucleus() {
        let d = LevelDiagram::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let swap = Pulse::Swap { duration_us: 50.0 };
        for n in [Nuclear::Up, Nuclear::Down] {
            let s = RegisterState::new(Electron::PlusThreeHalves, n);
            assert_eq!(
                gate_action(&swap, s, &ideal(), &d, &mut rng).unwrap().nuclear,
                Nuclear::Up
            );
            let s = RegisterState::new(Electron::PlusHalf, n);
            assert_eq!(
                gate_action(&swap, s, &ideal(), &d, &mut rng).unwrap().nuclear,
                Nuclear::Down
            );
        }
    }

    #[test]
    fn gates_never_touch_charge_state() {
        let d = LevelDiagram::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pulses = [
            Pulse::mw("MW1A"),
            Pulse::mw("MW3B"),
            Pulse::laser("A2", 1.5, None),
            Pulse::Wait { duration_us: 1.0 },
            Pulse::Swap { duration_us: 1.0 },
        ];
        for charge_ok in [true, false] {
            for e in Electron::GROUND.into_iter().chain([Electron::Shelved]) {
                for p in &pulses {
                    let s = RegisterState {
                        electron: e,
                        nuclear: Nuclear::Up,
                        charge_ok,
                    };
                    let out = gate_action(p, s, &PhysicalParams::default(), &d, &mut rng).unwrap();
                    assert_eq!(out.charge_ok, charge_ok);
                }
            }
        }
    }

    #[test]
    fn unresolvable_label() {
        let d = LevelDiagram::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = RegisterState::new(Electron::PlusHalf, Nuclear::Up);
        assert!(gate_action(&Pulse::mw("MW9A"), s, &ideal(), &d, &mut rng).is_err());
        assert!(gate_action(&Pulse::mw("A2"), s, &ideal(), &d, &mut rng).is_err());
    }
}
