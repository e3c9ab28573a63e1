use std::path::{Path, PathBuf};

use nuclear_readout::analysis::{ClassifierConfig, FitTargets};
use nuclear_readout::model::LevelDiagram;
use nuclear_readout::optics::OpticalModel;
use nuclear_readout::protocol::{
    build_dual_step_readout_with, build_init, build_standard_readout_with, parse_sequence,
    ProtocolSpec, ReadoutTiming,
};
use nuclear_readout::{PhysicalParams, ShotModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Built-in profile, also shipped as `configs/default.json`.
pub const DEFAULT_PROFILE: &str = include_str!("../../../configs/default.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutKind {
    #[default]
    Standard,
    DualStep,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub readout: ReadoutKind,
    pub timing: ReadoutTiming,
    /// Replaces the built-in readout cycle; written in the sequence language.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle_text: Option<String>,
}

impl ProtocolConfig {
    pub fn build(&self, params: &PhysicalParams, kind: ReadoutKind) -> CliResult<ProtocolSpec> {
        if let Some(text) = &self.cycle_text {
            let mut readout = parse_sequence(text)?;
            readout.name = "readout".into();
            let reads = readout.read_slot_count();
            let spec = ProtocolSpec {
                init: build_init(&self.timing),
                readout,
                cycles: self.timing.cycles,
                reads_per_cycle: u8::try_from(reads).unwrap_or(u8::MAX),
                pi_pulse_us: self.timing.pi_pulse_us,
            };
            spec.validate(&LevelDiagram::standard())?;
            return Ok(spec);
        }
        Ok(match kind {
            ReadoutKind::Standard => build_standard_readout_with(params, &self.timing)?,
            ReadoutKind::DualStep => build_dual_step_readout_with(params, &self.timing)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub physical: PhysicalParams,
    pub optics: OpticalModel,
    pub shot_model: ShotModel,
    pub protocol: ProtocolConfig,
    pub classifier: ClassifierConfig,
    pub fit_targets: FitTargets,
    pub shots: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Write per-cycle count arrays into batch files.
    pub full_cycles: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            physical: PhysicalParams::default(),
            optics: OpticalModel::default(),
            shot_model: ShotModel::default(),
            protocol: ProtocolConfig::default(),
            classifier: ClassifierConfig::default(),
            fit_targets: FitTargets::reference(),
            shots: 100_000,
            seed: 42,
            out_dir: PathBuf::from("out"),
            full_cycles: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// A file path, or the name of a built-in profile.
    pub fn load(source: &str) -> CliResult<(Self, Option<PathBuf>)> {
        if source == "default" && !Path::new(source).exists() {
            return Ok((Self::from_json(DEFAULT_PROFILE)?, None));
        }
        let path = PathBuf::from(source);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Ok((Self::from_json(&text)?, Some(path)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.physical.validate()?;
        self.optics.validate()?;
        self.shot_model.validate()?;
        self.classifier.validate(self.protocol.timing.cycles)?;
        if self.shots == 0 {
            return Err(CliError::Config("shots must be >= 1".into()));
        }
        self.protocol()?;
        Ok(())
    }

    pub fn protocol(&self) -> CliResult<ProtocolSpec> {
        self.protocol.build(&self.physical, self.protocol.readout)
    }

    pub fn protocol_of(&self, kind: ReadoutKind) -> CliResult<ProtocolSpec> {
        self.protocol.build(&self.physical, kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profile_is_the_builtin_default() {
        let (c, path) = RunConfig::load("default").unwrap();
        assert!(path.is_none());
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_json(r#"{"shots": 10, "colour": "blue"}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("colour"));
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c = RunConfig::from_json(r#"{"shots": 10, "seed": 1}"#).unwrap();
        assert_eq!(c.shots, 10);
        assert_eq!(c.shot_model, ShotModel::default());
    }

    #[test]
    fn custom_cycle_text() {
        let c = RunConfig::from_json(
            r#"{"protocol": {"cycle_text": "mw_pi MW1A;\nmw_pi MW3A;\nlaser A2 1.5us read1;\n"}}"#,
        )
        .unwrap();
        let p = c.protocol().unwrap();
        assert_eq!(p.reads_per_cycle, 1);
        assert!(RunConfig::from_json(r#"{"protocol": {"cycle_text": "laser A9 1us;"}}"#).is_err());
    }
}
