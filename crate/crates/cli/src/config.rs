//! Run configuration: one JSON document plus dotted-path overrides.

use std::path::{Path, PathBuf};

use hom_core::experiment_sim::{DetectionConfig, ExperimentPhysics, HeightMode, SequenceConfig};
use hom_core::spatial_mode::{AlignmentError, GaussianMode};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;
use crate::units;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; simulation commands refuse to run without one.
    pub seed: Option<u64>,
    pub n_loads: usize,
    /// Independent load batches used for the jackknife errors.
    pub batches: usize,
    pub sequence: SequenceConfig,
    pub detection: DetectionConfig,
    pub physics: ExperimentPhysics,
    pub analysis: AnalysisConfig,
    pub modes: ModeConfig,
    pub scan: ScanConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            n_loads: 100_000,
            batches: 20,
            sequence: SequenceConfig::default(),
            detection: DetectionConfig::default(),
            physics: ExperimentPhysics::default(),
            analysis: AnalysisConfig::default(),
            modes: ModeConfig::default(),
            scan: ScanConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub height_mode: HeightMode,
    /// Half-width of the zero-delay fit window, s.
    pub zero_window: f64,
    pub amplitude: AmplitudeChoice,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            height_mode: HeightMode::Area,
            zero_window: 100e-9,
            amplitude: AmplitudeChoice::Fixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeChoice {
    Fixed,
    Profiled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModeConfig {
    pub base: GaussianMode,
    pub errors: Vec<AlignmentError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub k_max: f64,
    /// Transverse displacements, m.
    pub offsets: Vec<f64>,
    /// Simulate each displacement instead of evaluating the closed form.
    pub simulate: bool,
    pub n_loads: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            k_max: 0.78,
            offsets: (-6..=6).map(|i| f64::from(i) * 25e-6).collect(),
            simulate: false,
            n_loads: 60_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("hom-out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.sequence.validate()?;
        self.detection.validate()?;
        self.physics.validate()?;
        self.modes.base.validate()?;
        if self.n_loads == 0 || self.scan.n_loads == 0 {
            return Err(CliError::Config("n_loads must be positive".into()));
        }
        if self.batches < 2 || self.batches > self.n_loads.min(self.scan.n_loads) {
            return Err(CliError::Config(format!(
                "batches must lie between 2 and the number of loads, got {}",
                self.batches
            )));
        }
        if !(self.analysis.zero_window > 0.0 && self.analysis.zero_window <= 0.5 * self.sequence.pulse_period) {
            return Err(CliError::Config(format!(
                "analysis.zero_window must lie in (0, half the pulse period], got {:e} s",
                self.analysis.zero_window
            )));
        }
        Ok(())
    }

    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Config("a seed is required: set \"seed\" in the config or pass --seed".into()))
    }
}

/// Read the config document at `path`, or an empty document. A run
/// manifest is accepted in place of a config and yields its recorded one.
pub fn load_document(path: Option<&Path>) -> Result<Value, CliError> {
    let Some(path) = path else {
        return Ok(Value::Object(Default::default()));
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))?;
    match doc {
        Value::Object(mut map) if map.contains_key("config_hash") && map.contains_key("config") => {
            Ok(map.remove("config").unwrap_or_default())
        }
        Value::Object(_) => Ok(doc),
        _ => Err(CliError::Config(format!(
            "{}: config must be a JSON object",
            path.display()
        ))),
    }
}

/// Set `path` (dot-separated) in `doc`, creating objects on the way.
/// Text that parses as JSON is inserted as such, anything else as a string.
pub fn set_path(doc: &mut Value, path: &str, raw: &str) -> Result<(), CliError> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_value(doc, path, value)
}

pub fn set_value(doc: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("malformed override path {path:?}")));
    }
    let mut node = doc;
    for (i, key) in keys.iter().enumerate() {
        if !node.is_object() {
            return Err(CliError::Config(format!(
                "override {path:?}: {} is not an object",
                keys[..i].join(".")
            )));
        }
        let map = node.as_object_mut().expect("checked above");
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("path has at least one key")
}

/// Parse an override given as `path=value`.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not of the form path=value")))?;
    set_path(doc, path.trim(), raw.trim())
}

/// Convert units, deserialize and validate.
pub fn resolve(mut doc: Value) -> Result<RunConfig, CliError> {
    units::normalize(&mut doc).map_err(CliError::Config)?;
    let cfg: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{path}: {}", e.into_inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}
