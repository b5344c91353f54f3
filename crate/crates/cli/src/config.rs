//! Pipeline configuration file. All quantities are SI; key suffixes name the
//! unit.

use std::path::{Path, PathBuf};

use biphoton_core::convchan::{ConversionChannelSpec, ConverterSettings};
use biphoton_core::correlator::BinningSpec;
use biphoton_core::model::{BiphotonModel, EmissionStatistics, SourceSettings, Waveform};
use biphoton_core::simkit::DetectorSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub waveform: Waveform,
    pub pair_rate_hz: f64,
    pub trigger_rate_hz: f64,
    pub probe_rate_hz: f64,
    #[serde(default)]
    pub emission: EmissionStatistics,
    #[serde(default)]
    pub settings: SourceSettings,
}

impl SourceConfig {
    pub fn model(&self) -> CliResult<BiphotonModel> {
        let m = BiphotonModel::new(self.waveform.clone(), self.pair_rate_hz, self.trigger_rate_hz, self.probe_rate_hz)
            .map_err(|e| CliError::Schema(format!("source: {e}")))?;
        Ok(m.with_emission(self.emission))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorsConfig {
    pub trigger: DetectorSpec,
    /// Detection ahead of the beam splitter; both arms share it.
    pub probe: DetectorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversionConfig {
    #[serde(default)]
    pub channel: ConversionChannelSpec,
    #[serde(default)]
    pub converter: ConverterSettings,
    /// Overrides the overlap efficiency computed from the source spectrum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_chunk() -> f64 {
    5.0
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub source: SourceConfig,
    pub detectors: DetectorsConfig,
    #[serde(default)]
    pub fiber_delay_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversion: Option<ConversionConfig>,
    /// In-window acquisition time.
    pub duration_s: f64,
    /// Fraction of wall-clock time the acquisition window is open.
    #[serde(default = "one")]
    pub duty_cycle: f64,
    /// Length of the independently seeded simulation pieces.
    #[serde(default = "default_chunk")]
    pub chunk_s: f64,
    pub seed: u64,
    pub binning: BinningSpec,
    pub herald_window_s: f64,
    /// Herald delay; defaults to the waveform peak plus all configured delays.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub herald_tau_s: Option<f64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Schema(msg.into())
}

impl PipelineConfig {
    /// Parses and validates; errors carry the JSON path of the bad field.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(schema(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("duration_s", self.duration_s)?;
        positive("chunk_s", self.chunk_s)?;
        positive("herald_window_s", self.herald_window_s)?;
        if !(self.duty_cycle > 0.0 && self.duty_cycle <= 1.0) {
            return Err(schema(format!("duty_cycle must lie in (0, 1], got {}", self.duty_cycle)));
        }
        if !(self.fiber_delay_s >= 0.0 && self.fiber_delay_s.is_finite()) {
            return Err(schema(format!("fiber_delay_s must be >= 0, got {}", self.fiber_delay_s)));
        }
        if self.herald_tau_s.is_some_and(|t| !t.is_finite()) {
            return Err(schema("herald_tau_s must be finite"));
        }
        self.source.model()?;
        self.source.settings.validate().map_err(|e| schema(format!("source.settings: {e}")))?;
        self.detectors.trigger.validate().map_err(|e| schema(format!("detectors.trigger: {e}")))?;
        self.detectors.probe.validate().map_err(|e| schema(format!("detectors.probe: {e}")))?;
        self.binning.validate().map_err(|e| schema(format!("binning: {e}")))?;
        if let Some(c) = &self.conversion {
            c.channel.validate().map_err(|e| schema(format!("conversion.channel: {e}")))?;
            c.converter.validate().map_err(|e| schema(format!("conversion.converter: {e}")))?;
            if let Some(eff) = c.efficiency {
                if !(0.0..=1.0).contains(&eff) {
                    return Err(schema(format!("conversion.efficiency must lie in [0, 1], got {eff}")));
                }
            }
            if !(c.channel.group_delay_s >= 0.0) {
                return Err(schema("conversion.channel.group_delay_s must be >= 0"));
            }
        }
        Ok(())
    }

    /// Fiber delay plus conversion group delay.
    pub fn total_delay_s(&self) -> f64 {
        self.fiber_delay_s + self.conversion.as_ref().map_or(0.0, |c| c.channel.group_delay_s)
    }

    /// Wall-clock time needed for `duration_s` of open window.
    pub fn wall_clock_s(&self) -> f64 {
        self.duration_s / self.duty_cycle
    }
}
