//! JSON configuration for scenarios, processing and analysis, plus the
//! shipped presets.

use std::path::{Path, PathBuf};

use ccotdr::analysis::{FitParams, OnsetParams};
use ccotdr::fibersim::{Connector, EventSpec, FiberSpec};
use ccotdr::fingerprint::PeakSelection;
use ccotdr::probegen::{frame_timing, ProbeConfig, TimingInfo};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub const PRESET_NAMES: [&str; 2] = ["paper", "desk"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverSpec {
    /// Laser linewidth, Hz.
    pub linewidth: f64,
    /// Noise variance per real quadrature per sample.
    pub noise_density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub fiber: u64,
    pub receiver: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture: Option<PathBuf>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub fiber: FiberSpec,
    pub probe: ProbeConfig,
    pub receiver: ReceiverSpec,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    /// Seconds of simulated acquisition.
    pub record_duration: f64,
    /// Keep one of every `frame_stride` transmitted frames.
    #[serde(default = "one")]
    pub frame_stride: usize,
    pub seeds: Seeds,
    #[serde(default)]
    pub output: OutputPaths,
}

/// Validation failure at a dotted field path.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

fn field<T>(path: &str, message: impl Into<String>) -> Result<T, FieldError> {
    Err(FieldError {
        path: path.to_string(),
        message: message.into(),
    })
}

impl ScenarioConfig {
    pub fn timing(&self) -> ccotdr::Result<TimingInfo> {
        frame_timing(&self.probe, self.fiber.group_velocity())
    }

    /// Seconds between captured frames.
    pub fn frame_period(&self) -> ccotdr::Result<f64> {
        Ok(self.timing()?.frame_duration * self.frame_stride as f64)
    }

    pub fn frame_count(&self) -> ccotdr::Result<usize> {
        Ok(((self.record_duration / self.frame_period()?) + 1e-9).floor() as usize)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if let Err(e) = self.probe.validate() {
            return field("probe", e.to_string());
        }
        let timing = match self.timing() {
            Ok(t) => t,
            Err(e) => return field("fiber.group_index", e.to_string()),
        };
        if let Err(e) = self.fiber.validate(timing.spatial_resolution) {
            return field("fiber", e.to_string());
        }
        if !(self.receiver.linewidth >= 0.0) {
            return field("receiver.linewidth", "must be non-negative");
        }
        if !(self.receiver.noise_density >= 0.0) {
            return field("receiver.noise_density", "must be non-negative");
        }
        if self.frame_stride == 0 {
            return field("frame_stride", "must be at least 1");
        }
        let period = timing.frame_duration * self.frame_stride as f64;
        if !(self.record_duration.is_finite() && self.record_duration + 1e-12 >= period) {
            return field(
                "record_duration",
                format!("must cover at least one frame period ({period:.3e} s)"),
            );
        }
        for (i, e) in self.events.iter().enumerate() {
            if let Err(err) = e.validate(self.fiber.length, 1.0 / period) {
                return field(&format!("events[{i}]"), err.to_string());
            }
        }
        let fs = self.probe.sample_rate();
        let max_delay = (self.fiber.round_trip_delay(self.fiber.length) * fs).round() as usize;
        let active = self.probe.active_symbols() * self.probe.samples_per_symbol;
        if max_delay + active > self.probe.frame_samples() {
            return field(
                "probe.padding_symbols",
                format!(
                    "padding does not cover the {:.2} µs fiber round trip",
                    self.fiber.round_trip_delay(self.fiber.length) * 1e6
                ),
            );
        }
        Ok(())
    }

    /// Copy with every defaulted parameter written out.
    pub fn resolved(&self) -> ccotdr::Result<Self> {
        let mut out = self.clone();
        out.probe.feedback_taps = Some(self.probe.taps()?);
        out.probe.initial_state = Some(self.probe.seed_state());
        let res = self.timing()?.spatial_resolution;
        out.fiber.scatterer_spacing = Some(self.fiber.spacing(res));
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessingConfig {
    /// Frames averaged into the reference return-loss trace.
    pub reference_frames: usize,
    pub calibration_offset_db: f64,
    pub floor_db: f64,
    pub peaks: PeakSelection,
    /// A polarization is faded at a peak when this many dB below the sum.
    pub fading_threshold_db: f64,
    /// Meters evaluated beyond the fiber end.
    pub range_margin: f64,
    /// Frames correlated per parallel batch.
    pub batch_frames: usize,
}

impl Default for ProcessingConfig {
    fn default() -> Self {
        Self {
            reference_frames: 8,
            calibration_offset_db: 0.0,
            floor_db: ccotdr::correlator::DEFAULT_FLOOR_DB,
            peaks: PeakSelection::default(),
            fading_threshold_db: 10.0,
            range_margin: 0.0,
            batch_frames: 64,
        }
    }
}

impl ProcessingConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        if self.reference_frames == 0 {
            return field("reference_frames", "must be at least 1");
        }
        if !(self.peaks.prominence > 0.0) {
            return field("peaks.prominence", "must be positive");
        }
        if !(self.peaks.min_spacing >= 0.0) {
            return field("peaks.min_spacing", "must be non-negative");
        }
        if !(self.fading_threshold_db > 0.0) {
            return field("fading_threshold_db", "must be positive");
        }
        if !(self.range_margin >= 0.0) {
            return field("range_margin", "must be non-negative");
        }
        if self.batch_frames == 0 {
            return field("batch_frames", "must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub tone_min_frequency: f64,
    pub tone_threshold_db: f64,
    pub onset: OnsetParams,
    /// Onsets closer than this chain into one strike, s.
    pub strike_gap: f64,
    /// Arrival windows open this long before the first onset, s.
    pub strike_margin: f64,
    /// Events below this activity-to-threshold ratio are not used for
    /// strike segmentation.
    pub min_quality: f64,
    pub fit: FitParams,
    /// Restricts transient analysis to sections centered in this span, m.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fiber_range: Option<[f64; 2]>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            tone_min_frequency: ccotdr::analysis::DEFAULT_MIN_TONE_FREQUENCY,
            tone_threshold_db: ccotdr::analysis::DEFAULT_TONE_THRESHOLD_DB,
            onset: OnsetParams::default(),
            strike_gap: 0.05,
            strike_margin: 0.01,
            min_quality: 3.0,
            fit: FitParams::default(),
            fiber_range: None,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.tone_min_frequency > 0.0) {
            return field("tone_min_frequency", "must be positive");
        }
        if let Err(e) = self.onset.validate() {
            return field("onset", e.to_string());
        }
        if !(self.strike_gap > 0.0) || !(self.strike_margin >= 0.0) {
            return field("strike_gap", "gap must be positive and margin non-negative");
        }
        if !(self.fit.grid_step > 0.0) || !(self.fit.margin >= 0.0) {
            return field("fit", "grid_step must be positive and margin non-negative");
        }
        if let Some([a, b]) = self.fiber_range {
            if !(a < b) {
                return field("fiber_range", "lower bound must be below upper bound");
            }
        }
        Ok(())
    }
}

/// 1-based line of the first occurrence of the last key in `path`.
fn locate(source: &str, path: &str) -> Option<usize> {
    let key = path.rsplit('.').next()?;
    let key = key.split('[').next()?;
    let needle = format!("\"{key}\"");
    source
        .lines()
        .position(|l| l.contains(&needle))
        .map(|i| i + 1)
}

fn parse_json<T: DeserializeOwned>(source: &str, origin: &str) -> CliResult<T> {
    serde_json::from_str(source).map_err(|e| {
        CliError::Config(format!("{origin}:{}:{}: {e}", e.line(), e.column()))
    })
}

fn field_error(err: FieldError, source: &str, origin: &str) -> CliError {
    match locate(source, &err.path) {
        Some(line) => CliError::Config(format!("{origin}:{line}: {}: {}", err.path, err.message)),
        None => CliError::Config(format!("{origin}: {}: {}", err.path, err.message)),
    }
}

pub fn parse_scenario(source: &str, origin: &str) -> CliResult<ScenarioConfig> {
    let cfg: ScenarioConfig = parse_json(source, origin)?;
    cfg.validate().map_err(|e| field_error(e, source, origin))?;
    Ok(cfg)
}

pub fn parse_processing(source: &str, origin: &str) -> CliResult<ProcessingConfig> {
    let cfg: ProcessingConfig = parse_json(source, origin)?;
    cfg.validate().map_err(|e| field_error(e, source, origin))?;
    Ok(cfg)
}

pub fn parse_analysis(source: &str, origin: &str) -> CliResult<AnalysisConfig> {
    let cfg: AnalysisConfig = parse_json(source, origin)?;
    cfg.validate().map_err(|e| field_error(e, source, origin))?;
    Ok(cfg)
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn load_scenario(path: &Path) -> CliResult<ScenarioConfig> {
    parse_scenario(&read_text(path)?, &path.display().to_string())
}

pub fn load_processing(path: Option<&Path>) -> CliResult<ProcessingConfig> {
    match path {
        Some(p) => parse_processing(&read_text(p)?, &p.display().to_string()),
        None => Ok(ProcessingConfig::default()),
    }
}

pub fn load_analysis(path: Option<&Path>) -> CliResult<AnalysisConfig> {
    match path {
        Some(p) => parse_analysis(&read_text(p)?, &p.display().to_string()),
        None => Ok(AnalysisConfig::default()),
    }
}

fn fiber_1550(length: f64, connectors: Vec<Connector>) -> FiberSpec {
    FiberSpec {
        length,
        group_index: FiberSpec::DEFAULT_GROUP_INDEX,
        attenuation: 0.2,
        scatterer_spacing: None,
        connectors,
        wavelength: 1550e-9,
        backscatter_level_db: -75.0,
        photoelastic_factor: ccotdr::fibersim::DEFAULT_PHOTOELASTIC_FACTOR,
    }
}

fn tone(span: [f64; 2], frequency: f64, strain: f64) -> EventSpec {
    EventSpec::HarmonicVibration {
        span,
        frequency,
        strain_amplitude: strain,
        phase_offset: 0.0,
    }
}

pub fn hammer(onset: f64) -> EventSpec {
    EventSpec::PressureWaveImpact {
        impact_position: 336.8,
        onset_time: onset,
        soil_speed: 433.0,
        peak_strain: 2e-7,
        envelope_duration: 0.1,
        decay_length: Some(20.0),
        arrival_jitter: 0.0,
        jitter_cell: 2.0,
        jitter_seed: 0,
    }
}

/// Full-scale field geometry: 8.4 km fiber, 8191-bit PRBS at 125 MBaud
/// with 21250 padding symbols.
pub fn paper_preset() -> ScenarioConfig {
    ScenarioConfig {
        fiber: fiber_1550(
            8400.0,
            vec![
                Connector { position: 30.0, return_loss_db: -48.0 },
                Connector { position: 180.0, return_loss_db: -55.0 },
                Connector { position: 280.0, return_loss_db: -45.0 },
                Connector { position: 420.0, return_loss_db: -60.0 },
            ],
        ),
        probe: ProbeConfig::paper(),
        receiver: ReceiverSpec {
            linewidth: 100.0,
            noise_density: 1e-11,
        },
        events: vec![
            tone([74.0, 82.0], 50.0, 3.5e-8),
            tone([116.0, 122.0], 50.0, 5e-9),
            tone([150.0, 158.0], 98.0, 3.5e-8),
            hammer(0.105),
            hammer(0.370),
        ],
        record_duration: 0.01,
        frame_stride: 1,
        seeds: Seeds { fiber: 1, receiver: 2 },
        output: OutputPaths::default(),
    }
}

/// Laptop-scale geometry: 600 m fiber, 2047-bit PRBS with padding covering
/// the round trip, every 16th frame kept, 0.5 s record.
pub fn desk_preset() -> ScenarioConfig {
    ScenarioConfig {
        fiber: fiber_1550(
            600.0,
            vec![
                Connector { position: 100.0, return_loss_db: -45.0 },
                Connector { position: 250.0, return_loss_db: -52.0 },
            ],
        ),
        probe: ProbeConfig {
            prbs_order: 11,
            feedback_taps: None,
            initial_state: None,
            baud_rate: 125e6,
            padding_symbols: 1024,
            samples_per_symbol: 5,
        },
        receiver: ReceiverSpec {
            linewidth: 100.0,
            noise_density: 1e-11,
        },
        events: vec![
            tone([74.0, 82.0], 50.0, 3.5e-8),
            tone([150.0, 158.0], 98.0, 3.5e-8),
            hammer(0.105),
            hammer(0.370),
        ],
        record_duration: 0.5,
        frame_stride: 16,
        seeds: Seeds { fiber: 1, receiver: 2 },
        output: OutputPaths::default(),
    }
}

pub fn preset(name: &str) -> Option<ScenarioConfig> {
    match name {
        "paper" => Some(paper_preset()),
        "desk" => Some(desk_preset()),
        _ => None,
    }
}
