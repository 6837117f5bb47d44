//! A configured simulation as a lazy frame source, and its manifest.

use std::sync::Arc;

use ccotdr::fibersim::{generate_scatterer_field, FrameSynthesizer, StrainModel};
use ccotdr::probegen::{ProbeFrame, TimingInfo};
use ccotdr::receiver::{FrameSource, ImpairmentConfig, Impairments};
use ccotdr::DualPolFrame;
use serde::{Deserialize, Serialize};

use crate::config::{OutputPaths, ScenarioConfig};
use crate::CliResult;

pub const MANIFEST_FORMAT: &str = "ccotdr-scenario-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// Resolved scenario parameters and derived timing, stored next to every
/// capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub scenario: ScenarioConfig,
    pub timing: TimingInfo,
    pub symbols_per_frame: usize,
    pub active_symbols: usize,
    pub sample_rate: f64,
    pub frame_length: usize,
    pub frame_count: usize,
    /// Seconds between captured frames.
    pub frame_period: f64,
    pub group_velocity: f64,
    pub scatterer_count: usize,
}

impl Manifest {
    pub fn from_config(cfg: &ScenarioConfig) -> CliResult<Self> {
        let mut scenario = cfg.resolved()?;
        scenario.output = OutputPaths::default();
        let timing = cfg.timing()?;
        let spacing = scenario.fiber.scatterer_spacing.unwrap_or(f64::NAN);
        Ok(Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            timing,
            symbols_per_frame: cfg.probe.total_symbols(),
            active_symbols: cfg.probe.active_symbols(),
            sample_rate: cfg.probe.sample_rate(),
            frame_length: cfg.probe.frame_samples(),
            frame_count: cfg.frame_count()?,
            frame_period: cfg.frame_period()?,
            group_velocity: cfg.fiber.group_velocity(),
            scatterer_count: (cfg.fiber.length / spacing).round() as usize
                + cfg.fiber.connectors.len(),
            scenario,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Simulated acquisition: frame `k` is synthesized with strain frozen at
/// `k · frame_period` and passed through the receiver impairments.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub manifest: Manifest,
    pub probe: ProbeFrame,
    synth: FrameSynthesizer,
    strain: StrainModel,
    impairments: Impairments,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("frames", &self.manifest.frame_count)
            .field("frame_length", &self.manifest.frame_length)
            .finish()
    }
}

impl Scenario {
    pub fn build(cfg: &ScenarioConfig) -> CliResult<Self> {
        cfg.validate()
            .map_err(|e| crate::CliError::Config(format!("{}: {}", e.path, e.message)))?;
        let manifest = Manifest::from_config(cfg)?;
        let probe = cfg.probe.build()?;
        let field = generate_scatterer_field(
            &cfg.fiber,
            manifest.timing.spatial_resolution,
            cfg.seeds.fiber,
        )?;
        let synth = FrameSynthesizer::new(
            &probe.waveform,
            probe.active_length * probe.samples_per_symbol,
            Arc::new(field),
            &cfg.fiber,
            manifest.sample_rate,
        )?;
        let impairments = Impairments::new(
            ImpairmentConfig {
                linewidth: cfg.receiver.linewidth,
                noise_density: cfg.receiver.noise_density,
                sample_rate: manifest.sample_rate,
                seed: cfg.seeds.receiver,
            },
            manifest.frame_period,
            manifest.frame_count,
        )?;
        Ok(Self {
            config: cfg.clone(),
            strain: StrainModel::new(&cfg.events, cfg.fiber.length),
            manifest,
            probe,
            synth,
            impairments,
        })
    }

    pub fn frame_time(&self, index: usize) -> f64 {
        index as f64 * self.manifest.frame_period
    }

    /// Noiseless, phase-noise-free record of frame `index`.
    pub fn clean_frame(&self, index: usize) -> DualPolFrame {
        self.synth.synthesize(&self.strain, self.frame_time(index))
    }
}

impl FrameSource for Scenario {
    fn frame_count(&self) -> usize {
        self.manifest.frame_count
    }

    fn frame_len(&self) -> usize {
        self.manifest.frame_length
    }

    fn read_frame(&self, index: usize) -> ccotdr::Result<DualPolFrame> {
        if index >= self.manifest.frame_count {
            return Err(ccotdr::Error::Parameter(format!("frame {index} out of range")));
        }
        self.impairments.apply(&self.clean_frame(index), index)
    }
}

/// `simulate` command: writes the capture (unless `dry_run`) and its
/// manifest sidecar.
pub fn cmd_simulate(
    cfg: &ScenarioConfig,
    out: &std::path::Path,
    dry_run: bool,
    batch: usize,
) -> CliResult<Manifest> {
    let manifest_file = crate::process::manifest_path(out);
    if dry_run {
        cfg.validate()
            .map_err(|e| crate::CliError::Config(format!("{}: {}", e.path, e.message)))?;
        let manifest = Manifest::from_config(cfg)?;
        crate::files::write_bytes_atomic(&manifest_file, manifest.to_json().as_bytes())?;
        return Ok(manifest);
    }
    let scenario = Scenario::build(cfg)?;
    crate::capture::write_capture(out, scenario.manifest.sample_rate, &scenario, batch)?;
    crate::files::write_bytes_atomic(&manifest_file, scenario.manifest.to_json().as_bytes())?;
    Ok(scenario.manifest)
}
