//! Correlation and fingerprint processing of a frame source.

use std::path::{Path, PathBuf};

use ccotdr::correlator::{power_to_db, trace_from_power, Correlator, ReturnLossTrace};
use ccotdr::fingerprint::{
    section_phase_differences, select_peaks, PeakSet, PhaseTrackBuilder, Polarization, Section,
    SectionPhaseWaterfall,
};
use ccotdr::probegen::ProbeFrame;
use ccotdr::receiver::FrameSource;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::CaptureReader;
use crate::config::ProcessingConfig;
use crate::files::{sha256, trace_csv, write_bytes_atomic, WaterfallFile, WaterfallKind};
use crate::scenario::{Manifest, MANIFEST_FORMAT};
use crate::{CliError, CliResult};

/// What the processing chain needs to know about the acquisition.
#[derive(Debug, Clone)]
pub struct ProcessContext {
    pub probe: ProbeFrame,
    pub sample_rate: f64,
    pub group_velocity: f64,
    pub fiber_length: f64,
    pub frame_period: f64,
}

impl ProcessContext {
    pub fn from_manifest(m: &Manifest) -> CliResult<Self> {
        Ok(Self {
            probe: m.scenario.probe.build()?,
            sample_rate: m.sample_rate,
            group_velocity: m.group_velocity,
            fiber_length: m.scenario.fiber.length,
            frame_period: m.frame_period,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ProcessOutputs {
    pub trace: ReturnLossTrace,
    pub peaks: PeakSet,
    /// `[frame][peak]`, dB.
    pub amplitude: Vec<Vec<f64>>,
    pub phase: [SectionPhaseWaterfall; 2],
    pub frame_period: f64,
    pub lags: usize,
}

/// Correlates every frame, selects fingerprint peaks on the mean trace of
/// the first `reference_frames` frames and tracks their phases.
pub fn process_source(
    source: &dyn FrameSource,
    ctx: &ProcessContext,
    cfg: &ProcessingConfig,
) -> CliResult<ProcessOutputs> {
    cfg.validate()
        .map_err(|e| CliError::Config(format!("{}: {}", e.path, e.message)))?;
    let count = source.frame_count();
    if count == 0 {
        return Err(ccotdr::Error::EmptyCapture.into());
    }
    let frame_len = source.frame_len();
    let active = ctx.probe.active_waveform().len();
    if frame_len < active {
        return Err(CliError::Corrupt(format!(
            "frames of {frame_len} samples are shorter than the {active} sample probe"
        )));
    }
    let reach = 2.0 * (ctx.fiber_length + cfg.range_margin) / ctx.group_velocity * ctx.sample_rate;
    let lags = (reach.floor() as usize + 1).min(frame_len - active + 1);
    let corr = Correlator::new(
        &ctx.probe,
        frame_len,
        Some(lags),
        ctx.sample_rate,
        ctx.group_velocity,
    )?;

    let n_ref = cfg.reference_frames.min(count);
    let powers: Vec<Vec<f64>> = (0..n_ref)
        .into_par_iter()
        .map(|k| Ok(corr.correlate(&source.read_frame(k)?, k)?.power()))
        .collect::<ccotdr::Result<_>>()?;
    let mut mean = vec![0.0; lags];
    for p in &powers {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n_ref as f64;
    }
    let trace = trace_from_power(
        &mean,
        corr.distance_per_bin(),
        cfg.calibration_offset_db,
        cfg.floor_db,
    );
    let peaks = select_peaks(
        &trace,
        cfg.peaks.prominence,
        cfg.peaks.min_spacing,
        cfg.peaks.connector_threshold,
    )?;

    let mut builder = PhaseTrackBuilder::new(&peaks);
    let mut amplitude = Vec::with_capacity(count);
    for start in (0..count).step_by(cfg.batch_frames) {
        let end = (start + cfg.batch_frames).min(count);
        let sampled: Vec<(Vec<Complex64>, Vec<Complex64>)> = (start..end)
            .into_par_iter()
            .map(|k| {
                let prof = corr.correlate(&source.read_frame(k)?, k)?;
                Ok((
                    peaks.bins.iter().map(|&b| prof.x[b]).collect(),
                    peaks.bins.iter().map(|&b| prof.y[b]).collect(),
                ))
            })
            .collect::<ccotdr::Result<_>>()?;
        for (x, y) in sampled {
            amplitude.push(
                x.iter()
                    .zip(&y)
                    .map(|(a, b)| {
                        power_to_db(a.norm_sqr() + b.norm_sqr(), cfg.calibration_offset_db, cfg.floor_db)
                    })
                    .collect(),
            );
            builder.push_values(&x, &y)?;
        }
    }
    let tracks = builder.finish();
    let phase = section_phase_differences(&tracks, &peaks, ctx.frame_period, cfg.fading_threshold_db)?;
    Ok(ProcessOutputs {
        trace,
        peaks,
        amplitude,
        phase,
        frame_period: ctx.frame_period,
        lags,
    })
}

pub fn manifest_path(capture: &Path) -> PathBuf {
    let mut name = capture.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Reads the manifest sidecar; returns it with the SHA-256 of its bytes.
pub fn read_manifest(path: &Path) -> CliResult<(Manifest, [u8; 32])> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| {
        CliError::Corrupt(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
    })?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(CliError::Corrupt(format!("{}: not a scenario manifest", path.display())));
    }
    Ok((manifest, sha256(&bytes)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PeakFile {
    pub manifest_sha256: String,
    pub peaks: PeakSet,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProcessSummary {
    pub manifest_sha256: String,
    pub processing: ProcessingConfig,
    pub frames: usize,
    pub frame_period: f64,
    pub lags: usize,
    pub peaks: usize,
    pub sections: usize,
    pub masked_x: usize,
    pub masked_y: usize,
}

fn amplitude_file(out: &ProcessOutputs, hash: [u8; 32]) -> WaterfallFile {
    WaterfallFile {
        kind: WaterfallKind::Amplitude,
        polarization: Polarization::Fused,
        frame_period: out.frame_period,
        manifest_hash: hash,
        columns: out
            .peaks
            .bins
            .iter()
            .enumerate()
            .map(|(i, &b)| Section {
                center: out.peaks.positions[i],
                lower_bin: b,
                upper_bin: b,
                lower_peak: i,
                upper_peak: i,
            })
            .collect(),
        masked: vec![false; out.peaks.len()],
        data: out.amplitude.iter().flatten().copied().collect(),
    }
}

/// Writes `trace.csv`, `peaks.json`, `amplitude.ccwf`, `phase_x.ccwf`,
/// `phase_y.ccwf` and `process.json` into `dir`.
pub fn write_outputs(
    dir: &Path,
    out: &ProcessOutputs,
    cfg: &ProcessingConfig,
    hash: [u8; 32],
) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let hash_hex = hex::encode(hash);
    write_bytes_atomic(&dir.join("trace.csv"), trace_csv(&out.trace, &hash_hex).as_bytes())?;
    write_bytes_atomic(
        &dir.join("peaks.json"),
        pretty_json(&PeakFile {
            manifest_sha256: hash_hex.clone(),
            peaks: out.peaks.clone(),
        })
        .as_bytes(),
    )?;
    amplitude_file(out, hash).write(&dir.join("amplitude.ccwf"))?;
    WaterfallFile::from_phase(&out.phase[0], hash).write(&dir.join("phase_x.ccwf"))?;
    WaterfallFile::from_phase(&out.phase[1], hash).write(&dir.join("phase_y.ccwf"))?;
    let summary = ProcessSummary {
        manifest_sha256: hash_hex,
        processing: cfg.clone(),
        frames: out.amplitude.len(),
        frame_period: out.frame_period,
        lags: out.lags,
        peaks: out.peaks.len(),
        sections: out.phase[0].section_count(),
        masked_x: out.phase[0].masked.iter().filter(|&&m| m).count(),
        masked_y: out.phase[1].masked.iter().filter(|&&m| m).count(),
    };
    write_bytes_atomic(&dir.join("process.json"), pretty_json(&summary).as_bytes())
}

pub(crate) fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// `process` command: validates the capture against its manifest before
/// producing any output.
pub fn cmd_process(capture: &Path, out_dir: &Path, cfg: &ProcessingConfig) -> CliResult<ProcessOutputs> {
    let reader = CaptureReader::open(capture)?;
    let (manifest, hash) = read_manifest(&manifest_path(capture))?;
    let h = reader.header;
    if h.frame_length as usize != manifest.frame_length
        || h.frame_count as usize != manifest.frame_count
        || h.sample_rate != manifest.sample_rate
    {
        return Err(CliError::Corrupt(format!(
            "{}: header does not match its manifest",
            capture.display()
        )));
    }
    let ctx = ProcessContext::from_manifest(&manifest)?;
    let out = process_source(&reader, &ctx, cfg)?;
    write_outputs(out_dir, &out, cfg, hash)?;
    Ok(out)
}
