//! Coherent receiver impairments and framed IQ capture assembly.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::probegen::ProbeConfig;
use crate::signal::DualPolFrame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpairmentConfig {
    /// Lorentzian laser linewidth, Hz.
    pub linewidth: f64,
    /// Noise variance per real quadrature per sample (linear).
    pub noise_density: f64,
    /// Samples/second.
    pub sample_rate: f64,
    pub seed: u64,
}

impl ImpairmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.linewidth >= 0.0) {
            return param("linewidth must be non-negative");
        }
        if !(self.noise_density >= 0.0) {
            return param("noise_density must be non-negative");
        }
        if !(self.sample_rate > 0.0) {
            return param("sample_rate must be positive");
        }
        Ok(())
    }
}

/// Wiener phase process of a Lorentzian laser: `n_samples` values spaced
/// `dt` apart, starting at 0, increment variance `2π·linewidth·dt`.
pub fn laser_phase_walk(linewidth: f64, n_samples: usize, dt: f64, seed: u64) -> Result<Vec<f64>> {
    let mut walk = PhaseWalk::new(linewidth, dt, seed)?;
    Ok((0..n_samples).map(|_| walk.next_value()).collect())
}

/// Streaming form of [`laser_phase_walk`]; splitting a series across calls
/// yields the same values as generating it in one go.
#[derive(Debug, Clone)]
pub struct PhaseWalk {
    rng: ChaCha8Rng,
    step: Option<Normal<f64>>,
    phase: f64,
}

impl PhaseWalk {
    pub fn new(linewidth: f64, dt: f64, seed: u64) -> Result<Self> {
        if !(linewidth >= 0.0) {
            return param("linewidth must be non-negative");
        }
        if !(dt >= 0.0) {
            return param("dt must be non-negative");
        }
        let sigma = (TAU * linewidth * dt).sqrt();
        let step = if sigma > 0.0 {
            Some(Normal::new(0.0, sigma).map_err(|e| Error::Parameter(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            step,
            phase: 0.0,
        })
    }

    /// Returns the current phase and advances by one increment.
    pub fn next_value(&mut self) -> f64 {
        let current = self.phase;
        if let Some(step) = &self.step {
            self.phase += step.sample(&mut self.rng);
        }
        current
    }
}

/// Laser phase walk and receiver noise for a sequence of captured frames.
///
/// The laser phase is held constant within a frame (sampled at the frame
/// start) and walks between frames spaced `frame_period` apart. Noise is
/// drawn per frame from a stream derived from `(seed, frame_index)` and added
/// before the common phase rotation.
#[derive(Debug, Clone)]
pub struct Impairments {
    cfg: ImpairmentConfig,
    walk: Vec<f64>,
}

impl Impairments {
    pub fn new(cfg: ImpairmentConfig, frame_period: f64, frame_count: usize) -> Result<Self> {
        cfg.validate()?;
        let walk = laser_phase_walk(cfg.linewidth, frame_count, frame_period, cfg.seed)?;
        Ok(Self { cfg, walk })
    }

    pub fn config(&self) -> &ImpairmentConfig {
        &self.cfg
    }

    /// Laser phase applied to frame `frame_index`.
    pub fn laser_phase(&self, frame_index: usize) -> f64 {
        self.walk.get(frame_index).copied().unwrap_or(0.0)
    }

    pub fn apply(&self, record: &DualPolFrame, frame_index: usize) -> Result<DualPolFrame> {
        apply_impairments(record, &self.cfg, frame_index, self.laser_phase(frame_index))
    }
}

/// `(record + n) · exp(j·laser_phase)` with `n` complex white Gaussian noise
/// of variance `noise_density` per quadrature on each polarization.
pub fn apply_impairments(
    record: &DualPolFrame,
    cfg: &ImpairmentConfig,
    frame_index: usize,
    laser_phase: f64,
) -> Result<DualPolFrame> {
    if record.is_empty() || record.y.len() != record.x.len() {
        return param("record must be nonempty with equal polarization lengths");
    }
    let mut out = record.clone();
    if cfg.noise_density > 0.0 {
        let sigma = cfg.noise_density.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(frame_index as u64 + 1);
        for v in out.x.iter_mut().chain(out.y.iter_mut()) {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += Complex64::new(re * sigma, im * sigma);
        }
    }
    if laser_phase != 0.0 {
        let rot = Complex64::from_polar(1.0, laser_phase);
        for v in out.x.iter_mut().chain(out.y.iter_mut()) {
            *v *= rot;
        }
    }
    Ok(out)
}

/// One captured frame as four real channels in XI, XQ, YI, YQ order.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureFrame {
    pub channels: [Vec<f32>; 4],
}

impl CaptureFrame {
    pub fn from_dual_pol(frame: &DualPolFrame) -> Self {
        Self {
            channels: [
                frame.x.iter().map(|v| v.re as f32).collect(),
                frame.x.iter().map(|v| v.im as f32).collect(),
                frame.y.iter().map(|v| v.re as f32).collect(),
                frame.y.iter().map(|v| v.im as f32).collect(),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels[0].is_empty()
    }

    /// x = XI + j·XQ, y = YI + j·YQ.
    pub fn to_dual_pol(&self) -> DualPolFrame {
        let [xi, xq, yi, yq] = &self.channels;
        DualPolFrame {
            x: xi
                .iter()
                .zip(xq)
                .map(|(&i, &q)| Complex64::new(i as f64, q as f64))
                .collect(),
            y: yi
                .iter()
                .zip(yq)
                .map(|(&i, &q)| Complex64::new(i as f64, q as f64))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureMetadata {
    pub probe: ProbeConfig,
    /// Seconds between the starts of consecutive captured frames.
    pub frame_period: f64,
    pub fiber_seed: u64,
    pub receiver_seed: u64,
}

/// Framed dual-polarization capture.
#[derive(Debug, Clone, PartialEq)]
pub struct IQCapture {
    pub frames: Vec<CaptureFrame>,
    pub sample_rate: f64,
    /// Duration of one transmitted frame, seconds.
    pub frame_duration: f64,
    pub metadata: CaptureMetadata,
}

impl IQCapture {
    pub fn frame_len(&self) -> usize {
        self.frames.first().map_or(0, CaptureFrame::len)
    }
}

/// Source of captured frames for the processing chain.
pub trait FrameSource: Sync {
    fn frame_count(&self) -> usize;
    fn frame_len(&self) -> usize;
    fn read_frame(&self, index: usize) -> Result<DualPolFrame>;
}

impl FrameSource for IQCapture {
    fn frame_count(&self) -> usize {
        self.frames.len()
    }

    fn frame_len(&self) -> usize {
        IQCapture::frame_len(self)
    }

    fn read_frame(&self, index: usize) -> Result<DualPolFrame> {
        self.frames
            .get(index)
            .map(CaptureFrame::to_dual_pol)
            .ok_or_else(|| Error::Parameter(format!("frame {index} out of range")))
    }
}

/// Number of samples in a frame of `frame_duration` at `sample_rate`.
pub fn frame_sample_count(frame_duration: f64, sample_rate: f64) -> usize {
    (frame_duration * sample_rate).round() as usize
}

pub fn assemble_capture(
    frames: &[DualPolFrame],
    sample_rate: f64,
    frame_duration: f64,
    metadata: CaptureMetadata,
) -> Result<IQCapture> {
    if frames.is_empty() {
        return Err(Error::EmptyCapture);
    }
    let len = frames[0].len();
    if frames.iter().any(|f| f.x.len() != len || f.y.len() != len) {
        return param("frames have unequal lengths");
    }
    let expected = frame_sample_count(frame_duration, sample_rate);
    if len != expected {
        return param(format!(
            "frame length {len} does not match {expected} samples per frame"
        ));
    }
    Ok(IQCapture {
        frames: frames.iter().map(CaptureFrame::from_dual_pol).collect(),
        sample_rate,
        frame_duration,
        metadata,
    })
}
