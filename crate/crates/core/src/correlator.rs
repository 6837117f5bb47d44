//! Matched-filter correlation of received frames against the transmitted
//! probe, and conversion to a calibrated return-loss trace.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::probegen::ProbeFrame;
use crate::signal::DualPolFrame;

/// Default level assigned to bins with no power, dB.
pub const DEFAULT_FLOOR_DB: f64 = -120.0;

/// Complex correlation output of one frame, per polarization.
#[derive(Debug, Clone, PartialEq)]
pub struct BackscatterProfile {
    pub frame_index: usize,
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    /// Seconds of round-trip delay per bin.
    pub bin_duration: f64,
    /// Meters of fiber per bin.
    pub distance_per_bin: f64,
}

impl BackscatterProfile {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// |x|² + |y|² per bin.
    pub fn power(&self) -> Vec<f64> {
        self.x
            .iter()
            .zip(&self.y)
            .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnLossTrace {
    /// dB per bin.
    pub values: Vec<f64>,
    pub calibration_offset: f64,
    /// Meters per bin, ascending.
    pub distances: Vec<f64>,
}

impl ReturnLossTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn distance_per_bin(&self) -> f64 {
        if self.distances.len() > 1 {
            self.distances[1] - self.distances[0]
        } else {
            0.0
        }
    }
}

/// Fiber distance of a delay bin: `bin · v_g / (2 f_s)`.
pub fn bin_to_distance(bin: usize, sample_rate: f64, group_velocity: f64) -> f64 {
    bin as f64 * group_velocity / (2.0 * sample_rate)
}

/// Correlates frames against a fixed reference. The reference spectrum is
/// computed once and shared; `correlate` takes `&self` and may be called
/// from several threads.
pub struct Correlator {
    n_fft: usize,
    frame_len: usize,
    lags: usize,
    reference_spectrum: Vec<Complex64>,
    norm: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    bin_duration: f64,
    distance_per_bin: f64,
}

impl std::fmt::Debug for Correlator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Correlator")
            .field("n_fft", &self.n_fft)
            .field("frame_len", &self.frame_len)
            .field("lags", &self.lags)
            .finish()
    }
}

impl Correlator {
    /// `lags` bins starting at zero delay are produced; `None` evaluates
    /// every record lag. The reference is the active (±1) part of the
    /// probe waveform.
    pub fn new(
        reference: &ProbeFrame,
        frame_len: usize,
        lags: Option<usize>,
        sample_rate: f64,
        group_velocity: f64,
    ) -> Result<Self> {
        let active = reference.active_waveform();
        if active.is_empty() {
            return param("reference has no active symbols");
        }
        if frame_len < active.len() {
            return param(format!(
                "record of {frame_len} samples is shorter than the {} sample reference",
                active.len()
            ));
        }
        if !(sample_rate > 0.0) || !(group_velocity > 0.0) {
            return param("sample_rate and group_velocity must be positive");
        }
        let lags = lags.unwrap_or(frame_len).min(frame_len);
        let n_fft = frame_len.max(lags + active.len() - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n_fft);
        let inverse = planner.plan_fft_inverse(n_fft);
        let mut reference_spectrum = vec![Complex64::default(); n_fft];
        for (dst, &v) in reference_spectrum.iter_mut().zip(active) {
            dst.re = v;
        }
        forward.process(&mut reference_spectrum);
        let energy: f64 = active.iter().map(|v| v * v).sum();
        let norm = 1.0 / (energy * n_fft as f64);
        for v in reference_spectrum.iter_mut() {
            *v = v.conj() * norm;
        }
        Ok(Self {
            n_fft,
            frame_len,
            lags,
            reference_spectrum,
            norm: 1.0 / energy,
            forward,
            inverse,
            bin_duration: 1.0 / sample_rate,
            distance_per_bin: group_velocity / (2.0 * sample_rate),
        })
    }

    pub fn lags(&self) -> usize {
        self.lags
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn distance_per_bin(&self) -> f64 {
        self.distance_per_bin
    }

    /// Normalization applied to the raw correlation (1 / reference energy).
    pub fn normalization(&self) -> f64 {
        self.norm
    }

    pub fn correlate(&self, frame: &DualPolFrame, frame_index: usize) -> Result<BackscatterProfile> {
        if frame.x.len() != self.frame_len || frame.y.len() != self.frame_len {
            return param(format!(
                "record has {} samples, correlator expects {}",
                frame.x.len(),
                self.frame_len
            ));
        }
        Ok(BackscatterProfile {
            frame_index,
            x: self.correlate_channel(&frame.x),
            y: self.correlate_channel(&frame.y),
            bin_duration: self.bin_duration,
            distance_per_bin: self.distance_per_bin,
        })
    }

    fn correlate_channel(&self, record: &[Complex64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::default(); self.n_fft];
        buf[..record.len()].copy_from_slice(record);
        self.forward.process(&mut buf);
        for (b, r) in buf.iter_mut().zip(&self.reference_spectrum) {
            *b *= r;
        }
        self.inverse.process(&mut buf);
        buf.truncate(self.lags);
        buf
    }
}

/// Correlates one dual-polarization record against `reference` at every
/// record lag. `profile[l] = Σₙ r[n + l] · p[n] / Σₙ p[n]²`.
pub fn correlate_frame(
    frame: &DualPolFrame,
    reference: &ProbeFrame,
    sample_rate: f64,
    group_velocity: f64,
) -> Result<BackscatterProfile> {
    Correlator::new(reference, frame.len(), None, sample_rate, group_velocity)?.correlate(frame, 0)
}

/// `10·log10(power) + offset`, clamped below at `floor_db`.
pub fn power_to_db(power: f64, calibration_offset: f64, floor_db: f64) -> f64 {
    if power > 0.0 {
        (10.0 * power.log10() + calibration_offset).max(floor_db)
    } else {
        floor_db
    }
}

/// Return-loss trace from per-bin polarization-sum power.
pub fn trace_from_power(
    power: &[f64],
    distance_per_bin: f64,
    calibration_offset: f64,
    floor_db: f64,
) -> ReturnLossTrace {
    ReturnLossTrace {
        values: power
            .iter()
            .map(|&p| power_to_db(p, calibration_offset, floor_db))
            .collect(),
        calibration_offset,
        distances: (0..power.len())
            .map(|i| i as f64 * distance_per_bin)
            .collect(),
    }
}

/// `20·log10(√(|x|² + |y|²)) + offset` per bin.
pub fn return_loss_trace(
    profile: &BackscatterProfile,
    calibration_offset: f64,
    floor_db: f64,
) -> ReturnLossTrace {
    trace_from_power(
        &profile.power(),
        profile.distance_per_bin,
        calibration_offset,
        floor_db,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probegen::{build_probe_frame, generate_prbs, ProbeConfig, TapMask};

    fn probe(order: u32, pad: usize, sps: usize) -> ProbeFrame {
        let bits = generate_prbs(order, TapMask::default_for(order).unwrap(), u32::MAX).unwrap();
        build_probe_frame(&bits, pad).unwrap().modulated(sps).unwrap()
    }

    fn delayed(p: &ProbeFrame, d: usize, gain: Complex64) -> DualPolFrame {
        let n = p.waveform.len();
        let mut f = DualPolFrame::zeros(n);
        for (i, &v) in p.active_waveform().iter().enumerate() {
            if i + d < n {
                f.x[i + d] = gain * v;
            }
        }
        f
    }

    #[test]
    fn bin_distances() {
        assert_eq!(bin_to_distance(0, 625e6, 2e8), 0.0);
        assert!((bin_to_distance(1, 625e6, 2e8) - 0.16).abs() < 1e-15);
        assert!((bin_to_distance(5, 625e6, 2e8) - 0.80).abs() < 1e-15);
    }

    #[test]
    fn unit_reflector_unit_peak() {
        let p = probe(9, 300, 5);
        for d in [0usize, 17, 400, 1499] {
            let f = delayed(&p, d, Complex64::new(0.0, 1.0));
            let prof = correlate_frame(&f, &p, 625e6, 2e8).unwrap();
            let (arg, peak) = prof
                .x
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .unwrap();
            assert_eq!(arg, d);
            assert!((peak.norm() - 1.0).abs() < 1e-6);
            assert!((peak - Complex64::new(0.0, 1.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn zero_record_zero_profile() {
        let p = probe(7, 50, 2);
        let f = DualPolFrame::zeros(p.waveform.len());
        let prof = correlate_frame(&f, &p, 250e6, 2e8).unwrap();
        assert!(prof.x.iter().chain(&prof.y).all(|v| v.norm() == 0.0));
    }

    #[test]
    fn short_record_rejected() {
        let p = probe(7, 0, 2);
        let f = DualPolFrame::zeros(10);
        assert!(correlate_frame(&f, &p, 250e6, 2e8).is_err());
    }

    #[test]
    fn order13_peak_to_sidelobe() {
        // aperiodic autocorrelation of the 8192-symbol active frame has its
        // largest sidelobe at 99 against a peak of 8192 (brute force)
        const FROZEN_RATIO: f64 = 8192.0 / 99.0;
        let cfg = ProbeConfig::paper();
        let p = cfg.build().unwrap();
        let d = 3000;
        let f = delayed(&p, d, Complex64::new(1.0, 0.0));
        let c = Correlator::new(&p, p.waveform.len(), Some(60_000), 625e6, 2e8).unwrap();
        let prof = c.correlate(&f, 0).unwrap();
        let peak = prof.x[d].norm();
        let side = prof
            .x
            .iter()
            .enumerate()
            .filter(|(i, _)| i.abs_diff(d) >= cfg.samples_per_symbol)
            .map(|(_, v)| v.norm())
            .fold(0.0, f64::max);
        assert!(peak / side >= FROZEN_RATIO - 1e-6, "ratio {}", peak / side);
    }

    #[test]
    fn trace_levels() {
        let prof = BackscatterProfile {
            frame_index: 0,
            x: vec![Complex64::new(0.0, 0.0), Complex64::new(1e-3, 0.0), Complex64::new(2e-3, 0.0)],
            y: vec![Complex64::default(); 3],
            bin_duration: 1.6e-9,
            distance_per_bin: 0.16,
        };
        let t = return_loss_trace(&prof, 0.0, DEFAULT_FLOOR_DB);
        assert_eq!(t.values[0], DEFAULT_FLOOR_DB);
        assert!((t.values[1] + 60.0).abs() < 1e-12);
        assert!((t.values[2] - t.values[1] - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert!((t.distances[2] - 0.32).abs() < 1e-15);
        let shifted = return_loss_trace(&prof, 3.0, DEFAULT_FLOOR_DB);
        assert!((shifted.values[1] + 57.0).abs() < 1e-12);
    }

    #[test]
    fn global_unitary_rotation_keeps_trace() {
        let p = probe(8, 100, 3);
        let n = p.waveform.len();
        let mut f = DualPolFrame::zeros(n);
        for (i, &v) in p.active_waveform().iter().enumerate() {
            f.x[i + 10] += Complex64::new(0.3, 0.1) * v;
            f.y[i + 40] += Complex64::new(-0.2, 0.5) * v;
        }
        // 2x2 unitary: rotation with phases
        let (c, s) = (0.6f64, 0.8f64);
        let u = [
            [Complex64::new(c, 0.0), Complex64::from_polar(s, 0.7)],
            [Complex64::from_polar(-s, -0.7), Complex64::new(c, 0.0)],
        ];
        let mut g = DualPolFrame::zeros(n);
        for i in 0..n {
            g.x[i] = u[0][0] * f.x[i] + u[0][1] * f.y[i];
            g.y[i] = u[1][0] * f.x[i] + u[1][1] * f.y[i];
        }
        let a = return_loss_trace(&correlate_frame(&f, &p, 1.0, 2.0).unwrap(), 0.0, -300.0);
        let b = return_loss_trace(&correlate_frame(&g, &p, 1.0, 2.0).unwrap(), 0.0, -300.0);
        for (x, y) in a.values.iter().zip(&b.values) {
            if *x > -200.0 {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
