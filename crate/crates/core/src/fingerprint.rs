//! Fingerprint peak selection and per-peak phase tracking.
//!
//! Maxima of the Rayleigh fingerprint are stable anchors for phase
//! measurement. A section is the fiber between two consecutive Rayleigh
//! peaks; its phase difference follows the strain integrated over it while
//! common-mode terms (laser phase, strain upstream of both peaks) cancel.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::correlator::{power_to_db, BackscatterProfile, ReturnLossTrace};
use crate::error::{param, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakKind {
    Rayleigh,
    Connector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarization {
    X,
    Y,
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakSelection {
    /// Minimum topographic prominence, dB.
    pub prominence: f64,
    /// Minimum distance between retained peaks, meters.
    pub min_spacing: f64,
    /// Peaks at or above this level are connector reflections, dB.
    pub connector_threshold: f64,
}

impl Default for PeakSelection {
    fn default() -> Self {
        Self {
            prominence: 3.0,
            min_spacing: 0.8,
            connector_threshold: -58.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSet {
    pub bins: Vec<usize>,
    pub positions: Vec<f64>,
    pub kinds: Vec<PeakKind>,
    /// Trace level at each peak, dB.
    pub levels: Vec<f64>,
    pub selection_params: PeakSelection,
}

impl PeakSet {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn rayleigh_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.kinds[i] == PeakKind::Rayleigh)
            .collect()
    }
}

/// Local maxima of `values` with their topographic prominence.
///
/// A local maximum rises strictly from its left neighbor and is not
/// exceeded by its right neighbor, so a flat top counts once at its first
/// bin. Prominence is the height above the higher of the two bases, each
/// base being the minimum between the peak and the nearest strictly higher
/// sample on that side (or the trace end).
pub fn local_maxima_with_prominence(values: &[f64]) -> Vec<(usize, f64)> {
    let n = values.len();
    let mut out = Vec::new();
    if n < 3 {
        return out;
    }
    for i in 1..n - 1 {
        let v = values[i];
        if !(v > values[i - 1] && v >= values[i + 1]) {
            continue;
        }
        let mut left_min = v;
        for &w in values[..i].iter().rev() {
            if w > v {
                break;
            }
            left_min = left_min.min(w);
        }
        let mut right_min = v;
        for &w in &values[i + 1..] {
            if w > v {
                break;
            }
            right_min = right_min.min(w);
        }
        out.push((i, v - left_min.max(right_min)));
    }
    out
}

pub fn select_peaks(
    trace: &ReturnLossTrace,
    prominence: f64,
    min_spacing: f64,
    connector_threshold: f64,
) -> Result<PeakSet> {
    if trace.is_empty() {
        return param("return-loss trace is empty");
    }
    if !(prominence > 0.0) {
        return param("prominence must be positive");
    }
    let dpb = trace.distance_per_bin();
    let mut candidates: Vec<usize> = local_maxima_with_prominence(&trace.values)
        .into_iter()
        .filter(|&(_, p)| p >= prominence)
        .map(|(i, _)| i)
        .collect();
    // highest first, ties to the lower bin
    candidates.sort_by(|&a, &b| {
        trace.values[b]
            .total_cmp(&trace.values[a])
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        let clear = kept
            .iter()
            .all(|&k| (k.abs_diff(c) as f64) * dpb >= min_spacing - 1e-9);
        if clear {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    Ok(PeakSet {
        positions: kept.iter().map(|&b| trace.distances[b]).collect(),
        kinds: kept
            .iter()
            .map(|&b| {
                if trace.values[b] >= connector_threshold {
                    PeakKind::Connector
                } else {
                    PeakKind::Rayleigh
                }
            })
            .collect(),
        levels: kept.iter().map(|&b| trace.values[b]).collect(),
        bins: kept,
        selection_params: PeakSelection {
            prominence,
            min_spacing,
            connector_threshold,
        },
    })
}

fn check_bins(peaks: &PeakSet, len: usize) -> Result<()> {
    match peaks.bins.iter().find(|&&b| b >= len) {
        Some(b) => param(format!("peak bin {b} outside the {len}-bin profile")),
        None => Ok(()),
    }
}

/// Polarization-sum level (dB) of every profile at every peak; one row per
/// profile.
pub fn amplitude_waterfall<'a>(
    profiles: impl IntoIterator<Item = &'a BackscatterProfile>,
    peaks: &PeakSet,
    calibration_offset: f64,
    floor_db: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for prof in profiles {
        check_bins(peaks, prof.len())?;
        rows.push(
            peaks
                .bins
                .iter()
                .map(|&b| {
                    power_to_db(
                        prof.x[b].norm_sqr() + prof.y[b].norm_sqr(),
                        calibration_offset,
                        floor_db,
                    )
                })
                .collect(),
        );
    }
    Ok(rows)
}

/// Wraps to (−π, π].
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi - TAU * (phi / TAU).round();
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Nearest-branch unwrapping: every step is brought into (−π, π].
pub fn unwrap_phase(phases: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phases.len());
    let mut prev_raw = 0.0;
    let mut acc = 0.0;
    for (i, &p) in phases.iter().enumerate() {
        if i == 0 {
            acc = p;
        } else {
            acc += wrap_phase(p - prev_raw);
        }
        prev_raw = p;
        out.push(acc);
    }
    out
}

/// Per-peak phase and amplitude series over frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhaseTracks {
    /// `[peak][frame]`, unwrapped radians.
    pub phase_x: Vec<Vec<f64>>,
    pub phase_y: Vec<Vec<f64>>,
    /// `[peak][frame]`, linear magnitude.
    pub amplitude_x: Vec<Vec<f64>>,
    pub amplitude_y: Vec<Vec<f64>>,
}

impl PhaseTracks {
    pub fn frame_count(&self) -> usize {
        self.phase_x.first().map_or(0, Vec::len)
    }

    pub fn peak_count(&self) -> usize {
        self.phase_x.len()
    }
}

/// Accumulates complex peak values frame by frame, then unwraps.
#[derive(Debug, Clone)]
pub struct PhaseTrackBuilder {
    bins: Vec<usize>,
    x: Vec<Vec<Complex64>>,
    y: Vec<Vec<Complex64>>,
}

impl PhaseTrackBuilder {
    pub fn new(peaks: &PeakSet) -> Self {
        Self {
            bins: peaks.bins.clone(),
            x: vec![Vec::new(); peaks.len()],
            y: vec![Vec::new(); peaks.len()],
        }
    }

    pub fn push(&mut self, profile: &BackscatterProfile) -> Result<()> {
        if let Some(&b) = self.bins.iter().find(|&&b| b >= profile.len()) {
            return param(format!("peak bin {b} outside the {}-bin profile", profile.len()));
        }
        for (p, &b) in self.bins.iter().enumerate() {
            self.x[p].push(profile.x[b]);
            self.y[p].push(profile.y[b]);
        }
        Ok(())
    }

    /// Appends already-sampled values (`x[p]`, `y[p]` for each peak).
    pub fn push_values(&mut self, x: &[Complex64], y: &[Complex64]) -> Result<()> {
        if x.len() != self.bins.len() || y.len() != self.bins.len() {
            return param("value count does not match the peak count");
        }
        for p in 0..self.bins.len() {
            self.x[p].push(x[p]);
            self.y[p].push(y[p]);
        }
        Ok(())
    }

    pub fn finish(self) -> PhaseTracks {
        let phase = |series: &Vec<Vec<Complex64>>| {
            series
                .iter()
                .map(|s| unwrap_phase(&s.iter().map(|v| v.arg()).collect::<Vec<_>>()))
                .collect()
        };
        let amp = |series: &Vec<Vec<Complex64>>| {
            series
                .iter()
                .map(|s| s.iter().map(|v| v.norm()).collect())
                .collect()
        };
        PhaseTracks {
            phase_x: phase(&self.x),
            phase_y: phase(&self.y),
            amplitude_x: amp(&self.x),
            amplitude_y: amp(&self.y),
        }
    }
}

pub fn extract_peak_phases<'a>(
    profiles: impl IntoIterator<Item = &'a BackscatterProfile>,
    peaks: &PeakSet,
) -> Result<PhaseTracks> {
    let mut builder = PhaseTrackBuilder::new(peaks);
    for p in profiles {
        builder.push(p)?;
    }
    Ok(builder.finish())
}

/// Fiber between two consecutive Rayleigh peaks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    /// Midpoint of the bounding peaks, meters.
    pub center: f64,
    pub lower_bin: usize,
    pub upper_bin: usize,
    /// Indices into the peak set.
    pub lower_peak: usize,
    pub upper_peak: usize,
}

/// Phase difference per frame and section for one polarization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionPhaseWaterfall {
    pub polarization: Polarization,
    pub sections: Vec<Section>,
    /// `[frame][section]`, radians.
    pub matrix: Vec<Vec<f64>>,
    /// Seconds between rows.
    pub frame_period: f64,
    /// Sections faded in this polarization.
    pub masked: Vec<bool>,
}

impl SectionPhaseWaterfall {
    pub fn frame_count(&self) -> usize {
        self.matrix.len()
    }

    pub fn section_count(&self) -> usize {
        self.sections.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.sections.iter().map(|s| s.center).collect()
    }

    /// Series of section `s` over frames.
    pub fn column(&self, s: usize) -> Vec<f64> {
        self.matrix.iter().map(|row| row[s]).collect()
    }
}

/// Consecutive Rayleigh-peak pairs of `peaks`.
pub fn build_sections(peaks: &PeakSet) -> Vec<Section> {
    peaks
        .rayleigh_indices()
        .windows(2)
        .map(|w| Section {
            center: 0.5 * (peaks.positions[w[0]] + peaks.positions[w[1]]),
            lower_bin: peaks.bins[w[0]],
            upper_bin: peaks.bins[w[1]],
            lower_peak: w[0],
            upper_peak: w[1],
        })
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per peak, whether each polarization is faded: its median magnitude is
/// more than `threshold_db` below the median polarization-sum magnitude.
pub fn faded_peaks(tracks: &PhaseTracks, threshold_db: f64) -> [Vec<bool>; 2] {
    let ratio = 10f64.powf(-threshold_db / 20.0);
    let mut fx = Vec::with_capacity(tracks.peak_count());
    let mut fy = Vec::with_capacity(tracks.peak_count());
    for p in 0..tracks.peak_count() {
        let mut sum: Vec<f64> = tracks.amplitude_x[p]
            .iter()
            .zip(&tracks.amplitude_y[p])
            .map(|(a, b)| (a * a + b * b).sqrt())
            .collect();
        let reference = median(&mut sum) * ratio;
        fx.push(median(&mut tracks.amplitude_x[p].clone()) < reference);
        fy.push(median(&mut tracks.amplitude_y[p].clone()) < reference);
    }
    [fx, fy]
}

fn difference_series(lower: &[f64], upper: &[f64]) -> Vec<f64> {
    let wrapped: Vec<f64> = upper
        .iter()
        .zip(lower)
        .map(|(u, l)| wrap_phase(u - l))
        .collect();
    unwrap_phase(&wrapped)
}

/// Section phase differences `φ_upper(k) − φ_lower(k)` for x and y.
///
/// The difference is re-wrapped and unwrapped over frames so that a 2π slip
/// in either bounding track cannot leak into the section series; the first
/// sample lies in (−π, π].
pub fn section_phase_differences(
    tracks: &PhaseTracks,
    peaks: &PeakSet,
    frame_period: f64,
    fading_threshold_db: f64,
) -> Result<[SectionPhaseWaterfall; 2]> {
    let rayleigh = peaks.rayleigh_indices().len();
    if rayleigh < 2 {
        return Err(Error::InsufficientPeaks { found: rayleigh });
    }
    if tracks.peak_count() != peaks.len() {
        return param("phase tracks do not match the peak set");
    }
    let sections = build_sections(peaks);
    let [fade_x, fade_y] = faded_peaks(tracks, fading_threshold_db);
    let frames = tracks.frame_count();
    let build = |phase: &Vec<Vec<f64>>, fade: &Vec<bool>, pol| {
        let columns: Vec<Vec<f64>> = sections
            .iter()
            .map(|s| difference_series(&phase[s.lower_peak], &phase[s.upper_peak]))
            .collect();
        let matrix = (0..frames)
            .map(|k| columns.iter().map(|c| c[k]).collect())
            .collect();
        SectionPhaseWaterfall {
            polarization: pol,
            sections: sections.clone(),
            matrix,
            frame_period,
            masked: sections
                .iter()
                .map(|s| fade[s.lower_peak] || fade[s.upper_peak])
                .collect(),
        }
    };
    Ok([
        build(&tracks.phase_x, &fade_x, Polarization::X),
        build(&tracks.phase_y, &fade_y, Polarization::Y),
    ])
}
