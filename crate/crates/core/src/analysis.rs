//! Tone identification, transient detection and impact localization on
//! section phase waterfalls.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::fingerprint::{Polarization, SectionPhaseWaterfall};

pub const DEFAULT_TONE_THRESHOLD_DB: f64 = 20.0;
pub const DEFAULT_MIN_TONE_FREQUENCY: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneReport {
    pub section_center: f64,
    pub dominant_frequency: f64,
    pub power_ratio_db: f64,
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Removes the least-squares line.
pub fn detrend(series: &[f64]) -> Vec<f64> {
    let n = series.len() as f64;
    let mean_t = (n - 1.0) / 2.0;
    let mean_y = series.iter().sum::<f64>() / n;
    let (mut sty, mut stt) = (0.0, 0.0);
    for (i, &y) in series.iter().enumerate() {
        let dt = i as f64 - mean_t;
        sty += dt * (y - mean_y);
        stt += dt * dt;
    }
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    series
        .iter()
        .enumerate()
        .map(|(i, &y)| y - mean_y - slope * (i as f64 - mean_t))
        .collect()
}

/// Dominant frequency of a section phase series.
///
/// The series is detrended and Hann-windowed; the strongest bin between DC
/// and Nyquist (both excluded) is refined by a parabola through the log
/// magnitudes of it and its neighbors. The power ratio compares the peak
/// bin to the median of all non-DC bins.
pub fn tone_spectrum(
    series: &[f64],
    probe_rate: f64,
    min_frequency: f64,
    section_center: f64,
) -> Result<ToneReport> {
    if !(probe_rate > 0.0) || !(min_frequency > 0.0) {
        return param("probe rate and minimum frequency must be positive");
    }
    let needed = (2.0 * probe_rate / min_frequency).ceil() as usize;
    if series.len() < needed.max(8) {
        return param(format!(
            "series of {} frames is too short for {min_frequency} Hz at {probe_rate} Hz (need {needed})",
            series.len()
        ));
    }
    let n = series.len();
    let detrended = detrend(series);
    let scale = series.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let silent = detrended.iter().all(|v| v.abs() <= 1e-12 * scale);
    let mut buf: Vec<Complex64> = detrended
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
            Complex64::new(v * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let power: Vec<f64> = buf[..=half].iter().map(|c| c.norm_sqr()).collect();
    let (k, &peak) = power[1..half]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, p)| (i + 1, p))
        .expect("at least one interior bin");
    let floor = median(&power[1..]);
    let tiny = f64::MIN_POSITIVE;
    let (a, b, c) = (
        (power[k - 1] + tiny).ln(),
        (peak + tiny).ln(),
        (power[k + 1] + tiny).ln(),
    );
    let denom = a - 2.0 * b + c;
    let delta = if denom < 0.0 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let ratio = if silent {
        0.0
    } else if floor > 0.0 {
        10.0 * (peak / floor).log10()
    } else if peak > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(ToneReport {
        section_center,
        dominant_frequency: (k as f64 + delta) * probe_rate / n as f64,
        power_ratio_db: ratio,
    })
}

/// Tone reports for every unmasked section whose ratio reaches the threshold.
pub fn detect_tones(
    waterfall: &SectionPhaseWaterfall,
    min_frequency: f64,
    threshold_db: f64,
) -> Result<Vec<ToneReport>> {
    let rate = 1.0 / waterfall.frame_period;
    let mut out = Vec::new();
    for (s, section) in waterfall.sections.iter().enumerate() {
        if waterfall.masked[s] {
            continue;
        }
        let report = tone_spectrum(&waterfall.column(s), rate, min_frequency, section.center)?;
        if report.power_ratio_db >= threshold_db {
            out.push(report);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnsetParams {
    /// Detection threshold multiplier on the median absolute deviation.
    pub k_mad: f64,
    /// Multiplier for the threshold that delimits activity regions. Regions
    /// do not depend on `k_mad`, so raising `k_mad` can only drop events.
    pub k_region: f64,
    /// Seconds an event must stay active; `None` means five frame periods.
    pub min_duration: Option<f64>,
    /// Quiescent reference window starts at the first frame and lasts this long, s.
    pub reference_duration: f64,
    /// Inactive stretches up to this long do not split an event, s.
    pub merge_gap: f64,
    /// Lower bound on the threshold, rad.
    pub threshold_floor: f64,
}

impl Default for OnsetParams {
    fn default() -> Self {
        Self {
            k_mad: 6.0,
            k_region: 6.0,
            min_duration: None,
            reference_duration: 0.05,
            merge_gap: 0.025,
            threshold_floor: 1e-6,
        }
    }
}

impl OnsetParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_mad > 0.0) || !(self.k_region > 0.0) {
            return param("k_mad and k_region must be positive");
        }
        if let Some(d) = self.min_duration {
            if !(d > 0.0) {
                return param("min_duration must be positive");
            }
        }
        if !(self.reference_duration > 0.0) || !(self.merge_gap >= 0.0) {
            return param("reference window must be positive and merge gap non-negative");
        }
        if !(self.threshold_floor >= 0.0) {
            return param("threshold floor must be non-negative");
        }
        Ok(())
    }

    fn min_frames(&self, period: f64) -> usize {
        match self.min_duration {
            Some(d) => ((d / period).round() as usize).max(1),
            None => 5,
        }
    }

    fn gap_frames(&self, period: f64) -> usize {
        (self.merge_gap / period).floor() as usize
    }
}

/// Frame-to-frame activity of a phase series and its threshold.
///
/// `activity[k]` belongs to the increment between frames `k` and `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Activity {
    pub activity: Vec<f64>,
    pub threshold: f64,
    pub region_threshold: f64,
}

pub fn section_activity(series: &[f64], frame_period: f64, params: &OnsetParams) -> Activity {
    let inc: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    if inc.is_empty() {
        return Activity {
            activity: inc,
            threshold: params.threshold_floor,
            region_threshold: params.threshold_floor,
        };
    }
    let ref_len = ((params.reference_duration / frame_period).floor() as usize)
        .max(8)
        .min(inc.len());
    let reference = &inc[..ref_len];
    let center = median(reference);
    let dev: Vec<f64> = reference.iter().map(|v| (v - center).abs()).collect();
    let mad = median(&dev);
    Activity {
        activity: inc.iter().map(|v| (v - center).abs()).collect(),
        threshold: (params.k_mad * mad).max(params.threshold_floor),
        region_threshold: (params.k_region * mad).max(params.threshold_floor),
    }
}

/// Sustained events inside `range` as `(first, last)` increment indices.
///
/// Regions are runs above the region threshold merged across gaps of up to
/// `gap_frames`; a region is an event when at least `min_frames` of its
/// increments exceed the detection threshold, and the event spans the first
/// to the last of those.
fn active_runs(
    act: &Activity,
    range: std::ops::Range<usize>,
    min_frames: usize,
    gap_frames: usize,
) -> Vec<(usize, usize)> {
    let mut regions: Vec<(usize, usize)> = Vec::new();
    for k in range {
        if act.activity[k] <= act.region_threshold {
            continue;
        }
        match regions.last_mut() {
            Some(r) if k - r.1 <= gap_frames + 1 => r.1 = k,
            _ => regions.push((k, k)),
        }
    }
    regions
        .into_iter()
        .filter_map(|(a, b)| {
            let hits: Vec<usize> = (a..=b).filter(|&k| act.activity[k] > act.threshold).collect();
            (hits.len() >= min_frames).then(|| (hits[0], hits[hits.len() - 1]))
        })
        .collect()
}

/// Time assigned to increment `k`: midway between frames `k` and `k + 1`.
fn increment_time(k: usize, period: f64) -> f64 {
    (k as f64 + 0.5) * period
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransientEvent {
    pub section: usize,
    pub section_center: f64,
    pub onset: f64,
    pub duration: f64,
    /// Peak activity over threshold.
    pub quality: f64,
}

/// All sustained transients in every unmasked section, ordered by section
/// then onset.
pub fn detect_transients(
    waterfall: &SectionPhaseWaterfall,
    params: &OnsetParams,
) -> Result<Vec<TransientEvent>> {
    params.validate()?;
    let period = waterfall.frame_period;
    let (min_frames, gap) = (params.min_frames(period), params.gap_frames(period));
    let mut out = Vec::new();
    for (s, section) in waterfall.sections.iter().enumerate() {
        if waterfall.masked[s] {
            continue;
        }
        let act = section_activity(&waterfall.column(s), period, params);
        for (a, b) in active_runs(&act, 0..act.activity.len(), min_frames, gap) {
            let peak = act.activity[a..=b].iter().fold(0.0f64, |m, &v| m.max(v));
            out.push(TransientEvent {
                section: s,
                section_center: section.center,
                onset: increment_time(a, period),
                duration: (b - a + 1) as f64 * period,
                quality: peak / act.threshold,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrikeWindow {
    pub start: f64,
    pub end: f64,
    /// Sections contributing an onset.
    pub sections: usize,
}

/// Groups event onsets into strikes: onsets closer than `gap` chain into one
/// strike. Events below `min_quality` are ignored. Windows open `margin`
/// before the first onset and close at the end of the longest event.
pub fn segment_strikes(
    events: &[TransientEvent],
    gap: f64,
    margin: f64,
    min_quality: f64,
) -> Vec<StrikeWindow> {
    let mut ev: Vec<&TransientEvent> = events.iter().filter(|e| e.quality >= min_quality).collect();
    ev.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    let mut out: Vec<(f64, f64, f64, usize)> = Vec::new(); // first, last onset, end, count
    for e in ev {
        match out.last_mut() {
            Some(w) if e.onset - w.1 <= gap => {
                w.1 = e.onset;
                w.2 = w.2.max(e.onset + e.duration);
                w.3 += 1;
            }
            _ => out.push((e.onset, e.onset, e.onset + e.duration, 1)),
        }
    }
    out.into_iter()
        .map(|(first, _, end, count)| StrikeWindow {
            start: (first - margin).max(0.0),
            end,
            sections: count,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalEntry {
    pub section: usize,
    pub section_center: f64,
    pub arrival: f64,
    pub polarization: Polarization,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArrivalTimeSet {
    pub entries: Vec<ArrivalEntry>,
}

impl ArrivalTimeSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.entries
            .iter()
            .map(|e| (e.section_center, e.arrival))
            .collect()
    }
}

/// First sustained crossing inside `window` (seconds) for every unmasked
/// section.
pub fn extract_arrival_times(
    waterfall: &SectionPhaseWaterfall,
    window: (f64, f64),
    params: &OnsetParams,
) -> Result<ArrivalTimeSet> {
    params.validate()?;
    if !(window.1 > window.0) {
        return param("arrival window must have positive length");
    }
    let period = waterfall.frame_period;
    let (min_frames, gap) = (params.min_frames(period), params.gap_frames(period));
    let mut entries = Vec::new();
    for (s, section) in waterfall.sections.iter().enumerate() {
        if waterfall.masked[s] {
            continue;
        }
        let act = section_activity(&waterfall.column(s), period, params);
        let n = act.activity.len();
        let first = ((window.0 / period - 0.5).ceil().max(0.0) as usize).min(n);
        let last = ((window.1 / period - 0.5).floor().max(-1.0) + 1.0) as usize;
        let range = first..last.min(n).max(first);
        if let Some(&(a, b)) = active_runs(&act, range, min_frames, gap).first() {
            let peak = act.activity[a..=b].iter().fold(0.0f64, |m, &v| m.max(v));
            entries.push(ArrivalEntry {
                section: s,
                section_center: section.center,
                arrival: increment_time(a, period),
                polarization: waterfall.polarization,
                quality: peak / act.threshold,
            });
        }
    }
    Ok(ArrivalTimeSet { entries })
}

/// Per section, the higher-quality polarization; equal quality averages the
/// two arrival times.
pub fn fuse_polarizations(set_x: &ArrivalTimeSet, set_y: &ArrivalTimeSet) -> ArrivalTimeSet {
    let mut entries: Vec<ArrivalEntry> = Vec::new();
    let find = |set: &ArrivalTimeSet, section: usize| {
        set.entries.iter().find(|e| e.section == section).copied()
    };
    let mut sections: Vec<usize> = set_x
        .entries
        .iter()
        .chain(&set_y.entries)
        .map(|e| e.section)
        .collect();
    sections.sort_unstable();
    sections.dedup();
    for s in sections {
        let chosen = match (find(set_x, s), find(set_y, s)) {
            (Some(x), Some(y)) if x.quality == y.quality => ArrivalEntry {
                arrival: 0.5 * (x.arrival + y.arrival),
                ..x
            },
            (Some(x), Some(y)) => {
                if x.quality > y.quality {
                    x
                } else {
                    y
                }
            }
            (Some(e), None) | (None, Some(e)) => e,
            (None, None) => continue,
        };
        entries.push(ArrivalEntry {
            polarization: Polarization::Fused,
            ..chosen
        });
    }
    ArrivalTimeSet { entries }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitParams {
    /// Apex grid step, m.
    pub grid_step: f64,
    /// Grid extension beyond the outermost sections, m.
    pub margin: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            grid_step: 0.5,
            margin: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationFit {
    pub impact_position: f64,
    pub speed: f64,
    pub onset_time: f64,
    pub rmse: f64,
    pub n_points: usize,
    /// All sections lie on one side of the apex; the position is the grid
    /// edge and only the speed is meaningful.
    pub one_sided: bool,
}

/// Least squares of `t = a + b·x`; `None` when `x` has no spread.
fn line_fit(x: &[f64], t: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let mt = t.iter().sum::<f64>() / n;
    let (mut sxx, mut sxt) = (0.0, 0.0);
    for (&xi, &ti) in x.iter().zip(t) {
        sxx += (xi - mx) * (xi - mx);
        sxt += (xi - mx) * (ti - mt);
    }
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if sxx <= 1e-18 * scale * scale * n {
        return None;
    }
    let b = sxt / sxx;
    let a = mt - b * mx;
    let sse = x
        .iter()
        .zip(t)
        .map(|(&xi, &ti)| (ti - a - b * xi).powi(2))
        .sum();
    Some((a, b, sse))
}

fn apex_fit(z: &[f64], t: &[f64], z0: f64) -> Option<(f64, f64, f64)> {
    let a: Vec<f64> = z.iter().map(|zi| (zi - z0).abs()).collect();
    line_fit(&a, t)
}

/// Fits `t = t₀ + |z − z₀| / v` to the arrivals.
///
/// For a fixed apex the model is linear in `(t₀, 1/v)`, so the apex is
/// scanned on a grid and the best cell refined by golden-section search.
pub fn fit_pressure_wave(arrivals: &ArrivalTimeSet, params: &FitParams) -> Result<LocalizationFit> {
    fit_points(&arrivals.points(), params)
}

pub fn fit_points(points: &[(f64, f64)], params: &FitParams) -> Result<LocalizationFit> {
    if !(params.grid_step > 0.0) || !(params.margin >= 0.0) {
        return param("grid step must be positive and margin non-negative");
    }
    let n = points.len();
    let z: Vec<f64> = points.iter().map(|p| p.0).collect();
    let t: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (z_min, z_max) = z
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if n < 3 || !(z_max > z_min) {
        return Err(Error::Underdetermined { points: n });
    }
    let (line_a, line_b, line_sse) =
        line_fit(&z, &t).ok_or(Error::Underdetermined { points: n })?;

    let lo = z_min - params.margin;
    let hi = z_max + params.margin;
    let steps = ((hi - lo) / params.grid_step).ceil() as usize;
    let sse_at = |z0: f64| apex_fit(&z, &t, z0).map_or(f64::INFINITY, |f| f.2);
    let mut best = (lo, f64::INFINITY);
    for i in 0..=steps {
        let z0 = (lo + i as f64 * params.grid_step).min(hi);
        let s = sse_at(z0);
        if s < best.1 {
            best = (z0, s);
        }
    }
    let (mut a, mut b) = (
        (best.0 - params.grid_step).max(lo),
        (best.0 + params.grid_step).min(hi),
    );
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (sse_at(c), sse_at(d));
    for _ in 0..100 {
        if (b - a).abs() < 1e-9 {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = sse_at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = sse_at(d);
        }
    }
    let mut z0 = 0.5 * (a + b);
    if sse_at(z0) > best.1 {
        z0 = best.0;
    }
    let interior = z0 > z_min && z0 < z_max;
    let apex_better = sse_at(z0) < line_sse * (1.0 - 1e-9) - 1e-30;

    let (impact_position, onset_time, slowness, one_sided) = if interior && apex_better {
        let (t0, s, _) = apex_fit(&z, &t, z0).expect("apex fit exists at the optimum");
        (z0, t0, s, false)
    } else if line_b >= 0.0 {
        (lo, line_a + line_b * lo, line_b, true)
    } else {
        (hi, line_a + line_b * hi, -line_b, true)
    };
    if !(slowness > 0.0) || !slowness.is_finite() {
        return Err(Error::DegenerateGeometry(format!(
            "fitted slowness {slowness} s/m is not positive"
        )));
    }
    let speed = 1.0 / slowness;
    let sse: f64 = z
        .iter()
        .zip(&t)
        .map(|(&zi, &ti)| (ti - onset_time - (zi - impact_position).abs() / speed).powi(2))
        .sum();
    Ok(LocalizationFit {
        impact_position,
        speed,
        onset_time,
        rmse: (sse / n as f64).sqrt(),
        n_points: n,
        one_sided,
    })
}
