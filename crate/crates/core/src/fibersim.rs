//! Discrete-reflector fiber model.
//!
//! The fiber is a population of Rayleigh scatterers (one per
//! `scatterer_spacing` interval, circular-Gaussian amplitude, random Jones
//! state) plus deterministic connector reflections. Environmental events
//! impose strain along the fiber; strain is integrated into the round-trip
//! optical phase of every reflector and held constant for the duration of
//! one probe frame.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::probegen::SPEED_OF_LIGHT;
use crate::signal::DualPolFrame;

/// Default strain-optic scaling of silica.
pub const DEFAULT_PHOTOELASTIC_FACTOR: f64 = 0.78;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Connector {
    /// Position along the fiber in meters.
    pub position: f64,
    /// Reflected power relative to launch, dB (negative).
    pub return_loss_db: f64,
}

fn default_photoelastic() -> f64 {
    DEFAULT_PHOTOELASTIC_FACTOR
}

fn default_backscatter() -> f64 {
    -75.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSpec {
    /// Meters.
    pub length: f64,
    pub group_index: f64,
    /// dB/km, one way.
    pub attenuation: f64,
    /// Meters between scatterers; defaults to 1/8 of the spatial resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scatterer_spacing: Option<f64>,
    #[serde(default)]
    pub connectors: Vec<Connector>,
    /// Optical wavelength in meters.
    pub wavelength: f64,
    /// Mean polarization-sum level of the correlated Rayleigh trace at the
    /// fiber start, dB.
    #[serde(default = "default_backscatter")]
    pub backscatter_level_db: f64,
    #[serde(default = "default_photoelastic")]
    pub photoelastic_factor: f64,
}

impl FiberSpec {
    /// Group index giving a group velocity of exactly 2.0e8 m/s.
    pub const DEFAULT_GROUP_INDEX: f64 = SPEED_OF_LIGHT / 2.0e8;

    pub fn group_velocity(&self) -> f64 {
        SPEED_OF_LIGHT / self.group_index
    }

    pub fn spacing(&self, spatial_resolution: f64) -> f64 {
        self.scatterer_spacing.unwrap_or(spatial_resolution / 8.0)
    }

    /// Round-trip delay to position `z`, seconds.
    pub fn round_trip_delay(&self, z: f64) -> f64 {
        2.0 * z * self.group_index / SPEED_OF_LIGHT
    }

    /// Strain-to-phase coefficient `4π n ξ / λ` in rad per (strain · m).
    pub fn strain_phase_coefficient(&self) -> f64 {
        4.0 * PI * self.group_index * self.photoelastic_factor / self.wavelength
    }

    pub fn validate(&self, spatial_resolution: f64) -> Result<()> {
        if !(self.length > 0.0) {
            return param("fiber length must be positive");
        }
        if !(self.group_index > 0.0) {
            return param("group_index must be positive");
        }
        if !(self.wavelength > 0.0) {
            return param("wavelength must be positive");
        }
        if !(self.attenuation >= 0.0) {
            return param("attenuation must be non-negative");
        }
        let spacing = self.spacing(spatial_resolution);
        if !(spacing > 0.0) {
            return param("scatterer_spacing must be positive");
        }
        if spacing > spatial_resolution / 4.0 + 1e-12 {
            return param(format!(
                "scatterer_spacing {spacing} m exceeds a quarter of the {spatial_resolution} m resolution"
            ));
        }
        for (i, c) in self.connectors.iter().enumerate() {
            if !(0.0..=self.length).contains(&c.position) {
                return param(format!("connectors[{i}] position outside the fiber"));
            }
            if !(c.return_loss_db < 0.0) {
                return param(format!("connectors[{i}] return_loss_db must be negative"));
            }
        }
        Ok(())
    }
}

/// Reflector population of one fiber realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererField {
    /// Meters, strictly increasing.
    pub positions: Vec<f64>,
    pub amplitudes: Vec<Complex64>,
    /// Unit-norm Jones vectors (x, y).
    pub pol_states: Vec<[Complex64; 2]>,
    pub seed: u64,
    /// Indices of connector reflections within the arrays above.
    pub connector_indices: Vec<usize>,
}

impl ScattererField {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// A field made of explicit point reflectors (no Rayleigh population).
    pub fn from_reflectors(reflectors: &[(f64, Complex64, [Complex64; 2])]) -> Result<Self> {
        let mut sorted = reflectors.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        if sorted.windows(2).any(|w| w[0].0 >= w[1].0) {
            return param("reflector positions must be distinct");
        }
        Ok(Self {
            positions: sorted.iter().map(|r| r.0).collect(),
            amplitudes: sorted.iter().map(|r| r.1).collect(),
            pol_states: sorted.iter().map(|r| r.2).collect(),
            seed: 0,
            connector_indices: Vec::new(),
        })
    }
}

/// Jones state shared by all connector reflections (45° linear).
pub fn connector_jones() -> [Complex64; 2] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [Complex64::new(s, 0.0), Complex64::new(s, 0.0)]
}

fn random_jones(rng: &mut impl Rng) -> [Complex64; 2] {
    // uniform on the Poincaré sphere
    let cos2t: f64 = rng.random_range(-1.0..=1.0);
    let theta = 0.5 * cos2t.acos();
    let psi = rng.random_range(0.0..TAU);
    [
        Complex64::new(theta.cos(), 0.0),
        Complex64::from_polar(theta.sin(), psi),
    ]
}

/// Draws the Rayleigh population and inserts connector reflections.
///
/// Amplitude variance is chosen so that the matched-filter output of a
/// rectangular pulse of width `spatial_resolution` has mean power
/// `backscatter_level_db` (the triangle response integrates to 2W/3).
pub fn generate_scatterer_field(
    spec: &FiberSpec,
    spatial_resolution: f64,
    seed: u64,
) -> Result<ScattererField> {
    let spacing = spec.spacing(spatial_resolution);
    if !(spacing > 0.0) {
        return param("scatterer_spacing must be positive");
    }
    if !(spec.length > 0.0) {
        return param("fiber length must be positive");
    }
    let count = (spec.length / spacing).round() as usize;
    let variance =
        10f64.powf(spec.backscatter_level_db / 10.0) * spacing / (2.0 * spatial_resolution / 3.0);
    let sigma = (variance / 2.0).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(count + spec.connectors.len());
    let mut amplitudes = Vec::with_capacity(positions.capacity());
    let mut pol_states = Vec::with_capacity(positions.capacity());
    for i in 0..count {
        let u: f64 = rng.random();
        positions.push((i as f64 + u) * spacing);
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        amplitudes.push(Complex64::new(re * sigma, im * sigma));
        pol_states.push(random_jones(&mut rng));
    }

    let mut connectors = spec.connectors.clone();
    connectors.sort_by(|a, b| a.position.total_cmp(&b.position));
    for c in &connectors {
        let idx = positions.partition_point(|&p| p < c.position);
        positions.insert(idx, c.position);
        amplitudes.insert(idx, Complex64::new(10f64.powf(c.return_loss_db / 20.0), 0.0));
        pol_states.insert(idx, connector_jones());
    }
    let connector_indices = positions
        .iter()
        .enumerate()
        .filter(|(_, p)| connectors.iter().any(|c| c.position == **p))
        .map(|(i, _)| i)
        .collect();

    Ok(ScattererField {
        positions,
        amplitudes,
        pol_states,
        seed,
        connector_indices,
    })
}

fn default_envelope() -> f64 {
    0.1
}

fn default_decay_length() -> Option<f64> {
    Some(20.0)
}

fn default_jitter_cell() -> f64 {
    2.0
}

/// An environmental strain source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventSpec {
    /// Sinusoidal strain confined to a fiber span.
    HarmonicVibration {
        span: [f64; 2],
        frequency: f64,
        strain_amplitude: f64,
        #[serde(default)]
        phase_offset: f64,
    },
    /// Pressure wave launched by an impact, reaching fiber position `z` at
    /// `onset_time + |z - impact_position| / soil_speed` (plus an optional
    /// per-cell random delay) with a Hann envelope of `envelope_duration`.
    PressureWaveImpact {
        impact_position: f64,
        onset_time: f64,
        soil_speed: f64,
        peak_strain: f64,
        #[serde(default = "default_envelope")]
        envelope_duration: f64,
        /// Amplitude falls as `1 / (1 + |z - z0| / decay_length)`; `null`
        /// disables the decay.
        #[serde(default = "default_decay_length")]
        decay_length: Option<f64>,
        /// Standard deviation of the per-cell arrival delay, seconds.
        #[serde(default)]
        arrival_jitter: f64,
        #[serde(default = "default_jitter_cell")]
        jitter_cell: f64,
        #[serde(default)]
        jitter_seed: u64,
    },
}

impl EventSpec {
    /// Validates against the fiber length and the frame rate the strain is
    /// sampled at.
    pub fn validate(&self, fiber_length: f64, frame_rate: f64) -> Result<()> {
        match *self {
            EventSpec::HarmonicVibration {
                span, frequency, ..
            } => {
                if !(span[0] <= span[1]) || span[0] < 0.0 || span[1] > fiber_length {
                    return param(format!(
                        "vibration span [{}, {}] not within the fiber",
                        span[0], span[1]
                    ));
                }
                if !(frequency >= 0.0) || frequency >= frame_rate / 2.0 {
                    return param(format!(
                        "vibration frequency {frequency} Hz not below half the {frame_rate:.1} Hz frame rate"
                    ));
                }
            }
            EventSpec::PressureWaveImpact {
                impact_position,
                soil_speed,
                envelope_duration,
                decay_length,
                arrival_jitter,
                jitter_cell,
                ..
            } => {
                if !(0.0..=fiber_length).contains(&impact_position) {
                    return param("impact_position outside the fiber");
                }
                if !(soil_speed > 0.0) {
                    return param("soil_speed must be positive");
                }
                if !(envelope_duration > 0.0) {
                    return param("envelope_duration must be positive");
                }
                if decay_length.is_some_and(|l| !(l > 0.0)) {
                    return param("decay_length must be positive");
                }
                if !(arrival_jitter >= 0.0) || !(jitter_cell > 0.0) {
                    return param("arrival_jitter must be >= 0 and jitter_cell > 0");
                }
            }
        }
        Ok(())
    }
}

/// Raised-cosine burst on `[0, duration]`, peak 1 at the center.
pub fn hann_envelope(tau: f64, duration: f64) -> f64 {
    if tau <= 0.0 || tau >= duration {
        0.0
    } else {
        0.5 * (1.0 - (TAU * tau / duration).cos())
    }
}

#[derive(Debug, Clone)]
enum CompiledEvent {
    Harmonic {
        lo: f64,
        hi: f64,
        frequency: f64,
        amplitude: f64,
        offset: f64,
    },
    Impact {
        z0: f64,
        onset: f64,
        speed: f64,
        peak: f64,
        duration: f64,
        decay: Option<f64>,
        cell: f64,
        delays: Vec<f64>,
    },
}

/// Events prepared for repeated strain evaluation.
#[derive(Debug, Clone, Default)]
pub struct StrainModel {
    events: Vec<CompiledEvent>,
}

impl StrainModel {
    pub fn new(events: &[EventSpec], fiber_length: f64) -> Self {
        let events = events
            .iter()
            .map(|e| match *e {
                EventSpec::HarmonicVibration {
                    span,
                    frequency,
                    strain_amplitude,
                    phase_offset,
                } => CompiledEvent::Harmonic {
                    lo: span[0],
                    hi: span[1],
                    frequency,
                    amplitude: strain_amplitude,
                    offset: phase_offset,
                },
                EventSpec::PressureWaveImpact {
                    impact_position,
                    onset_time,
                    soil_speed,
                    peak_strain,
                    envelope_duration,
                    decay_length,
                    arrival_jitter,
                    jitter_cell,
                    jitter_seed,
                } => {
                    let delays = if arrival_jitter > 0.0 {
                        let cells = (fiber_length / jitter_cell).ceil() as usize + 1;
                        let mut rng = ChaCha8Rng::seed_from_u64(jitter_seed);
                        (0..cells)
                            .map(|_| {
                                let n: f64 = StandardNormal.sample(&mut rng);
                                n * arrival_jitter
                            })
                            .collect()
                    } else {
                        Vec::new()
                    };
                    CompiledEvent::Impact {
                        z0: impact_position,
                        onset: onset_time,
                        speed: soil_speed,
                        peak: peak_strain,
                        duration: envelope_duration,
                        decay: decay_length,
                        cell: jitter_cell,
                        delays,
                    }
                }
            })
            .collect();
        Self { events }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Time the pressure wave of event `index` reaches `z`, or `None` for
    /// events without an arrival.
    pub fn arrival_time(&self, index: usize, z: f64) -> Option<f64> {
        match self.events.get(index)? {
            CompiledEvent::Impact {
                z0,
                onset,
                speed,
                cell,
                delays,
                ..
            } => {
                let jitter = if delays.is_empty() {
                    0.0
                } else {
                    let k = ((z.max(0.0) / cell) as usize).min(delays.len() - 1);
                    delays[k]
                };
                Some(onset + (z - z0).abs() / speed + jitter)
            }
            CompiledEvent::Harmonic { .. } => None,
        }
    }

    /// Total strain at fiber position `z` and time `t`.
    pub fn evaluate(&self, z: f64, t: f64) -> f64 {
        let mut strain = 0.0;
        for (i, e) in self.events.iter().enumerate() {
            match *e {
                CompiledEvent::Harmonic {
                    lo,
                    hi,
                    frequency,
                    amplitude,
                    offset,
                } => {
                    if z >= lo && z <= hi {
                        strain += amplitude * (TAU * frequency * t + offset).sin();
                    }
                }
                CompiledEvent::Impact {
                    z0,
                    peak,
                    duration,
                    decay,
                    ..
                } => {
                    let arrive = self.arrival_time(i, z).unwrap_or(f64::INFINITY);
                    let env = hann_envelope(t - arrive, duration);
                    if env > 0.0 {
                        let gain = decay.map_or(1.0, |l| 1.0 / (1.0 + (z - z0).abs() / l));
                        strain += peak * gain * env;
                    }
                }
            }
        }
        strain
    }
}

/// Strain at `(z, t)` summed over `events`.
pub fn evaluate_strain(events: &StrainModel, z: f64, t: f64) -> f64 {
    events.evaluate(z, t)
}

/// Strain integral `∫₀^{z_i} ε(u, t) du` for every reflector, midpoint rule
/// over the reflector intervals.
pub fn strain_integrals(field: &ScattererField, events: &StrainModel, t: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut prev = 0.0;
    field
        .positions
        .iter()
        .map(|&z| {
            if !events.is_empty() && z > prev {
                acc += events.evaluate(0.5 * (prev + z), t) * (z - prev);
            }
            prev = z;
            acc
        })
        .collect()
}

/// Round-trip optical phase of reflector `index` at time `t`:
/// `4πn/λ · (z + ξ ∫₀^z ε du)`.
pub fn roundtrip_phase(
    field: &ScattererField,
    events: &StrainModel,
    spec: &FiberSpec,
    index: usize,
    t: f64,
) -> Result<f64> {
    let Some(&z) = field.positions.get(index) else {
        return param(format!("reflector index {index} out of range"));
    };
    let mut integral = 0.0;
    let mut prev = 0.0;
    if !events.is_empty() {
        for &p in &field.positions[..=index] {
            if p > prev {
                integral += events.evaluate(0.5 * (prev + p), t) * (p - prev);
            }
            prev = p;
        }
    }
    let k = 4.0 * PI * spec.group_index / spec.wavelength;
    Ok(k * (z + spec.photoelastic_factor * integral))
}

/// `4πn z/λ` reduced to [0, 2π) without losing precision at long ranges.
fn static_phase(z: f64, spec: &FiberSpec) -> f64 {
    let cycles = 2.0 * spec.group_index * z / spec.wavelength;
    TAU * (cycles - cycles.floor())
}

/// Repeated-frame synthesizer: precomputes per-reflector delays, static
/// phasors and the probe spectrum so each frame costs one strain pass and
/// two FFT convolutions.
pub struct FrameSynthesizer {
    frame_len: usize,
    n_fft: usize,
    delays: Vec<usize>,
    /// a_i · J_i · attenuation · static phasor, per polarization.
    base: Vec<[Complex64; 2]>,
    field: Arc<ScattererField>,
    phase_coefficient: f64,
    probe_spectrum: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FrameSynthesizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrameSynthesizer")
            .field("frame_len", &self.frame_len)
            .field("n_fft", &self.n_fft)
            .field("reflectors", &self.delays.len())
            .finish()
    }
}

impl FrameSynthesizer {
    /// `probe` is the full transmitted frame waveform at the receiver
    /// sample rate; the synthesized record has the same length.
    pub fn new(
        probe: &[f64],
        active_len: usize,
        field: Arc<ScattererField>,
        spec: &FiberSpec,
        sample_rate: f64,
    ) -> Result<Self> {
        if probe.is_empty() || active_len == 0 || active_len > probe.len() {
            return param("probe waveform must be nonempty with a valid active length");
        }
        if !(sample_rate > 0.0) {
            return param("sample_rate must be positive");
        }
        let frame_len = probe.len();
        let delays: Vec<usize> = field
            .positions
            .iter()
            .map(|&z| (spec.round_trip_delay(z) * sample_rate).round() as usize)
            .collect();
        let max_delay = delays.iter().copied().max().unwrap_or(0);
        if max_delay + active_len > frame_len {
            return param(format!(
                "record of {frame_len} samples cannot hold the {} sample return; increase padding",
                max_delay + active_len
            ));
        }
        let alpha = spec.attenuation;
        let base = field
            .positions
            .iter()
            .zip(&field.amplitudes)
            .zip(&field.pol_states)
            .map(|((&z, &a), j)| {
                // round trip 2z in km, dB halved for amplitude
                let att = 10f64.powf(-alpha * 2.0 * z / 1000.0 / 20.0);
                let c = a * att * Complex64::from_polar(1.0, static_phase(z, spec));
                [c * j[0], c * j[1]]
            })
            .collect();

        let n_fft = (active_len + max_delay).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n_fft);
        let inverse = planner.plan_fft_inverse(n_fft);
        let mut probe_spectrum = vec![Complex64::default(); n_fft];
        for (dst, &v) in probe_spectrum.iter_mut().zip(&probe[..active_len]) {
            dst.re = v;
        }
        forward.process(&mut probe_spectrum);

        Ok(Self {
            frame_len,
            n_fft,
            delays,
            base,
            field,
            phase_coefficient: spec.strain_phase_coefficient(),
            probe_spectrum,
            forward,
            inverse,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn field(&self) -> &ScattererField {
        &self.field
    }

    /// Fiber impulse response on the sample grid with strain frozen at `t`.
    pub fn impulse_response(&self, events: &StrainModel, t: f64) -> [Vec<Complex64>; 2] {
        let max_delay = self.delays.iter().copied().max().unwrap_or(0);
        let mut hx = vec![Complex64::default(); max_delay + 1];
        let mut hy = hx.clone();
        if events.is_empty() {
            for (&d, b) in self.delays.iter().zip(&self.base) {
                hx[d] += b[0];
                hy[d] += b[1];
            }
        } else {
            let integrals = strain_integrals(&self.field, events, t);
            for ((&d, b), &integral) in self.delays.iter().zip(&self.base).zip(&integrals) {
                let rot = Complex64::from_polar(1.0, self.phase_coefficient * integral);
                hx[d] += b[0] * rot;
                hy[d] += b[1] * rot;
            }
        }
        [hx, hy]
    }

    /// Noiseless dual-polarization record for the frame starting at `t`.
    pub fn synthesize(&self, events: &StrainModel, t: f64) -> DualPolFrame {
        let [hx, hy] = self.impulse_response(events, t);
        DualPolFrame {
            x: self.convolve(&hx),
            y: self.convolve(&hy),
        }
    }

    fn convolve(&self, h: &[Complex64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::default(); self.n_fft];
        buf[..h.len()].copy_from_slice(h);
        self.forward.process(&mut buf);
        for (b, p) in buf.iter_mut().zip(&self.probe_spectrum) {
            *b *= p;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.n_fft as f64;
        let mut out = vec![Complex64::default(); self.frame_len];
        let valid = self.n_fft.min(self.frame_len);
        for (o, b) in out[..valid].iter_mut().zip(&buf) {
            *o = b * scale;
        }
        out
    }
}

/// One-shot form of [`FrameSynthesizer::synthesize`].
pub fn synthesize_frame_response(
    probe: &[f64],
    active_len: usize,
    field: &ScattererField,
    events: &StrainModel,
    frame_start_time: f64,
    spec: &FiberSpec,
    sample_rate: f64,
) -> Result<DualPolFrame> {
    if !(frame_start_time >= 0.0) {
        return param("frame_start_time must be non-negative");
    }
    let synth = FrameSynthesizer::new(
        probe,
        active_len,
        Arc::new(field.clone()),
        spec,
        sample_rate,
    )?;
    Ok(synth.synthesize(events, frame_start_time))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_spec() -> FiberSpec {
        FiberSpec {
            length: 600.0,
            group_index: FiberSpec::DEFAULT_GROUP_INDEX,
            attenuation: 0.2,
            scatterer_spacing: Some(0.05),
            connectors: vec![],
            wavelength: 1550e-9,
            backscatter_level_db: -75.0,
            photoelastic_factor: DEFAULT_PHOTOELASTIC_FACTOR,
        }
    }

    #[test]
    fn field_count_and_order() {
        let f = generate_scatterer_field(&desk_spec(), 0.8, 7).unwrap();
        assert_eq!(f.len(), 12_000);
        assert!(f.positions.windows(2).all(|w| w[0] < w[1]));
        for j in &f.pol_states {
            let n = j[0].norm_sqr() + j[1].norm_sqr();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn field_is_deterministic() {
        let a = generate_scatterer_field(&desk_spec(), 0.8, 7).unwrap();
        let b = generate_scatterer_field(&desk_spec(), 0.8, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_scatterer_field(&desk_spec(), 0.8, 8).unwrap();
        assert_ne!(a.amplitudes, c.amplitudes);
    }

    #[test]
    fn connector_reflector() {
        let mut spec = desk_spec();
        spec.connectors.push(Connector {
            position: 100.0,
            return_loss_db: -45.0,
        });
        let f = generate_scatterer_field(&spec, 0.8, 7).unwrap();
        assert_eq!(f.connector_indices.len(), 1);
        let i = f.connector_indices[0];
        assert_eq!(f.positions[i], 100.0);
        assert!((f.amplitudes[i].re - 10f64.powf(-45.0 / 20.0)).abs() < 1e-15);
        assert_eq!(f.amplitudes[i].im, 0.0);
        assert!(f.positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn bad_spacing() {
        let mut spec = desk_spec();
        spec.scatterer_spacing = Some(0.0);
        assert!(generate_scatterer_field(&spec, 0.8, 1).is_err());
        spec.scatterer_spacing = Some(0.5);
        assert!(spec.validate(0.8).is_err());
    }

    #[test]
    fn amplitude_statistics_are_circular() {
        let f = generate_scatterer_field(&desk_spec(), 0.8, 3).unwrap();
        let n = f.len() as f64;
        let var_re: f64 = f.amplitudes.iter().map(|a| a.re * a.re).sum::<f64>() / n;
        let var_im: f64 = f.amplitudes.iter().map(|a| a.im * a.im).sum::<f64>() / n;
        let cross: f64 = f.amplitudes.iter().map(|a| a.re * a.im).sum::<f64>() / n;
        let expected = 10f64.powf(-7.5) * 0.05 / (2.0 * 0.8 / 3.0) / 2.0;
        // 12000 samples: relative std of a variance estimate is sqrt(2/n) ≈ 1.3%
        assert!((var_re / expected - 1.0).abs() < 0.06);
        assert!((var_im / expected - 1.0).abs() < 0.06);
        assert!(cross.abs() < 0.06 * expected);
    }

    fn tone() -> EventSpec {
        EventSpec::HarmonicVibration {
            span: [74.0, 82.0],
            frequency: 50.0,
            strain_amplitude: 1e-8,
            phase_offset: 0.0,
        }
    }

    fn impact() -> EventSpec {
        EventSpec::PressureWaveImpact {
            impact_position: 336.8,
            onset_time: 0.105,
            soil_speed: 433.0,
            peak_strain: 1e-8,
            envelope_duration: 0.1,
            decay_length: None,
            arrival_jitter: 0.0,
            jitter_cell: 2.0,
            jitter_seed: 0,
        }
    }

    #[test]
    fn harmonic_strain() {
        let m = StrainModel::new(&[tone()], 600.0);
        assert!((m.evaluate(78.0, 0.005) - 1e-8).abs() < 1e-20);
        assert_eq!(m.evaluate(90.0, 0.005), 0.0);
    }

    #[test]
    fn impact_arrival() {
        let m = StrainModel::new(&[impact()], 600.0);
        assert_eq!(m.evaluate(346.0, 0.105), 0.0);
        let arrive: f64 = 0.105 + 9.2 / 433.0;
        assert!((arrive - 0.12625).abs() < 1e-4);
        assert_eq!(m.evaluate(346.0, arrive - 1e-6), 0.0);
        assert!(m.evaluate(346.0, arrive + 1e-3) > 0.0);
        // envelope peak at half duration, no decay
        assert!((m.evaluate(346.0, arrive + 0.05) - 1e-8).abs() < 1e-20);
    }

    #[test]
    fn impact_decay_and_jitter() {
        let mut e = impact();
        if let EventSpec::PressureWaveImpact {
            decay_length,
            arrival_jitter,
            ..
        } = &mut e
        {
            *decay_length = Some(10.0);
            *arrival_jitter = 1.6e-3;
        }
        let m = StrainModel::new(&[e.clone()], 600.0);
        let t0 = m.arrival_time(0, 356.8).unwrap();
        let nominal = 0.105 + 20.0 / 433.0;
        assert!((t0 - nominal).abs() < 10e-3);
        assert!((t0 - nominal).abs() > 0.0);
        let peak = m.evaluate(356.8, t0 + 0.05);
        assert!((peak - 1e-8 / 3.0).abs() < 1e-20);
        // same seed, same delays
        let m2 = StrainModel::new(&[e], 600.0);
        assert_eq!(m2.arrival_time(0, 356.8), m.arrival_time(0, 356.8));
    }

    fn two_reflector_field() -> ScattererField {
        let j = [Complex64::new(1.0, 0.0), Complex64::default()];
        ScattererField::from_reflectors(&[
            (10.0, Complex64::new(1.0, 0.0), j),
            (25.0, Complex64::new(0.5, 0.0), j),
        ])
        .unwrap()
    }

    fn lossless(spec: &mut FiberSpec) {
        spec.attenuation = 0.0;
    }

    #[test]
    fn static_phase_and_uniform_strain() {
        let mut spec = desk_spec();
        lossless(&mut spec);
        let field = two_reflector_field();
        let quiet = StrainModel::default();
        let k = 4.0 * PI * spec.group_index / spec.wavelength;
        let p = roundtrip_phase(&field, &quiet, &spec, 1, 0.0).unwrap();
        assert!((p - k * 25.0).abs() < 1e-6);

        let uniform = |eps: f64| {
            StrainModel::new(
                &[EventSpec::HarmonicVibration {
                    span: [0.0, 600.0],
                    frequency: 0.0,
                    strain_amplitude: eps,
                    phase_offset: PI / 2.0,
                }],
                600.0,
            )
        };
        let d1 = roundtrip_phase(&field, &uniform(1e-9), &spec, 1, 0.0).unwrap() - p;
        let expected = k * spec.photoelastic_factor * 1e-9 * 25.0;
        // both phases are ~1e8 rad, so the difference carries ~1e-8 rad of rounding
        assert!((d1 - expected).abs() < 1e-6);
        let d2 = roundtrip_phase(&field, &uniform(2e-9), &spec, 1, 0.0).unwrap() - p;
        assert!((d2 / d1 - 2.0).abs() < 1e-6);
        assert!(roundtrip_phase(&field, &quiet, &spec, 9, 0.0).is_err());
    }

    fn short_probe() -> (Vec<f64>, usize) {
        let bits = crate::probegen::generate_prbs(
            7,
            crate::probegen::TapMask::default_for(7).unwrap(),
            0x7f,
        )
        .unwrap();
        let frame = crate::probegen::build_probe_frame(&bits, 200)
            .unwrap()
            .modulated(5)
            .unwrap();
        let active = frame.active_length * 5;
        (frame.waveform, active)
    }

    /// Direct sum over reflectors, evaluated sample by sample.
    fn direct_sum(
        probe: &[f64],
        active: usize,
        field: &ScattererField,
        spec: &FiberSpec,
        events: &StrainModel,
        t: f64,
        fs: f64,
    ) -> DualPolFrame {
        let mut out = DualPolFrame::zeros(probe.len());
        for i in 0..field.len() {
            let z = field.positions[i];
            let d = (spec.round_trip_delay(z) * fs).round() as usize;
            let phi = roundtrip_phase(field, events, spec, i, t).unwrap();
            let att = 10f64.powf(-spec.attenuation * 2.0 * z / 1000.0 / 20.0);
            let c = field.amplitudes[i] * att * Complex64::from_polar(1.0, phi);
            for n in 0..active {
                if n + d < probe.len() {
                    out.x[n + d] += c * field.pol_states[i][0] * probe[n];
                    out.y[n + d] += c * field.pol_states[i][1] * probe[n];
                }
            }
        }
        out
    }

    #[test]
    fn single_reflector_is_delayed_probe() {
        let mut spec = desk_spec();
        lossless(&mut spec);
        let (probe, active) = short_probe();
        let fs = 625e6;
        // 16 m -> delay 100 samples at 0.16 m per sample
        let j = [Complex64::new(1.0, 0.0), Complex64::default()];
        let field =
            ScattererField::from_reflectors(&[(16.0, Complex64::new(1.0, 0.0), j)]).unwrap();
        let rec = synthesize_frame_response(
            &probe,
            active,
            &field,
            &StrainModel::default(),
            0.0,
            &spec,
            fs,
        )
        .unwrap();
        let phase = rec.x[100] / probe[0];
        assert!((phase.norm() - 1.0).abs() < 1e-9);
        for n in 0..probe.len() {
            let expected = if n >= 100 { probe[n - 100] } else { 0.0 };
            assert!((rec.x[n] - phase * expected).norm() < 1e-9, "sample {n}");
            assert!(rec.y[n].norm() < 1e-9);
        }
    }

    #[test]
    fn synthesis_matches_direct_sum_and_is_linear() {
        let mut spec = desk_spec();
        spec.length = 60.0;
        spec.scatterer_spacing = Some(0.1);
        let (probe, active) = short_probe();
        let fs = 625e6;
        let events = StrainModel::new(
            &[EventSpec::HarmonicVibration {
                span: [20.0, 30.0],
                frequency: 50.0,
                strain_amplitude: 1e-7,
                phase_offset: 0.3,
            }],
            60.0,
        );
        let field = generate_scatterer_field(&spec, 0.8, 11).unwrap();
        let fast =
            synthesize_frame_response(&probe, active, &field, &events, 0.004, &spec, fs).unwrap();
        let slow = direct_sum(&probe, active, &field, &spec, &events, 0.004, fs);
        // the oracle evaluates exp(j·4πnz/λ) at ~1e8 rad, good to ~1e-8 rad
        let scale = slow.energy().sqrt();
        for n in 0..probe.len() {
            assert!((fast.x[n] - slow.x[n]).norm() < 1e-6 * scale);
            assert!((fast.y[n] - slow.y[n]).norm() < 1e-6 * scale);
        }
        // energy against the oracle within 1%
        assert!((fast.energy() / slow.energy() - 1.0).abs() < 0.01);

        // split the field in two and superpose
        let split = field.len() / 2;
        let part = |r: std::ops::Range<usize>| ScattererField {
            positions: field.positions[r.clone()].to_vec(),
            amplitudes: field.amplitudes[r.clone()].to_vec(),
            pol_states: field.pol_states[r].to_vec(),
            seed: 0,
            connector_indices: vec![],
        };
        // strain integrals are path integrals from 0, so superposition
        // holds for the quiet fiber
        let quiet = StrainModel::default();
        let whole =
            synthesize_frame_response(&probe, active, &field, &quiet, 0.0, &spec, fs).unwrap();
        let a = synthesize_frame_response(&probe, active, &part(0..split), &quiet, 0.0, &spec, fs)
            .unwrap();
        let b = synthesize_frame_response(
            &probe,
            active,
            &part(split..field.len()),
            &quiet,
            0.0,
            &spec,
            fs,
        )
        .unwrap();
        for n in 0..probe.len() {
            assert!((whole.x[n] - a.x[n] - b.x[n]).norm() < 1e-12);
        }
    }

    #[test]
    fn record_too_short() {
        let spec = desk_spec();
        let (probe, active) = short_probe();
        let field = two_reflector_field();
        let mut far = field.clone();
        far.positions[1] = 500.0;
        let r = synthesize_frame_response(
            &probe,
            active,
            &far,
            &StrainModel::default(),
            0.0,
            &spec,
            625e6,
        );
        assert!(r.is_err());
    }
}
