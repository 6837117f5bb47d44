//! Probe sequence generation: maximal-length PRBS, balanced BPSK frame with
//! zero padding, NRZ waveform and the derived frame timing.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Vacuum speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default group velocity in standard single-mode fiber (n_g ≈ 1.5).
pub const DEFAULT_GROUP_VELOCITY: f64 = 2.0e8;

/// Primitive feedback polynomials, one per register length 2..=31.
/// Each entry lists the exponents of the non-constant terms.
const DEFAULT_TAPS: [&[u32]; 30] = [
    &[2, 1],
    &[3, 2],
    &[4, 3],
    &[5, 3],
    &[6, 5],
    &[7, 6],
    &[8, 6, 5, 4],
    &[9, 5],
    &[10, 7],
    &[11, 9],
    &[12, 6, 4, 1],
    &[13, 12, 2, 1],
    &[14, 5, 3, 1],
    &[15, 14],
    &[16, 15, 13, 4],
    &[17, 14],
    &[18, 11],
    &[19, 6, 2, 1],
    &[20, 17],
    &[21, 19],
    &[22, 21],
    &[23, 18],
    &[24, 23, 22, 17],
    &[25, 22],
    &[26, 6, 2, 1],
    &[27, 5, 2, 1],
    &[28, 25],
    &[29, 27],
    &[30, 6, 4, 1],
    &[31, 28],
];

/// LFSR feedback tap mask. Bit `k - 1` set means the register stage `k`
/// (the bit emitted `k` steps ago) feeds back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TapMask(pub u32);

impl TapMask {
    pub fn from_exponents(exponents: &[u32]) -> Result<Self> {
        let mut mask = 0u32;
        for &k in exponents {
            if !(1..=31).contains(&k) {
                return param(format!("tap exponent {k} outside 1..=31"));
            }
            mask |= 1 << (k - 1);
        }
        Ok(Self(mask))
    }

    /// The built-in primitive polynomial for `order`.
    pub fn default_for(order: u32) -> Result<Self> {
        check_order(order)?;
        Self::from_exponents(DEFAULT_TAPS[(order - 2) as usize])
    }
}

fn check_order(order: u32) -> Result<()> {
    if !(2..=31).contains(&order) {
        return param(format!("PRBS order {order} outside [2, 31]"));
    }
    Ok(())
}

/// Probe configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub prbs_order: u32,
    /// Defaults to the built-in primitive polynomial for `prbs_order`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback_taps: Option<TapMask>,
    /// Defaults to all ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<u32>,
    /// Symbol rate in Hz.
    pub baud_rate: f64,
    pub padding_symbols: usize,
    pub samples_per_symbol: usize,
}

impl ProbeConfig {
    /// 8191-bit PRBS at 125 MBaud with 21250 padding symbols, 5 samples per
    /// symbol (625 MS/s acquisition).
    pub fn paper() -> Self {
        Self {
            prbs_order: 13,
            feedback_taps: None,
            initial_state: None,
            baud_rate: 125e6,
            padding_symbols: 21_250,
            samples_per_symbol: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_order(self.prbs_order)?;
        if !(self.baud_rate > 0.0) || !self.baud_rate.is_finite() {
            return param("baud_rate must be positive");
        }
        if self.samples_per_symbol < 1 {
            return param("samples_per_symbol must be at least 1");
        }
        if self.taps()?.0 == 0 {
            return param("feedback_taps must be nonzero");
        }
        Ok(())
    }

    pub fn taps(&self) -> Result<TapMask> {
        match self.feedback_taps {
            Some(t) => Ok(t),
            None => TapMask::default_for(self.prbs_order),
        }
    }

    pub fn seed_state(&self) -> u32 {
        self.initial_state
            .unwrap_or_else(|| low_mask(self.prbs_order))
    }

    /// Count of ±1 symbols: the PRBS plus the trailing −1.
    pub fn active_symbols(&self) -> usize {
        1usize << self.prbs_order
    }

    pub fn total_symbols(&self) -> usize {
        self.active_symbols() + self.padding_symbols
    }

    pub fn sample_rate(&self) -> f64 {
        self.baud_rate * self.samples_per_symbol as f64
    }

    pub fn frame_samples(&self) -> usize {
        self.total_symbols() * self.samples_per_symbol
    }

    /// Generates the PRBS, frames it and modulates it at the configured
    /// oversampling.
    pub fn build(&self) -> Result<ProbeFrame> {
        self.validate()?;
        let bits = generate_prbs(self.prbs_order, self.taps()?, self.seed_state())?;
        build_probe_frame(&bits, self.padding_symbols)?.modulated(self.samples_per_symbol)
    }
}

fn low_mask(order: u32) -> u32 {
    if order >= 32 {
        u32::MAX
    } else {
        (1u32 << order) - 1
    }
}

/// One period (`2^order - 1` bits) of the Fibonacci LFSR sequence. The
/// register contents are emitted first, oldest stage first.
pub fn generate_prbs(order: u32, taps: TapMask, initial_state: u32) -> Result<Vec<bool>> {
    check_order(order)?;
    let full = low_mask(order);
    let mut state = initial_state & full;
    if state == 0 {
        return Err(Error::StuckState);
    }
    let taps = taps.0 & full;
    if taps == 0 {
        return param("feedback_taps must select at least one register stage");
    }
    let len = full as usize;
    let mut bits = Vec::with_capacity(len);
    for _ in 0..len {
        bits.push((state >> (order - 1)) & 1 == 1);
        let feedback = (state & taps).count_ones() & 1;
        state = ((state << 1) | feedback) & full;
    }
    Ok(bits)
}

/// Transmitted symbol frame: PRBS mapped to ±1, one trailing −1, then zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFrame {
    pub symbols: Vec<i8>,
    pub active_length: usize,
    pub samples_per_symbol: usize,
    /// NRZ waveform at `samples_per_symbol` samples per symbol.
    pub waveform: Vec<f64>,
}

impl ProbeFrame {
    pub fn total_length(&self) -> usize {
        self.symbols.len()
    }

    pub fn padding_length(&self) -> usize {
        self.symbols.len() - self.active_length
    }

    /// Waveform samples covering the ±1 part of the frame.
    pub fn active_waveform(&self) -> &[f64] {
        &self.waveform[..self.active_length * self.samples_per_symbol]
    }

    /// Energy of the active waveform (sum of squares).
    pub fn active_energy(&self) -> f64 {
        self.active_waveform().iter().map(|v| v * v).sum()
    }

    pub fn modulated(mut self, samples_per_symbol: usize) -> Result<Self> {
        self.waveform = modulate_bpsk(&self, samples_per_symbol)?;
        self.samples_per_symbol = samples_per_symbol;
        Ok(self)
    }
}

pub fn build_probe_frame(bits: &[bool], padding_symbols: usize) -> Result<ProbeFrame> {
    if bits.is_empty() {
        return param("PRBS bit sequence is empty");
    }
    let mut symbols = Vec::with_capacity(bits.len() + 1 + padding_symbols);
    symbols.extend(bits.iter().map(|&b| if b { 1i8 } else { -1 }));
    symbols.push(-1);
    let active_length = symbols.len();
    symbols.resize(active_length + padding_symbols, 0);
    let waveform = symbols.iter().map(|&s| s as f64).collect();
    Ok(ProbeFrame {
        symbols,
        active_length,
        samples_per_symbol: 1,
        waveform,
    })
}

/// Rectangular (sample-and-hold) BPSK pulse shaping.
pub fn modulate_bpsk(frame: &ProbeFrame, samples_per_symbol: usize) -> Result<Vec<f64>> {
    if samples_per_symbol < 1 {
        return param("samples_per_symbol must be at least 1");
    }
    Ok(frame
        .symbols
        .iter()
        .flat_map(|&s| std::iter::repeat_n(s as f64, samples_per_symbol))
        .collect())
}

/// Frame-level timing derived from the probe configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingInfo {
    /// Seconds per transmitted frame.
    pub frame_duration: f64,
    /// Frames per second.
    pub probe_rate: f64,
    /// Two-point resolution along the fiber in meters.
    pub spatial_resolution: f64,
    pub symbol_duration: f64,
}

pub fn frame_timing(config: &ProbeConfig, group_velocity: f64) -> Result<TimingInfo> {
    if !(config.baud_rate > 0.0) {
        return param("baud_rate must be positive");
    }
    if !(group_velocity > 0.0) {
        return param("group_velocity must be positive");
    }
    let symbols = config.total_symbols() as f64;
    Ok(TimingInfo {
        frame_duration: symbols / config.baud_rate,
        probe_rate: config.baud_rate / symbols,
        spatial_resolution: group_velocity / (2.0 * config.baud_rate),
        symbol_duration: 1.0 / config.baud_rate,
    })
}
