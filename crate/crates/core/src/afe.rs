//! Behavioral model of the analog front-end.
//!
//! Each channel is a second-order band-pass filter (standing in for the GIC
//! stage), an active envelope detector with gain, and a comparator against a
//! per-channel reference. The bank's corner frequencies are equally spaced on
//! the Mel scale.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::capture::{Edge, EdgeStream, Polarity};
use crate::error::{Error, Result};

/// Mono audio normalized to [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl AudioClip {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Parameter("audio contains non-finite samples".into()));
        }
        Ok(Self { sample_rate, samples })
    }

    /// 16-bit PCM mapped to [-1, 1] by division by 32768.
    pub fn from_i16(sample_rate: u32, pcm: &[i16]) -> Self {
        Self { sample_rate, samples: pcm.iter().map(|&s| s as f64 / 32768.0).collect() }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }
}

/// HTK Mel scale.
pub fn mel_of(hz: f64) -> Result<f64> {
    if !(hz >= 0.0) {
        return Err(Error::Domain(format!("frequency {hz} must be non-negative")));
    }
    Ok(2595.0 * (1.0 + hz / 700.0).log10())
}

pub fn mel_inv(mel: f64) -> Result<f64> {
    if !(mel >= 0.0) {
        return Err(Error::Domain(format!("mel value {mel} must be non-negative")));
    }
    Ok(700.0 * (10f64.powf(mel / 2595.0) - 1.0))
}

/// One band-pass channel. `bandwidth_hz` is the -3 dB width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterSpec {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub gain: f64,
}

impl FilterSpec {
    pub fn lower_edge_hz(&self) -> f64 {
        self.center_hz - self.bandwidth_hz / 2.0
    }

    pub fn upper_edge_hz(&self) -> f64 {
        self.center_hz + self.bandwidth_hz / 2.0
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(self.center_hz > 0.0 && self.bandwidth_hz > 0.0 && self.gain > 0.0) {
            return Err(Error::Parameter(format!("filter needs positive center, bandwidth and gain: {self:?}")));
        }
        if self.lower_edge_hz() <= 0.0 {
            return Err(Error::Parameter(format!(
                "filter at {:.1} Hz: bandwidth {:.1} Hz puts the lower -3 dB edge at or below 0 Hz",
                self.center_hz, self.bandwidth_hz
            )));
        }
        if self.upper_edge_hz() >= sample_rate as f64 / 2.0 {
            return Err(Error::Parameter(format!(
                "filter at {:.1} Hz: upper edge {:.1} Hz not below Nyquist at {sample_rate} Hz",
                self.center_hz,
                self.upper_edge_hz()
            )));
        }
        Ok(())
    }
}

/// Mel-spaced bank. `corners[i]` holds the (lower, upper) corner of channel i.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBankSpec {
    pub f_low_hz: f64,
    pub f_high_hz: f64,
    pub channels: Vec<FilterSpec>,
    pub corners: Vec<(f64, f64)>,
}

impl FilterBankSpec {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        for ch in &mut self.channels {
            ch.gain = gain;
        }
        self
    }

    /// Plain-text table `channel,f_low,center,f_high,gain`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("channel,f_low,center,f_high,gain\n");
        for (i, (ch, (lo, hi))) in self.channels.iter().zip(&self.corners).enumerate() {
            writeln!(out, "{i},{lo},{},{hi},{}", ch.center_hz, ch.gain).unwrap();
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut channels = Vec::new();
        let mut corners = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("channel") {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("bank line {}: {e}", lineno + 1)))?;
            let [idx, lo, center, hi, gain] = vals[..] else {
                return Err(Error::Parse(format!("bank line {}: expected 5 fields", lineno + 1)));
            };
            if idx as usize != channels.len() {
                return Err(Error::Parse(format!("bank line {}: channel index out of order", lineno + 1)));
            }
            channels.push(FilterSpec { center_hz: center, bandwidth_hz: hi - lo, gain });
            corners.push((lo, hi));
        }
        if channels.is_empty() {
            return Err(Error::Parse("bank table has no channels".into()));
        }
        if channels.windows(2).any(|w| w[1].center_hz <= w[0].center_hz) {
            return Err(Error::Parse("bank centers must be strictly increasing".into()));
        }
        Ok(Self {
            f_low_hz: corners[0].0,
            f_high_hz: corners[corners.len() - 1].1,
            channels,
            corners,
        })
    }
}

/// Lays `n + 2` points equally in Mel between `f_low` and `f_high`; channel i
/// spans points i..i+2 and is centered on point i+1.
pub fn design_filter_bank(n: usize, f_low: f64, f_high: f64) -> Result<FilterBankSpec> {
    if n < 1 {
        return Err(Error::Parameter("filter bank needs at least one channel".into()));
    }
    if !(f_low > 0.0 && f_low < f_high && f_high.is_finite()) {
        return Err(Error::Parameter(format!("invalid frequency range {f_low}..{f_high}")));
    }
    let (m_lo, m_hi) = (mel_of(f_low)?, mel_of(f_high)?);
    let step = (m_hi - m_lo) / (n + 1) as f64;
    let mut points = (0..n + 2)
        .map(|i| mel_inv(m_lo + step * i as f64))
        .collect::<Result<Vec<_>>>()?;
    points[0] = f_low;
    points[n + 1] = f_high;

    let channels = (0..n)
        .map(|i| FilterSpec { center_hz: points[i + 1], bandwidth_hz: points[i + 2] - points[i], gain: 1.0 })
        .collect();
    let corners = (0..n).map(|i| (points[i], points[i + 2])).collect();
    Ok(FilterBankSpec { f_low_hz: f_low, f_high_hz: f_high, channels, corners })
}

/// Resistor values for the GIC stage that realize `spec` with capacitor `c_farad`.
/// Returns `(R_A, R_1)` in ohms.
pub fn gic_components(spec: &FilterSpec, c_farad: f64) -> Result<(f64, f64)> {
    if !(c_farad > 0.0) {
        return Err(Error::Parameter("capacitance must be positive".into()));
    }
    let r_a = 1.0 / (2.0 * PI * spec.center_hz * c_farad);
    let r_1 = r_a * spec.center_hz / spec.bandwidth_hz;
    Ok((r_a, r_1))
}

/// Normalized second-order section, `a0 == 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Band-pass whose digital -3 dB points sit exactly at `center ± bandwidth/2`
    /// and whose gain at `center` equals `spec.gain`.
    ///
    /// Both edges are prewarped, the analog prototype `B s / (s² + B s + W0²)`
    /// is built from them and mapped through the bilinear transform.
    pub fn band_pass(spec: &FilterSpec, sample_rate: u32) -> Result<Self> {
        spec.validate(sample_rate)?;
        let fs = sample_rate as f64;
        let w1 = (PI * spec.lower_edge_hz() / fs).tan();
        let w2 = (PI * spec.upper_edge_hz() / fs).tan();
        let bw = w2 - w1;
        let w0sq = w1 * w2;

        let a0 = 1.0 + bw + w0sq;
        let mut filt = Biquad {
            b: [bw / a0, 0.0, -bw / a0],
            a: [(2.0 * w0sq - 2.0) / a0, (1.0 - bw + w0sq) / a0],
        };
        let at_center = filt.magnitude_at(spec.center_hz, sample_rate);
        let scale = spec.gain / at_center;
        for b in &mut filt.b {
            *b *= scale;
        }
        Ok(filt)
    }

    pub fn magnitude_at(&self, hz: f64, sample_rate: u32) -> f64 {
        let w = 2.0 * PI * hz / sample_rate as f64;
        let (c1, s1) = (w.cos(), w.sin());
        let (c2, s2) = ((2.0 * w).cos(), (2.0 * w).sin());
        let num_re = self.b[0] + self.b[1] * c1 + self.b[2] * c2;
        let num_im = -(self.b[1] * s1 + self.b[2] * s2);
        let den_re = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let den_im = -(self.a[0] * s1 + self.a[1] * s2);
        (num_re.hypot(num_im)) / (den_re.hypot(den_im))
    }

    /// Transposed direct form II from a zero state.
    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        let (mut z1, mut z2) = (0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let y = self.b[0] * x + z1;
                z1 = self.b[1] * x - self.a[0] * y + z2;
                z2 = self.b[2] * x - self.a[1] * y;
                y
            })
            .collect()
    }
}

pub fn bandpass(clip: &AudioClip, spec: &FilterSpec) -> Result<AudioClip> {
    let filt = Biquad::band_pass(spec, clip.sample_rate)?;
    Ok(AudioClip { sample_rate: clip.sample_rate, samples: filt.process(&clip.samples) })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeConfig {
    /// Output gain, R5/R4 in the circuit.
    pub gain: f64,
    pub attack_tau_s: f64,
    pub release_tau_s: f64,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self { gain: 1.0, attack_tau_s: 0.5e-3, release_tau_s: 10e-3 }
    }
}

impl EnvelopeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0) {
            return Err(Error::Parameter("envelope gain must be positive".into()));
        }
        if !(self.attack_tau_s > 0.0 && self.attack_tau_s <= self.release_tau_s) {
            return Err(Error::Parameter("need 0 < attack_tau <= release_tau".into()));
        }
        Ok(())
    }
}

/// Half-wave rectifier followed by a one-pole smoother with separate attack
/// and release constants, scaled by the detector gain.
pub fn envelope(clip: &AudioClip, cfg: &EnvelopeConfig) -> AudioClip {
    let fs = clip.sample_rate as f64;
    let attack = 1.0 - (-1.0 / (cfg.attack_tau_s * fs)).exp();
    let release = 1.0 - (-1.0 / (cfg.release_tau_s * fs)).exp();
    let mut state = 0.0f64;
    let samples = clip
        .samples
        .iter()
        .map(|&x| {
            let rect = x.max(0.0);
            let coef = if rect > state { attack } else { release };
            state += coef * (rect - state);
            state * cfg.gain
        })
        .collect();
    AudioClip { sample_rate: clip.sample_rate, samples }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparatorConfig {
    /// One reference level per channel.
    pub thresholds: Vec<f64>,
    /// Falling edge happens below `threshold * (1 - hysteresis_fraction)`.
    pub hysteresis_fraction: f64,
}

impl ComparatorConfig {
    pub fn uniform(n_channels: usize, threshold: f64) -> Self {
        Self { thresholds: vec![threshold; n_channels], hysteresis_fraction: 0.05 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Parameter("comparator thresholds must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.hysteresis_fraction) {
            return Err(Error::Parameter("hysteresis fraction must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Edge timestamps are the sample index divided by the sample rate.
pub fn comparator(env: &AudioClip, threshold: f64, hysteresis_fraction: f64) -> EdgeStream {
    let low_level = threshold * (1.0 - hysteresis_fraction);
    let fs = env.sample_rate as f64;
    let mut high = false;
    let mut edges = Vec::new();
    for (i, &v) in env.samples.iter().enumerate() {
        if !high && v >= threshold {
            high = true;
            edges.push(Edge { time_s: i as f64 / fs, polarity: Polarity::Rising });
        } else if high && v < low_level {
            high = false;
            edges.push(Edge { time_s: i as f64 / fs, polarity: Polarity::Falling });
        }
    }
    EdgeStream { channel: 0, edges }
}

/// Per-channel envelopes (band-pass then envelope detector), before the comparator.
pub fn channel_envelopes(clip: &AudioClip, bank: &FilterBankSpec, env_cfg: &EnvelopeConfig) -> Result<Vec<AudioClip>> {
    env_cfg.validate()?;
    bank.channels
        .par_iter()
        .map(|spec| Ok(envelope(&bandpass(clip, spec)?, env_cfg)))
        .collect()
}

/// Runs every channel of the front-end on `clip`.
pub fn simulate_afe(
    clip: &AudioClip,
    bank: &FilterBankSpec,
    env_cfg: &EnvelopeConfig,
    comp_cfg: &ComparatorConfig,
) -> Result<Vec<EdgeStream>> {
    comp_cfg.validate()?;
    if comp_cfg.thresholds.len() != bank.n_channels() {
        return Err(Error::Shape(format!(
            "{} comparator thresholds for {} channels",
            comp_cfg.thresholds.len(),
            bank.n_channels()
        )));
    }
    let envs = channel_envelopes(clip, bank, env_cfg)?;
    Ok(envs
        .iter()
        .zip(&comp_cfg.thresholds)
        .enumerate()
        .map(|(ch, (env, &thr))| {
            let mut s = comparator(env, thr, comp_cfg.hysteresis_fraction);
            s.channel = ch;
            s
        })
        .collect())
}
