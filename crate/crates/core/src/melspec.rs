//! Full-precision feature path: log-Mel spectrograms, window-max envelope
//! features, threshold initialization and binarization.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::afe::{channel_envelopes, mel_of, AudioClip, EnvelopeConfig, FilterBankSpec};
use crate::capture::BinarySpectrogram;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrogramConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub f_low_hz: f64,
    pub f_high_hz: f64,
    pub log_epsilon: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self { window_ms: 25.0, hop_ms: 10.0, n_mels: 64, f_low_hz: 50.0, f_high_hz: 7500.0, log_epsilon: 1e-6 }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(self.hop_ms > 0.0 && self.window_ms >= self.hop_ms) {
            return Err(Error::Parameter("need window_ms >= hop_ms > 0".into()));
        }
        if self.n_mels == 0 {
            return Err(Error::Parameter("n_mels must be at least 1".into()));
        }
        if !(self.f_low_hz >= 0.0 && self.f_low_hz < self.f_high_hz && self.f_high_hz <= sample_rate as f64 / 2.0) {
            return Err(Error::Parameter(format!("mel range {}..{} Hz invalid at {sample_rate} Hz", self.f_low_hz, self.f_high_hz)));
        }
        if !(self.log_epsilon > 0.0) {
            return Err(Error::Parameter("log_epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn fft_len(&self, sample_rate: u32) -> usize {
        self.window_samples(sample_rate).next_power_of_two()
    }
}

/// Channels × frames real matrix, row-major by channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatSpectrogram {
    pub n_channels: usize,
    pub n_frames: usize,
    pub hop_s: f64,
    pub window_s: f64,
    pub data: Vec<f64>,
}

impl FloatSpectrogram {
    pub fn zeros(n_channels: usize, n_frames: usize, hop_s: f64, window_s: f64) -> Self {
        Self { n_channels, n_frames, hop_s, window_s, data: vec![0.0; n_channels * n_frames] }
    }

    pub fn get(&self, c: usize, t: usize) -> f64 {
        self.data[c * self.n_frames + t]
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.n_frames..(c + 1) * self.n_frames]
    }

    /// CSV, one row per channel.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for c in 0..self.n_channels {
            let row: Vec<String> = self.row(c).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(",")).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str, hop_s: f64, window_s: f64) -> Result<Self> {
        let mut data = Vec::new();
        let mut n_frames = None;
        let mut n_channels = 0;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("spectrogram row {}: {e}", i + 1)))?;
            if *n_frames.get_or_insert(row.len()) != row.len() {
                return Err(Error::Parse(format!("spectrogram row {} has {} values", i + 1, row.len())));
            }
            data.extend(row);
            n_channels += 1;
        }
        Ok(Self { n_channels, n_frames: n_frames.unwrap_or(0), hop_s, window_s, data })
    }
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Magnitude STFT; rows are FFT bins `0..=n_fft/2`.
pub fn stft_magnitude(clip: &AudioClip, cfg: &SpectrogramConfig) -> Result<FloatSpectrogram> {
    cfg.validate(clip.sample_rate)?;
    let win = cfg.window_samples(clip.sample_rate);
    let hop = cfg.hop_samples(clip.sample_rate);
    if clip.samples.len() < win {
        return Err(Error::Parameter(format!("clip of {} samples is shorter than one {win}-sample window", clip.samples.len())));
    }
    let n_fft = cfg.fft_len(clip.sample_rate);
    let n_bins = n_fft / 2 + 1;
    let n_frames = 1 + (clip.samples.len() - win) / hop;
    let window = hann(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);

    let mut out = FloatSpectrogram::zeros(n_bins, n_frames, hop as f64 / clip.sample_rate as f64, win as f64 / clip.sample_rate as f64);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for t in 0..n_frames {
        let frame = &clip.samples[t * hop..t * hop + win];
        for (b, (&s, &w)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *b = Complex::new(s * w, 0.0);
        }
        for b in buf[win..].iter_mut() {
            *b = Complex::new(0.0, 0.0);
        }
        fft.process(&mut buf);
        for (k, v) in buf[..n_bins].iter().enumerate() {
            out.data[k * n_frames + t] = v.norm();
        }
    }
    Ok(out)
}

/// Triangular filters with corners equally spaced in Mel, weights linear in Mel.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    /// `[mel][bin]`
    pub weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, f_low: f64, f_high: f64) -> Result<Self> {
        let n_bins = n_fft / 2 + 1;
        let (m_lo, m_hi) = (mel_of(f_low)?, mel_of(f_high)?);
        let step = (m_hi - m_lo) / (n_mels + 1) as f64;
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let bin_mel: Vec<f64> = (0..n_bins).map(|k| mel_of(k as f64 * bin_hz)).collect::<Result<_>>()?;

        let mut weights = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, center, hi) = (m_lo + step * m as f64, m_lo + step * (m + 1) as f64, m_lo + step * (m + 2) as f64);
            let row = &mut weights[m * n_bins..(m + 1) * n_bins];
            for (k, &bm) in bin_mel.iter().enumerate() {
                let w = if bm > lo && bm <= center {
                    (bm - lo) / (center - lo)
                } else if bm > center && bm < hi {
                    (hi - bm) / (hi - center)
                } else {
                    0.0
                };
                row[k] = w;
            }
            // a triangle narrower than the bin spacing catches no bin
            if row.iter().all(|&w| w == 0.0) {
                let nearest = (0..n_bins)
                    .min_by(|&a, &b| (bin_mel[a] - center).abs().total_cmp(&(bin_mel[b] - center).abs()))
                    .unwrap();
                row[nearest] = 1.0;
            }
        }
        Ok(Self { n_mels, n_bins, weights })
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }
}

/// Mel projection of a magnitude spectrogram followed by `ln(x + log_epsilon)`.
pub fn log_mel(spec: &FloatSpectrogram, cfg: &SpectrogramConfig, sample_rate: u32) -> Result<FloatSpectrogram> {
    cfg.validate(sample_rate)?;
    let n_fft = (spec.n_channels - 1) * 2;
    let bank = MelFilterbank::new(cfg.n_mels, n_fft, sample_rate, cfg.f_low_hz, cfg.f_high_hz)?;
    let mut out = FloatSpectrogram::zeros(cfg.n_mels, spec.n_frames, spec.hop_s, spec.window_s);
    for m in 0..cfg.n_mels {
        let w = bank.row(m);
        for t in 0..spec.n_frames {
            let e: f64 = w.iter().enumerate().filter(|(_, &wk)| wk != 0.0).map(|(k, &wk)| wk * spec.get(k, t)).sum();
            out.data[m * spec.n_frames + t] = (e + cfg.log_epsilon).ln();
        }
    }
    Ok(out)
}

pub fn log_mel_spectrogram(clip: &AudioClip, cfg: &SpectrogramConfig) -> Result<FloatSpectrogram> {
    log_mel(&stft_magnitude(clip, cfg)?, cfg, clip.sample_rate)
}

/// Per-channel maximum over non-overlapping windows starting at t = 0; a
/// trailing partial window is dropped.
pub fn window_max(envelopes: &[AudioClip], window_ms: f64) -> Result<FloatSpectrogram> {
    let Some(first) = envelopes.first() else {
        return Err(Error::Parameter("no envelopes given".into()));
    };
    let sr = first.sample_rate;
    let len = first.samples.len();
    if envelopes.iter().any(|e| e.sample_rate != sr || e.samples.len() != len) {
        return Err(Error::Shape("envelopes differ in rate or length".into()));
    }
    let win = (window_ms * sr as f64 / 1000.0).round() as usize;
    if win == 0 {
        return Err(Error::Parameter("window shorter than one sample".into()));
    }
    let n_frames = len / win;
    let secs = win as f64 / sr as f64;
    let mut out = FloatSpectrogram::zeros(envelopes.len(), n_frames, secs, secs);
    for (c, env) in envelopes.iter().enumerate() {
        for (t, chunk) in env.samples.chunks_exact(win).enumerate() {
            out.data[c * n_frames + t] = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    Ok(out)
}

/// Window-max of the simulated AFE envelopes, one row per filter.
pub fn afe_features(clip: &AudioClip, bank: &FilterBankSpec, env: &EnvelopeConfig, window_ms: f64) -> Result<FloatSpectrogram> {
    window_max(&channel_envelopes(clip, bank, env)?, window_ms)
}

/// Per-channel thresholds together with the corpus min-max transform.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdVector {
    pub thresholds: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

impl ThresholdVector {
    fn scale(&self) -> f64 {
        let range = self.max - self.min;
        if range > 0.0 {
            range
        } else {
            1.0
        }
    }

    pub fn normalize_value(&self, v: f64) -> f64 {
        (v - self.min) / self.scale()
    }

    pub fn normalized_thresholds(&self) -> Vec<f64> {
        self.thresholds.iter().map(|&t| self.normalize_value(t)).collect()
    }

    pub fn normalize(&self, spec: &FloatSpectrogram) -> FloatSpectrogram {
        FloatSpectrogram { data: spec.data.iter().map(|&v| self.normalize_value(v)).collect(), ..spec.clone() }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# min={},max={}\nchannel,threshold\n", self.min, self.max);
        for (c, t) in self.thresholds.iter().enumerate() {
            writeln!(out, "{c},{t}").unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut min = None;
        let mut max = None;
        let mut thresholds = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split(',') {
                    match kv.trim().split_once('=') {
                        Some(("min", v)) => min = v.parse().ok(),
                        Some(("max", v)) => max = v.parse().ok(),
                        _ => {}
                    }
                }
                continue;
            }
            if line.starts_with("channel") {
                continue;
            }
            let (c, t) = line.split_once(',').ok_or_else(|| Error::Parse(format!("threshold line {line:?}")))?;
            let c: usize = c.trim().parse().map_err(|_| Error::Parse(format!("threshold line {line:?}")))?;
            if c != thresholds.len() {
                return Err(Error::Parse("threshold channels out of order".into()));
            }
            thresholds.push(t.trim().parse::<f64>().map_err(|_| Error::Parse(format!("threshold line {line:?}")))?);
        }
        if thresholds.is_empty() {
            return Err(Error::Parse("threshold file is empty".into()));
        }
        let lo = thresholds.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = thresholds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { min: min.unwrap_or(lo), max: max.unwrap_or(hi), thresholds })
    }
}

/// Threshold of channel c = mean of channel c over every frame of the corpus.
pub fn init_thresholds(corpus: &[FloatSpectrogram]) -> Result<ThresholdVector> {
    let Some(first) = corpus.first() else {
        return Err(Error::Parameter("empty corpus".into()));
    };
    let n = first.n_channels;
    if corpus.iter().any(|s| s.n_channels != n) {
        return Err(Error::Shape("corpus spectrograms differ in channel count".into()));
    }
    let mut sums = vec![0.0; n];
    let mut count = 0usize;
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in corpus {
        for (c, sum) in sums.iter_mut().enumerate() {
            for &v in s.row(c) {
                *sum += v;
                min = min.min(v);
                max = max.max(v);
            }
        }
        count += s.n_frames;
    }
    if count == 0 {
        return Err(Error::Parameter("corpus has no frames".into()));
    }
    Ok(ThresholdVector { thresholds: sums.iter().map(|s| s / count as f64).collect(), min, max })
}

/// Bit is 1 iff the value is strictly above its channel threshold.
pub fn binarize_with(spec: &FloatSpectrogram, thresholds: &[f64]) -> Result<BinarySpectrogram> {
    if thresholds.len() != spec.n_channels {
        return Err(Error::Shape(format!("{} thresholds for {} channels", thresholds.len(), spec.n_channels)));
    }
    let window_ms = (spec.hop_s * 1000.0).round() as u32;
    let mut out = BinarySpectrogram::zeros(spec.n_channels, spec.n_frames, window_ms);
    for (c, &thr) in thresholds.iter().enumerate() {
        for (t, &v) in spec.row(c).iter().enumerate() {
            out.bits[c * spec.n_frames + t] = (v > thr) as u8;
        }
    }
    Ok(out)
}

pub fn binarize(spec: &FloatSpectrogram, thr: &ThresholdVector) -> Result<BinarySpectrogram> {
    binarize_with(spec, &thr.thresholds)
}
