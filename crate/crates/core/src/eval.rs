//! End-to-end evaluation: audio → binary spectrogram → prediction, with a
//! confusion matrix over a labelled clip set.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::afe::{simulate_afe, AudioClip, ComparatorConfig, EnvelopeConfig, FilterBankSpec};
use crate::bnn::predict;
use crate::capture::{capture, rasterize, BinarySpectrogram, CaptureConfig};
use crate::dataset::{DatasetIndex, Split, CLIP_SAMPLES, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::melspec::{afe_features, binarize_with, init_thresholds, log_mel_spectrogram, FloatSpectrogram, SpectrogramConfig, ThresholdVector};
use crate::model::BnnModel;

/// How a clip becomes a binary spectrogram.
#[derive(Clone, Debug, PartialEq)]
pub enum Frontend {
    /// Simulated analog front-end followed by interrupt capture.
    Afe { bank: FilterBankSpec, envelope: EnvelopeConfig, comparator: ComparatorConfig, capture: CaptureConfig },
    /// Log-Mel spectrogram compared against per-channel thresholds.
    MelBin { spectrogram: SpectrogramConfig, thresholds: Vec<f64> },
}

impl Frontend {
    /// (channels, frames) produced for a one-second clip.
    pub fn output_dims(&self) -> Result<(usize, usize)> {
        match self {
            Frontend::Afe { bank, capture, .. } => {
                capture.validate()?;
                Ok((bank.n_channels(), capture.n_windows()))
            }
            Frontend::MelBin { spectrogram, .. } => {
                spectrogram.validate(SAMPLE_RATE)?;
                let win = spectrogram.window_samples(SAMPLE_RATE);
                let hop = spectrogram.hop_samples(SAMPLE_RATE);
                if CLIP_SAMPLES < win {
                    return Err(Error::Parameter("analysis window longer than a clip".into()));
                }
                Ok((spectrogram.n_mels, 1 + (CLIP_SAMPLES - win) / hop))
            }
        }
    }

    pub fn spectrogram(&self, clip: &AudioClip) -> Result<BinarySpectrogram> {
        match self {
            Frontend::Afe { bank, envelope, comparator, capture: cap } => {
                let edges = simulate_afe(clip, bank, envelope, comparator)?;
                rasterize(&capture(&edges, cap)?, cap)
            }
            Frontend::MelBin { spectrogram, thresholds } => binarize_with(&log_mel_spectrogram(clip, spectrogram)?, thresholds),
        }
    }
}

/// Full-precision features used to pick thresholds for each frontend.
pub fn calibration_features(frontend: &Frontend, clip: &AudioClip) -> Result<FloatSpectrogram> {
    match frontend {
        Frontend::Afe { bank, envelope, capture, .. } => afe_features(clip, bank, envelope, capture.window_ms as f64),
        Frontend::MelBin { spectrogram, .. } => log_mel_spectrogram(clip, spectrogram),
    }
}

/// Per-channel mean thresholds over `clips`, installed into the frontend.
pub fn calibrate(frontend: &mut Frontend, clips: &[AudioClip]) -> Result<ThresholdVector> {
    let feats: Vec<FloatSpectrogram> = clips.par_iter().map(|c| calibration_features(frontend, c)).collect::<Result<_>>()?;
    let thr = init_thresholds(&feats)?;
    set_thresholds(frontend, &thr.thresholds)?;
    Ok(thr)
}

pub fn set_thresholds(frontend: &mut Frontend, values: &[f64]) -> Result<()> {
    let (channels, _) = frontend.output_dims()?;
    if values.len() != channels {
        return Err(Error::Shape(format!("{} thresholds for a {channels}-channel frontend", values.len())));
    }
    match frontend {
        Frontend::Afe { comparator, .. } => comparator.thresholds = values.to_vec(),
        Frontend::MelBin { thresholds, .. } => *thresholds = values.to_vec(),
    }
    Ok(())
}

/// `counts[true_class][predicted_class]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self { n_classes, counts: vec![0; n_classes * n_classes] }
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n_classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|k| self.get(k, k)).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.n_classes.max(1)).map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    /// Header row of predicted classes, then one row per true class.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("true\\predicted");
        for name in class_names {
            write!(out, ",{name}").unwrap();
        }
        out.push('\n');
        for (k, name) in class_names.iter().enumerate() {
            out.push_str(name);
            for p in 0..self.n_classes {
                write!(out, ",{}", self.get(k, p)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// Predicted class per clip, in input order.
    pub predictions: Vec<usize>,
}

fn check_model(model: &BnnModel, frontend: &Frontend, n_classes: usize) -> Result<()> {
    let (h, w) = frontend.output_dims()?;
    if (h, w) != (model.input_height, model.input_width) {
        return Err(Error::Shape(format!("frontend produces {h}x{w} but the model expects {}x{}", model.input_height, model.input_width)));
    }
    if model.n_classes() != n_classes {
        return Err(Error::Shape(format!("model has {} classes, dataset has {n_classes}", model.n_classes())));
    }
    Ok(())
}

fn run_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Parameter(format!("worker pool: {e}")))?;
    Ok(pool.install(job))
}

fn tally(labels: impl Iterator<Item = usize>, predictions: Vec<usize>, n_classes: usize) -> EvalResult {
    let mut confusion = ConfusionMatrix::new(n_classes);
    for (truth, &p) in labels.zip(&predictions) {
        confusion.add(truth, p);
    }
    EvalResult { accuracy: confusion.accuracy(), confusion, predictions }
}

/// Evaluates labelled clips on `workers` threads; results are merged in
/// input order so the outcome does not depend on the worker count.
pub fn evaluate_clips(model: &BnnModel, clips: &[(AudioClip, usize)], frontend: &Frontend, n_classes: usize, workers: usize) -> Result<EvalResult> {
    check_model(model, frontend, n_classes)?;
    if let Some((_, bad)) = clips.iter().find(|(_, l)| *l >= n_classes) {
        return Err(Error::Parameter(format!("label {bad} out of range")));
    }
    let predictions = run_pool(workers, || {
        clips.par_iter().map(|(clip, _)| Ok(predict(model, &frontend.spectrogram(clip)?)?.class)).collect::<Result<Vec<_>>>()
    })??;
    Ok(tally(clips.iter().map(|(_, l)| *l), predictions, n_classes))
}

/// Evaluates one split of an indexed corpus.
pub fn evaluate(model: &BnnModel, index: &DatasetIndex, split: Split, frontend: &Frontend, workers: usize) -> Result<EvalResult> {
    check_model(model, frontend, index.classes.len())?;
    let entries = index.split(split);
    let predictions = run_pool(workers, || {
        entries
            .par_iter()
            .map(|e| Ok(predict(model, &frontend.spectrogram(&index.load(e)?)?)?.class))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(tally(entries.iter().map(|e| e.label), predictions, index.classes.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::afe::design_filter_bank;
    use crate::bnn::{BinaryConvLayer, IntegerConvLayer, Padding};

    fn afe_frontend(threshold: f64) -> Frontend {
        let bank = design_filter_bank(8, 50.0, 7500.0).unwrap();
        Frontend::Afe {
            comparator: ComparatorConfig::uniform(bank.n_channels(), threshold),
            bank,
            envelope: EnvelopeConfig::default(),
            capture: CaptureConfig::default(),
        }
    }

    /// Single pointwise layer feeding a head where class 0 always wins.
    fn constant_model(h: usize, w: usize, n_classes: usize) -> BnnModel {
        let layer = BinaryConvLayer::from_bits(1, 32, 1, 1, 1, Padding::None, &vec![1; 32], vec![0; 32], vec![1; 32]).unwrap();
        let mut bias = vec![0; n_classes];
        bias[0] = 10;
        BnnModel { input_height: h, input_width: w, layers: vec![layer], head: IntegerConvLayer { in_channels: 32, out_channels: n_classes, weights: vec![0; 32 * n_classes], bias } }
    }

    fn silence() -> AudioClip {
        AudioClip { sample_rate: SAMPLE_RATE, samples: vec![0.0; CLIP_SAMPLES] }
    }

    #[test]
    fn dims_of_each_frontend() {
        assert_eq!(afe_frontend(0.1).output_dims().unwrap(), (8, 100));
        let mel = Frontend::MelBin { spectrogram: SpectrogramConfig::default(), thresholds: vec![0.0; 64] };
        assert_eq!(mel.output_dims().unwrap(), (64, 98));
        let s = mel.spectrogram(&silence()).unwrap();
        assert_eq!((s.n_channels, s.n_windows), (64, 98));
    }

    #[test]
    fn constant_classifier_scores_class_share() {
        let labels = [0, 1, 2, 0, 1, 0];
        let clips: Vec<(AudioClip, usize)> = labels.iter().map(|&l| (silence(), l)).collect();
        let r = evaluate_clips(&constant_model(8, 100, 3), &clips, &afe_frontend(0.1), 3, 2).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.confusion.row_sums(), vec![3, 2, 1]);
        assert_eq!(r.confusion.trace(), 3);
    }

    #[test]
    fn order_does_not_change_the_matrix() {
        let clips: Vec<(AudioClip, usize)> = [0usize, 1, 1, 2].iter().map(|&l| (silence(), l)).collect();
        let mut rev = clips.clone();
        rev.reverse();
        let m = constant_model(8, 100, 3);
        let a = evaluate_clips(&m, &clips, &afe_frontend(0.1), 3, 1).unwrap();
        let b = evaluate_clips(&m, &rev, &afe_frontend(0.1), 3, 4).unwrap();
        assert_eq!(a.confusion, b.confusion);
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let clips = vec![(silence(), 0)];
        let err = evaluate_clips(&constant_model(64, 100, 3), &clips, &afe_frontend(0.1), 3, 1);
        assert!(matches!(err, Err(Error::Shape(_))));
        let err = evaluate_clips(&constant_model(8, 100, 4), &clips, &afe_frontend(0.1), 3, 1);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn calibration_installs_thresholds() {
        let mut fe = afe_frontend(0.0);
        let tone = AudioClip {
            sample_rate: SAMPLE_RATE,
            samples: (0..CLIP_SAMPLES).map(|i| 0.3 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin()).collect(),
        };
        let thr = calibrate(&mut fe, &[tone, silence()]).unwrap();
        let Frontend::Afe { comparator, .. } = &fe else { unreachable!() };
        assert_eq!(comparator.thresholds, thr.thresholds);
        assert!(thr.thresholds.iter().all(|&t| t >= 0.0));
    }

    #[test]
    fn confusion_csv_layout() {
        let mut m = ConfusionMatrix::new(2);
        m.add(0, 0);
        m.add(1, 0);
        m.add(1, 1);
        let names = vec!["yes".to_string(), "no".to_string()];
        assert_eq!(m.to_csv(&names), "true\\predicted,yes,no\nyes,1,0\nno,1,1\n");
        assert!((m.accuracy() - 2.0 / 3.0).abs() < 1e-15);
    }
}
