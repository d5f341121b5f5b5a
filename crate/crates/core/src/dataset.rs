//! Speech-commands style corpus indexing: one folder per word, split list
//! files, and a background-noise folder used for the silence class.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::afe::AudioClip;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const CLIP_SAMPLES: usize = 16_000;
pub const KEYWORDS: [&str; 10] = ["yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go"];
pub const SILENCE: &str = "silence";
pub const UNKNOWN: &str = "unknown";
pub const BACKGROUND_DIR: &str = "_background_noise_";
pub const VALIDATION_LIST: &str = "validation_list.txt";
pub const TESTING_LIST: &str = "testing_list.txt";
pub const ROOT_ENV: &str = "KWS_DATASET_ROOT";

/// Reads a 16-bit mono 16 kHz WAV file.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path)?;
    check_format(path, reader.spec())?;
    let pcm: Vec<i16> = reader.samples::<i16>().collect::<std::result::Result<_, _>>()?;
    Ok(AudioClip::from_i16(SAMPLE_RATE, &pcm))
}

fn check_format(path: &Path, spec: hound::WavSpec) -> Result<()> {
    if spec.sample_rate != SAMPLE_RATE || spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Dataset(format!(
            "{}: expected 16-bit mono {SAMPLE_RATE} Hz PCM, got {} ch, {} bit, {} Hz",
            path.display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_rate
        )));
    }
    Ok(())
}

/// Writes a clip as 16-bit mono PCM, clipping to the representable range.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec { channels: 1, sample_rate: clip.sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &clip.samples {
        w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Zero-pads or truncates to exactly `n` samples.
pub fn fit_length(mut clip: AudioClip, n: usize) -> AudioClip {
    clip.samples.resize(n, 0.0);
    clip
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Parse(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ClipSource {
    File(PathBuf),
    /// One-second excerpt of a longer recording starting at `offset` samples.
    Crop { path: PathBuf, offset: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClipEntry {
    pub source: ClipSource,
    pub label: usize,
    pub word: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexOptions {
    pub keywords: Vec<String>,
    /// Words folded into the unknown class; `None` means every non-keyword.
    pub unknown_words: Option<Vec<String>>,
    pub include_unknown: bool,
    pub include_silence: bool,
    pub seed: u64,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self {
            keywords: KEYWORDS.iter().map(|s| s.to_string()).collect(),
            unknown_words: None,
            include_unknown: true,
            include_silence: true,
            seed: 0,
        }
    }
}

impl IndexOptions {
    /// Keywords, then silence, then unknown.
    pub fn class_names(&self) -> Vec<String> {
        let mut c = self.keywords.clone();
        if self.include_silence {
            c.push(SILENCE.into());
        }
        if self.include_unknown {
            c.push(UNKNOWN.into());
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub entries: Vec<ClipEntry>,
}

impl DatasetIndex {
    pub fn split(&self, split: Split) -> Vec<&ClipEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for e in self.entries.iter().filter(|e| e.split == split) {
            counts[e.label] += 1;
        }
        counts
    }

    /// Audio of one entry, exactly one second long.
    pub fn load(&self, entry: &ClipEntry) -> Result<AudioClip> {
        match &entry.source {
            ClipSource::File(p) => Ok(fit_length(read_wav(p)?, CLIP_SAMPLES)),
            ClipSource::Crop { path, offset } => {
                let clip = read_wav(path)?;
                if offset + CLIP_SAMPLES > clip.samples.len() {
                    return Err(Error::Dataset(format!("crop at {offset} runs past the end of {}", path.display())));
                }
                Ok(AudioClip { sample_rate: clip.sample_rate, samples: clip.samples[*offset..offset + CLIP_SAMPLES].to_vec() })
            }
        }
    }
}

/// Dataset root from an explicit path, else from `KWS_DATASET_ROOT`.
pub fn resolve_root(explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    std::env::var_os(ROOT_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Dataset(format!("no dataset root given and {ROOT_ENV} is unset")))
}

fn read_list(root: &Path, name: &str) -> Result<HashSet<String>> {
    let path = root.join(name);
    let text = fs::read_to_string(&path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(|l| l.trim().replace('\\', "/")).filter(|l| !l.is_empty()).collect())
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    v.sort();
    Ok(v)
}

fn is_wav(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn wav_len(path: &Path) -> Result<usize> {
    let reader = hound::WavReader::open(path)?;
    check_format(path, reader.spec())?;
    Ok(reader.duration() as usize)
}

/// Builds the labelled, split index. Split membership comes from the two
/// list files; anything not listed is training data. Silence clips are
/// seeded one-second crops of the background recordings, as many per split as
/// the mean keyword-class size of that split.
pub fn index_dataset(root: &Path, opts: &IndexOptions) -> Result<DatasetIndex> {
    if opts.keywords.is_empty() {
        return Err(Error::Dataset("no keywords given".into()));
    }
    let val = read_list(root, VALIDATION_LIST)?;
    let test = read_list(root, TESTING_LIST)?;
    let classes = opts.class_names();
    let keyword_label: BTreeMap<&str, usize> = opts.keywords.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let unknown_label = opts.include_unknown.then(|| classes.len() - 1);
    let unknown_set: Option<HashSet<&str>> = opts.unknown_words.as_ref().map(|w| w.iter().map(String::as_str).collect());

    let mut entries = Vec::new();
    for dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let word = dir.file_name().unwrap().to_string_lossy().into_owned();
        if word.starts_with('_') {
            continue;
        }
        let label = match keyword_label.get(word.as_str()) {
            Some(&l) => l,
            None => match (unknown_label, &unknown_set) {
                (Some(l), None) => l,
                (Some(l), Some(set)) if set.contains(word.as_str()) => l,
                _ => continue,
            },
        };
        for file in sorted_dir(&dir)?.into_iter().filter(|p| is_wav(p)) {
            let rel = format!("{word}/{}", file.file_name().unwrap().to_string_lossy());
            let split = if test.contains(&rel) {
                Split::Test
            } else if val.contains(&rel) {
                Split::Val
            } else {
                Split::Train
            };
            wav_len(&file)?;
            entries.push(ClipEntry { source: ClipSource::File(file), label, word: word.clone(), split });
        }
    }

    if opts.include_silence {
        let bg = root.join(BACKGROUND_DIR);
        if !bg.is_dir() {
            return Err(Error::Dataset(format!("{} is missing", bg.display())));
        }
        let mut noise = Vec::new();
        for p in sorted_dir(&bg)?.into_iter().filter(|p| is_wav(p)) {
            let len = wav_len(&p)?;
            if len >= CLIP_SAMPLES {
                noise.push((p, len));
            }
        }
        if noise.is_empty() {
            return Err(Error::Dataset(format!("no background recording of at least 1 s in {}", bg.display())));
        }
        let silence_label = opts.keywords.len();
        for (split_id, split) in Split::ALL.into_iter().enumerate() {
            let kw_total = entries.iter().filter(|e| e.split == split && e.label < opts.keywords.len()).count();
            let count = (kw_total as f64 / opts.keywords.len() as f64).round() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(split_id as u64));
            for _ in 0..count {
                let (path, len) = &noise[rng.gen_range(0..noise.len())];
                let offset = rng.gen_range(0..=len - CLIP_SAMPLES);
                entries.push(ClipEntry {
                    source: ClipSource::Crop { path: path.clone(), offset },
                    label: silence_label,
                    word: SILENCE.into(),
                    split,
                });
            }
        }
    }

    Ok(DatasetIndex { root: root.to_path_buf(), classes, entries })
}
