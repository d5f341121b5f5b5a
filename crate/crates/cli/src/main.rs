use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kws_core::afe::{design_filter_bank, simulate_afe, ComparatorConfig, EnvelopeConfig, FilterBankSpec};
use kws_core::bnn::{mac_count, predict};
use kws_core::capture::{capture, interrupt_count, rasterize, read_events, write_events, BinarySpectrogram, CaptureConfig};
use kws_core::dataset::{index_dataset, read_wav, resolve_root, IndexOptions, Split};
use kws_core::energy::{comparison_report, pareto_front, vlsi_power, SystemConfig, COMPARISON_TABLE};
use kws_core::eval::{calibrate, evaluate, set_thresholds, Frontend};
use kws_core::melspec::{afe_features, log_mel_spectrogram, SpectrogramConfig, ThresholdVector};
use kws_core::model::{build_architecture, BnnModel};

mod svg;

#[derive(Parser)]
#[command(name = "kws", version, about = "Binary keyword spotting behind a simulated analog front-end")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design a mel-spaced band-pass bank and print it as a table
    DesignBank {
        #[arg(long, default_value_t = 8)]
        filters: usize,
        #[arg(long, default_value_t = 50.0)]
        flow: f64,
        #[arg(long, default_value_t = 8000.0)]
        fhigh: f64,
        #[arg(long, default_value_t = 1.0)]
        gain: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a WAV file through the front-end and capture its comparator events
    Simulate {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        /// Event file to write (stdout when omitted)
        #[arg(long)]
        events: Option<PathBuf>,
        /// Same comparator threshold on every channel
        #[arg(long, conflicts_with = "thresholds")]
        threshold: Option<f64>,
        /// Per-channel threshold file (as written by `calibrate`)
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        hysteresis: f64,
        #[arg(long, default_value_t = 32768)]
        tick_rate: u32,
    },
    /// Turn an event file into a binary spectrogram
    Rasterize {
        #[arg(long)]
        events: PathBuf,
        #[arg(long, default_value_t = 10)]
        window_ms: u32,
        /// Channel count; defaults to the highest channel in the file + 1
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        /// Spectrogram file to write; prints a 0/1 grid when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full-precision features of a WAV file as CSV (one row per channel)
    Features {
        #[arg(long)]
        wav: PathBuf,
        #[arg(long, conflicts_with = "afe", required_unless_present = "afe")]
        mel: bool,
        #[arg(long)]
        afe: bool,
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        filters: usize,
        #[arg(long, default_value_t = 10.0)]
        window_ms: f64,
        #[arg(long, default_value_t = 64)]
        n_mels: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify one binary spectrogram file
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Accuracy and confusion matrix on a dataset split
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        frontend: FrontendArgs,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Write the confusion matrix here instead of stdout
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Per-channel thresholds from the training split
    Calibrate {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        frontend: FrontendArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Energy report for a configuration
    Energy {
        #[arg(long)]
        filters: usize,
        /// Model file; otherwise the standard architecture at --width
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 12)]
        classes: usize,
        /// Input dims as CHANNELSxFRAMES; defaults to <filters>x100
        #[arg(long)]
        input: Option<String>,
        #[arg(long)]
        vlsi: bool,
        /// Classification rate for the VLSI projection, Hz
        #[arg(long, default_value_t = 2.0)]
        rate: f64,
        /// Optional per-interrupt energy correction, joules
        #[arg(long)]
        j_per_interrupt: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        interrupts_per_s: f64,
        #[arg(long)]
        csv: bool,
    },
    /// Pareto front of (energy, accuracy) runs
    Pareto {
        /// CSV with header `name,energy_mj,accuracy`
        #[arg(long, required_unless_present = "table")]
        runs: Option<PathBuf>,
        /// Use the built-in comparison table instead of --runs
        #[arg(long)]
        table: bool,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a randomly initialized model of the standard architecture
    RandomModel {
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 12)]
        classes: usize,
        #[arg(long, default_value = "8x100")]
        input: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the layer table of a model file
    ModelInfo {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset root (falls back to KWS_DATASET_ROOT)
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Comma-separated keyword list
    #[arg(long, value_delimiter = ',')]
    keywords: Option<Vec<String>>,
    /// Restrict the unknown class to these words
    #[arg(long, value_delimiter = ',')]
    unknown_words: Option<Vec<String>>,
    #[arg(long)]
    no_unknown: bool,
    #[arg(long)]
    no_silence: bool,
    /// Seed for the silence crops
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl DatasetArgs {
    fn options(&self) -> IndexOptions {
        let mut o = IndexOptions { include_unknown: !self.no_unknown, include_silence: !self.no_silence, seed: self.seed, ..Default::default() };
        if let Some(k) = &self.keywords {
            o.keywords = k.clone();
        }
        o.unknown_words = self.unknown_words.clone();
        o
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FrontendKind {
    Afe,
    Melbin,
}

#[derive(Args)]
struct FrontendArgs {
    #[arg(long, value_enum, default_value = "afe")]
    frontend: FrontendKind,
    /// Bank file for the AFE frontend; otherwise designed from --filters
    #[arg(long)]
    bank: Option<PathBuf>,
    /// AFE bands or mel channels
    #[arg(long, default_value_t = 8)]
    filters: usize,
    #[arg(long, default_value_t = 10)]
    window_ms: u32,
    #[arg(long, default_value_t = 0.05)]
    hysteresis: f64,
    /// Threshold file; otherwise calibrated on the training split
    #[arg(long)]
    thresholds: Option<PathBuf>,
    /// Training clips used for calibration
    #[arg(long, default_value_t = 200)]
    calib_clips: usize,
}

impl FrontendArgs {
    fn build(&self) -> Result<Frontend> {
        Ok(match self.frontend {
            FrontendKind::Afe => {
                let bank = load_or_design_bank(self.bank.as_deref(), self.filters)?;
                Frontend::Afe {
                    comparator: ComparatorConfig { thresholds: vec![0.0; bank.n_channels()], hysteresis_fraction: self.hysteresis },
                    bank,
                    envelope: EnvelopeConfig::default(),
                    capture: CaptureConfig { window_ms: self.window_ms, ..Default::default() },
                }
            }
            FrontendKind::Melbin => Frontend::MelBin {
                spectrogram: SpectrogramConfig { n_mels: self.filters, hop_ms: self.window_ms as f64, ..Default::default() },
                thresholds: vec![0.0; self.filters],
            },
        })
    }
}

fn load_or_design_bank(path: Option<&Path>, filters: usize) -> Result<FilterBankSpec> {
    match path {
        Some(p) => Ok(FilterBankSpec::from_table(&read_text(p)?)?),
        None => Ok(design_filter_bank(filters, 50.0, 8000.0)?),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn parse_dims(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s.split_once(['x', 'X']).with_context(|| format!("expected CHANNELSxFRAMES, got {s:?}"))?;
    Ok((h.trim().parse()?, w.trim().parse()?))
}

fn load_model(path: &Path) -> Result<BnnModel> {
    let model = BnnModel::load(path).with_context(|| format!("loading model {}", path.display()))?;
    model.validate()?;
    Ok(model)
}

/// Installs thresholds from a file, or calibrates them on the first
/// `calib_clips` training clips.
fn prepare_frontend(args: &FrontendArgs, data: &DatasetArgs) -> Result<(Frontend, ThresholdVector)> {
    let mut frontend = args.build()?;
    if let Some(p) = &args.thresholds {
        let thr = ThresholdVector::from_csv(&read_text(p)?)?;
        set_thresholds(&mut frontend, &thr.thresholds)?;
        return Ok((frontend, thr));
    }
    let root = resolve_root(data.dataset.as_deref())?;
    let index = index_dataset(&root, &data.options())?;
    let clips = index
        .split(Split::Train)
        .into_iter()
        .take(args.calib_clips)
        .map(|e| index.load(e))
        .collect::<kws_core::Result<Vec<_>>>()?;
    if clips.is_empty() {
        bail!("training split is empty; pass --thresholds");
    }
    let thr = calibrate(&mut frontend, &clips)?;
    Ok((frontend, thr))
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::DesignBank { filters, flow, fhigh, gain, out } => {
            let bank = design_filter_bank(filters, flow, fhigh)?.with_gain(gain);
            emit(out.as_deref(), &bank.to_table())
        }
        Command::Simulate { bank, wav, events, threshold, thresholds, hysteresis, tick_rate } => {
            let bank = FilterBankSpec::from_table(&read_text(&bank)?)?;
            let clip = read_wav(&wav)?;
            let thr = match (threshold, thresholds) {
                (_, Some(p)) => ThresholdVector::from_csv(&read_text(&p)?)?.thresholds,
                (Some(t), None) => vec![t; bank.n_channels()],
                (None, None) => bail!("give --threshold or --thresholds"),
            };
            let comp = ComparatorConfig { thresholds: thr, hysteresis_fraction: hysteresis };
            let edges = simulate_afe(&clip, &bank, &EnvelopeConfig::default(), &comp)?;
            let cfg = CaptureConfig { tick_rate, duration_s: clip.duration_s(), ..Default::default() };
            let streams = capture(&edges, &cfg)?;
            let irq: usize = interrupt_count(&streams).iter().sum();
            eprintln!("{irq} interrupts over {} channels", streams.len());
            match events {
                Some(p) => write_events(BufWriter::new(File::create(&p)?), &streams, tick_rate)?,
                None => write_events(io::stdout().lock(), &streams, tick_rate)?,
            }
            Ok(())
        }
        Command::Rasterize { events, window_ms, channels, duration, out } => {
            let reader = BufReader::new(File::open(&events).with_context(|| format!("opening {}", events.display()))?);
            let (tick_rate, streams) = read_events(reader, channels)?;
            let cfg = CaptureConfig { tick_rate, duration_s: duration, window_ms };
            let spec = rasterize(&streams, &cfg)?;
            match out {
                Some(p) => spec.write_to(BufWriter::new(File::create(&p)?))?,
                None => emit(None, &grid(&spec))?,
            }
            Ok(())
        }
        Command::Features { wav, mel, afe: _, bank, filters, window_ms, n_mels, out } => {
            let clip = read_wav(&wav)?;
            let feats = if mel {
                log_mel_spectrogram(&clip, &SpectrogramConfig { n_mels, ..Default::default() })?
            } else {
                let bank = load_or_design_bank(bank.as_deref(), filters)?;
                afe_features(&clip, &bank, &EnvelopeConfig::default(), window_ms)?
            };
            emit(out.as_deref(), &feats.to_csv())
        }
        Command::Infer { model, input } => {
            let model = load_model(&model)?;
            let spec = BinarySpectrogram::read_from(BufReader::new(File::open(&input).with_context(|| format!("opening {}", input.display()))?))?;
            let p = predict(&model, &spec)?;
            let logits: Vec<String> = p.logits.0.iter().map(|v| v.to_string()).collect();
            emit(None, &format!("class {}\nlogits {}\n", p.class, logits.join(" ")))
        }
        Command::Eval { model, data, frontend, split, workers, confusion } => {
            let model = load_model(&model)?;
            let (fe, _) = prepare_frontend(&frontend, &data)?;
            let root = resolve_root(data.dataset.as_deref())?;
            let index = index_dataset(&root, &data.options())?;
            let result = evaluate(&model, &index, Split::parse(&split)?, &fe, workers)?;
            let csv = result.confusion.to_csv(&index.classes);
            println!("accuracy {:.4} ({}/{})", result.accuracy, result.confusion.trace(), result.confusion.total());
            match confusion {
                Some(p) => fs::write(&p, csv).with_context(|| format!("writing {}", p.display())),
                None => emit(None, &csv),
            }
        }
        Command::Calibrate { data, frontend, out } => {
            let (_, thr) = prepare_frontend(&frontend, &data)?;
            emit(out.as_deref(), &thr.to_csv())
        }
        Command::Energy { filters, model, width, classes, input, vlsi, rate, j_per_interrupt, interrupts_per_s, csv } => {
            let (macs, dims, what) = match &model {
                Some(p) => {
                    let m = load_model(p)?;
                    (mac_count(&m)?, (m.input_height, m.input_width), format!("model {}", p.display()))
                }
                None => {
                    let dims = match &input {
                        Some(s) => parse_dims(s)?,
                        None => (filters, 100),
                    };
                    let desc = build_architecture(width, classes, dims)?;
                    (desc.mac_count(), dims, format!("width-{width} architecture, {classes} classes"))
                }
            };
            let mut cfg = SystemConfig::new(filters, macs);
            cfg.joules_per_interrupt = j_per_interrupt;
            cfg.interrupts_per_second = interrupts_per_s;
            let report = comparison_report(&cfg)?;
            let mut text = if csv { report.to_csv() } else { report.to_text() };
            if !csv {
                text.push_str(&format!("Input assumption: {}x{} (channels x frames), -1 same padding; {what}\n", dims.0, dims.1));
                if vlsi {
                    text.push_str(&format!("VLSI projection at {rate} Hz: {:.4} uW\n", vlsi_power(filters, macs as f64, rate)));
                }
            }
            emit(None, &text)
        }
        Command::Pareto { runs, table, svg: svg_out, out } => {
            let points: Vec<(String, f64, f64)> = if table {
                COMPARISON_TABLE.iter().map(|r| (r.method.to_string(), r.total_mj, r.accuracy().unwrap_or(0.0))).collect()
            } else {
                parse_runs(&read_text(runs.as_deref().unwrap())?)?
            };
            let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.1, p.2)).collect();
            let front = pareto_front(&xy);
            let text = pareto_csv(&points, &front)?;
            if let Some(p) = svg_out {
                fs::write(&p, svg::scatter(&points, &front)).with_context(|| format!("writing {}", p.display()))?;
            }
            emit(out.as_deref(), &text)
        }
        Command::RandomModel { width, classes, input, seed, out } => {
            let desc = build_architecture(width, classes, parse_dims(&input)?)?;
            let model = BnnModel::random(&desc, &mut ChaCha8Rng::seed_from_u64(seed));
            model.save(&out).with_context(|| format!("writing {}", out.display()))?;
            emit(None, &desc.describe())
        }
        Command::ModelInfo { model } => {
            let m = load_model(&model)?;
            let text = match m.descriptor() {
                Ok(d) => d.describe(),
                Err(_) => format!("{} binary layers, {} classes, total MACs {}\n", m.layers.len(), m.n_classes(), mac_count(&m)?),
            };
            emit(None, &text)
        }
    }
}

fn grid(spec: &BinarySpectrogram) -> String {
    let mut s = String::with_capacity(spec.n_channels * (spec.n_windows + 1));
    for c in 0..spec.n_channels {
        for w in 0..spec.n_windows {
            s.push(if spec.get(c, w) == 1 { '1' } else { '0' });
        }
        s.push('\n');
    }
    s
}

fn parse_runs(text: &str) -> Result<Vec<(String, f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let cols: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |names: &[&str]| cols.iter().position(|c| names.contains(&c.as_str()));
    let (Some(ni), Some(ei), Some(ai)) = (find(&["name", "method"]), find(&["energy_mj", "energy"]), find(&["accuracy", "acc"])) else {
        bail!("runs header must name columns name, energy_mj, accuracy");
    };
    let mut runs = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("runs line {}", i + 2))?;
        let e: f64 = rec[ei].parse().with_context(|| format!("runs line {}: energy", i + 2))?;
        let a: f64 = rec[ai].parse().with_context(|| format!("runs line {}: accuracy", i + 2))?;
        if !e.is_finite() || !a.is_finite() {
            bail!("runs line {}: non-finite value", i + 2);
        }
        runs.push((rec[ni].to_string(), e, a));
    }
    Ok(runs)
}

fn pareto_csv(points: &[(String, f64, f64)], front: &[usize]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "energy_mj", "accuracy", "on_front"])?;
    for (i, (name, e, a)) in points.iter().enumerate() {
        w.write_record([name.clone(), e.to_string(), a.to_string(), front.contains(&i).to_string()])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
