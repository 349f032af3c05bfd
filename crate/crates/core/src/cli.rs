//! Command-line front end: `synth`, `train`, `eval`, `report-model`, `bench`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad usage.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::{
    load_annotations, save_annotations, synth_generate, windows_for, Class, LabeledWindow, LabelingConfig, Profile,
    Recording, SynthConfig, WindowingConfig,
};
use crate::error::{Error, Result};
use crate::eval::{alarm_metrics, roc_auc, roc_csv, roc_curve, AlarmConfig, ScoredWindow};
use crate::model::{Backend, ConvMode, InferenceEngine, Model, ModelConfig};
use crate::tensor::{DenseTensor, Shape};
use crate::train::{train_with, TrainConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "bsdcnn", version, about = "Binary 1D CNN for EEG seizure prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic recording and its seizure annotations.
    Synth(SynthArgs),
    /// Train a model on annotated recordings.
    Train(TrainArgs),
    /// Score recordings (or a scores CSV) and write metrics and a ROC curve.
    Eval(EvalArgs),
    /// Per-layer parameter memory and operation counts.
    ReportModel(ReportArgs),
    /// Throughput of packed versus naive inference.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Aes,
    Chbmit,
    Custom,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Aes => Profile::Aes,
            ProfileArg::Chbmit => Profile::Chbmit,
            ProfileArg::Custom => Profile::Custom,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct LabelingArgs {
    /// Dataset preset; sets the preictal length and, for aes/chbmit, checks
    /// electrode count and sample rate.
    #[arg(long, value_enum, default_value = "custom")]
    pub profile: ProfileArg,
    /// Seizure prediction horizon in seconds.
    #[arg(long)]
    pub sph: Option<f64>,
    /// Preictal interval length in seconds.
    #[arg(long)]
    pub pil: Option<f64>,
    /// Postictal exclusion in seconds.
    #[arg(long)]
    pub postictal: Option<f64>,
    #[arg(long, default_value_t = 20.0)]
    pub window_s: f64,
    #[arg(long, default_value_t = 5.0)]
    pub preictal_step_s: f64,
    #[arg(long, default_value_t = 20.0)]
    pub interictal_step_s: f64,
}

impl LabelingArgs {
    fn labeling(&self) -> Result<LabelingConfig> {
        let base = Profile::from(self.profile).labeling();
        LabelingConfig::new(
            self.sph.unwrap_or(base.sph_s),
            self.pil.unwrap_or(base.pil_s),
            self.postictal.unwrap_or(base.postictal_s),
        )
    }

    fn windowing(&self) -> WindowingConfig {
        WindowingConfig {
            window_s: self.window_s,
            preictal_step_s: self.preictal_step_s,
            interictal_step_s: self.interictal_step_s,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub electrodes: usize,
    /// Sample rate in Hz.
    #[arg(long)]
    pub fs: u32,
    #[arg(long)]
    pub hours: f64,
    #[arg(long)]
    pub seizures: usize,
    /// Preictal signature RMS relative to the background.
    #[arg(long, default_value_t = 1.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 60.0)]
    pub ictal_s: f64,
    #[command(flatten)]
    pub labeling: LabelingArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Recording files; each needs an annotation file with the same stem and
    /// the `.ann` extension.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[command(flatten)]
    pub labeling: LabelingArgs,
    #[arg(long, default_value = "1d-1d")]
    pub conv_mode: ConvMode,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.2)]
    pub validation_fraction: f64,
    /// Output model file; the history and manifest are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "scores", conflicts_with = "scores")]
    pub model: Option<PathBuf>,
    #[arg(long, num_args = 1.., required_unless_present = "scores")]
    pub data: Vec<PathBuf>,
    /// Evaluate a CSV of scored windows instead of running a model.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[command(flatten)]
    pub labeling: LabelingArgs,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1800.0)]
    pub refractory_s: f64,
    #[arg(long, default_value = "packed")]
    pub backend: Backend,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct ModelSource {
    /// Saved model; without it a fresh model is built.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Built-model input electrodes (default: AES geometry).
    #[arg(long, requires = "samples")]
    pub electrodes: Option<usize>,
    /// Built-model input samples per window.
    #[arg(long, requires = "electrodes")]
    pub samples: Option<usize>,
    #[arg(long, default_value = "1d-1d")]
    pub conv_mode: ConvMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelSource {
    fn config(&self) -> ModelConfig {
        let cfg = match (self.electrodes, self.samples) {
            (Some(e), Some(t)) => ModelConfig::for_input(e, t),
            _ => ModelConfig::aes(),
        };
        cfg.with_conv_mode(self.conv_mode)
    }

    fn load(&self) -> Result<Model> {
        match &self.model {
            Some(p) => Model::load(p),
            None => Model::build(self.config(), self.seed),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long, value_enum, default_value = "text")]
    pub format: ReportFormat,
    /// Write the report to a file instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: u64,
    /// Random windows used for the identity check and timing.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub windows: u64,
    /// Write the JSON report here as well as to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one command run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, seed: Option<u64>, config: Value) -> Self {
        RunManifest {
            command: command.into(),
            tool_version: VERSION.into(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidValue(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `path` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn annotation_path(recording: &Path) -> PathBuf {
    recording.with_extension("ann")
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable config")
}

/// Loads, labels and windows every recording.
fn load_windows(paths: &[PathBuf], args: &LabelingArgs, manifest: &mut RunManifest) -> Result<Vec<LabeledWindow>> {
    let labeling = args.labeling()?;
    let windowing = args.windowing();
    let geometry = Profile::from(args.profile).window_geometry();
    let mut all = Vec::new();
    let mut format: Option<(usize, u32)> = None;
    for path in paths {
        let recording = Recording::load(path)?;
        let ann_path = annotation_path(path);
        let annotations = load_annotations(&ann_path)?;
        manifest.input(path)?;
        manifest.input(&ann_path)?;
        let this = (recording.meta.electrodes, recording.meta.sample_rate_hz);
        if let Some(g) = geometry.filter(|&g| g != this) {
            return Err(Error::InvalidConfig(format!(
                "{} has {} electrodes at {} Hz, profile {} expects {} at {} Hz",
                path.display(),
                this.0,
                this.1,
                Profile::from(args.profile),
                g.0,
                g.1
            )));
        }
        if format.is_some_and(|f| f != this) {
            return Err(Error::InvalidDataset(format!(
                "{} differs in electrode count or sample rate from earlier recordings",
                path.display()
            )));
        }
        format = Some(this);
        let windows = windows_for(&recording, &annotations, &labeling, &windowing)?;
        log::info!("{}: {} windows", path.display(), windows.len());
        all.extend(windows);
    }
    Ok(all)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let labeling = a.labeling.labeling()?;
    let mut cfg = SynthConfig::new(a.seed, a.electrodes, a.fs, a.hours * 3600.0, a.seizures, labeling);
    cfg.snr = a.snr;
    cfg.ictal_s = a.ictal_s;
    let (recording, annotations) = synth_generate(&cfg)?;
    fs::create_dir_all(&a.out)?;
    let rec_path = a.out.join(format!("{}.rec", recording.meta.id));
    let ann_path = annotation_path(&rec_path);
    recording.save(&rec_path)?;
    save_annotations(&ann_path, &annotations)?;
    let mut m = RunManifest::new("synth", Some(a.seed), to_json(&cfg));
    m.output(&rec_path);
    m.output(&ann_path);
    m.write(&a.out.join(format!("{}.manifest.json", recording.meta.id)))?;
    log::info!("wrote {} and {}", rec_path.display(), ann_path.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: a.seed,
        validation_fraction: a.validation_fraction,
        ..Default::default()
    };
    cfg.validate()?;
    let mut manifest = RunManifest::new("train", Some(a.seed), Value::Null);
    let windows = load_windows(&a.data, &a.labeling, &mut manifest)?;
    let shape = windows
        .first()
        .map(|w| w.data.shape())
        .ok_or_else(|| Error::InvalidDataset("no windows in the training data".into()))?;
    let model_cfg = ModelConfig::for_input(shape.electrodes, shape.time).with_conv_mode(a.conv_mode);
    let mut model = Model::build(model_cfg.clone(), a.seed)?;

    let history_path = sibling(&a.out, ".history.tsv");
    let history = if a.epochs == 0 {
        None
    } else {
        Some(train_with(&mut model, &windows, &cfg, |e| eprintln!("{}", e.log_line()))?)
    };
    model.save(&a.out)?;
    let log = history.as_ref().map_or_else(|| "epoch\tloss\tval_auc\tseconds\n".to_string(), |h| h.log());
    fs::write(&history_path, log)?;

    manifest.config = json!({
        "model": to_json(&model_cfg),
        "training": to_json(&cfg),
        "labeling": to_json(&a.labeling.labeling()?),
        "windowing": to_json(&a.labeling.windowing()),
        "profile": Profile::from(a.labeling.profile).to_string(),
    });
    manifest.output(&a.out);
    manifest.output(&history_path);
    manifest.write(&sibling(&a.out, ".manifest.json"))?;
    log::info!("saved {}", a.out.display());
    Ok(())
}

/// Reads `recording_id,start_s,class,seizure,score` rows.
pub fn parse_scores_csv(text: &str) -> Result<Vec<ScoredWindow>> {
    let bad = |n: usize, what: &str| Error::CorruptInput(format!("scores line {}: {what}", n + 1));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("recording_id")) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(bad(n, "expected 5 fields"));
        }
        let class = match f[2] {
            "preictal" | "1" => Class::Preictal,
            "interictal" | "0" => Class::Interictal,
            _ => return Err(bad(n, "class must be preictal or interictal")),
        };
        let seizure = if f[3].is_empty() {
            None
        } else {
            Some(f[3].parse().map_err(|_| bad(n, "bad seizure index"))?)
        };
        out.push(ScoredWindow {
            recording_id: f[0].to_string(),
            start_s: f[1].parse().map_err(|_| bad(n, "bad start time"))?,
            class,
            seizure,
            score: f[4].parse().map_err(|_| bad(n, "bad score"))?,
        });
    }
    Ok(out)
}

pub fn scores_csv(windows: &[ScoredWindow]) -> String {
    let mut s = String::from("recording_id,start_s,class,seizure,score\n");
    for w in windows {
        let class = match w.class {
            Class::Preictal => "preictal",
            Class::Interictal => "interictal",
        };
        let seizure = w.seizure.map(|x| x.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{class},{seizure},{}\n", w.recording_id, w.start_s, w.score));
    }
    s
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut manifest = RunManifest::new("eval", None, Value::Null);
    let scored = if let Some(path) = &a.scores {
        let text = fs::read_to_string(path)?;
        manifest.input(path)?;
        parse_scores_csv(&text)?
    } else {
        let model_path = a.model.as_ref().expect("clap requires --model without --scores");
        let model = Model::load(model_path)?;
        manifest.input(model_path)?;
        let windows = load_windows(&a.data, &a.labeling, &mut manifest)?;
        let engine = InferenceEngine::new(model);
        windows
            .iter()
            .map(|w| Ok(ScoredWindow::new(w, engine.forward(&w.data, a.backend)?[1] as f64)))
            .collect::<Result<Vec<_>>>()?
    };
    let scores: Vec<f64> = scored.iter().map(|w| w.score).collect();
    let labels: Vec<bool> = scored.iter().map(|w| w.class == Class::Preictal).collect();
    roc_auc(&scores, &labels)?;
    let alarm = AlarmConfig {
        threshold: a.threshold,
        refractory_s: a.refractory_s,
        window_s: a.labeling.window_s,
    };
    let report = alarm_metrics(&scored, &alarm)?;
    let curve = roc_curve(&scores, &labels)?;

    fs::create_dir_all(&a.out)?;
    let metrics_path = a.out.join("metrics.json");
    let roc_path = a.out.join("roc.csv");
    fs::write(&metrics_path, report.to_json() + "\n")?;
    fs::write(&roc_path, roc_csv(&curve))?;
    let mut outputs = vec![metrics_path, roc_path];
    if a.scores.is_none() {
        let scores_path = a.out.join("scores.csv");
        fs::write(&scores_path, scores_csv(&scored))?;
        outputs.push(scores_path);
    }
    manifest.config = json!({
        "alarm": to_json(&alarm),
        "backend": a.backend.to_string(),
        "labeling": to_json(&a.labeling.labeling()?),
        "windowing": to_json(&a.labeling.windowing()),
    });
    for p in &outputs {
        manifest.output(p);
    }
    manifest.write(&a.out.join("eval.manifest.json"))?;
    log::info!("{}", report.to_json());
    Ok(())
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_report_model(a: &ReportArgs) -> Result<()> {
    let model_cfg = match &a.source.model {
        Some(p) => Model::load(p)?.config().clone(),
        None => a.source.config(),
    };
    let report = crate::model::ResourceReport::for_config(&model_cfg)?;
    let text = match a.format {
        ReportFormat::Text => report.to_text(),
        ReportFormat::Csv => report.to_csv(),
    };
    emit(&text, a.out.as_deref())
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub windows: u64,
    pub iters: u64,
    pub input_shape: Shape,
    pub binary_ops_per_window: u64,
    pub identical: bool,
    pub packed_windows_per_s: f64,
    pub naive_windows_per_s: f64,
    pub packed_ns_per_binary_op: f64,
    pub naive_ns_per_binary_op: f64,
    pub speedup: f64,
}

fn random_windows(shape: Shape, n: u64, seed: u64) -> Vec<DenseTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| DenseTensor::from_raw(shape, (0..shape.len()).map(|_| rng.random_range(-2.0f32..2.0)).collect()))
        .collect()
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let model = a.source.load()?;
    let ops = model.resource_report().totals.binary_op_count;
    let shape = model.input_shape();
    let engine = InferenceEngine::new(model);
    let windows = random_windows(shape, a.windows, a.source.seed ^ 0x5eed);

    let packed = engine.predict_scores(&windows, Backend::Packed)?;
    let naive = engine.predict_scores(&windows, Backend::Naive)?;
    let identical = packed.iter().zip(&naive).all(|(p, q)| p.to_bits() == q.to_bits());
    if !identical {
        return Err(Error::InvalidValue("packed and naive inference disagree".into()));
    }
    let time = |backend: Backend| -> Result<f64> {
        let start = Instant::now();
        for _ in 0..a.iters {
            engine.predict_scores(&windows, backend)?;
        }
        Ok(start.elapsed().as_secs_f64())
    };
    let (tp, tn) = (time(Backend::Packed)?, time(Backend::Naive)?);
    let total = (a.iters * a.windows) as f64;
    let per_op = |secs: f64| if ops == 0 { f64::NAN } else { secs * 1e9 / (total * ops as f64) };
    let report = BenchReport {
        windows: a.windows,
        iters: a.iters,
        input_shape: shape,
        binary_ops_per_window: ops,
        identical,
        packed_windows_per_s: total / tp,
        naive_windows_per_s: total / tn,
        packed_ns_per_binary_op: per_op(tp),
        naive_ns_per_binary_op: per_op(tn),
        speedup: tn / tp,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidValue(e.to_string()))? + "\n";
    if let Some(p) = &a.out {
        fs::write(p, &text)?;
        let mut m = RunManifest::new("bench", Some(a.source.seed), to_json(&json!({ "iters": a.iters, "windows": a.windows })));
        if let Some(model) = &a.source.model {
            m.input(model)?;
        }
        m.output(p);
        m.write(&sibling(p, ".manifest.json"))?;
    }
    print!("{text}");
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ReportModel(a) => cmd_report_model(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
