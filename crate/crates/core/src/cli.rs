//! The `lehgr` command line.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 on data
//! and schema errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{AugmentationConfig, SequenceDataset};
use crate::error::{Error, Result};
use crate::features::FeatureMode;
use crate::metrics::metrics;
use crate::model::FrameObservation;
use crate::net::{predict_labels, train_with, GestureRecognizer, ModelMeta, NetConfig, NetMode, TraceSeqModel};
use crate::pipeline::{build_recording, featurize_csv, split_datasets, track, PipelineConfig};
use crate::stream::{self, Annotations};
use crate::synth::{corpus_noise, corpus_scripts, synth_scene, CorpusConfig, GestureScript, NoiseConfig};
use crate::tracking::TraceStore;

#[derive(Debug, Parser)]
#[command(name = "lehgr", version, about = "Hand gesture recognition from hand detection streams")]
struct Cli {
    /// JSON file overriding pipeline defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice the subcommand makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic detection streams and annotations.
    Simulate(SimulateArgs),
    /// Link detections into traces.
    Track(TrackArgs),
    /// Write per-frame motion features of a trace stream as CSV.
    Featurize(FeaturizeArgs),
    /// Build or inspect sequence datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a classifier on a dataset file.
    Train(TrainArgs),
    /// Score a model on a dataset.
    Eval(EvalArgs),
    /// Run online recognition over a detection stream.
    Infer(InferArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scene config JSON.
    #[arg(long)]
    scene: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrackArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "motion")]
    mode: FeatureMode,
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Cut labeled clips from the recordings in a directory.
    Build(BuildArgs),
    /// Print per-class clip counts.
    Inspect {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// Directory of `<id>.annotations.json` files, each next to either
    /// `<id>.traces.jsonl` or `<id>.jsonl` (tracked on the fly).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also split by recording and write the held-out part here.
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long, default_value = "motion")]
    mode: FeatureMode,
    /// Harvest only windows of the objective length.
    #[arg(long)]
    single_length: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    TwoBranch,
    SingleBranch,
    Box,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_enum, default_value = "two-branch")]
    mode: ModelKind,
    /// Per-epoch statistics as JSON Lines.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Confusion matrix CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Contents of a `simulate --scene` file: either explicit scripts or a
/// generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default = "default_recording")]
    pub recording: String,
    #[serde(default)]
    pub n_frames: u64,
    #[serde(default = "default_image")]
    pub image: [u32; 2],
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub scripts: Vec<GestureScript>,
    #[serde(default)]
    pub corpus: Option<CorpusConfig>,
}

fn default_recording() -> String {
    "scene".into()
}

fn default_image() -> [u32; 2] {
    [640, 480]
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_threads();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                2
            } else {
                1
            }
        }
    }
}

fn init_threads() {
    if let Some(n) = std::env::var("LEHGR_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // A second call in the same process (tests) leaves the first pool in place.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let cfg = match path {
        Some(p) => stream::read_json::<PipelineConfig>(p).map_err(|e| Error::Config(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    cfg.validate()
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.split.seed = seed;
        cfg.train.seed = seed;
    }
    match cli.command {
        Command::Simulate(a) => simulate(&a, &cfg, cli.seed),
        Command::Track(a) => {
            let frames = read_detections(&a.input, &cfg)?;
            let out = track(&frames, cfg.tracker)?;
            let mut w = stream::create(&a.out)?;
            stream::write_trace_stream(&mut w, &out.frames)?;
            w.flush().map_err(|e| Error::io(&a.out, e))
        }
        Command::Featurize(a) => {
            let frames = stream::read_trace_stream(stream::open(&a.input)?)?;
            let csv = featurize_csv(&frames, &cfg.skeleton, a.mode)?;
            std::fs::write(&a.out, csv).map_err(|e| Error::io(&a.out, e))
        }
        Command::Dataset(DatasetCommand::Build(a)) => build_dataset(&a, &cfg),
        Command::Dataset(DatasetCommand::Inspect { input }) => {
            print!("{}", SequenceDataset::load(&input)?.summary());
            Ok(())
        }
        Command::Train(a) => train_model(&a, &cfg),
        Command::Eval(a) => eval(&a),
        Command::Infer(a) => infer(&a, &cfg),
    }
}

fn read_detections(path: &Path, cfg: &PipelineConfig) -> Result<Vec<FrameObservation>> {
    stream::read_detection_stream(stream::open(path)?, &cfg.skeleton)
}

fn write_recording(dir: &Path, id: &str, frames: &[FrameObservation], ann: &Annotations) -> Result<()> {
    let path = dir.join(format!("{id}.jsonl"));
    let mut w = stream::create(&path)?;
    stream::write_detection_stream(&mut w, frames)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    stream::write_json(&dir.join(format!("{id}.annotations.json")), ann)
}

fn simulate(a: &SimulateArgs, cfg: &PipelineConfig, seed: Option<u64>) -> Result<()> {
    let scene: SceneFile = stream::read_json(&a.scene)?;
    let image = (scene.image[0], scene.image[1]);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    if let Some(mut corpus) = scene.corpus {
        if let Some(s) = seed {
            corpus.seed = s;
        }
        for i in 0..corpus.recordings {
            let noise = corpus_noise(&corpus, i);
            let id = format!("rec{i:04}");
            let out = synth_scene(&corpus_scripts(&corpus, i), &noise, corpus.n_frames, &cfg.skeleton, image)?;
            write_recording(&a.out, &id, &out.frames, &Annotations { recording: id.clone(), segments: out.segments })?;
        }
        return Ok(());
    }
    let noise = NoiseConfig {
        seed: seed.unwrap_or(scene.noise.seed),
        ..scene.noise
    };
    let out = synth_scene(&scene.scripts, &noise, scene.n_frames, &cfg.skeleton, image)?;
    write_recording(
        &a.out,
        &scene.recording,
        &out.frames,
        &Annotations {
            recording: scene.recording.clone(),
            segments: out.segments,
        },
    )
}

fn build_dataset(a: &BuildArgs, cfg: &PipelineConfig) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&a.input)
        .map_err(|e| Error::io(&a.input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".annotations.json"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::InvalidInput(format!("no annotation files in {}", a.input.display())));
    }
    let mut recordings = Vec::with_capacity(entries.len());
    for ann_path in entries {
        let ann: Annotations = stream::read_json::<Annotations>(&ann_path)?.validate(cfg.labels.len())?;
        let name = ann_path.file_name().unwrap_or_default().to_string_lossy();
        let stem = name.trim_end_matches(".annotations.json");
        let traces_path = a.input.join(format!("{stem}.traces.jsonl"));
        let frames = if traces_path.exists() {
            stream::read_trace_stream(stream::open(&traces_path)?)?
        } else {
            let dets = read_detections(&a.input.join(format!("{stem}.jsonl")), cfg)?;
            track(&dets, cfg.tracker)?.frames
        };
        recordings.push(build_recording(&ann.recording, &frames, &ann.segments, &cfg.skeleton, a.mode)?);
    }
    let aug = if a.single_length {
        AugmentationConfig::single_length(cfg.augmentation.t_obj, cfg.augmentation.stride)
    } else {
        cfg.augmentation
    };
    match &a.test_out {
        Some(test_path) => {
            let (train, test) = split_datasets(&recordings, cfg, &aug)?;
            train.save(&a.out)?;
            test.save(test_path)
        }
        None => crate::pipeline::dataset(&recordings, cfg, &aug)?.save(&a.out),
    }
}

fn train_model(a: &TrainArgs, cfg: &PipelineConfig) -> Result<()> {
    let data = SequenceDataset::load(&a.data)?;
    let val = a.val.as_deref().map(SequenceDataset::load).transpose()?;
    let (vw, sw) = data.widths();
    let classes = data.labels.len();
    let mut net = match a.mode {
        ModelKind::TwoBranch => NetConfig::two_branch(vw, sw, classes),
        ModelKind::SingleBranch => NetConfig::single_branch(vw + sw, classes),
        ModelKind::Box => {
            if data.mode != FeatureMode::Box {
                return Err(Error::Config("--mode box needs a dataset built with --mode box".into()));
            }
            NetConfig::two_branch(vw, sw, classes)
        }
    };
    if a.mode != ModelKind::Box && data.mode == FeatureMode::Box {
        net.mode = NetMode::SingleBranch;
    }
    net.hidden = a.hidden.unwrap_or(cfg.net.hidden);
    net.dropout = a.dropout.unwrap_or(cfg.net.dropout);
    net.layers = cfg.net.layers;
    net.fc_hidden = cfg.net.fc_hidden;
    let mut tc = cfg.train;
    tc.lr = a.lr.unwrap_or(tc.lr);
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    tc.batch_size = a.batch.unwrap_or(tc.batch_size);

    let mut model = TraceSeqModel::init(net, tc.seed)?;
    model.set_meta(ModelMeta {
        skeleton: data.skeleton.clone(),
        feature_mode: data.mode,
        t_obj: data.t_obj,
        labels: data.labels.clone(),
    });
    let mut log = a.log.as_deref().map(stream::create).transpose()?;
    let mut log_err = None;
    train_with(&mut model, &data.clips, val.as_ref().map(|v| &v.clips[..]), &tc, |s| {
        eprintln!(
            "epoch {:>3}  loss {:.5}  train {:.4}{}",
            s.epoch,
            s.loss,
            s.train_accuracy,
            s.val_accuracy.map(|v| format!("  val {v:.4}")).unwrap_or_default()
        );
        if let Some(w) = log.as_mut() {
            let line = serde_json::to_string(s).unwrap_or_default();
            if let Err(e) = writeln!(w, "{line}") {
                log_err.get_or_insert(e);
            }
        }
    })?;
    if let (Some(e), Some(p)) = (log_err, a.log.as_ref()) {
        return Err(Error::io(p, e));
    }
    if let (Some(mut w), Some(p)) = (log, a.log.as_ref()) {
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    model.save(&a.out)
}

fn check_compatible(model: &TraceSeqModel, data: &SequenceDataset) -> Result<()> {
    if let Some(meta) = model.meta() {
        if meta.feature_mode != data.mode || meta.t_obj != data.t_obj || meta.skeleton != data.skeleton {
            return Err(Error::schema("model", "model was trained on a different feature layout"));
        }
    }
    let (vw, sw) = data.widths();
    let c = model.config();
    if c.velocity_width + c.shape_width != vw + sw || c.classes != data.labels.len() {
        return Err(Error::schema("model", "model input or class count does not match the dataset"));
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let model = TraceSeqModel::load(&a.model)?;
    let data = SequenceDataset::load(&a.data)?;
    check_compatible(&model, &data)?;
    let preds = predict_labels(&model, &data.clips)?;
    let truths: Vec<usize> = data.clips.iter().map(|c| c.label).collect();
    let report = metrics(&preds, &truths, data.labels.len())?;
    print!("{}", report.to_text(data.labels.names()));
    if let Some(p) = &a.csv {
        std::fs::write(p, report.confusion_csv(data.labels.names())).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn infer(a: &InferArgs, cfg: &PipelineConfig) -> Result<()> {
    let model = TraceSeqModel::load(&a.model)?;
    let mut recognizer = GestureRecognizer::from_model(&model, cfg.trigger)?;
    let frames = stream::read_detection_stream(
        stream::open(&a.input)?,
        &model.meta().map(|m| m.skeleton.clone()).unwrap_or_else(|| cfg.skeleton.clone()),
    )?;
    let mut store = TraceStore::new(cfg.tracker)?;
    let mut w = stream::create(&a.out)?;
    for f in &frames {
        store.step(f)?;
        for ev in recognizer.observe(&store, f.frame_index)? {
            let line = serde_json::to_string(&ev).map_err(|e| Error::json("event", e))?;
            writeln!(w, "{line}").map_err(|e| Error::io(&a.out, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&a.out, e))
}
