//! `posekit` command-line tool.
//!
//! Every subcommand writes its result to `--out` (or stdout) and exits 0.
//! Failures exit 1 with one JSON object on stderr:
//! `{"error": {"kind": "...", "message": "..."}}`. Usage errors use kind `usage` and exit 2.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use posekit::config::{PipelineConfig, Stages};
use posekit::fusion::{fuse, BranchOutputs, DecodeOptions, FusionStrategy, HeadInterpolation};
use posekit::heatmap::{decode, flip_merge_with_shift, DEFAULT_FLIP_SHIFT};
use posekit::io::{BoxFile, GroundTruthFile, PoseFile, SequenceManifest};
use posekit::metrics::{compute_map, compute_mota, EvalConfig, PredictionFrame};
use posekit::pipeline::{run_pipeline, track_frames};
use posekit::suppression::{oks_nms, OksConstants, DEFAULT_EXTRA_SIGMA};
use posekit::synth::{synth_sequence, SynthConfig};
use posekit::tracker::{Matcher, PropagatorKind};
use posekit::train::{train, ToyBenchmark, TrainSchedule, PRESETS};
use posekit::{builtin_joint_set, DecodedPose, Error, Heatmap, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "posekit", version, about = "Multi-domain pose estimation and tracking toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence: manifest, heatmaps, boxes and ground truth.
    Synth(SynthArgs),
    /// Train the toy multi-domain network on the synthetic benchmark.
    TrainToy(TrainArgs),
    /// Decode one heatmap file into keypoints.
    Decode(DecodeArgs),
    /// Fuse the heatmaps of several branches for one crop.
    Fuse(FuseArgs),
    /// Merge box files of several detectors with IoU-NMS.
    MergeBoxes(MergeBoxesArgs),
    /// Apply OKS-NMS to every frame of a pose file.
    Nms(NmsArgs),
    /// Assign track ids to a pose file.
    Track(TrackArgs),
    /// Per-joint average precision against ground truth.
    EvalMap(EvalArgs),
    /// Per-joint MOTA, MOTP, precision and recall against ground truth.
    EvalMota(EvalArgs),
    /// Full pipeline over a sequence manifest.
    Run(RunArgs),
}

#[derive(Args)]
struct OutArg {
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to create the sequence in.
    #[arg(long)]
    out: PathBuf,
    /// JSON synth config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed [default: 7].
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the frame count [default: 12].
    #[arg(long)]
    frames: Option<usize>,
    /// Overrides the person count [default: 3].
    #[arg(long)]
    persons: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Strategy preset: single, transfer, transfer_mix, mixed, multi_domain or mdpn.
    #[arg(long, default_value = "mdpn")]
    schedule: String,
    /// JSON schedule file; replaces the preset.
    #[arg(long)]
    schedule_file: Option<PathBuf>,
    /// JSON benchmark config (network, domains, preset options); omitted keys take their defaults.
    #[arg(long)]
    benchmark: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Metrics log (JSON lines).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeOpts {
    /// Gaussian filter sigma in cells; 0 disables.
    #[arg(long, default_value_t = 1.0)]
    smooth_sigma: f64,
    #[arg(long)]
    no_quarter_offset: bool,
}

impl DecodeOpts {
    fn options(&self) -> DecodeOptions {
        DecodeOptions {
            smooth_sigma: self.smooth_sigma,
            quarter_offset: !self.no_quarter_offset,
        }
    }
}

#[derive(Args)]
struct DecodeArgs {
    /// Heatmap file (PKHM).
    heatmap: PathBuf,
    /// Output of the horizontally flipped crop, merged before decoding.
    #[arg(long)]
    flipped: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_FLIP_SHIFT)]
    flip_shift: usize,
    #[command(flatten)]
    decode: DecodeOpts,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct FuseArgs {
    /// One heatmap file per branch.
    #[arg(required = true)]
    heatmaps: Vec<PathBuf>,
    /// vote, select:<branch> or head-swap:<body>,<head>.
    #[arg(long, default_value = "vote")]
    strategy: String,
    #[arg(long, default_value = "posetrack")]
    target: String,
    #[command(flatten)]
    decode: DecodeOpts,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct MergeBoxesArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.6)]
    iou_thr: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct NmsArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 0.4)]
    oks_thr: f64,
    /// OKS fall-off constant for joints outside the COCO set.
    #[arg(long, default_value_t = DEFAULT_EXTRA_SIGMA)]
    extra_sigma: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct TrackArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    sim_thr: f64,
    #[arg(long, default_value_t = 8)]
    lookback: u64,
    /// Tracks shorter than this are dropped; 1 disables pruning.
    #[arg(long, default_value_t = 2)]
    min_len: usize,
    /// hungarian or greedy.
    #[arg(long, default_value = "hungarian")]
    matcher: Matcher,
    /// velocity or identity.
    #[arg(long, default_value = "velocity")]
    propagator: PropagatorKind,
    #[arg(long, default_value_t = DEFAULT_EXTRA_SIGMA)]
    extra_sigma: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted pose file.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth file.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pckh_thr: f64,
    /// Emit JSON instead of a text table.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct RunArgs {
    /// Sequence manifest; heatmap paths resolve relative to it.
    manifest: PathBuf,
    /// JSON pipeline config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stages to switch off, comma separated (e.g. `oks_nms,tracklet_pruning`).
    #[arg(long, value_delimiter = ',')]
    disable: Vec<String>,
    /// Stage log (JSON).
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

fn emit(out: &OutArg, text: &str) -> Result<()> {
    match &out.out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::from(e).in_file(path.display().to_string())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path.display().to_string()))
}

#[derive(Serialize)]
struct PoseJson {
    joint_set: String,
    keypoints: Vec<f64>,
    annotated: Vec<bool>,
}

impl From<DecodedPose> for PoseJson {
    fn from(p: DecodedPose) -> Self {
        PoseJson {
            joint_set: p.joint_set,
            keypoints: p.keypoints.iter().flat_map(|k| [k.x, k.y, k.score]).collect(),
            annotated: p.keypoints.iter().map(|k| k.annotated).collect(),
        }
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| Error::from(e).in_file(p.display().to_string()))?,
        None => SynthConfig::default(),
    };
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.frames = a.frames.unwrap_or(cfg.frames);
    cfg.persons = a.persons.unwrap_or(cfg.persons);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::from(e).in_file(a.out.display().to_string()))?;
    synth_sequence(&cfg)?.write(&a.out)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let bench = match &a.benchmark {
        Some(p) => ToyBenchmark::from_json(&read(p)?).map_err(|e| e.in_file(p.display().to_string()))?,
        None => ToyBenchmark::default(),
    };
    let schedule: TrainSchedule = match &a.schedule_file {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| Error::from(e).in_file(p.display().to_string()))?,
        None => TrainSchedule::preset(&a.schedule, &bench.schedule).map_err(|e| match e {
            Error::InvalidValue(m) => Error::InvalidValue(format!("{m}; presets: {}", PRESETS.join(", "))),
            other => other,
        })?,
    };
    let datasets = bench.datasets(a.seed)?;
    let outcome = train(&bench.network, &schedule, &datasets, a.seed)?;
    outcome.network.save_checkpoint(&a.out)?;
    if let Some(log) = &a.log {
        std::fs::write(log, outcome.log_jsonl()).map_err(|e| Error::from(e).in_file(log.display().to_string()))?;
    }
    let last = outcome.log.last().map(|e| e.heldout_error.clone()).unwrap_or_default();
    emit(&OutArg { out: None }, &pretty(&serde_json::json!({ "schedule": schedule.name, "heldout_error": last })))
}

fn cmd_decode(a: DecodeArgs) -> Result<()> {
    let mut h = Heatmap::load(&a.heatmap)?;
    if let Some(f) = &a.flipped {
        let flipped = Heatmap::load(f)?;
        let set = builtin_joint_set(&h.joint_set)?;
        h = flip_merge_with_shift(&h, &flipped, &set.flip_pairs, a.flip_shift)?;
    }
    let opts = a.decode.options();
    let pose = decode(&h, opts.smooth_sigma, opts.quarter_offset)?;
    emit(&a.out, &pretty(&PoseJson::from(pose)))
}

fn cmd_fuse(a: FuseArgs) -> Result<()> {
    let maps = a.heatmaps.iter().map(|p| Heatmap::load(p)).collect::<Result<Vec<_>>>()?;
    let strategy = FusionStrategy::parse(&a.strategy)?;
    let pose = fuse(
        &BranchOutputs::new(maps)?,
        &strategy,
        &a.target,
        &a.decode.options(),
        &HeadInterpolation::default(),
    )?;
    emit(&a.out, &pretty(&PoseJson::from(pose)))
}

fn cmd_merge_boxes(a: MergeBoxesArgs) -> Result<()> {
    let files = a.inputs.iter().map(|p| BoxFile::load(p)).collect::<Result<Vec<_>>>()?;
    emit(&a.out, &BoxFile::merge(&files, a.iou_thr)?.to_json())
}

fn cmd_nms(a: NmsArgs) -> Result<()> {
    let file = PoseFile::load(&a.input)?;
    let consts = OksConstants::with_extra_sigma(&builtin_joint_set(&file.joint_set)?, a.extra_sigma);
    let frames = file
        .to_frames()?
        .into_iter()
        .map(|f| {
            let keep = oks_nms(&f.instances, a.oks_thr, &consts)?;
            Ok(PredictionFrame {
                frame: f.frame,
                instances: keep.into_iter().map(|i| f.instances[i].clone()).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    emit(&a.out, &PoseFile::from_frames(&file.joint_set, &frames).to_json())
}

fn cmd_track(a: TrackArgs) -> Result<()> {
    let file = PoseFile::load(&a.input)?;
    let config = PipelineConfig {
        output_joint_set: file.joint_set.clone(),
        sim_threshold: a.sim_thr,
        lookback: a.lookback,
        min_len: a.min_len,
        matcher: a.matcher,
        extra_sigma: a.extra_sigma,
        stages: Stages {
            flow_track: a.propagator == PropagatorKind::Velocity,
            tracklet_pruning: a.min_len > 1,
            ..Stages::default()
        },
        ..PipelineConfig::default()
    };
    config.validate()?;
    let mut frames = file.to_frames()?;
    track_frames(&config, &mut frames)?;
    emit(&a.out, &PoseFile::from_frames(&file.joint_set, &frames).to_json())
}

fn load_eval(a: &EvalArgs) -> Result<(String, Vec<PredictionFrame>, Vec<posekit::metrics::GroundTruthFrame>)> {
    let pred = PoseFile::load(&a.pred)?;
    let gt = GroundTruthFile::load(&a.gt)?;
    if pred.joint_set != gt.joint_set {
        return Err(Error::JointSetMismatch {
            expected: gt.joint_set,
            found: pred.joint_set,
        });
    }
    Ok((gt.joint_set.clone(), pred.to_frames()?, gt.to_frames()?))
}

fn cmd_eval_map(a: EvalArgs) -> Result<()> {
    let (set, preds, gts) = load_eval(&a)?;
    let report = compute_map(&set, &preds, &gts, &EvalConfig { pckh_threshold: a.pckh_thr })?;
    emit(&a.out, &if a.json { pretty(&report) } else { report.to_table() })
}

fn cmd_eval_mota(a: EvalArgs) -> Result<()> {
    let (set, preds, gts) = load_eval(&a)?;
    let report = compute_mota(&set, &preds, &gts, &EvalConfig { pckh_threshold: a.pckh_thr })?;
    emit(&a.out, &if a.json { pretty(&report) } else { report.to_table() })
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for stage in &a.disable {
        config.stages.disable(stage)?;
    }
    let manifest = SequenceManifest::load(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let output = run_pipeline(&config, &manifest, base)?;
    if let Some(log) = &a.log {
        std::fs::write(log, pretty(&output.log)).map_err(|e| Error::from(e).in_file(log.display().to_string()))?;
    }
    emit(&a.out, &output.poses.to_json())
}

fn report(kind: &str, message: &str) {
    let body = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.to_string().trim_end());
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::TrainToy(a) => cmd_train(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::MergeBoxes(a) => cmd_merge_boxes(a),
        Command::Nms(a) => cmd_nms(a),
        Command::Track(a) => cmd_track(a),
        Command::EvalMap(a) => cmd_eval_map(a),
        Command::EvalMota(a) => cmd_eval_mota(a),
        Command::Run(a) => cmd_run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
