//! The `medseg` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use medseg_core::io::{
    generate_synthetic, load_dataset, read_results, write_results, Pnm, PipelineKind, SynthKind, SyntheticSpec,
};
use medseg_core::metrics::{boundary_f, dsc, jaccard, nsd, semantic_f1, MetricConfig};
use medseg_core::pipelines::{evaluate, report, EvalConfig, PromptKind};
use medseg_core::segmenter::SegmenterSpec;
use medseg_toy::checkpoint;
use medseg_toy::gradcheck::{fixture, gradient_check, GradCheckConfig};
use medseg_toy::serve::serve;
use medseg_toy::{Component, LossConfig, ToyConfig, ToyFactory, ToyModel, ToyOptions, TrainConfig};

/// Exit status of a successful command.
pub const EXIT_OK: i32 = 0;
/// Exit status after a runtime failure.
pub const EXIT_FAILURE: i32 = 1;
/// Exit status for malformed command lines.
pub const EXIT_USAGE: i32 = 2;

/// Threshold the `gradcheck` command enforces.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

type BoxError = Box<dyn std::error::Error>;

#[derive(Parser, Debug)]
#[command(name = "medseg", version, about = "Promptable segmentation evaluation harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Score one predicted mask against a ground-truth mask (PGM files).
    Metrics(MetricsArgs),
    /// Single-image pipeline.
    #[command(name = "eval-2d")]
    Eval2d(EvalArgs),
    /// Volume pipeline: prompt the anchor slice, propagate both ways.
    #[command(name = "eval-3d")]
    Eval3d(EvalArgs),
    /// Video pipeline: prompt the first frames, propagate forward.
    #[command(name = "eval-video")]
    EvalVideo(EvalArgs),
    /// Summarize a results file as mean±std per pipeline, segmenter and metric.
    Report(ReportArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Fine-tune the toy model on a video or volume dataset.
    #[command(name = "toy-train")]
    ToyTrain(TrainArgs),
    /// Serve the toy model over the segmenter protocol on stdin/stdout.
    #[command(name = "toy-serve")]
    ToyServe(ServeArgs),
    /// Compare toy-model gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum MetricName {
    Dsc,
    Nsd,
    Jaccard,
    Bf,
    F1,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum)]
    pub metric: MetricName,
    /// NSD tolerance in pixels.
    #[arg(long, default_value_t = 2.0)]
    pub tau: f64,
    /// Boundary-F radius in pixels; defaults to 0.008 of the diagonal, at least 1.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Label scored by `f1`; the files are then read as label maps.
    #[arg(long, default_value_t = 1)]
    pub class: u32,
}

fn parse_option(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected KEY=VALUE, got {s:?}")),
    }
}

fn parse_segmenter(s: &str) -> Result<SegmenterSpec, String> {
    SegmenterSpec::parse(s).map_err(|e| e.to_string())
}

fn parse_prompt(s: &str) -> Result<PromptKind, String> {
    s.parse().map_err(|e: medseg_core::Error| e.to_string())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// `builtin:NAME` (oracle, constant, regiongrow, toy) or `exec:COMMAND`.
    #[arg(long, value_parser = parse_segmenter)]
    pub segmenter: SegmenterSpec,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub clicks: u64,
    /// Interacted frames at the start of each video.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub frames: u64,
    /// point, box or gtmask; defaults to box for volumes and point otherwise.
    #[arg(long, value_parser = parse_prompt)]
    pub prompt: Option<PromptKind>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Results file (JSON Lines); the summary table goes to stdout either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
    /// Also score the interacted video frames.
    #[arg(long)]
    pub include_interacted: bool,
    /// Keep propagation memory between the two passes through a volume.
    #[arg(long)]
    pub no_reset_between_directions: bool,
    /// Add pixelwise F1 to 2D rows.
    #[arg(long)]
    pub semantic_f1: bool,
    /// NSD tolerance in pixels.
    #[arg(long, default_value_t = 2.0)]
    pub tau: f64,
    /// Segmenter option, e.g. `ckpt=model.ckpt` or `timeout=30`; repeatable.
    #[arg(long = "opt", value_name = "KEY=VALUE", value_parser = parse_option)]
    pub options: Vec<(String, String)>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Print the summary as JSON.
    #[arg(long)]
    pub json: bool,
}

fn parse_kind(s: &str) -> Result<SynthKind, String> {
    s.parse().map_err(|e: medseg_core::Error| e.to_string())
}

/// Frame size with an optional leading frame or slice count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub depth: Option<usize>,
    pub height: usize,
    pub width: usize,
}

/// `HxW` or `DxHxW`.
fn parse_dims(s: &str) -> Result<Dims, String> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|p| p.parse().map_err(|_| format!("bad dimension {p:?} in {s:?}")))
        .collect::<Result<_, _>>()?;
    match dims[..] {
        [height, width] => Ok(Dims { depth: None, height, width }),
        [d, height, width] => Ok(Dims { depth: Some(d), height, width }),
        _ => Err(format!("expected HxW or DxHxW, got {s:?}")),
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// moving-square, ellipse-organ-stack or two-cell.
    #[arg(long, value_parser = parse_kind)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    /// `HxW`, or `DxHxW` with D frames or slices (default 10 frames, 9 slices).
    #[arg(long, value_parser = parse_dims, default_value = "64x64")]
    pub dims: Dims,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Standard deviation of the frame noise.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Moving squares jump once mid-video.
    #[arg(long)]
    pub abrupt_motion: bool,
    /// Moving squares get an unlabelled look-alike.
    #[arg(long)]
    pub distractor: bool,
}

fn parse_component(s: &str) -> Result<Component, String> {
    s.parse()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelSize {
    Default,
    Tiny,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Dice weight.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// BCE weight.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.9)]
    pub layer_decay: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    /// Comma-separated components to freeze; `--freeze ''` trains everything.
    #[arg(long, value_delimiter = ',', default_value = "prompt_encoder", value_parser = parse_component_or_none)]
    pub freeze: Vec<Option<Component>>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub clicks: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ModelSize::Default)]
    pub model: ModelSize,
    /// Start from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Where to write the trained checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
}

fn parse_component_or_none(s: &str) -> Result<Option<Component>, String> {
    if s.is_empty() { Ok(None) } else { parse_component(s).map(Some) }
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Checkpoint to serve; without it a fresh model is initialized from `--seed`.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Propagate without the memory bank.
    #[arg(long)]
    pub no_memory: bool,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampled parameter coordinates.
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..))]
    pub coords: u64,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn execute(command: Command) -> Result<i32, BoxError> {
    match command {
        Command::Metrics(a) => metrics(a),
        Command::Eval2d(a) => eval(PipelineKind::Image2d, a),
        Command::Eval3d(a) => eval(PipelineKind::Volume3d, a),
        Command::EvalVideo(a) => eval(PipelineKind::Video, a),
        Command::Report(a) => report_cmd(a),
        Command::Synth(a) => synth(a),
        Command::ToyTrain(a) => toy_train(a),
        Command::ToyServe(a) => toy_serve(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

/// Writes `text` and a newline to stdout; a closed pipe is not an error.
fn emit(text: impl std::fmt::Display) -> Result<(), BoxError> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn metrics(a: MetricsArgs) -> Result<i32, BoxError> {
    let (pred_pnm, gt_pnm) = (Pnm::read(&a.pred)?, Pnm::read(&a.gt)?);
    let value = if a.metric == MetricName::F1 {
        let pred = pred_pnm.to_label_map(&a.pred, 255)?;
        let gt = gt_pnm.to_label_map(&a.gt, 255)?;
        semantic_f1(&pred, &gt, a.class)?
    } else {
        let pred = pred_pnm.to_mask(&a.pred)?;
        let gt = gt_pnm.to_mask(&a.gt)?;
        match a.metric {
            MetricName::Dsc => dsc(&pred, &gt)?,
            MetricName::Jaccard => jaccard(&pred, &gt)?,
            MetricName::Nsd => nsd(&pred, &gt, a.tau)?,
            MetricName::Bf => {
                let radius = a.radius.unwrap_or_else(|| MetricConfig::default().boundary_radius(gt.height(), gt.width()));
                boundary_f(&pred, &gt, radius)?
            }
            MetricName::F1 => unreachable!("handled above"),
        }
    };
    emit(format!("{value:.4}"))?;
    Ok(EXIT_OK)
}

fn eval(pipeline: PipelineKind, a: EvalArgs) -> Result<i32, BoxError> {
    let dataset = load_dataset(&a.dataset)?;
    let mut spec = a.segmenter;
    spec.options.extend(a.options);
    let cfg = EvalConfig {
        clicks: a.clicks as usize,
        frames: a.frames as usize,
        prompt: a.prompt,
        metrics: MetricConfig { nsd_tolerance: a.tau, ..MetricConfig::default() },
        seed: a.seed,
        jobs: a.jobs.map(|j| j as usize),
        include_interacted: a.include_interacted,
        reset_between_directions: !a.no_reset_between_directions,
        semantic_f1: a.semantic_f1,
    };
    let rows = evaluate(pipeline, &dataset.cases, &spec, &cfg, &ToyFactory::new())?;
    if let Some(out) = &a.out {
        write_results(&rows, out)?;
    }
    for r in rows.iter().filter(|r| r.reason.is_some()) {
        log::warn!("{} class {}: {:?} ({})", r.case_id, r.class_id, r.status, r.reason.as_deref().unwrap_or(""));
    }
    match report(&rows) {
        Ok(rep) => emit(rep)?,
        Err(_) => emit("no rows")?,
    }
    Ok(EXIT_OK)
}

fn report_cmd(a: ReportArgs) -> Result<i32, BoxError> {
    let rows = read_results(&a.input)?;
    let rep = report(&rows)?;
    if a.json {
        emit(serde_json::to_string_pretty(&rep)?)?;
    } else {
        emit(rep)?;
    }
    Ok(EXIT_OK)
}

fn synth(a: SynthArgs) -> Result<i32, BoxError> {
    let default_depth = if a.kind == SynthKind::EllipseOrganStack { 9 } else { 10 };
    let depth = a.dims.depth.unwrap_or(default_depth);
    let mut spec = SyntheticSpec::new(a.kind, a.count, depth, a.dims.height, a.dims.width, a.seed);
    spec.noise = a.noise;
    spec.abrupt_motion = a.abrupt_motion;
    spec.distractor = a.distractor;
    generate_synthetic(&spec, &a.out)?;
    emit(format_args!("wrote {} {} case(s) to {}", a.count, a.kind.name(), a.out.display()))?;
    Ok(EXIT_OK)
}

fn toy_train(a: TrainArgs) -> Result<i32, BoxError> {
    let dataset = load_dataset(&a.dataset)?;
    let (mut model, seed) = match &a.init {
        Some(path) => {
            let (m, header) = checkpoint::load(path)?;
            (m, header.seed)
        }
        None => {
            let config = match a.model {
                ModelSize::Default => ToyConfig::default(),
                ModelSize::Tiny => ToyConfig::tiny(),
            };
            (ToyModel::new(config, a.seed)?, a.seed)
        }
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        layer_decay: a.layer_decay,
        weight_decay: a.weight_decay,
        freeze: a.freeze.into_iter().flatten().collect(),
        seed: a.seed,
        clicks: a.clicks as usize,
        loss: LossConfig { alpha: a.alpha, beta: a.beta, ..LossConfig::default() },
        ..TrainConfig::default()
    };
    let rep = medseg_toy::train(&mut model, &dataset.cases, &cfg)?;
    checkpoint::save(&model, seed, &a.ckpt)?;
    emit(format_args!(
        "trained {} step(s); final loss {:.6}; checkpoint {}",
        rep.steps,
        rep.epoch_losses.last().copied().unwrap_or(f64::NAN),
        a.ckpt.display()
    ))?;
    Ok(EXIT_OK)
}

fn toy_serve(a: ServeArgs) -> Result<i32, BoxError> {
    let model = match &a.ckpt {
        Some(path) => checkpoint::load(path)?.0,
        None => ToyModel::new(ToyConfig::default(), a.seed)?,
    };
    let stdin = std::io::stdin().lock();
    let stdout = std::io::stdout().lock();
    serve(Arc::new(model), ToyOptions { memory: !a.no_memory }, stdin, stdout)?;
    Ok(EXIT_OK)
}

fn gradcheck(a: GradcheckArgs) -> Result<i32, BoxError> {
    let (model, cases) = fixture(a.seed)?;
    let cfg = GradCheckConfig { coords: a.coords as usize, seed: a.seed, ..GradCheckConfig::default() };
    let rep = gradient_check(&model, &cases, &cfg)?;
    emit(format_args!("checked {} coordinates", rep.checked.len()))?;
    emit(format_args!(
        "max relative error {:.3e} ({}[{}]: analytic {:.6e}, numeric {:.6e})",
        rep.max_rel_error, rep.worst.param, rep.worst.index, rep.worst.analytic, rep.worst.numeric
    ))?;
    Ok(if rep.max_rel_error < GRADCHECK_TOLERANCE { EXIT_OK } else { EXIT_FAILURE })
}
