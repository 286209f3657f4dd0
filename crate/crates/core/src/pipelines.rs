//! The three evaluation pipelines and the summary report.
//!
//! Every pipeline turns a dataset into one [`ResultRow`] per (case, class),
//! sorted by case id then class id. Cases run on a bounded rayon pool; each
//! case owns one segmenter session with one object slot per class.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::results::{PipelineKind, PromptAudit, ResultRow, RowStatus};
use crate::metrics::{dsc, jf_scores, nsd, semantic_f1, summarize, MetricConfig, ScoreSummary};
use crate::prompts::{
    anchor_slice, derive_stream_seed, sample_k_clicks, stream_rng, video_interaction_plan, RNG_ALGORITHM,
};
use crate::segmenter::{Segmenter, SegmenterFactory, SegmenterSpec};
use crate::types::{tight_box, Case, CaseKind, LabelMap, Mask2D, Mask3D, PromptSet};

/// How the simulated user prompts an object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    /// `k` clicks sampled uniformly from the ground truth.
    Point,
    /// Tight box around the ground truth.
    Box,
    /// The ground-truth mask itself.
    GtMask,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Point => "point",
            PromptKind::Box => "box",
            PromptKind::GtMask => "gtmask",
        }
    }
}

impl std::str::FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(PromptKind::Point),
            "box" => Ok(PromptKind::Box),
            "gtmask" => Ok(PromptKind::GtMask),
            other => Err(Error::InvalidArgument(format!("unknown prompt kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Clicks per prompted frame.
    pub clicks: usize,
    /// Interacted frames at the start of a video.
    pub frames: usize,
    /// `None` picks the pipeline default: points for 2D and video, a box for 3D.
    pub prompt: Option<PromptKind>,
    pub metrics: MetricConfig,
    pub seed: u64,
    /// Worker threads; `None` uses the available parallelism.
    pub jobs: Option<usize>,
    /// Score interacted video frames too.
    pub include_interacted: bool,
    /// Restore the post-prompt state between the two passes of a volume.
    pub reset_between_directions: bool,
    /// Add pixelwise F1 to 2D rows.
    pub semantic_f1: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            clicks: 1,
            frames: 1,
            prompt: None,
            metrics: MetricConfig::default(),
            seed: 0,
            jobs: None,
            include_interacted: false,
            reset_between_directions: true,
            semantic_f1: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clicks == 0 {
            return Err(Error::InvalidArgument("clicks must be at least 1".into()));
        }
        if self.frames == 0 {
            return Err(Error::InvalidArgument("frames must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::InvalidArgument("jobs must be at least 1".into()));
        }
        self.metrics.validate()
    }
}

/// Per-class outcome before it becomes a row.
enum Outcome {
    Scored {
        metrics: BTreeMap<String, f64>,
        prompts: PromptAudit,
    },
    Skipped(String),
    Failed {
        reason: String,
        prompts: PromptAudit,
    },
}

struct Job<'c> {
    pipeline: PipelineKind,
    case: &'c Case,
    cfg: &'c EvalConfig,
}

pub fn eval_2d(
    cases: &[Case],
    spec: &SegmenterSpec,
    cfg: &EvalConfig,
    factory: &dyn SegmenterFactory,
) -> Result<Vec<ResultRow>> {
    run(PipelineKind::Image2d, cases, spec, cfg, factory)
}

pub fn eval_3d(
    cases: &[Case],
    spec: &SegmenterSpec,
    cfg: &EvalConfig,
    factory: &dyn SegmenterFactory,
) -> Result<Vec<ResultRow>> {
    run(PipelineKind::Volume3d, cases, spec, cfg, factory)
}

pub fn eval_video(
    cases: &[Case],
    spec: &SegmenterSpec,
    cfg: &EvalConfig,
    factory: &dyn SegmenterFactory,
) -> Result<Vec<ResultRow>> {
    run(PipelineKind::Video, cases, spec, cfg, factory)
}

/// Runs the pipeline matching `pipeline`.
pub fn evaluate(
    pipeline: PipelineKind,
    cases: &[Case],
    spec: &SegmenterSpec,
    cfg: &EvalConfig,
    factory: &dyn SegmenterFactory,
) -> Result<Vec<ResultRow>> {
    run(pipeline, cases, spec, cfg, factory)
}

fn expected_kind(pipeline: PipelineKind) -> CaseKind {
    match pipeline {
        PipelineKind::Image2d => CaseKind::Image2d,
        PipelineKind::Volume3d => CaseKind::Volume3d,
        PipelineKind::Video => CaseKind::Video,
    }
}

fn run(
    pipeline: PipelineKind,
    cases: &[Case],
    spec: &SegmenterSpec,
    cfg: &EvalConfig,
    factory: &dyn SegmenterFactory,
) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    spec.validate()?;
    let want = expected_kind(pipeline);
    if let Some(c) = cases.iter().find(|c| c.kind != want) {
        return Err(Error::InvalidArgument(format!(
            "case {} is {}, the {} pipeline needs {}",
            c.case_id,
            c.kind.as_str(),
            pipeline.as_str(),
            want.as_str()
        )));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cfg.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let per_case: Vec<Result<Vec<ResultRow>>> = pool.install(|| {
        use rayon::prelude::*;
        cases
            .par_iter()
            .map(|case| run_case(&Job { pipeline, case, cfg }, spec, factory))
            .collect()
    });
    let mut rows = Vec::new();
    for r in per_case {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| (a.case_id.as_str(), a.class_id).cmp(&(b.case_id.as_str(), b.class_id)));
    Ok(rows)
}

fn row(job: &Job, spec: &SegmenterSpec, class_id: u32, outcome: Outcome, started: Instant) -> ResultRow {
    let (status, reason, metrics, prompts) = match outcome {
        Outcome::Scored { metrics, prompts } => (RowStatus::Ok, None, metrics, prompts),
        Outcome::Skipped(reason) => (RowStatus::Skipped, Some(reason), BTreeMap::new(), PromptAudit::default()),
        Outcome::Failed { reason, prompts } => (RowStatus::Failed, Some(reason), BTreeMap::new(), prompts),
    };
    ResultRow {
        case_id: job.case.case_id.clone(),
        class_id,
        pipeline: job.pipeline,
        segmenter: spec.label(),
        status,
        reason,
        metrics,
        prompts,
        seed: job.cfg.seed,
        rng: RNG_ALGORITHM.to_string(),
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        extra: Default::default(),
    }
}

/// Evaluates every class of one case with a single session.
///
/// A launch failure aborts the whole evaluation. A segmenter error aborts the
/// case: the class that hit it and every later class get failure rows.
fn run_case(job: &Job, spec: &SegmenterSpec, factory: &dyn SegmenterFactory) -> Result<Vec<ResultRow>> {
    let case = job.case;
    let mut session: Option<Box<dyn Segmenter + '_>> = None;
    let mut aborted: Option<String> = None;
    let mut rows = Vec::with_capacity(case.class_ids.len());
    for &class_id in &case.class_ids {
        let started = Instant::now();
        if let Some(reason) = &aborted {
            let outcome = Outcome::Failed {
                reason: format!("case aborted: {reason}"),
                prompts: PromptAudit::default(),
            };
            rows.push(row(job, spec, class_id, outcome, started));
            continue;
        }
        let plan = match plan_prompts(job, class_id) {
            Ok(p) => p,
            Err(e @ (Error::ClassAbsent | Error::NoPromptableFrame)) => {
                rows.push(row(job, spec, class_id, Outcome::Skipped(e.to_string()), started));
                continue;
            }
            Err(e) => return Err(e),
        };
        if session.is_none() {
            session = Some(factory.begin(spec, case)?);
        }
        let seg = session.as_mut().expect("session started above");
        let outcome = match score(job, seg.as_mut(), class_id, &plan) {
            Ok(metrics) => Outcome::Scored { metrics, prompts: plan.audit },
            Err(e) => {
                let reason = e.to_string();
                let fatal = !matches!(e, Error::EmptyEvalSet);
                if fatal {
                    aborted = Some(reason.clone());
                }
                Outcome::Failed { reason, prompts: plan.audit }
            }
        };
        rows.push(row(job, spec, class_id, outcome, started));
    }
    if let Some(mut s) = session {
        if let Err(e) = s.end() {
            log::warn!("case {}: ending session: {e}", case.case_id);
        }
    }
    Ok(rows)
}

struct Plan {
    prompts: Vec<PromptSet>,
    audit: PromptAudit,
}

fn audit(kind: PromptKind, prompts: &[PromptSet]) -> PromptAudit {
    PromptAudit {
        kind: kind.as_str().to_string(),
        clicks: prompts.iter().map(|p| p.points.len()).sum(),
        boxes: prompts.iter().filter(|p| p.box_prompt.is_some()).count(),
        masks: prompts.iter().filter(|p| p.mask.is_some()).count(),
        frames: prompts.iter().map(|p| p.frame_index).collect(),
    }
}

fn prompt_for_frame(kind: PromptKind, case: &Case, frame: usize, class_id: u32, k: usize, seed: u64) -> Result<PromptSet> {
    let gt = case.gt_mask(frame, class_id)?;
    if gt.is_empty() {
        return Err(Error::ClassAbsent);
    }
    Ok(match kind {
        PromptKind::Point => {
            let mut rng = stream_rng(seed, &case.case_id, class_id);
            PromptSet::points(frame, sample_k_clicks(&gt, k, &mut rng)?)
        }
        PromptKind::Box => PromptSet::boxed(frame, tight_box(&gt)?),
        PromptKind::GtMask => PromptSet::mask(frame, gt),
    })
}

fn plan_prompts(job: &Job, class_id: u32) -> Result<Plan> {
    let (case, cfg) = (job.case, job.cfg);
    let prompts = match job.pipeline {
        PipelineKind::Image2d => {
            let kind = cfg.prompt.unwrap_or(PromptKind::Point);
            vec![prompt_for_frame(kind, case, 0, class_id, cfg.clicks, cfg.seed)?]
        }
        PipelineKind::Volume3d => {
            let kind = cfg.prompt.unwrap_or(PromptKind::Box);
            let m = anchor_slice(&case.gt, class_id)?;
            vec![prompt_for_frame(kind, case, m, class_id, cfg.clicks, cfg.seed)?]
        }
        PipelineKind::Video => match cfg.prompt.unwrap_or(PromptKind::Point) {
            PromptKind::Point => {
                let seed = derive_stream_seed(cfg.seed, &case.case_id, class_id);
                video_interaction_plan(&case.gt, class_id, cfg.frames, cfg.clicks, seed)?.prompts
            }
            kind => {
                let mut prompts = Vec::new();
                for i in 0..cfg.frames.min(case.frames.len()) {
                    match prompt_for_frame(kind, case, i, class_id, cfg.clicks, cfg.seed) {
                        Ok(p) => prompts.push(p),
                        Err(Error::ClassAbsent) => {}
                        Err(e) => return Err(e),
                    }
                }
                if prompts.is_empty() {
                    return Err(Error::NoPromptableFrame);
                }
                prompts
            }
        },
    };
    let kind = cfg.prompt.unwrap_or(match job.pipeline {
        PipelineKind::Volume3d => PromptKind::Box,
        _ => PromptKind::Point,
    });
    let audit = audit(kind, &prompts);
    Ok(Plan { prompts, audit })
}

fn checked(case: &Case, frame: usize, mask: Mask2D) -> Result<Mask2D> {
    if mask.height() != case.height() || mask.width() != case.width() {
        return Err(Error::ShapeMismatch(format!(
            "segmenter returned a {}x{} mask for frame {frame} of a {}x{} case",
            mask.height(),
            mask.width(),
            case.height(),
            case.width()
        )));
    }
    Ok(mask)
}

fn gt_masks(case: &Case, class_id: u32) -> Result<Vec<Mask2D>> {
    (0..case.frames.len()).map(|i| case.gt_mask(i, class_id)).collect()
}

fn score(job: &Job, seg: &mut dyn Segmenter, class_id: u32, plan: &Plan) -> Result<BTreeMap<String, f64>> {
    let (case, cfg) = (job.case, job.cfg);
    let mut metrics = BTreeMap::new();
    match job.pipeline {
        PipelineKind::Image2d => {
            let pred = checked(case, 0, seg.add_prompts(class_id, &plan.prompts[0])?)?;
            let gt = case.gt_mask(0, class_id)?;
            metrics.insert("dsc".into(), dsc(&pred, &gt)?);
            metrics.insert("nsd".into(), nsd(&pred, &gt, cfg.metrics.nsd_tolerance)?);
            if cfg.semantic_f1 {
                let pred_map = LabelMap::from_mask(&pred, class_id);
                metrics.insert("f1".into(), semantic_f1(&pred_map, &case.gt[0], class_id)?);
            }
        }
        PipelineKind::Volume3d => {
            let depth = case.frames.len();
            let prompt = &plan.prompts[0];
            let m = prompt.frame_index;
            let mut preds: Vec<Option<Mask2D>> = vec![None; depth];
            preds[m] = Some(checked(case, m, seg.add_prompts(class_id, prompt)?)?);
            for z in (0..m).rev() {
                preds[z] = Some(checked(case, z, seg.segment_frame(class_id, z)?)?);
            }
            if cfg.reset_between_directions {
                seg.reset_to_prompt_state(class_id)?;
            }
            for z in m + 1..depth {
                preds[z] = Some(checked(case, z, seg.segment_frame(class_id, z)?)?);
            }
            let preds: Vec<Mask2D> = preds.into_iter().map(|p| p.expect("every slice visited")).collect();
            let gts = gt_masks(case, class_id)?;
            if depth == 1 {
                // depth-1 volume: planar metrics
                metrics.insert("dsc".into(), dsc(&preds[0], &gts[0])?);
                metrics.insert("nsd".into(), nsd(&preds[0], &gts[0], cfg.metrics.nsd_tolerance)?);
            } else {
                let pred = Mask3D::from_slices(&preds)?;
                let gt = Mask3D::from_slices(&gts)?;
                metrics.insert("dsc".into(), dsc(&pred, &gt)?);
                metrics.insert("nsd".into(), nsd(&pred, &gt, cfg.metrics.nsd_tolerance)?);
            }
        }
        PipelineKind::Video => {
            let t = case.frames.len();
            let interacted = cfg.frames.min(t);
            let eval: Vec<usize> = if cfg.include_interacted { (0..t).collect() } else { (interacted..t).collect() };
            if eval.is_empty() {
                return Err(Error::EmptyEvalSet);
            }
            let mut by_frame: BTreeMap<usize, &PromptSet> = BTreeMap::new();
            for p in &plan.prompts {
                by_frame.insert(p.frame_index, p);
            }
            let mut prompted = false;
            let mut preds = Vec::with_capacity(t);
            for i in 0..t {
                let pred = if let Some(p) = by_frame.get(&i) {
                    prompted = true;
                    seg.add_prompts(class_id, p)?
                } else if prompted {
                    seg.segment_frame(class_id, i)?
                } else {
                    Mask2D::empty(case.height(), case.width())
                };
                preds.push(checked(case, i, pred)?);
            }
            let score = jf_scores(&preds, &gt_masks(case, class_id)?, &eval, &cfg.metrics)?;
            metrics.insert("jf".into(), score.jf);
            metrics.insert("j".into(), score.j);
            metrics.insert("f".into(), score.f);
        }
    }
    Ok(metrics)
}

/// One cell of the summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportGroup {
    pub pipeline: PipelineKind,
    pub segmenter: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// `mean±std` with four decimals.
    pub formatted: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub groups: Vec<ReportGroup>,
    pub rows: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Summarizes scored rows per (pipeline, segmenter, metric).
pub fn report(rows: &[ResultRow]) -> Result<Report> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut scores: BTreeMap<(PipelineKind, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.status == RowStatus::Ok) {
        for (metric, &v) in &r.metrics {
            scores
                .entry((r.pipeline, r.segmenter.clone(), metric.clone()))
                .or_default()
                .push(v);
        }
    }
    let mut groups = Vec::with_capacity(scores.len());
    for ((pipeline, segmenter, metric), values) in scores {
        let ScoreSummary { mean, std, n } = summarize(&values)?;
        groups.push(ReportGroup {
            pipeline,
            segmenter,
            metric,
            mean,
            std,
            n,
            formatted: ScoreSummary { mean, std, n }.to_string(),
        });
    }
    Ok(Report {
        groups,
        rows: rows.len(),
        skipped: rows.iter().filter(|r| r.status == RowStatus::Skipped).count(),
        failed: rows.iter().filter(|r| r.status == RowStatus::Failed).count(),
    })
}

impl std::fmt::Display for Report {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let seg_w = self.groups.iter().map(|g| g.segmenter.chars().count()).max().unwrap_or(0).max(9);
        writeln!(f, "{:<8} {:<seg_w$} {:<6} {:>5}  mean±std", "pipeline", "segmenter", "metric", "n")?;
        for g in &self.groups {
            writeln!(
                f,
                "{:<8} {:<seg_w$} {:<6} {:>5}  {}",
                g.pipeline.as_str(),
                g.segmenter,
                g.metric,
                g.n,
                g.formatted
            )?;
        }
        write!(f, "rows: {}  skipped: {}  failed: {}", self.rows, self.skipped, self.failed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_with(segmenter: &str, dsc: f64) -> ResultRow {
        ResultRow {
            case_id: "c".into(),
            class_id: 1,
            pipeline: PipelineKind::Image2d,
            segmenter: segmenter.into(),
            status: RowStatus::Ok,
            reason: None,
            metrics: BTreeMap::from([("dsc".to_string(), dsc)]),
            prompts: PromptAudit::default(),
            seed: 0,
            rng: RNG_ALGORITHM.into(),
            wall_time_ms: 0.0,
            extra: Default::default(),
        }
    }

    #[test]
    fn single_row_report() {
        let r = report(&[row_with("oracle", 0.5)]).unwrap();
        assert_eq!(r.groups.len(), 1);
        assert_eq!(r.groups[0].formatted, "0.5000±0.0000");
    }

    #[test]
    fn segmenters_never_merge() {
        let r = report(&[row_with("a", 1.0), row_with("b", 0.0), row_with("a", 0.0)]).unwrap();
        assert_eq!(r.groups.len(), 2);
        assert_eq!(r.groups[0].segmenter, "a");
        assert_eq!(r.groups[0].formatted, "0.5000±0.5000");
        assert_eq!(r.groups[1].formatted, "0.0000±0.0000");
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(matches!(report(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig { clicks: 0, ..Default::default() }.validate().is_err());
        assert!(EvalConfig { frames: 0, ..Default::default() }.validate().is_err());
        assert!(EvalConfig { jobs: Some(0), ..Default::default() }.validate().is_err());
        assert!(EvalConfig::default().validate().is_ok());
    }
}
