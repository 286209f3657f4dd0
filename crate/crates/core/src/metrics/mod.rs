//! Overlap, surface and boundary metrics.
//!
//! Conventions shared by every overlap metric: two empty masks score 1.0,
//! exactly one empty mask scores 0.0. Distances are Euclidean over unit-spaced
//! pixels or voxels and are computed with an exact distance transform.

mod edt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LabelMap, Mask2D, Mask3D};

pub use edt::squared_distance_transform;

/// Geometry of a binary grid. 2-D masks have `depth == 1` and `volumetric == false`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridShape {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub volumetric: bool,
}

impl GridShape {
    pub fn dims(&self) -> [usize; 3] {
        [self.depth, self.height, self.width]
    }

    pub fn len(&self) -> usize {
        self.depth * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Anything the metrics can score: [`Mask2D`] or [`Mask3D`].
pub trait MaskGrid {
    fn shape(&self) -> GridShape;
    fn bits(&self) -> &[bool];
}

impl MaskGrid for Mask2D {
    fn shape(&self) -> GridShape {
        GridShape {
            depth: 1,
            height: self.height(),
            width: self.width(),
            volumetric: false,
        }
    }

    fn bits(&self) -> &[bool] {
        Mask2D::bits(self)
    }
}

impl MaskGrid for Mask3D {
    fn shape(&self) -> GridShape {
        GridShape {
            depth: self.depth(),
            height: self.height(),
            width: self.width(),
            volumetric: true,
        }
    }

    fn bits(&self) -> &[bool] {
        Mask3D::bits(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// NSD acceptance tolerance in pixels/voxels.
    pub nsd_tolerance: f64,
    /// Boundary-F matching radius as a fraction of the image diagonal (at least 1 pixel).
    pub boundary_radius_fraction: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            nsd_tolerance: 2.0,
            boundary_radius_fraction: 0.008,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nsd_tolerance > 0.0) || !(self.boundary_radius_fraction > 0.0) {
            return Err(Error::InvalidArgument(
                "NSD tolerance and boundary radius fraction must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Matching radius for a `height` x `width` image.
    pub fn boundary_radius(&self, height: usize, width: usize) -> f64 {
        let diag = ((height * height + width * width) as f64).sqrt();
        (self.boundary_radius_fraction * diag).max(1.0)
    }
}

fn check_shapes<M: MaskGrid>(pred: &M, gt: &M) -> Result<GridShape> {
    let (a, b) = (pred.shape(), gt.shape());
    if a != b {
        return Err(Error::ShapeMismatch(format!(
            "prediction is {:?}, ground truth is {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(a)
}

struct Overlap {
    pred: usize,
    gt: usize,
    both: usize,
}

fn overlap<M: MaskGrid>(pred: &M, gt: &M) -> Result<Overlap> {
    check_shapes(pred, gt)?;
    let mut o = Overlap { pred: 0, gt: 0, both: 0 };
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        o.pred += p as usize;
        o.gt += g as usize;
        o.both += (p && g) as usize;
    }
    Ok(o)
}

/// Dice similarity coefficient `2|P∩G| / (|P| + |G|)`.
pub fn dsc<M: MaskGrid>(pred: &M, gt: &M) -> Result<f64> {
    let o = overlap(pred, gt)?;
    if o.pred + o.gt == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * o.both as f64 / (o.pred + o.gt) as f64)
}

/// Intersection over union.
pub fn jaccard<M: MaskGrid>(pred: &M, gt: &M) -> Result<f64> {
    let o = overlap(pred, gt)?;
    let union = o.pred + o.gt - o.both;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(o.both as f64 / union as f64)
}

/// Foreground cells with at least one background neighbour (4-neighbourhood
/// in 2-D, 6 in 3-D). Cells outside the grid count as background.
pub fn boundary_bits(shape: GridShape, bits: &[bool]) -> Vec<bool> {
    let GridShape {
        depth: d,
        height: h,
        width: w,
        volumetric,
    } = shape;
    let at = |z: usize, y: usize, x: usize| bits[(z * h + y) * w + x];
    let mut out = vec![false; bits.len()];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if !at(z, y, x) {
                    continue;
                }
                let mut edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
                edge = edge || !at(z, y - 1, x) || !at(z, y + 1, x) || !at(z, y, x - 1) || !at(z, y, x + 1);
                if volumetric && !edge {
                    edge = z == 0 || z + 1 == d || !at(z - 1, y, x) || !at(z + 1, y, x);
                }
                out[(z * h + y) * w + x] = edge;
            }
        }
    }
    out
}

/// Boundary cells of `mask` as `[slice, row, col]`; 2-D masks report slice 0.
pub fn boundary_pixels<M: MaskGrid>(mask: &M) -> Vec<[usize; 3]> {
    let shape = mask.shape();
    let (h, w) = (shape.height, shape.width);
    boundary_bits(shape, mask.bits())
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| [i / (h * w), (i / w) % h, i % w])
        .collect()
}

/// Per-direction counts of boundary cells lying within `radius` of the other boundary.
struct SurfaceMatch {
    pred_total: usize,
    pred_close: usize,
    gt_total: usize,
    gt_close: usize,
}

fn surface_match<M: MaskGrid>(pred: &M, gt: &M, radius: f64) -> Result<SurfaceMatch> {
    let shape = check_shapes(pred, gt)?;
    let bp = boundary_bits(shape, pred.bits());
    let bg = boundary_bits(shape, gt.bits());
    let dist_to_pred = squared_distance_transform(shape.dims(), &bp);
    let dist_to_gt = squared_distance_transform(shape.dims(), &bg);
    let r2 = radius * radius;
    let mut m = SurfaceMatch {
        pred_total: 0,
        pred_close: 0,
        gt_total: 0,
        gt_close: 0,
    };
    for i in 0..shape.len() {
        if bp[i] {
            m.pred_total += 1;
            m.pred_close += (dist_to_gt[i] <= r2) as usize;
        }
        if bg[i] {
            m.gt_total += 1;
            m.gt_close += (dist_to_pred[i] <= r2) as usize;
        }
    }
    Ok(m)
}

/// Normalized surface distance (surface Dice) at tolerance `tau`.
pub fn nsd<M: MaskGrid>(pred: &M, gt: &M, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("NSD tolerance must be positive, got {tau}")));
    }
    let m = surface_match(pred, gt, tau)?;
    match (m.pred_total, m.gt_total) {
        (0, 0) => Ok(1.0),
        (0, _) | (_, 0) => Ok(0.0),
        (p, g) => Ok((m.pred_close + m.gt_close) as f64 / (p + g) as f64),
    }
}

/// Boundary F-measure with matching radius `radius`.
pub fn boundary_f<M: MaskGrid>(pred: &M, gt: &M, radius: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("boundary radius must be positive, got {radius}")));
    }
    let m = surface_match(pred, gt, radius)?;
    match (m.pred_total, m.gt_total) {
        (0, 0) => Ok(1.0),
        (0, _) | (_, 0) => Ok(0.0),
        (p, g) => {
            let precision = m.pred_close as f64 / p as f64;
            let recall = m.gt_close as f64 / g as f64;
            if precision + recall == 0.0 {
                Ok(0.0)
            } else {
                Ok(2.0 * precision * recall / (precision + recall))
            }
        }
    }
}

/// Region and boundary scores of a video, averaged over the evaluated frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JfScore {
    pub j: f64,
    pub f: f64,
    /// `(j + f) / 2` in percent.
    pub jf: f64,
}

/// Mean of `(jaccard + boundary_f) / 2` over `eval_frames`, in percent.
pub fn jf_sequence(
    preds: &[Mask2D],
    gts: &[Mask2D],
    eval_frames: &[usize],
    cfg: &MetricConfig,
) -> Result<f64> {
    Ok(jf_scores(preds, gts, eval_frames, cfg)?.jf)
}

pub fn jf_scores(
    preds: &[Mask2D],
    gts: &[Mask2D],
    eval_frames: &[usize],
    cfg: &MetricConfig,
) -> Result<JfScore> {
    if preds.len() != gts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    if eval_frames.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let (mut j_sum, mut f_sum) = (0.0, 0.0);
    for &i in eval_frames {
        let (p, g) = preds
            .get(i)
            .zip(gts.get(i))
            .ok_or(Error::FrameOutOfRange { index: i, count: preds.len() })?;
        j_sum += jaccard(p, g)?;
        f_sum += boundary_f(p, g, cfg.boundary_radius(g.height(), g.width()))?;
    }
    let n = eval_frames.len() as f64;
    let (j, f) = (j_sum / n, f_sum / n);
    Ok(JfScore {
        j,
        f,
        jf: 100.0 * (j + f) / 2.0,
    })
}

/// Pixelwise F1 `2TP / (2TP + FP + FN)` of one class in a semantic label map.
pub fn semantic_f1(pred: &LabelMap, gt: &LabelMap, class_id: u32) -> Result<f64> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::ShapeMismatch(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        match (p == class_id, g == class_id) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fn_ == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

/// Mean and population standard deviation of a score list.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl std::fmt::Display for ScoreSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4}±{:.4}", self.mean, self.std)
    }
}

pub fn summarize(scores: &[f64]) -> Result<ScoreSummary> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok(ScoreSummary {
        mean,
        std: var.sqrt(),
        n: scores.len(),
    })
}
