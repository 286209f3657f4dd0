//! Segmentation losses and their weighted combination.

use std::rc::Rc;

use medseg_core::types::Mask2D;
use serde::{Deserialize, Serialize};

use crate::autodiff::{bce_value, dice_value, Var};
use crate::error::{Result, ToyError};
use crate::model::{candidate_ious, candidate_probs, select_index, DecodeVars, DecoderOutput, Graph};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Dice weight.
    pub alpha: f64,
    /// BCE weight.
    pub beta: f64,
    pub iou_head_weight: f64,
    pub occlusion_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, iou_head_weight: 1.0, occlusion_weight: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.iou_head_weight, self.occlusion_weight];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ToyError::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Unweighted loss terms. Mask terms are `None` when the object is absent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dice: Option<f64>,
    pub bce: Option<f64>,
    pub iou: Option<f64>,
    pub occlusion: f64,
}

impl LossBreakdown {
    pub fn weighted(&self, cfg: &LossConfig) -> f64 {
        cfg.alpha * self.dice.unwrap_or(0.0)
            + cfg.beta * self.bce.unwrap_or(0.0)
            + cfg.iou_head_weight * self.iou.unwrap_or(0.0)
            + cfg.occlusion_weight * self.occlusion
    }
}

fn check_len(probs: &[f64], gt: &Mask2D) -> Result<Vec<f64>> {
    if probs.len() != gt.bits().len() {
        return Err(ToyError::Shape(format!(
            "{} probabilities for a {}x{} mask",
            probs.len(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(gt.bits().iter().map(|&b| b as u8 as f64).collect())
}

/// `1 - 2 sum(p g) / (sum(p) + sum(g))`; 0 when both sums are zero.
pub fn dice_loss(probs: &[f64], gt: &Mask2D) -> Result<f64> {
    let g = check_len(probs, gt)?;
    Ok(dice_value(probs, &g))
}

/// Mean binary cross-entropy with probabilities clipped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(probs: &[f64], gt: &Mask2D) -> Result<f64> {
    let g = check_len(probs, gt)?;
    Ok(bce_value(probs, &g))
}

/// Loss of one decoded frame.
///
/// With a non-empty `gt`: dice and BCE on the argmax-IoU candidate, MSE of
/// the IoU head against each candidate's true IoU, and BCE of the occlusion
/// logit against "present". With no object (`None` or an empty mask) only the
/// occlusion term remains, with target "absent".
pub fn total_loss(out: &DecoderOutput, gt: Option<&Mask2D>, cfg: &LossConfig) -> Result<(f64, LossBreakdown)> {
    let occ_p = crate::autodiff::sigmoid_f64(out.occlusion_logit);
    let b = match gt.filter(|g| !g.is_empty()) {
        None => LossBreakdown { occlusion: bce_value(&[occ_p], &[0.0]), ..Default::default() },
        Some(g) => {
            let j = select_index(&out.iou_scores);
            let probs = candidate_probs(out, j);
            let ious = candidate_ious(out, g);
            let mse = out.iou_scores.iter().zip(&ious).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / ious.len() as f64;
            LossBreakdown {
                dice: Some(dice_loss(&probs, g)?),
                bce: Some(bce_loss(&probs, g)?),
                iou: Some(mse),
                occlusion: bce_value(&[occ_p], &[1.0]),
            }
        }
    };
    Ok((b.weighted(cfg), b))
}

/// Non-differentiable choices made while building a frame loss.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct FrameDecision {
    pub selected: usize,
    pub iou_targets: Vec<f64>,
}

impl Graph<'_> {
    /// Graph form of [`total_loss`]. Replays `fixed` instead of deciding
    /// afresh when given.
    pub(crate) fn frame_loss(
        &mut self,
        d: &DecodeVars,
        gt: Option<&Mask2D>,
        cfg: &LossConfig,
        fixed: Option<&FrameDecision>,
    ) -> (Var, Option<FrameDecision>) {
        let t = &mut self.tape;
        let gt = gt.filter(|g| !g.is_empty());
        let Some(g) = gt else {
            let occ = t.bce_with_logits(d.occlusion, Rc::from([0.0]));
            return (t.scale(occ, cfg.occlusion_weight), None);
        };
        let decision = match fixed {
            Some(f) => f.clone(),
            None => {
                let logits = t.value(d.logits);
                let m = logits.cols;
                let out = DecoderOutput {
                    height: g.height(),
                    width: g.width(),
                    mask_logits: (0..m).map(|j| (0..logits.rows).map(|r| logits.get(r, j)).collect()).collect(),
                    iou_scores: t.value(d.iou).data.clone(),
                    occlusion_logit: 0.0,
                };
                FrameDecision { selected: select_index(&out.iou_scores), iou_targets: candidate_ious(&out, g) }
            }
        };
        let target: Rc<[f64]> = g.bits().iter().map(|&b| b as u8 as f64).collect();
        let col = self.mask_column(d.logits, decision.selected);
        let t = &mut self.tape;
        let dice = t.dice_with_logits(col, target.clone());
        let dice = t.scale(dice, cfg.alpha);
        let bce = t.bce_with_logits(col, target);
        let bce = t.scale(bce, cfg.beta);
        let iou = t.mse(d.iou, decision.iou_targets.clone().into());
        let iou = t.scale(iou, cfg.iou_head_weight);
        let occ = t.bce_with_logits(d.occlusion, Rc::from([1.0]));
        let occ = t.scale(occ, cfg.occlusion_weight);
        let all = t.concat_rows(&[dice, bce, iou, occ]);
        (t.sum(all), Some(decision))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(bits: &[bool]) -> Mask2D {
        Mask2D::new(1, bits.len(), bits.to_vec()).unwrap()
    }

    #[test]
    fn dice_examples() {
        let g = row(&[true, false]);
        assert!((dice_loss(&[1.0, 1.0], &g).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(dice_loss(&[1.0, 0.0], &g).unwrap(), 0.0);
        assert_eq!(dice_loss(&[0.0, 0.0], &g).unwrap(), 1.0);
        assert_eq!(dice_loss(&[0.0, 0.0], &row(&[false, false])).unwrap(), 0.0);
        assert!(dice_loss(&[1.0], &g).is_err());
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&[0.5], &row(&[true])).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let v = bce_loss(&[0.9, 0.1], &row(&[true, false])).unwrap();
        assert!((v - 0.105361).abs() < 1e-6, "{v}");
        assert!(bce_loss(&[1.0, 0.0], &row(&[true, false])).unwrap() < 1e-6);
        assert!(bce_loss(&[1.0], &row(&[true, false])).is_err());
    }

    #[test]
    fn weighted_sum_of_hand_values() {
        let b = LossBreakdown {
            dice: Some(dice_loss(&[1.0, 1.0], &row(&[true, false])).unwrap()),
            bce: Some(bce_loss(&[0.9, 0.1], &row(&[true, false])).unwrap()),
            iou: Some(0.7),
            occlusion: 0.3,
        };
        let cfg = LossConfig { alpha: 1.0, beta: 1.0, iou_head_weight: 0.0, occlusion_weight: 0.0 };
        assert!((b.weighted(&cfg) - 0.438694).abs() < 1e-6);
        let zero = LossConfig { alpha: 0.0, beta: 0.0, iou_head_weight: 0.0, occlusion_weight: 0.0 };
        assert_eq!(b.weighted(&zero), 0.0);
    }

    #[test]
    fn absent_object_keeps_only_occlusion() {
        let out = DecoderOutput {
            height: 1,
            width: 2,
            mask_logits: vec![vec![1.0, -1.0]],
            iou_scores: vec![0.4],
            occlusion_logit: 0.3,
        };
        let (total, b) = total_loss(&out, None, &LossConfig::default()).unwrap();
        assert_eq!(b.dice, None);
        assert_eq!(b.bce, None);
        assert_eq!(b.iou, None);
        assert_eq!(total, b.occlusion);
        let (total2, _) = total_loss(&out, Some(&row(&[false, false])), &LossConfig::default()).unwrap();
        assert_eq!(total, total2);
    }
}
