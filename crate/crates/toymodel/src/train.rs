//! Fine-tuning: sequence loss through memory, AdamW with layer decay and
//! component freezing.

use std::collections::BTreeSet;

use medseg_core::metrics::dsc;
use medseg_core::prompts::{sample_k_clicks, stream_rng};
use medseg_core::types::{Case, Mask2D, PromptSet};
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Result, ToyError};
use crate::loss::{FrameDecision, LossConfig};
use crate::memory::MemoryBank;
use crate::model::{select_index, FrameInput, Graph, MemRef, ToyModel};
use crate::params::Component;
use crate::session::{ToyOptions, ToyTracker};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Learning-rate factor per level below the top of the image encoder.
    pub layer_decay: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub freeze: BTreeSet<Component>,
    pub seed: u64,
    /// Clicks on the first frame of each training object.
    pub clicks: usize,
    pub loss: LossConfig,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-4,
            layer_decay: 0.9,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            freeze: BTreeSet::from([Component::PromptEncoder]),
            seed: 0,
            clicks: 3,
            loss: LossConfig::default(),
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(ToyError::Config("learning rate must be finite and non-negative".into()));
        }
        if !(self.layer_decay > 0.0 && self.layer_decay <= 1.0) {
            return Err(ToyError::Config("layer decay must lie in (0, 1]".into()));
        }
        if self.clicks == 0 {
            return Err(ToyError::Config("clicks must be at least 1".into()));
        }
        Ok(())
    }
}

/// One object track used for training.
pub(crate) struct Sample {
    pub case_id: String,
    pub class_id: u32,
    pub inputs: Vec<FrameInput>,
    pub gts: Vec<Mask2D>,
    /// First frame that shows the object; it receives the clicks.
    pub start: usize,
}

pub(crate) fn samples(model: &ToyModel, cases: &[Case]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for case in cases {
        for &class_id in &case.class_ids {
            let gts: Vec<Mask2D> = (0..case.frames.len())
                .map(|i| case.gt_mask(i, class_id))
                .collect::<medseg_core::Result<_>>()?;
            let Some(start) = gts.iter().position(|g| !g.is_empty()) else { continue };
            let inputs = case.frames.iter().map(|f| FrameInput::new(f, &model.config)).collect();
            out.push(Sample { case_id: case.case_id.clone(), class_id, inputs, gts, start });
        }
    }
    if out.is_empty() {
        return Err(ToyError::EmptyDataset);
    }
    Ok(out)
}

pub(crate) fn sample_clicks(sample: &Sample, k: usize, seed: u64) -> Result<PromptSet> {
    let mut rng = stream_rng(seed, &format!("train/{}", sample.case_id), sample.class_id);
    let clicks = sample_k_clicks(&sample.gts[sample.start], k, &mut rng)?;
    Ok(PromptSet::points(sample.start, clicks))
}

/// Mean frame loss of one track: clicks on the start frame, then
/// propagation with soft masks written to memory.
pub(crate) fn sequence_loss(
    g: &mut Graph<'_>,
    sample: &Sample,
    prompts: &PromptSet,
    loss: &LossConfig,
    fixed: Option<&[Option<FrameDecision>]>,
) -> (Var, Vec<Option<FrameDecision>>) {
    let capacity = g.model().config.bank_capacity;
    let mut bank: MemoryBank<MemRef> = MemoryBank::new(capacity);
    let mut losses = Vec::new();
    let mut decisions = Vec::new();
    let empty = PromptSet::points(0, Vec::new());
    for (k, t) in (sample.start..sample.inputs.len()).enumerate() {
        let input = &sample.inputs[t];
        let tokens = g.encode(input);
        let refs: Vec<(MemRef, usize, bool)> = bank.iter().map(|(m, f, p)| (*m, f, p)).collect();
        let cond = g.condition(tokens, &refs, t, input.token_rows, input.token_cols);
        let ps = if t == sample.start { prompts } else { &empty };
        let d = g.decode(cond, input, ps);
        let (l, decision) = g.frame_loss(&d, Some(&sample.gts[t]), loss, fixed.and_then(|f| f[k].as_ref()));
        let selected = match &decision {
            Some(dec) => dec.selected,
            None => select_index(&g.tape.value(d.iou).data),
        };
        losses.push(l);
        decisions.push(decision);
        let col = g.mask_column(d.logits, selected);
        let probs = g.tape.sigmoid(col);
        let entry = g.encode_memory(probs, tokens, input.height, input.width);
        bank.push(entry, t, t == sample.start);
    }
    let all = g.tape.concat_rows(&losses);
    let total = g.tape.sum(all);
    (g.tape.scale(total, 1.0 / losses.len() as f64), decisions)
}

/// Loss and gradient of one track.
pub(crate) fn track_gradients(
    model: &ToyModel,
    sample: &Sample,
    prompts: &PromptSet,
    loss: &LossConfig,
    fixed: Option<&[Option<FrameDecision>]>,
) -> (f64, Vec<Option<Tensor>>, Vec<Option<FrameDecision>>) {
    let mut g = model.graph();
    let (l, decisions) = sequence_loss(&mut g, sample, prompts, loss, fixed);
    let value = g.tape.value(l).item();
    let grads = g.tape.backward(l, model.params.len());
    (value, grads, decisions)
}

/// Loss of one track with the given decisions replayed.
pub(crate) fn track_loss(
    model: &ToyModel,
    sample: &Sample,
    prompts: &PromptSet,
    loss: &LossConfig,
    fixed: Option<&[Option<FrameDecision>]>,
) -> f64 {
    let mut g = model.graph();
    let (l, _) = sequence_loss(&mut g, sample, prompts, loss, fixed);
    g.tape.value(l).item()
}

/// Summed loss and per-parameter gradients over every track of `cases`,
/// with clicks drawn from `seed`. Unused parameters get zero gradients.
pub fn batch_gradients(
    model: &ToyModel,
    cases: &[Case],
    loss: &LossConfig,
    clicks: usize,
    seed: u64,
) -> Result<(f64, Vec<Tensor>)> {
    let samples = samples(model, cases)?;
    let mut total = 0.0;
    let mut grads: Vec<Tensor> = model.params.values.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
    for s in &samples {
        let prompts = sample_clicks(s, clicks, seed)?;
        let (v, g, _) = track_gradients(model, s, &prompts, loss, None);
        total += v;
        for (acc, g) in grads.iter_mut().zip(g) {
            if let Some(g) = g {
                acc.add_assign(&g);
            }
        }
    }
    Ok((total, grads))
}

/// AdamW state.
pub struct Optimizer {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Optimizer {
    pub fn new(model: &ToyModel) -> Self {
        let zeros: Vec<Tensor> = model.params.values.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Learning rate of parameter `id` after layer decay.
    pub fn lr_for(model: &ToyModel, id: usize, cfg: &TrainConfig) -> f64 {
        let spec = &model.params.specs[id];
        if spec.component == Component::ImageEncoder {
            cfg.lr * cfg.layer_decay.powi(spec.depth as i32)
        } else {
            cfg.lr
        }
    }

    /// One decoupled-weight-decay Adam step; frozen components are untouched.
    pub fn step(&mut self, model: &mut ToyModel, grads: &[Option<Tensor>], cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for id in 0..model.params.len() {
            if cfg.freeze.contains(&model.params.specs[id].component) {
                continue;
            }
            let Some(g) = &grads[id] else { continue };
            let lr = Self::lr_for(model, id, cfg);
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            let p = &mut model.params.values[id];
            for k in 0..g.len() {
                let gk = g.data[k];
                m.data[k] = b1 * m.data[k] + (1.0 - b1) * gk;
                v.data[k] = b2 * v.data[k] + (1.0 - b2) * gk * gk;
                let mh = m.data[k] / c1;
                let vh = v.data[k] / c2;
                p.data[k] -= lr * (mh / (vh.sqrt() + cfg.eps) + cfg.weight_decay * p.data[k]);
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean track loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Trains `model` in place, one optimizer step per track.
pub fn train(model: &mut ToyModel, cases: &[Case], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let samples = samples(model, cases)?;
    let mut opt = Optimizer::new(model);
    let mut report = TrainReport::default();
    'outer: for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        for s in &samples {
            if cfg.max_steps.is_some_and(|m| report.steps >= m) {
                break 'outer;
            }
            let prompts = sample_clicks(s, cfg.clicks, cfg.seed.wrapping_add(epoch as u64))?;
            let (loss, grads, _) = track_gradients(model, s, &prompts, &cfg.loss, None);
            opt.step(model, &grads, cfg);
            report.steps += 1;
            sum += loss;
        }
        let mean = sum / samples.len() as f64;
        log::info!("epoch {epoch}: loss {mean:.6}");
        report.epoch_losses.push(mean);
    }
    Ok(report)
}

/// Mean per-frame DSC of inference on the training tracks, with `clicks`
/// clicks on each track's first frame.
pub fn training_dsc(model: &ToyModel, cases: &[Case], clicks: usize, seed: u64) -> Result<f64> {
    let model = std::sync::Arc::new(model.clone());
    let mut scores = Vec::new();
    for case in cases {
        let mut tracker = ToyTracker::new(model.clone(), ToyOptions::default(), case.height(), case.width(), case.frames.len());
        for &class_id in &case.class_ids {
            let gts: Vec<Mask2D> = (0..case.frames.len())
                .map(|i| case.gt_mask(i, class_id))
                .collect::<medseg_core::Result<_>>()?;
            let Some(start) = gts.iter().position(|g| !g.is_empty()) else { continue };
            let mut rng = stream_rng(seed, &format!("train/{}", case.case_id), class_id);
            let prompts = PromptSet::points(start, sample_k_clicks(&gts[start], clicks, &mut rng)?);
            let pred = tracker.prompt(class_id, &prompts, &case.frames[start])?;
            scores.push(dsc(&pred, &gts[start])?);
            for t in start + 1..case.frames.len() {
                let pred = tracker.segment(class_id, t, &case.frames[t])?;
                scores.push(dsc(&pred, &gts[t])?);
            }
        }
    }
    if scores.is_empty() {
        return Err(ToyError::EmptyDataset);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
