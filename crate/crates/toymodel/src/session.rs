//! Streaming inference: the toy model behind the segmenter contract.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use medseg_core::segmenter::{Segmenter, SegmenterFactory, SegmenterKind, SegmenterSpec, StandardFactory};
use medseg_core::types::{Case, Frame, Mask2D, PromptSet};
use medseg_core::Error as CoreError;

use crate::checkpoint;
use crate::error::{Result, ToyError};
use crate::memory::MemoryBank;
use crate::model::{select_mask, TokenGrid, ToyConfig, ToyModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyOptions {
    /// When false, propagation never sees the memory bank.
    pub memory: bool,
}

impl Default for ToyOptions {
    fn default() -> Self {
        Self { memory: true }
    }
}

struct ObjectState {
    bank: MemoryBank,
    prompts: BTreeMap<usize, PromptSet>,
}

/// Per-video tracking state, one memory bank per object.
pub struct ToyTracker {
    model: Arc<ToyModel>,
    options: ToyOptions,
    height: usize,
    width: usize,
    frames: usize,
    tokens: HashMap<usize, TokenGrid>,
    objects: BTreeMap<u32, ObjectState>,
}

fn merge(into: &mut PromptSet, new: &PromptSet) {
    into.points.extend(new.points.iter().copied());
    if new.box_prompt.is_some() {
        into.box_prompt = new.box_prompt;
    }
    if new.mask.is_some() {
        into.mask = new.mask.clone();
    }
}

impl ToyTracker {
    pub fn new(model: Arc<ToyModel>, options: ToyOptions, height: usize, width: usize, frames: usize) -> Self {
        Self { model, options, height, width, frames, tokens: HashMap::new(), objects: BTreeMap::new() }
    }

    pub fn model(&self) -> &ToyModel {
        &self.model
    }

    fn check_frame(&self, index: usize, frame: &Frame) -> Result<()> {
        if index >= self.frames {
            return Err(CoreError::InvalidArgument(format!("frame {index} out of range ({} frames)", self.frames)).into());
        }
        if frame.height() != self.height || frame.width() != self.width {
            return Err(ToyError::Shape(format!(
                "frame {index} is {}x{}, session is {}x{}",
                frame.height(),
                frame.width(),
                self.height,
                self.width
            )));
        }
        Ok(())
    }

    fn tokens(&mut self, index: usize, frame: &Frame) -> TokenGrid {
        self.tokens.entry(index).or_insert_with(|| self.model.encode_frame(frame)).clone()
    }

    /// Mask for the prompted frame given all prompts so far on it.
    pub fn prompt(&mut self, class_id: u32, prompts: &PromptSet, frame: &Frame) -> Result<Mask2D> {
        let index = prompts.frame_index;
        self.check_frame(index, frame)?;
        prompts.validate(self.height, self.width)?;
        let tokens = self.tokens(index, frame);
        let capacity = self.model.config.bank_capacity;
        let state = self.objects.entry(class_id).or_insert_with(|| ObjectState { bank: MemoryBank::new(capacity), prompts: BTreeMap::new() });
        let merged = state.prompts.entry(index).or_insert_with(|| PromptSet::points(index, Vec::new()));
        merge(merged, prompts);
        let merged = merged.clone();
        let pred = match &merged.mask {
            Some(mask) => mask.clone(),
            None => {
                let mut others = MemoryBank::new(state.bank.capacity());
                for (e, f, p) in state.bank.iter() {
                    if f != index && self.options.memory {
                        others.push(e.clone(), f, p);
                    }
                }
                let cond = self.model.condition_on_memory(&tokens, &others, index)?;
                select_mask(&self.model.decode(&cond, frame, &merged)?)
            }
        };
        let entry = self.model.encode_memory(&pred, &tokens, index, true)?;
        state.bank.insert(entry);
        Ok(pred)
    }

    /// Propagated mask; empty when the occlusion head says the object is absent.
    pub fn segment(&mut self, class_id: u32, index: usize, frame: &Frame) -> Result<Mask2D> {
        self.check_frame(index, frame)?;
        if !self.objects.contains_key(&class_id) {
            return Err(CoreError::Segmenter(format!("class {class_id} has not been prompted")).into());
        }
        let tokens = self.tokens(index, frame);
        let state = self.objects.get_mut(&class_id).expect("checked above");
        let empty_bank = MemoryBank::new(state.bank.capacity());
        let bank = if self.options.memory { &state.bank } else { &empty_bank };
        let cond = self.model.condition_on_memory(&tokens, bank, index)?;
        let out = self.model.decode(&cond, frame, &PromptSet::points(index, Vec::new()))?;
        let pred = if out.occlusion_logit < 0.0 { Mask2D::empty(self.height, self.width) } else { select_mask(&out) };
        if self.options.memory {
            let entry = self.model.encode_memory(&pred, &tokens, index, false)?;
            state.bank.insert(entry);
        }
        Ok(pred)
    }

    /// Drops propagation memories of the object.
    pub fn reset(&mut self, class_id: u32) {
        if let Some(state) = self.objects.get_mut(&class_id) {
            state.bank.clear_unprompted();
        }
    }
}

/// [`ToyTracker`] bound to a case.
pub struct ToySegmenter<'a> {
    case: &'a Case,
    tracker: ToyTracker,
}

impl<'a> ToySegmenter<'a> {
    pub fn new(model: Arc<ToyModel>, options: ToyOptions, case: &'a Case) -> Self {
        let tracker = ToyTracker::new(model, options, case.height(), case.width(), case.frames.len());
        Self { case, tracker }
    }

    fn frame(&self, index: usize) -> medseg_core::Result<&'a Frame> {
        self.case
            .frames
            .get(index)
            .ok_or_else(|| CoreError::InvalidArgument(format!("frame {index} out of range")))
    }
}

impl Segmenter for ToySegmenter<'_> {
    fn name(&self) -> &str {
        "toy"
    }

    fn add_prompts(&mut self, class_id: u32, prompts: &PromptSet) -> medseg_core::Result<Mask2D> {
        let frame = self.frame(prompts.frame_index)?;
        Ok(self.tracker.prompt(class_id, prompts, frame)?)
    }

    fn segment_frame(&mut self, class_id: u32, frame_index: usize) -> medseg_core::Result<Mask2D> {
        let frame = self.frame(frame_index)?;
        Ok(self.tracker.segment(class_id, frame_index, frame)?)
    }

    fn reset_to_prompt_state(&mut self, class_id: u32) -> medseg_core::Result<()> {
        self.tracker.reset(class_id);
        Ok(())
    }

    fn end(&mut self) -> medseg_core::Result<()> {
        Ok(())
    }
}

/// Checkpoint path, or the init seed when there is none.
type ModelKey = (Option<PathBuf>, u64);

/// Adds `builtin:toy` to the [`StandardFactory`].
///
/// Options: `ckpt` (checkpoint path; without it a fresh default model is
/// initialized from `seed`, default 0) and `memory` (`true`/`false`).
#[derive(Default)]
pub struct ToyFactory {
    cache: Mutex<HashMap<ModelKey, Arc<ToyModel>>>,
}

impl ToyFactory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Factory that serves `model` for every `builtin:toy` session without a `ckpt` option.
    pub fn with_model(model: ToyModel) -> Self {
        let f = Self::default();
        f.cache.lock().expect("fresh mutex").insert((None, 0), Arc::new(model));
        f
    }

    fn model(&self, spec: &SegmenterSpec) -> medseg_core::Result<Arc<ToyModel>> {
        let ckpt: Option<PathBuf> = spec.option("ckpt")?;
        let seed: u64 = spec.option("seed")?.unwrap_or(0);
        let key = (ckpt.clone(), if ckpt.is_some() { 0 } else { seed });
        let mut cache = self.cache.lock().map_err(|_| CoreError::Segmenter("model cache poisoned".into()))?;
        if let Some(m) = cache.get(&key) {
            return Ok(m.clone());
        }
        let model = match &ckpt {
            Some(path) => checkpoint::load(path)?.0,
            None => ToyModel::new(ToyConfig::default(), seed)?,
        };
        let model = Arc::new(model);
        cache.insert(key, model.clone());
        Ok(model)
    }
}

impl SegmenterFactory for ToyFactory {
    fn begin<'a>(&self, spec: &SegmenterSpec, case: &'a Case) -> medseg_core::Result<Box<dyn Segmenter + 'a>> {
        match &spec.kind {
            SegmenterKind::Builtin(name) if name == "toy" => {
                let memory = spec.option("memory")?.unwrap_or(true);
                let model = self.model(spec)?;
                Ok(Box::new(ToySegmenter::new(model, ToyOptions { memory }, case)))
            }
            _ => StandardFactory.begin(spec, case),
        }
    }
}
