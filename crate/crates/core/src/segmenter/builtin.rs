//! Reference segmenters that need no model: an upper bound, a lower bound and
//! a classical intensity flood fill.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::types::{Case, Mask2D, Polarity, PromptSet};

use super::Segmenter;

fn check_frame(case: &Case, index: usize) -> Result<()> {
    if index >= case.frames.len() {
        return Err(Error::FrameOutOfRange {
            index,
            count: case.frames.len(),
        });
    }
    Ok(())
}

fn check_prompts(case: &Case, prompts: &PromptSet) -> Result<()> {
    check_frame(case, prompts.frame_index)?;
    prompts.validate(case.height(), case.width())
}

/// Returns the ground truth. Used as the harness self-test.
pub struct OracleSegmenter<'a> {
    case: &'a Case,
    prompted: Vec<u32>,
}

impl<'a> OracleSegmenter<'a> {
    pub fn new(case: &'a Case) -> Self {
        Self { case, prompted: Vec::new() }
    }
}

impl Segmenter for OracleSegmenter<'_> {
    fn name(&self) -> &str {
        "oracle"
    }

    fn add_prompts(&mut self, class_id: u32, prompts: &PromptSet) -> Result<Mask2D> {
        check_prompts(self.case, prompts)?;
        if !self.prompted.contains(&class_id) {
            self.prompted.push(class_id);
        }
        self.case.gt_mask(prompts.frame_index, class_id)
    }

    fn segment_frame(&mut self, class_id: u32, frame_index: usize) -> Result<Mask2D> {
        check_frame(self.case, frame_index)?;
        if !self.prompted.contains(&class_id) {
            return Err(Error::UnpromptedObject(class_id));
        }
        self.case.gt_mask(frame_index, class_id)
    }

    fn reset_to_prompt_state(&mut self, _class_id: u32) -> Result<()> {
        Ok(())
    }

    fn end(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Prompted region as the prediction: boxes are filled, clicks are dilated by
/// one pixel (3x3), mask prompts are taken as given. Propagation repeats the
/// last prompted-frame prediction.
pub struct ConstantSegmenter<'a> {
    case: &'a Case,
    prompts: HashMap<(u32, usize), Vec<PromptSet>>,
    last_prompted: HashMap<u32, Mask2D>,
}

impl<'a> ConstantSegmenter<'a> {
    pub fn new(case: &'a Case) -> Self {
        Self {
            case,
            prompts: HashMap::new(),
            last_prompted: HashMap::new(),
        }
    }

    fn render(&self, sets: &[PromptSet]) -> Mask2D {
        let (h, w) = (self.case.height(), self.case.width());
        let mut mask = Mask2D::empty(h, w);
        for set in sets {
            if let Some(m) = &set.mask {
                for (r, c) in m.foreground() {
                    mask.set(r, c, true);
                }
            }
            if let Some(b) = set.box_prompt {
                for r in b.row_min..=b.row_max {
                    for c in b.col_min..=b.col_max {
                        mask.set(r, c, true);
                    }
                }
            }
            for p in set.points.iter().filter(|p| p.polarity == Polarity::Foreground) {
                for r in p.row.saturating_sub(1)..=(p.row + 1).min(h - 1) {
                    for c in p.col.saturating_sub(1)..=(p.col + 1).min(w - 1) {
                        mask.set(r, c, true);
                    }
                }
            }
        }
        mask
    }
}

impl Segmenter for ConstantSegmenter<'_> {
    fn name(&self) -> &str {
        "constant"
    }

    fn add_prompts(&mut self, class_id: u32, prompts: &PromptSet) -> Result<Mask2D> {
        check_prompts(self.case, prompts)?;
        let sets = self.prompts.entry((class_id, prompts.frame_index)).or_default();
        sets.push(prompts.clone());
        let sets = sets.clone();
        let mask = self.render(&sets);
        self.last_prompted.insert(class_id, mask.clone());
        Ok(mask)
    }

    fn segment_frame(&mut self, class_id: u32, frame_index: usize) -> Result<Mask2D> {
        check_frame(self.case, frame_index)?;
        self.last_prompted
            .get(&class_id)
            .cloned()
            .ok_or(Error::UnpromptedObject(class_id))
    }

    fn reset_to_prompt_state(&mut self, _class_id: u32) -> Result<()> {
        Ok(())
    }

    fn end(&mut self) -> Result<()> {
        Ok(())
    }
}

/// 4-connected flood fill over pixels whose intensity is within `tolerance`
/// of the seed pixel's intensity.
pub fn flood_fill(case: &Case, frame_index: usize, seed: (usize, usize), tolerance: f32) -> Mask2D {
    let frame = &case.frames[frame_index];
    let (h, w) = (frame.height(), frame.width());
    let target = frame.intensity(seed.0, seed.1);
    let mut out = Mask2D::empty(h, w);
    let mut stack = vec![seed];
    while let Some((r, c)) = stack.pop() {
        if out.get(r, c) || (frame.intensity(r, c) - target).abs() > tolerance {
            continue;
        }
        out.set(r, c, true);
        if r > 0 {
            stack.push((r - 1, c));
        }
        if r + 1 < h {
            stack.push((r + 1, c));
        }
        if c > 0 {
            stack.push((r, c - 1));
        }
        if c + 1 < w {
            stack.push((r, c + 1));
        }
    }
    out
}

/// Rounded centroid of the foreground, `None` for an empty mask.
pub fn centroid(mask: &Mask2D) -> Option<(usize, usize)> {
    let fg = mask.foreground();
    if fg.is_empty() {
        return None;
    }
    let n = fg.len() as f64;
    let r = fg.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let c = fg.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    Some((r.round() as usize, c.round() as usize))
}

pub const DEFAULT_REGION_TOLERANCE: f32 = 0.1;

/// Intensity flood fill seeded by foreground clicks (or the box centre);
/// background clicks carve their own fill out of the result. Propagation
/// grows from the centroid of the previous mask.
pub struct RegionGrowSegmenter<'a> {
    case: &'a Case,
    tolerance: f32,
    prompts: HashMap<(u32, usize), Vec<PromptSet>>,
    prompt_mask: HashMap<u32, Mask2D>,
    last_mask: HashMap<u32, Mask2D>,
}

impl<'a> RegionGrowSegmenter<'a> {
    pub fn new(case: &'a Case, tolerance: f32) -> Self {
        Self {
            case,
            tolerance,
            prompts: HashMap::new(),
            prompt_mask: HashMap::new(),
            last_mask: HashMap::new(),
        }
    }

    fn grow(&self, frame: usize, sets: &[PromptSet]) -> Mask2D {
        let (h, w) = (self.case.height(), self.case.width());
        let mut mask = Mask2D::empty(h, w);
        let mut carve = Mask2D::empty(h, w);
        let union = |target: &mut Mask2D, seed| {
            for (r, c) in flood_fill(self.case, frame, seed, self.tolerance).foreground() {
                target.set(r, c, true);
            }
        };
        for set in sets {
            if let Some(m) = &set.mask {
                for (r, c) in m.foreground() {
                    mask.set(r, c, true);
                }
            }
            if let Some(b) = set.box_prompt {
                union(&mut mask, b.center());
            }
            for p in &set.points {
                match p.polarity {
                    Polarity::Foreground => union(&mut mask, (p.row, p.col)),
                    Polarity::Background => union(&mut carve, (p.row, p.col)),
                }
            }
        }
        for (r, c) in carve.foreground() {
            mask.set(r, c, false);
        }
        mask
    }
}

impl Segmenter for RegionGrowSegmenter<'_> {
    fn name(&self) -> &str {
        "regiongrow"
    }

    fn add_prompts(&mut self, class_id: u32, prompts: &PromptSet) -> Result<Mask2D> {
        check_prompts(self.case, prompts)?;
        let frame = prompts.frame_index;
        let sets = self.prompts.entry((class_id, frame)).or_default();
        sets.push(prompts.clone());
        let sets = sets.clone();
        let mask = self.grow(frame, &sets);
        self.prompt_mask.insert(class_id, mask.clone());
        self.last_mask.insert(class_id, mask.clone());
        Ok(mask)
    }

    fn segment_frame(&mut self, class_id: u32, frame_index: usize) -> Result<Mask2D> {
        check_frame(self.case, frame_index)?;
        let previous = self.last_mask.get(&class_id).ok_or(Error::UnpromptedObject(class_id))?;
        let mask = match centroid(previous) {
            Some(seed) => flood_fill(self.case, frame_index, seed, self.tolerance),
            None => Mask2D::empty(self.case.height(), self.case.width()),
        };
        self.last_mask.insert(class_id, mask.clone());
        Ok(mask)
    }

    fn reset_to_prompt_state(&mut self, class_id: u32) -> Result<()> {
        if let Some(m) = self.prompt_mask.get(&class_id) {
            self.last_mask.insert(class_id, m.clone());
        }
        Ok(())
    }

    fn end(&mut self) -> Result<()> {
        Ok(())
    }
}
