//! Grid, mask, prompt and case types shared by the whole harness.
//!
//! Coordinates are `(row, col)` with the origin at the top-left pixel. Box
//! bounds are inclusive on both ends.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary foreground grid. `true` marks a foreground pixel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask2D {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask2D {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if bits.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} bits for a {height}x{width} mask",
                bits.len()
            )));
        }
        Ok(Self { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "mask dimensions must be positive");
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    /// Builds a mask from a predicate evaluated at every `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = Self::empty(height, width);
        for r in 0..height {
            for c in 0..width {
                mask.bits[r * width + c] = f(r, c);
            }
        }
        mask
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Foreground coordinates in row-major order.
    pub fn foreground(&self) -> Vec<(usize, usize)> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }

    pub fn same_shape(&self, other: &Mask2D) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Stack of equally sized binary slices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask3D {
    depth: usize,
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask3D {
    pub fn from_slices(slices: &[Mask2D]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidArgument("volume needs at least one slice".into()))?;
        let (height, width) = (first.height, first.width);
        let mut bits = Vec::with_capacity(slices.len() * height * width);
        for (z, s) in slices.iter().enumerate() {
            if !s.same_shape(first) {
                return Err(Error::ShapeMismatch(format!(
                    "slice {z} is {}x{}, expected {height}x{width}",
                    s.height, s.width
                )));
            }
            bits.extend_from_slice(&s.bits);
        }
        Ok(Self {
            depth: slices.len(),
            height,
            width,
            bits,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn slice(&self, z: usize) -> Mask2D {
        let n = self.height * self.width;
        Mask2D {
            height: self.height,
            width: self.width,
            bits: self.bits[z * n..(z + 1) * n].to_vec(),
        }
    }

    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Integer class map. Label 0 is background, `1..=num_classes` are classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: u32,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>, num_classes: u32) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "label map dimensions must be positive, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > num_classes) {
            return Err(Error::UnknownClass {
                class_id: bad,
                num_classes,
            });
        }
        Ok(Self {
            height,
            width,
            num_classes,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn contains(&self, class_id: u32) -> bool {
        class_id != 0 && self.labels.contains(&class_id)
    }

    /// Paints `mask` into a label map of the same shape with `class_id` on foreground.
    pub fn from_mask(mask: &Mask2D, class_id: u32) -> Self {
        Self {
            height: mask.height,
            width: mask.width,
            num_classes: class_id,
            labels: mask.bits.iter().map(|&b| if b { class_id } else { 0 }).collect(),
        }
    }
}

/// Binary mask of the pixels labelled `class_id`.
pub fn binary_mask_of(label_map: &LabelMap, class_id: u32) -> Result<Mask2D> {
    if class_id == 0 || class_id > label_map.num_classes {
        return Err(Error::UnknownClass {
            class_id,
            num_classes: label_map.num_classes,
        });
    }
    Ok(Mask2D {
        height: label_map.height,
        width: label_map.width,
        bits: label_map.labels.iter().map(|&l| l == class_id).collect(),
    })
}

/// Smallest inclusive box containing every foreground pixel.
pub fn tight_box(mask: &Mask2D) -> Result<BoxPrompt> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for (r, c) in mask.foreground() {
        bounds = Some(match bounds {
            None => (r, c, r, c),
            Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
        });
    }
    let (row_min, col_min, row_max, col_max) = bounds.ok_or(Error::EmptyMask)?;
    Ok(BoxPrompt {
        row_min,
        col_min,
        row_max,
        col_max,
    })
}

/// Index of the middle slice, `floor(depth / 2)`.
pub fn middle_index(depth: usize) -> Result<usize> {
    if depth < 1 {
        return Err(Error::InvalidArgument("depth must be at least 1".into()));
    }
    Ok(depth / 2)
}

/// Image with 1 (gray) or 3 (RGB, interleaved) channels and intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "frames have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a {height}x{width}x{channels} frame",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "frame intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// 8-bit samples scaled by 1/255.
    pub fn from_u8(height: usize, width: usize, channels: usize, samples: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            samples.iter().map(|&v| v as f32 / 255.0).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Channel-averaged intensity at a pixel.
    pub fn intensity(&self, row: usize, col: usize) -> f32 {
        let base = (row * self.width + col) * self.channels;
        let px = &self.data[base..base + self.channels];
        px.iter().sum::<f32>() / self.channels as f32
    }

    /// Samples quantized to 8 bits, `round(v * 255)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Foreground,
    Background,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointPrompt {
    pub row: usize,
    pub col: usize,
    pub polarity: Polarity,
}

impl PointPrompt {
    pub fn foreground(row: usize, col: usize) -> Self {
        Self {
            row,
            col,
            polarity: Polarity::Foreground,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxPrompt {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

impl BoxPrompt {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_min..=self.row_max).contains(&row) && (self.col_min..=self.col_max).contains(&col)
    }

    pub fn center(&self) -> (usize, usize) {
        (
            (self.row_min + self.row_max) / 2,
            (self.col_min + self.col_max) / 2,
        )
    }
}

/// Prompts attached to one frame. A dense mask prompt is carried for the
/// GT-mask interaction mode and is not serialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub frame_index: usize,
    pub points: Vec<PointPrompt>,
    #[serde(rename = "box")]
    pub box_prompt: Option<BoxPrompt>,
    #[serde(skip)]
    pub mask: Option<Mask2D>,
}

impl PromptSet {
    pub fn points(frame_index: usize, points: Vec<PointPrompt>) -> Self {
        Self {
            frame_index,
            points,
            box_prompt: None,
            mask: None,
        }
    }

    pub fn boxed(frame_index: usize, box_prompt: BoxPrompt) -> Self {
        Self {
            frame_index,
            points: Vec::new(),
            box_prompt: Some(box_prompt),
            mask: None,
        }
    }

    pub fn mask(frame_index: usize, mask: Mask2D) -> Self {
        Self {
            frame_index,
            points: Vec::new(),
            box_prompt: None,
            mask: Some(mask),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.box_prompt.is_none() && self.mask.is_none()
    }

    /// Checks the set is nonempty and every coordinate lies in a `height`x`width` frame.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("prompt set has no prompts".into()));
        }
        for p in &self.points {
            if p.row >= height || p.col >= width {
                return Err(Error::InvalidArgument(format!(
                    "point ({}, {}) outside {height}x{width} frame",
                    p.row, p.col
                )));
            }
        }
        if let Some(b) = self.box_prompt {
            if b.row_min > b.row_max || b.col_min > b.col_max || b.row_max >= height || b.col_max >= width {
                return Err(Error::InvalidArgument(format!("invalid box {b:?}")));
            }
        }
        if let Some(m) = &self.mask {
            if m.height() != height || m.width() != width {
                return Err(Error::ShapeMismatch("mask prompt does not match frame".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    Image2d,
    Volume3d,
    Video,
}

impl CaseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseKind::Image2d => "image2d",
            CaseKind::Volume3d => "volume3d",
            CaseKind::Video => "video",
        }
    }
}

/// One evaluation unit: an image, a volume (slices as frames) or a video.
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub case_id: String,
    pub kind: CaseKind,
    pub frames: Vec<Frame>,
    pub gt: Vec<LabelMap>,
    pub class_ids: Vec<u32>,
    pub class_names: BTreeMap<String, u32>,
}

impl Case {
    pub fn new(
        case_id: impl Into<String>,
        kind: CaseKind,
        frames: Vec<Frame>,
        gt: Vec<LabelMap>,
        class_ids: Vec<u32>,
    ) -> Result<Self> {
        let case = Self {
            case_id: case_id.into(),
            kind,
            frames,
            gt,
            class_ids,
            class_names: BTreeMap::new(),
        };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Schema(format!("case {} has no frames", self.case_id)));
        }
        if self.frames.len() != self.gt.len() {
            return Err(Error::Schema(format!(
                "case {}: {} frames but {} ground-truth maps",
                self.case_id,
                self.frames.len(),
                self.gt.len()
            )));
        }
        if self.kind == CaseKind::Image2d && self.frames.len() != 1 {
            return Err(Error::Schema(format!(
                "case {}: image2d cases have exactly one frame",
                self.case_id
            )));
        }
        let (h, w) = (self.frames[0].height(), self.frames[0].width());
        for (i, (f, g)) in self.frames.iter().zip(&self.gt).enumerate() {
            if f.height() != h || f.width() != w || g.height() != h || g.width() != w {
                return Err(Error::ShapeMismatch(format!(
                    "case {}: frame {i} dimensions differ from {h}x{w}",
                    self.case_id
                )));
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> CaseMeta {
        CaseMeta {
            case_id: self.case_id.clone(),
            height: self.frames[0].height(),
            width: self.frames[0].width(),
            frames: self.frames.len(),
            classes: self.class_ids.clone(),
        }
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    /// Ground-truth binary mask for `class_id` on `frame`.
    pub fn gt_mask(&self, frame: usize, class_id: u32) -> Result<Mask2D> {
        binary_mask_of(&self.gt[frame], class_id)
    }
}

/// What a segmenter session learns about its case at `begin`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaseMeta {
    pub case_id: String,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub classes: Vec<u32>,
}
