//! Deterministic synthetic datasets with analytically constructed ground truth.
//!
//! Frames carry additive Gaussian noise; label maps are always clean.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::write_dataset;
use crate::error::{Error, Result};
use crate::prompts::stream_rng;
use crate::types::{Case, CaseKind, Frame, LabelMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Video of one labelled square translating a few pixels per frame.
    MovingSquare,
    /// Volume of three ellipsoidal "organs" centred on the middle slice.
    EllipseOrganStack,
    /// Image of two round cells labelled as interior (1) and boundary (2).
    TwoCell,
}

impl SynthKind {
    pub fn case_kind(self) -> CaseKind {
        match self {
            SynthKind::MovingSquare => CaseKind::Video,
            SynthKind::EllipseOrganStack => CaseKind::Volume3d,
            SynthKind::TwoCell => CaseKind::Image2d,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::MovingSquare => "moving-square",
            SynthKind::EllipseOrganStack => "ellipse-organ-stack",
            SynthKind::TwoCell => "two-cell",
        }
    }
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moving-square" => Ok(SynthKind::MovingSquare),
            "ellipse-organ-stack" => Ok(SynthKind::EllipseOrganStack),
            "two-cell" => Ok(SynthKind::TwoCell),
            other => Err(Error::InvalidArgument(format!("unknown synthetic kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SynthKind,
    pub count: usize,
    /// Frames (video) or slices (volume); ignored for images.
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    /// Standard deviation of the additive intensity noise.
    pub noise: f64,
    pub seed: u64,
    /// Moving squares jump to a distant position once, on frame `1 + case_index % 3`.
    #[serde(default)]
    pub abrupt_motion: bool,
    /// Moving squares get an unlabelled look-alike moving in the other half of the frame.
    #[serde(default)]
    pub distractor: bool,
}

impl SyntheticSpec {
    pub fn new(kind: SynthKind, count: usize, depth: usize, height: usize, width: usize, seed: u64) -> Self {
        Self {
            kind,
            count,
            depth,
            height,
            width,
            noise: 0.05,
            seed,
            abrupt_motion: false,
            distractor: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("count must be at least 1".into()));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::InvalidArgument("synthetic frames must be at least 16x16".into()));
        }
        if self.kind != SynthKind::TwoCell && self.depth == 0 {
            return Err(Error::InvalidArgument("depth must be at least 1".into()));
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return Err(Error::InvalidArgument("noise must lie in [0, 0.5]".into()));
        }
        Ok(())
    }
}

const BACKGROUND: f64 = 0.2;

fn noisy_frame(rng: &mut ChaCha8Rng, h: usize, w: usize, clean: &[f64], noise: f64) -> Frame {
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let data = clean
        .iter()
        .map(|&v| {
            let n = if noise > 0.0 { normal.sample(rng) } else { 0.0 };
            (v + n).clamp(0.0, 1.0) as f32
        })
        .collect();
    Frame::new(h, w, 1, data).expect("intensities clamped to [0, 1]")
}

#[derive(Clone, Copy)]
struct Mover {
    /// Allowed top-left columns are `col_lo..=col_hi`.
    col_lo: i64,
    col_hi: i64,
    row_hi: i64,
    r: i64,
    c: i64,
    vr: i64,
    vc: i64,
}

impl Mover {
    fn random(rng: &mut ChaCha8Rng, row_hi: i64, col_lo: i64, col_hi: i64) -> Self {
        let mut v = || loop {
            let v = rng.random_range(-2i64..=2);
            if v != 0 {
                return v;
            }
        };
        let (vr, vc) = (v(), v());
        Self {
            col_lo,
            col_hi,
            row_hi,
            r: rng.random_range(0..=row_hi),
            c: rng.random_range(col_lo..=col_hi),
            vr,
            vc,
        }
    }

    fn step(&mut self) {
        let (nr, nc) = (self.r + self.vr, self.c + self.vc);
        if nr < 0 || nr > self.row_hi {
            self.vr = -self.vr;
        }
        if nc < self.col_lo || nc > self.col_hi {
            self.vc = -self.vc;
        }
        self.r = (self.r + self.vr).clamp(0, self.row_hi);
        self.c = (self.c + self.vc).clamp(self.col_lo, self.col_hi);
    }

    /// Teleports to a position that does not overlap the current square.
    fn jump(&mut self, rng: &mut ChaCha8Rng, side: i64) {
        for _ in 0..256 {
            let r = rng.random_range(0..=self.row_hi);
            let c = rng.random_range(self.col_lo..=self.col_hi);
            if (r - self.r).abs() >= side || (c - self.c).abs() >= side {
                self.r = r;
                self.c = c;
                return;
            }
        }
        self.r = self.row_hi - self.r;
        self.c = self.col_hi + self.col_lo - self.c;
    }

    fn covers(&self, side: i64, row: i64, col: i64) -> bool {
        (self.r..self.r + side).contains(&row) && (self.c..self.c + side).contains(&col)
    }
}

fn moving_square(spec: &SyntheticSpec, index: usize, rng: &mut ChaCha8Rng) -> Result<Case> {
    let (t, h, w) = (spec.depth, spec.height, spec.width);
    let side = (h.min(w) / 5).max(3) as i64;
    let (hi, wi) = (h as i64, w as i64);
    let (target_cols, distractor_cols) = if spec.distractor {
        let half = wi / 2;
        let left = (0, half - side);
        let right = (half, wi - side);
        if rng.random_bool(0.5) {
            (left, Some(right))
        } else {
            (right, Some(left))
        }
    } else {
        ((0, wi - side), None)
    };
    let mut target = Mover::random(rng, hi - side, target_cols.0, target_cols.1);
    let mut distractor = distractor_cols.map(|(lo, hi_c)| Mover::random(rng, hi - side, lo, hi_c));
    let jump_frame = 1 + index % 3;
    let square = 0.8;
    let mut frames = Vec::with_capacity(t);
    let mut gt = Vec::with_capacity(t);
    for f in 0..t {
        if f > 0 {
            target.step();
            if spec.abrupt_motion && f == jump_frame {
                target.jump(rng, side);
            }
            if let Some(d) = distractor.as_mut() {
                d.step();
            }
        }
        let mut clean = vec![BACKGROUND; h * w];
        let mut labels = vec![0u32; h * w];
        for r in 0..hi {
            for c in 0..wi {
                let i = (r * wi + c) as usize;
                if target.covers(side, r, c) {
                    clean[i] = square;
                    labels[i] = 1;
                } else if distractor.is_some_and(|d| d.covers(side, r, c)) {
                    clean[i] = square;
                }
            }
        }
        frames.push(noisy_frame(rng, h, w, &clean, spec.noise));
        gt.push(LabelMap::new(h, w, labels, 1)?);
    }
    let mut case = Case::new(format!("case_{index:03}"), CaseKind::Video, frames, gt, vec![1])?;
    case.class_names = BTreeMap::from([("square".to_string(), 1)]);
    Ok(case)
}

fn ellipse_organ_stack(spec: &SyntheticSpec, index: usize, rng: &mut ChaCha8Rng) -> Result<Case> {
    let (d, h, w) = (spec.depth, spec.height, spec.width);
    let mid = (d / 2) as f64;
    let intensities = [0.45, 0.65, 0.9];
    // Organs sit in three vertical bands so they never overlap.
    let organs: Vec<(f64, f64, f64, f64, f64)> = (0..3)
        .map(|i| {
            let band = w as f64 / 3.0;
            let cx = band * (i as f64 + 0.5) + rng.random_range(-0.1..0.1) * band;
            let cy = h as f64 * rng.random_range(0.35..0.65);
            let rx = band * rng.random_range(0.25..0.42);
            let ry = h as f64 * rng.random_range(0.15..0.3);
            let rz = (d as f64 * rng.random_range(0.3..0.6)).max(0.75);
            (cx, cy, rx, ry, rz)
        })
        .collect();
    let mut frames = Vec::with_capacity(d);
    let mut gt = Vec::with_capacity(d);
    for z in 0..d {
        let mut clean = vec![0.15; h * w];
        let mut labels = vec![0u32; h * w];
        for (k, &(cx, cy, rx, ry, rz)) in organs.iter().enumerate() {
            let dz = (z as f64 - mid) / rz;
            for r in 0..h {
                for c in 0..w {
                    let dy = (r as f64 - cy) / ry;
                    let dx = (c as f64 - cx) / rx;
                    if dx * dx + dy * dy + dz * dz <= 1.0 {
                        clean[r * w + c] = intensities[k];
                        labels[r * w + c] = k as u32 + 1;
                    }
                }
            }
        }
        frames.push(noisy_frame(rng, h, w, &clean, spec.noise));
        gt.push(LabelMap::new(h, w, labels, 3)?);
    }
    let mut case = Case::new(format!("case_{index:03}"), CaseKind::Volume3d, frames, gt, vec![1, 2, 3])?;
    case.class_names = BTreeMap::from([
        ("organ_a".to_string(), 1),
        ("organ_b".to_string(), 2),
        ("organ_c".to_string(), 3),
    ]);
    Ok(case)
}

pub const CELL_INTERIOR: u32 = 1;
pub const CELL_BOUNDARY: u32 = 2;

fn two_cell(spec: &SyntheticSpec, index: usize, rng: &mut ChaCha8Rng) -> Result<Case> {
    let (h, w) = (spec.height, spec.width);
    let half = w as f64 / 2.0;
    let thickness = 2.0;
    let cells: Vec<(f64, f64, f64)> = (0..2)
        .map(|i| {
            let max_r = (half / 2.0).min(h as f64 / 2.0) - 1.0;
            let radius = rng.random_range((max_r * 0.55).max(thickness + 2.0)..max_r.max(thickness + 2.5));
            let cx = half * i as f64 + half / 2.0 + rng.random_range(-1.0..1.0);
            let cy = h as f64 / 2.0 + rng.random_range(-0.15..0.15) * h as f64;
            (cx, cy, radius)
        })
        .collect();
    let mut clean = vec![0.1; h * w];
    let mut labels = vec![0u32; h * w];
    for &(cx, cy, radius) in &cells {
        for r in 0..h {
            for c in 0..w {
                let dist = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
                if dist <= radius {
                    let (v, l) = if dist > radius - thickness {
                        (0.9, CELL_BOUNDARY)
                    } else {
                        (0.55, CELL_INTERIOR)
                    };
                    clean[r * w + c] = v;
                    labels[r * w + c] = l;
                }
            }
        }
    }
    let frame = noisy_frame(rng, h, w, &clean, spec.noise);
    let labels = LabelMap::new(h, w, labels, 2)?;
    let mut case = Case::new(format!("case_{index:03}"), CaseKind::Image2d, vec![frame], vec![labels], vec![1, 2])?;
    case.class_names = BTreeMap::from([
        ("interior".to_string(), CELL_INTERIOR),
        ("boundary".to_string(), CELL_BOUNDARY),
    ]);
    Ok(case)
}

/// Generates the cases of `spec` in memory.
pub fn synthesize(spec: &SyntheticSpec) -> Result<Vec<Case>> {
    spec.validate()?;
    (0..spec.count)
        .map(|i| {
            let mut rng = stream_rng(spec.seed, &format!("synthetic/{}/{i}", spec.kind.name()), 0);
            match spec.kind {
                SynthKind::MovingSquare => moving_square(spec, i, &mut rng),
                SynthKind::EllipseOrganStack => ellipse_organ_stack(spec, i, &mut rng),
                SynthKind::TwoCell => two_cell(spec, i, &mut rng),
            }
        })
        .collect()
}

/// Writes a synthetic dataset to `out` (manifest plus PGM files).
pub fn generate_synthetic(spec: &SyntheticSpec, out: &Path) -> Result<()> {
    let cases = synthesize(spec)?;
    let meta = serde_json::to_value(spec)?;
    write_dataset(out, spec.kind.name(), spec.kind.case_kind(), &cases, Some(meta))
}
