//! The toy streaming segmenter: image encoder, memory attention, prompt
//! encoder, mask decoder and memory encoder.
//!
//! Every forward pass is built on a [`Tape`] so the same code serves
//! inference and training.

use std::rc::Rc;

use medseg_core::types::{Frame, Mask2D, Polarity, PromptSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid_f64, Tape, Var};
use crate::error::{Result, ToyError};
use crate::memory::MemoryBank;
use crate::params::{Component, Init, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    /// Embedding width `d`.
    pub dim: usize,
    pub patch: usize,
    /// 1 (intensity) or 3 (RGB).
    pub in_channels: usize,
    pub encoder_blocks: usize,
    pub memory_blocks: usize,
    pub decoder_blocks: usize,
    /// Candidate masks `M`.
    pub masks: usize,
    /// Non-prompted entries kept in the memory bank.
    pub bank_capacity: usize,
    /// Per-pixel feature width of the mask head.
    pub pixel_channels: usize,
    /// Hidden width of every MLP as a multiple of `dim`.
    pub mlp_ratio: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            patch: 8,
            in_channels: 1,
            encoder_blocks: 2,
            memory_blocks: 2,
            decoder_blocks: 2,
            masks: 3,
            bank_capacity: 6,
            pixel_channels: 8,
            mlp_ratio: 2,
        }
    }
}

impl ToyConfig {
    /// A config small enough for finite-difference checks.
    pub fn tiny() -> Self {
        Self { dim: 8, patch: 8, pixel_channels: 4, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 4 || !self.dim.is_multiple_of(4) {
            return Err(ToyError::Config("dim must be a positive multiple of 4".into()));
        }
        if self.patch == 0 || self.masks == 0 || self.pixel_channels == 0 || self.mlp_ratio == 0 {
            return Err(ToyError::Config("patch, masks, pixel_channels and mlp_ratio must be positive".into()));
        }
        if self.in_channels != 1 && self.in_channels != 3 {
            return Err(ToyError::Config("in_channels must be 1 or 3".into()));
        }
        Ok(())
    }

    fn hidden(&self) -> usize {
        self.dim * self.mlp_ratio
    }
}

#[derive(Clone, Debug)]
struct Norm {
    gain: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct Attn {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
}

#[derive(Clone, Debug)]
struct Mlp {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug)]
struct EncBlock {
    norm: Norm,
    mlp: Mlp,
}

#[derive(Clone, Debug)]
struct MemBlock {
    n_self: Norm,
    self_attn: Attn,
    n_cross: Norm,
    cross_attn: Attn,
    n_mlp: Norm,
    mlp: Mlp,
}

#[derive(Clone, Debug)]
struct DecBlock {
    n_self: Norm,
    self_attn: Attn,
    n_t2i: Norm,
    t2i: Attn,
    n_mlp: Norm,
    mlp: Mlp,
    n_i2t: Norm,
    i2t: Attn,
}

/// Parameter ids of every weight, in creation order.
#[derive(Clone, Debug)]
struct Layout {
    patch_w: usize,
    patch_b: usize,
    enc: Vec<EncBlock>,
    point_proj: usize,
    point_bias: usize,
    fg: usize,
    bg: usize,
    corners: usize,
    tags: usize,
    mem: Vec<MemBlock>,
    occ_token: usize,
    iou_token: usize,
    mask_tokens: usize,
    dec: Vec<DecBlock>,
    dec_norm: Norm,
    up_w: usize,
    up_b: usize,
    skip_w: usize,
    hyper: Mlp,
    iou_head: Mlp,
    occ_w: usize,
    occ_b: usize,
    mem_w: usize,
    mem_b: usize,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn add(&mut self, name: &str, c: Component, depth: u32, rows: usize, cols: usize, init: Init) -> usize {
        self.store.add(self.rng, name, c, depth, rows, cols, init)
    }

    fn norm(&mut self, name: &str, c: Component, depth: u32, d: usize) -> Norm {
        Norm {
            gain: self.add(&format!("{name}.gain"), c, depth, 1, d, Init::Ones),
            bias: self.add(&format!("{name}.bias"), c, depth, 1, d, Init::Zeros),
        }
    }

    fn attn(&mut self, name: &str, c: Component, d: usize) -> Attn {
        Attn {
            wq: self.add(&format!("{name}.wq"), c, 0, d, d, Init::FanIn),
            wk: self.add(&format!("{name}.wk"), c, 0, d, d, Init::FanIn),
            wv: self.add(&format!("{name}.wv"), c, 0, d, d, Init::FanIn),
            wo: self.add(&format!("{name}.wo"), c, 0, d, d, Init::FanIn),
        }
    }

    fn mlp(&mut self, name: &str, c: Component, depth: u32, d_in: usize, hidden: usize, d_out: usize) -> Mlp {
        Mlp {
            w1: self.add(&format!("{name}.w1"), c, depth, d_in, hidden, Init::FanIn),
            b1: self.add(&format!("{name}.b1"), c, depth, 1, hidden, Init::Zeros),
            w2: self.add(&format!("{name}.w2"), c, depth, hidden, d_out, Init::FanIn),
            b2: self.add(&format!("{name}.b2"), c, depth, 1, d_out, Init::Zeros),
        }
    }
}

fn build_layout(cfg: &ToyConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Layout {
    use Component::*;
    let d = cfg.dim;
    let h = cfg.hidden();
    let pp = cfg.patch * cfg.patch;
    let c = cfg.pixel_channels;
    let top = cfg.encoder_blocks as u32;
    let mut b = Builder { store, rng };
    let patch_w = b.add("image_encoder.patch.w", ImageEncoder, top, pp * cfg.in_channels, d, Init::FanIn);
    let patch_b = b.add("image_encoder.patch.b", ImageEncoder, top, 1, d, Init::Zeros);
    let enc = (0..cfg.encoder_blocks)
        .map(|i| {
            let depth = top - 1 - i as u32;
            EncBlock {
                norm: b.norm(&format!("image_encoder.block{i}.norm"), ImageEncoder, depth, d),
                mlp: b.mlp(&format!("image_encoder.block{i}.mlp"), ImageEncoder, depth, d, h, d),
            }
        })
        .collect();
    let point_proj = b.add("prompt_encoder.coord.w", PromptEncoder, 0, d, d, Init::FanIn);
    let point_bias = b.add("prompt_encoder.coord.b", PromptEncoder, 0, 1, d, Init::Zeros);
    let fg = b.add("prompt_encoder.foreground", PromptEncoder, 0, 1, d, Init::Uniform(0.5));
    let bg = b.add("prompt_encoder.background", PromptEncoder, 0, 1, d, Init::Uniform(0.5));
    let corners = b.add("prompt_encoder.box_corners", PromptEncoder, 0, 2, d, Init::Uniform(0.5));
    let tags = b.add("memory_attention.temporal_tags", MemoryAttention, 0, cfg.bank_capacity + 2, d, Init::Uniform(0.1));
    let mem = (0..cfg.memory_blocks)
        .map(|i| {
            let n = format!("memory_attention.block{i}");
            MemBlock {
                n_self: b.norm(&format!("{n}.norm_self"), MemoryAttention, 0, d),
                self_attn: b.attn(&format!("{n}.self"), MemoryAttention, d),
                n_cross: b.norm(&format!("{n}.norm_cross"), MemoryAttention, 0, d),
                cross_attn: b.attn(&format!("{n}.cross"), MemoryAttention, d),
                n_mlp: b.norm(&format!("{n}.norm_mlp"), MemoryAttention, 0, d),
                mlp: b.mlp(&format!("{n}.mlp"), MemoryAttention, 0, d, h, d),
            }
        })
        .collect();
    let occ_token = b.add("mask_decoder.occlusion_token", MaskDecoder, 0, 1, d, Init::Uniform(0.5));
    let iou_token = b.add("mask_decoder.iou_token", MaskDecoder, 0, 1, d, Init::Uniform(0.5));
    let mask_tokens = b.add("mask_decoder.mask_tokens", MaskDecoder, 0, cfg.masks, d, Init::Uniform(0.5));
    let dec = (0..cfg.decoder_blocks)
        .map(|i| {
            let n = format!("mask_decoder.block{i}");
            DecBlock {
                n_self: b.norm(&format!("{n}.norm_self"), MaskDecoder, 0, d),
                self_attn: b.attn(&format!("{n}.self"), MaskDecoder, d),
                n_t2i: b.norm(&format!("{n}.norm_t2i"), MaskDecoder, 0, d),
                t2i: b.attn(&format!("{n}.token_to_image"), MaskDecoder, d),
                n_mlp: b.norm(&format!("{n}.norm_mlp"), MaskDecoder, 0, d),
                mlp: b.mlp(&format!("{n}.mlp"), MaskDecoder, 0, d, h, d),
                n_i2t: b.norm(&format!("{n}.norm_i2t"), MaskDecoder, 0, d),
                i2t: b.attn(&format!("{n}.image_to_token"), MaskDecoder, d),
            }
        })
        .collect();
    let dec_norm = b.norm("mask_decoder.norm_out", MaskDecoder, 0, d);
    let up_w = b.add("mask_decoder.upscale.w", MaskDecoder, 0, d, pp * c, Init::FanIn);
    let up_b = b.add("mask_decoder.upscale.b", MaskDecoder, 0, 1, pp * c, Init::Zeros);
    let skip_w = b.add("mask_decoder.intensity_skip", MaskDecoder, 0, 1, c, Init::Uniform(1.0));
    let hyper = b.mlp("mask_decoder.hyper", MaskDecoder, 0, d, h, c);
    let iou_head = b.mlp("mask_decoder.iou_head", MaskDecoder, 0, d, h, cfg.masks);
    let occ_w = b.add("mask_decoder.occlusion_head.w", MaskDecoder, 0, d, 1, Init::FanIn);
    let occ_b = b.add("mask_decoder.occlusion_head.b", MaskDecoder, 0, 1, 1, Init::Zeros);
    let mem_w = b.add("memory_encoder.mask_proj.w", MemoryEncoder, 0, 1, d, Init::Uniform(1.0));
    let mem_b = b.add("memory_encoder.mask_proj.b", MemoryEncoder, 0, 1, d, Init::Zeros);
    Layout {
        patch_w,
        patch_b,
        enc,
        point_proj,
        point_bias,
        fg,
        bg,
        corners,
        tags,
        mem,
        occ_token,
        iou_token,
        mask_tokens,
        dec,
        dec_norm,
        up_w,
        up_b,
        skip_w,
        hyper,
        iou_head,
        occ_w,
        occ_b,
        mem_w,
        mem_b,
    }
}

/// Fixed 2-D sinusoidal encoding of a `rows x cols` token lattice.
pub fn positional_encoding(rows: usize, cols: usize, dim: usize) -> Tensor {
    let quarter = dim / 4;
    let mut t = Tensor::zeros(rows * cols, dim);
    for r in 0..rows {
        for c in 0..cols {
            let row = &mut t.data[(r * cols + c) * dim..(r * cols + c + 1) * dim];
            for k in 0..quarter {
                let freq = 1.0 / 10000f64.powf(k as f64 / quarter as f64);
                row[2 * k] = (r as f64 * freq).sin();
                row[2 * k + 1] = (r as f64 * freq).cos();
                row[dim / 2 + 2 * k] = (c as f64 * freq).sin();
                row[dim / 2 + 2 * k + 1] = (c as f64 * freq).cos();
            }
        }
    }
    t
}

/// Fixed Fourier features of a pixel position normalized by the frame size.
pub fn coordinate_features(row: usize, col: usize, height: usize, width: usize, dim: usize) -> Vec<f64> {
    let y = (row as f64 + 0.5) / height as f64;
    let x = (col as f64 + 0.5) / width as f64;
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 4 {
        let f = std::f64::consts::PI * (1u64 << k.min(20)) as f64;
        out.extend([(f * y).sin(), (f * y).cos(), (f * x).sin(), (f * x).cos()]);
    }
    out
}

/// A frame prepared for the encoder: padded patches plus the geometry the
/// decoder and memory encoder need.
pub(crate) struct FrameInput {
    pub height: usize,
    pub width: usize,
    pub token_rows: usize,
    pub token_cols: usize,
    patches: Tensor,
    intensity: Tensor,
}

impl FrameInput {
    pub fn new(frame: &Frame, cfg: &ToyConfig) -> Self {
        let (h, w, p) = (frame.height(), frame.width(), cfg.patch);
        let (tr, tc) = (h.div_ceil(p), w.div_ceil(p));
        let (hp, wp) = (tr * p, tc * p);
        let ch = cfg.in_channels;
        let src_ch = frame.channels();
        let value = |r: usize, c: usize, k: usize| -> f64 {
            if r >= h || c >= w {
                return 0.0;
            }
            if ch == 1 {
                frame.intensity(r, c) as f64
            } else if src_ch == 3 {
                frame.data()[(r * w + c) * 3 + k] as f64
            } else {
                frame.data()[r * w + c] as f64
            }
        };
        let mut patches = Tensor::zeros(tr * tc, p * p * ch);
        for ty in 0..tr {
            for tx in 0..tc {
                let row = &mut patches.data[(ty * tc + tx) * p * p * ch..(ty * tc + tx + 1) * p * p * ch];
                for py in 0..p {
                    for px in 0..p {
                        for k in 0..ch {
                            row[(py * p + px) * ch + k] = value(ty * p + py, tx * p + px, k);
                        }
                    }
                }
            }
        }
        let intensity = Tensor::column(
            (0..hp * wp)
                .map(|i| {
                    let (r, c) = (i / wp, i % wp);
                    if r < h && c < w { frame.intensity(r, c) as f64 } else { 0.0 }
                })
                .collect(),
        );
        Self { height: h, width: w, token_rows: tr, token_cols: tc, patches, intensity }
    }

    pub fn tokens(&self) -> usize {
        self.token_rows * self.token_cols
    }

    fn padded_width(&self, p: usize) -> usize {
        self.token_cols * p
    }

    /// Gather index turning `tokens x (p*p*c)` into `padded pixels x c`.
    fn shuffle_index(&self, p: usize, c: usize) -> Rc<[usize]> {
        let wp = self.padded_width(p);
        let hp = self.token_rows * p;
        let mut idx = Vec::with_capacity(hp * wp * c);
        for y in 0..hp {
            for x in 0..wp {
                let t = (y / p) * self.token_cols + x / p;
                let sub = (y % p) * p + x % p;
                for k in 0..c {
                    idx.push(t * p * p * c + sub * c + k);
                }
            }
        }
        idx.into()
    }

    /// Gather index cropping `padded pixels x m` to `frame pixels x m`.
    fn crop_index(&self, p: usize, m: usize) -> Rc<[usize]> {
        let wp = self.padded_width(p);
        let mut idx = Vec::with_capacity(self.height * self.width * m);
        for r in 0..self.height {
            for c in 0..self.width {
                for j in 0..m {
                    idx.push((r * wp + c) * m + j);
                }
            }
        }
        idx.into()
    }

    /// Average pooling of frame pixels onto the token lattice; padding counts as zero.
    fn pool_matrix(&self, p: usize) -> Tensor {
        let n = self.tokens();
        let hw = self.height * self.width;
        let mut t = Tensor::zeros(n, hw);
        let inv = 1.0 / (p * p) as f64;
        for r in 0..self.height {
            for c in 0..self.width {
                let tok = (r / p) * self.token_cols + c / p;
                t.data[tok * hw + r * self.width + c] = inv;
            }
        }
        t
    }
}

/// Encoded frame: `rows x cols` tokens of width `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub values: Tensor,
}

/// Decoder outputs for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderOutput {
    pub height: usize,
    pub width: usize,
    /// One row-major logit grid per candidate mask.
    pub mask_logits: Vec<Vec<f64>>,
    /// Predicted IoU of each candidate, squashed to `[0, 1]`.
    pub iou_scores: Vec<f64>,
    /// Object-presence logit; negative means occluded.
    pub occlusion_logit: f64,
}

/// Index of the highest predicted IoU; ties go to the lowest index.
pub fn select_index(iou_scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in iou_scores.iter().enumerate() {
        if s > iou_scores[best] {
            best = i;
        }
    }
    best
}

/// The argmax-IoU candidate thresholded at logit 0.
pub fn select_mask(out: &DecoderOutput) -> Mask2D {
    let j = select_index(&out.iou_scores);
    let logits = &out.mask_logits[j];
    Mask2D::from_fn(out.height, out.width, |r, c| logits[r * out.width + c] > 0.0)
}

/// One memory-bank entry as stored between frames.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry {
    /// Mask-fused token grid, `tokens x dim`.
    pub feature: Tensor,
    /// `1 x dim` summary of the object.
    pub object_token: Tensor,
    pub frame_index: usize,
    pub is_prompted: bool,
}

/// Graph-side view of a memory entry.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MemRef {
    pub feature: Var,
    pub object: Var,
}

pub(crate) struct DecodeVars {
    /// `pixels x M`.
    pub logits: Var,
    /// `1 x M`, after the sigmoid.
    pub iou: Var,
    /// `1 x 1`.
    pub occlusion: Var,
}

#[derive(Clone, Debug)]
pub struct ToyModel {
    pub config: ToyConfig,
    pub params: ParamStore,
    layout: Layout,
}

impl ToyModel {
    /// Fresh model with seed-controlled initialization.
    pub fn new(config: ToyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = build_layout(&config, &mut params, &mut rng);
        Ok(Self { config, params, layout })
    }

    /// Model with `params` in place of the initial values; specs must match.
    pub fn with_params(config: ToyConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if model.params.specs != params.specs {
            return Err(ToyError::Config("parameter layout does not match the config".into()));
        }
        for (a, b) in model.params.values.iter().zip(&params.values) {
            if a.len() != b.len() {
                return Err(ToyError::Config("parameter shape mismatch".into()));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub(crate) fn graph(&self) -> Graph<'_> {
        Graph { tape: Tape::new(), model: self, vars: vec![None; self.params.len()] }
    }

    pub fn encode_frame(&self, frame: &Frame) -> TokenGrid {
        let input = FrameInput::new(frame, &self.config);
        let mut g = self.graph();
        let t = g.encode(&input);
        self.grid(&input, g.tape.value(t).clone())
    }

    /// Patch embedding plus positional encoding, before the encoder blocks.
    pub fn patch_embed(&self, frame: &Frame) -> TokenGrid {
        let input = FrameInput::new(frame, &self.config);
        let mut g = self.graph();
        let x = g.embed(&input);
        let pe = g.tape.constant(positional_encoding(input.token_rows, input.token_cols, self.config.dim));
        let t = g.tape.add(x, pe);
        self.grid(&input, g.tape.value(t).clone())
    }

    fn grid(&self, input: &FrameInput, values: Tensor) -> TokenGrid {
        TokenGrid { rows: input.token_rows, cols: input.token_cols, dim: self.config.dim, values }
    }

    fn check_grid(&self, tokens: &TokenGrid) -> Result<()> {
        if tokens.dim != self.config.dim || tokens.values.cols != tokens.dim || tokens.values.rows != tokens.rows * tokens.cols {
            return Err(ToyError::Shape("token grid does not match the model width".into()));
        }
        Ok(())
    }

    /// Conditions `tokens` of frame `frame_index` on the bank.
    pub fn condition_on_memory(&self, tokens: &TokenGrid, bank: &MemoryBank, frame_index: usize) -> Result<TokenGrid> {
        self.check_grid(tokens)?;
        for e in bank.entries() {
            if e.feature.rows != tokens.values.rows || e.feature.cols != self.config.dim || e.object_token.len() != self.config.dim {
                return Err(ToyError::Shape("memory entry does not match the token grid".into()));
            }
        }
        let mut g = self.graph();
        let t = g.tape.constant(tokens.values.clone());
        let mem = g.bank_refs(bank);
        let out = g.condition(t, &mem, frame_index, tokens.rows, tokens.cols);
        Ok(TokenGrid { values: g.tape.value(out).clone(), ..tokens.clone() })
    }

    pub fn decode(&self, conditioned: &TokenGrid, frame: &Frame, prompts: &PromptSet) -> Result<DecoderOutput> {
        self.check_grid(conditioned)?;
        let input = FrameInput::new(frame, &self.config);
        if input.token_rows != conditioned.rows || input.token_cols != conditioned.cols {
            return Err(ToyError::Shape("token grid does not match the frame".into()));
        }
        let mut g = self.graph();
        let y = g.tape.constant(conditioned.values.clone());
        let d = g.decode(y, &input, prompts);
        Ok(g.output(&d, &input))
    }

    /// Fuses `mask` into the unconditioned `tokens`.
    pub fn encode_memory(&self, mask: &Mask2D, tokens: &TokenGrid, frame_index: usize, is_prompted: bool) -> Result<MemoryEntry> {
        self.check_grid(tokens)?;
        let p = self.config.patch;
        if mask.height().div_ceil(p) != tokens.rows || mask.width().div_ceil(p) != tokens.cols {
            return Err(ToyError::Shape("mask does not match the token grid".into()));
        }
        let probs: Vec<f64> = mask.bits().iter().map(|&b| b as u8 as f64).collect();
        let mut g = self.graph();
        let t = g.tape.constant(tokens.values.clone());
        let m = g.tape.constant(Tensor::column(probs));
        let r = g.encode_memory(m, t, mask.height(), mask.width());
        Ok(MemoryEntry {
            feature: g.tape.value(r.feature).clone(),
            object_token: g.tape.value(r.object).clone(),
            frame_index,
            is_prompted,
        })
    }
}

/// A forward pass under construction.
pub(crate) struct Graph<'m> {
    pub tape: Tape,
    model: &'m ToyModel,
    vars: Vec<Option<Var>>,
}

impl<'m> Graph<'m> {
    pub fn model(&self) -> &'m ToyModel {
        self.model
    }

    fn p(&mut self, id: usize) -> Var {
        if let Some(v) = self.vars[id] {
            return v;
        }
        let v = self.tape.param(id, self.model.params.values[id].clone());
        self.vars[id] = Some(v);
        v
    }

    fn norm(&mut self, n: &Norm, x: Var) -> Var {
        let y = self.tape.layer_norm(x);
        let g = self.p(n.gain);
        let b = self.p(n.bias);
        let y = self.tape.mul_row(y, g);
        self.tape.add_row(y, b)
    }

    fn linear(&mut self, x: Var, w: usize, b: usize) -> Var {
        let w = self.p(w);
        let b = self.p(b);
        let y = self.tape.matmul(x, w);
        self.tape.add_row(y, b)
    }

    fn mlp(&mut self, m: &Mlp, x: Var) -> Var {
        let h = self.linear(x, m.w1, m.b1);
        let h = self.tape.silu(h);
        self.linear(h, m.w2, m.b2)
    }

    /// Single-head scaled dot-product attention of `q_in` over `kv_in`.
    fn attention(&mut self, a: &Attn, q_in: Var, kv_in: Var) -> Var {
        let (wq, wk, wv, wo) = (self.p(a.wq), self.p(a.wk), self.p(a.wv), self.p(a.wo));
        let q = self.tape.matmul(q_in, wq);
        let k = self.tape.matmul(kv_in, wk);
        let v = self.tape.matmul(kv_in, wv);
        let s = self.tape.matmul_t(q, k);
        let s = self.tape.scale(s, 1.0 / (self.model.config.dim as f64).sqrt());
        let w = self.tape.softmax_rows(s);
        let o = self.tape.matmul(w, v);
        self.tape.matmul(o, wo)
    }

    fn embed(&mut self, input: &FrameInput) -> Var {
        let l = &self.model.layout;
        let (w, b) = (l.patch_w, l.patch_b);
        let x = self.tape.constant(input.patches.clone());
        self.linear(x, w, b)
    }

    /// Unconditioned tokens of a frame (`tokens x dim`).
    pub fn encode(&mut self, input: &FrameInput) -> Var {
        let mut x = self.embed(input);
        let blocks = self.model.layout.enc.clone();
        for blk in &blocks {
            let h = self.norm(&blk.norm, x);
            let h = self.mlp(&blk.mlp, h);
            x = self.tape.add(x, h);
        }
        let pe = positional_encoding(input.token_rows, input.token_cols, self.model.config.dim);
        let pe = self.tape.constant(pe);
        self.tape.add(x, pe)
    }

    pub fn bank_refs(&mut self, bank: &MemoryBank) -> Vec<(MemRef, usize, bool)> {
        bank.iter()
            .map(|(e, frame, prompted)| {
                let feature = self.tape.constant(e.feature.clone());
                let object = self.tape.constant(e.object_token.clone());
                (MemRef { feature, object }, frame, prompted)
            })
            .collect()
    }

    fn tag_row(&mut self, frame_index: usize, entry_frame: usize, prompted: bool) -> Var {
        let n = self.model.config.bank_capacity;
        let tag = if prompted { n + 1 } else { frame_index.abs_diff(entry_frame).min(n) };
        let tags = self.p(self.model.layout.tags);
        self.tape.slice_rows(tags, tag, 1)
    }

    /// Memory attention over `bank`; an empty bank skips cross-attention.
    pub fn condition(&mut self, tokens: Var, bank: &[(MemRef, usize, bool)], frame_index: usize, rows: usize, cols: usize) -> Var {
        let memory = if bank.is_empty() {
            None
        } else {
            let pe = self.tape.constant(positional_encoding(rows, cols, self.model.config.dim));
            let mut parts = Vec::with_capacity(bank.len() * 2);
            for &(m, f, prompted) in bank {
                let tag = self.tag_row(frame_index, f, prompted);
                let feat = self.tape.add(m.feature, pe);
                parts.push(self.tape.add_row(feat, tag));
                parts.push(self.tape.add_row(m.object, tag));
            }
            Some(self.tape.concat_rows(&parts))
        };
        let blocks = self.model.layout.mem.clone();
        let mut x = tokens;
        for blk in &blocks {
            let h = self.norm(&blk.n_self, x);
            let a = self.attention(&blk.self_attn, h, h);
            x = self.tape.add(x, a);
            if let Some(mem) = memory {
                let h = self.norm(&blk.n_cross, x);
                let a = self.attention(&blk.cross_attn, h, mem);
                x = self.tape.add(x, a);
            }
            let h = self.norm(&blk.n_mlp, x);
            let f = self.mlp(&blk.mlp, h);
            x = self.tape.add(x, f);
        }
        x
    }

    /// Sparse prompt tokens; `None` when there are none.
    fn prompt_tokens(&mut self, prompts: &PromptSet, h: usize, w: usize) -> Option<Var> {
        let d = self.model.config.dim;
        let l = self.model.layout.clone();
        let mut coords = Vec::new();
        let mut kinds = Vec::new();
        for p in &prompts.points {
            coords.push((p.row, p.col));
            kinds.push(match p.polarity {
                Polarity::Foreground => 0,
                Polarity::Background => 1,
            });
        }
        if let Some(b) = prompts.box_prompt {
            coords.push((b.row_min, b.col_min));
            kinds.push(2);
            coords.push((b.row_max, b.col_max));
            kinds.push(3);
        }
        if coords.is_empty() {
            return None;
        }
        let feats: Vec<f64> = coords.iter().flat_map(|&(r, c)| coordinate_features(r, c, h, w, d)).collect();
        let f = self.tape.constant(Tensor::from_vec(coords.len(), d, feats));
        let x = self.linear(f, l.point_proj, l.point_bias);
        let fg = self.p(l.fg);
        let bg = self.p(l.bg);
        let corners = self.p(l.corners);
        let c0 = self.tape.slice_rows(corners, 0, 1);
        let c1 = self.tape.slice_rows(corners, 1, 1);
        let type_rows: Vec<Var> = kinds.iter().map(|&k| [fg, bg, c0, c1][k]).collect();
        let types = self.tape.concat_rows(&type_rows);
        Some(self.tape.add(x, types))
    }

    pub fn decode(&mut self, cond: Var, input: &FrameInput, prompts: &PromptSet) -> DecodeVars {
        let cfg = self.model.config.clone();
        let l = self.model.layout.clone();
        let m = cfg.masks;
        let pe = self.tape.constant(positional_encoding(input.token_rows, input.token_cols, cfg.dim));
        let mut parts = vec![self.p(l.occ_token), self.p(l.iou_token), self.p(l.mask_tokens)];
        if let Some(pt) = self.prompt_tokens(prompts, input.height, input.width) {
            parts.push(pt);
        }
        let mut t = self.tape.concat_rows(&parts);
        let mut y = cond;
        for blk in &l.dec {
            let h = self.norm(&blk.n_self, t);
            let a = self.attention(&blk.self_attn, h, h);
            t = self.tape.add(t, a);
            let h = self.norm(&blk.n_t2i, t);
            let kv = self.tape.add(y, pe);
            let a = self.attention(&blk.t2i, h, kv);
            t = self.tape.add(t, a);
            let h = self.norm(&blk.n_mlp, t);
            let f = self.mlp(&blk.mlp, h);
            t = self.tape.add(t, f);
            let h = self.norm(&blk.n_i2t, y);
            let q = self.tape.add(h, pe);
            let a = self.attention(&blk.i2t, q, t);
            y = self.tape.add(y, a);
        }
        let t = self.norm(&l.dec_norm, t);

        let (p, c) = (cfg.patch, cfg.pixel_channels);
        let up = self.linear(y, l.up_w, l.up_b);
        let pixels = input.token_rows * p * input.token_cols * p;
        let up = self.tape.gather(up, input.shuffle_index(p, c), pixels, c);
        let inten = self.tape.constant(input.intensity.clone());
        let skip_w = self.p(l.skip_w);
        let skip = self.tape.matmul(inten, skip_w);
        let up = self.tape.add(up, skip);
        let up = self.tape.silu(up);

        let mask_tok = self.tape.slice_rows(t, 2, m);
        let hyper = self.mlp(&l.hyper, mask_tok);
        let logits = self.tape.matmul_t(up, hyper);
        let logits = self.tape.gather(logits, input.crop_index(p, m), input.height * input.width, m);

        let iou_tok = self.tape.slice_rows(t, 1, 1);
        let iou = self.mlp(&l.iou_head, iou_tok);
        let iou = self.tape.sigmoid(iou);
        let occ_tok = self.tape.slice_rows(t, 0, 1);
        let occlusion = self.linear(occ_tok, l.occ_w, l.occ_b);
        DecodeVars { logits, iou, occlusion }
    }

    /// Column `j` of the `pixels x M` logits.
    pub fn mask_column(&mut self, logits: Var, j: usize) -> Var {
        let (rows, cols) = (self.tape.value(logits).rows, self.tape.value(logits).cols);
        let idx: Rc<[usize]> = (0..rows).map(|r| r * cols + j).collect();
        self.tape.gather(logits, idx, rows, 1)
    }

    /// Memory entry from per-pixel mask weights `mask` (`pixels x 1`).
    pub fn encode_memory(&mut self, mask: Var, tokens: Var, height: usize, width: usize) -> MemRef {
        let cfg = &self.model.config;
        let p = cfg.patch;
        let geometry = FrameInput {
            height,
            width,
            token_rows: height.div_ceil(p),
            token_cols: width.div_ceil(p),
            patches: Tensor::zeros(0, 0),
            intensity: Tensor::zeros(0, 0),
        };
        let l = self.model.layout.clone();
        let pool = self.tape.constant(geometry.pool_matrix(p));
        let pooled = self.tape.matmul(pool, mask);
        let w = self.p(l.mem_w);
        let b = self.p(l.mem_b);
        let proj = self.tape.matmul(pooled, w);
        let proj = self.tape.add_row(proj, b);
        let feature = self.tape.add(tokens, proj);
        let weights = self.tape.transpose(pooled);
        let weighted = self.tape.matmul(weights, tokens);
        let total = self.tape.sum(pooled);
        let object = self.tape.div_scalar(weighted, total, 1e-6);
        MemRef { feature, object }
    }

    pub fn output(&self, d: &DecodeVars, input: &FrameInput) -> DecoderOutput {
        let logits = self.tape.value(d.logits);
        let m = logits.cols;
        let mask_logits = (0..m).map(|j| (0..logits.rows).map(|r| logits.get(r, j)).collect()).collect();
        DecoderOutput {
            height: input.height,
            width: input.width,
            mask_logits,
            iou_scores: self.tape.value(d.iou).data.clone(),
            occlusion_logit: self.tape.value(d.occlusion).item(),
        }
    }
}

/// Hard IoU of each candidate (thresholded at logit 0) against `gt`.
pub fn candidate_ious(out: &DecoderOutput, gt: &Mask2D) -> Vec<f64> {
    out.mask_logits
        .iter()
        .map(|logits| {
            let (mut inter, mut union) = (0usize, 0usize);
            for (&z, &g) in logits.iter().zip(gt.bits()) {
                let p = z > 0.0;
                inter += (p && g) as usize;
                union += (p || g) as usize;
            }
            if union == 0 { 1.0 } else { inter as f64 / union as f64 }
        })
        .collect()
}

/// Sigmoid of every logit of candidate `j`.
pub fn candidate_probs(out: &DecoderOutput, j: usize) -> Vec<f64> {
    out.mask_logits[j].iter().map(|&z| sigmoid_f64(z)).collect()
}
