//! Analytic gradients against central finite differences.

use medseg_core::io::synth::{synthesize, SynthKind, SyntheticSpec};
use medseg_core::types::Case;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ToyError};
use crate::loss::LossConfig;
use crate::model::{ToyConfig, ToyModel};
use crate::train::{sample_clicks, samples, track_gradients, track_loss};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    /// Parameter coordinates compared.
    pub coords: usize,
    /// Central-difference step.
    pub step: f64,
    pub seed: u64,
    pub clicks: usize,
    pub loss: LossConfig,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { coords: 256, step: 1e-4, seed: 0, clicks: 3, loss: LossConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: CoordCheck,
    pub checked: Vec<CoordCheck>,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// The model and videos used by the `gradcheck` command.
pub fn fixture(seed: u64) -> Result<(ToyModel, Vec<Case>)> {
    let model = ToyModel::new(ToyConfig::tiny(), seed)?;
    let mut spec = SyntheticSpec::new(SynthKind::MovingSquare, 2, 3, 16, 16, seed);
    spec.noise = 0.05;
    Ok((model, synthesize(&spec)?))
}

/// Compares analytic and numeric derivatives of the summed track loss at
/// `cfg.coords` coordinates drawn uniformly over all parameters.
///
/// Mask selection and IoU targets are decided once at the unperturbed point
/// and replayed for every perturbation.
pub fn gradient_check(model: &ToyModel, cases: &[Case], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.coords == 0 {
        return Err(ToyError::Config("at least one coordinate is required".into()));
    }
    let samples = samples(model, cases)?;
    let mut prompts = Vec::new();
    let mut decisions = Vec::new();
    let mut analytic: Vec<f64> = vec![0.0; model.params.scalar_count()];
    let offsets: Vec<usize> = model
        .params
        .values
        .iter()
        .scan(0, |acc, t| {
            let o = *acc;
            *acc += t.len();
            Some(o)
        })
        .collect();
    for s in &samples {
        let p = sample_clicks(s, cfg.clicks, cfg.seed)?;
        let (_, grads, dec) = track_gradients(model, s, &p, &cfg.loss, None);
        for (id, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                for (k, v) in g.data.iter().enumerate() {
                    analytic[offsets[id] + k] += v;
                }
            }
        }
        prompts.push(p);
        decisions.push(dec);
    }
    let loss_at = |m: &ToyModel| -> f64 {
        samples
            .iter()
            .zip(&prompts)
            .zip(&decisions)
            .map(|((s, p), d)| track_loss(m, s, p, &cfg.loss, Some(d)))
            .sum()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6772_6164);
    let mut probe = model.clone();
    let mut checked = Vec::with_capacity(cfg.coords);
    for _ in 0..cfg.coords {
        let flat = rng.random_range(0..analytic.len());
        let id = offsets.partition_point(|&o| o <= flat) - 1;
        let k = flat - offsets[id];
        let orig = probe.params.values[id].data[k];
        probe.params.values[id].data[k] = orig + cfg.step;
        let plus = loss_at(&probe);
        probe.params.values[id].data[k] = orig - cfg.step;
        let minus = loss_at(&probe);
        probe.params.values[id].data[k] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic[flat];
        checked.push(CoordCheck {
            param: model.params.specs[id].name.clone(),
            index: k,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }
    let worst = checked
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .cloned()
        .expect("at least one coordinate");
    Ok(GradCheckReport { max_rel_error: worst.rel_error, worst, checked })
}
