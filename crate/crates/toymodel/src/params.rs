//! Named, component-tagged parameter tensors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    ImageEncoder,
    PromptEncoder,
    MemoryAttention,
    MaskDecoder,
    MemoryEncoder,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::ImageEncoder,
        Component::PromptEncoder,
        Component::MemoryAttention,
        Component::MaskDecoder,
        Component::MemoryEncoder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::ImageEncoder => "image_encoder",
            Component::PromptEncoder => "prompt_encoder",
            Component::MemoryAttention => "memory_attention",
            Component::MaskDecoder => "mask_decoder",
            Component::MemoryEncoder => "memory_encoder",
        }
    }
}

impl std::str::FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Component::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown component {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub component: Component,
    /// Distance from the top of the image encoder; 0 elsewhere.
    pub depth: u32,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `+-1/sqrt(fan_in)` with the row count as fan-in.
    FanIn,
    Uniform(f64),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub specs: Vec<ParamSpec>,
    pub values: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(
        &mut self,
        rng: &mut ChaCha8Rng,
        name: impl Into<String>,
        component: Component,
        depth: u32,
        rows: usize,
        cols: usize,
        init: Init,
    ) -> usize {
        let n = rows * cols;
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::FanIn => {
                let b = 1.0 / (rows as f64).sqrt();
                (0..n).map(|_| rng.random_range(-b..b)).collect()
            }
            Init::Uniform(b) => (0..n).map(|_| rng.random_range(-b..b)).collect(),
        };
        self.specs.push(ParamSpec { name: name.into(), component, depth, rows, cols });
        self.values.push(Tensor::from_vec(rows, cols, data));
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    pub fn ids_of(&self, component: Component) -> impl Iterator<Item = usize> + '_ {
        self.specs
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.component == component)
            .map(|(i, _)| i)
    }

    /// FNV-1a over the bit patterns of every value of `component`.
    pub fn checksum(&self, component: Component) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for id in self.ids_of(component) {
            for v in &self.values[id].data {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}
