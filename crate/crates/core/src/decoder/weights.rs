use crate::error::Result;
use crate::oracle::MlpWeights;
use crate::tensor::{HostTensor, SeededUniform};

use super::ModelConfig;

/// Projection and embedding weights are drawn from `U(-0.02, 0.02)`.
pub const WEIGHT_RANGE: f32 = 0.02;

const EMBEDDING_STREAM: u64 = 1;
const FINAL_NORM_STREAM: u64 = 2;
pub(super) const PROMPT_STREAM: u64 = 3;
const LAYER_STREAM_BASE: u64 = 1000;
const STREAMS_PER_LAYER: u64 = 16;

/// Projections are stored `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: HostTensor,
    /// `[hidden, hidden]`
    pub wq: HostTensor,
    /// `[kv_dim, hidden]`
    pub wk: HostTensor,
    /// `[kv_dim, hidden]`
    pub wv: HostTensor,
    /// `[hidden, hidden]`
    pub wo: HostTensor,
    pub mlp_norm: HostTensor,
    /// `[intermediate, hidden]`
    pub gate: HostTensor,
    /// `[intermediate, hidden]`
    pub up: HostTensor,
    /// `[hidden, intermediate]`
    pub down: HostTensor,
}

impl LayerWeights {
    pub fn mlp(&self, eps: f64) -> MlpWeights {
        MlpWeights {
            norm: self.mlp_norm.clone(),
            gate: self.gate.clone(),
            up: self.up.clone(),
            down: self.down.clone(),
            eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    /// `[vocab, hidden]`, shared with the output head.
    pub embedding: HostTensor,
    pub layers: Vec<LayerWeights>,
    pub final_norm: HostTensor,
}

fn uniform(shape: Vec<usize>, seed: u64, stream: u64) -> HostTensor {
    let n = shape.iter().product();
    let data = SeededUniform::new(seed, stream).fill(n, -WEIGHT_RANGE, WEIGHT_RANGE);
    HostTensor::new(shape, data).expect("shape and payload agree")
}

/// Norm gains are `1 + U(-0.02, 0.02)`.
fn norm_gain(hidden: usize, seed: u64, stream: u64) -> HostTensor {
    let mut t = uniform(vec![hidden], seed, stream);
    t.data_mut().iter_mut().for_each(|v| *v += 1.0);
    t
}

impl ModelWeights {
    /// Draws every tensor from its own seeded stream.
    pub fn generate(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (h, i, kv, seed) = (cfg.hidden, cfg.intermediate, cfg.kv_dim, cfg.seed);
        let layers = (0..cfg.layers as u64)
            .map(|l| {
                let s = |t: u64| LAYER_STREAM_BASE + l * STREAMS_PER_LAYER + t;
                LayerWeights {
                    attn_norm: norm_gain(h, seed, s(0)),
                    wq: uniform(vec![h, h], seed, s(1)),
                    wk: uniform(vec![kv, h], seed, s(2)),
                    wv: uniform(vec![kv, h], seed, s(3)),
                    wo: uniform(vec![h, h], seed, s(4)),
                    mlp_norm: norm_gain(h, seed, s(5)),
                    gate: uniform(vec![i, h], seed, s(6)),
                    up: uniform(vec![i, h], seed, s(7)),
                    down: uniform(vec![h, i], seed, s(8)),
                }
            })
            .collect();
        Ok(Self {
            config: cfg.clone(),
            embedding: uniform(vec![cfg.vocab, h], seed, EMBEDDING_STREAM),
            layers,
            final_norm: norm_gain(h, seed, FINAL_NORM_STREAM),
        })
    }

    pub fn parameter_count(&self) -> u64 {
        let layer: usize = self
            .layers
            .iter()
            .map(|l| {
                [
                    &l.attn_norm,
                    &l.wq,
                    &l.wk,
                    &l.wv,
                    &l.wo,
                    &l.mlp_norm,
                    &l.gate,
                    &l.up,
                    &l.down,
                ]
                .iter()
                .map(|t| t.numel())
                .sum::<usize>()
            })
            .sum();
        (self.embedding.numel() + layer + self.final_norm.numel()) as u64
    }
}
