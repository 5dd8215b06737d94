//! Toy transformer decoder: configuration presets, dispatch ledgers, seeded
//! weights, a CPU reference forward pass and (with `gpu`) the GPU pipeline.

mod ledger;
mod reference;
mod weights;

#[cfg(feature = "gpu")]
mod model;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ledger::{
    dispatch_ledger, fusion_savings, ledger_for, DispatchLedger, FusionSavings, FusionSet, GLOBAL_DISPATCHES,
};
pub use reference::ReferenceDecoder;
pub use weights::{LayerWeights, ModelWeights, WEIGHT_RANGE};

#[cfg(feature = "gpu")]
pub use model::{ArgmaxMode, Generation, ToyDecoder, NEAR_TIE};

pub const PROMPT_LEN: usize = 5;
pub const DEFAULT_KV_CAPACITY: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub intermediate: usize,
    pub kv_dim: usize,
    pub vocab: usize,
    pub seed: u64,
    /// Ring slots per layer in the KV cache.
    pub kv_capacity: usize,
}

impl ModelConfig {
    pub const PRESETS: [&'static str; 3] = ["tiny", "qwen05b-like", "qwen15b-like"];

    pub fn tiny(seed: u64) -> Self {
        Self {
            layers: 2,
            hidden: 64,
            intermediate: 128,
            kv_dim: 32,
            vocab: 256,
            seed,
            kv_capacity: DEFAULT_KV_CAPACITY,
        }
    }

    pub fn qwen05b_like(seed: u64) -> Self {
        Self {
            layers: 24,
            hidden: 896,
            intermediate: 4864,
            kv_dim: 128,
            vocab: 151_936,
            seed,
            kv_capacity: DEFAULT_KV_CAPACITY,
        }
    }

    pub fn qwen15b_like(seed: u64) -> Self {
        Self {
            layers: 28,
            hidden: 1536,
            intermediate: 8960,
            kv_dim: 256,
            vocab: 151_936,
            seed,
            kv_capacity: DEFAULT_KV_CAPACITY,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny(seed)),
            "qwen05b-like" => Ok(Self::qwen05b_like(seed)),
            "qwen15b-like" => Ok(Self::qwen15b_like(seed)),
            other => Err(Error::InvalidConfig(format!(
                "unknown model preset `{other}` (expected tiny, qwen05b-like or qwen15b-like)"
            ))),
        }
    }

    /// Zero layers is allowed (embedding, final norm and head only).
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("hidden", self.hidden),
            ("intermediate", self.intermediate),
            ("kv_dim", self.kv_dim),
            ("vocab", self.vocab),
            ("kv_capacity", self.kv_capacity),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.vocab > u32::MAX as usize {
            return Err(Error::InvalidConfig("vocab exceeds u32".into()));
        }
        Ok(())
    }

    pub fn layer_parameter_count(&self) -> u64 {
        let (h, i, kv) = (self.hidden as u64, self.intermediate as u64, self.kv_dim as u64);
        2 * h + 2 * h * h + 2 * kv * h + 3 * h * i
    }

    /// Embedding (tied with the output head), layers and final norm.
    pub fn parameter_count(&self) -> u64 {
        let h = self.hidden as u64;
        self.vocab as u64 * h + self.layers as u64 * self.layer_parameter_count() + h
    }

    pub fn weight_bytes(&self) -> u64 {
        4 * self.parameter_count()
    }

    /// Bytes of the largest single weight tensor.
    pub fn largest_tensor_bytes(&self) -> u64 {
        let h = self.hidden as u64;
        4 * (self.vocab as u64 * h).max(self.intermediate as u64 * h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineVariant {
    Unfused,
    Fused,
    Tiled,
}

impl PipelineVariant {
    pub const ALL: [PipelineVariant; 3] = [PipelineVariant::Unfused, PipelineVariant::Fused, PipelineVariant::Tiled];

    pub fn fusions(self) -> FusionSet {
        match self {
            PipelineVariant::Unfused => FusionSet::NONE,
            PipelineVariant::Fused => FusionSet::FUSED,
            PipelineVariant::Tiled => FusionSet::TILED,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineVariant::Unfused => "unfused",
            PipelineVariant::Fused => "fused",
            PipelineVariant::Tiled => "tiled",
        }
    }
}

/// Per-token timing of one greedy generation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenTiming {
    pub ttft_ms: f64,
    pub per_token_ms: Vec<f64>,
    pub t_forward_ms: Vec<f64>,
    pub sync_overhead_ms: Vec<f64>,
}

impl TokenTiming {
    pub fn from_series(per_token_ms: Vec<f64>, t_forward_ms: Vec<f64>) -> Result<Self> {
        if per_token_ms.is_empty() || per_token_ms.len() != t_forward_ms.len() {
            return Err(Error::InvalidConfig(format!(
                "timing series lengths {} and {} must match and be non-empty",
                per_token_ms.len(),
                t_forward_ms.len()
            )));
        }
        let sync_overhead_ms = per_token_ms.iter().zip(&t_forward_ms).map(|(t, f)| t - f).collect();
        Ok(Self {
            ttft_ms: per_token_ms[0],
            per_token_ms,
            t_forward_ms,
            sync_overhead_ms,
        })
    }
}

/// `(ttft_unfused − ttft_fused) · 1000 / dispatches_saved`, in microseconds.
pub fn derive_per_op_overhead(ttft_unfused_ms: f64, ttft_fused_ms: f64, dispatches_saved: u64) -> Result<f64> {
    if dispatches_saved == 0 {
        return Err(Error::ZeroSavedDispatches);
    }
    Ok((ttft_unfused_ms - ttft_fused_ms) * 1000.0 / dispatches_saved as f64)
}

/// Deterministic prompt of [`PROMPT_LEN`] token ids.
pub fn seeded_prompt(seed: u64, vocab: usize) -> Vec<u32> {
    let mut rng = crate::tensor::SeededUniform::new(seed, weights::PROMPT_STREAM);
    (0..PROMPT_LEN).map(|_| rng.next_index(vocab) as u32).collect()
}
