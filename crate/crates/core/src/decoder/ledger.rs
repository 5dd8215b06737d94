use serde::{Deserialize, Serialize};

use super::{ModelConfig, PipelineVariant};
use crate::kernels::{KernelVariant, OpCategory};

/// Embedding gather, final RMSNorm chain (6) and output head.
pub const GLOBAL_DISPATCHES: u64 = 8;

/// Which fusions a pipeline applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FusionSet {
    /// Each per-layer RMSNorm runs as one kernel instead of a 6-op chain.
    pub rmsnorm: bool,
    /// Gate, up and SiLU-multiply run as one kernel.
    pub gate_up_silu: bool,
    /// K and V projections run as one kernel.
    pub kv_proj: bool,
    /// The MLP residual add is folded into the down projection.
    pub down_residual: bool,
}

impl FusionSet {
    pub const NONE: FusionSet = FusionSet {
        rmsnorm: false,
        gate_up_silu: false,
        kv_proj: false,
        down_residual: false,
    };
    pub const FUSED: FusionSet = FusionSet {
        rmsnorm: true,
        gate_up_silu: true,
        kv_proj: true,
        down_residual: false,
    };
    pub const TILED: FusionSet = FusionSet {
        down_residual: true,
        ..FusionSet::FUSED
    };
}

/// Dispatches of one forward pass, by category.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchLedger {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub variant: Option<PipelineVariant>,
    pub fusions: FusionSet,
    pub rmsnorm: u64,
    pub matmul: u64,
    pub elementwise: u64,
    pub argmax: u64,
    pub other: u64,
    pub total: u64,
    pub saved_vs_unfused: i64,
}

impl DispatchLedger {
    fn from_counts(variant: Option<PipelineVariant>, fusions: FusionSet, counts: [u64; 5], unfused_total: u64) -> Self {
        let [rmsnorm, matmul, elementwise, argmax, other] = counts;
        let total = counts.iter().sum();
        Self {
            variant,
            fusions,
            rmsnorm,
            matmul,
            elementwise,
            argmax,
            other,
            total,
            saved_vs_unfused: unfused_total as i64 - total as i64,
        }
    }

    /// Ledger of an observed dispatch sequence.
    pub fn from_categories(
        variant: Option<PipelineVariant>,
        fusions: FusionSet,
        categories: impl IntoIterator<Item = OpCategory>,
        unfused_total: u64,
    ) -> Self {
        let mut counts = [0u64; 5];
        for c in categories {
            counts[OpCategory::ALL.iter().position(|x| *x == c).unwrap()] += 1;
        }
        Self::from_counts(variant, fusions, counts, unfused_total)
    }

    pub fn count(&self, category: OpCategory) -> u64 {
        match category {
            OpCategory::Rmsnorm => self.rmsnorm,
            OpCategory::Matmul => self.matmul,
            OpCategory::Elementwise => self.elementwise,
            OpCategory::Argmax => self.argmax,
            OpCategory::Other => self.other,
        }
    }

    /// Adds the on-device argmax dispatch.
    pub fn with_device_argmax(mut self) -> Self {
        self.argmax += 1;
        self.total += 1;
        self.saved_vs_unfused -= 1;
        self
    }
}

fn layer_counts(f: FusionSet) -> [u64; 5] {
    let norm = if f.rmsnorm {
        KernelVariant::RmsnormFused.dispatch_count()
    } else {
        KernelVariant::RmsnormUnfusedChain.dispatch_count()
    } as u64;
    let rmsnorm = 2 * norm;
    // q, k+v, o, gate+up, down
    let matmul = 1 + if f.kv_proj { 1 } else { 2 } + 1 + if f.gate_up_silu { 1 } else { 2 } + 1;
    // two cache writes, attention residual, silu-mul, MLP residual
    let elementwise = 2 + 1 + u64::from(!f.gate_up_silu) + u64::from(!f.down_residual);
    let other = 1;
    [rmsnorm, matmul, elementwise, 0, other]
}

fn counts_for(cfg: &ModelConfig, f: FusionSet) -> [u64; 5] {
    let per_layer = layer_counts(f);
    let l = cfg.layers as u64;
    let final_norm = KernelVariant::RmsnormUnfusedChain.dispatch_count() as u64;
    [
        l * per_layer[0] + final_norm,
        l * per_layer[1] + 1,
        l * per_layer[2],
        0,
        l * per_layer[4] + 1,
    ]
}

/// Exact forward-pass ledger of the harness's own pipeline for an arbitrary
/// fusion set. The final norm always runs as the unfused chain.
pub fn ledger_for(cfg: &ModelConfig, fusions: FusionSet) -> DispatchLedger {
    let unfused: u64 = counts_for(cfg, FusionSet::NONE).iter().sum();
    let variant = PipelineVariant::ALL.into_iter().find(|v| v.fusions() == fusions);
    DispatchLedger::from_counts(variant, fusions, counts_for(cfg, fusions), unfused)
}

pub fn dispatch_ledger(cfg: &ModelConfig, variant: PipelineVariant) -> DispatchLedger {
    ledger_for(cfg, variant.fusions())
}

/// Dispatches removed by each fusion applied alone, relative to unfused.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionSavings {
    pub rmsnorm: u64,
    pub mlp_gate_up_silu: u64,
    pub kv_proj: u64,
    /// All three together (the fused pipeline).
    pub total: u64,
    /// Extra saving of the tiled pipeline over fused.
    pub down_residual: u64,
}

pub fn fusion_savings(cfg: &ModelConfig) -> FusionSavings {
    let saved = |f: FusionSet| ledger_for(cfg, f).saved_vs_unfused as u64;
    let only = |set: fn(&mut FusionSet)| {
        let mut f = FusionSet::NONE;
        set(&mut f);
        saved(f)
    };
    FusionSavings {
        rmsnorm: only(|f| f.rmsnorm = true),
        mlp_gate_up_silu: only(|f| f.gate_up_silu = true),
        kv_proj: only(|f| f.kv_proj = true),
        total: saved(FusionSet::FUSED),
        down_residual: saved(FusionSet::TILED) - saved(FusionSet::FUSED),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_billion_savings() {
        let cfg = ModelConfig::qwen05b_like(0);
        let s = fusion_savings(&cfg);
        assert_eq!((s.rmsnorm, s.mlp_gate_up_silu, s.kv_proj, s.total), (240, 48, 24, 312));
        assert_eq!(s.down_residual, 24);
        assert_eq!(dispatch_ledger(&cfg, PipelineVariant::Unfused).total, 608);
        assert_eq!(dispatch_ledger(&cfg, PipelineVariant::Fused).total, 296);
        assert_eq!(dispatch_ledger(&cfg, PipelineVariant::Tiled).total, 272);
    }

    #[test]
    fn one_and_a_half_billion_savings() {
        let s = fusion_savings(&ModelConfig::qwen15b_like(0));
        assert_eq!(s.total, 364);
    }

    #[test]
    fn zero_layers_is_global_only() {
        let mut cfg = ModelConfig::tiny(0);
        cfg.layers = 0;
        for v in PipelineVariant::ALL {
            let l = dispatch_ledger(&cfg, v);
            assert_eq!(l.total, GLOBAL_DISPATCHES);
            assert_eq!(l.saved_vs_unfused, 0);
        }
    }

    #[test]
    fn device_argmax_adds_one() {
        let l = dispatch_ledger(&ModelConfig::tiny(0), PipelineVariant::Fused);
        let d = l.clone().with_device_argmax();
        assert_eq!(d.total, l.total + 1);
        assert_eq!(d.argmax, 1);
    }

    #[test]
    fn observed_categories_build_same_ledger() {
        let cfg = ModelConfig::tiny(0);
        let l = dispatch_ledger(&cfg, PipelineVariant::Tiled);
        let mut cats = Vec::new();
        for c in OpCategory::ALL {
            cats.extend(std::iter::repeat_n(c, l.count(c) as usize));
        }
        let unfused = dispatch_ledger(&cfg, PipelineVariant::Unfused).total;
        let rebuilt = DispatchLedger::from_categories(Some(PipelineVariant::Tiled), FusionSet::TILED, cats, unfused);
        assert_eq!(rebuilt, l);
    }

    proptest! {
        #[test]
        fn fused_saves_thirteen_per_layer(layers in 1usize..=64, hidden in 1usize..4096, seed in any::<u64>()) {
            let mut cfg = ModelConfig::tiny(seed);
            cfg.layers = layers;
            cfg.hidden = hidden;
            let l = dispatch_ledger(&cfg, PipelineVariant::Fused);
            prop_assert_eq!(l.saved_vs_unfused, 13 * layers as i64);
            let s = fusion_savings(&cfg);
            prop_assert_eq!(s.rmsnorm + s.mlp_gate_up_silu + s.kv_proj, s.total);
            prop_assert_eq!(l.total, l.rmsnorm + l.matmul + l.elementwise + l.argmax + l.other);
        }
    }
}
