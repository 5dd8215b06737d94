//! Browser bindings for the analytic half of dispatch-lab.
//!
//! Every function returns a JSON string so the page can render it without a
//! generated TypeScript layer.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dispatch_lab::analysis::{
    crossover_batch, crossover_table, overhead_partition, sensitivity_scan, CrossoverInput, PartitionInputs,
};
use dispatch_lab::decoder::{dispatch_ledger, fusion_savings, ModelConfig, PipelineVariant};

fn to_js<T: Serialize>(value: dispatch_lab::Result<T>) -> Result<String, JsValue> {
    value
        .and_then(|v| Ok(serde_json::to_string(&v)?))
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

/// B* for one linear layer.
#[wasm_bindgen]
pub fn crossover(t_overhead_us: f64, throughput_flops: f64, d_in: u32, d_out: u32) -> Result<String, JsValue> {
    to_js(crossover_batch(CrossoverInput {
        t_overhead_us,
        throughput_flops,
        d_in: d_in.into(),
        d_out: d_out.into(),
    }))
}

/// B* for the representative projections of both model presets.
#[wasm_bindgen]
pub fn crossover_rows(t_overhead_us: f64, throughput_flops: f64) -> Result<String, JsValue> {
    to_js(crossover_table(t_overhead_us, throughput_flops))
}

#[derive(Serialize)]
struct PartitionView {
    partition: dispatch_lab::analysis::OverheadPartition,
    sensitivity: dispatch_lab::analysis::SensitivityReport,
}

/// TTFT overhead partition plus its sensitivity scan.
#[wasm_bindgen]
pub fn partition(
    ttft_fused_ms: f64,
    n_ops: u32,
    dispatch_low_us: f64,
    dispatch_high_us: f64,
    per_op_overhead_us: f64,
    perturb_percent: f64,
) -> Result<String, JsValue> {
    let inputs = PartitionInputs {
        ttft_fused_ms,
        n_ops: n_ops.into(),
        per_dispatch_us: (dispatch_low_us, dispatch_high_us),
        per_op_overhead_us,
    };
    to_js(overhead_partition(inputs).and_then(|partition| {
        Ok(PartitionView {
            partition,
            sensitivity: sensitivity_scan(inputs, perturb_percent)?,
        })
    }))
}

#[derive(Serialize)]
struct LedgerView {
    config: ModelConfig,
    ledgers: Vec<dispatch_lab::decoder::DispatchLedger>,
    savings: dispatch_lab::decoder::FusionSavings,
}

/// Dispatch ledgers of all three pipeline variants for a preset, with the
/// layer count optionally overridden (`layers < 0` keeps the preset).
#[wasm_bindgen]
pub fn ledger(model: &str, layers: i32) -> Result<String, JsValue> {
    to_js(ModelConfig::preset(model, 0).map(|mut config| {
        if layers >= 0 {
            config.layers = layers as usize;
        }
        LedgerView {
            ledgers: PipelineVariant::ALL
                .iter()
                .map(|v| dispatch_ledger(&config, *v))
                .collect(),
            savings: fusion_savings(&config),
            config,
        }
    }))
}
