//! Analytic models: matmul efficiency, TTFT overhead partition, sensitivity
//! scan, and the batch size at which a linear layer stops being
//! overhead-bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::MatmulDims;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub dims: MatmulDims,
    pub time_ms: f64,
    pub gflops: f64,
    pub peak_tflops: f64,
    pub percent_peak: f64,
}

impl EfficiencyReport {
    pub fn tflops(&self) -> f64 {
        self.gflops / 1000.0
    }
}

/// Achieved throughput of one matmul against a configured FP32 peak.
/// `x > 0`, with NaN rejected.
fn positive(x: f64) -> bool {
    x > 0.0
}

pub fn efficiency(dims: MatmulDims, time_ms: f64, peak_tflops: f64) -> Result<EfficiencyReport> {
    if !positive(time_ms) || !positive(peak_tflops) {
        return Err(Error::InvalidConfig(format!(
            "time_ms ({time_ms}) and peak_tflops ({peak_tflops}) must be positive"
        )));
    }
    let gflops = dims.flops() as f64 / (time_ms * 1e6);
    Ok(EfficiencyReport {
        dims,
        time_ms,
        gflops,
        peak_tflops,
        percent_peak: gflops / (peak_tflops * 1000.0) * 100.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverInput {
    /// Per-operation overhead in microseconds.
    pub t_overhead_us: f64,
    /// Sustained kernel throughput in FLOP/s.
    pub throughput_flops: f64,
    pub d_in: u64,
    pub d_out: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    OverheadBound,
    ComputeBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverResult {
    pub input: CrossoverInput,
    pub b_star_raw: f64,
    /// `b_star_raw` rounded half-up.
    pub b_star: u64,
    pub regime_at_batch1: Regime,
}

/// Batch size where `2·B·d_in·d_out / throughput` equals the per-op overhead.
pub fn crossover_batch(input: CrossoverInput) -> Result<CrossoverResult> {
    let CrossoverInput {
        t_overhead_us,
        throughput_flops,
        d_in,
        d_out,
    } = input;
    if !positive(t_overhead_us) || !positive(throughput_flops) || d_in == 0 || d_out == 0 {
        return Err(Error::InvalidConfig(format!(
            "crossover inputs must be positive: {input:?}"
        )));
    }
    let raw = t_overhead_us * 1e-6 * throughput_flops / (2.0 * d_in as f64 * d_out as f64);
    Ok(CrossoverResult {
        input,
        b_star_raw: raw,
        b_star: (raw + 0.5).floor() as u64,
        regime_at_batch1: if raw > 1.0 {
            Regime::OverheadBound
        } else {
            Regime::ComputeBound
        },
    })
}

/// One row of the representative-operations crossover table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverRow {
    pub model: String,
    pub operation: String,
    pub result: CrossoverResult,
}

/// Q/K/V, MLP up and MLP down projections for the two model sizes.
pub fn crossover_table(t_overhead_us: f64, throughput_flops: f64) -> Result<Vec<CrossoverRow>> {
    let models = [("qwen05b-like", 896u64, 4864u64), ("qwen15b-like", 1536, 8960)];
    let mut rows = Vec::new();
    for (model, hidden, inter) in models {
        for (op, d_in, d_out) in [
            ("attention_qkv_proj", hidden, hidden),
            ("mlp_up_proj", hidden, inter),
            ("mlp_down_proj", inter, hidden),
        ] {
            rows.push(CrossoverRow {
                model: model.to_owned(),
                operation: op.to_owned(),
                result: crossover_batch(CrossoverInput {
                    t_overhead_us,
                    throughput_flops,
                    d_in,
                    d_out,
                })?,
            });
        }
    }
    Ok(rows)
}

/// Inputs of the TTFT overhead partition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionInputs {
    pub ttft_fused_ms: f64,
    pub n_ops: u64,
    /// Directly measured per-dispatch cost range `[low, high]` (us).
    pub per_dispatch_us: (f64, f64),
    /// Fusion-derived per-operation overhead (us).
    pub per_op_overhead_us: f64,
}

impl PartitionInputs {
    /// Fused-pipeline accounting of the 0.5B-like run: 41.6 ms TTFT, 564
    /// dispatches, 24 to 36 us per dispatch, 95 us per operation.
    pub fn reference() -> Self {
        Self {
            ttft_fused_ms: 41.6,
            n_ops: 564,
            per_dispatch_us: (24.0, 36.0),
            per_op_overhead_us: 95.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadPartition {
    pub inputs: PartitionInputs,
    pub per_op_overhead_us: f64,
    pub per_dispatch_cost_us: (f64, f64),
    /// `per_op − per_dispatch`, paired so `.0` uses the high dispatch bound.
    pub framework_us: (f64, f64),
    pub n_ops: u64,
    pub dispatch_component_ms: (f64, f64),
    pub framework_component_ms: (f64, f64),
    /// `n_ops × per_op`: the sum of both components for either pairing.
    pub total_overhead_ms: f64,
    /// Sum of components minus measured TTFT, attributed to CPU/GPU overlap.
    pub overlap_residual_ms: f64,
}

impl OverheadPartition {
    /// Framework-to-dispatch ratio at the low and high dispatch bounds.
    pub fn framework_to_dispatch_ratio(&self) -> (f64, f64) {
        (
            self.framework_us.1 / self.per_dispatch_cost_us.0,
            self.framework_us.0 / self.per_dispatch_cost_us.1,
        )
    }

    /// Per-operation overhead accounts for at least half of TTFT.
    pub fn overhead_dominates_ttft(&self) -> bool {
        self.total_overhead_ms >= 0.5 * self.inputs.ttft_fused_ms
    }
}

pub fn overhead_partition(inputs: PartitionInputs) -> Result<OverheadPartition> {
    let (low, high) = inputs.per_dispatch_us;
    let per_op = inputs.per_op_overhead_us;
    if !(low <= high && high <= per_op) || low < 0.0 {
        return Err(Error::RangeInverted { low, high, per_op });
    }
    let n = inputs.n_ops as f64;
    let framework_us = (per_op - high, per_op - low);
    let total_overhead_ms = n * per_op / 1000.0;
    Ok(OverheadPartition {
        inputs,
        per_op_overhead_us: per_op,
        per_dispatch_cost_us: (low, high),
        framework_us,
        n_ops: inputs.n_ops,
        dispatch_component_ms: (n * low / 1000.0, n * high / 1000.0),
        framework_component_ms: (n * framework_us.0 / 1000.0, n * framework_us.1 / 1000.0),
        total_overhead_ms,
        overlap_residual_ms: total_overhead_ms - inputs.ttft_fused_ms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    /// Multipliers applied to (per_op, dispatch_low, dispatch_high).
    pub factors: (f64, f64, f64),
    pub per_op_overhead_us: f64,
    pub per_dispatch_us: (f64, f64),
    /// `None` when the perturbed dispatch range became inverted.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub partition: Option<OverheadPartition>,
    pub overhead_dominates: bool,
    pub framework_exceeds_dispatch: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub perturb_percent: f64,
    pub base: OverheadPartition,
    pub points: Vec<SensitivityPoint>,
    pub valid_points: usize,
    pub skipped_points: usize,
    /// Framework component range over all valid points (ms).
    pub framework_ms_range: (f64, f64),
    /// "Per-operation overhead dominates TTFT" held at every valid point.
    pub dominance_stable: bool,
    /// Both the dispatch and the framework component stayed positive, i.e.
    /// both would still shrink under fusion.
    pub both_components_positive: bool,
}

/// Evaluate the partition on the {−p, 0, +p} grid over per-op overhead and
/// both dispatch bounds.
pub fn sensitivity_scan(base: PartitionInputs, perturb_percent: f64) -> Result<SensitivityReport> {
    if !(perturb_percent > 0.0 && perturb_percent <= 50.0) {
        return Err(Error::InvalidConfig(format!(
            "perturb_percent must be in (0, 50], got {perturb_percent}"
        )));
    }
    let base_partition = overhead_partition(base)?;
    let p = perturb_percent / 100.0;
    let grid = [1.0 - p, 1.0, 1.0 + p];

    let mut points = Vec::with_capacity(27);
    for &fo in &grid {
        for &fl in &grid {
            for &fh in &grid {
                let inputs = PartitionInputs {
                    per_op_overhead_us: base.per_op_overhead_us * fo,
                    per_dispatch_us: (base.per_dispatch_us.0 * fl, base.per_dispatch_us.1 * fh),
                    ..base
                };
                let partition = overhead_partition(inputs).ok();
                let (dominates, framework_wins) = match &partition {
                    Some(part) => (
                        part.overhead_dominates_ttft(),
                        part.framework_component_ms.0 >= part.dispatch_component_ms.1,
                    ),
                    None => (false, false),
                };
                points.push(SensitivityPoint {
                    factors: (fo, fl, fh),
                    per_op_overhead_us: inputs.per_op_overhead_us,
                    per_dispatch_us: inputs.per_dispatch_us,
                    partition,
                    overhead_dominates: dominates,
                    framework_exceeds_dispatch: framework_wins,
                });
            }
        }
    }

    let valid: Vec<&OverheadPartition> = points.iter().filter_map(|pt| pt.partition.as_ref()).collect();
    let framework_ms_range = valid.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), part| {
        (
            lo.min(part.framework_component_ms.0),
            hi.max(part.framework_component_ms.1),
        )
    });
    let dominance_stable = !valid.is_empty() && valid.iter().all(|part| part.overhead_dominates_ttft());
    let both_components_positive = valid
        .iter()
        .all(|part| part.framework_us.0 > 0.0 && part.per_dispatch_cost_us.0 > 0.0);

    Ok(SensitivityReport {
        perturb_percent,
        base: base_partition,
        valid_points: valid.len(),
        skipped_points: points.len() - valid.len(),
        framework_ms_range,
        dominance_stable,
        both_components_positive,
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncOverhead {
    pub ms: f64,
    /// Negative difference: the forward pass took longer than the whole token.
    pub anomaly: bool,
}

/// Per-token cost of the forced GPU→CPU readback: `t_token − t_forward`.
pub fn sync_overhead(t_token_ms: f64, t_forward_ms: f64) -> SyncOverhead {
    let ms = t_token_ms - t_forward_ms;
    SyncOverhead { ms, anomaly: ms < 0.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn efficiency_rows() {
        let r = efficiency(MatmulDims::new(256, 256, 256).unwrap(), 1.10, 105.0).unwrap();
        assert!(close(r.gflops, 30.50, 0.01));
        assert!(r.percent_peak < 0.1);

        let r = efficiency(MatmulDims::new(896, 896, 4864).unwrap(), 6.40, 105.0).unwrap();
        assert!(close(r.tflops(), 1.22, 0.005));
        assert!(close(r.percent_peak, 1.16, 0.01));

        let slow = efficiency(MatmulDims::new(896, 896, 4864).unwrap(), 1e15, 105.0).unwrap();
        assert!(slow.gflops < 1e-9);
        assert!(efficiency(MatmulDims::new(1, 1, 1).unwrap(), 0.0, 105.0).is_err());
    }

    #[test]
    fn crossover_examples() {
        let b = |d_in, d_out| {
            crossover_batch(CrossoverInput {
                t_overhead_us: 95.0,
                throughput_flops: 2e12,
                d_in,
                d_out,
            })
            .unwrap()
        };
        let up = b(896, 4864);
        assert!(close(up.b_star_raw, 21.80, 0.01));
        assert_eq!(up.b_star, 22);
        let qkv = b(896, 896);
        assert!(close(qkv.b_star_raw, 118.33, 0.01));
        assert_eq!(qkv.b_star, 118);
        let big = b(1536, 8960);
        assert!(close(big.b_star_raw, 6.90, 0.01));
        assert_eq!(big.b_star, 7);
        assert_eq!(big.regime_at_batch1, Regime::OverheadBound);
    }

    #[test]
    fn partition_reference_values() {
        let p = overhead_partition(PartitionInputs::reference()).unwrap();
        // 564 × 24 us and 564 × 36 us
        assert!(close(p.dispatch_component_ms.0, 13.536, 1e-9));
        assert!(close(p.dispatch_component_ms.1, 20.304, 1e-9));
        // 564 × (95 − 36) us and 564 × (95 − 24) us
        assert!(close(p.framework_component_ms.0, 33.276, 1e-9));
        assert!(close(p.framework_component_ms.1, 40.044, 1e-9));
        assert!(close(p.total_overhead_ms, 53.58, 1e-9));
        assert!(close(p.overlap_residual_ms, 11.98, 1e-9));
        let (r_low, r_high) = p.framework_to_dispatch_ratio();
        assert!(close(r_low, 71.0 / 24.0, 1e-12) && close(r_high, 59.0 / 36.0, 1e-12));
    }

    #[test]
    fn partition_boundaries() {
        let p = overhead_partition(PartitionInputs {
            per_dispatch_us: (95.0, 95.0),
            ..PartitionInputs::reference()
        })
        .unwrap();
        assert_eq!(p.framework_component_ms, (0.0, 0.0));

        for range in [(36.0, 24.0), (24.0, 120.0)] {
            let r = overhead_partition(PartitionInputs {
                per_dispatch_us: range,
                ..PartitionInputs::reference()
            });
            assert!(matches!(r, Err(Error::RangeInverted { .. })));
        }
    }

    #[test]
    fn sensitivity_at_twenty_percent() {
        let r = sensitivity_scan(PartitionInputs::reference(), 20.0).unwrap();
        assert_eq!(r.points.len(), 27);
        assert!(r.dominance_stable);
        assert!(r.both_components_positive);
        // per_op = 76 us: framework = 564 × (76 − 36 .. 76 − 24) us
        let at76 = r
            .points
            .iter()
            .find(|pt| pt.factors == (0.8, 1.0, 1.0))
            .and_then(|pt| pt.partition.clone())
            .unwrap();
        assert!(close(at76.framework_component_ms.0, 22.56, 1e-9));
        assert!(close(at76.framework_component_ms.1, 29.328, 1e-9));
    }

    #[test]
    fn sensitivity_tiny_perturbation_matches_base() {
        let r = sensitivity_scan(PartitionInputs::reference(), 0.01).unwrap();
        for pt in &r.points {
            let part = pt.partition.as_ref().unwrap();
            assert!(close(
                part.framework_component_ms.0,
                r.base.framework_component_ms.0,
                0.02
            ));
            assert!(close(
                part.dispatch_component_ms.1,
                r.base.dispatch_component_ms.1,
                0.01
            ));
        }
    }

    #[test]
    fn sensitivity_rejects_out_of_range() {
        assert!(sensitivity_scan(PartitionInputs::reference(), 0.0).is_err());
        assert!(sensitivity_scan(PartitionInputs::reference(), 50.5).is_err());
        let wide = sensitivity_scan(PartitionInputs::reference(), 50.0).unwrap();
        assert!(wide.skipped_points > 0);
    }

    #[test]
    fn sync_overhead_examples() {
        assert_eq!(
            sync_overhead(48.0, 37.0),
            SyncOverhead {
                ms: 11.0,
                anomaly: false
            }
        );
        assert_eq!(sync_overhead(5.0, 5.0).ms, 0.0);
        let neg = sync_overhead(10.0, 12.0);
        assert_eq!(neg.ms, -2.0);
        assert!(neg.anomaly);
    }

    proptest! {
        #[test]
        fn crossover_scales_linearly(
            t in 1.0f64..1000.0, thr in 1e9f64..1e14,
            d_in in 1u64..20_000, d_out in 1u64..20_000, k in 1.5f64..8.0,
        ) {
            let base = crossover_batch(CrossoverInput { t_overhead_us: t, throughput_flops: thr, d_in, d_out }).unwrap().b_star_raw;
            let t_k = crossover_batch(CrossoverInput { t_overhead_us: t * k, throughput_flops: thr, d_in, d_out }).unwrap().b_star_raw;
            let thr_k = crossover_batch(CrossoverInput { t_overhead_us: t, throughput_flops: thr * k, d_in, d_out }).unwrap().b_star_raw;
            let wide = crossover_batch(CrossoverInput { t_overhead_us: t, throughput_flops: thr, d_in: d_in * 2, d_out }).unwrap().b_star_raw;
            prop_assert!((t_k / base - k).abs() < 1e-9 * k);
            prop_assert!((thr_k / base - k).abs() < 1e-9 * k);
            prop_assert!((base / wide - 2.0).abs() < 1e-9);
        }

        #[test]
        fn gflops_times_time_is_constant(m in 1u64..4096, k in 1u64..4096, n in 1u64..4096, t1 in 0.01f64..100.0, t2 in 0.01f64..100.0) {
            let dims = MatmulDims::new(m, k, n).unwrap();
            let a = efficiency(dims, t1, 105.0).unwrap();
            let b = efficiency(dims, t2, 105.0).unwrap();
            let (pa, pb) = (a.gflops * t1, b.gflops * t2);
            prop_assert!((pa - pb).abs() <= 1e-9 * pa.abs().max(1.0));
        }
    }
}
