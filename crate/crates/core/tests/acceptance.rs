//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 6 to 8 need an adapter that executes shaders. Without one they are
//! still attempted and print FAIL marked `blocked`; the process exits non-zero
//! only for failures that are not blocked.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dispatch_lab::analysis::{crossover_table, efficiency, overhead_partition, sensitivity_scan, PartitionInputs};
use dispatch_lab::decoder::{derive_per_op_overhead, fusion_savings, ModelConfig};
use dispatch_lab::kernels::MatmulDims;
use dispatch_lab::report::{self, ExperimentId, RunConfig};
use dispatch_lab::stats::{summarize, welch_t_test};
use dispatch_lab::Error;

enum Outcome {
    Pass(String),
    Fail(String),
    Blocked(String),
}

type Check = fn() -> Outcome;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol
}

fn crossover_b_star() -> Outcome {
    let published = [119u64, 22, 22, 40, 7, 7];
    let start = Instant::now();
    let rows = crossover_table(95.0, 2e12).unwrap();
    let elapsed = start.elapsed();
    let got: Vec<u64> = rows.iter().map(|r| r.result.b_star).collect();
    let ok = got.iter().zip(published).all(|(g, p)| g.abs_diff(p) <= 1) && elapsed < Duration::from_secs(1);
    ensure(
        ok,
        format!("B* {got:?} vs published {published:?} (+/-1) in {elapsed:?}"),
    )
}

fn per_op_overhead() -> Outcome {
    let a = derive_per_op_overhead(71.4, 41.6, 312).unwrap();
    let b = derive_per_op_overhead(87.9, 51.3, 369).unwrap();
    let ok = close(a, 95.5, 0.05) && close(b, 99.2, 0.05);
    ensure(ok, format!("{a:.2} us and {b:.2} us (want 95.5 and 99.2 to 0.1)"))
}

fn partition_accounting() -> Outcome {
    let p = overhead_partition(PartitionInputs::reference()).unwrap();
    let (d, f) = (p.dispatch_component_ms, p.framework_component_ms);
    let ok = close(d.0, 13.5, 0.05) && close(d.1, 20.3, 0.05) && close(f.0, 33.3, 0.05) && close(f.1, 40.0, 0.05);
    ensure(
        ok,
        format!(
            "dispatch [{:.3}, {:.3}] ms, framework [{:.3}, {:.3}] ms",
            d.0, d.1, f.0, f.1
        ),
    )
}

fn efficiency_rows() -> Outcome {
    let up = efficiency(MatmulDims::new(896, 896, 4864).unwrap(), 6.40, 105.0).unwrap();
    let down = efficiency(MatmulDims::new(896, 4864, 896).unwrap(), 3.79, 105.0).unwrap();
    let (a, b) = (up.tflops(), down.tflops());
    let ok = (a / 1.22 - 1.0).abs() <= 0.01 && (b / 2.06 - 1.0).abs() <= 0.01;
    ensure(ok, format!("{a:.4} and {b:.4} TFLOP/s (want 1.22 and 2.06 within 1%)"))
}

fn ledger_arithmetic() -> Outcome {
    let s = fusion_savings(&ModelConfig::qwen05b_like(0));
    let parts_ok = (s.rmsnorm, s.mlp_gate_up_silu, s.kv_proj, s.total) == (240, 48, 24, 312);
    let bad_layers: Vec<usize> = (1..=64)
        .filter(|&layers| {
            let mut cfg = ModelConfig::qwen05b_like(0);
            cfg.layers = layers;
            fusion_savings(&cfg).total != 13 * layers as u64
        })
        .collect();
    ensure(
        parts_ok && bad_layers.is_empty(),
        format!(
            "savings {} + {} + {} = {}; layers x 13 fails for {bad_layers:?}",
            s.rmsnorm, s.mlp_gate_up_silu, s.kv_proj, s.total
        ),
    )
}

fn gpu_or_blocked() -> Result<(dispatch_lab::gpu::GpuContext, dispatch_lab::kernels::KernelLibrary), Outcome> {
    match dispatch_lab::gpu::GpuContext::acquire(dispatch_lab::BackendChoice::Any, true) {
        Ok(ctx) => {
            let lib = dispatch_lab::kernels::KernelLibrary::new(&ctx).map_err(|e| Outcome::Fail(e.to_string()))?;
            Ok((ctx, lib))
        }
        Err(e) => Err(Outcome::Blocked(e.to_string())),
    }
}

fn numerical_equivalence() -> Outcome {
    let (ctx, lib) = match gpu_or_blocked() {
        Ok(v) => v,
        Err(o) => return o,
    };
    let kernels = common::kernels_match_oracle(&ctx, &lib);
    let decoder = common::decoder_matches_reference(&ctx, &lib);
    match (kernels, decoder) {
        (Ok(k), Ok(d)) => Outcome::Pass(format!(
            "{} seeds, worst kernel diff {k:.2} x tol, tiny forward {d:.2} x tol, {} tokens identical",
            common::NUMERIC_SEEDS,
            common::DECODE_TOKENS
        )),
        (Err(e), _) | (_, Err(e)) => Outcome::Fail(e),
    }
}

fn gpu_config() -> RunConfig {
    RunConfig {
        backend: dispatch_lab::BackendChoice::Any,
        ..RunConfig::default()
    }
}

fn run_gpu(exp: ExperimentId) -> Result<report::ResultRecord, Outcome> {
    match report::run(exp, &gpu_config()) {
        Ok(r) => Ok(r),
        Err(e @ Error::NoAdapter { .. }) => Err(Outcome::Blocked(e.to_string())),
        Err(e) => Err(Outcome::Fail(e.to_string())),
    }
}

fn derived_bool(r: &report::ResultRecord, key: &str) -> bool {
    r.derived.get(key).and_then(|v| v.as_bool()).unwrap_or(false)
}

fn methodology() -> Outcome {
    let start = Instant::now();
    let single = match run_gpu(ExperimentId::SingleOp) {
        Ok(r) => r,
        Err(o) => return o,
    };
    let seq = match run_gpu(ExperimentId::SeqDispatch) {
        Ok(r) => r,
        Err(o) => return o,
    };
    let elapsed = start.elapsed();
    let ratio = single
        .derived
        .get("single_over_sequential")
        .and_then(|v| v.as_f64())
        .unwrap_or(f64::NAN);
    let dev = seq
        .derived
        .get("linearity_max_deviation")
        .and_then(|v| v.as_f64())
        .unwrap_or(f64::NAN);
    let ok = derived_bool(&single, "ratio_at_least_5")
        && derived_bool(&seq, "linearity_within_20_percent")
        && elapsed < Duration::from_secs(120);
    ensure(
        ok,
        format!(
            "single/sequential {ratio:.1}x (>= 5), linearity deviation {:.1}% (<= 20%), {elapsed:.1?}",
            dev * 100.0
        ),
    )
}

fn timeline_accounting() -> Outcome {
    let r = match run_gpu(ExperimentId::Timeline) {
        Ok(r) => r,
        Err(o) => return o,
    };
    let submit = if r.hardware.backend == dispatch_lab::BackendChoice::Vulkan {
        format!("submit dominant: {}", derived_bool(&r, "submit_dominant"))
    } else {
        format!(
            "backend {} (submit dominance reported for Vulkan only)",
            r.hardware.backend
        )
    };
    ensure(
        r.violations.is_empty(),
        format!("accounting violations {:?}; {submit}", r.violations),
    )
}

fn statistics_oracle() -> Outcome {
    let s = summarize(&[10.0, 12.0, 14.0, 16.0, 18.0]).unwrap();
    let ci_ok = close(s.ci95_low, 10.0735, 5e-5) && close(s.ci95_high, 17.9265, 5e-5);
    let w = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let reference_ok =
        close(w.t_stat, -1.0, 1e-3) && close(w.df, 8.0, 1e-3) && close(w.p_two_tailed, 0.34659350708733416, 1e-3);
    let worst = common::welch_vs_permutation_worst();
    ensure(
        ci_ok && reference_ok && worst <= 0.05,
        format!(
            "CI [{:.4}, {:.4}], p {:.6}, worst |p - p_perm| {worst:.4} over 20 cases (full suites in stats_oracle)",
            s.ci95_low, s.ci95_high, w.p_two_tailed
        ),
    )
}

fn sensitivity_stability() -> Outcome {
    let r = sensitivity_scan(PartitionInputs::reference(), 20.0).unwrap();
    ensure(
        r.dominance_stable,
        format!(
            "dominance stable at +/-20%: {} over {} valid points ({} skipped), framework {:.1}..{:.1} ms",
            r.dominance_stable, r.valid_points, r.skipped_points, r.framework_ms_range.0, r.framework_ms_range.1
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 10] = [
        ("crossover table", crossover_b_star),
        ("overhead derivation", per_op_overhead),
        ("partition accounting", partition_accounting),
        ("efficiency math", efficiency_rows),
        ("ledger arithmetic", ledger_arithmetic),
        ("numerical equivalence", numerical_equivalence),
        ("methodology property", methodology),
        ("timeline accounting", timeline_accounting),
        ("statistics oracle", statistics_oracle),
        ("sensitivity stability", sensitivity_stability),
    ];
    let mut hard_failures = 0;
    let mut blocked = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Outcome::Pass(d) => println!("criterion {:>2} PASS {name}: {d}", i + 1),
            Outcome::Fail(d) => {
                hard_failures += 1;
                println!("criterion {:>2} FAIL {name}: {d}", i + 1);
            }
            Outcome::Blocked(d) => {
                blocked += 1;
                println!("criterion {:>2} FAIL {name} (blocked, no GPU): {d}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {hard_failures} failed, {blocked} blocked",
        10 - hard_failures - blocked
    );
    if hard_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
