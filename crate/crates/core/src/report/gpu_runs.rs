use std::collections::BTreeMap;

use super::{ExperimentId, ResultRecord, RunConfig};
use crate::analysis::{efficiency, sync_overhead};
use crate::decoder::{
    derive_per_op_overhead, seeded_prompt, ArgmaxMode, Generation, ModelConfig, PipelineVariant, ToyDecoder,
};
use crate::error::{Error, Result};
use crate::gpu::GpuContext;
use crate::kernels::{KernelLibrary, MatmulDims, MatmulVariant, MlpVariant, PreparedOp, RmsNormParams, RmsNormVariant};
use crate::oracle::{compare, oracle_matmul_at, oracle_mlp, oracle_rmsnorm, MlpWeights, ToleranceSpec};
use crate::profiler::{measure_sequential, measure_single_op, measure_timeline, time_samples, Phase, ProfilingKernel};
use crate::tensor::HostTensor;

/// Elements of the profiling payload (one 256-thread workgroup).
const PROFILE_LEN: usize = 256;
const LINEARITY_NS: [usize; 3] = [30, 100, 300];
const SPOT_CHECKS: usize = 64;

struct Session {
    ctx: GpuContext,
    lib: KernelLibrary,
}

fn open(experiment: ExperimentId, cfg: &RunConfig) -> Result<(Session, ResultRecord)> {
    let ctx = GpuContext::acquire(cfg.backend, cfg.high_performance)?;
    let lib = KernelLibrary::new(&ctx)?;
    let mut record = ResultRecord::new(experiment, ctx.info().clone(), cfg);
    if !ctx.executes_shaders() {
        record.warn("backend validates API calls only; shaders do not run and numeric checks are skipped");
    }
    Ok((Session { ctx, lib }, record))
}

pub fn run(experiment: ExperimentId, cfg: &RunConfig) -> Result<ResultRecord> {
    let (s, mut r) = open(experiment, cfg)?;
    match experiment {
        ExperimentId::SeqDispatch => seq_dispatch(&s, cfg, &mut r)?,
        ExperimentId::SingleOp => single_op(&s, cfg, &mut r)?,
        ExperimentId::Timeline => timeline(&s, cfg, &mut r)?,
        ExperimentId::RmsnormFusion => rmsnorm_fusion(&s, cfg, &mut r)?,
        ExperimentId::MlpStrategies => mlp_compare(&s, cfg, &mut r, (1, 896, 4864))?,
        ExperimentId::MegaKernel => mlp_compare(&s, cfg, &mut r, (1, 256, 256))?,
        ExperimentId::MatmulEfficiency => matmul_efficiency(&s, cfg, &mut r)?,
        ExperimentId::ArgmaxCompare => argmax_compare(&s, cfg, &mut r)?,
        ExperimentId::ToyDecode => toy_decode(&s, cfg, &mut r)?,
        ExperimentId::Crossover | ExperimentId::Sensitivity => {
            return Err(Error::InvalidConfig(format!("{experiment} does not use the GPU")))
        }
    }
    Ok(r)
}

fn profiling_kernel(s: &Session, cfg: &RunConfig) -> Result<ProfilingKernel> {
    Ok(ProfilingKernel::elementwise_add(&s.ctx, &s.lib, PROFILE_LEN, cfg.seed)?
        .with_reused_bind_groups(cfg.reuse_bind_groups))
}

fn seq_dispatch(s: &Session, cfg: &RunConfig, r: &mut ResultRecord) -> Result<()> {
    let kernel = profiling_kernel(s, cfg)?;
    let mut ns: Vec<usize> = LINEARITY_NS.to_vec();
    ns.push(cfg.n_dispatches);
    ns.sort_unstable();
    ns.dedup();
    let mut means = BTreeMap::new();
    for n in &ns {
        let batch = measure_sequential(&s.ctx, &kernel, *n, cfg.runs, cfg.warmup)?;
        let name = format!("sequential_n{n}");
        r.add_series(&name, "us_per_dispatch", batch.per_dispatch_us())?;
        means.insert(name, r.series[&format!("sequential_n{n}")].mean);
    }
    let linear: Vec<f64> = LINEARITY_NS
        .iter()
        .map(|n| means[&format!("sequential_n{n}")])
        .collect();
    let reference = linear[1];
    let max_dev = linear
        .iter()
        .map(|m| (m - reference).abs() / reference)
        .fold(0.0, f64::max);
    if max_dev > 0.2 {
        r.warn(format!(
            "sequential per-dispatch cost varies {:.0}% across n = 30/100/300",
            max_dev * 100.0
        ));
    }
    r.derive("per_dispatch_mean_us", &means)?;
    r.derive("linearity_max_deviation", max_dev)?;
    r.derive("linearity_within_20_percent", max_dev <= 0.2)?;
    r.derive("fresh_bind_groups", !cfg.reuse_bind_groups)?;
    Ok(())
}

fn single_op(s: &Session, cfg: &RunConfig, r: &mut ResultRecord) -> Result<()> {
    let kernel = profiling_kernel(s, cfg)?;
    let single = measure_single_op(&s.ctx, &kernel, cfg.runs, cfg.warmup)?;
    let seq = measure_sequential(&s.ctx, &kernel, cfg.n_dispatches, cfg.runs, cfg.warmup)?;
    let seq_name = format!("sequential_n{}", cfg.n_dispatches);
    r.add_series("single_op", "us_per_dispatch", single.per_dispatch_us())?;
    r.add_series(&seq_name, "us_per_dispatch", seq.per_dispatch_us())?;
    r.compare("single_op", &seq_name)?;
    let ratio = r.series["single_op"].mean / r.series[&seq_name].mean;
    if ratio <= 1.0 {
        r.warn(format!(
            "sequential per-dispatch cost is not below single-op (ratio {ratio:.2})"
        ));
    }
    r.derive("single_over_sequential", ratio)?;
    r.derive("ratio_at_least_5", ratio >= 5.0)?;
    r.derive("fresh_bind_groups", !cfg.reuse_bind_groups)?;
    Ok(())
}

fn timeline(s: &Session, cfg: &RunConfig, r: &mut ResultRecord) -> Result<()> {
    let kernel = profiling_kernel(s, cfg)?;
    for _ in 0..cfg.warmup {
        measure_timeline(&s.ctx, &kernel, cfg.n_dispatches)?;
    }
    let mut passes = Vec::with_capacity(cfg.runs);
    for _ in 0..cfg.runs {
        passes.push(measure_timeline(&s.ctx, &kernel, cfg.n_dispatches)?);
    }
    let n = cfg.n_dispatches as f64;
    r.add_series(
        "per_dispatch_cpu_us",
        "us_per_dispatch",
        passes.iter().map(|p| p.total_cpu_us / n).collect(),
    )?;
    r.add_series(
        "submit_fraction",
        "fraction",
        passes.iter().map(|p| p.submit_fraction()).collect(),
    )?;
    for (i, p) in passes.iter().enumerate() {
        if p.accounting_error() > 0.01 {
            r.violation(format!(
                "pass {i}: phase sum deviates {:.3}% from total_cpu_us",
                p.accounting_error() * 100.0
            ));
        }
        if p.total_cpu_us > p.wall_clock_us {
            r.violation(format!("pass {i}: total_cpu_us exceeds wall_clock_us"));
        }
    }
    passes.sort_by(|a, b| a.total_cpu_us.total_cmp(&b.total_cpu_us));
    let median = &passes[passes.len() / 2];
    let submit_dominant = median.dominant_phase == Phase::Submit;
    if !submit_dominant && s.ctx.info().backend == crate::hardware::BackendChoice::Vulkan {
        r.warn(format!(
            "dominant phase on Vulkan is {:?}, not submit",
            median.dominant_phase
        ));
    }
    r.derive("median_pass", median)?;
    r.derive("submit_dominant", submit_dominant)?;
    Ok(())
}

/// `--dims` as `(rows, hidden, intermediate)`.
fn block_dims(cfg: &RunConfig, default: (usize, usize, usize)) -> (usize, usize, usize) {
    cfg.dims
        .map(|d| (d.m as usize, d.k as usize, d.n as usize))
        .unwrap_or(default)
}

fn time_op(s: &Session, cfg: &RunConfig, op: &PreparedOp) -> Result<Vec<f64>> {
    let us = time_samples(cfg.runs, cfg.warmup, || op.run(&s.ctx))?;
    Ok(us.into_iter().map(|v| v / 1000.0).collect())
}

fn check_against(
    r: &mut ResultRecord,
    label: &str,
    got: &HostTensor,
    want: &HostTensor,
    tol: ToleranceSpec,
) -> Result<()> {
    let report = compare(got, want, tol)?;
    if !report.pass {
        r.violation(format!(
            "{label}: max abs diff {:.3e} at {} exceeds {:.0e}",
            report.max_abs_diff, report.argmax_of_diff, tol.max_abs
        ));
    }
    r.derive(&format!("max_abs_diff_{label}"), report.max_abs_diff)?;
    Ok(())
}

fn rmsnorm_fusion(s: &Session, cfg: &RunConfig, r: &mut ResultRecord) -> Result<()> {
    let (rows, hidden, _) = block_dims(cfg, (1, 896, 0));
    let x = HostTensor::random_uniform(vec![rows, hidden], cfg.seed, -1.0, 1.0);
    let mut params = RmsNormParams::unit(hidden);
    params.eps = cfg.eps;
    params.weight = HostTensor::random_uniform(vec![hidden], cfg.seed ^ 7, 0.5, 1.5);
    let mut outputs = Vec::new();
    for variant in [RmsNormVariant::RmsnormUnfusedChain, RmsNormVariant::RmsnormFused] {
        let op = s.lib.prepare_rmsnorm(&s.ctx, variant, &x, &params)?;
        let name = crate::kernels::KernelVariant::from(variant).name();
        r.add_series(&name, "ms", time_op(s, cfg, &op)?)?;
        r.derive(&format!("dispatches_{name}"), op.dispatch_count())?;
        outputs.push((name, s.ctx.download(op.output(0))?));
    }
    r.compare(&outputs[0].0, &outputs[1].0)?;
    if s.ctx.executes_shaders() {
        let want = oracle_rmsnorm(&x, &params.weight, cfg.eps)?;
        for (name, got) in &outputs {
            check_against(r, name, got, &want, ToleranceSpec::SINGLE_KERNEL)?;
        }
    }
    r.derive("rows", rows)?;
    r.derive("hidden", hidden)?;
    Ok(())
}

fn mlp_weights(hidden: usize, inter: usize, seed: u64, eps: f64) -> MlpWeights {
    let u = |shape: Vec<usize>, stream: u64| HostTensor::random_uniform(shape, seed.wrapping_add(stream), -0.05, 0.05);
    MlpWeights {
        norm: HostTensor::random_uniform(vec![hidden], seed.wrapping_add(11), 0.9, 1.1),
        gate: u(vec![inter, hidden], 12),
        up: u(vec![inter, hidden], 13),
        down: u(vec![hidden, inter], 14),
        eps,
    }
}

fn mlp_compare(s: &Session, cfg: &RunConfig, r: &mut ResultRecord, default: (usize, usize, usize)) -> Result<()> {
    let (rows, hidden, inter) = block_dims(cfg, default);
    let w = mlp_weights(hidden, inter, cfg.seed, cfg.eps);
    let x = HostTensor::random_uniform(vec![rows, hidden], cfg.seed, -1.0, 1.0);
    let mega_ok = rows == 1 && KernelLibrary::check_mega_scale(hidden, inter).is_ok();
    if r.experiment == ExperimentId::MegaKernel && !mega_ok {
        return Err(Error::MegaKernelScaleExceeded {
            hidden,
            intermediate: inter,
        });
    }
    let mut names = Vec::new();
    let mut outputs = Vec::new();
    for variant in MlpVariant::ALL {
        if variant == MlpVariant::MegaMlp1 && !mega_ok {
            r.warn(format!(
                "mega_mlp1 skipped: {hidden}x{inter} exceeds the single-workgroup regime"
            ));
            continue;
        }
        let op = s.lib.prepare_mlp(&s.ctx, variant, &x, &w)?;
        let name = crate::kernels::KernelVariant::from(variant).name();
        r.add_series(&name, "ms", time_op(s, cfg, &op)?)?;
        r.derive(&format!("dispatches_{name}"), op.dispatch_count())?;
        outputs.push((name.clone(), s.ctx.download(op.output(0))?));
        names.push(name);
    }
    for candidate in &names[1..] {
        r.compare(&names[0], candidate)?;
    }
    if s.ctx.executes_shaders() {
        let want = oracle_mlp(&x, &w)?;
        for (name, got) in &outputs {
            check_against(r, name, got, &want, ToleranceSpec::CHAINED_MLP)?;
        }
    }
    r.derive("rows", rows)?;
    r.derive("hidden", hidden)?;
    r.derive("intermediate", inter)?;
    Ok(())
}

fn matmul_efficiency(s: &Session, cfg: &RunConfig, r: &mut ResultRecord) -> Result<()> {
    let dims = match cfg.dims {
        Some(d) => vec![d],
        None => vec![MatmulDims::new(256, 256, 256)?, MatmulDims::new(896, 896, 4864)?],
    };
    let mut reports = Vec::new();
    for d in dims {
        let (m, k, n) = (d.m as usize, d.k as usize, d.n as usize);
        let a = HostTensor::random_uniform(vec![m, k], cfg.seed, -1.0, 1.0);
        let b = HostTensor::random_uniform(vec![k, n], cfg.seed ^ 3, -1.0, 1.0);
        let picks: Vec<(usize, usize)> = (0..SPOT_CHECKS).map(|i| ((i * 7919) % m, (i * 104_729) % n)).collect();
        let want = oracle_matmul_at(&a, &b, &picks)?;
        for variant in [MatmulVariant::MatmulNaive, MatmulVariant::MatmulTiled16] {
            let op = s.lib.prepare_matmul(&s.ctx, variant, &a, &b)?;
            let name = format!(
                "{}_{}x{}x{}",
                crate::kernels::KernelVariant::from(variant).name(),
                m,
                k,
                n
            );
            let samples = time_op(s, cfg, &op)?;
            let report = efficiency(d, crate::stats::summarize(&samples)?.mean, cfg.peak_tflops)?;
            r.add_series(&name, "ms", samples)?;
            if s.ctx.executes_shaders() {
                let out = s.ctx.download(op.output(0))?;
                let got: Vec<f32> = picks.iter().map(|&(i, j)| out.data()[i * n + j]).collect();
                let (diff, _) = crate::oracle::max_abs_diff(&got, &want);
                let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs() as f64));
                if diff >= ToleranceSpec::SINGLE_KERNEL.max_abs * scale {
                    r.violation(format!("{name}: spot-check diff {diff:.3e}"));
                }
            }
            reports.push(serde_json::json!({ "series": name, "efficiency": report }));
        }
    }
    r.derive("efficiency", reports)?;
    Ok(())
}

fn decoder(s: &Session, cfg: &RunConfig) -> Result<ToyDecoder> {
    let model = ModelConfig::preset(&cfg.model, cfg.seed)?;
    ToyDecoder::build_model(&s.ctx, &s.lib, &model)
}

/// Checks that a generation submitted exactly the ledgered dispatches.
fn check_dispatches(r: &mut ResultRecord, label: &str, g: &Generation, expected: u64) {
    if g.dispatches != expected {
        r.violation(format!(
            "{label}: submitted {} dispatches, ledger predicts {expected}",
            g.dispatches
        ));
    }
}

fn steady_state(g: &Generation) -> Vec<f64> {
    g.timing.per_token_ms[1..].to_vec()
}

fn need_tokens(cfg: &RunConfig) -> Result<()> {
    if cfg.tokens < 3 {
        return Err(Error::InvalidConfig("decode experiments need --tokens >= 3".into()));
    }
    Ok(())
}

fn argmax_compare(s: &Session, cfg: &RunConfig, r: &mut ResultRecord) -> Result<()> {
    need_tokens(cfg)?;
    let model = decoder(s, cfg)?;
    let prompt = seeded_prompt(cfg.seed, model.config().vocab);
    let variant = PipelineVariant::Fused;
    let forwards = (prompt.len() + cfg.tokens - 1) as u64;
    let ledger = model.ledger(variant);
    if cfg.warmup > 0 {
        model.generate(&s.ctx, variant, &prompt, 2, ArgmaxMode::Device)?;
    }
    let mut runs = Vec::new();
    for (mode, name) in [(ArgmaxMode::Readback, "readback"), (ArgmaxMode::Device, "device")] {
        let g = model.generate(&s.ctx, variant, &prompt, cfg.tokens, mode)?;
        let argmaxes = if mode == ArgmaxMode::Device {
            cfg.tokens as u64
        } else {
            0
        };
        check_dispatches(r, name, &g, forwards * ledger.total + argmaxes);
        r.add_series(&format!("{name}_per_token_ms"), "ms", steady_state(&g))?;
        r.derive(&format!("{name}_ttft_ms"), g.timing.ttft_ms)?;
        runs.push(g);
    }
    r.compare("readback_per_token_ms", "device_per_token_ms")?;
    let near_tie = s.ctx.executes_shaders() && runs[0].near_tie;
    if s.ctx.executes_shaders() && !near_tie && runs[0].tokens != runs[1].tokens {
        r.violation("readback and device argmax chose different tokens");
    }
    r.derive("readback_bytes_per_token", model.config().vocab * 4)?;
    r.derive("device_bytes_per_token", 4)?;
    r.derive("near_tie", near_tie)?;
    r.derive("tokens", &runs[0].tokens)?;
    Ok(())
}

fn toy_decode(s: &Session, cfg: &RunConfig, r: &mut ResultRecord) -> Result<()> {
    need_tokens(cfg)?;
    let model = decoder(s, cfg)?;
    let prompt = seeded_prompt(cfg.seed, model.config().vocab);
    let forwards = (prompt.len() + cfg.tokens - 1) as u64;
    if cfg.warmup > 0 {
        model.generate(&s.ctx, PipelineVariant::Fused, &prompt, 2, ArgmaxMode::Readback)?;
    }
    let mut generations = BTreeMap::new();
    let mut ledgers = BTreeMap::new();
    for variant in PipelineVariant::ALL {
        let name = variant.as_str();
        let ledger = model.ledger(variant);
        if model.plan_ledger(variant) != ledger {
            r.violation(format!("{name}: recorded plan disagrees with the analytic ledger"));
        }
        let g = model.generate(&s.ctx, variant, &prompt, cfg.tokens, ArgmaxMode::Readback)?;
        check_dispatches(r, name, &g, forwards * ledger.total);
        r.add_series(&format!("{name}_per_token_ms"), "ms", steady_state(&g))?;
        let sync: Vec<f64> = g
            .timing
            .per_token_ms
            .iter()
            .zip(&g.timing.t_forward_ms)
            .map(|(t, f)| sync_overhead(*t, *f).ms)
            .collect();
        r.add_series(&format!("{name}_sync_overhead_ms"), "ms", sync)?;
        ledgers.insert(name, ledger);
        generations.insert(name, g);
    }
    r.compare("unfused_per_token_ms", "fused_per_token_ms")?;
    r.compare("unfused_per_token_ms", "tiled_per_token_ms")?;

    let near_tie = s.ctx.executes_shaders() && generations.values().any(|g| g.near_tie);
    let reference = &generations["unfused"].tokens;
    if s.ctx.executes_shaders() && !near_tie && generations.values().any(|g| &g.tokens != reference) {
        r.violation("greedy tokens differ across pipeline variants");
    }
    if near_tie {
        r.warn("top-2 logit gap below 2e-4; token equality not enforced, reseed to compare");
    }
    let ttft: BTreeMap<&str, f64> = generations.iter().map(|(k, g)| (*k, g.timing.ttft_ms)).collect();
    let saved = ledgers["fused"].saved_vs_unfused as u64;
    let per_op = if saved > 0 {
        Some(derive_per_op_overhead(ttft["unfused"], ttft["fused"], saved)?)
    } else {
        None
    };
    r.derive("ttft_ms", &ttft)?;
    r.derive("ledgers", &ledgers)?;
    r.derive("per_op_overhead_us", per_op)?;
    r.derive("tokens", reference)?;
    r.derive("near_tie", near_tie)?;
    r.derive("model", model.config())?;
    Ok(())
}
