use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpu::{BufferUsage, DeviceBuffer, GpuContext};
use crate::kernels::{ElementwiseKind, KernelLibrary, MatmulVariant, RmsNormVariant, Step, DEFAULT_RMSNORM_EPS};
use crate::oracle::{oracle_argmax, top2_gap};
use crate::stats::{summarize, SummaryStats};
use crate::tensor::HostTensor;

use super::{dispatch_ledger, DispatchLedger, ModelConfig, ModelWeights, PipelineVariant, TokenTiming};

/// Logit gap below which greedy argmax is considered ambiguous.
pub const NEAR_TIE: f32 = 2e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgmaxMode {
    /// Map the full logits buffer and take the argmax on the host.
    Readback,
    /// Run the argmax kernel and map 4 bytes.
    Device,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub tokens: Vec<u32>,
    pub timing: TokenTiming,
    /// Per-token latency statistics (absent for a single token).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stats: Option<SummaryStats>,
    /// Smallest top-2 logit gap (readback mode only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub min_top2_gap: Option<f32>,
    pub near_tie: bool,
    /// Dispatches submitted during the run.
    pub dispatches: u64,
}

struct Layer {
    attn_norm: DeviceBuffer,
    wq: DeviceBuffer,
    wk: DeviceBuffer,
    wv: DeviceBuffer,
    wo: DeviceBuffer,
    mlp_norm: DeviceBuffer,
    gate: DeviceBuffer,
    up: DeviceBuffer,
    down: DeviceBuffer,
    k_cache: DeviceBuffer,
    v_cache: DeviceBuffer,
}

struct Activations {
    residual: [DeviceBuffer; 2],
    mid: DeviceBuffer,
    normed: DeviceBuffer,
    q: DeviceBuffer,
    k: DeviceBuffer,
    v: DeviceBuffer,
    attn: DeviceBuffer,
    o: DeviceBuffer,
    gate: DeviceBuffer,
    up: DeviceBuffer,
    act: DeviceBuffer,
    down: DeviceBuffer,
    final_normed: DeviceBuffer,
}

/// Random-weight decoder resident on the GPU with a prebuilt dispatch plan
/// per pipeline variant.
pub struct ToyDecoder {
    cfg: ModelConfig,
    plans: HashMap<PipelineVariant, Vec<Step>>,
    token: wgpu::Buffer,
    logits: DeviceBuffer,
    argmax_out: DeviceBuffer,
    argmax_step: Step,
    logits_staging: wgpu::Buffer,
    argmax_staging: wgpu::Buffer,
}

impl ToyDecoder {
    /// Generates seeded weights for `cfg` and uploads them.
    pub fn build_model(ctx: &GpuContext, lib: &KernelLibrary, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let limit = ctx
            .limits()
            .max_storage_buffer_binding_size
            .min(ctx.limits().max_buffer_size);
        if cfg.largest_tensor_bytes() > limit {
            return Err(Error::OutOfMemory {
                required: cfg.largest_tensor_bytes(),
                limit,
            });
        }
        let weights = ModelWeights::generate(cfg)?;
        Self::from_weights(ctx, lib, &weights)
    }

    pub fn from_weights(ctx: &GpuContext, lib: &KernelLibrary, w: &ModelWeights) -> Result<Self> {
        let cfg = w.config.clone();
        cfg.validate()?;
        let (h, i, kv) = (cfg.hidden, cfg.intermediate, cfg.kv_dim);
        let io = BufferUsage::STORAGE_IO;
        let buf = |name: &str, n: usize| ctx.create_buffer(name, vec![1, n], io);

        let embedding = ctx.upload_labeled("embedding", &w.embedding)?;
        let final_norm = ctx.upload_labeled("final_norm", &w.final_norm)?;
        let layers = w
            .layers
            .iter()
            .map(|lw| {
                Ok(Layer {
                    attn_norm: ctx.upload_labeled("attn_norm", &lw.attn_norm)?,
                    wq: ctx.upload_labeled("wq", &lw.wq)?,
                    wk: ctx.upload_labeled("wk", &lw.wk)?,
                    wv: ctx.upload_labeled("wv", &lw.wv)?,
                    wo: ctx.upload_labeled("wo", &lw.wo)?,
                    mlp_norm: ctx.upload_labeled("mlp_norm", &lw.mlp_norm)?,
                    gate: ctx.upload_labeled("gate", &lw.gate)?,
                    up: ctx.upload_labeled("up", &lw.up)?,
                    down: ctx.upload_labeled("down", &lw.down)?,
                    k_cache: ctx.create_buffer("k_cache", vec![cfg.kv_capacity, kv], io)?,
                    v_cache: ctx.create_buffer("v_cache", vec![cfg.kv_capacity, kv], io)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let acts = Activations {
            residual: [buf("residual0", h)?, buf("residual1", h)?],
            mid: buf("mid", h)?,
            normed: buf("normed", h)?,
            q: buf("q", h)?,
            k: buf("k", kv)?,
            v: buf("v", kv)?,
            attn: buf("attn", h)?,
            o: buf("o", h)?,
            gate: buf("gate_out", i)?,
            up: buf("up_out", i)?,
            act: buf("act", i)?,
            down: buf("down_out", h)?,
            final_normed: buf("final_normed", h)?,
        };
        let logits = buf("logits", cfg.vocab)?;
        let argmax_out = ctx.create_buffer("argmax", vec![1], io)?;
        let token = ctx.uniform("token", [0; 8]);

        let mut plans = HashMap::new();
        for variant in PipelineVariant::ALL {
            let plan = build_plan(
                ctx,
                lib,
                &cfg,
                variant,
                &embedding,
                &final_norm,
                &layers,
                &acts,
                &logits,
                &token,
            )?;
            plans.insert(variant, plan);
        }
        let argmax_step = lib.argmax_step(ctx, logits.raw(), argmax_out.raw(), cfg.vocab)?;
        let staging = |label: &str, bytes: u64| {
            ctx.device().create_buffer(&wgpu::BufferDescriptor {
                label: Some(label),
                size: bytes,
                usage: BufferUsage::READBACK.to_wgpu(),
                mapped_at_creation: false,
            })
        };
        let logits_staging = staging("logits.staging", logits.byte_length());
        let argmax_staging = staging("argmax.staging", 4);
        ctx.check()?;
        Ok(Self {
            cfg,
            plans,
            token,
            logits,
            argmax_out,
            argmax_step,
            logits_staging,
            argmax_staging,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn plan(&self, variant: PipelineVariant) -> &[Step] {
        &self.plans[&variant]
    }

    /// Ledger tallied from the steps the plan actually records.
    pub fn plan_ledger(&self, variant: PipelineVariant) -> DispatchLedger {
        let unfused = self.plans[&PipelineVariant::Unfused].len() as u64;
        DispatchLedger::from_categories(
            Some(variant),
            variant.fusions(),
            self.plan(variant).iter().map(|s| s.entry.category()),
            unfused,
        )
    }

    /// Analytic ledger of this model's configuration.
    pub fn ledger(&self, variant: PipelineVariant) -> DispatchLedger {
        dispatch_ledger(&self.cfg, variant)
    }

    /// Records and submits one forward pass for `token` at `pos`. Does not
    /// wait; logits land in the device logits buffer.
    pub fn forward(
        &self,
        ctx: &GpuContext,
        variant: PipelineVariant,
        token: u32,
        pos: usize,
    ) -> Result<DispatchLedger> {
        if token as usize >= self.cfg.vocab {
            return Err(Error::InvalidConfig(format!(
                "token {token} outside vocab {}",
                self.cfg.vocab
            )));
        }
        let cap = self.cfg.kv_capacity;
        let slot = (pos % cap) as u32;
        let attn_len = (pos + 1).min(cap) as u32;
        ctx.write_uniform(&self.token, [token, slot, attn_len, 0, 0, 0, 0, 0]);
        let mut encoder = ctx.encoder();
        for step in self.plan(variant) {
            step.encode(ctx, &mut encoder);
        }
        ctx.submit(encoder);
        ctx.check()?;
        Ok(self.ledger(variant))
    }

    /// Reads the full logits buffer.
    pub fn read_logits(&self, ctx: &GpuContext) -> Result<HostTensor> {
        ctx.download(&self.logits)
    }

    /// Forced per-token sync: returns the chosen token and, in readback
    /// mode, the top-2 logit gap.
    fn select(&self, ctx: &GpuContext, mode: ArgmaxMode) -> Result<(u32, Option<f32>)> {
        let mut encoder = ctx.encoder();
        match mode {
            ArgmaxMode::Readback => {
                let len = self.logits.byte_length();
                encoder.copy_buffer_to_buffer(self.logits.raw(), 0, &self.logits_staging, 0, len);
                ctx.submit(encoder);
                let bytes = ctx.map_staging(&self.logits_staging, len)?;
                let logits: Vec<f32> = bytemuck::pod_collect_to_vec(&bytes);
                Ok((oracle_argmax(&logits)? as u32, top2_gap(&logits)))
            }
            ArgmaxMode::Device => {
                self.argmax_step.encode(ctx, &mut encoder);
                encoder.copy_buffer_to_buffer(self.argmax_out.raw(), 0, &self.argmax_staging, 0, 4);
                ctx.submit(encoder);
                let bytes = ctx.map_staging(&self.argmax_staging, 4)?;
                Ok((u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]), None))
            }
        }
    }

    /// Greedy decode of `n_tokens` after prefilling `prompt` token by token.
    ///
    /// `per_token_ms[0]` is the time to first token (prefill, wait and
    /// argmax); later entries span forward, wait and argmax of one token.
    /// `t_forward_ms` stops at the queue wait.
    pub fn generate(
        &self,
        ctx: &GpuContext,
        variant: PipelineVariant,
        prompt: &[u32],
        n_tokens: usize,
        mode: ArgmaxMode,
    ) -> Result<Generation> {
        if n_tokens == 0 || prompt.is_empty() {
            return Err(Error::InvalidConfig("generate needs a prompt and n_tokens >= 1".into()));
        }
        let ms = |a: Instant, b: Instant| b.duration_since(a).as_secs_f64() * 1e3;
        let dispatches_before = ctx.dispatch_count();
        let mut tokens = Vec::with_capacity(n_tokens);
        let mut per_token = Vec::with_capacity(n_tokens);
        let mut t_forward = Vec::with_capacity(n_tokens);
        let mut min_gap: Option<f32> = None;

        ctx.wait_idle()?;
        let start = Instant::now();
        for (pos, t) in prompt.iter().enumerate() {
            self.forward(ctx, variant, *t, pos)?;
        }
        let mut pos = prompt.len();
        let mut t0 = start;
        loop {
            ctx.wait_idle()?;
            let t1 = Instant::now();
            let (next, gap) = self.select(ctx, mode)?;
            let t2 = Instant::now();
            per_token.push(ms(t0, t2));
            t_forward.push(ms(t0, t1));
            if let Some(g) = gap {
                min_gap = Some(min_gap.map_or(g, |m| m.min(g)));
            }
            tokens.push(next);
            if tokens.len() == n_tokens {
                break;
            }
            t0 = Instant::now();
            self.forward(ctx, variant, next, pos)?;
            pos += 1;
        }
        let timing = TokenTiming::from_series(per_token, t_forward)?;
        let stats = if timing.per_token_ms.len() >= 2 {
            Some(summarize(&timing.per_token_ms)?)
        } else {
            None
        };
        Ok(Generation {
            tokens,
            timing,
            stats,
            near_tie: min_gap.is_some_and(|g| g < NEAR_TIE),
            min_top2_gap: min_gap,
            dispatches: ctx.dispatch_count() - dispatches_before,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn build_plan(
    ctx: &GpuContext,
    lib: &KernelLibrary,
    cfg: &ModelConfig,
    variant: PipelineVariant,
    embedding: &DeviceBuffer,
    final_norm: &DeviceBuffer,
    layers: &[Layer],
    a: &Activations,
    logits: &DeviceBuffer,
    token: &wgpu::Buffer,
) -> Result<Vec<Step>> {
    let f = variant.fusions();
    let (h, i, kv) = (cfg.hidden, cfg.intermediate, cfg.kv_dim);
    let eps = DEFAULT_RMSNORM_EPS;
    let mm = MatmulVariant::MatmulTiled16;
    let norm = if f.rmsnorm {
        RmsNormVariant::RmsnormFused
    } else {
        RmsNormVariant::RmsnormUnfusedChain
    };
    let d = lib.dummy();
    let ew = |kind, inputs, out: &DeviceBuffer, len, width| {
        lib.elementwise_step(ctx, kind, inputs, out.raw(), len, width, Some(token))
    };

    let mut steps = vec![ew(
        ElementwiseKind::Embed,
        [embedding.raw(), d, d],
        &a.residual[0],
        h,
        h,
    )?];
    let mut cur = 0;
    for l in layers {
        let inp = &a.residual[cur];
        let out = &a.residual[1 - cur];
        steps.extend(lib.rmsnorm_steps(ctx, norm, inp.raw(), l.attn_norm.raw(), a.normed.raw(), 1, h, eps)?);
        steps.push(lib.matmul_step(ctx, mm, a.normed.raw(), l.wq.raw(), a.q.raw(), (1, h, h), true, None)?);
        if f.kv_proj {
            steps.push(lib.kv_fused_step(
                ctx,
                a.normed.raw(),
                l.wk.raw(),
                l.wv.raw(),
                a.k.raw(),
                a.v.raw(),
                (1, h, kv),
            )?);
        } else {
            steps.push(lib.matmul_step(ctx, mm, a.normed.raw(), l.wk.raw(), a.k.raw(), (1, h, kv), true, None)?);
            steps.push(lib.matmul_step(ctx, mm, a.normed.raw(), l.wv.raw(), a.v.raw(), (1, h, kv), true, None)?);
        }
        steps.push(ew(ElementwiseKind::CopyToSlot, [a.k.raw(), d, d], &l.k_cache, kv, kv)?);
        steps.push(ew(ElementwiseKind::CopyToSlot, [a.v.raw(), d, d], &l.v_cache, kv, kv)?);
        steps.push(ew(
            ElementwiseKind::AttentionStandIn,
            [a.q.raw(), l.k_cache.raw(), l.v_cache.raw()],
            &a.attn,
            h,
            kv,
        )?);
        steps.push(lib.matmul_step(ctx, mm, a.attn.raw(), l.wo.raw(), a.o.raw(), (1, h, h), true, None)?);
        steps.push(ew(ElementwiseKind::Add, [inp.raw(), a.o.raw(), d], &a.mid, h, 0)?);
        steps.extend(lib.rmsnorm_steps(ctx, norm, a.mid.raw(), l.mlp_norm.raw(), a.normed.raw(), 1, h, eps)?);
        if f.gate_up_silu {
            steps.push(lib.gate_up_silu_step(ctx, a.normed.raw(), l.gate.raw(), l.up.raw(), a.act.raw(), (1, h, i))?);
        } else {
            steps.push(lib.matmul_step(
                ctx,
                mm,
                a.normed.raw(),
                l.gate.raw(),
                a.gate.raw(),
                (1, h, i),
                true,
                None,
            )?);
            steps.push(lib.matmul_step(ctx, mm, a.normed.raw(), l.up.raw(), a.up.raw(), (1, h, i), true, None)?);
            steps.push(ew(
                ElementwiseKind::SiluMul,
                [a.gate.raw(), a.up.raw(), d],
                &a.act,
                i,
                0,
            )?);
        }
        if f.down_residual {
            steps.push(lib.matmul_step(
                ctx,
                mm,
                a.act.raw(),
                l.down.raw(),
                out.raw(),
                (1, i, h),
                true,
                Some(a.mid.raw()),
            )?);
        } else {
            steps.push(lib.matmul_step(ctx, mm, a.act.raw(), l.down.raw(), a.down.raw(), (1, i, h), true, None)?);
            steps.push(ew(ElementwiseKind::Add, [a.mid.raw(), a.down.raw(), d], out, h, 0)?);
        }
        cur = 1 - cur;
    }
    steps.extend(lib.rmsnorm_steps(
        ctx,
        RmsNormVariant::RmsnormUnfusedChain,
        a.residual[cur].raw(),
        final_norm.raw(),
        a.final_normed.raw(),
        1,
        h,
        eps,
    )?);
    steps.push(lib.matmul_step(
        ctx,
        mm,
        a.final_normed.raw(),
        embedding.raw(),
        logits.raw(),
        (1, h, cfg.vocab),
        true,
        None,
    )?);
    Ok(steps)
}
