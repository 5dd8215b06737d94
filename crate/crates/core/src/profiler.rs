//! Wall-clock dispatch measurement: single-op, sequential and per-phase
//! timeline modes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{summarize, SummaryStats};

pub const MIN_SAMPLES: usize = 10;
pub const CV_WARN_PERCENT: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementMode {
    SingleOp,
    Sequential,
}

/// Raw post-warmup samples of one benchmark configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementBatch {
    pub mode: MeasurementMode,
    pub n_dispatches_per_sample: usize,
    pub warmup_runs: usize,
    /// Wall-clock microseconds per sample (a sample spans all its dispatches).
    pub samples_us: Vec<f64>,
    pub fresh_bind_groups: bool,
}

impl MeasurementBatch {
    pub fn new(
        mode: MeasurementMode,
        n_dispatches_per_sample: usize,
        warmup_runs: usize,
        samples_us: Vec<f64>,
        fresh_bind_groups: bool,
    ) -> Result<Self> {
        if samples_us.len() < MIN_SAMPLES {
            return Err(Error::TooFewSamples {
                needed: MIN_SAMPLES,
                got: samples_us.len(),
            });
        }
        if let Some(bad) = samples_us.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvariantViolation(format!("non-positive timing sample {bad}")));
        }
        if n_dispatches_per_sample == 0 {
            return Err(Error::InvalidConfig("n_dispatches_per_sample must be positive".into()));
        }
        Ok(Self {
            mode,
            n_dispatches_per_sample,
            warmup_runs,
            samples_us,
            fresh_bind_groups,
        })
    }

    pub fn per_dispatch_us(&self) -> Vec<f64> {
        let n = self.n_dispatches_per_sample as f64;
        self.samples_us.iter().map(|s| s / n).collect()
    }

    /// Statistics of the per-dispatch cost.
    pub fn summary(&self) -> Result<SummaryStats> {
        summarize(&self.per_dispatch_us())
    }
}

/// Logs a warning when post-warmup variation exceeds 5%.
pub fn warn_if_unstable(label: &str, stats: &SummaryStats) {
    if let Some(cv) = stats.cv_percent {
        if cv > CV_WARN_PERCENT {
            log::warn!("{label}: CV {cv:.1}% exceeds {CV_WARN_PERCENT}% (machine not idle?)");
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    EncoderCreate,
    PassBegin,
    SetPipeline,
    SetBindGroup,
    DispatchCall,
    PassEnd,
    EncoderFinish,
    Submit,
}

impl Phase {
    pub const ALL: [Phase; 8] = [
        Phase::EncoderCreate,
        Phase::PassBegin,
        Phase::SetPipeline,
        Phase::SetBindGroup,
        Phase::DispatchCall,
        Phase::PassEnd,
        Phase::EncoderFinish,
        Phase::Submit,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: Phase,
    /// Mean microseconds per dispatch.
    pub mean_us: f64,
    pub total_us: f64,
    /// Share of the per-dispatch CPU total.
    pub fraction: f64,
}

/// Per-phase CPU cost of N sequential dispatches with one trailing wait.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineBreakdown {
    pub n_dispatches: usize,
    pub phases: Vec<PhaseTiming>,
    /// Span from the first encoder creation to the return of the last submit.
    pub total_cpu_us: f64,
    /// `total_cpu_us` plus the trailing wait.
    pub wall_clock_us: f64,
    pub gpu_sync_us: f64,
    pub dominant_phase: Phase,
    pub clock: ClockCalibration,
}

impl TimelineBreakdown {
    /// Builds the breakdown from per-dispatch phase durations.
    pub fn from_durations(
        per_dispatch: &[[f64; 8]],
        total_cpu_us: f64,
        gpu_sync_us: f64,
        clock: ClockCalibration,
    ) -> Result<Self> {
        let n = per_dispatch.len();
        if n == 0 {
            return Err(Error::InvalidConfig("timeline needs at least one dispatch".into()));
        }
        let mut totals = [0.0f64; 8];
        for d in per_dispatch {
            for (t, v) in totals.iter_mut().zip(d) {
                *t += v;
            }
        }
        let sum: f64 = totals.iter().sum();
        let phases: Vec<PhaseTiming> = Phase::ALL
            .iter()
            .zip(totals)
            .map(|(phase, total)| PhaseTiming {
                phase: *phase,
                mean_us: total / n as f64,
                total_us: total,
                fraction: if sum > 0.0 { total / sum } else { 0.0 },
            })
            .collect();
        let dominant_phase = phases
            .iter()
            .max_by(|a, b| a.total_us.total_cmp(&b.total_us))
            .map(|p| p.phase)
            .unwrap_or(Phase::Submit);
        Ok(Self {
            n_dispatches: n,
            phases,
            total_cpu_us,
            wall_clock_us: total_cpu_us + gpu_sync_us,
            gpu_sync_us,
            dominant_phase,
            clock,
        })
    }

    pub fn phase(&self, phase: Phase) -> &PhaseTiming {
        self.phases
            .iter()
            .find(|p| p.phase == phase)
            .expect("all phases present")
    }

    pub fn phase_sum_us(&self) -> f64 {
        self.phases.iter().map(|p| p.total_us).sum()
    }

    /// Relative gap between the phase sum and `total_cpu_us`.
    pub fn accounting_error(&self) -> f64 {
        if self.total_cpu_us == 0.0 {
            return 0.0;
        }
        (self.phase_sum_us() - self.total_cpu_us).abs() / self.total_cpu_us
    }

    pub fn submit_fraction(&self) -> f64 {
        self.phase(Phase::Submit).fraction
    }
}

/// Resolution and call overhead of the monotonic clock.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClockCalibration {
    /// Smallest nonzero step observed between consecutive reads.
    pub resolution_ns: u64,
    /// Mean cost of one clock read.
    pub overhead_ns: f64,
}

pub fn calibrate_clock() -> ClockCalibration {
    use std::time::Instant;
    const READS: usize = 10_000;
    let mut min_step = u64::MAX;
    let start = Instant::now();
    let mut prev = start;
    for _ in 0..READS {
        let now = Instant::now();
        let step = now.duration_since(prev).as_nanos() as u64;
        if step > 0 {
            min_step = min_step.min(step);
        }
        prev = now;
    }
    let overhead_ns = prev.duration_since(start).as_nanos() as f64 / READS as f64;
    ClockCalibration {
        resolution_ns: if min_step == u64::MAX { 0 } else { min_step },
        overhead_ns,
    }
}

/// Fails when the clock cannot resolve a microsecond.
pub fn require_fine_clock() -> Result<ClockCalibration> {
    let c = calibrate_clock();
    if c.resolution_ns == 0 || c.resolution_ns > 1000 {
        return Err(Error::ClockTooCoarse {
            resolution_ns: c.resolution_ns,
        });
    }
    Ok(c)
}

/// Runs `f` `warmup + runs` times and returns the last `runs` durations in us.
pub fn time_samples(runs: usize, warmup: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(runs);
    for i in 0..warmup + runs {
        let t0 = std::time::Instant::now();
        f()?;
        let us = t0.elapsed().as_secs_f64() * 1e6;
        if i >= warmup {
            out.push(us);
        }
    }
    Ok(out)
}

#[cfg(feature = "gpu")]
pub use gpu_impl::*;

#[cfg(feature = "gpu")]
mod gpu_impl {
    use std::time::Instant;

    use super::*;
    use crate::gpu::{BufferUsage, DeviceBuffer, GpuContext};
    use crate::kernels::{ElementwiseKind, Entry, KernelLibrary};
    use crate::tensor::HostTensor;

    /// A single-dispatch kernel with two output buffers used alternately, so
    /// consecutive dispatches never write the same memory.
    pub struct ProfilingKernel {
        pipeline: wgpu::ComputePipeline,
        layout: wgpu::BindGroupLayout,
        inputs: Vec<DeviceBuffer>,
        outputs: [DeviceBuffer; 2],
        params: wgpu::Buffer,
        token: wgpu::Buffer,
        dummy: wgpu::Buffer,
        workgroups: [u32; 3],
        reuse_bind_groups: bool,
        cached: [wgpu::BindGroup; 2],
    }

    impl ProfilingKernel {
        /// `out = a + b` over `len` elements (256 -> one workgroup).
        pub fn elementwise_add(ctx: &GpuContext, lib: &KernelLibrary, len: usize, seed: u64) -> Result<Self> {
            let entry = Entry::Elementwise(ElementwiseKind::Add);
            let a = ctx.upload(&HostTensor::random_uniform(vec![len], seed, -1.0, 1.0))?;
            let b = ctx.upload(&HostTensor::random_uniform(vec![len], seed ^ 1, -1.0, 1.0))?;
            let outputs = [
                ctx.create_buffer("profile.out0", vec![len], BufferUsage::STORAGE_IO)?,
                ctx.create_buffer("profile.out1", vec![len], BufferUsage::STORAGE_IO)?,
            ];
            let params = ctx.uniform("profile.params", [len as u32, 0, 0, 0, 0, 0, 0, 0]);
            let token = lib.zero_token().clone();
            let dummy = lib.dummy().clone();
            let layout = lib.layout(entry).clone();
            let pipeline = lib.pipeline(entry).clone();
            let workgroups = crate::gpu::grid_1d(len, 256, ctx.info().max_workgroups_per_dim);
            let make = |out: &DeviceBuffer| {
                create_bind_group(ctx, &layout, &[a.raw(), b.raw(), &dummy, out.raw(), &params, &token])
            };
            let cached = [make(&outputs[0]), make(&outputs[1])];
            Ok(Self {
                pipeline,
                layout,
                inputs: vec![a, b],
                outputs,
                params,
                token,
                dummy,
                workgroups,
                reuse_bind_groups: false,
                cached,
            })
        }

        pub fn with_reused_bind_groups(mut self, reuse: bool) -> Self {
            self.reuse_bind_groups = reuse;
            self
        }

        pub fn reuses_bind_groups(&self) -> bool {
            self.reuse_bind_groups
        }

        fn bind_group(&self, ctx: &GpuContext, i: usize) -> wgpu::BindGroup {
            if self.reuse_bind_groups {
                return self.cached[i % 2].clone();
            }
            create_bind_group(
                ctx,
                &self.layout,
                &[
                    self.inputs[0].raw(),
                    self.inputs[1].raw(),
                    &self.dummy,
                    self.outputs[i % 2].raw(),
                    &self.params,
                    &self.token,
                ],
            )
        }

        /// Encoder, pass, dispatch, finish, submit. No wait.
        fn submit_one(&self, ctx: &GpuContext, i: usize) {
            let mut encoder = ctx.encoder();
            {
                let mut pass = encoder.begin_compute_pass(&wgpu::ComputePassDescriptor {
                    label: None,
                    timestamp_writes: None,
                });
                let bg = self.bind_group(ctx, i);
                ctx.dispatch(&mut pass, &self.pipeline, &bg, self.workgroups);
            }
            ctx.submit(encoder);
        }

        pub fn output(&self, i: usize) -> &DeviceBuffer {
            &self.outputs[i % 2]
        }
    }

    fn create_bind_group(ctx: &GpuContext, layout: &wgpu::BindGroupLayout, res: &[&wgpu::Buffer]) -> wgpu::BindGroup {
        let entries: Vec<_> = res
            .iter()
            .enumerate()
            .map(|(i, b)| wgpu::BindGroupEntry {
                binding: i as u32,
                resource: b.as_entire_binding(),
            })
            .collect();
        ctx.device().create_bind_group(&wgpu::BindGroupDescriptor {
            label: None,
            layout,
            entries: &entries,
        })
    }

    fn check_runs(runs: usize) -> Result<()> {
        if runs < MIN_SAMPLES {
            return Err(Error::TooFewSamples {
                needed: MIN_SAMPLES,
                got: runs,
            });
        }
        Ok(())
    }

    /// Each sample: one dispatch, submit, block until idle.
    pub fn measure_single_op(
        ctx: &GpuContext,
        kernel: &ProfilingKernel,
        runs: usize,
        warmup: usize,
    ) -> Result<MeasurementBatch> {
        check_runs(runs)?;
        let mut i = 0;
        let samples = time_samples(runs, warmup, || {
            kernel.submit_one(ctx, i);
            i += 1;
            ctx.wait_idle()
        })?;
        let batch = MeasurementBatch::new(
            MeasurementMode::SingleOp,
            1,
            warmup,
            samples,
            !kernel.reuses_bind_groups(),
        )?;
        warn_if_unstable("single-op", &batch.summary()?);
        Ok(batch)
    }

    /// Each sample: `n_dispatches` encoder+submit cycles, one trailing wait.
    pub fn measure_sequential(
        ctx: &GpuContext,
        kernel: &ProfilingKernel,
        n_dispatches: usize,
        runs: usize,
        warmup: usize,
    ) -> Result<MeasurementBatch> {
        check_runs(runs)?;
        if n_dispatches == 0 {
            return Err(Error::InvalidConfig("n_dispatches must be positive".into()));
        }
        if n_dispatches < 30 {
            log::warn!("sequential mode with {n_dispatches} dispatches barely amortizes the trailing wait");
        }
        let samples = time_samples(runs, warmup, || {
            for i in 0..n_dispatches {
                kernel.submit_one(ctx, i);
            }
            ctx.wait_idle()
        })?;
        let batch = MeasurementBatch::new(
            MeasurementMode::Sequential,
            n_dispatches,
            warmup,
            samples,
            !kernel.reuses_bind_groups(),
        )?;
        warn_if_unstable("sequential", &batch.summary()?);
        Ok(batch)
    }

    /// Times each API phase of `n_dispatches` sequential dispatches.
    ///
    /// Consecutive phases share their boundary timestamp, so the phases of
    /// all dispatches tile the CPU span exactly.
    pub fn measure_timeline(
        ctx: &GpuContext,
        kernel: &ProfilingKernel,
        n_dispatches: usize,
    ) -> Result<TimelineBreakdown> {
        let clock = require_fine_clock()?;
        if n_dispatches == 0 {
            return Err(Error::InvalidConfig("n_dispatches must be positive".into()));
        }
        ctx.wait_idle()?;
        let mut durations = Vec::with_capacity(n_dispatches);
        let us = |a: Instant, b: Instant| b.duration_since(a).as_secs_f64() * 1e6;
        let start = Instant::now();
        let mut t = start;
        for i in 0..n_dispatches {
            let mut d = [0.0; 8];
            let mut encoder = ctx.encoder();
            let t1 = Instant::now();
            d[0] = us(t, t1);
            let mut pass = encoder.begin_compute_pass(&wgpu::ComputePassDescriptor {
                label: None,
                timestamp_writes: None,
            });
            let t2 = Instant::now();
            d[1] = us(t1, t2);
            pass.set_pipeline(&kernel.pipeline);
            let t3 = Instant::now();
            d[2] = us(t2, t3);
            let bg = kernel.bind_group(ctx, i);
            pass.set_bind_group(0, &bg, &[]);
            let t4 = Instant::now();
            d[3] = us(t3, t4);
            ctx.record_dispatch(&mut pass, kernel.workgroups);
            let t5 = Instant::now();
            d[4] = us(t4, t5);
            drop(pass);
            let t6 = Instant::now();
            d[5] = us(t5, t6);
            let cmd = encoder.finish();
            let t7 = Instant::now();
            d[6] = us(t6, t7);
            ctx.queue().submit(Some(cmd));
            let t8 = Instant::now();
            d[7] = us(t7, t8);
            durations.push(d);
            t = t8;
        }
        let cpu_end = t;
        ctx.wait_idle()?;
        let done = Instant::now();
        TimelineBreakdown::from_durations(&durations, us(start, cpu_end), us(cpu_end, done), clock)
    }
}
