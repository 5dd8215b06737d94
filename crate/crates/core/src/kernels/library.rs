use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::gpu::{grid_1d, BufferUsage, DeviceBuffer, GpuContext};
use crate::oracle::MlpWeights;
use crate::tensor::HostTensor;

use super::shaders::ShaderFile;
use super::variant::{
    ElementwiseKind, KernelVariant, MatmulVariant, MlpVariant, OpCategory, RmsNormParams, RmsNormVariant,
    SoftmaxVariant,
};

pub const MEGA_MAX_HIDDEN: usize = 1024;
pub const MEGA_MAX_INTERMEDIATE: usize = 2048;
/// Weight elements one 256-thread workgroup streams per projection before the
/// run risks a driver watchdog reset.
pub const MEGA_MAX_WEIGHTS: usize = 1 << 20;

const TILE: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Binding {
    Read,
    ReadWrite,
    Uniform,
}

use Binding::{Read as R, ReadWrite as W, Uniform as U};

/// One compute entry point of one shader file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Entry {
    MatmulNaive,
    MatmulTiled,
    MatmulTiledResidual,
    KvFusedProj,
    RmsnormFused,
    RmsSquare,
    RmsRowMean,
    RmsAddEps,
    RmsRsqrt,
    RmsMulRowScale,
    RmsMulWeight,
    GateUpSilu,
    MegaMlp,
    SoftmaxNaive,
    SoftmaxParallel,
    Argmax,
    Elementwise(ElementwiseKind),
}

impl Entry {
    pub fn all() -> Vec<Entry> {
        let mut v = vec![
            Entry::MatmulNaive,
            Entry::MatmulTiled,
            Entry::MatmulTiledResidual,
            Entry::KvFusedProj,
            Entry::RmsnormFused,
            Entry::RmsSquare,
            Entry::RmsRowMean,
            Entry::RmsAddEps,
            Entry::RmsRsqrt,
            Entry::RmsMulRowScale,
            Entry::RmsMulWeight,
            Entry::GateUpSilu,
            Entry::MegaMlp,
            Entry::SoftmaxNaive,
            Entry::SoftmaxParallel,
            Entry::Argmax,
        ];
        v.extend(ElementwiseKind::ALL.map(Entry::Elementwise));
        v
    }

    pub fn file(self) -> ShaderFile {
        match self {
            Entry::MatmulNaive => ShaderFile::MatmulNaive,
            Entry::MatmulTiled | Entry::MatmulTiledResidual => ShaderFile::MatmulTiled16,
            Entry::KvFusedProj => ShaderFile::KvFusedProj,
            Entry::RmsnormFused => ShaderFile::RmsnormFused,
            Entry::RmsSquare
            | Entry::RmsRowMean
            | Entry::RmsAddEps
            | Entry::RmsRsqrt
            | Entry::RmsMulRowScale
            | Entry::RmsMulWeight => ShaderFile::RmsnormUnfusedChain,
            Entry::GateUpSilu => ShaderFile::MlpFusedGateUpSilu,
            Entry::MegaMlp => ShaderFile::MegaMlp1,
            Entry::SoftmaxNaive => ShaderFile::SoftmaxNaive,
            Entry::SoftmaxParallel => ShaderFile::SoftmaxParallel256,
            Entry::Argmax => ShaderFile::ArgmaxDevice,
            Entry::Elementwise(_) => ShaderFile::Elementwise,
        }
    }

    pub fn entry_point(self) -> &'static str {
        match self {
            Entry::MatmulTiledResidual => "main_residual",
            Entry::RmsSquare => "square",
            Entry::RmsRowMean => "row_mean",
            Entry::RmsAddEps => "add_eps",
            Entry::RmsRsqrt => "rsqrt",
            Entry::RmsMulRowScale => "mul_row_scale",
            Entry::RmsMulWeight => "mul_weight",
            Entry::Elementwise(kind) => kind.entry_point(),
            _ => "main",
        }
    }

    fn bindings(self) -> &'static [Binding] {
        match self {
            Entry::MatmulNaive | Entry::MatmulTiled => &[R, R, W, U],
            Entry::MatmulTiledResidual => &[R, R, W, U, R],
            Entry::KvFusedProj => &[R, R, R, W, W, U],
            Entry::RmsnormFused => &[R, R, W, U],
            Entry::RmsSquare
            | Entry::RmsRowMean
            | Entry::RmsAddEps
            | Entry::RmsRsqrt
            | Entry::RmsMulRowScale
            | Entry::RmsMulWeight => &[R, R, W, W, W, U],
            Entry::GateUpSilu => &[R, R, R, W, U],
            Entry::MegaMlp => &[R, R, R, R, R, W, U],
            Entry::SoftmaxNaive | Entry::SoftmaxParallel | Entry::Argmax => &[R, W, U],
            Entry::Elementwise(_) => &[R, R, R, W, U, U],
        }
    }

    /// Ledger bucket of one dispatch of this entry.
    pub fn category(self) -> OpCategory {
        match self {
            Entry::MatmulNaive | Entry::MatmulTiled | Entry::MatmulTiledResidual | Entry::KvFusedProj => {
                OpCategory::Matmul
            }
            Entry::RmsnormFused
            | Entry::RmsSquare
            | Entry::RmsRowMean
            | Entry::RmsAddEps
            | Entry::RmsRsqrt
            | Entry::RmsMulRowScale
            | Entry::RmsMulWeight => OpCategory::Rmsnorm,
            Entry::GateUpSilu => OpCategory::Matmul,
            Entry::MegaMlp => OpCategory::Matmul,
            Entry::SoftmaxNaive | Entry::SoftmaxParallel => OpCategory::Other,
            Entry::Argmax => OpCategory::Argmax,
            Entry::Elementwise(ElementwiseKind::Embed | ElementwiseKind::AttentionStandIn) => OpCategory::Other,
            Entry::Elementwise(_) => OpCategory::Elementwise,
        }
    }
}

/// One recorded dispatch: pipeline, bound resources and grid.
#[derive(Clone, Debug)]
pub struct Step {
    pub entry: Entry,
    pub pipeline: wgpu::ComputePipeline,
    pub bind_group: wgpu::BindGroup,
    pub workgroups: [u32; 3],
}

impl Step {
    /// Records the step as its own compute pass.
    pub fn encode(&self, ctx: &GpuContext, encoder: &mut wgpu::CommandEncoder) {
        let mut pass = encoder.begin_compute_pass(&wgpu::ComputePassDescriptor {
            label: None,
            timestamp_writes: None,
        });
        ctx.dispatch(&mut pass, &self.pipeline, &self.bind_group, self.workgroups);
    }
}

/// A kernel variant with all inputs resident and outputs allocated, ready to
/// be replayed.
#[derive(Debug)]
pub struct PreparedOp {
    pub variant: KernelVariant,
    steps: Vec<Step>,
    outputs: Vec<DeviceBuffer>,
}

impl PreparedOp {
    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn dispatch_count(&self) -> usize {
        self.steps.len()
    }

    pub fn output(&self, i: usize) -> &DeviceBuffer {
        &self.outputs[i]
    }

    pub fn encode(&self, ctx: &GpuContext, encoder: &mut wgpu::CommandEncoder) {
        for step in &self.steps {
            step.encode(ctx, encoder);
        }
    }

    /// Encode, submit and wait.
    pub fn run(&self, ctx: &GpuContext) -> Result<()> {
        let mut encoder = ctx.encoder();
        self.encode(ctx, &mut encoder);
        ctx.submit(encoder);
        ctx.wait_idle()
    }
}

/// MLP block weights resident on the device.
#[derive(Debug)]
pub struct MlpDeviceWeights {
    pub norm: DeviceBuffer,
    pub gate: DeviceBuffer,
    pub up: DeviceBuffer,
    pub down: DeviceBuffer,
    pub hidden: usize,
    pub intermediate: usize,
    pub eps: f64,
}

impl MlpDeviceWeights {
    pub fn upload(ctx: &GpuContext, w: &MlpWeights) -> Result<Self> {
        w.validate()?;
        Ok(Self {
            norm: ctx.upload_labeled("mlp.norm", &w.norm)?,
            gate: ctx.upload_labeled("mlp.gate", &w.gate)?,
            up: ctx.upload_labeled("mlp.up", &w.up)?,
            down: ctx.upload_labeled("mlp.down", &w.down)?,
            hidden: w.hidden(),
            intermediate: w.intermediate(),
            eps: w.eps,
        })
    }
}

struct Kernel {
    pipeline: wgpu::ComputePipeline,
    layout: wgpu::BindGroupLayout,
}

/// Compiled pipelines for every entry point, plus shared dummy resources.
pub struct KernelLibrary {
    kernels: HashMap<Entry, Kernel>,
    dummy: wgpu::Buffer,
    zero_token: wgpu::Buffer,
}

fn words(vals: &[u32]) -> [u32; 8] {
    let mut w = [0u32; 8];
    w[..vals.len()].copy_from_slice(vals);
    w
}

fn u32_dim(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidConfig(format!("{what} = {v} exceeds u32")))
}

fn check_cols(t: &HostTensor, cols: usize, what: &str) -> Result<()> {
    if t.shape().len() != 2 || t.cols() != cols {
        return Err(Error::DimsMismatch(format!(
            "{what}: expected [_, {cols}], got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

impl KernelLibrary {
    pub fn new(ctx: &GpuContext) -> Result<Self> {
        let device = ctx.device();
        let mut modules = HashMap::new();
        for file in ShaderFile::ALL {
            let module = ctx.validated(|| {
                device.create_shader_module(wgpu::ShaderModuleDescriptor {
                    label: Some(file.file_name()),
                    source: wgpu::ShaderSource::Wgsl(file.source().into()),
                })
            })?;
            modules.insert(file, module);
        }

        let mut layouts: HashMap<&'static [Binding], wgpu::BindGroupLayout> = HashMap::new();
        let mut kernels = HashMap::new();
        for entry in Entry::all() {
            let sig = entry.bindings();
            let layout = layouts
                .entry(sig)
                .or_insert_with(|| {
                    let entries: Vec<_> = sig
                        .iter()
                        .enumerate()
                        .map(|(i, b)| wgpu::BindGroupLayoutEntry {
                            binding: i as u32,
                            visibility: wgpu::ShaderStages::COMPUTE,
                            ty: match b {
                                Binding::Uniform => wgpu::BindingType::Buffer {
                                    ty: wgpu::BufferBindingType::Uniform,
                                    has_dynamic_offset: false,
                                    min_binding_size: None,
                                },
                                Binding::Read | Binding::ReadWrite => wgpu::BindingType::Buffer {
                                    ty: wgpu::BufferBindingType::Storage {
                                        read_only: *b == Binding::Read,
                                    },
                                    has_dynamic_offset: false,
                                    min_binding_size: None,
                                },
                            },
                            count: None,
                        })
                        .collect();
                    device.create_bind_group_layout(&wgpu::BindGroupLayoutDescriptor {
                        label: None,
                        entries: &entries,
                    })
                })
                .clone();
            let pipeline_layout = device.create_pipeline_layout(&wgpu::PipelineLayoutDescriptor {
                label: None,
                bind_group_layouts: &[Some(&layout)],
                immediate_size: 0,
            });
            let pipeline = ctx
                .validated(|| {
                    device.create_compute_pipeline(&wgpu::ComputePipelineDescriptor {
                        label: Some(entry.entry_point()),
                        layout: Some(&pipeline_layout),
                        module: &modules[&entry.file()],
                        entry_point: Some(entry.entry_point()),
                        compilation_options: Default::default(),
                        cache: None,
                    })
                })
                .map_err(|e| Error::Gpu(format!("{}::{}: {e}", entry.file().file_name(), entry.entry_point())))?;
            kernels.insert(entry, Kernel { pipeline, layout });
        }

        let dummy = device.create_buffer(&wgpu::BufferDescriptor {
            label: Some("dummy"),
            size: 16,
            usage: wgpu::BufferUsages::STORAGE,
            mapped_at_creation: false,
        });
        let zero_token = ctx.uniform("token.zero", [0; 8]);
        ctx.check()?;
        Ok(Self {
            kernels,
            dummy,
            zero_token,
        })
    }

    pub fn pipeline(&self, entry: Entry) -> &wgpu::ComputePipeline {
        &self.kernels[&entry].pipeline
    }

    pub fn layout(&self, entry: Entry) -> &wgpu::BindGroupLayout {
        &self.kernels[&entry].layout
    }

    /// Storage buffer for bindings an entry point ignores.
    pub fn dummy(&self) -> &wgpu::Buffer {
        &self.dummy
    }

    /// All-zero per-token uniform for elementwise entries outside a decode loop.
    pub fn zero_token(&self) -> &wgpu::Buffer {
        &self.zero_token
    }

    /// Bind group for `entry` with `resources` in binding order.
    pub fn bind_group(&self, ctx: &GpuContext, entry: Entry, resources: &[&wgpu::Buffer]) -> wgpu::BindGroup {
        assert_eq!(
            resources.len(),
            entry.bindings().len(),
            "{entry:?} takes {} bindings",
            entry.bindings().len()
        );
        let entries: Vec<_> = resources
            .iter()
            .enumerate()
            .map(|(i, b)| wgpu::BindGroupEntry {
                binding: i as u32,
                resource: b.as_entire_binding(),
            })
            .collect();
        ctx.device().create_bind_group(&wgpu::BindGroupDescriptor {
            label: None,
            layout: self.layout(entry),
            entries: &entries,
        })
    }

    pub fn step(&self, ctx: &GpuContext, entry: Entry, resources: &[&wgpu::Buffer], workgroups: [u32; 3]) -> Step {
        Step {
            entry,
            pipeline: self.pipeline(entry).clone(),
            bind_group: self.bind_group(ctx, entry, resources),
            workgroups,
        }
    }

    fn max_groups(ctx: &GpuContext) -> u32 {
        ctx.info().max_workgroups_per_dim.max(1)
    }

    fn check_groups(ctx: &GpuContext, groups: [u32; 3]) -> Result<[u32; 3]> {
        let max = Self::max_groups(ctx);
        if groups.iter().any(|g| *g > max) {
            return Err(Error::InvalidConfig(format!(
                "workgroup grid {groups:?} exceeds device limit {max} per dimension"
            )));
        }
        Ok(groups)
    }

    // ---- step builders (device buffers in, device buffers out) ----

    /// `out[m, n] = a[m, k] · B`, with `B` stored `[k, n]` or, when
    /// `b_transposed`, `[n, k]`. `residual` is added on store (tiled only).
    #[allow(clippy::too_many_arguments)]
    pub fn matmul_step(
        &self,
        ctx: &GpuContext,
        variant: MatmulVariant,
        a: &wgpu::Buffer,
        b: &wgpu::Buffer,
        out: &wgpu::Buffer,
        (m, k, n): (usize, usize, usize),
        b_transposed: bool,
        residual: Option<&wgpu::Buffer>,
    ) -> Result<Step> {
        let params = ctx.uniform(
            "matmul.params",
            words(&[
                u32_dim(m, "m")?,
                u32_dim(k, "k")?,
                u32_dim(n, "n")?,
                b_transposed as u32,
            ]),
        );
        let groups = Self::check_groups(ctx, [(n as u32).div_ceil(TILE), (m as u32).div_ceil(TILE), 1])?;
        let step = match (variant, residual) {
            (MatmulVariant::MatmulNaive, None) => self.step(ctx, Entry::MatmulNaive, &[a, b, out, &params], groups),
            (MatmulVariant::MatmulTiled16, None) => self.step(ctx, Entry::MatmulTiled, &[a, b, out, &params], groups),
            (MatmulVariant::MatmulTiled16, Some(r)) => {
                self.step(ctx, Entry::MatmulTiledResidual, &[a, b, out, &params, r], groups)
            }
            (MatmulVariant::MatmulNaive, Some(_)) => {
                return Err(Error::InvalidConfig("residual matmul is only available tiled".into()))
            }
        };
        Ok(step)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn rmsnorm_steps(
        &self,
        ctx: &GpuContext,
        variant: RmsNormVariant,
        x: &wgpu::Buffer,
        weight: &wgpu::Buffer,
        out: &wgpu::Buffer,
        rows: usize,
        hidden: usize,
        eps: f64,
    ) -> Result<Vec<Step>> {
        let p = words(&[
            u32_dim(rows, "rows")?,
            u32_dim(hidden, "hidden")?,
            (eps as f32).to_bits(),
        ]);
        let params = ctx.uniform("rmsnorm.params", p);
        let row_groups = Self::check_groups(ctx, [rows as u32, 1, 1])?;
        match variant {
            RmsNormVariant::RmsnormFused => Ok(vec![self.step(
                ctx,
                Entry::RmsnormFused,
                &[x, weight, out, &params],
                row_groups,
            )]),
            RmsNormVariant::RmsnormUnfusedChain => {
                let tmp = ctx.create_buffer("rmsnorm.tmp", vec![rows, hidden], BufferUsage::STORAGE_IO)?;
                let stat = ctx.create_buffer("rmsnorm.stat", vec![rows], BufferUsage::STORAGE_IO)?;
                let res: [&wgpu::Buffer; 6] = [x, weight, tmp.raw(), stat.raw(), out, &params];
                let max = Self::max_groups(ctx);
                let elems = grid_1d(rows * hidden, 256, max);
                let per_row = grid_1d(rows, 256, max);
                Ok(vec![
                    self.step(ctx, Entry::RmsSquare, &res, elems),
                    self.step(ctx, Entry::RmsRowMean, &res, row_groups),
                    self.step(ctx, Entry::RmsAddEps, &res, per_row),
                    self.step(ctx, Entry::RmsRsqrt, &res, per_row),
                    self.step(ctx, Entry::RmsMulRowScale, &res, elems),
                    self.step(ctx, Entry::RmsMulWeight, &res, elems),
                ])
            }
        }
    }

    /// `out[m, n] = silu(x·Wgᵀ) ⊙ (x·Wuᵀ)`, weights stored `[n, k]`.
    #[allow(clippy::too_many_arguments)]
    pub fn gate_up_silu_step(
        &self,
        ctx: &GpuContext,
        x: &wgpu::Buffer,
        wg: &wgpu::Buffer,
        wu: &wgpu::Buffer,
        out: &wgpu::Buffer,
        (m, k, n): (usize, usize, usize),
    ) -> Result<Step> {
        let params = ctx.uniform(
            "gate_up.params",
            words(&[u32_dim(m, "m")?, u32_dim(k, "k")?, u32_dim(n, "n")?]),
        );
        let groups = Self::check_groups(ctx, [(n as u32).div_ceil(256), m as u32, 1])?;
        Ok(self.step(ctx, Entry::GateUpSilu, &[x, wg, wu, out, &params], groups))
    }

    /// K and V projections in one dispatch; weights stored `[kv, k]`.
    #[allow(clippy::too_many_arguments)]
    pub fn kv_fused_step(
        &self,
        ctx: &GpuContext,
        x: &wgpu::Buffer,
        wk: &wgpu::Buffer,
        wv: &wgpu::Buffer,
        k_out: &wgpu::Buffer,
        v_out: &wgpu::Buffer,
        (m, k, kv): (usize, usize, usize),
    ) -> Result<Step> {
        let params = ctx.uniform(
            "kv.params",
            words(&[u32_dim(m, "m")?, u32_dim(k, "k")?, u32_dim(kv, "kv")?]),
        );
        let groups = Self::check_groups(ctx, [(2 * kv as u32).div_ceil(TILE), (m as u32).div_ceil(TILE), 1])?;
        Ok(self.step(ctx, Entry::KvFusedProj, &[x, wk, wv, k_out, v_out, &params], groups))
    }

    pub fn check_mega_scale(hidden: usize, intermediate: usize) -> Result<()> {
        if hidden > MEGA_MAX_HIDDEN || intermediate > MEGA_MAX_INTERMEDIATE || hidden * intermediate > MEGA_MAX_WEIGHTS
        {
            return Err(Error::MegaKernelScaleExceeded { hidden, intermediate });
        }
        Ok(())
    }

    pub fn mlp_steps(
        &self,
        ctx: &GpuContext,
        variant: MlpVariant,
        x: &wgpu::Buffer,
        w: &MlpDeviceWeights,
        out: &wgpu::Buffer,
        rows: usize,
    ) -> Result<Vec<Step>> {
        let (h, i) = (w.hidden, w.intermediate);
        if variant == MlpVariant::MegaMlp1 {
            Self::check_mega_scale(h, i)?;
            if rows != 1 {
                return Err(Error::DimsMismatch(format!("mega kernel handles one row, got {rows}")));
            }
            let params = ctx.uniform("mega.params", words(&[h as u32, i as u32, (w.eps as f32).to_bits()]));
            return Ok(vec![self.step(
                ctx,
                Entry::MegaMlp,
                &[x, w.norm.raw(), w.gate.raw(), w.up.raw(), w.down.raw(), out, &params],
                [1, 1, 1],
            )]);
        }

        let normed = ctx.create_buffer("mlp.normed", vec![rows, h], BufferUsage::STORAGE_IO)?;
        let mut steps = self.rmsnorm_steps(
            ctx,
            RmsNormVariant::RmsnormFused,
            x,
            w.norm.raw(),
            normed.raw(),
            rows,
            h,
            w.eps,
        )?;
        let act = ctx.create_buffer("mlp.act", vec![rows, i], BufferUsage::STORAGE_IO)?;
        let tiled = MatmulVariant::MatmulTiled16;
        match variant {
            MlpVariant::MlpUnfused7 => {
                let g = ctx.create_buffer("mlp.gate_out", vec![rows, i], BufferUsage::STORAGE_IO)?;
                let u = ctx.create_buffer("mlp.up_out", vec![rows, i], BufferUsage::STORAGE_IO)?;
                let sg = ctx.create_buffer("mlp.silu_out", vec![rows, i], BufferUsage::STORAGE_IO)?;
                let d = ctx.create_buffer("mlp.down_out", vec![rows, h], BufferUsage::STORAGE_IO)?;
                steps.push(self.matmul_step(
                    ctx,
                    tiled,
                    normed.raw(),
                    w.gate.raw(),
                    g.raw(),
                    (rows, h, i),
                    true,
                    None,
                )?);
                steps.push(self.matmul_step(
                    ctx,
                    tiled,
                    normed.raw(),
                    w.up.raw(),
                    u.raw(),
                    (rows, h, i),
                    true,
                    None,
                )?);
                steps.push(self.elementwise_step(
                    ctx,
                    ElementwiseKind::Silu,
                    [g.raw(), self.dummy(), self.dummy()],
                    sg.raw(),
                    rows * i,
                    0,
                    None,
                )?);
                steps.push(self.elementwise_step(
                    ctx,
                    ElementwiseKind::Mul,
                    [sg.raw(), u.raw(), self.dummy()],
                    act.raw(),
                    rows * i,
                    0,
                    None,
                )?);
                steps.push(self.matmul_step(ctx, tiled, act.raw(), w.down.raw(), d.raw(), (rows, i, h), true, None)?);
                steps.push(self.elementwise_step(
                    ctx,
                    ElementwiseKind::Add,
                    [x, d.raw(), self.dummy()],
                    out,
                    rows * h,
                    0,
                    None,
                )?);
            }
            MlpVariant::MlpTiled3 => {
                steps.push(self.gate_up_silu_step(
                    ctx,
                    normed.raw(),
                    w.gate.raw(),
                    w.up.raw(),
                    act.raw(),
                    (rows, h, i),
                )?);
                steps.push(self.matmul_step(ctx, tiled, act.raw(), w.down.raw(), out, (rows, i, h), true, Some(x))?);
            }
            MlpVariant::MegaMlp1 => unreachable!(),
        }
        Ok(steps)
    }

    pub fn softmax_step(
        &self,
        ctx: &GpuContext,
        variant: SoftmaxVariant,
        x: &wgpu::Buffer,
        out: &wgpu::Buffer,
        rows: usize,
        cols: usize,
    ) -> Result<Step> {
        let params = ctx.uniform(
            "softmax.params",
            words(&[u32_dim(rows, "rows")?, u32_dim(cols, "cols")?]),
        );
        Ok(match variant {
            SoftmaxVariant::SoftmaxNaive => {
                let groups = Self::check_groups(ctx, [(rows as u32).div_ceil(64), 1, 1])?;
                self.step(ctx, Entry::SoftmaxNaive, &[x, out, &params], groups)
            }
            SoftmaxVariant::SoftmaxParallel256 => {
                let groups = Self::check_groups(ctx, [rows as u32, 1, 1])?;
                self.step(ctx, Entry::SoftmaxParallel, &[x, out, &params], groups)
            }
        })
    }

    /// Writes the argmax of `x[..len]` as a `u32` into `result[0]`.
    pub fn argmax_step(&self, ctx: &GpuContext, x: &wgpu::Buffer, result: &wgpu::Buffer, len: usize) -> Result<Step> {
        let params = ctx.uniform("argmax.params", words(&[u32_dim(len, "len")?]));
        Ok(self.step(ctx, Entry::Argmax, &[x, result, &params], [1, 1, 1]))
    }

    /// `inputs` fill bindings a, b, c; pass [`KernelLibrary::dummy`] for
    /// unused slots. `token` defaults to the all-zero uniform.
    #[allow(clippy::too_many_arguments)]
    pub fn elementwise_step(
        &self,
        ctx: &GpuContext,
        kind: ElementwiseKind,
        inputs: [&wgpu::Buffer; 3],
        out: &wgpu::Buffer,
        len: usize,
        width: usize,
        token: Option<&wgpu::Buffer>,
    ) -> Result<Step> {
        let params = ctx.uniform(
            "elementwise.params",
            words(&[u32_dim(len, "len")?, u32_dim(width, "width")?]),
        );
        let groups = grid_1d(len, 256, Self::max_groups(ctx));
        let token = token.unwrap_or(&self.zero_token);
        Ok(self.step(
            ctx,
            Entry::Elementwise(kind),
            &[inputs[0], inputs[1], inputs[2], out, &params, token],
            groups,
        ))
    }

    // ---- prepared ops (host tensors in, device-resident op out) ----

    /// `a[m, k] · b[k, n]`.
    pub fn prepare_matmul(
        &self,
        ctx: &GpuContext,
        variant: MatmulVariant,
        a: &HostTensor,
        b: &HostTensor,
    ) -> Result<PreparedOp> {
        if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
            return Err(Error::DimsMismatch(format!(
                "matmul A {:?} · B {:?}: inner dimensions differ",
                a.shape(),
                b.shape()
            )));
        }
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let da = ctx.upload(a)?;
        let db = ctx.upload(b)?;
        let dc = ctx.create_buffer("matmul.out", vec![m, n], BufferUsage::STORAGE_IO)?;
        let step = self.matmul_step(ctx, variant, da.raw(), db.raw(), dc.raw(), (m, k, n), false, None)?;
        Ok(PreparedOp {
            variant: variant.into(),
            steps: vec![step],
            outputs: vec![dc],
        })
    }

    pub fn prepare_rmsnorm(
        &self,
        ctx: &GpuContext,
        variant: RmsNormVariant,
        x: &HostTensor,
        params: &RmsNormParams,
    ) -> Result<PreparedOp> {
        check_cols(x, params.hidden, "rmsnorm input")?;
        if params.weight.numel() != params.hidden {
            return Err(Error::DimsMismatch(format!(
                "rmsnorm weight has {} elements, hidden is {}",
                params.weight.numel(),
                params.hidden
            )));
        }
        let rows = x.rows();
        let dx = ctx.upload(x)?;
        let dw = ctx.upload(&params.weight)?;
        let out = ctx.create_buffer("rmsnorm.out", x.shape().to_vec(), BufferUsage::STORAGE_IO)?;
        let steps = self.rmsnorm_steps(
            ctx,
            variant,
            dx.raw(),
            dw.raw(),
            out.raw(),
            rows,
            params.hidden,
            params.eps,
        )?;
        Ok(PreparedOp {
            variant: variant.into(),
            steps,
            outputs: vec![out],
        })
    }

    pub fn prepare_mlp(
        &self,
        ctx: &GpuContext,
        variant: MlpVariant,
        x: &HostTensor,
        w: &MlpWeights,
    ) -> Result<PreparedOp> {
        w.validate()?;
        check_cols(x, w.hidden(), "mlp input")?;
        if variant == MlpVariant::MegaMlp1 {
            Self::check_mega_scale(w.hidden(), w.intermediate())?;
        }
        let dw = MlpDeviceWeights::upload(ctx, w)?;
        let dx = ctx.upload(x)?;
        let out = ctx.create_buffer("mlp.out", x.shape().to_vec(), BufferUsage::STORAGE_IO)?;
        let steps = self.mlp_steps(ctx, variant, dx.raw(), &dw, out.raw(), x.rows())?;
        Ok(PreparedOp {
            variant: variant.into(),
            steps,
            outputs: vec![out],
        })
    }

    pub fn prepare_gate_up_silu(
        &self,
        ctx: &GpuContext,
        x: &HostTensor,
        w_gate: &HostTensor,
        w_up: &HostTensor,
    ) -> Result<PreparedOp> {
        if w_gate.shape() != w_up.shape() || w_gate.shape().len() != 2 {
            return Err(Error::DimsMismatch(format!(
                "gate {:?} and up {:?} must share one [inter, hidden] shape",
                w_gate.shape(),
                w_up.shape()
            )));
        }
        let (inter, hidden) = (w_gate.rows(), w_gate.cols());
        check_cols(x, hidden, "gate/up input")?;
        let dx = ctx.upload(x)?;
        let dg = ctx.upload(w_gate)?;
        let du = ctx.upload(w_up)?;
        let out = ctx.create_buffer("gate_up.out", vec![x.rows(), inter], BufferUsage::STORAGE_IO)?;
        let step = self.gate_up_silu_step(ctx, dx.raw(), dg.raw(), du.raw(), out.raw(), (x.rows(), hidden, inter))?;
        Ok(PreparedOp {
            variant: KernelVariant::MlpFusedGateUpSilu,
            steps: vec![step],
            outputs: vec![out],
        })
    }

    pub fn prepare_kv_fused(
        &self,
        ctx: &GpuContext,
        x: &HostTensor,
        wk: &HostTensor,
        wv: &HostTensor,
    ) -> Result<PreparedOp> {
        if wk.shape() != wv.shape() || wk.shape().len() != 2 {
            return Err(Error::DimsMismatch(format!(
                "K weight {:?} and V weight {:?} must have identical shapes",
                wk.shape(),
                wv.shape()
            )));
        }
        let (kv, hidden) = (wk.rows(), wk.cols());
        check_cols(x, hidden, "kv input")?;
        let m = x.rows();
        let dx = ctx.upload(x)?;
        let dk = ctx.upload(wk)?;
        let dv = ctx.upload(wv)?;
        let k_out = ctx.create_buffer("kv.k", vec![m, kv], BufferUsage::STORAGE_IO)?;
        let v_out = ctx.create_buffer("kv.v", vec![m, kv], BufferUsage::STORAGE_IO)?;
        let step = self.kv_fused_step(
            ctx,
            dx.raw(),
            dk.raw(),
            dv.raw(),
            k_out.raw(),
            v_out.raw(),
            (m, hidden, kv),
        )?;
        Ok(PreparedOp {
            variant: KernelVariant::KvFusedProj,
            steps: vec![step],
            outputs: vec![k_out, v_out],
        })
    }

    pub fn prepare_softmax(&self, ctx: &GpuContext, variant: SoftmaxVariant, x: &HostTensor) -> Result<PreparedOp> {
        if x.shape().len() != 2 || x.cols() == 0 {
            return Err(Error::DimsMismatch(format!(
                "softmax needs [rows, cols >= 1], got {:?}",
                x.shape()
            )));
        }
        let dx = ctx.upload(x)?;
        let out = ctx.create_buffer("softmax.out", x.shape().to_vec(), BufferUsage::STORAGE_IO)?;
        let step = self.softmax_step(ctx, variant, dx.raw(), out.raw(), x.rows(), x.cols())?;
        Ok(PreparedOp {
            variant: variant.into(),
            steps: vec![step],
            outputs: vec![out],
        })
    }

    pub fn prepare_argmax(&self, ctx: &GpuContext, logits: &HostTensor) -> Result<PreparedOp> {
        if logits.numel() == 0 {
            return Err(Error::SizeMismatch { expected: 1, actual: 0 });
        }
        let dx = ctx.upload(logits)?;
        let out = ctx.create_buffer("argmax.out", vec![1], BufferUsage::STORAGE_IO)?;
        let step = self.argmax_step(ctx, dx.raw(), out.raw(), logits.numel())?;
        Ok(PreparedOp {
            variant: KernelVariant::ArgmaxDevice,
            steps: vec![step],
            outputs: vec![out],
        })
    }

    // ---- host-level ops ----

    fn run_and_read(&self, ctx: &GpuContext, op: &PreparedOp, output: usize) -> Result<HostTensor> {
        op.run(ctx)?;
        ctx.download(op.output(output))
    }

    pub fn matmul(
        &self,
        ctx: &GpuContext,
        variant: MatmulVariant,
        a: &HostTensor,
        b: &HostTensor,
    ) -> Result<HostTensor> {
        let op = self.prepare_matmul(ctx, variant, a, b)?;
        self.run_and_read(ctx, &op, 0)
    }

    /// `x · wᵀ` with `w` stored `[out, in]`.
    pub fn linear(
        &self,
        ctx: &GpuContext,
        variant: MatmulVariant,
        x: &HostTensor,
        w: &HostTensor,
    ) -> Result<HostTensor> {
        if w.shape().len() != 2 {
            return Err(Error::DimsMismatch(format!("weight must be 2-D, got {:?}", w.shape())));
        }
        check_cols(x, w.cols(), "linear input")?;
        let (m, k, n) = (x.rows(), w.cols(), w.rows());
        let dx = ctx.upload(x)?;
        let dw = ctx.upload(w)?;
        let out = ctx.create_buffer("linear.out", vec![m, n], BufferUsage::STORAGE_IO)?;
        let step = self.matmul_step(ctx, variant, dx.raw(), dw.raw(), out.raw(), (m, k, n), true, None)?;
        let op = PreparedOp {
            variant: variant.into(),
            steps: vec![step],
            outputs: vec![out],
        };
        self.run_and_read(ctx, &op, 0)
    }

    pub fn rmsnorm(
        &self,
        ctx: &GpuContext,
        variant: RmsNormVariant,
        x: &HostTensor,
        params: &RmsNormParams,
    ) -> Result<HostTensor> {
        let op = self.prepare_rmsnorm(ctx, variant, x, params)?;
        self.run_and_read(ctx, &op, 0)
    }

    pub fn mlp_block(
        &self,
        ctx: &GpuContext,
        variant: MlpVariant,
        x: &HostTensor,
        w: &MlpWeights,
    ) -> Result<HostTensor> {
        let op = self.prepare_mlp(ctx, variant, x, w)?;
        self.run_and_read(ctx, &op, 0)
    }

    pub fn fused_gate_up_silu(
        &self,
        ctx: &GpuContext,
        x: &HostTensor,
        w_gate: &HostTensor,
        w_up: &HostTensor,
    ) -> Result<HostTensor> {
        let op = self.prepare_gate_up_silu(ctx, x, w_gate, w_up)?;
        self.run_and_read(ctx, &op, 0)
    }

    pub fn kv_fused_proj(
        &self,
        ctx: &GpuContext,
        x: &HostTensor,
        wk: &HostTensor,
        wv: &HostTensor,
    ) -> Result<(HostTensor, HostTensor)> {
        let op = self.prepare_kv_fused(ctx, x, wk, wv)?;
        op.run(ctx)?;
        Ok((ctx.download(op.output(0))?, ctx.download(op.output(1))?))
    }

    pub fn softmax(&self, ctx: &GpuContext, variant: SoftmaxVariant, x: &HostTensor) -> Result<HostTensor> {
        let op = self.prepare_softmax(ctx, variant, x)?;
        self.run_and_read(ctx, &op, 0)
    }

    /// Index of the largest logit; only 4 bytes are read back.
    pub fn argmax_device(&self, ctx: &GpuContext, logits: &HostTensor) -> Result<usize> {
        let op = self.prepare_argmax(ctx, logits)?;
        op.run(ctx)?;
        let bytes = ctx.read_bytes(op.output(0), 0, 4)?;
        Ok(u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize)
    }

    /// Binary or unary elementwise op on equally shaped tensors.
    pub fn elementwise(
        &self,
        ctx: &GpuContext,
        kind: ElementwiseKind,
        a: &HostTensor,
        b: Option<&HostTensor>,
    ) -> Result<HostTensor> {
        if !matches!(
            kind,
            ElementwiseKind::Add | ElementwiseKind::Mul | ElementwiseKind::Silu | ElementwiseKind::SiluMul
        ) {
            return Err(Error::InvalidConfig(format!("{kind:?} is not a plain elementwise op")));
        }
        let da = ctx.upload(a)?;
        let db = match b {
            Some(b) if b.shape() != a.shape() => {
                return Err(Error::ShapeMismatch {
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                })
            }
            Some(b) => Some(ctx.upload(b)?),
            None if kind == ElementwiseKind::Silu => None,
            None => return Err(Error::InvalidConfig(format!("{kind:?} needs two operands"))),
        };
        let out = ctx.create_buffer("elementwise.out", a.shape().to_vec(), BufferUsage::STORAGE_IO)?;
        let b_raw = db.as_ref().map(|d| d.raw()).unwrap_or(self.dummy());
        let step = self.elementwise_step(
            ctx,
            kind,
            [da.raw(), b_raw, self.dummy()],
            out.raw(),
            a.numel(),
            0,
            None,
        )?;
        let op = PreparedOp {
            variant: KernelVariant::Elementwise(kind),
            steps: vec![step],
            outputs: vec![out],
        };
        self.run_and_read(ctx, &op, 0)
    }
}
