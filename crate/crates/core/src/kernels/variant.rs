use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::HostTensor;

use super::shaders::ShaderFile;

pub const DEFAULT_RMSNORM_EPS: f64 = 1e-6;

/// `C[m, n] = A[m, k] · B[k, n]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatmulDims {
    pub m: u64,
    pub k: u64,
    pub n: u64,
}

impl MatmulDims {
    pub fn new(m: u64, k: u64, n: u64) -> Result<Self> {
        if m == 0 || k == 0 || n == 0 {
            return Err(Error::DimsMismatch(format!(
                "matmul dims must be positive, got {m}x{k}x{n}"
            )));
        }
        Ok(Self { m, k, n })
    }

    pub fn flops(&self) -> u64 {
        2 * self.m * self.k * self.n
    }
}

impl fmt::Display for MatmulDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.m, self.k, self.n)
    }
}

#[derive(Clone, Debug)]
pub struct RmsNormParams {
    pub hidden: usize,
    pub eps: f64,
    pub weight: HostTensor,
}

impl RmsNormParams {
    pub fn new(weight: HostTensor, eps: f64) -> Result<Self> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::InvalidConfig(format!("rmsnorm eps must be positive, got {eps}")));
        }
        let hidden = weight.numel();
        if hidden == 0 {
            return Err(Error::DimsMismatch("rmsnorm weight is empty".into()));
        }
        Ok(Self { hidden, eps, weight })
    }

    pub fn unit(hidden: usize) -> Self {
        Self {
            hidden,
            eps: DEFAULT_RMSNORM_EPS,
            weight: HostTensor::filled(vec![hidden], 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementwiseKind {
    Add,
    Mul,
    Silu,
    SiluMul,
    CopyToSlot,
    Embed,
    AttentionStandIn,
}

impl ElementwiseKind {
    pub const ALL: [ElementwiseKind; 7] = [
        ElementwiseKind::Add,
        ElementwiseKind::Mul,
        ElementwiseKind::Silu,
        ElementwiseKind::SiluMul,
        ElementwiseKind::CopyToSlot,
        ElementwiseKind::Embed,
        ElementwiseKind::AttentionStandIn,
    ];

    pub fn entry_point(self) -> &'static str {
        match self {
            ElementwiseKind::Add => "add",
            ElementwiseKind::Mul => "mul",
            ElementwiseKind::Silu => "silu",
            ElementwiseKind::SiluMul => "silu_mul",
            ElementwiseKind::CopyToSlot => "copy_to_slot",
            ElementwiseKind::Embed => "embed",
            ElementwiseKind::AttentionStandIn => "attention_stand_in",
        }
    }
}

/// Every shader configuration the library can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    MatmulNaive,
    MatmulTiled16,
    RmsnormUnfusedChain,
    RmsnormFused,
    MlpUnfused7,
    MlpTiled3,
    MegaMlp1,
    MlpFusedGateUpSilu,
    KvFusedProj,
    SoftmaxNaive,
    SoftmaxParallel256,
    ArgmaxDevice,
    Elementwise(ElementwiseKind),
}

impl KernelVariant {
    pub fn name(&self) -> String {
        match self {
            KernelVariant::Elementwise(kind) => format!("elementwise_{}", kind.entry_point()),
            other => serde_json::to_value(other)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
        }
    }

    /// Dispatches one invocation of the variant records.
    pub fn dispatch_count(&self) -> usize {
        match self {
            KernelVariant::RmsnormUnfusedChain => 6,
            KernelVariant::MlpUnfused7 => 7,
            KernelVariant::MlpTiled3 => 3,
            _ => 1,
        }
    }

    /// Shader files the variant's dispatches come from, in dispatch order
    /// (repeats omitted).
    pub fn shader_files(&self) -> &'static [ShaderFile] {
        match self {
            KernelVariant::MatmulNaive => &[ShaderFile::MatmulNaive],
            KernelVariant::MatmulTiled16 => &[ShaderFile::MatmulTiled16],
            KernelVariant::RmsnormUnfusedChain => &[ShaderFile::RmsnormUnfusedChain],
            KernelVariant::RmsnormFused => &[ShaderFile::RmsnormFused],
            KernelVariant::MlpUnfused7 => &[
                ShaderFile::RmsnormFused,
                ShaderFile::MatmulTiled16,
                ShaderFile::Elementwise,
            ],
            KernelVariant::MlpTiled3 => &[
                ShaderFile::RmsnormFused,
                ShaderFile::MlpFusedGateUpSilu,
                ShaderFile::MatmulTiled16,
            ],
            KernelVariant::MegaMlp1 => &[ShaderFile::MegaMlp1],
            KernelVariant::MlpFusedGateUpSilu => &[ShaderFile::MlpFusedGateUpSilu],
            KernelVariant::KvFusedProj => &[ShaderFile::KvFusedProj],
            KernelVariant::SoftmaxNaive => &[ShaderFile::SoftmaxNaive],
            KernelVariant::SoftmaxParallel256 => &[ShaderFile::SoftmaxParallel256],
            KernelVariant::ArgmaxDevice => &[ShaderFile::ArgmaxDevice],
            KernelVariant::Elementwise(_) => &[ShaderFile::Elementwise],
        }
    }

    /// Workgroup shape of the variant's primary shader.
    pub fn workgroup_shape(&self) -> (u32, u32, u32) {
        let primary = match self {
            KernelVariant::MlpUnfused7 => ShaderFile::MatmulTiled16,
            KernelVariant::MlpTiled3 => ShaderFile::MlpFusedGateUpSilu,
            other => other.shader_files()[0],
        };
        primary.workgroup_size()
    }
}

impl fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatmulVariant {
    MatmulNaive,
    MatmulTiled16,
}

impl From<MatmulVariant> for KernelVariant {
    fn from(v: MatmulVariant) -> Self {
        match v {
            MatmulVariant::MatmulNaive => KernelVariant::MatmulNaive,
            MatmulVariant::MatmulTiled16 => KernelVariant::MatmulTiled16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmsNormVariant {
    RmsnormUnfusedChain,
    RmsnormFused,
}

impl From<RmsNormVariant> for KernelVariant {
    fn from(v: RmsNormVariant) -> Self {
        match v {
            RmsNormVariant::RmsnormUnfusedChain => KernelVariant::RmsnormUnfusedChain,
            RmsNormVariant::RmsnormFused => KernelVariant::RmsnormFused,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpVariant {
    MlpUnfused7,
    MlpTiled3,
    MegaMlp1,
}

impl MlpVariant {
    pub const ALL: [MlpVariant; 3] = [MlpVariant::MlpUnfused7, MlpVariant::MlpTiled3, MlpVariant::MegaMlp1];
}

impl From<MlpVariant> for KernelVariant {
    fn from(v: MlpVariant) -> Self {
        match v {
            MlpVariant::MlpUnfused7 => KernelVariant::MlpUnfused7,
            MlpVariant::MlpTiled3 => KernelVariant::MlpTiled3,
            MlpVariant::MegaMlp1 => KernelVariant::MegaMlp1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxVariant {
    SoftmaxNaive,
    SoftmaxParallel256,
}

impl From<SoftmaxVariant> for KernelVariant {
    fn from(v: SoftmaxVariant) -> Self {
        match v {
            SoftmaxVariant::SoftmaxNaive => KernelVariant::SoftmaxNaive,
            SoftmaxVariant::SoftmaxParallel256 => KernelVariant::SoftmaxParallel256,
        }
    }
}

/// Ledger bucket a dispatch is counted under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpCategory {
    Rmsnorm,
    Matmul,
    Elementwise,
    Argmax,
    Other,
}

impl OpCategory {
    pub const ALL: [OpCategory; 5] = [
        OpCategory::Rmsnorm,
        OpCategory::Matmul,
        OpCategory::Elementwise,
        OpCategory::Argmax,
        OpCategory::Other,
    ];
}
