//! WGSL sources and their specialization headers.
//!
//! Each shader file opens with comment lines of the form
//! `// dispatch-lab: key = value`. The host reads them instead of running a
//! preprocessor; the WGSL itself stays valid and self-contained.

use serde::{Deserialize, Serialize};

const HEADER_PREFIX: &str = "// dispatch-lab:";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShaderFile {
    MatmulNaive,
    MatmulTiled16,
    RmsnormUnfusedChain,
    RmsnormFused,
    MegaMlp1,
    MlpFusedGateUpSilu,
    KvFusedProj,
    SoftmaxNaive,
    SoftmaxParallel256,
    ArgmaxDevice,
    Elementwise,
}

impl ShaderFile {
    pub const ALL: [ShaderFile; 11] = [
        ShaderFile::MatmulNaive,
        ShaderFile::MatmulTiled16,
        ShaderFile::RmsnormUnfusedChain,
        ShaderFile::RmsnormFused,
        ShaderFile::MegaMlp1,
        ShaderFile::MlpFusedGateUpSilu,
        ShaderFile::KvFusedProj,
        ShaderFile::SoftmaxNaive,
        ShaderFile::SoftmaxParallel256,
        ShaderFile::ArgmaxDevice,
        ShaderFile::Elementwise,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            ShaderFile::MatmulNaive => "matmul_naive.wgsl",
            ShaderFile::MatmulTiled16 => "matmul_tiled16.wgsl",
            ShaderFile::RmsnormUnfusedChain => "rmsnorm_unfused_chain.wgsl",
            ShaderFile::RmsnormFused => "rmsnorm_fused.wgsl",
            ShaderFile::MegaMlp1 => "mega_mlp1.wgsl",
            ShaderFile::MlpFusedGateUpSilu => "mlp_fused_gate_up_silu.wgsl",
            ShaderFile::KvFusedProj => "kv_fused_proj.wgsl",
            ShaderFile::SoftmaxNaive => "softmax_naive.wgsl",
            ShaderFile::SoftmaxParallel256 => "softmax_parallel256.wgsl",
            ShaderFile::ArgmaxDevice => "argmax_device.wgsl",
            ShaderFile::Elementwise => "elementwise.wgsl",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            ShaderFile::MatmulNaive => include_str!("../../shaders/matmul_naive.wgsl"),
            ShaderFile::MatmulTiled16 => include_str!("../../shaders/matmul_tiled16.wgsl"),
            ShaderFile::RmsnormUnfusedChain => include_str!("../../shaders/rmsnorm_unfused_chain.wgsl"),
            ShaderFile::RmsnormFused => include_str!("../../shaders/rmsnorm_fused.wgsl"),
            ShaderFile::MegaMlp1 => include_str!("../../shaders/mega_mlp1.wgsl"),
            ShaderFile::MlpFusedGateUpSilu => include_str!("../../shaders/mlp_fused_gate_up_silu.wgsl"),
            ShaderFile::KvFusedProj => include_str!("../../shaders/kv_fused_proj.wgsl"),
            ShaderFile::SoftmaxNaive => include_str!("../../shaders/softmax_naive.wgsl"),
            ShaderFile::SoftmaxParallel256 => include_str!("../../shaders/softmax_parallel256.wgsl"),
            ShaderFile::ArgmaxDevice => include_str!("../../shaders/argmax_device.wgsl"),
            ShaderFile::Elementwise => include_str!("../../shaders/elementwise.wgsl"),
        }
    }

    /// Value of `key` in the file's header, if present.
    pub fn header(self, key: &str) -> Option<&'static str> {
        header_value(self.source(), key)
    }

    pub fn workgroup_size(self) -> (u32, u32, u32) {
        parse_workgroup_header(self.source())
            .unwrap_or_else(|| panic!("{} lacks a workgroup_size header", self.file_name()))
    }
}

fn header_value<'a>(src: &'a str, key: &str) -> Option<&'a str> {
    src.lines()
        .map(str::trim)
        .take_while(|l| l.starts_with("//"))
        .filter_map(|l| l.strip_prefix(HEADER_PREFIX))
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim())
}

/// Reads `// dispatch-lab: workgroup_size = x, y, z` from the leading comment
/// block. Missing trailing components default to 1.
pub fn parse_workgroup_header(src: &str) -> Option<(u32, u32, u32)> {
    let raw = header_value(src, "workgroup_size")?;
    let parts: Vec<u32> = raw
        .split(',')
        .map(|p| p.trim().parse().ok())
        .collect::<Option<Vec<_>>>()?;
    match parts.as_slice() {
        [x] => Some((*x, 1, 1)),
        [x, y] => Some((*x, *y, 1)),
        [x, y, z] => Some((*x, *y, *z)),
        _ => None,
    }
}
