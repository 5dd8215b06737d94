//! WGSL kernel library: variant catalogue, shader sources and (with the `gpu`
//! feature) pipelines plus host-facing ops.

mod shaders;
mod variant;

#[cfg(feature = "gpu")]
mod library;

pub use shaders::{parse_workgroup_header, ShaderFile};
pub use variant::{
    ElementwiseKind, KernelVariant, MatmulDims, MatmulVariant, MlpVariant, OpCategory, RmsNormParams, RmsNormVariant,
    SoftmaxVariant, DEFAULT_RMSNORM_EPS,
};

#[cfg(feature = "gpu")]
pub use library::{
    Entry, KernelLibrary, MlpDeviceWeights, PreparedOp, Step, MEGA_MAX_HIDDEN, MEGA_MAX_INTERMEDIATE, MEGA_MAX_WEIGHTS,
};
