//! dispatch-lab: characterizing WebGPU compute-dispatch overhead.
//!
//! The crate is split into a GPU-free half (statistics, analytic overhead
//! models, CPU reference kernels, dispatch ledgers, result records) and a GPU
//! half behind the `gpu` feature (device context, WGSL kernel library,
//! dispatch profiler, toy decoder forward pass). The GPU-free half compiles to
//! `wasm32-unknown-unknown` and backs the browser demo.

pub mod analysis;
pub mod decoder;
pub mod error;
pub mod hardware;
pub mod kernels;
pub mod oracle;
pub mod profiler;
pub mod report;
pub mod stats;
pub mod tensor;

#[cfg(feature = "gpu")]
pub mod gpu;

pub use error::{Error, Result};
pub use hardware::{BackendChoice, HardwareInfo};
pub use tensor::HostTensor;
