use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Environment variable that overrides the backend chosen on the command line.
pub const BACKEND_ENV: &str = "DISPATCH_LAB_BACKEND";

/// Smallest `max_compute_invocations_per_workgroup` the kernel library accepts.
/// Parallel softmax, argmax and the mega-kernel all run 256-thread workgroups.
pub const REQUIRED_WORKGROUP_SIZE: u32 = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Vulkan,
    Metal,
    D3d12,
    Any,
    /// wgpu's validation-only backend: every API call is validated, buffers
    /// copy and map, but shaders never execute. Used for plumbing tests on
    /// machines without a GPU; never picked by `Any`.
    Noop,
}

impl BackendChoice {
    pub const ALL: [BackendChoice; 5] = [
        BackendChoice::Vulkan,
        BackendChoice::Metal,
        BackendChoice::D3d12,
        BackendChoice::Any,
        BackendChoice::Noop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendChoice::Vulkan => "vulkan",
            BackendChoice::Metal => "metal",
            BackendChoice::D3d12 => "d3d12",
            BackendChoice::Any => "any",
            BackendChoice::Noop => "noop",
        }
    }

    /// `DISPATCH_LAB_BACKEND` wins over `cli` when set to a valid value.
    pub fn from_env_or(cli: BackendChoice) -> Result<BackendChoice, Error> {
        match std::env::var(BACKEND_ENV) {
            Ok(v) if !v.trim().is_empty() => v.parse(),
            _ => Ok(cli),
        }
    }

    /// Whether this choice runs real shaders.
    pub fn executes_shaders(self) -> bool {
        self != BackendChoice::Noop
    }
}

impl fmt::Display for BackendChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vulkan" => Ok(BackendChoice::Vulkan),
            "metal" => Ok(BackendChoice::Metal),
            "d3d12" | "dx12" => Ok(BackendChoice::D3d12),
            "any" => Ok(BackendChoice::Any),
            "noop" => Ok(BackendChoice::Noop),
            other => Err(Error::InvalidConfig(format!(
                "unknown backend `{other}` (expected vulkan, metal, d3d12, any or noop)"
            ))),
        }
    }
}

/// What the acquired adapter reports about itself.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardwareInfo {
    pub adapter_name: String,
    /// Concrete backend after resolving `any`.
    pub backend: BackendChoice,
    pub device_type: String,
    pub driver: String,
    pub max_workgroup_size: u32,
    pub max_workgroups_per_dim: u32,
    pub max_storage_buffer_binding_size: u64,
    pub max_buffer_size: u64,
    pub timestamp_query_supported: bool,
}

impl HardwareInfo {
    /// Placeholder for experiments that never touch a GPU.
    pub fn none() -> Self {
        Self {
            adapter_name: "none".to_owned(),
            backend: BackendChoice::Any,
            device_type: "none".to_owned(),
            driver: String::new(),
            max_workgroup_size: 0,
            max_workgroups_per_dim: 0,
            max_storage_buffer_binding_size: 0,
            max_buffer_size: 0,
            timestamp_query_supported: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_backend_name() {
        for b in BackendChoice::ALL {
            assert_eq!(b.as_str().parse::<BackendChoice>().unwrap(), b);
        }
        assert_eq!("DX12".parse::<BackendChoice>().unwrap(), BackendChoice::D3d12);
        assert!("opengl".parse::<BackendChoice>().is_err());
    }

    #[test]
    fn serde_uses_lowercase_names() {
        let s = serde_json::to_string(&BackendChoice::D3d12).unwrap();
        assert_eq!(s, "\"d3d12\"");
    }
}
