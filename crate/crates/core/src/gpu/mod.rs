//! Device acquisition, buffers and the blocking queue wait.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use wgpu::util::DeviceExt;

use crate::error::{Error, Result};
use crate::hardware::{BackendChoice, HardwareInfo, REQUIRED_WORKGROUP_SIZE};
use crate::tensor::HostTensor;

/// Usage flags a [`DeviceBuffer`] is created with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BufferUsage {
    pub storage: bool,
    pub uniform: bool,
    pub copy_src: bool,
    pub copy_dst: bool,
    pub map_read: bool,
}

impl BufferUsage {
    /// Kernel input/output that can be uploaded to and read back from.
    pub const STORAGE_IO: BufferUsage = BufferUsage {
        storage: true,
        uniform: false,
        copy_src: true,
        copy_dst: true,
        map_read: false,
    };
    pub const UNIFORM: BufferUsage = BufferUsage {
        storage: false,
        uniform: true,
        copy_src: false,
        copy_dst: true,
        map_read: false,
    };
    /// Host-visible staging target of a copy.
    pub const READBACK: BufferUsage = BufferUsage {
        storage: false,
        uniform: false,
        copy_src: false,
        copy_dst: true,
        map_read: true,
    };

    pub fn validate(self) -> Result<()> {
        if self.map_read && (self.storage || self.uniform || self.copy_src) {
            return Err(Error::InvalidConfig(
                "map_read buffers may only be combined with copy_dst".into(),
            ));
        }
        if !(self.storage || self.uniform || self.copy_src || self.copy_dst || self.map_read) {
            return Err(Error::InvalidConfig("buffer usage is empty".into()));
        }
        Ok(())
    }

    pub fn to_wgpu(self) -> wgpu::BufferUsages {
        let mut u = wgpu::BufferUsages::empty();
        for (on, flag) in [
            (self.storage, wgpu::BufferUsages::STORAGE),
            (self.uniform, wgpu::BufferUsages::UNIFORM),
            (self.copy_src, wgpu::BufferUsages::COPY_SRC),
            (self.copy_dst, wgpu::BufferUsages::COPY_DST),
            (self.map_read, wgpu::BufferUsages::MAP_READ),
        ] {
            if on {
                u |= flag;
            }
        }
        u
    }
}

/// A GPU buffer holding a row-major `f32` tensor (or raw words).
#[derive(Clone, Debug)]
pub struct DeviceBuffer {
    buffer: wgpu::Buffer,
    byte_length: u64,
    usage: BufferUsage,
    shape: Vec<usize>,
}

impl DeviceBuffer {
    pub fn raw(&self) -> &wgpu::Buffer {
        &self.buffer
    }

    pub fn byte_length(&self) -> u64 {
        self.byte_length
    }

    pub fn usage(&self) -> BufferUsage {
        self.usage
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn binding(&self) -> wgpu::BindingResource<'_> {
        self.buffer.as_entire_binding()
    }
}

/// Live device plus queue. One per process run.
pub struct GpuContext {
    device: wgpu::Device,
    queue: wgpu::Queue,
    info: HardwareInfo,
    limits: wgpu::Limits,
    dispatches: AtomicU64,
    errors: Arc<Mutex<Vec<String>>>,
    lost: Arc<Mutex<Option<String>>>,
}

fn wgpu_backends(choice: BackendChoice) -> wgpu::Backends {
    match choice {
        BackendChoice::Vulkan => wgpu::Backends::VULKAN,
        BackendChoice::Metal => wgpu::Backends::METAL,
        BackendChoice::D3d12 => wgpu::Backends::DX12,
        BackendChoice::Any => wgpu::Backends::PRIMARY,
        BackendChoice::Noop => wgpu::Backends::NOOP,
    }
}

fn backend_choice(b: wgpu::Backend) -> BackendChoice {
    match b {
        wgpu::Backend::Vulkan => BackendChoice::Vulkan,
        wgpu::Backend::Metal => BackendChoice::Metal,
        wgpu::Backend::Dx12 => BackendChoice::D3d12,
        wgpu::Backend::Noop => BackendChoice::Noop,
        _ => BackendChoice::Any,
    }
}

impl GpuContext {
    /// Acquires an adapter and device on `backend`. Records no commands.
    pub fn acquire(backend: BackendChoice, high_performance: bool) -> Result<Self> {
        let mut desc = wgpu::InstanceDescriptor::new_without_display_handle();
        desc.backends = wgpu_backends(backend);
        if backend == BackendChoice::Noop {
            desc.backend_options.noop = wgpu::NoopBackendOptions::enabled();
        }
        let instance = wgpu::Instance::new(desc);
        let power_preference = if high_performance {
            wgpu::PowerPreference::HighPerformance
        } else {
            wgpu::PowerPreference::LowPower
        };
        let adapter = pollster::block_on(instance.request_adapter(&wgpu::RequestAdapterOptions {
            power_preference,
            force_fallback_adapter: false,
            compatible_surface: None,
            apply_limit_buckets: false,
        }))
        .map_err(|e| Error::NoAdapter {
            backend,
            reason: e.to_string(),
        })?;

        let adapter_info = adapter.get_info();
        let limits = adapter.limits();
        let max_wg = limits
            .max_compute_invocations_per_workgroup
            .min(limits.max_compute_workgroup_size_x);
        if max_wg < REQUIRED_WORKGROUP_SIZE {
            return Err(Error::LimitsTooSmall {
                actual: max_wg,
                required: REQUIRED_WORKGROUP_SIZE,
            });
        }
        let timestamp_query_supported = adapter.features().contains(wgpu::Features::TIMESTAMP_QUERY);

        let (device, queue) = pollster::block_on(adapter.request_device(&wgpu::DeviceDescriptor {
            label: Some("dispatch-lab"),
            required_features: wgpu::Features::empty(),
            required_limits: limits.clone(),
            experimental_features: wgpu::ExperimentalFeatures::disabled(),
            memory_hints: wgpu::MemoryHints::Performance,
            trace: wgpu::Trace::Off,
        }))
        .map_err(|e| Error::NoAdapter {
            backend,
            reason: format!("device request failed: {e}"),
        })?;

        let errors = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&errors);
        device.on_uncaptured_error(Arc::new(move |e: wgpu::Error| {
            log::error!("uncaptured gpu error: {e}");
            sink.lock().unwrap().push(e.to_string());
        }));
        let lost = Arc::new(Mutex::new(None));
        let lost_flag = Arc::clone(&lost);
        device.set_device_lost_callback(move |reason, msg| {
            *lost_flag.lock().unwrap() = Some(format!("{reason:?}: {msg}"));
        });

        let info = HardwareInfo {
            adapter_name: adapter_info.name.clone(),
            backend: backend_choice(adapter_info.backend),
            device_type: format!("{:?}", adapter_info.device_type).to_lowercase(),
            driver: format!("{} {}", adapter_info.driver, adapter_info.driver_info)
                .trim()
                .to_owned(),
            max_workgroup_size: max_wg,
            max_workgroups_per_dim: limits.max_compute_workgroups_per_dimension,
            max_storage_buffer_binding_size: limits.max_storage_buffer_binding_size,
            max_buffer_size: limits.max_buffer_size,
            timestamp_query_supported,
        };
        log::info!(
            "acquired {} on {} ({})",
            info.adapter_name,
            info.backend,
            info.device_type
        );
        Ok(Self {
            device,
            queue,
            info,
            limits,
            dispatches: AtomicU64::new(0),
            errors,
            lost,
        })
    }

    pub fn info(&self) -> &HardwareInfo {
        &self.info
    }

    pub fn device(&self) -> &wgpu::Device {
        &self.device
    }

    pub fn queue(&self) -> &wgpu::Queue {
        &self.queue
    }

    pub fn limits(&self) -> &wgpu::Limits {
        &self.limits
    }

    /// Whether dispatched shaders actually run on this context.
    pub fn executes_shaders(&self) -> bool {
        self.info.backend.executes_shaders()
    }

    /// Compute dispatches recorded through [`GpuContext::dispatch`] so far.
    pub fn dispatch_count(&self) -> u64 {
        self.dispatches.load(Ordering::Relaxed)
    }

    /// Sets pipeline and bind group, then records one dispatch.
    pub fn dispatch(
        &self,
        pass: &mut wgpu::ComputePass<'_>,
        pipeline: &wgpu::ComputePipeline,
        bind_group: &wgpu::BindGroup,
        workgroups: [u32; 3],
    ) {
        pass.set_pipeline(pipeline);
        pass.set_bind_group(0, bind_group, &[]);
        self.record_dispatch(pass, workgroups);
    }

    /// Records one dispatch with whatever pipeline and bind group are set.
    pub fn record_dispatch(&self, pass: &mut wgpu::ComputePass<'_>, workgroups: [u32; 3]) {
        pass.dispatch_workgroups(workgroups[0], workgroups[1], workgroups[2]);
        self.dispatches.fetch_add(1, Ordering::Relaxed);
    }

    pub fn encoder(&self) -> wgpu::CommandEncoder {
        self.device
            .create_command_encoder(&wgpu::CommandEncoderDescriptor { label: None })
    }

    pub fn submit(&self, encoder: wgpu::CommandEncoder) {
        self.queue.submit(Some(encoder.finish()));
    }

    /// Blocks until every submitted command buffer has completed.
    pub fn wait_idle(&self) -> Result<()> {
        let polled = self.device.poll(wgpu::PollType::wait_indefinitely());
        self.check()?;
        polled.map(|_| ()).map_err(|e| Error::Gpu(format!("poll failed: {e}")))
    }

    /// Surfaces errors raised asynchronously since the last check.
    pub fn check(&self) -> Result<()> {
        if let Some(msg) = self.lost.lock().unwrap().clone() {
            return Err(Error::DeviceLost(msg));
        }
        let mut errors = self.errors.lock().unwrap();
        if errors.is_empty() {
            return Ok(());
        }
        let msg = errors.join("; ");
        errors.clear();
        Err(Error::Gpu(msg))
    }

    /// Runs `f` inside a validation error scope.
    pub fn validated<T>(&self, f: impl FnOnce() -> T) -> Result<T> {
        let scope = self.device.push_error_scope(wgpu::ErrorFilter::Validation);
        let value = f();
        match pollster::block_on(scope.pop()) {
            Some(e) => Err(Error::Gpu(e.to_string())),
            None => Ok(value),
        }
    }

    fn check_size(&self, bytes: u64, storage: bool) -> Result<()> {
        let limit = if storage {
            self.limits
                .max_storage_buffer_binding_size
                .min(self.limits.max_buffer_size)
        } else {
            self.limits.max_buffer_size
        };
        if bytes > limit {
            return Err(Error::OutOfMemory { required: bytes, limit });
        }
        Ok(())
    }

    /// Uninitialized (zeroed) buffer of `shape` f32 elements.
    pub fn create_buffer(&self, label: &str, shape: Vec<usize>, usage: BufferUsage) -> Result<DeviceBuffer> {
        usage.validate()?;
        let numel: usize = shape.iter().product();
        if numel == 0 {
            return Err(Error::SizeMismatch { expected: 1, actual: 0 });
        }
        let byte_length = (numel * 4) as u64;
        self.check_size(byte_length, usage.storage)?;
        let buffer = self.validated(|| {
            self.device.create_buffer(&wgpu::BufferDescriptor {
                label: Some(label),
                size: byte_length,
                usage: usage.to_wgpu(),
                mapped_at_creation: false,
            })
        })?;
        Ok(DeviceBuffer {
            buffer,
            byte_length,
            usage,
            shape,
        })
    }

    /// Storage buffer initialized from `host`.
    pub fn upload(&self, host: &HostTensor) -> Result<DeviceBuffer> {
        self.upload_labeled("upload", host)
    }

    pub fn upload_labeled(&self, label: &str, host: &HostTensor) -> Result<DeviceBuffer> {
        if host.numel() == 0 {
            return Err(Error::SizeMismatch { expected: 1, actual: 0 });
        }
        let usage = BufferUsage::STORAGE_IO;
        let byte_length = host.byte_len() as u64;
        self.check_size(byte_length, true)?;
        let buffer = self.validated(|| {
            self.device.create_buffer_init(&wgpu::util::BufferInitDescriptor {
                label: Some(label),
                contents: bytemuck::cast_slice(host.data()),
                usage: usage.to_wgpu(),
            })
        })?;
        Ok(DeviceBuffer {
            buffer,
            byte_length,
            usage,
            shape: host.shape().to_vec(),
        })
    }

    /// Overwrites `buf` with `host`; element counts must match.
    pub fn write(&self, buf: &DeviceBuffer, host: &HostTensor) -> Result<()> {
        if host.numel() != buf.numel() {
            return Err(Error::SizeMismatch {
                expected: buf.numel(),
                actual: host.numel(),
            });
        }
        self.queue
            .write_buffer(&buf.buffer, 0, bytemuck::cast_slice(host.data()));
        Ok(())
    }

    /// 32-byte uniform block.
    pub fn uniform(&self, label: &str, words: [u32; 8]) -> wgpu::Buffer {
        self.device.create_buffer_init(&wgpu::util::BufferInitDescriptor {
            label: Some(label),
            contents: bytemuck::cast_slice(&words),
            usage: BufferUsage::UNIFORM.to_wgpu(),
        })
    }

    pub fn write_uniform(&self, buffer: &wgpu::Buffer, words: [u32; 8]) {
        self.queue.write_buffer(buffer, 0, bytemuck::cast_slice(&words));
    }

    /// Reads the whole buffer back into a tensor of the same shape.
    pub fn download(&self, buf: &DeviceBuffer) -> Result<HostTensor> {
        let bytes = self.read_bytes(buf, 0, buf.byte_length)?;
        HostTensor::new(buf.shape.clone(), bytemuck::pod_collect_to_vec(&bytes))
    }

    /// Copies `len` bytes at `offset` into a fresh staging buffer and maps it.
    pub fn read_bytes(&self, buf: &DeviceBuffer, offset: u64, len: u64) -> Result<Vec<u8>> {
        if !buf.usage.copy_src {
            return Err(Error::InvalidConfig("download needs a copy_src buffer".into()));
        }
        if len == 0 || offset + len > buf.byte_length {
            return Err(Error::SizeMismatch {
                expected: buf.byte_length as usize,
                actual: (offset + len) as usize,
            });
        }
        let staging = self.device.create_buffer(&wgpu::BufferDescriptor {
            label: Some("staging"),
            size: len,
            usage: BufferUsage::READBACK.to_wgpu(),
            mapped_at_creation: false,
        });
        let mut encoder = self.encoder();
        encoder.copy_buffer_to_buffer(&buf.buffer, offset, &staging, 0, len);
        self.submit(encoder);
        self.map_staging(&staging, len)
    }

    /// Maps the first `len` bytes of a `READBACK` buffer, blocking until
    /// every prior submission has finished.
    pub fn map_staging(&self, staging: &wgpu::Buffer, len: u64) -> Result<Vec<u8>> {
        let status = Arc::new(Mutex::new(None));
        let slot = Arc::clone(&status);
        staging.map_async(wgpu::MapMode::Read, 0..len, move |r| {
            *slot.lock().unwrap() = Some(r);
        });
        self.wait_idle()?;
        let outcome = status.lock().unwrap().take();
        match outcome {
            Some(Ok(())) => {}
            Some(Err(e)) => return Err(Error::MapFailed(e.to_string())),
            None => return Err(Error::MapFailed("map callback never fired".into())),
        }
        let bytes = {
            let view = staging
                .get_mapped_range(0..len)
                .map_err(|e| Error::MapFailed(e.to_string()))?;
            view.to_vec()
        };
        staging.unmap();
        Ok(bytes)
    }
}

/// Workgroup grid covering `n` items with `per_group` items each, folded
/// into a second dimension when the first would exceed `max_per_dim`.
pub fn grid_1d(n: usize, per_group: u32, max_per_dim: u32) -> [u32; 3] {
    let groups = (n as u64).div_ceil(per_group as u64).max(1);
    let max = max_per_dim.max(1) as u64;
    if groups <= max {
        [groups as u32, 1, 1]
    } else {
        [max as u32, groups.div_ceil(max) as u32, 1]
    }
}
