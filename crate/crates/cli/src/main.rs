use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dispatch_lab::kernels::MatmulDims;
use dispatch_lab::report::{self, ExperimentId, OutputFormat, RunConfig};
use dispatch_lab::{BackendChoice, Error, Result};

/// Runs one dispatch-lab experiment and writes its result record.
#[derive(Debug, Parser)]
#[command(name = "dispatch-lab", version)]
struct Args {
    /// seq-dispatch, single-op, timeline, rmsnorm-fusion, mlp-strategies,
    /// mega-kernel, matmul-efficiency, argmax-compare, toy-decode,
    /// crossover or sensitivity.
    #[arg(long)]
    experiment: String,

    /// vulkan, metal, d3d12, any or noop. DISPATCH_LAB_BACKEND overrides it.
    #[arg(long, default_value = "any")]
    backend: String,

    #[arg(long, default_value_t = 30)]
    runs: usize,

    #[arg(long, default_value_t = 5)]
    warmup: usize,

    /// Comma-separated m,k,n.
    #[arg(long, value_parser = parse_dims)]
    dims: Option<MatmulDims>,

    #[arg(long, default_value = "tiny", value_parser = ["tiny", "qwen05b-like", "qwen15b-like"])]
    model: String,

    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// Result file. Defaults to `<experiment>.<format>`.
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long, default_value = "json", value_parser = ["json", "csv"])]
    format: String,

    /// Dispatches per sequential sample and per timeline pass.
    #[arg(long, default_value_t = 100)]
    n_dispatches: usize,

    /// Tokens generated by decode experiments.
    #[arg(long, default_value_t = 20)]
    tokens: usize,

    /// Reuse two cached bind groups instead of creating one per dispatch.
    #[arg(long)]
    reuse_bind_groups: bool,

    /// Prefer a low-power adapter.
    #[arg(long)]
    low_power: bool,

    #[arg(long, default_value_t = 105.0)]
    peak_tflops: f64,

    #[arg(long, default_value_t = 95.0)]
    t_overhead_us: f64,

    #[arg(long, default_value_t = 2e12)]
    throughput_flops: f64,

    #[arg(long, default_value_t = 20.0)]
    perturb_percent: f64,
}

fn parse_dims(s: &str) -> std::result::Result<MatmulDims, String> {
    let parts: Vec<u64> = s
        .split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [m, k, n] => MatmulDims::new(m, k, n).map_err(|e| e.to_string()),
        _ => Err(format!("expected m,k,n, got `{s}`")),
    }
}

fn execute(args: Args) -> Result<()> {
    let experiment: ExperimentId = args.experiment.parse()?;
    let backend = BackendChoice::from_env_or(args.backend.parse()?)?;
    let format: OutputFormat = args.format.parse()?;
    let config = RunConfig {
        backend,
        high_performance: !args.low_power,
        runs: args.runs,
        warmup: args.warmup,
        dims: args.dims,
        model: args.model,
        seed: args.seed,
        n_dispatches: args.n_dispatches,
        tokens: args.tokens,
        reuse_bind_groups: args.reuse_bind_groups,
        peak_tflops: args.peak_tflops,
        t_overhead_us: args.t_overhead_us,
        throughput_flops: args.throughput_flops,
        perturb_percent: args.perturb_percent,
        ..RunConfig::default()
    };
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{experiment}.{}", args.format)));
    let record = report::run(experiment, &config)?;
    report::write_record(&record, format, &out)?;
    log::info!("wrote {}", out.display());
    record.check()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let args = Args::parse();
    match execute(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
