//! Experiment registry, result records and their JSON/CSV emission.

mod emit;
mod experiments;
#[cfg(feature = "gpu")]
mod gpu_runs;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardware::{BackendChoice, HardwareInfo};
use crate::kernels::{MatmulDims, DEFAULT_RMSNORM_EPS};
use crate::stats::{summarize, welch_t_test, WelchResult};

pub use emit::{format_float, round_sig, to_csv, to_json, write_record, OutputFormat, SIGNIFICANT_DIGITS};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    SeqDispatch,
    SingleOp,
    Timeline,
    RmsnormFusion,
    MlpStrategies,
    MegaKernel,
    MatmulEfficiency,
    ArgmaxCompare,
    ToyDecode,
    Crossover,
    Sensitivity,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 11] = [
        ExperimentId::SeqDispatch,
        ExperimentId::SingleOp,
        ExperimentId::Timeline,
        ExperimentId::RmsnormFusion,
        ExperimentId::MlpStrategies,
        ExperimentId::MegaKernel,
        ExperimentId::MatmulEfficiency,
        ExperimentId::ArgmaxCompare,
        ExperimentId::ToyDecode,
        ExperimentId::Crossover,
        ExperimentId::Sensitivity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::SeqDispatch => "seq-dispatch",
            ExperimentId::SingleOp => "single-op",
            ExperimentId::Timeline => "timeline",
            ExperimentId::RmsnormFusion => "rmsnorm-fusion",
            ExperimentId::MlpStrategies => "mlp-strategies",
            ExperimentId::MegaKernel => "mega-kernel",
            ExperimentId::MatmulEfficiency => "matmul-efficiency",
            ExperimentId::ArgmaxCompare => "argmax-compare",
            ExperimentId::ToyDecode => "toy-decode",
            ExperimentId::Crossover => "crossover",
            ExperimentId::Sensitivity => "sensitivity",
        }
    }

    pub fn requires_gpu(self) -> bool {
        !matches!(self, ExperimentId::Crossover | ExperimentId::Sensitivity)
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::UnknownExperiment(s.to_owned()))
    }
}

/// Everything an experiment reads; echoed verbatim into the record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub backend: BackendChoice,
    pub high_performance: bool,
    pub runs: usize,
    pub warmup: usize,
    /// Experiment-specific `m,k,n`; `None` selects the experiment default.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dims: Option<MatmulDims>,
    pub model: String,
    pub seed: u64,
    pub eps: f64,
    /// Dispatches per sequential sample and per timeline pass.
    pub n_dispatches: usize,
    /// Tokens generated by decode experiments.
    pub tokens: usize,
    pub reuse_bind_groups: bool,
    pub peak_tflops: f64,
    pub t_overhead_us: f64,
    pub throughput_flops: f64,
    pub perturb_percent: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendChoice::Any,
            high_performance: true,
            runs: 30,
            warmup: 5,
            dims: None,
            model: "tiny".to_owned(),
            seed: 42,
            eps: DEFAULT_RMSNORM_EPS,
            n_dispatches: 100,
            tokens: 20,
            reuse_bind_groups: false,
            peak_tflops: 105.0,
            t_overhead_us: 95.0,
            throughput_flops: 2e12,
            perturb_percent: 20.0,
        }
    }
}

/// Raw samples of one measured quantity and their summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub unit: String,
    pub samples: Vec<f64>,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci95: [f64; 2],
    /// Percent; absent when the mean is not positive.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub coefficient_of_variation: Option<f64>,
}

impl Series {
    pub fn new(unit: &str, samples: Vec<f64>) -> Result<Self> {
        let s = summarize(&samples)?;
        Ok(Self {
            unit: unit.to_owned(),
            n: s.n,
            mean: s.mean,
            std: s.std,
            ci95: [s.ci95_low, s.ci95_high],
            coefficient_of_variation: s.cv_percent,
            samples,
        })
    }
}

/// Welch comparison of two series in the same record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub candidate: String,
    /// `mean(baseline) / mean(candidate)`.
    pub speedup: f64,
    pub welch: WelchResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub experiment: ExperimentId,
    pub hardware: HardwareInfo,
    pub config: RunConfig,
    pub series: BTreeMap<String, Series>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub comparisons: Vec<Comparison>,
    pub derived: serde_json::Map<String, serde_json::Value>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
    /// Failed correctness checks. A non-empty list maps to exit code 3.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub violations: Vec<String>,
}

impl ResultRecord {
    pub fn new(experiment: ExperimentId, hardware: HardwareInfo, config: &RunConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment,
            hardware,
            config: config.clone(),
            series: BTreeMap::new(),
            comparisons: Vec::new(),
            derived: serde_json::Map::new(),
            warnings: Vec::new(),
            violations: Vec::new(),
        }
    }

    pub fn add_series(&mut self, name: &str, unit: &str, samples: Vec<f64>) -> Result<()> {
        self.series.insert(name.to_owned(), Series::new(unit, samples)?);
        Ok(())
    }

    /// Welch test of two recorded series.
    pub fn compare(&mut self, baseline: &str, candidate: &str) -> Result<()> {
        let get = |name: &str| {
            self.series
                .get(name)
                .ok_or_else(|| Error::InvalidConfig(format!("no series `{name}` to compare")))
        };
        let (a, b) = (get(baseline)?, get(candidate)?);
        let welch = welch_t_test(&a.samples, &b.samples)?;
        let speedup = a.mean / b.mean;
        self.comparisons.push(Comparison {
            baseline: baseline.to_owned(),
            candidate: candidate.to_owned(),
            speedup,
            welch,
        });
        Ok(())
    }

    pub fn derive(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.derived.insert(key.to_owned(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let m = message.into();
        log::warn!("{m}");
        self.warnings.push(m);
    }

    pub fn violation(&mut self, message: impl Into<String>) {
        let m = message.into();
        log::error!("invariant violated: {m}");
        self.violations.push(m);
    }

    /// `Err(InvariantViolation)` if any check failed.
    pub fn check(&self) -> Result<()> {
        if self.violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvariantViolation(self.violations.join("; ")))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Runs one experiment. GPU experiments acquire their own context.
pub fn run(experiment: ExperimentId, config: &RunConfig) -> Result<ResultRecord> {
    log::info!("running {experiment}");
    match experiment {
        ExperimentId::Crossover => experiments::crossover(config),
        ExperimentId::Sensitivity => experiments::sensitivity(config),
        #[cfg(feature = "gpu")]
        gpu_experiment => gpu_runs::run(gpu_experiment, config),
        #[cfg(not(feature = "gpu"))]
        gpu_experiment => Err(Error::InvalidConfig(format!(
            "`{gpu_experiment}` needs a GPU and this build has the `gpu` feature disabled"
        ))),
    }
}
