//! Result records against docs/schema.json, plus the encoding rules the
//! schema cannot express (key order, significant digits, determinism).

use dispatch_lab::report::{self, to_csv, to_json, ExperimentId, ResultRecord, RunConfig};
use dispatch_lab::BackendChoice;
use serde_json::Value;

const SCHEMA: &str = include_str!("../../../docs/schema.json");

fn validator() -> jsonschema::Validator {
    let schema: Value = serde_json::from_str(SCHEMA).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn assert_valid(v: &jsonschema::Validator, json: &str, what: &str) {
    let instance: Value = serde_json::from_str(json).unwrap();
    let errors: Vec<String> = v
        .iter_errors(&instance)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{what}: {errors:#?}");
}

fn quick_noop() -> RunConfig {
    RunConfig {
        backend: BackendChoice::Noop,
        runs: 10,
        warmup: 1,
        tokens: 4,
        n_dispatches: 30,
        ..RunConfig::default()
    }
}

#[test]
fn gpu_free_records_validate() {
    let v = validator();
    for exp in [ExperimentId::Crossover, ExperimentId::Sensitivity] {
        let record = report::run(exp, &RunConfig::default()).unwrap();
        assert_valid(&v, &to_json(&record).unwrap(), exp.as_str());
    }
}

#[test]
fn noop_records_validate() {
    let v = validator();
    let cfg = quick_noop();
    for exp in ExperimentId::ALL.into_iter().filter(|e| e.requires_gpu()) {
        let mut cfg = cfg.clone();
        if exp == ExperimentId::MegaKernel || exp == ExperimentId::MlpStrategies {
            cfg.dims = Some(dispatch_lab::kernels::MatmulDims::new(1, 256, 512).unwrap());
        }
        let record = report::run(exp, &cfg).unwrap_or_else(|e| panic!("{exp}: {e}"));
        assert!(record.violations.is_empty(), "{exp}: {:?}", record.violations);
        assert!(!record.series.is_empty(), "{exp}");
        assert_valid(&v, &to_json(&record).unwrap(), exp.as_str());
    }
}

#[test]
fn schema_rejects_malformed_records() {
    let v = validator();
    let good: Value =
        serde_json::from_str(&to_json(&report::run(ExperimentId::Crossover, &RunConfig::default()).unwrap()).unwrap())
            .unwrap();
    let mut wrong_version = good.clone();
    wrong_version["schema_version"] = 2.into();
    assert!(!v.is_valid(&wrong_version));
    let mut missing = good.clone();
    missing.as_object_mut().unwrap().remove("hardware");
    assert!(!v.is_valid(&missing));
    let mut empty_cmp = good;
    empty_cmp["comparisons"] = Value::Array(vec![]);
    assert!(!v.is_valid(&empty_cmp));
}

#[test]
fn gpu_free_output_is_byte_deterministic() {
    for exp in [ExperimentId::Crossover, ExperimentId::Sensitivity] {
        let a = to_json(&report::run(exp, &RunConfig::default()).unwrap()).unwrap();
        let b = to_json(&report::run(exp, &RunConfig::default()).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn json_round_trip_is_idempotent() {
    let record = report::run(ExperimentId::SingleOp, &quick_noop()).unwrap();
    let once = to_json(&record).unwrap();
    let back = ResultRecord::from_json(&once).unwrap();
    assert_eq!(to_json(&back).unwrap(), once);
}

fn keys_sorted(v: &Value) -> bool {
    match v {
        Value::Object(m) => {
            let keys: Vec<&String> = m.keys().collect();
            keys.windows(2).all(|w| w[0] < w[1]) && m.values().all(keys_sorted)
        }
        Value::Array(a) => a.iter().all(keys_sorted),
        _ => true,
    }
}

fn significant_digits(literal: &str) -> usize {
    let mantissa = literal.split(['e', 'E']).next().unwrap();
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let trimmed = digits.trim_start_matches('0').trim_end_matches('0');
    trimmed.len()
}

#[test]
fn keys_sorted_and_floats_at_six_digits() {
    let json = to_json(&report::run(ExperimentId::Sensitivity, &RunConfig::default()).unwrap()).unwrap();
    let value: Value = serde_json::from_str(&json).unwrap();
    assert!(keys_sorted(&value));
    let mut seen = 0;
    for token in json.split(|c: char| c.is_whitespace() || ",:[]{}".contains(c)) {
        if token.contains('.') && token.parse::<f64>().is_ok() {
            assert!(significant_digits(token) <= 6, "{token}");
            seen += 1;
        }
    }
    assert!(seen > 10);
    assert!(json.ends_with('\n'));
}

#[test]
fn comparisons_omitted_when_empty() {
    let crossover = to_json(&report::run(ExperimentId::Crossover, &RunConfig::default()).unwrap()).unwrap();
    assert!(!crossover.contains("\"comparisons\""));
    let single = to_json(&report::run(ExperimentId::SingleOp, &quick_noop()).unwrap()).unwrap();
    assert!(single.contains("\"comparisons\""));
}

#[test]
fn csv_has_sample_and_summary_rows() {
    let record = report::run(ExperimentId::SeqDispatch, &quick_noop()).unwrap();
    let csv = to_csv(&record).unwrap();
    let mut reader = csv::ReaderBuilder::new().from_reader(csv.as_bytes());
    let headers = reader.headers().unwrap().clone();
    assert_eq!(headers.len(), 12);
    assert_eq!(&headers[0], "experiment");
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let samples = rows.iter().filter(|r| &r[2] == "sample").count();
    let summaries = rows.iter().filter(|r| &r[2] == "summary").count();
    let expected_samples: usize = record.series.values().map(|s| s.samples.len()).sum();
    assert_eq!(samples, expected_samples);
    assert_eq!(summaries, record.series.len());
    assert!(rows.iter().all(|r| r.len() == 12));

    let empty = to_csv(&report::run(ExperimentId::Crossover, &RunConfig::default()).unwrap()).unwrap();
    assert_eq!(empty.lines().count(), 2);
}

#[test]
fn write_record_creates_requested_format() {
    let dir = tempfile::tempdir().unwrap();
    let record = report::run(ExperimentId::Crossover, &RunConfig::default()).unwrap();
    let json_path = dir.path().join("x.json");
    report::write_record(&record, report::OutputFormat::Json, &json_path).unwrap();
    assert_eq!(std::fs::read_to_string(&json_path).unwrap(), to_json(&record).unwrap());
    let csv_path = dir.path().join("x.csv");
    report::write_record(&record, report::OutputFormat::Csv, &csv_path).unwrap();
    assert!(std::fs::read_to_string(&csv_path)
        .unwrap()
        .starts_with("experiment,series,row"));
}
