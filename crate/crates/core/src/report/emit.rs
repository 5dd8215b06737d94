use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde_json::Value;

use super::ResultRecord;
use crate::error::{Error, Result};

pub const SIGNIFICANT_DIGITS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(Error::InvalidConfig(format!(
                "unknown format `{other}` (expected json or csv)"
            ))),
        }
    }
}

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

/// Shortest text of `round_sig(x)`; always carries a `.` or an exponent so
/// it reads back as a float.
pub fn format_float(x: f64) -> String {
    let r = round_sig(x);
    if !r.is_finite() {
        return "null".to_owned();
    }
    let a = r.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        return format!("{r:e}");
    }
    let s = format!("{r}");
    if s.contains('.') {
        s
    } else {
        format!("{s}.0")
    }
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |out: &mut String, n: usize| out.extend(std::iter::repeat_n(' ', n));
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&format_float(n.as_f64().expect("f64 number")));
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                pad(out, indent + 2);
                write_value(out, item, indent + 2);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                pad(out, indent + 2);
                out.push_str(&serde_json::to_string(k).expect("keys serialize"));
                out.push_str(": ");
                write_value(out, &map[*k], indent + 2);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push('}');
        }
    }
}

/// Pretty JSON with sorted keys and floats at six significant digits.
pub fn to_json(record: &ResultRecord) -> Result<String> {
    let value = serde_json::to_value(record)?;
    let mut out = String::new();
    write_value(&mut out, &value, 0);
    out.push('\n');
    Ok(out)
}

const CSV_HEADER: [&str; 12] = [
    "experiment",
    "series",
    "row",
    "index",
    "value",
    "unit",
    "n",
    "mean",
    "std",
    "ci95_low",
    "ci95_high",
    "cv_percent",
];

/// One row per raw sample, then one summary row per series.
pub fn to_csv(record: &ResultRecord) -> Result<String> {
    let exp = record.experiment.as_str();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for (name, s) in &record.series {
        for (i, v) in s.samples.iter().enumerate() {
            let (i, v) = (i.to_string(), format_float(*v));
            w.write_record([exp, name, "sample", &i, &v, &s.unit, "", "", "", "", "", ""])?;
        }
    }
    for (name, s) in &record.series {
        let cv = s.coefficient_of_variation.map(format_float).unwrap_or_default();
        let n = s.n.to_string();
        let stats = [s.mean, s.std, s.ci95[0], s.ci95[1]].map(format_float);
        w.write_record([
            exp, name, "summary", "", "", &s.unit, &n, &stats[0], &stats[1], &stats[2], &stats[3], &cv,
        ])?;
    }
    if record.series.is_empty() {
        w.write_record([exp, "", "summary", "", "", "", "0", "", "", "", "", ""])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_record(record: &ResultRecord, format: OutputFormat, path: &Path) -> Result<()> {
    let text = match format {
        OutputFormat::Json => to_json(record)?,
        OutputFormat::Csv => to_csv(record)?,
    };
    std::fs::write(path, text)?;
    Ok(())
}
