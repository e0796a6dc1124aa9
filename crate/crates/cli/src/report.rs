//! Report records and their JSON and CSV encodings.
//!
//! A record is a flat ordered map from column name to a number, string,
//! boolean, null or list of numbers. Floats are written in shortest
//! round-trip form in both encodings; non-finite values become the strings
//! `inf`, `-inf` and `nan`.

use serde_json::{Map, Value};

use bilip_core::lab::{ExperimentReport, ReportRow};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Record(pub Map<String, Value>);

pub fn float(v: f64) -> Value {
    if v.is_finite() {
        serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
    } else if v.is_nan() {
        Value::String("nan".into())
    } else if v > 0.0 {
        Value::String("inf".into())
    } else {
        Value::String("-inf".into())
    }
}

impl Record {
    pub fn new(kind: &str) -> Self {
        let mut r = Self::default();
        r.0.insert("record".into(), Value::String(kind.into()));
        r
    }

    pub fn num(mut self, key: &str, v: f64) -> Self {
        self.0.insert(key.into(), float(v));
        self
    }

    pub fn opt(mut self, key: &str, v: Option<f64>) -> Self {
        self.0.insert(key.into(), v.map_or(Value::Null, float));
        self
    }

    pub fn int(mut self, key: &str, v: usize) -> Self {
        self.0.insert(key.into(), Value::from(v as u64));
        self
    }

    pub fn flag(mut self, key: &str, v: bool) -> Self {
        self.0.insert(key.into(), Value::Bool(v));
        self
    }

    pub fn text(mut self, key: &str, v: &str) -> Self {
        self.0.insert(key.into(), Value::String(v.into()));
        self
    }

    pub fn list(mut self, key: &str, v: &[f64]) -> Self {
        self.0.insert(key.into(), Value::Array(v.iter().map(|&x| float(x)).collect()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }

    /// Numeric value of `key`, reading `"inf"` style strings back.
    pub fn number(&self, key: &str) -> Option<f64> {
        match self.0.get(key)? {
            Value::Number(n) => n.as_f64(),
            Value::String(s) => match s.as_str() {
                "inf" => Some(f64::INFINITY),
                "-inf" => Some(f64::NEG_INFINITY),
                "nan" => Some(f64::NAN),
                _ => None,
            },
            _ => None,
        }
    }
}

/// Records for every row of an experiment report. Integer-valued counts
/// stay integers; `params` and `extras` become their own columns.
pub fn experiment_records(report: &ExperimentReport) -> Vec<Record> {
    report.rows.iter().map(|row| row_record(&report.experiment, row)).collect()
}

fn row_record(experiment: &str, row: &ReportRow) -> Record {
    let mut r = Record::new(experiment).text("check", &row.check);
    for (k, v) in &row.params {
        r = r.num(k, *v);
    }
    r = r
        .num("estimate", row.estimate)
        .opt("standard_error", row.standard_error)
        .opt("lower", row.lower)
        .opt("upper", row.upper)
        .int("sample_count", row.sample_count)
        .int("violation_count", row.violation_count)
        .num("worst_violation", row.worst_violation);
    for (k, v) in &row.extras {
        r = r.num(k, *v);
    }
    match row.passed {
        Some(p) => r.flag("passed", p),
        None => {
            r.0.insert("passed".into(), Value::Null);
            r
        }
    }
}

/// `{config, results, runtime_ms}`, pretty-printed, newline-terminated.
pub fn to_json(config: &Value, records: &[Record], runtime_ms: u64) -> String {
    let mut top = Map::new();
    top.insert("config".into(), config.clone());
    top.insert(
        "results".into(),
        Value::Array(records.iter().map(|r| Value::Object(r.0.clone())).collect()),
    );
    top.insert("runtime_ms".into(), Value::from(runtime_ms));
    let mut s = serde_json::to_string_pretty(&Value::Object(top)).expect("values serialise");
    s.push('\n');
    s
}

fn csv_scalar(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(csv_scalar).collect::<Vec<_>>().join(";"),
        Value::Object(_) => serde_json::to_string(v).expect("values serialise"),
    }
}

fn csv_field(v: &Value) -> String {
    let s = csv_scalar(v);
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

/// `# config <json>` line, header over the union of keys in first-seen
/// order, then one line per record. Lists are joined with `;`.
pub fn to_csv(config: &Value, records: &[Record]) -> String {
    let mut header: Vec<&str> = Vec::new();
    for r in records {
        for k in r.0.keys() {
            if !header.contains(&k.as_str()) {
                header.push(k);
            }
        }
    }
    let mut out = format!("# config {}\n", serde_json::to_string(config).expect("values serialise"));
    out.push_str(&header.join(","));
    out.push('\n');
    for r in records {
        let line: Vec<String> = header
            .iter()
            .map(|k| r.0.get(*k).map_or_else(String::new, csv_field))
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
