//! Number formatting and artifact writing.
//!
//! Every number leaves the process rounded to 12 significant digits, so
//! artifacts are stable across platforms and thread counts.

use std::path::Path;

use nalgebra::DVector;
use serde_json::{Map, Value};

use crate::CliError;

/// `x` rounded to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Text form of a number for trace tables.
pub fn fmt_num(x: f64) -> String {
    let r = round12(x);
    if r == 0.0 {
        "0".into()
    } else if !r.is_finite() {
        format!("{r}")
    } else if (1e-5..1e15).contains(&r.abs()) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(round12(x)).map_or(Value::Null, Value::Number)
}

pub fn nums<'a>(xs: impl IntoIterator<Item = &'a f64>) -> Value {
    Value::Array(xs.into_iter().map(|x| num(*x)).collect())
}

pub fn vector(v: &DVector<f64>) -> Value {
    nums(v.iter())
}

/// Ordered JSON object builder.
#[derive(Default)]
pub struct Obj(Map<String, Value>);

impl Obj {
    pub fn new() -> Self {
        Obj(Map::new())
    }

    pub fn set(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.0.insert(key.to_string(), value.into());
        self
    }

    pub fn build(self) -> Value {
        Value::Object(self.0)
    }
}

/// One CSV table destined for `<out>/<name>`.
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: Vec<String>) -> Self {
        Table {
            name: name.into(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(runtime)?;
        for r in &self.rows {
            w.write_record(r).map_err(runtime)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
        String::from_utf8(bytes).map_err(runtime)
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Artifacts produced by one command.
pub struct Artifacts {
    pub summary: Value,
    pub tables: Vec<Table>,
}

impl Artifacts {
    pub fn summary_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("JSON values serialize");
        s.push('\n');
        s
    }

    /// Writes `summary.json` and every table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("summary.json"), self.summary_text()).map_err(io)?;
        for t in &self.tables {
            std::fs::write(dir.join(&t.name), t.to_csv()?).map_err(io)?;
        }
        Ok(())
    }
}
