//! Recorded observables on a time grid, with deterministic CSV/JSON-lines
//! output. Floats are written with 17 significant digits so identical runs
//! produce identical bytes.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
}

/// 17-significant-digit float formatting shared by all writers.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl TimeSeries {
    pub fn new(names: &[&str]) -> Self {
        Self {
            times: Vec::new(),
            columns: names.iter().map(|n| (n.to_string(), Vec::new())).collect(),
        }
    }

    pub fn push_row(&mut self, t: f64, values: &[f64]) {
        debug_assert_eq!(values.len(), self.columns.len());
        if let Some(&last) = self.times.last() {
            debug_assert!(t > last, "times must be strictly increasing");
        }
        self.times.push(t);
        for (col, &v) in self.columns.iter_mut().zip(values) {
            col.1.push(v);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend(self.columns.iter().map(|(n, _)| n.clone()));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.times.len() {
            let mut row = vec![format_float(self.times[i])];
            for (_, col) in &self.columns {
                row.push(format_float(col[i]));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_jsonl(&self, w: &mut dyn Write) -> Result<()> {
        for i in 0..self.times.len() {
            let mut obj = serde_json::Map::new();
            obj.insert("t".into(), json_float(self.times[i]));
            for (name, col) in &self.columns {
                obj.insert(name.clone(), json_float(col[i]));
            }
            writeln!(w, "{}", serde_json::Value::Object(obj))?;
        }
        Ok(())
    }
}

fn json_float(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(x)
        .map(serde_json::Value::Number)
        .unwrap_or(serde_json::Value::Null)
}

/// Reproducibility echo written next to every output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub version: String,
    pub scheme: Option<String>,
    pub seed: Option<u64>,
    pub corrector_table_hash: Option<String>,
    pub config: serde_json::Value,
}

impl RunMetadata {
    pub fn new(config: serde_json::Value) -> Self {
        Self {
            tool: "chainlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            scheme: None,
            seed: None,
            corrector_table_hash: None,
            config,
        }
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(Error::Io)
    }
}
