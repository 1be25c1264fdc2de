//! Deterministic report files: a JSON summary for machine checks and a
//! CSV detail table for inspection. Floats are printed at 17 significant
//! digits; identical inputs produce byte-identical files.

use anyhow::{Context, Result};
use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};

/// 17 significant digits, enough to reproduce any f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(f) => fmt_f64(*f),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> Self {
        CsvTable {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub struct ReportWriter {
    out_dir: PathBuf,
    pub seed: u64,
}

impl ReportWriter {
    pub fn new(out_dir: &Path, seed: u64) -> Result<Self> {
        fs::create_dir_all(out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        Ok(ReportWriter {
            out_dir: out_dir.to_path_buf(),
            seed,
        })
    }

    /// JSON summary with the seed and crate version embedded.
    pub fn write_summary(&self, scenario: &str, mut body: Value) -> Result<PathBuf> {
        let obj = body
            .as_object_mut()
            .expect("summary body must be a JSON object");
        obj.insert("scenario".into(), Value::String(scenario.into()));
        obj.insert("seed".into(), Value::Number(self.seed.into()));
        obj.insert(
            "version".into(),
            Value::String(env!("CARGO_PKG_VERSION").into()),
        );
        let path = self.out_dir.join("summary.json");
        let mut text = serde_json::to_string_pretty(&body)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_csv(&self, name: &str, table: &CsvTable) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        fs::write(&path, table.render())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_round_trips() {
        for x in [1.0, -0.1, 1e-300, std::f64::consts::PI, 2.0f64.powi(-52)] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(x, back, "{s}");
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = CsvTable::new(&["a", "b"]);
        assert_eq!(t.render(), "a,b\n");
    }
}
