//! Report rows and their CSV / JSON serializations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use snrlab_core::stats::Estimate;

use crate::config::Format;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "quantity,lambda,estimate,stderr,oracle,rel_err,pass";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub quantity: String,
    pub lambda: Option<f64>,
    pub estimate: f64,
    pub stderr: Option<f64>,
    pub oracle: Option<f64>,
    pub rel_err: Option<f64>,
    pub pass: Option<bool>,
}

impl Row {
    pub fn new(quantity: impl Into<String>, lambda: Option<f64>, estimate: f64) -> Self {
        Self {
            quantity: quantity.into(),
            lambda,
            estimate,
            stderr: None,
            oracle: None,
            rel_err: None,
            pass: None,
        }
    }

    pub fn estimate(quantity: impl Into<String>, lambda: Option<f64>, e: Estimate) -> Self {
        let mut r = Self::new(quantity, lambda, e.value);
        r.stderr = e.stderr.is_finite().then_some(e.stderr);
        r
    }

    /// Attaches an oracle and fills `rel_err`.
    pub fn oracle(mut self, oracle: Option<f64>) -> Self {
        if let Some(o) = oracle {
            self.oracle = Some(o);
            self.rel_err = Some(if o == 0.0 {
                (self.estimate - o).abs()
            } else {
                ((self.estimate - o) / o).abs()
            });
        }
        self
    }

    pub fn pass(mut self, ok: bool) -> Self {
        self.pass = Some(ok);
        self
    }

    /// Pass iff within `max(k·SE, rel·|oracle|)` of the oracle; no verdict without an oracle.
    pub fn judge(self, k: f64, rel: f64) -> Self {
        match self.oracle {
            Some(o) => {
                let se = self.stderr.unwrap_or(0.0);
                let ok = (self.estimate - o).abs() <= (k * se).max(rel * o.abs()) + 1e-12;
                self.pass(ok)
            }
            None => self,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub subcommand: String,
    pub seed: u64,
    pub rows: Vec<Row>,
}

impl Report {
    pub fn new(subcommand: &str, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            subcommand: subcommand.to_string(),
            seed,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false))
    }

    pub fn failures(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| r.pass == Some(false))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let num = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:?},{},{},{},{}",
                r.quantity,
                num(r.lambda),
                r.estimate,
                num(r.stderr),
                num(r.oracle),
                num(r.rel_err),
                r.pass.map(|p| p.to_string()).unwrap_or_default()
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// Writes `<subcommand>.<ext>` for each format and returns the paths.
    pub fn write(&self, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let mut paths = Vec::new();
        for f in formats {
            let (ext, body) = match f {
                Format::Csv => ("csv", self.to_csv()),
                Format::Json => ("json", self.to_json()?),
            };
            let path = dir.join(format!("{}.{ext}", self.subcommand));
            std::fs::write(&path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            paths.push(path);
        }
        Ok(paths)
    }
}
