//! Structured JSON reports. Field order is fixed by the struct definitions
//! and no timestamps or host details are recorded, so identical inputs give
//! identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

pub const SCHEMA: &str = "tegene-report/1";

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub b: Option<usize>,
    pub inputs: BTreeMap<String, String>,
    pub options: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(seed: Option<u64>, b: Option<usize>) -> Self {
        Provenance {
            tool: "tegene",
            version: env!("CARGO_PKG_VERSION"),
            seed,
            b,
            inputs: BTreeMap::new(),
            options: BTreeMap::new(),
        }
    }

    pub fn input(mut self, key: &str, path: Option<&Path>) -> Self {
        if let Some(p) = path {
            self.inputs.insert(key.to_string(), p.display().to_string());
        }
        self
    }

    pub fn option(mut self, key: &str, value: impl ToString) -> Self {
        self.options.insert(key.to_string(), value.to_string());
        self
    }
}

#[derive(Debug, Serialize)]
pub struct Report<T: Serialize> {
    pub schema: &'static str,
    pub command: &'static str,
    pub provenance: Provenance,
    pub result: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &'static str, provenance: Provenance, result: T) -> Self {
        Report { schema: SCHEMA, command, provenance, result }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Writes to `out`, or to standard output when `out` is `None`.
    pub fn emit(&self, out: Option<&Path>) -> Result<()> {
        let text = self.to_json()?;
        match out {
            Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

/// Tab-separated table with a header row.
pub fn write_tsv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}
