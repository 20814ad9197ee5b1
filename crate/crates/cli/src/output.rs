//! Byte-deterministic CSV and JSON emission.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

/// Version of the results table layout; bump on any column change.
pub const SCHEMA_VERSION: u32 = 1;

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    experiment: String,
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(experiment: &str, columns: &[&str]) -> Self {
        Self {
            experiment: experiment.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn render(&self) -> String {
        let mut s = format!("# crem results v{SCHEMA_VERSION} experiment={}\n", self.experiment);
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// One named check. `pass` is `None` for statistics that are reported but
/// not gated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub t: Option<f64>,
    pub beta: Option<[f64; 2]>,
    pub estimate: f64,
    pub target: Option<f64>,
    pub stderr: Option<f64>,
    pub z: Option<f64>,
    pub pass: Option<bool>,
    pub note: Option<String>,
}

impl Check {
    pub fn report(name: &str, estimate: f64) -> Self {
        Self {
            name: name.to_string(),
            t: None,
            beta: None,
            estimate,
            target: None,
            stderr: None,
            z: None,
            pass: None,
            note: None,
        }
    }

    pub fn at(mut self, t: f64) -> Self {
        self.t = Some(t);
        self
    }

    pub fn beta(mut self, sigma: f64, tau: f64) -> Self {
        self.beta = Some([sigma, tau]);
        self
    }

    pub fn target(mut self, target: f64) -> Self {
        self.target = Some(target);
        self
    }

    pub fn stderr(mut self, stderr: f64) -> Self {
        self.stderr = Some(stderr);
        if let Some(target) = self.target {
            self.z = Some((self.estimate - target) / stderr);
        }
        self
    }

    pub fn z(mut self, z: f64) -> Self {
        self.z = Some(z);
        self
    }

    pub fn pass(mut self, pass: bool) -> Self {
        self.pass = Some(pass);
        self
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdicts {
    pub experiment: String,
    pub schema_version: u32,
    pub checks: Vec<Check>,
    /// Replicas dropped because the population cap was hit.
    pub overflowed: u64,
    pub extra: serde_json::Value,
    pub all_pass: bool,
}

impl Verdicts {
    pub fn new(experiment: &str, checks: Vec<Check>, overflowed: u64, extra: serde_json::Value) -> Self {
        let all_pass = checks.iter().all(|c| c.pass != Some(false));
        Self {
            experiment: experiment.to_string(),
            schema_version: SCHEMA_VERSION,
            checks,
            overflowed,
            extra,
            all_pass,
        }
    }

    pub fn find<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Check> {
        self.checks.iter().filter(move |c| c.name == name)
    }
}

/// Everything one experiment writes.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub results: Table,
    pub verdicts: Verdicts,
    pub provenance: serde_json::Value,
}

impl Artifacts {
    pub fn render(&self) -> Result<[(&'static str, String); 3]> {
        Ok([
            ("results.csv", self.results.render()),
            ("verdicts.json", serde_json::to_string_pretty(&self.verdicts)? + "\n"),
            (
                "provenance.json",
                serde_json::to_string_pretty(&self.provenance)? + "\n",
            ),
        ])
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, body) in self.render()? {
            let path = dir.join(name);
            fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}
