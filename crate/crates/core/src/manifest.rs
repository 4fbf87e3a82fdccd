//! Run manifests: the resolved configuration followed by `result.*` keys.
//!
//! Floats are written in the shortest form that parses back to the same
//! `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::config::{fmt_f64, RunConfig, RESULT_PREFIX};
use crate::error::{Error, Result};
use crate::quantum::Check;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable recorded in every manifest. Nothing reads it.
pub const SEED_VAR: &str = "BOHMGRAV_SEED";

pub const FILE_NAME: &str = "manifest.txt";

/// A manifest value; floats render so that they parse back exactly.
pub trait Value {
    fn render(&self) -> String;
}

impl Value for f64 {
    fn render(&self) -> String {
        fmt_f64(*self)
    }
}

impl Value for usize {
    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for &str {
    fn render(&self) -> String {
        (*self).to_string()
    }
}

impl Value for String {
    fn render(&self) -> String {
        self.clone()
    }
}

impl Value for &String {
    fn render(&self) -> String {
        (*self).clone()
    }
}

impl Value for &Error {
    fn render(&self) -> String {
        self.to_string()
    }
}

#[derive(Clone, Debug)]
pub struct Manifest {
    config: RunConfig,
    results: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        let mut m = Manifest {
            config: config.clone(),
            results: Vec::new(),
        };
        m.push("version", VERSION);
        m.push("command", command);
        m.push("seed", std::env::var(SEED_VAR).unwrap_or_else(|_| "unset".into()));
        m
    }

    /// Adds `result.<key> = value`. Newlines in the value are flattened.
    pub fn push(&mut self, key: &str, value: impl Value) {
        let v = value.render().replace(['\n', '\r'], " ");
        self.results.push((key.to_string(), v));
    }

    pub fn push_list(&mut self, key: &str, values: &[f64]) {
        let text = values.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(", ");
        self.push(key, text);
    }

    /// `result.check.<prefix>.<name> = pass|fail <value> <limit>`.
    pub fn push_checks(&mut self, prefix: &str, checks: &[Check]) {
        for c in checks {
            let verdict = if c.passed { "pass" } else { "fail" };
            self.push(&format!("check.{prefix}{}", c.name), format!("{verdict} {} {}", fmt_f64(c.value), fmt_f64(c.limit)));
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.results.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# bohmgrav run manifest; feed back with --config to rerun\n");
        out.push_str(&self.config.to_text());
        for (k, v) in &self.results {
            out.push_str(RESULT_PREFIX);
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FILE_NAME);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }
}

/// The `result.*` entries of manifest text, prefix stripped.
pub fn parse_results(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| {
            let l = l.split('#').next()?.trim();
            let (k, v) = l.split_once('=')?;
            let k = k.trim().strip_prefix(RESULT_PREFIX)?;
            Some((k.to_string(), v.trim().to_string()))
        })
        .collect()
}
