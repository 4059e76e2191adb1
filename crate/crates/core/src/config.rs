//! Flat `key = value` run configuration.
//!
//! ```text
//! # comment
//! g.family = power_diff
//! g.q = 1
//! sigma = 0.1
//! converge.sigmas = 0.1, 0.05, 0.025, 0.0125
//! ```
//!
//! Keys are dotted identifiers; unknown or repeated keys are errors. Values
//! are read lazily with their type checked against the key, and every value
//! read (including defaults) is recorded so it can be echoed back as a
//! config that reproduces the run.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};

/// Every key the CLI understands.
pub const KNOWN_KEYS: &[&str] = &[
    "g.family",
    "g.q",
    "seed",
    "threads",
    "output_dir",
    "sigma",
    "dt",
    "d_over_s",
    "density.y_min",
    "density.y_max",
    "density.n",
    "sample.n",
    "sample.rho",
    "sample.bins",
    "tails.n",
    "tails.k_std",
    "converge.sigmas",
    "converge.scaling",
    "converge.r",
    "scenario.demand.kind",
    "scenario.demand.value",
    "scenario.demand.mean",
    "scenario.demand.amplitude",
    "scenario.demand.period",
    "scenario.demand.times",
    "scenario.demand.values",
    "scenario.demand.path",
    "scenario.supply.kind",
    "scenario.supply.value",
    "scenario.supply.mean",
    "scenario.supply.amplitude",
    "scenario.supply.period",
    "scenario.supply.times",
    "scenario.supply.values",
    "scenario.supply.path",
    "dt_step",
    "p0",
    "t0",
    "t_end",
    "simulate.scheme",
    "simulate.paths",
    "volatility.window",
    "volatility.stride",
    "volatility.mode",
    "volatility.input",
    "volatility.paths",
    "variance.bessel",
    "check_g.x_min",
    "check_g.x_max",
    "check_g.n",
];

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed key/value pairs plus the record of resolved values.
#[derive(Clone, Debug, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, Entry>,
    resolved: std::cell::RefCell<BTreeMap<String, String>>,
}

fn valid_key_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = match raw.find('#') {
                Some(k) => &raw[..k],
                None => raw,
            };
            if content.trim().is_empty() {
                continue;
            }
            let eq = content.find('=').ok_or_else(|| Error::Parse {
                line,
                column: content.len() - content.trim_start().len() + 1,
                message: "expected `key = value`".into(),
            })?;
            let key_part = &content[..eq];
            let key = key_part.trim();
            let key_col = key_part.len() - key_part.trim_start().len() + 1;
            if key.is_empty() {
                return Err(Error::Parse { line, column: eq + 1, message: "missing key before `=`".into() });
            }
            if let Some((off, c)) = key.char_indices().find(|&(_, c)| !valid_key_char(c)) {
                return Err(Error::Parse {
                    line,
                    column: key_col + off,
                    message: format!("invalid character `{c}` in key"),
                });
            }
            let value_part = &content[eq + 1..];
            let mut value = value_part.trim().to_string();
            if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
                value = value[1..value.len() - 1].to_string();
            }
            if value.is_empty() {
                return Err(Error::Parse { line, column: eq + 2, message: format!("missing value for `{key}`") });
            }
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::UnknownKey { key: key.to_string(), line });
            }
            if entries.contains_key(key) {
                return Err(Error::Parse { line, column: key_col, message: format!("duplicate key `{key}`") });
            }
            entries.insert(key.to_string(), Entry { value, line });
        }
        Ok(Self { entries, resolved: Default::default() })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Override (or add) a value, as command-line flags do.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::UnknownKey { key: key.to_string(), line: 0 });
        }
        self.entries.insert(key.to_string(), Entry { value: value.into(), line: 0 });
        Ok(())
    }

    fn record(&self, key: &str, value: String) {
        self.resolved.borrow_mut().insert(key.to_string(), value);
    }

    /// Resolved values, in key order.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        self.resolved.borrow().clone()
    }

    fn typed<T>(&self, key: &str, expected: &'static str, parse: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => parse(&e.value).map(Some).ok_or_else(|| Error::TypeMismatch {
                key: key.to_string(),
                expected,
                value: e.value.clone(),
                line: e.line,
            }),
        }
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        let v = self.typed(key, "a finite number", |s| s.parse::<f64>().ok().filter(|v| v.is_finite()))?;
        if let Some(x) = v {
            self.record(key, format!("{x}"));
        }
        Ok(v)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.f64_opt(key)?.unwrap_or(default);
        self.record(key, format!("{v}"));
        Ok(v)
    }

    pub fn f64_req(&self, key: &str) -> Result<f64> {
        self.f64_opt(key)?.ok_or_else(|| Error::RequiredKey(key.to_string()))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        let v = self.usize_opt(key)?.unwrap_or(default);
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn usize_opt(&self, key: &str) -> Result<Option<usize>> {
        let v = self.typed(key, "a non-negative integer", |s| s.parse::<usize>().ok())?;
        if let Some(x) = v {
            self.record(key, x.to_string());
        }
        Ok(v)
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        let v = self.typed(key, "an unsigned 64-bit integer", |s| s.parse::<u64>().ok())?.unwrap_or(default);
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        let v = self
            .typed(key, "true or false", |s| match s {
                "true" => Some(true),
                "false" => Some(false),
                _ => None,
            })?
            .unwrap_or(default);
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn str_opt(&self, key: &str) -> Option<String> {
        let v = self.entries.get(key).map(|e| e.value.clone());
        if let Some(s) = &v {
            self.record(key, s.clone());
        }
        v
    }

    pub fn str_or(&self, key: &str, default: &str) -> String {
        let v = self.str_opt(key).unwrap_or_else(|| default.to_string());
        self.record(key, v.clone());
        v
    }

    /// Parse with `FromStr`, reporting failures as a type mismatch.
    pub fn parsed_or<T: std::str::FromStr>(&self, key: &str, default: &str, expected: &'static str) -> Result<T> {
        let s = self.str_or(key, default);
        s.parse::<T>().map_err(|_| Error::TypeMismatch {
            key: key.to_string(),
            expected,
            value: s.clone(),
            line: self.entries.get(key).map_or(0, |e| e.line),
        })
    }

    /// Comma-separated numbers, optionally in brackets.
    pub fn list_opt(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let v = self.typed(key, "a comma-separated list of numbers", |s| {
            let s = s.trim().trim_start_matches('[').trim_end_matches(']');
            s.split(',')
                .map(|p| p.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
        })?;
        if let Some(xs) = &v {
            self.record(key, fmt_list(xs));
        }
        Ok(v)
    }

    pub fn list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        let v = self.list_opt(key)?.unwrap_or_else(|| default.to_vec());
        self.record(key, fmt_list(&v));
        Ok(v)
    }

    pub fn path_opt(&self, key: &str) -> Option<PathBuf> {
        self.str_opt(key).map(PathBuf::from)
    }

    /// Line on which `key` was given (0 when set from the command line or absent).
    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ")
}

/// Worker count: fixed or rayon's default.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Threads {
    Auto,
    Fixed(usize),
}

impl Threads {
    pub fn count(self) -> Option<usize> {
        match self {
            Threads::Auto => None,
            Threads::Fixed(n) => Some(n),
        }
    }
}

impl std::str::FromStr for Threads {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Threads::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Threads::Fixed(n)),
            _ => Err(Error::invalid(format!("threads must be `auto` or a positive integer, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for Threads {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Threads::Auto => write!(f, "auto"),
            Threads::Fixed(n) => write!(f, "{n}"),
        }
    }
}
