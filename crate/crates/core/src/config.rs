//! Hyperparameters and the plain-text `key = value` config format.
//!
//! ```text
//! # comments and blank lines are ignored
//! n_superpixels = 200
//! rho = 0.1
//! beta = 0.2
//! ```

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Defaults: 200 superpixels, kernel scale 0.1, `γ_A = 1e-6`, `γ_I = 1`, `β = 0.2`, `η² = 0.3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub n_superpixels: usize,
    pub rho: f64,
    pub gamma_a: f64,
    pub gamma_i: f64,
    pub beta: f64,
    pub slic_compactness: f64,
    pub seed: u64,
    pub eta2: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            n_superpixels: 200,
            rho: 0.1,
            gamma_a: 1e-6,
            gamma_i: 1.0,
            beta: 0.2,
            slic_compactness: 10.0,
            seed: 42,
            eta2: 0.3,
        }
    }
}

pub const KEYS: [&str; 8] = [
    "n_superpixels",
    "rho",
    "gamma_a",
    "gamma_i",
    "beta",
    "slic_compactness",
    "seed",
    "eta2",
];

impl Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: &dyn fmt::Display| {
            Err(Error::InvalidInput(format!("config: {what} = {v} is out of range")))
        };
        if self.n_superpixels == 0 {
            return bad("n_superpixels", &self.n_superpixels);
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho", &self.rho);
        }
        if !(self.gamma_a > 0.0 && self.gamma_a.is_finite()) {
            return bad("gamma_a", &self.gamma_a);
        }
        if !(self.gamma_i >= 0.0 && self.gamma_i.is_finite()) {
            return bad("gamma_i", &self.gamma_i);
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta", &self.beta);
        }
        if !(self.slic_compactness > 0.0 && self.slic_compactness.is_finite()) {
            return bad("slic_compactness", &self.slic_compactness);
        }
        if !(self.eta2 > 0.0 && self.eta2.is_finite()) {
            return bad("eta2", &self.eta2);
        }
        Ok(())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let float = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("config: {key}: not a number: {v:?}")))
        };
        let int = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| Error::InvalidInput(format!("config: {key}: not an integer: {v:?}")))
        };
        match key {
            "n_superpixels" => self.n_superpixels = int(value)? as usize,
            "rho" => self.rho = float(value)?,
            "gamma_a" => self.gamma_a = float(value)?,
            "gamma_i" => self.gamma_i = float(value)?,
            "beta" => self.beta = float(value)?,
            "slic_compactness" => self.slic_compactness = float(value)?,
            "seed" => self.seed = int(value)?,
            "eta2" => self.eta2 = float(value)?,
            _ => return Err(Error::InvalidInput(format!("config: unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn merge_str(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidInput(format!("config line {}: expected key = value", no + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_str_validated(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_validated(&text)
    }
}

impl fmt::Display for Config {
    /// Renders the config in the same `key = value` format it is parsed from.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n_superpixels = {}", self.n_superpixels)?;
        writeln!(f, "rho = {}", self.rho)?;
        writeln!(f, "gamma_a = {:e}", self.gamma_a)?;
        writeln!(f, "gamma_i = {}", self.gamma_i)?;
        writeln!(f, "beta = {}", self.beta)?;
        writeln!(f, "slic_compactness = {}", self.slic_compactness)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "eta2 = {}", self.eta2)
    }
}
