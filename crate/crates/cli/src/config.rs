//! Configuration documents and the errors the front end reports.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use threec_core::{PolicyKind, SimConfig, SimError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {source}", path.display())]
    Missing { path: PathBuf, source: io::Error },
    #[error("{}:{line}:{column}: {message}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{0}")]
    Schema(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Mismatch(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Missing { .. } => 2,
            HarnessError::Malformed { .. } | HarnessError::Invalid(_) | HarnessError::Schema(_) => 3,
            HarnessError::Sim(SimError::Config(_)) => 3,
            _ => 1,
        }
    }
}

/// Parse a JSON document, reporting syntax and schema errors with their position.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Missing {
        path: path.to_owned(),
        source,
    })?;
    parse_json(&text, path)
}

pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T, HarnessError> {
    serde_json::from_str(text).map_err(|e| HarnessError::Malformed {
        path: path.to_owned(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Hex SHA-256 of the canonical JSON form of a resolved configuration.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configs serialize");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionSearch {
    /// Evaluate every grid point.
    #[default]
    Grid,
    /// Walk the border assuming feasibility is monotone in both fractions.
    Staircase,
}

/// Grids and repetitions for the canned experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub base: SimConfig,
    pub lambdas: Vec<f64>,
    pub policies: Vec<PolicyKind>,
    /// Caching-distribution skews for the policy sweep.
    pub gammas: Vec<f64>,
    pub policy_beta3: f64,
    pub region_beta3: Vec<f64>,
    pub region_lambda: f64,
    pub region_gamma: f64,
    pub delay_req_s: f64,
    /// Spacing of the (beta1, beta2) grid.
    pub beta_step: f64,
    pub search: RegionSearch,
    pub seeds: Vec<u64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            base: SimConfig::default(),
            lambdas: (1..=10).map(|k| 10.0 * k as f64).collect(),
            policies: vec![PolicyKind::Centralized, PolicyKind::Mec],
            gammas: vec![0.2, 1.0],
            policy_beta3: 0.3,
            region_beta3: vec![0.2, 0.5, 0.8],
            region_lambda: 60.0,
            region_gamma: 1.0,
            delay_req_s: 0.020,
            beta_step: 0.05,
            search: RegionSearch::Grid,
            seeds: vec![1, 2, 3],
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Invalid(m.to_owned()));
        if self.lambdas.is_empty() || self.policies.is_empty() || self.gammas.is_empty() {
            return bad("lambdas, policies and gammas must be non-empty");
        }
        if self.region_beta3.is_empty() {
            return bad("region_beta3 must be non-empty");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty");
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return bad("seeds must be distinct");
        }
        if !(self.beta_step > 0.0 && self.beta_step <= 1.0) {
            return bad("beta_step must lie in (0, 1]");
        }
        let n = (1.0 / self.beta_step).round();
        if (n * self.beta_step - 1.0).abs() > 1e-9 {
            return bad("beta_step must divide 1");
        }
        if self.delay_req_s <= 0.0 {
            return bad("delay_req_s must be > 0");
        }
        self.base.validate()?;
        Ok(())
    }

    /// Grid values `0, step, ..., 1`.
    pub fn beta_grid(&self) -> Vec<f64> {
        let n = (1.0 / self.beta_step).round() as u32;
        (0..=n).map(|k| k as f64 / n as f64).collect()
    }

    /// Replace the seeds with consecutive ones starting at `seed`.
    pub fn reseed(&mut self, seed: u64) {
        let n = self.seeds.len() as u64;
        self.seeds = (0..n).map(|k| seed + k).collect();
    }
}
