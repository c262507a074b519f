//! CSV datasets and JSON experiment configuration.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::Hyperparameters;
use crate::partition::DivisionStrategy;
use crate::tree::TreeConfig;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("row {row}: {source}")]
    Csv { row: u64, source: csv::Error },

    #[error("row {row}: expected {expected} fields, found {found}")]
    FieldCount { row: u64, expected: usize, found: usize },

    #[error("row {row}, column {col}: cannot parse {value:?} as a number")]
    Parse { row: u64, col: usize, value: String },

    #[error("row {row}, column {col}: non-finite value {value}")]
    NonFinite { row: u64, col: usize, value: f64 },

    #[error("config: {0}")]
    ConfigSyntax(String),

    #[error("config field `{field}`: {message}")]
    ConfigInvalid { field: &'static str, message: String },

    #[error("dataset: {0}")]
    Shape(String),
}

/// Inputs and targets, both row-major, in stream order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input_dim: usize,
    target_dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(input_dim: usize, target_dim: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self, DataError> {
        if input_dim == 0 || target_dim == 0 {
            return Err(DataError::Shape("input and target dimensions must be positive".into()));
        }
        let n = inputs.len() / input_dim;
        if inputs.len() % input_dim != 0 || targets.len() != n * target_dim {
            return Err(DataError::Shape(format!(
                "{} input values and {} target values do not form rows of {input_dim}+{target_dim}",
                inputs.len(),
                targets.len()
            )));
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(DataError::Shape("non-finite value".into()));
        }
        Ok(Self { input_dim, target_dim, inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.target_dim..(i + 1) * self.target_dim]
    }

    /// Values of target `t` for every row.
    pub fn target_column(&self, t: usize) -> Vec<f64> {
        self.targets.iter().skip(t).step_by(self.target_dim).copied().collect()
    }

    /// First `n` rows (or all, if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            input_dim: self.input_dim,
            target_dim: self.target_dim,
            inputs: self.inputs[..n * self.input_dim].to_vec(),
            targets: self.targets[..n * self.target_dim].to_vec(),
        }
    }

    /// Writes rows as `inputs..., targets...` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        for i in 0..self.len() {
            let row: Vec<String> =
                self.input(i).iter().chain(self.target(i)).map(|v| format!("{v:.16e}")).collect();
            w.write_record(&row).map_err(|source| DataError::Csv { row: i as u64 + 1, source })?;
        }
        w.flush().map_err(|source| DataError::Io { path: PathBuf::from("<csv>"), source })
    }
}

/// Loads a comma-separated file of `input_dim` input columns followed by
/// `target_dim` target columns. A first row that does not parse as numbers is
/// treated as a header.
pub fn load_csv(path: impl AsRef<Path>, input_dim: usize, target_dim: usize) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io { path: path.to_owned(), source })?;
    read_csv(BufReader::new(file), input_dim, target_dim)
}

pub fn read_csv<R: Read>(reader: R, input_dim: usize, target_dim: usize) -> Result<Dataset, DataError> {
    let width = input_dim + target_dim;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut row_buf = Vec::with_capacity(width);
    for (k, record) in rdr.records().enumerate() {
        let row = k as u64 + 1;
        let record = record.map_err(|source| DataError::Csv { row, source })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if k == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if record.len() != width {
            return Err(DataError::FieldCount { row, expected: width, found: record.len() });
        }
        row_buf.clear();
        for (c, field) in record.iter().enumerate() {
            let col = c + 1;
            let v: f64 = field.parse().map_err(|_| DataError::Parse { row, col, value: field.to_owned() })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite { row, col, value: v });
            }
            row_buf.push(v);
        }
        inputs.extend_from_slice(&row_buf[..input_dim]);
        targets.extend_from_slice(&row_buf[input_dim..]);
    }
    Dataset::new(input_dim, target_dim, inputs, targets)
}

fn default_capacity() -> usize {
    100
}

fn default_theta() -> f64 {
    0.05
}

fn default_checkpoints() -> usize {
    100
}

/// Experiment settings read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub input_dim: usize,
    /// One entry per output target.
    pub hyperparameters: Vec<Hyperparameters>,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub strategy: DivisionStrategy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    #[serde(default)]
    pub report_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn target_dim(&self) -> usize {
        self.hyperparameters.len()
    }

    pub fn tree_config(&self) -> TreeConfig {
        TreeConfig { capacity: self.capacity, theta: self.theta, strategy: self.strategy }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let invalid = |field, message: String| Err(DataError::ConfigInvalid { field, message });
        if self.input_dim < 1 {
            return invalid("input_dim", "must be at least 1".into());
        }
        if self.hyperparameters.is_empty() {
            return invalid("hyperparameters", "at least one target is required".into());
        }
        for (t, hp) in self.hyperparameters.iter().enumerate() {
            if hp.lengthscales.len() != self.input_dim {
                return invalid(
                    "hyperparameters",
                    format!("target {t}: {} lengthscales for input_dim {}", hp.lengthscales.len(), self.input_dim),
                );
            }
            if let Err(e) = hp.validate() {
                return invalid("hyperparameters", format!("target {t}: {e}"));
            }
        }
        if self.capacity < 2 {
            return invalid("capacity", format!("must be at least 2, got {}", self.capacity));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return invalid("theta", format!("must be non-negative, got {}", self.theta));
        }
        if self.checkpoints < 1 {
            return invalid("checkpoints", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| DataError::ConfigSyntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_owned(), source })?;
    ExperimentConfig::from_json(&text)
}
