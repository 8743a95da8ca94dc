//! Dataset CSV and model JSON persistence.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which f64
//! round-trips exactly; re-reading a written file reproduces every bit.
//! All writers build the full artifact in memory and write it in one call,
//! and nothing here records time or environment, so identical inputs yield
//! byte-identical files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use pairlearn::risk::{NormBoundReport, RiskReport, TRAIN_SIZE_CAP};
use pairlearn::{InputPoint, LossSpec, RplModel, WeightedDataset};

use crate::CliError;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const SUMMARY_FORMAT_VERSION: u32 = 1;

/// One float cell, 17 significant digits.
pub fn cell(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `x1,..,xd,y` plus a trailing `w` column unless the weights are
/// exactly uniform.
pub fn write_dataset_csv(path: &Path, data: &WeightedDataset) -> Result<(), CliError> {
    let uniform = 1.0 / data.n() as f64;
    let weighted = data.weights().iter().any(|&w| w != uniform);
    let mut text = String::new();
    for j in 1..=data.dim() {
        text.push_str(&format!("x{j},"));
    }
    text.push('y');
    if weighted {
        text.push_str(",w");
    }
    text.push('\n');
    for i in 0..data.n() {
        let mut fields: Vec<String> = data.point(i).coords().iter().map(|&v| cell(v)).collect();
        fields.push(cell(data.label(i)));
        if weighted {
            fields.push(cell(data.weight(i)));
        }
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Reads a dataset written by [`write_dataset_csv`] or shaped like it:
/// header `x1,..,xd,y` with an optional final `w` column. Missing weights
/// default to uniform.
pub fn read_dataset_csv(path: &Path) -> Result<WeightedDataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let bad = |message: String| CliError::Csv {
        path: path.to_path_buf(),
        message,
    };

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let has_weights = header.last().map(String::as_str) == Some("w");
    let d = header.len() - 1 - usize::from(has_weights);
    if d == 0 {
        return Err(bad("header needs at least one x column before y".into()));
    }
    for (j, name) in header.iter().take(d).enumerate() {
        let want = format!("x{}", j + 1);
        if *name != want {
            return Err(bad(format!("column {} is `{name}`, expected `{want}`", j + 1)));
        }
    }
    if header[d] != "y" {
        return Err(bad(format!("column {} is `{}`, expected `y`", d + 1, header[d])));
    }

    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut weights = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() != header.len() {
            return Err(bad(format!(
                "row {} has {} fields, expected {}",
                row + 2,
                record.len(),
                header.len()
            )));
        }
        let parse = |field: &str| -> Result<f64, CliError> {
            field
                .parse::<f64>()
                .map_err(|e| bad(format!("row {}: `{field}`: {e}", row + 2)))
        };
        let coords: Vec<f64> = record
            .iter()
            .take(d)
            .map(parse)
            .collect::<Result<_, _>>()?;
        points.push(InputPoint::new(coords)?);
        labels.push(parse(&record[d])?);
        if has_weights {
            weights.push(parse(&record[d + 1])?);
        }
    }
    if points.len() > TRAIN_SIZE_CAP {
        return Err(CliError::Config(format!(
            "dataset has {} points, above the cap of {TRAIN_SIZE_CAP} \
             (pair enumeration is O(n^2) and the dense Gram solve O(n^6) from there)",
            points.len()
        )));
    }
    let data = if has_weights {
        WeightedDataset::new(points, labels, weights)?
    } else {
        WeightedDataset::uniform(points, labels)?
    };
    Ok(data)
}

/// Persisted trained model: the kernel expansion itself plus the
/// diagnostics that certify it is the regularized minimizer it claims to be.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub loss: LossSpec,
    pub model: RplModel,
    pub diagnostics: TrainDiagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDiagnostics {
    /// H-norm of the final objective (sub)gradient element.
    pub grad_residual: f64,
    pub iterations: usize,
    pub regularized_risk: f64,
    /// Distance to the representer form; absent for subdifferentiable
    /// losses, whose optimality is certified by the norm bounds instead.
    pub representer_residual: Option<f64>,
    /// max |h_ij| over the training pairs, and its cap |L|_1 when the loss
    /// has one.
    pub h_sup: Option<f64>,
    pub h_sup_bound: Option<f64>,
    pub norm_bounds: NormBoundReport,
}

pub fn write_model(path: &Path, model: &ModelFile) -> Result<(), CliError> {
    write_json(path, model)
}

pub fn read_model(path: &Path) -> Result<ModelFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
}

/// One asserted invariant of a command, with the measured value next to
/// the bound it was held against. The comparison direction is part of the
/// name.
#[derive(Debug, Clone, Serialize)]
pub struct InvariantCheck {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub bound: f64,
}

impl InvariantCheck {
    pub fn le(name: &str, measured: f64, bound: f64) -> Self {
        InvariantCheck {
            name: name.to_string(),
            pass: measured <= bound,
            measured,
            bound,
        }
    }

    pub fn ge(name: &str, measured: f64, bound: f64) -> Self {
        InvariantCheck {
            name: name.to_string(),
            pass: measured >= bound,
            measured,
            bound,
        }
    }
}

/// Uniform JSON shell every command writes: provenance (hash, seed), the
/// overall verdict that drives the exit code, and the per-invariant rows.
#[derive(Debug, Serialize)]
pub struct CommandSummary {
    pub format_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub pass: bool,
    pub invariants: Vec<InvariantCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk_report: Option<RiskReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment_summary: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl CommandSummary {
    pub fn new(command: &str, hash: &str, seed: u64, invariants: Vec<InvariantCheck>) -> Self {
        CommandSummary {
            format_version: SUMMARY_FORMAT_VERSION,
            command: command.to_string(),
            config_hash: hash.to_string(),
            seed,
            pass: invariants.iter().all(|c| c.pass),
            invariants,
            risk_report: None,
            experiment_summary: None,
            details: None,
        }
    }

    pub fn failures(&self) -> Vec<String> {
        self.invariants
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{} (measured {:e}, bound {:e})", c.name, c.measured, c.bound))
            .collect()
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
