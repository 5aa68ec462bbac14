//! `metrics.json`, the report written by every experiment.
//!
//! Schema (version 1):
//!
//! ```text
//! {
//!   "schema_version": 1,
//!   "seed": u64,
//!   "class_names": [string],
//!   "runs": [{
//!     "name": string,                 // architecture, "_framediff" suffix for the motion stream
//!     "architecture": string,
//!     "stream": "rgb" | "framediff",
//!     "test_accuracy": f64,           // in [0, 1]
//!     "per_class_accuracy": [f64],
//!     "confusion": [[usize]],         // confusion[true][predicted]
//!     "parameters": { "total", "recurrent", "recurrent_formula", "heads", "backbone" },
//!     "epochs_run": usize,
//!     "best_epoch": usize | null,
//!     "best_val_loss": f64 | null,
//!     "trainlog": string,             // path relative to the report
//!     "checkpoint": string
//!   }],
//!   "fusion": null | {
//!     "appearance": string, "motion": string,
//!     "appearance_weight": f64, "motion_weight": f64,
//!     "test_accuracy": f64, "per_class_accuracy": [f64]
//!   }
//! }
//! ```
//!
//! Wall-clock time is kept out of this file so identical runs produce
//! identical bytes; it lives in `trainlog.jsonl`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterCounts {
    pub total: usize,
    /// Allocated recurrent elements (weights, biases, bottom-up kernels).
    pub recurrent: usize,
    /// The same quantity from the closed-form count.
    pub recurrent_formula: usize,
    pub heads: usize,
    pub backbone: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub architecture: String,
    pub stream: String,
    pub test_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
    pub parameters: ParameterCounts,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub trainlog: String,
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub appearance: String,
    pub motion: String,
    pub appearance_weight: f64,
    pub motion_weight: f64,
    pub test_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub seed: u64,
    pub class_names: Vec<String>,
    pub runs: Vec<RunReport>,
    pub fusion: Option<FusionReport>,
}

impl MetricsReport {
    pub fn run(&self, name: &str) -> Option<&RunReport> {
        self.runs.iter().find(|r| r.name == name)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serialises");
        std::fs::write(path, text + "\n").map_err(Error::io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }
}
