//! Run reports.
//!
//! JSON layout (`report.json`):
//!
//! ```text
//! {
//!   "method": "sl+sce+ca+ln",
//!   "seed": 0,
//!   "fingerprint": "…hex…",
//!   "acc_matrix": [[a00], [a10, a11], …],   // A[stage][task], task ≤ stage
//!   "stage_acc": [s0, s1, …],               // seen-class accuracy per stage
//!   "pre_align_acc": [ … ] | null,          // same, before alignment
//!   "last_acc": …, "inc_acc": …,
//!   "failure": null | "message"
//! }
//! ```
//!
//! The CSV matrix has one row per stage and one column per task; cells for
//! tasks not yet seen are empty.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::finalize_report;
use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub seed: u64,
    pub fingerprint: String,
    pub acc_matrix: Vec<Vec<f64>>,
    pub stage_acc: Vec<f64>,
    pub pre_align_acc: Option<Vec<f64>>,
    pub last_acc: f64,
    pub inc_acc: f64,
    pub failure: Option<String>,
}

impl RunReport {
    pub fn new(method: &str, seed: u64, fingerprint: &str) -> Self {
        Self {
            method: method.to_string(),
            seed,
            fingerprint: fingerprint.to_string(),
            acc_matrix: Vec::new(),
            stage_acc: Vec::new(),
            pre_align_acc: None,
            last_acc: 0.0,
            inc_acc: 0.0,
            failure: None,
        }
    }

    /// Appends one stage row and refreshes the summary fields.
    pub fn push_stage(&mut self, row: Vec<f64>, seen: f64, pre_align: Option<f64>) -> Result<()> {
        ensure!(
            row.len() == self.acc_matrix.len() + 1,
            "stage {} needs {} task entries, got {}",
            self.acc_matrix.len(),
            self.acc_matrix.len() + 1,
            row.len()
        );
        ensure!(
            row.iter().all(|a| (0.0..=1.0).contains(a)),
            "accuracies must lie in [0, 1]"
        );
        self.acc_matrix.push(row);
        self.stage_acc.push(seen);
        if let Some(p) = pre_align {
            self.pre_align_acc.get_or_insert_with(Vec::new).push(p);
        }
        let (last, inc) = finalize_report(&self.stage_acc)?;
        self.last_acc = last;
        self.inc_acc = inc;
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    /// Recomputes the summary from `stage_acc` and checks it against the
    /// stored fields.
    pub fn check_consistency(&self) -> Result<()> {
        let (last, inc) = finalize_report(&self.stage_acc)?;
        ensure!(
            last == self.last_acc && inc == self.inc_acc,
            "summary fields disagree with the stage accuracies"
        );
        ensure!(
            self.acc_matrix.len() == self.stage_acc.len(),
            "matrix has {} stages, stage_acc has {}",
            self.acc_matrix.len(),
            self.stage_acc.len()
        );
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn matrix_csv(&self) -> String {
        let t = self.acc_matrix.len();
        let mut out = String::from("stage");
        for j in 0..t {
            let _ = write!(out, ",task{j}");
        }
        out.push('\n');
        for (i, row) in self.acc_matrix.iter().enumerate() {
            let _ = write!(out, "{i}");
            for j in 0..t {
                out.push(',');
                if let Some(a) = row.get(j) {
                    let _ = write!(out, "{a:?}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json()?)?;
        std::fs::write(csv_path, self.matrix_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
