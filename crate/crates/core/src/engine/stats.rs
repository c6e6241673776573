//! Per-class Gaussian feature statistics.
//!
//! The store serializes to JSON as
//!
//! ```text
//! {
//!   "variant": "full" | "diag" | "shared",
//!   "momentum": γ,
//!   "shared": null | Tensor,
//!   "entries": [
//!     {"class_id": c, "task_id": t, "count": N_c, "mean": [...],
//!      "cov": {"kind": "full", "value": Tensor}
//!           | {"kind": "diag", "value": [...]}
//!           | {"kind": "shared"}}
//!   ]
//! }
//! ```
//!
//! Floats use shortest round-trip formatting, so a save/load cycle is exact.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ensure, Error, Result};
use crate::nn::Model;
use crate::numcore::{CovarianceRepr, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovVariant {
    Full,
    Diag,
    Shared,
}

impl FromStr for CovVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(CovVariant::Full),
            "diag" => Ok(CovVariant::Diag),
            "shared" => Ok(CovVariant::Shared),
            _ => Err(Error::contract(format!("unknown covariance variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ClassCov {
    Full(Tensor),
    Diag(Vec<f64>),
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class_id: usize,
    pub task_id: usize,
    pub count: usize,
    pub mean: Vec<f64>,
    pub cov: ClassCov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsStore {
    pub variant: CovVariant,
    pub momentum: f64,
    pub shared: Option<Tensor>,
    pub entries: Vec<ClassStats>,
}

/// Mean and ML covariance (1/N) of the rows of `x`.
pub fn mean_and_cov(x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let n = x.rows();
    ensure!(n >= 1, "statistics need at least one sample");
    let d = x.cols();
    let mean = x.column_means();
    let mut cov = Tensor::zeros(&[d, d]);
    let c = cov.data_mut();
    let mut r = vec![0.0; d];
    for i in 0..n {
        for ((ri, xi), mi) in r.iter_mut().zip(x.row(i)).zip(&mean) {
            *ri = xi - mi;
        }
        for a in 0..d {
            let ra = r[a];
            for b in a..d {
                c[a * d + b] += ra * r[b];
            }
        }
    }
    let inv = 1.0 / n as f64;
    for a in 0..d {
        for b in a..d {
            let v = c[a * d + b] * inv;
            c[a * d + b] = v;
            c[b * d + a] = v;
        }
    }
    Ok((mean, cov))
}

impl StatsStore {
    pub fn new(variant: CovVariant, momentum: f64) -> Result<Self> {
        ensure!(
            (0.0..=1.0).contains(&momentum),
            "momentum must lie in [0, 1], got {momentum}"
        );
        Ok(Self {
            variant,
            momentum,
            shared: None,
            entries: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, class_id: usize) -> Option<&ClassStats> {
        self.entries.iter().find(|e| e.class_id == class_id)
    }

    /// Adds one class from its features. In the shared variant the first
    /// class initializes `Σ`; later ones merge as `Σ ← γΣ + (1−γ)Σ_c`.
    pub fn insert(&mut self, class_id: usize, task_id: usize, features: &Tensor) -> Result<()> {
        ensure!(
            self.get(class_id).is_none(),
            "class {class_id} already has statistics"
        );
        ensure!(
            features.rows() >= 1,
            "class {class_id} has no samples"
        );
        let (mean, cov) = mean_and_cov(features)?;
        let cov = match self.variant {
            CovVariant::Full => ClassCov::Full(cov),
            CovVariant::Diag => {
                let d = cov.rows();
                ClassCov::Diag((0..d).map(|i| cov.get(i, i)).collect())
            }
            CovVariant::Shared => {
                let merged = match self.shared.take() {
                    None => cov,
                    Some(prev) => prev.scale(self.momentum).add(&cov.scale(1.0 - self.momentum))?,
                };
                self.shared = Some(merged);
                ClassCov::Shared
            }
        };
        self.entries.push(ClassStats {
            class_id,
            task_id,
            count: features.rows(),
            mean,
            cov,
        });
        Ok(())
    }

    /// Covariance to sample from for one entry.
    pub fn covariance(&self, entry: &ClassStats) -> Result<CovarianceRepr> {
        match &entry.cov {
            ClassCov::Full(s) => Ok(CovarianceRepr::Full(s.clone())),
            ClassCov::Diag(v) => Ok(CovarianceRepr::Diagonal(v.clone())),
            ClassCov::Shared => self
                .shared
                .clone()
                .map(CovarianceRepr::Full)
                .ok_or_else(|| Error::contract("shared covariance missing")),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Collects statistics for every class of `task` from the current
/// backbone's features. `classes` lists the classes the task must cover.
pub fn collect_stats(
    model: &Model,
    data: &Dataset,
    classes: &[usize],
    task_id: usize,
    store: &mut StatsStore,
) -> Result<()> {
    for &c in classes {
        let sub = data
            .filter_classes(&[c])
            .ok_or_else(|| Error::contract(format!("class {c} has no samples in task {task_id}")))?;
        let f = model.forward_features(&sub.inputs)?;
        store.insert(c, task_id, &f)?;
    }
    Ok(())
}

/// `λ_t = 1 / (1 + η (T − t))`.
pub fn lambda(current: usize, task: usize, eta: f64) -> f64 {
    1.0 / (1.0 + eta * (current as f64 - task as f64))
}

/// Scaled copies of every stored mean, in store order.
pub fn scale_means(store: &StatsStore, current: usize, eta: f64) -> Result<Vec<Vec<f64>>> {
    store
        .entries
        .iter()
        .map(|e| {
            ensure!(
                e.task_id <= current,
                "class {} belongs to future task {}",
                e.class_id,
                e.task_id
            );
            let l = lambda(current, e.task_id, eta);
            Ok(e.mean.iter().map(|m| l * m).collect())
        })
        .collect()
}
