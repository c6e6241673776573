use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labelled inputs, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub domains: Option<Vec<usize>>,
    pub split: Split,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, domains: Option<Vec<usize>>, split: Split) -> Result<Self> {
        ensure!(inputs.is_matrix(), "dataset inputs must be a matrix");
        ensure!(
            inputs.rows() == labels.len(),
            "{} input rows but {} labels",
            inputs.rows(),
            labels.len()
        );
        if let Some(d) = &domains {
            ensure!(d.len() == labels.len(), "domain column length mismatch");
        }
        Ok(Self {
            inputs,
            labels,
            domains,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Rows at the given indices; `None` if `idx` is empty.
    pub fn subset(&self, idx: &[usize]) -> Option<Dataset> {
        if idx.is_empty() {
            return None;
        }
        let inputs = self.inputs.select_rows(idx).ok()?;
        Some(Dataset {
            inputs,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            domains: self
                .domains
                .as_ref()
                .map(|d| idx.iter().map(|&i| d[i]).collect()),
            split: self.split,
        })
    }

    /// Samples whose label is in `classes` (which must be sorted).
    pub fn filter_classes(&self, classes: &[usize]) -> Option<Dataset> {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| classes.binary_search(&self.labels[i]).is_ok())
            .collect();
        self.subset(&idx)
    }

    /// Concatenates datasets with equal input width.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        ensure!(!parts.is_empty(), "concat of no datasets");
        let inputs = Tensor::vstack(&parts.iter().map(|d| d.inputs.clone()).collect::<Vec<_>>())?;
        let labels = parts.iter().flat_map(|d| d.labels.iter().copied()).collect();
        let domains = if parts.iter().all(|d| d.domains.is_some()) {
            Some(
                parts
                    .iter()
                    .flat_map(|d| d.domains.as_ref().unwrap().iter().copied())
                    .collect(),
            )
        } else {
            None
        };
        Dataset::new(inputs, labels, domains, parts[0].split)
    }
}
