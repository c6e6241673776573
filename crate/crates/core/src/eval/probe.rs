use serde::{Deserialize, Serialize};

use super::metrics::accuracy_of;
use crate::data::Dataset;
use crate::error::{ensure, Result};
use crate::nn::{fit_linear_head, HeadLoss, Model, SgdConfig};
use crate::numcore::{Rng, RngState, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 20,
            batch_size: 128,
            momentum: 0.9,
        }
    }
}

/// Trains a fresh linear classifier on frozen backbone features of `train`
/// and reports its accuracy on `test`. The model is only read.
pub fn linear_probe(
    model: &Model,
    train: &Dataset,
    test: &Dataset,
    cfg: &ProbeConfig,
    seed: RngState,
) -> Result<f64> {
    ensure!(!train.is_empty() && !test.is_empty(), "probe needs data");
    let classes = train.classes();
    let index = |y: usize| classes.binary_search(&y).ok();
    let targets: Vec<usize> = train.labels.iter().map(|&y| index(y).unwrap()).collect();
    let features = model.forward_features(&train.inputs)?;
    let d = features.cols();

    let mut rng: Rng = seed.generator();
    let init: Vec<f64> = (0..classes.len() * d).map(|_| 0.01 * rng.normal()).collect();
    let mut weight = Tensor::from_matrix(classes.len(), d, init)?;
    let sgd = SgdConfig {
        momentum: cfg.momentum,
        weight_decay: 0.0,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
    };
    fit_linear_head(&mut weight, &features, &targets, HeadLoss::Ce, cfg.lr, &sgd, &mut rng)?;

    let test_features = model.forward_features(&test.inputs)?;
    let pred: Vec<usize> = test_features
        .matmul_t(&weight)?
        .argmax_rows()
        .into_iter()
        .map(|j| classes[j])
        .collect();
    Ok(accuracy_of(&pred, &test.labels))
}
