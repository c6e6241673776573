use serde::{Deserialize, Serialize};

use super::train::{train_task, HeadView, TrainLog, TrainLoss};
use crate::data::Dataset;
use crate::error::{ensure, Result};
use crate::nn::{make_groups, LearningRates, Model, SgdConfig, TuningMode};
use crate::numcore::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub lr: f64,
    pub sgd: SgdConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            sgd: SgdConfig {
                epochs: 30,
                ..SgdConfig::default()
            },
        }
    }
}

/// Trains the whole model jointly with CE on `data`, then drops the
/// temporary head. The model must be headless on entry and is headless on
/// return.
pub fn pretrain_backbone(model: &mut Model, data: &Dataset, cfg: &PretrainConfig, seed: RngState) -> Result<TrainLog> {
    ensure!(!data.is_empty(), "pre-training set is empty");
    ensure!(model.head.width() == 0, "pre-training expects a headless model");
    ensure!(!model.has_adapters(), "pre-training expects a model without adapters");
    let mut work = model.clone();
    work.extend_head(&data.classes(), 0, seed.derive("pretrain-head"))?;
    let rates = LearningRates {
        seqft: cfg.lr,
        ..LearningRates::default()
    };
    let groups = make_groups(&work, TuningMode::SeqFt, &rates)?;
    let mut rng = seed.derive("pretrain-order").generator();
    let log = train_task(
        &mut work,
        data,
        0,
        &groups,
        &TrainLoss::Ce,
        HeadView::Full,
        &cfg.sgd,
        &mut rng,
    )?;
    *model = work.headless();
    Ok(log)
}
