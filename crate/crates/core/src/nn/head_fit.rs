use serde::{Deserialize, Serialize};

use super::model::ParamRef;
use super::sgd::{Sgd, SgdConfig};
use crate::error::{ensure, Result};
use crate::losses::{self, LogitNormConfig};
use crate::numcore::{Rng, Tape, Tensor};

/// Loss used when fitting a linear classifier on fixed features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HeadLoss {
    Ce,
    LogitNorm(LogitNormConfig),
}

/// Trains `weight` (`C×d`, logits `x·Wᵀ`) on fixed `features` with
/// mini-batch SGD, reshuffling every epoch. `targets[i]` is the row of
/// `weight` that sample `i` should score highest. Returns per-epoch mean
/// loss.
pub fn fit_linear_head(
    weight: &mut Tensor,
    features: &Tensor,
    targets: &[usize],
    loss: HeadLoss,
    lr: f64,
    cfg: &SgdConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    ensure!(
        features.rows() == targets.len(),
        "{} feature rows but {} targets",
        features.rows(),
        targets.len()
    );
    ensure!(
        features.cols() == weight.cols(),
        "feature width {} vs head width {}",
        features.cols(),
        weight.cols()
    );
    let n = targets.len();
    let mut opt = Sgd::new(cfg);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let order = rng.permutation(n);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = features.select_rows(batch)?;
            let y: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let mut tape = Tape::new();
            let xv = tape.constant(&x);
            let wv = tape.leaf(&weight.clone().with_grad());
            let logits = tape.matmul_t(xv, wv)?;
            let l = match &loss {
                HeadLoss::Ce => losses::ce(&mut tape, logits, &y)?,
                HeadLoss::LogitNorm(c) => losses::logit_norm_ce(&mut tape, logits, &y, c)?,
            };
            total += tape.value(l).data()[0] * batch.len() as f64;
            let grads = tape.backward(l)?;
            let g = grads.get(wv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; weight.len()]);
            opt.update(ParamRef::Head, weight.data_mut(), &g, lr);
        }
        epoch_losses.push(total / n as f64);
    }
    Ok(epoch_losses)
}
