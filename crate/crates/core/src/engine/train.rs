use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ensure, Error, Result};
use crate::losses::{self, SceConfig};
use crate::nn::{GroupSet, Model, Sgd, SgdConfig};
use crate::numcore::{Rng, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainLoss {
    Ce,
    Sce(SceConfig),
}

/// Which head rows a task's loss sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadView {
    /// Softmax over every head row; gradients outside the task are masked.
    Full,
    /// Softmax over the task's own contiguous block of rows.
    #[default]
    TaskBlock,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
    pub epoch_acc: Vec<f64>,
    /// Mean per-batch L2 gradient norm of each group, per epoch.
    pub grad_norms: Vec<BTreeMap<String, f64>>,
}

/// Trains `model` on one task. The head must already hold rows for
/// `task_id`; rows of earlier tasks stay bit-identical.
#[allow(clippy::too_many_arguments)]
pub fn train_task(
    model: &mut Model,
    data: &Dataset,
    task_id: usize,
    groups: &GroupSet,
    loss: &TrainLoss,
    view: HeadView,
    cfg: &SgdConfig,
    rng: &mut Rng,
) -> Result<TrainLog> {
    cfg.validate()?;
    ensure!(!data.is_empty(), "task {task_id} has no training samples");
    let rows = model.head.rows_of_task(task_id);
    ensure!(!rows.is_empty(), "head has no rows for task {task_id}");
    let (lo, hi) = (rows[0], rows[rows.len() - 1] + 1);
    ensure!(hi - lo == rows.len(), "rows of task {task_id} are not contiguous");

    let head_classes = model.head.classes.clone();
    let target_of = |y: usize| -> Result<usize> {
        let col = head_classes[lo..hi]
            .iter()
            .position(|&c| c == y)
            .ok_or_else(|| Error::contract(format!("label {y} has no row in task {task_id}")))?;
        Ok(match view {
            HeadView::Full => lo + col,
            HeadView::TaskBlock => col,
        })
    };
    let targets = data.labels.iter().map(|&y| target_of(y)).collect::<Result<Vec<_>>>()?;
    let old_head: Option<Vec<f64>> = model.head.weight.as_ref().map(|w| {
        let d = w.cols();
        w.data()[..lo * d].to_vec()
    });

    let mut opt = Sgd::new(cfg);
    let mut log = TrainLog::default();
    let n = data.len();
    for _ in 0..cfg.epochs {
        let order = rng.permutation(n);
        let mut total = 0.0;
        let mut correct = 0usize;
        let mut norms: BTreeMap<String, f64> = BTreeMap::new();
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let x = data.inputs.select_rows(batch)?;
            let y: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let mut tape = Tape::new();
            let fwd = model.forward_tape(&mut tape, &x, &|p| groups.is_trainable(p))?;
            let full = fwd.logits.ok_or_else(|| Error::contract("empty head"))?;
            let logits = match view {
                HeadView::Full => full,
                HeadView::TaskBlock => tape.slice_cols(full, lo, hi)?,
            };
            let l = match loss {
                TrainLoss::Ce => losses::ce(&mut tape, logits, &y)?,
                TrainLoss::Sce(c) => losses::sce(&mut tape, logits, &y, c)?,
            };
            total += tape.value(l).data()[0] * batch.len() as f64;
            let pred = tape.value(logits).argmax_rows();
            correct += pred.iter().zip(&y).filter(|(p, t)| p == t).count();

            let grads = tape.backward(l)?;
            model.zero_grad();
            for (p, v) in &fwd.bindings {
                if let Some(t) = model.param_mut(*p) {
                    let buf = t.grad_mut();
                    if let Some(g) = grads.get(*v) {
                        buf.iter_mut().zip(g).for_each(|(b, d)| *b += d);
                    }
                }
            }
            model.mask_head_grad(task_id);
            for g in &groups.groups {
                let sq: f64 = g
                    .members
                    .iter()
                    .filter_map(|p| model.param(*p).and_then(|t| t.grad()))
                    .flat_map(|gr| gr.iter())
                    .map(|v| v * v)
                    .sum();
                *norms.entry(g.name.clone()).or_default() += sq.sqrt();
            }
            batches += 1;
            opt.step(model, groups)?;
            if let (Some(old), Some(w)) = (&old_head, model.head.weight.as_mut()) {
                w.data_mut()[..old.len()].copy_from_slice(old);
            }
        }
        model.zero_grad();
        norms.values_mut().for_each(|v| *v /= batches as f64);
        log.epoch_loss.push(total / n as f64);
        log.epoch_acc.push(correct as f64 / n as f64);
        log.grad_norms.push(norms);
    }
    Ok(log)
}
