use crate::data::Dataset;
use crate::error::{ensure, Result};
use crate::nn::{Head, Model};
use crate::numcore::Tensor;

/// Per-class scores from raw head logits: the mean over every head row that
/// scores the class. With one row per class this is the logits reordered by
/// class id; with one block per domain it averages the domain heads.
pub fn class_scores(logits: &Tensor, head: &Head) -> Result<(Vec<usize>, Tensor)> {
    ensure!(
        logits.cols() == head.width(),
        "logit width {} vs head width {}",
        logits.cols(),
        head.width()
    );
    let classes = head.class_set();
    let col_of: Vec<usize> = head
        .classes
        .iter()
        .map(|c| classes.binary_search(c).expect("class in set"))
        .collect();
    let mut counts = vec![0usize; classes.len()];
    for &k in &col_of {
        counts[k] += 1;
    }
    let n = logits.rows();
    let k = classes.len();
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let row = logits.row(i);
        let orow = &mut out[i * k..(i + 1) * k];
        for (j, v) in row.iter().enumerate() {
            orow[col_of[j]] += v;
        }
        for (o, c) in orow.iter_mut().zip(&counts) {
            *o /= *c as f64;
        }
    }
    Ok((classes, Tensor::from_matrix(n, k, out)?))
}

/// Predicted class ids; ties break toward the lowest class id.
pub fn predict(model: &Model, inputs: &Tensor) -> Result<Vec<usize>> {
    let logits = model.forward_logits(inputs)?;
    let (classes, scores) = class_scores(&logits, &model.head)?;
    Ok(scores.argmax_rows().into_iter().map(|j| classes[j]).collect())
}

pub fn accuracy_of(pred: &[usize], labels: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    correct as f64 / pred.len() as f64
}

pub fn accuracy(model: &Model, ds: &Dataset) -> Result<f64> {
    Ok(accuracy_of(&predict(model, &ds.inputs)?, &ds.labels))
}

/// Accuracy over the union of the given test sets, without task identity.
pub fn seen_accuracy(model: &Model, tests: &[&Dataset]) -> Result<f64> {
    let total: usize = tests.iter().map(|d| d.len()).sum();
    ensure!(total > 0, "no test samples to evaluate");
    let mut correct = 0.0;
    for ds in tests.iter().filter(|d| !d.is_empty()) {
        correct += accuracy(model, ds)? * ds.len() as f64;
    }
    Ok(correct / total as f64)
}

/// Domain-incremental accuracy: each class's logit is the mean over the
/// domain blocks of the head.
pub fn domain_eval(model: &Model, test: &Dataset) -> Result<f64> {
    let head = &model.head;
    ensure!(head.width() > 0, "empty head");
    let mut blocks: Vec<usize> = head.tasks.clone();
    blocks.dedup();
    let first: Vec<usize> = {
        let mut c: Vec<usize> = head
            .classes
            .iter()
            .zip(&head.tasks)
            .filter(|(_, t)| **t == blocks[0])
            .map(|(c, _)| *c)
            .collect();
        c.sort_unstable();
        c
    };
    for b in &blocks[1..] {
        let mut c: Vec<usize> = head
            .classes
            .iter()
            .zip(&head.tasks)
            .filter(|(_, t)| *t == b)
            .map(|(c, _)| *c)
            .collect();
        c.sort_unstable();
        ensure!(c == first, "domain block {b} covers a different class set");
    }
    accuracy(model, test)
}

/// `(last_acc, inc_acc)` from per-stage seen-class accuracies.
pub fn finalize_report(stage_acc: &[f64]) -> Result<(f64, f64)> {
    ensure!(!stage_acc.is_empty(), "no stages to summarize");
    ensure!(
        stage_acc.iter().all(|a| (0.0..=1.0).contains(a)),
        "accuracies must lie in [0, 1]"
    );
    let last = *stage_acc.last().unwrap();
    let inc = stage_acc.iter().sum::<f64>() / stage_acc.len() as f64;
    Ok((last, inc))
}
