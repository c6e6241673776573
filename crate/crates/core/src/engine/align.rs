use serde::{Deserialize, Serialize};

use super::stats::{scale_means, ClassCov, StatsStore};
use crate::error::{ensure, Error, Result};
use crate::losses::LogitNormConfig;
use crate::nn::{fit_linear_head, HeadLoss, Model, SgdConfig};
use crate::numcore::{CovFactor, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub samples_per_class: usize,
    pub tau: f64,
    pub eta: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            samples_per_class: 256,
            tau: 0.1,
            eta: 0.02,
            epochs: 5,
            lr: 0.01,
            batch_size: 128,
            momentum: 0.9,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.samples_per_class >= 1, "samples_per_class must be >= 1");
        ensure!(self.eta >= 0.0, "eta must be >= 0");
        ensure!(self.tau > 0.0, "tau must be positive");
        ensure!(self.lr >= 0.0, "alignment lr must be >= 0");
        self.sgd().validate()
    }

    fn sgd(&self) -> SgdConfig {
        SgdConfig {
            momentum: self.momentum,
            weight_decay: 0.0,
            batch_size: self.batch_size,
            epochs: self.epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignLog {
    pub epoch_loss: Vec<f64>,
    pub samples: usize,
}

/// Draws the balanced generated feature set: `S_c` rows per stored class
/// from `N(λ_t μ_c, Σ_c)`. Returns features and their class ids.
pub fn generate_features(
    store: &StatsStore,
    current_task: usize,
    cfg: &AlignConfig,
    rng: &mut Rng,
) -> Result<(Tensor, Vec<usize>)> {
    ensure!(!store.is_empty(), "statistics store is empty");
    let means = scale_means(store, current_task, cfg.eta)?;
    let mut parts = Vec::with_capacity(store.len());
    let mut labels = Vec::with_capacity(store.len() * cfg.samples_per_class);
    let fail = |class: usize, e: Error| Error::Numerical(format!("sampling class {class} failed: {e}"));
    // The shared covariance is factored once.
    let mut shared: Option<CovFactor> = None;
    for (entry, mu) in store.entries.iter().zip(&means) {
        let owned;
        let factor = match &entry.cov {
            ClassCov::Shared => {
                if shared.is_none() {
                    let f = CovFactor::new(&store.covariance(entry)?).map_err(|e| fail(entry.class_id, e))?;
                    shared = Some(f);
                }
                shared.as_ref().unwrap()
            }
            _ => {
                owned = CovFactor::new(&store.covariance(entry)?).map_err(|e| fail(entry.class_id, e))?;
                &owned
            }
        };
        parts.push(factor.sample(mu, cfg.samples_per_class, rng)?);
        labels.extend(std::iter::repeat(entry.class_id).take(cfg.samples_per_class));
    }
    Ok((Tensor::vstack(&parts)?, labels))
}

/// Post-hoc classifier alignment on a copy of the head.
///
/// Trains only the head on generated features (logit-normalized CE when
/// `logit_norm` is set, plain CE otherwise) and returns the aligned head
/// weight. The model is not modified.
pub fn align_head(
    model: &Model,
    store: &StatsStore,
    current_task: usize,
    cfg: &AlignConfig,
    logit_norm: bool,
    rng: &mut Rng,
) -> Result<(Tensor, AlignLog)> {
    cfg.validate()?;
    let head = &model.head;
    let mut weight = head
        .weight
        .clone()
        .ok_or_else(|| Error::contract("alignment needs a non-empty head"))?;
    let row_of = |c: usize| -> Result<usize> {
        let mut rows = head.classes.iter().enumerate().filter(|(_, k)| **k == c);
        let (i, _) = rows
            .next()
            .ok_or_else(|| Error::contract(format!("class {c} has no head row")))?;
        ensure!(rows.next().is_none(), "class {c} has several head rows");
        Ok(i)
    };
    for e in &store.entries {
        row_of(e.class_id)?;
    }
    let (features, labels) = generate_features(store, current_task, cfg, rng)?;
    let targets = labels.iter().map(|&c| row_of(c)).collect::<Result<Vec<_>>>()?;
    let loss = if logit_norm {
        HeadLoss::LogitNorm(LogitNormConfig { tau: cfg.tau })
    } else {
        HeadLoss::Ce
    };
    weight.clear_grad();
    let epoch_loss = fit_linear_head(&mut weight, &features, &targets, loss, cfg.lr, &cfg.sgd(), rng)?;
    Ok((
        weight,
        AlignLog {
            epoch_loss,
            samples: labels.len(),
        },
    ))
}

/// A copy of `model` carrying the aligned head.
pub fn align_classifier(
    model: &Model,
    store: &StatsStore,
    current_task: usize,
    cfg: &AlignConfig,
    logit_norm: bool,
    rng: &mut Rng,
) -> Result<(Model, AlignLog)> {
    let (w, log) = align_head(model, store, current_task, cfg, logit_norm, rng)?;
    let mut aligned = model.clone();
    aligned.head.weight = Some(w);
    Ok((aligned, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::stats::CovVariant;
    use crate::nn::Activation;
    use crate::numcore::RngState;

    fn setup() -> (Model, StatsStore) {
        let mut m = Model::build(&[3, 4], Activation::Relu, RngState::new(0)).unwrap();
        m.extend_head(&[0], 0, RngState::new(1)).unwrap();
        m.extend_head(&[1], 1, RngState::new(2)).unwrap();
        let mut store = StatsStore::new(CovVariant::Full, 0.9).unwrap();
        let mut rng = Rng::seed_from(3);
        for (c, shift) in [(0usize, 3.0), (1, -3.0)] {
            let data: Vec<f64> = (0..40).map(|i| if i % 4 == 0 { shift } else { 0.0 } + 0.3 * rng.normal()).collect();
            store.insert(c, c, &Tensor::from_matrix(10, 4, data).unwrap()).unwrap();
        }
        (m, store)
    }

    #[test]
    fn backbone_untouched_and_rerunnable() {
        let (m, store) = setup();
        let bits = m.backbone_bits();
        let head = m.head.weight.clone().unwrap().to_bits();
        let cfg = AlignConfig::default();
        let (a1, _) = align_head(&m, &store, 1, &cfg, true, &mut Rng::seed_from(5)).unwrap();
        let (a2, _) = align_head(&m, &store, 1, &cfg, true, &mut Rng::seed_from(5)).unwrap();
        assert_eq!(a1.to_bits(), a2.to_bits());
        assert_eq!(m.backbone_bits(), bits);
        assert_eq!(m.head.weight.as_ref().unwrap().to_bits(), head);
    }

    #[test]
    fn separates_two_classes() {
        let (m, store) = setup();
        let (w, log) = align_head(&m, &store, 1, &AlignConfig::default(), true, &mut Rng::seed_from(1)).unwrap();
        assert_eq!(log.samples, 512);
        let (f, y) = generate_features(&store, 1, &AlignConfig::default(), &mut Rng::seed_from(9)).unwrap();
        let pred = f.matmul_t(&w).unwrap().argmax_rows();
        let acc = pred.iter().zip(&y).filter(|(p, y)| p == y).count() as f64 / y.len() as f64;
        assert!(acc > 0.95, "accuracy {acc}");
    }

    #[test]
    fn missing_head_row() {
        let (mut m, store) = setup();
        m.head = Default::default();
        m.extend_head(&[0], 0, RngState::new(1)).unwrap();
        assert!(align_head(&m, &store, 1, &AlignConfig::default(), true, &mut Rng::seed_from(1)).is_err());
    }

    #[test]
    fn non_finite_covariance_reports_class() {
        let (m, mut store) = setup();
        if let ClassCov::Full(s) = &mut store.entries[1].cov {
            s.set(0, 0, f64::NAN);
        }
        let err = align_head(&m, &store, 1, &AlignConfig::default(), true, &mut Rng::seed_from(1)).unwrap_err();
        assert!(matches!(&err, Error::Numerical(msg) if msg.contains("class 1")), "{err}");
    }
}
