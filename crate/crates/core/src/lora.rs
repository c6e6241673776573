//! Low-rank adapters for the hybrid tuning mode.
//!
//! An adapted layer computes `x·(W + BA)ᵀ` where `W` stays frozen in the
//! owning [`Linear`](crate::nn::Linear) and only `A` (`k×d₁`) and `B`
//! (`d₂×k`) train. There is no `α/r` scale on `BA`. `B` starts at zero so
//! attaching an adapter never changes the network's output.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::Model;
use crate::numcore::{svd_topk, RngState, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub a: Tensor,
    pub b: Tensor,
    pub rank: usize,
}

impl LoraAdapter {
    /// The low-rank update `BA` as a dense `d₂×d₁` matrix.
    pub fn delta(&self) -> Result<Tensor> {
        self.b.matmul(&self.a)
    }
}

/// How `A` is initialized on attach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoraInit {
    /// Top-`k` right singular vectors of the base weight.
    #[default]
    Svd,
    /// Gaussian entries with variance `1/d₁`.
    Random,
}

impl FromStr for LoraInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svd" => Ok(LoraInit::Svd),
            "random" => Ok(LoraInit::Random),
            other => Err(Error::contract(format!("unknown LoRA init `{other}`"))),
        }
    }
}

/// Which backbone linear layers get adapters.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerSelector {
    #[default]
    All,
    Layers(Vec<usize>),
}

impl LayerSelector {
    pub fn resolve(&self, model: &Model) -> Result<Vec<usize>> {
        let n = model.linears.len();
        match self {
            LayerSelector::All => Ok((0..n).collect()),
            LayerSelector::Layers(idx) => {
                ensure!(!idx.is_empty(), "empty layer selection");
                for &i in idx {
                    ensure!(i < n, "layer {i} out of range (model has {n})");
                }
                let mut v = idx.clone();
                v.sort_unstable();
                v.dedup();
                Ok(v)
            }
        }
    }
}

/// Attaches a rank-`k` adapter with random `A` and zero `B` to each selected
/// layer. Call [`svd_init`] afterwards for the singular-vector start.
pub fn attach_lora(model: &mut Model, selector: &LayerSelector, k: usize, seed: RngState) -> Result<()> {
    ensure!(k > 0, "LoRA rank must be positive");
    let layers = selector.resolve(model)?;
    for &i in &layers {
        let lin = &model.linears[i];
        ensure!(lin.adapter.is_none(), "layer {i} already has an adapter");
        let (d2, d1) = (lin.out_dim(), lin.in_dim());
        ensure!(
            k <= d1.min(d2),
            "rank {k} exceeds min({d1}, {d2}) for layer {i}"
        );
    }
    let mut rng = seed.generator();
    for &i in &layers {
        let lin = &mut model.linears[i];
        let (d2, d1) = (lin.out_dim(), lin.in_dim());
        let std = (1.0 / d1 as f64).sqrt();
        let a = Tensor::from_matrix(k, d1, (0..k * d1).map(|_| std * rng.normal()).collect())?;
        lin.adapter = Some(LoraAdapter {
            a,
            b: Tensor::zeros(&[d2, k]),
            rank: k,
        });
    }
    Ok(())
}

/// Sets `A` of layer `layer` to the top-`k` rows of `Vᵀ` from the SVD of its
/// base weight and resets `B` to zero.
pub fn svd_init(model: &mut Model, layer: usize) -> Result<()> {
    let lin = model
        .linears
        .get_mut(layer)
        .ok_or_else(|| Error::contract(format!("no layer {layer}")))?;
    let adapter = lin
        .adapter
        .as_mut()
        .ok_or_else(|| Error::contract(format!("layer {layer} has no adapter")))?;
    let (_, v) = svd_topk(&lin.weight, adapter.rank)?;
    adapter.a = v;
    adapter.b = Tensor::zeros(&[lin.weight.rows(), adapter.rank]);
    Ok(())
}

/// Attach plus the requested initialization, the usual entry point.
pub fn attach_and_init(
    model: &mut Model,
    selector: &LayerSelector,
    k: usize,
    init: LoraInit,
    seed: RngState,
) -> Result<()> {
    attach_lora(model, selector, k, seed)?;
    if init == LoraInit::Svd {
        for i in selector.resolve(model)? {
            svd_init(model, i)?;
        }
    }
    Ok(())
}

/// Folds the adapter of one layer into its base weight, `W′ = W + BA`.
pub fn absorb(model: &mut Model, layer: usize) -> Result<()> {
    let lin = model
        .linears
        .get_mut(layer)
        .ok_or_else(|| Error::contract(format!("no layer {layer}")))?;
    let adapter = lin
        .adapter
        .take()
        .ok_or_else(|| Error::contract(format!("layer {layer} is already a plain linear layer")))?;
    let merged = lin.weight.add(&adapter.delta()?)?;
    if merged.data().iter().any(|v| !v.is_finite()) {
        lin.adapter = Some(adapter);
        return Err(Error::Numerical(format!(
            "non-finite weight after absorbing layer {layer}"
        )));
    }
    lin.weight = merged;
    Ok(())
}

/// Absorbs every attached adapter.
pub fn absorb_all(model: &mut Model) -> Result<()> {
    let layers: Vec<usize> = (0..model.linears.len())
        .filter(|&i| model.linears[i].adapter.is_some())
        .collect();
    ensure!(!layers.is_empty(), "model has no adapters to absorb");
    for i in layers {
        absorb(model, i)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{make_groups, Activation, LearningRates, ParamRef, TuningMode};
    use crate::numcore::Rng;

    fn model() -> Model {
        let mut m = Model::build(&[6, 5, 4], Activation::Gelu, RngState::new(3)).unwrap();
        m.extend_head(&[0, 1, 2], 0, RngState::new(4)).unwrap();
        m
    }

    fn batch(seed: u64) -> Tensor {
        Tensor::from_matrix(7, 6, Rng::seed_from(seed).normals(42)).unwrap()
    }

    #[test]
    fn attach_keeps_output() {
        let mut m = model();
        let x = batch(1);
        let before = m.forward_logits(&x).unwrap();
        attach_lora(&mut m, &LayerSelector::All, 2, RngState::new(0)).unwrap();
        assert_eq!(before, m.forward_logits(&x).unwrap());
        svd_init(&mut m, 0).unwrap();
        assert_eq!(before, m.forward_logits(&x).unwrap());
    }

    #[test]
    fn rank_bounds() {
        let mut m = model();
        assert!(attach_lora(&mut m, &LayerSelector::All, 0, RngState::new(0)).is_err());
        // layer 1 is 5→4 so min is 4
        assert!(attach_lora(&mut m, &LayerSelector::All, 5, RngState::new(0)).is_err());
        attach_lora(&mut m, &LayerSelector::All, 4, RngState::new(0)).unwrap();
    }

    #[test]
    fn double_attach_rejected() {
        let mut m = model();
        attach_lora(&mut m, &LayerSelector::Layers(vec![1]), 2, RngState::new(0)).unwrap();
        assert!(attach_lora(&mut m, &LayerSelector::All, 2, RngState::new(0)).is_err());
        // the failed call must not have attached anything to layer 0
        assert!(m.linears[0].adapter.is_none());
    }

    #[test]
    fn svd_init_diagonal() {
        let mut m = Model::build(&[3, 3], Activation::Relu, RngState::new(0)).unwrap();
        m.linears[0].weight =
            Tensor::from_rows(&[vec![3.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0]])
                .unwrap();
        attach_and_init(&mut m, &LayerSelector::All, 1, LoraInit::Svd, RngState::new(0)).unwrap();
        let a = &m.linears[0].adapter.as_ref().unwrap().a;
        assert!((a.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(a.get(0, 1).abs() < 1e-12 && a.get(0, 2).abs() < 1e-12);
    }

    #[test]
    fn absorb_zero_b_is_exact() {
        let mut m = model();
        let w = m.linears[0].weight.clone();
        attach_and_init(&mut m, &LayerSelector::All, 2, LoraInit::Svd, RngState::new(0)).unwrap();
        absorb_all(&mut m).unwrap();
        assert_eq!(m.linears[0].weight.to_bits(), w.to_bits());
        assert!(matches!(absorb(&mut m, 0), Err(Error::Contract(_))));
        assert!(absorb_all(&mut m).is_err());
    }

    #[test]
    fn hybrid_groups_freeze_base_weights() {
        let mut m = model();
        attach_and_init(&mut m, &LayerSelector::All, 2, LoraInit::Svd, RngState::new(0)).unwrap();
        let g = make_groups(&m, TuningMode::Hybrid, &LearningRates::default()).unwrap();
        assert_eq!(g.lr_of(ParamRef::Weight(0)), Some(0.0));
        assert_eq!(g.lr_of(ParamRef::LoraA(0)), Some(0.001));
        assert_eq!(g.lr_of(ParamRef::LoraB(1)), Some(0.001));
        assert_eq!(g.lr_of(ParamRef::NormGain(1)), Some(0.001));
        assert_eq!(g.lr_of(ParamRef::Bias(0)), Some(0.001));
        assert_eq!(g.lr_of(ParamRef::Head), Some(0.01));
    }
}
