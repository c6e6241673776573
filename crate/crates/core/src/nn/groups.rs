use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::model::{Model, ParamRef};
use crate::error::{ensure, Error, Result};

/// Learning rates for the tuning modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Uniform rate of sequential fine-tuning.
    pub seqft: f64,
    /// Slow-learner rate for the backbone.
    pub backbone: f64,
    /// Slow-learner rate for the parameter-efficient hybrid set.
    pub hybrid: f64,
    pub head: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            seqft: 0.005,
            backbone: 0.0001,
            hybrid: 0.001,
            head: 0.01,
        }
    }
}

impl LearningRates {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("seqft", self.seqft),
            ("backbone", self.backbone),
            ("hybrid", self.hybrid),
            ("head", self.head),
        ] {
            ensure!(v >= 0.0 && v.is_finite(), "learning rate `{name}` must be >= 0, got {v}");
        }
        Ok(())
    }
}

/// Backbone subsets for tuning ablations. Even-indexed linear layers stand
/// in for attention blocks, odd-indexed ones for feed-forward blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Attn,
    Mlp,
    Norm,
    Bias,
}

impl Subset {
    pub fn contains(self, p: ParamRef) -> bool {
        match (self, p) {
            (Subset::Attn, ParamRef::Weight(i) | ParamRef::Bias(i)) => i % 2 == 0,
            (Subset::Mlp, ParamRef::Weight(i) | ParamRef::Bias(i)) => i % 2 == 1,
            (Subset::Norm, ParamRef::NormGain(_) | ParamRef::NormBias(_)) => true,
            (Subset::Bias, ParamRef::Bias(_) | ParamRef::NormBias(_)) => true,
            _ => false,
        }
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attn" => Ok(Subset::Attn),
            "mlp" => Ok(Subset::Mlp),
            "norm" => Ok(Subset::Norm),
            "bias" => Ok(Subset::Bias),
            other => Err(Error::contract(format!("unknown tuning subset `{other}`"))),
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Attn => "attn",
            Subset::Mlp => "mlp",
            Subset::Norm => "norm",
            Subset::Bias => "bias",
        })
    }
}

/// Which parameters train, and how fast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TuningMode {
    /// Everything at one large rate.
    SeqFt,
    /// Slow backbone, fast head.
    Sl,
    /// Frozen base weights; adapters, biases and norms slow; head fast.
    Hybrid,
    FixedBackbone,
    Subset(Subset),
}

impl fmt::Display for TuningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TuningMode::SeqFt => f.write_str("seqft"),
            TuningMode::Sl => f.write_str("sl"),
            TuningMode::Hybrid => f.write_str("hybrid"),
            TuningMode::FixedBackbone => f.write_str("fixed"),
            TuningMode::Subset(s) => write!(f, "subset:{s}"),
        }
    }
}

impl FromStr for TuningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seqft" => Ok(TuningMode::SeqFt),
            "sl" => Ok(TuningMode::Sl),
            "hybrid" => Ok(TuningMode::Hybrid),
            "fixed" | "fixed-backbone" => Ok(TuningMode::FixedBackbone),
            other => match other.strip_prefix("subset:") {
                Some(name) => Ok(TuningMode::Subset(name.parse()?)),
                None => Err(Error::contract(format!("unknown tuning mode `{other}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub members: Vec<ParamRef>,
    /// Step size; zero marks the group frozen.
    pub lr: f64,
}

/// Partition of a model's parameters into learning-rate groups.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupSet {
    pub groups: Vec<ParamGroup>,
}

impl GroupSet {
    pub fn lr_of(&self, p: ParamRef) -> Option<f64> {
        self.groups
            .iter()
            .find(|g| g.members.contains(&p))
            .map(|g| g.lr)
    }

    pub fn is_trainable(&self, p: ParamRef) -> bool {
        self.lr_of(p).is_some_and(|lr| lr > 0.0)
    }

    pub fn get(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Checks the groups partition exactly the model's parameters.
    pub fn check_partition(&self, model: &Model) -> Result<()> {
        let mut seen = BTreeSet::new();
        for g in &self.groups {
            ensure!(g.lr >= 0.0, "group `{}` has negative rate", g.name);
            for &p in &g.members {
                ensure!(seen.insert(p), "parameter {p} appears in two groups");
            }
        }
        let all: BTreeSet<_> = model.param_refs().into_iter().collect();
        ensure!(
            seen == all,
            "groups do not cover the model parameters exactly"
        );
        Ok(())
    }

    fn push(&mut self, name: &str, members: Vec<ParamRef>, lr: f64) {
        if !members.is_empty() {
            self.groups.push(ParamGroup {
                name: name.to_string(),
                members,
                lr,
            });
        }
    }
}

/// Assigns every parameter of `model` to a group for the given mode.
pub fn make_groups(model: &Model, mode: TuningMode, rates: &LearningRates) -> Result<GroupSet> {
    rates.validate()?;
    let params = model.param_refs();
    let (backbone, head): (Vec<_>, Vec<_>) = params.iter().partition(|p| p.is_backbone());
    let mut set = GroupSet::default();
    match mode {
        TuningMode::SeqFt => set.push("all", params.clone(), rates.seqft),
        TuningMode::Sl => {
            set.push("backbone", backbone, rates.backbone);
            set.push("head", head, rates.head);
        }
        TuningMode::FixedBackbone => {
            set.push("backbone", backbone, 0.0);
            set.push("head", head, rates.head);
        }
        TuningMode::Hybrid => {
            ensure!(
                model.has_adapters(),
                "hybrid tuning needs LoRA adapters attached first"
            );
            let (frozen, efficient): (Vec<_>, Vec<_>) = backbone
                .into_iter()
                .partition(|p| matches!(p, ParamRef::Weight(i) if model.linears[*i].adapter.is_some()));
            set.push("hybrid", efficient, rates.hybrid);
            set.push("frozen", frozen, 0.0);
            set.push("head", head, rates.head);
        }
        TuningMode::Subset(sub) => {
            let (tuned, frozen): (Vec<_>, Vec<_>) =
                backbone.into_iter().partition(|p| sub.contains(*p));
            ensure!(!tuned.is_empty(), "subset `{sub}` selects no parameters");
            set.push(&sub.to_string(), tuned, rates.backbone);
            set.push("frozen", frozen, 0.0);
            set.push("head", head, rates.head);
        }
    }
    set.check_partition(model)?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::numcore::RngState;

    fn model_with_head() -> Model {
        let mut m = Model::build(&[6, 8, 8, 4], Activation::Gelu, RngState::new(0)).unwrap();
        m.extend_head(&[0, 1], 0, RngState::new(1)).unwrap();
        m
    }

    #[test]
    fn sl_has_two_groups() {
        let m = model_with_head();
        let g = make_groups(&m, TuningMode::Sl, &LearningRates::default()).unwrap();
        let rates: Vec<f64> = g.groups.iter().map(|g| g.lr).collect();
        assert_eq!(rates, vec![0.0001, 0.01]);
    }

    #[test]
    fn seqft_single_group() {
        let m = model_with_head();
        let g = make_groups(&m, TuningMode::SeqFt, &LearningRates::default()).unwrap();
        assert_eq!(g.groups.len(), 1);
        assert_eq!(g.groups[0].lr, 0.005);
    }

    #[test]
    fn hybrid_requires_adapters() {
        let m = model_with_head();
        let r = make_groups(&m, TuningMode::Hybrid, &LearningRates::default());
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn subsets_partition() {
        let m = model_with_head();
        for s in [Subset::Attn, Subset::Mlp, Subset::Norm, Subset::Bias] {
            let g = make_groups(&m, TuningMode::Subset(s), &LearningRates::default()).unwrap();
            let tuned = g.get(&s.to_string()).unwrap();
            assert!(tuned.members.iter().all(|p| s.contains(*p)));
            assert_eq!(tuned.lr, 0.0001);
            assert_eq!(g.get("head").unwrap().lr, 0.01);
        }
        let g = make_groups(&m, TuningMode::Subset(Subset::Attn), &LearningRates::default()).unwrap();
        let attn = &g.get("attn").unwrap().members;
        assert!(attn.contains(&ParamRef::Weight(0)) && attn.contains(&ParamRef::Weight(2)));
        assert!(!attn.contains(&ParamRef::Weight(1)));
    }

    #[test]
    fn mode_names_parse() {
        for s in ["seqft", "sl", "hybrid", "fixed", "subset:mlp"] {
            let m: TuningMode = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert!("subset:conv".parse::<TuningMode>().is_err());
    }
}
