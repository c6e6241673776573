use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::lora::LoraAdapter;
use crate::numcore::{RngState, Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Standard deviation of freshly added head rows.
pub const HEAD_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            other => Err(Error::contract(format!("unknown activation `{other}`"))),
        }
    }
}

/// Fully connected layer computing `x·Wᵀ + b`, or `x·(W + BA)ᵀ + b` when a
/// low-rank adapter is attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<LoraAdapter>,
}

impl Linear {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

/// Growing linear classifier. Row `i` of `weight` scores class `classes[i]`
/// and was added for task `tasks[i]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub weight: Option<Tensor>,
    pub classes: Vec<usize>,
    pub tasks: Vec<usize>,
}

impl Head {
    pub fn width(&self) -> usize {
        self.classes.len()
    }

    pub fn last_task(&self) -> Option<usize> {
        self.tasks.last().copied()
    }

    /// Sorted distinct class ids covered by the head.
    pub fn class_set(&self) -> Vec<usize> {
        let mut c = self.classes.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn rows_of_task(&self, task: usize) -> Vec<usize> {
        (0..self.width()).filter(|&i| self.tasks[i] == task).collect()
    }
}

/// Addresses one trainable tensor of a [`Model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ParamRef {
    Weight(usize),
    Bias(usize),
    LoraA(usize),
    LoraB(usize),
    NormGain(usize),
    NormBias(usize),
    Head,
}

impl ParamRef {
    pub fn is_backbone(self) -> bool {
        !matches!(self, ParamRef::Head)
    }

    pub fn layer(self) -> Option<usize> {
        match self {
            ParamRef::Weight(i)
            | ParamRef::Bias(i)
            | ParamRef::LoraA(i)
            | ParamRef::LoraB(i)
            | ParamRef::NormGain(i)
            | ParamRef::NormBias(i) => Some(i),
            ParamRef::Head => None,
        }
    }
}

impl fmt::Display for ParamRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamRef::Weight(i) => write!(f, "linear.{i}.weight"),
            ParamRef::Bias(i) => write!(f, "linear.{i}.bias"),
            ParamRef::LoraA(i) => write!(f, "linear.{i}.lora_a"),
            ParamRef::LoraB(i) => write!(f, "linear.{i}.lora_b"),
            ParamRef::NormGain(i) => write!(f, "norm.{i}.gain"),
            ParamRef::NormBias(i) => write!(f, "norm.{i}.bias"),
            ParamRef::Head => write!(f, "head.weight"),
        }
    }
}

impl FromStr for ParamRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "head.weight" {
            return Ok(ParamRef::Head);
        }
        let bad = || Error::contract(format!("unknown parameter name `{s}`"));
        let mut parts = s.split('.');
        let (Some(kind), Some(idx), Some(field), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let i: usize = idx.parse().map_err(|_| bad())?;
        match (kind, field) {
            ("linear", "weight") => Ok(ParamRef::Weight(i)),
            ("linear", "bias") => Ok(ParamRef::Bias(i)),
            ("linear", "lora_a") => Ok(ParamRef::LoraA(i)),
            ("linear", "lora_b") => Ok(ParamRef::LoraB(i)),
            ("norm", "gain") => Ok(ParamRef::NormGain(i)),
            ("norm", "bias") => Ok(ParamRef::NormBias(i)),
            _ => Err(bad()),
        }
    }
}

impl From<ParamRef> for String {
    fn from(p: ParamRef) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for ParamRef {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// MLP backbone (linear → layer-norm → activation, with no activation after
/// the last block) followed by a growing linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub activation: Activation,
    pub linears: Vec<Linear>,
    pub norms: Vec<LayerNorm>,
    pub head: Head,
}

/// Tape nodes produced by [`Model::forward_tape`].
#[derive(Debug)]
pub struct Forward {
    pub features: Var,
    pub logits: Option<Var>,
    pub bindings: Vec<(ParamRef, Var)>,
}

impl Model {
    /// Builds a backbone for the layer widths `sizes = (d_in, h₁, …, d)`.
    /// Weights are Kaiming-uniform, biases zero, norms identity; the head
    /// starts empty.
    pub fn build(sizes: &[usize], activation: Activation, seed: RngState) -> Result<Self> {
        ensure!(
            sizes.len() >= 2,
            "layer spec needs an input width and at least one layer, got {sizes:?}"
        );
        ensure!(
            sizes.iter().all(|&s| s > 0),
            "zero-width layer in spec {sizes:?}"
        );
        let mut rng = seed.generator();
        let mut linears = Vec::new();
        let mut norms = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.uniform_range(-bound, bound))
                .collect();
            linears.push(Linear {
                weight: Tensor::from_matrix(fan_out, fan_in, data)?,
                bias: Tensor::zeros(&[fan_out]),
                adapter: None,
            });
            norms.push(LayerNorm {
                gain: Tensor::vector(vec![1.0; fan_out])?,
                bias: Tensor::zeros(&[fan_out]),
            });
        }
        Ok(Self {
            activation,
            linears,
            norms,
            head: Head::default(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.linears[0].in_dim()
    }

    /// Feature dimension `d`.
    pub fn feature_dim(&self) -> usize {
        self.linears.last().map(Linear::out_dim).unwrap_or(0)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.linears.iter().map(Linear::out_dim));
        s
    }

    /// Every parameter currently present, backbone first, head last.
    pub fn param_refs(&self) -> Vec<ParamRef> {
        let mut out = Vec::new();
        for (i, l) in self.linears.iter().enumerate() {
            out.push(ParamRef::Weight(i));
            out.push(ParamRef::Bias(i));
            if l.adapter.is_some() {
                out.push(ParamRef::LoraA(i));
                out.push(ParamRef::LoraB(i));
            }
            out.push(ParamRef::NormGain(i));
            out.push(ParamRef::NormBias(i));
        }
        if self.head.weight.is_some() {
            out.push(ParamRef::Head);
        }
        out
    }

    pub fn param(&self, p: ParamRef) -> Option<&Tensor> {
        match p {
            ParamRef::Weight(i) => self.linears.get(i).map(|l| &l.weight),
            ParamRef::Bias(i) => self.linears.get(i).map(|l| &l.bias),
            ParamRef::LoraA(i) => self.linears.get(i)?.adapter.as_ref().map(|a| &a.a),
            ParamRef::LoraB(i) => self.linears.get(i)?.adapter.as_ref().map(|a| &a.b),
            ParamRef::NormGain(i) => self.norms.get(i).map(|n| &n.gain),
            ParamRef::NormBias(i) => self.norms.get(i).map(|n| &n.bias),
            ParamRef::Head => self.head.weight.as_ref(),
        }
    }

    pub fn param_mut(&mut self, p: ParamRef) -> Option<&mut Tensor> {
        match p {
            ParamRef::Weight(i) => self.linears.get_mut(i).map(|l| &mut l.weight),
            ParamRef::Bias(i) => self.linears.get_mut(i).map(|l| &mut l.bias),
            ParamRef::LoraA(i) => self.linears.get_mut(i)?.adapter.as_mut().map(|a| &mut a.a),
            ParamRef::LoraB(i) => self.linears.get_mut(i)?.adapter.as_mut().map(|a| &mut a.b),
            ParamRef::NormGain(i) => self.norms.get_mut(i).map(|n| &mut n.gain),
            ParamRef::NormBias(i) => self.norms.get_mut(i).map(|n| &mut n.bias),
            ParamRef::Head => self.head.weight.as_mut(),
        }
    }

    /// Bit patterns of all backbone tensors, for purity audits.
    pub fn backbone_bits(&self) -> Vec<u64> {
        self.param_refs()
            .into_iter()
            .filter(|p| p.is_backbone())
            .flat_map(|p| self.param(p).map(Tensor::to_bits).unwrap_or_default())
            .collect()
    }

    pub fn has_adapters(&self) -> bool {
        self.linears.iter().any(|l| l.adapter.is_some())
    }

    /// Drops the head, keeping the backbone.
    pub fn headless(&self) -> Model {
        Model {
            head: Head::default(),
            ..self.clone()
        }
    }

    /// Appends one row per class for a new task. Class ids must be new and
    /// the task id larger than any seen so far; existing rows are untouched.
    pub fn extend_head(&mut self, new_classes: &[usize], task_id: usize, seed: RngState) -> Result<()> {
        let seen = self.head.class_set();
        if let Some(dup) = new_classes.iter().find(|c| seen.binary_search(c).is_ok()) {
            return Err(Error::contract(format!("class {dup} already in the head")));
        }
        self.extend_head_block(new_classes, task_id, seed)
    }

    /// Like [`Model::extend_head`] but allows class ids already present in
    /// earlier blocks; used for domain-incremental streams where every domain
    /// gets its own block over the same classes.
    pub fn extend_head_block(&mut self, classes: &[usize], task_id: usize, seed: RngState) -> Result<()> {
        ensure!(!classes.is_empty(), "extend_head needs at least one class");
        let mut sorted = classes.to_vec();
        sorted.sort_unstable();
        ensure!(
            sorted.windows(2).all(|w| w[0] != w[1]),
            "duplicate class id in {classes:?}"
        );
        if let Some(last) = self.head.last_task() {
            ensure!(
                task_id > last,
                "task ids must increase: {task_id} after {last}"
            );
        }
        let d = self.feature_dim();
        let mut rng = seed.generator();
        let fresh: Vec<f64> = (0..classes.len() * d)
            .map(|_| HEAD_INIT_STD * rng.normal())
            .collect();
        let weight = match self.head.weight.take() {
            None => Tensor::from_matrix(classes.len(), d, fresh)?,
            Some(old) => {
                let mut data = old.into_data();
                data.extend(fresh);
                Tensor::from_matrix(self.head.width() + classes.len(), d, data)?
            }
        };
        self.head.weight = Some(weight);
        self.head.classes.extend_from_slice(classes);
        self.head.tasks.extend(std::iter::repeat(task_id).take(classes.len()));
        Ok(())
    }

    /// Records the forward pass. Parameters for which `trainable` returns
    /// true become gradient leaves; everything else enters as a constant.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        trainable: &dyn Fn(ParamRef) -> bool,
    ) -> Result<Forward> {
        ensure!(
            x.is_matrix() && x.cols() == self.input_dim(),
            "batch width {} does not match input width {}",
            x.cols(),
            self.input_dim()
        );
        let mut bindings = Vec::new();
        let mut bind = |tape: &mut Tape, p: ParamRef, t: &Tensor| -> Var {
            if trainable(p) {
                let v = tape.leaf(&t.clone().with_grad());
                bindings.push((p, v));
                v
            } else {
                tape.constant(t)
            }
        };

        let mut h = tape.constant(x);
        let last = self.linears.len() - 1;
        for (i, (lin, norm)) in self.linears.iter().zip(&self.norms).enumerate() {
            let w = bind(tape, ParamRef::Weight(i), &lin.weight);
            let b = bind(tape, ParamRef::Bias(i), &lin.bias);
            let xw = tape.matmul_t(h, w)?;
            let mut out = tape.add_row(xw, b)?;
            if let Some(ad) = &lin.adapter {
                let a = bind(tape, ParamRef::LoraA(i), &ad.a);
                let bb = bind(tape, ParamRef::LoraB(i), &ad.b);
                let xa = tape.matmul_t(h, a)?;
                let delta = tape.matmul_t(xa, bb)?;
                out = tape.add(out, delta)?;
            }
            let z = tape.normalize_rows(out, LAYER_NORM_EPS);
            let g = bind(tape, ParamRef::NormGain(i), &norm.gain);
            let nb = bind(tape, ParamRef::NormBias(i), &norm.bias);
            let scaled = tape.mul_row(z, g)?;
            h = tape.add_row(scaled, nb)?;
            if i < last {
                h = match self.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Gelu => tape.gelu(h),
                };
            }
        }
        let features = h;
        let logits = match &self.head.weight {
            Some(w) => {
                let wv = bind(tape, ParamRef::Head, w);
                Some(tape.matmul_t(features, wv)?)
            }
            None => None,
        };
        Ok(Forward {
            features,
            logits,
            bindings,
        })
    }

    /// Backbone features `n×d`.
    pub fn forward_features(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let fwd = self.forward_tape(&mut tape, x, &|_| false)?;
        Ok(tape.value(fwd.features).clone())
    }

    /// Head logits `n×C`, one column per head row.
    pub fn forward_logits(&self, x: &Tensor) -> Result<Tensor> {
        ensure!(self.head.width() > 0, "forward_logits on an empty head");
        let mut tape = Tape::new();
        let fwd = self.forward_tape(&mut tape, x, &|_| false)?;
        let logits = fwd.logits.expect("non-empty head yields logits");
        Ok(tape.value(logits).clone())
    }

    /// Logits for precomputed features.
    pub fn head_logits(&self, features: &Tensor) -> Result<Tensor> {
        let w = self
            .head
            .weight
            .as_ref()
            .ok_or_else(|| Error::contract("head is empty"))?;
        features.matmul_t(w)
    }

    pub fn zero_grad(&mut self) {
        for p in self.param_refs() {
            if let Some(t) = self.param_mut(p) {
                t.clear_grad();
            }
        }
    }

    /// Zeroes head-gradient rows that do not belong to `task`.
    pub fn mask_head_grad(&mut self, task: usize) {
        let tasks = self.head.tasks.clone();
        if let Some(w) = self.head.weight.as_mut() {
            let d = w.cols();
            if let Some(g) = w.grad_slice_mut() {
                for (i, t) in tasks.iter().enumerate() {
                    if *t != task {
                        g[i * d..(i + 1) * d].iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
        }
    }
}

/// Fresh seed for a model's initialization, derived from an experiment seed.
pub fn init_seed(seed: u64) -> RngState {
    RngState::new(seed).derive("model-init")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn model() -> Model {
        Model::build(&[32, 64, 16], Activation::Relu, RngState::new(1)).unwrap()
    }

    #[test]
    fn build_shapes() {
        let m = model();
        assert_eq!(m.feature_dim(), 16);
        assert_eq!(m.head.width(), 0);
        assert_eq!(m.layer_sizes(), vec![32, 64, 16]);
    }

    #[test]
    fn build_rejects_zero_width() {
        assert!(Model::build(&[4, 0, 2], Activation::Relu, RngState::new(0)).is_err());
        assert!(Model::build(&[4], Activation::Relu, RngState::new(0)).is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let a = model();
        let b = model();
        assert_eq!(a.backbone_bits(), b.backbone_bits());
        let c = Model::build(&[32, 64, 16], Activation::Relu, RngState::new(2)).unwrap();
        assert_ne!(a.backbone_bits(), c.backbone_bits());
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let m = model();
        let f = m.forward_features(&Tensor::zeros(&[3, 32])).unwrap();
        assert!(f.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn extend_head_preserves_old_rows() {
        let mut m = model();
        m.extend_head(&[0, 1], 0, RngState::new(5)).unwrap();
        assert_eq!(m.head.width(), 2);
        let x = Tensor::from_matrix(2, 32, (0..64).map(|v| v as f64 / 64.0).collect()).unwrap();
        let before = m.forward_logits(&x).unwrap();
        let old_bits = m.head.weight.as_ref().unwrap().to_bits();
        m.extend_head(&[2, 3, 4], 1, RngState::new(6)).unwrap();
        let after = m.forward_logits(&x).unwrap();
        assert_eq!(m.head.width(), 5);
        assert_eq!(&m.head.weight.as_ref().unwrap().to_bits()[..old_bits.len()], &old_bits[..]);
        for i in 0..2 {
            assert_eq!(before.row(i), &after.row(i)[..2]);
        }
    }

    #[test]
    fn extend_head_contract() {
        let mut m = model();
        m.extend_head(&[0, 1], 1, RngState::new(5)).unwrap();
        assert!(m.extend_head(&[1, 2], 2, RngState::new(5)).is_err());
        assert!(m.extend_head(&[3], 1, RngState::new(5)).is_err());
        assert!(m.extend_head(&[4, 4], 2, RngState::new(5)).is_err());
        // domain blocks may repeat classes across tasks
        m.extend_head_block(&[0, 1], 2, RngState::new(5)).unwrap();
        assert_eq!(m.head.class_set(), vec![0, 1]);
    }

    #[test]
    fn ten_tasks_of_ten_classes() {
        let mut m = model();
        for t in 0..10 {
            let classes: Vec<usize> = (t * 10..(t + 1) * 10).collect();
            m.extend_head(&classes, t, RngState::new(t as u64)).unwrap();
        }
        assert_eq!(m.head.width(), 100);
    }

    #[test]
    fn logits_need_a_head() {
        let m = model();
        let x = Tensor::zeros(&[1, 32]);
        assert!(m.forward_logits(&x).is_err());
        assert!(m.forward_features(&x).is_ok());
        assert!(m.forward_features(&Tensor::zeros(&[1, 31])).is_err());
    }

    #[test]
    fn batch_rows_are_independent() {
        let mut m = model();
        m.extend_head(&[0, 1, 2], 0, RngState::new(3)).unwrap();
        let mut rng = Rng::seed_from(11);
        let x = Tensor::from_matrix(5, 32, rng.normals(160)).unwrap();
        let all = m.forward_logits(&x).unwrap();
        for i in 0..5 {
            let one = m.forward_logits(&x.select_rows(&[i]).unwrap()).unwrap();
            assert_eq!(one.row(0), all.row(i));
        }
    }

    #[test]
    fn param_names_round_trip() {
        for p in [
            ParamRef::Weight(3),
            ParamRef::Bias(0),
            ParamRef::LoraA(1),
            ParamRef::LoraB(2),
            ParamRef::NormGain(4),
            ParamRef::NormBias(5),
            ParamRef::Head,
        ] {
            assert_eq!(p.to_string().parse::<ParamRef>().unwrap(), p);
        }
        assert!("linear.x.weight".parse::<ParamRef>().is_err());
    }
}
