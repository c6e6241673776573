//! Central finite differences against reverse-mode gradients.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use slca_core::error::Result;
use slca_core::losses::{ce, logit_norm_ce, rce, sce, LogitNormConfig, SceConfig};
use slca_core::lora::{attach_lora, LayerSelector};
use slca_core::nn::{Activation, Model};
use slca_core::numcore::{Rng, RngState, Tape, Tensor, Var};

const INSTANCES: u64 = 20;
const H: f64 = 1e-5;
pub const TOL: f64 = 1e-5;

/// Worst relative error and instance count per checked function.
#[derive(Default)]
pub struct Record {
    pub worst: BTreeMap<String, (f64, BTreeSet<u64>)>,
}

impl Record {
    fn add(&mut self, name: &str, seed: u64, err: f64) {
        let e = self.worst.entry(name.to_string()).or_insert((0.0, BTreeSet::new()));
        e.0 = e.0.max(err);
        e.1.insert(seed);
    }

    pub fn failures(&self) -> Vec<String> {
        self.worst
            .iter()
            .filter(|(_, (e, n))| !(*e < TOL) || n.len() < INSTANCES as usize)
            .map(|(k, (e, n))| format!("{k}: worst {e:e} over {} instances", n.len()))
            .collect()
    }
}

/// Runs every group and returns the record.
pub fn full_suite() -> Record {
    let mut rec = Record::default();
    for f in [matrix_products, elementwise_binary, elementwise_unary, row_operations, losses, linear_and_norm_layers, lora_layers] {
        f(&mut rec);
    }
    rec
}

fn rand(rng: &mut Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_matrix(r, c, (0..r * c).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

fn positive(rng: &mut Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_matrix(r, c, (0..r * c).map(|_| rng.uniform_range(0.5, 2.0)).collect()).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale < 1e-12 {
        return norm(&diff);
    }
    norm(&diff) / scale
}

/// Reduces any node to a scalar with fixed random weights so every output
/// element contributes to the checked gradient.
fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let n: usize = shape.iter().product();
    let mut rng = Rng::seed_from(seed ^ 0xabcdef);
    let w = tape.constant(&Tensor::new(shape, rng.normals(n))?);
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn check<F>(rec: &mut Record, name: &str, seed: u64, inputs: &[Tensor], f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor], grad: bool| -> (f64, Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals
            .iter()
            .map(|t| if grad { tape.leaf(&t.clone().with_grad()) } else { tape.constant(t) })
            .collect();
        let out = f(&mut tape, &vars).unwrap();
        let l = if tape.value(out).len() == 1 { out } else { weighted_sum(&mut tape, out, seed).unwrap() };
        (tape.value(l).data()[0], tape, vars, l)
    };
    let (_, tape, vars, l) = eval(inputs, true);
    let grads = tape.backward(l).unwrap();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("leaf gradient").to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for j in 0..numeric.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= H;
            numeric[j] = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * H);
        }
        rec.add(name, seed, rel_err(&analytic, &numeric));
    }
}

fn dims(rng: &mut Rng) -> (usize, usize, usize) {
    (2 + rng.below(4), 2 + rng.below(4), 2 + rng.below(4))
}

pub fn matrix_products(rec: &mut Record) {
    for s in 0..INSTANCES {
        let mut rng = Rng::seed_from(s);
        let (n, k, m) = dims(&mut rng);
        check(rec, "matmul", s, &[rand(&mut rng, n, k), rand(&mut rng, k, m)], |t, v| t.matmul(v[0], v[1]));
        check(rec, "matmul_t", s, &[rand(&mut rng, n, k), rand(&mut rng, m, k)], |t, v| t.matmul_t(v[0], v[1]));
    }
}

pub fn elementwise_binary(rec: &mut Record) {
    for s in 0..INSTANCES {
        let mut rng = Rng::seed_from(100 + s);
        let (n, m, _) = dims(&mut rng);
        let ab = [rand(&mut rng, n, m), rand(&mut rng, n, m)];
        check(rec, "add", s, &ab, |t, v| t.add(v[0], v[1]));
        check(rec, "sub", s, &ab, |t, v| t.sub(v[0], v[1]));
        check(rec, "mul", s, &ab, |t, v| t.mul(v[0], v[1]));
        let row = [rand(&mut rng, n, m), rand(&mut rng, 1, m)];
        check(rec, "add_row", s, &row, |t, v| t.add_row(v[0], v[1]));
        check(rec, "mul_row", s, &row, |t, v| t.mul_row(v[0], v[1]));
        let col = [rand(&mut rng, n, m), positive(&mut rng, n, 1)];
        check(rec, "div_rows", s, &col, |t, v| t.div_rows(v[0], v[1]));
    }
}

pub fn elementwise_unary(rec: &mut Record) {
    for s in 0..INSTANCES {
        let mut rng = Rng::seed_from(200 + s);
        let (n, m, _) = dims(&mut rng);
        let x = [rand(&mut rng, n, m)];
        check(rec, "scale", s, &x, |t, v| Ok(t.scale(v[0], -1.7)));
        check(rec, "add_scalar", s, &x, |t, v| Ok(t.add_scalar(v[0], 0.3)));
        check(rec, "relu", s, &x, |t, v| Ok(t.relu(v[0])));
        check(rec, "gelu", s, &x, |t, v| Ok(t.gelu(v[0])));
        check(rec, "exp", s, &x, |t, v| Ok(t.exp(v[0])));
        check(rec, "log", s, &[positive(&mut rng, n, m)], |t, v| Ok(t.log(v[0])));
    }
}

pub fn row_operations(rec: &mut Record) {
    for s in 0..INSTANCES {
        let mut rng = Rng::seed_from(300 + s);
        let (n, m, _) = dims(&mut rng);
        let x = [rand(&mut rng, n, m + 1)];
        check(rec, "normalize_rows", s, &x, |t, v| Ok(t.normalize_rows(v[0], 1e-5)));
        check(rec, "softmax", s, &x, |t, v| Ok(t.softmax(v[0])));
        check(rec, "log_softmax", s, &x, |t, v| Ok(t.log_softmax(v[0])));
        check(rec, "row_norm", s, &x, |t, v| Ok(t.row_norm(v[0])));
        check(rec, "sum", s, &x, |t, v| Ok(t.sum(v[0])));
        check(rec, "mean", s, &x, |t, v| Ok(t.mean(v[0])));
        check(rec, "slice_cols", s, &x, |t, v| t.slice_cols(v[0], 1, m));
        let idx: Vec<usize> = (0..n).map(|_| rng.below(m + 1)).collect();
        check(rec, "gather", s, &x, |t, v| t.gather(v[0], &idx));
        let pair = [rand(&mut rng, n, m), rand(&mut rng, n, 2)];
        check(rec, "concat_cols", s, &pair, |t, v| t.concat_cols(&[v[0], v[1]]));
    }
}

fn logits_and_labels(rng: &mut Rng) -> (Tensor, Vec<usize>) {
    let n = 2 + rng.below(5);
    let c = 2 + rng.below(5);
    let x = Tensor::from_matrix(n, c, (0..n * c).map(|_| 2.0 * rng.normal()).collect()).unwrap();
    let y = (0..n).map(|_| rng.below(c)).collect();
    (x, y)
}

pub fn losses(rec: &mut Record) {
    for s in 0..INSTANCES {
        let mut rng = Rng::seed_from(400 + s);
        let (x, y) = logits_and_labels(&mut rng);
        check(rec, "ce", s, &[x.clone()], |t, v| ce(t, v[0], &y));
        check(rec, "logit_norm_ce", s, &[x.clone()], |t, v| logit_norm_ce(t, v[0], &y, &LogitNormConfig::default()));
        check(rec, "rce", s, &[x.clone()], |t, v| rce(t, v[0], &y, 4.0));
        check(rec, "sce", s, &[x], |t, v| sce(t, v[0], &y, &SceConfig::default()));
    }
}

/// Builds a small model with a head and (optionally) non-zero adapters.
fn model(seed: u64, activation: Activation, adapters: bool) -> Model {
    let mut m = Model::build(&[5, 6, 4], activation, RngState::new(seed)).unwrap();
    m.extend_head(&[0, 1, 2], 0, RngState::new(seed + 1)).unwrap();
    let mut rng = Rng::seed_from(seed + 2);
    for n in &mut m.norms {
        n.gain.data_mut().iter_mut().for_each(|g| *g = 1.0 + 0.3 * rng.normal());
        n.bias.data_mut().iter_mut().for_each(|b| *b = 0.3 * rng.normal());
    }
    if adapters {
        attach_lora(&mut m, &LayerSelector::All, 2, RngState::new(seed + 3)).unwrap();
        for l in &mut m.linears {
            let ad = l.adapter.as_mut().unwrap();
            ad.b.data_mut().iter_mut().for_each(|b| *b = 0.5 * rng.normal());
        }
    }
    m
}

fn model_loss(m: &Model, x: &Tensor, y: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let logits = tape.constant(&m.forward_logits(x).unwrap());
    let l = ce(&mut tape, logits, y).unwrap();
    tape.value(l).data()[0]
}

fn check_model(rec: &mut Record, name: &str, seed: u64, m: &Model) {
    let mut rng = Rng::seed_from(seed + 50);
    let x = rand(&mut rng, 4, 5);
    let y: Vec<usize> = (0..4).map(|_| rng.below(3)).collect();
    let mut tape = Tape::new();
    let fwd = m.forward_tape(&mut tape, &x, &|_| true).unwrap();
    let l = ce(&mut tape, fwd.logits.unwrap(), &y).unwrap();
    let grads = tape.backward(l).unwrap();
    assert!(!fwd.bindings.is_empty());
    for (p, v) in &fwd.bindings {
        let analytic = grads.get(*v).unwrap().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = m.clone();
            plus.param_mut(*p).unwrap().data_mut()[j] += H;
            let mut minus = m.clone();
            minus.param_mut(*p).unwrap().data_mut()[j] -= H;
            *slot = (model_loss(&plus, &x, &y) - model_loss(&minus, &x, &y)) / (2.0 * H);
        }
        rec.add(name, seed, rel_err(&analytic, &numeric));
    }
}

pub fn linear_and_norm_layers(rec: &mut Record) {
    for s in 0..INSTANCES {
        check_model(rec, "gelu model", s, &model(1000 + 10 * s, Activation::Gelu, false));
        check_model(rec, "relu model", s, &model(2000 + 10 * s, Activation::Relu, false));
    }
}

pub fn lora_layers(rec: &mut Record) {
    for s in 0..INSTANCES {
        check_model(rec, "lora model", s, &model(3000 + 10 * s, Activation::Gelu, true));
    }
}
