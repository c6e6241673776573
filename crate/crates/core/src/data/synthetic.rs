//! Gaussian-mixture benchmark generator.
//!
//! Samples live in a latent space and are pushed through a fixed nonlinear
//! "world" map to input space:
//!
//! ```text
//! z ~ N(center, I_m)
//! x = M z + tanh(N z) + σ_x ε
//! ```
//!
//! `M` and `N` are drawn from `world_seed`, so datasets generated with the
//! same world (for example a pre-training set and a downstream set) share
//! structure that a backbone can learn. Each class has `clusters_per_class`
//! centers around a class mean `shift + separation·g_c`; at separation zero
//! all classes coincide.

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use crate::error::{ensure, Result};
use crate::numcore::{Rng, RngState, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub d_in: usize,
    pub latent_dim: usize,
    pub clusters_per_class: usize,
    /// Scale of class means in latent units (within-class spread is 1).
    pub separation: f64,
    /// Spread of sub-cluster centers relative to `separation`.
    #[serde(default = "default_cluster_spread")]
    pub cluster_spread: f64,
    /// Constant added to every latent coordinate of every class mean.
    #[serde(default)]
    pub mean_shift: f64,
    #[serde(default = "default_input_noise")]
    pub input_noise: f64,
    /// Samples per class.
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub world_seed: u64,
}

fn default_cluster_spread() -> f64 {
    0.3
}

fn default_input_noise() -> f64 {
    0.05
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.classes > 0, "classes must be positive");
        ensure!(self.d_in > 0 && self.latent_dim > 0, "dimensions must be positive");
        ensure!(self.clusters_per_class > 0, "clusters_per_class must be positive");
        ensure!(self.n_train > 0 && self.n_test > 0, "sample counts must be positive");
        ensure!(self.separation >= 0.0, "separation must be >= 0");
        ensure!(self.input_noise >= 0.0, "input_noise must be >= 0");
        Ok(())
    }
}

/// Fixed latent-to-input map shared by every dataset of one world.
#[derive(Debug, Clone)]
pub struct World {
    linear: Tensor,
    nonlinear: Tensor,
    noise: f64,
}

impl World {
    pub fn new(d_in: usize, latent_dim: usize, noise: f64, world_seed: u64) -> Result<Self> {
        let mut rng = RngState::new(world_seed).derive("world").generator();
        let s = 1.0 / (latent_dim as f64).sqrt();
        let draw = |rng: &mut Rng| -> Result<Tensor> {
            let data = (0..d_in * latent_dim).map(|_| s * rng.normal()).collect();
            Tensor::from_matrix(d_in, latent_dim, data)
        };
        let linear = draw(&mut rng)?;
        let nonlinear = draw(&mut rng)?.scale(2.0);
        Ok(Self {
            linear,
            nonlinear,
            noise,
        })
    }

    /// Maps latent rows `n×m` to inputs `n×d_in`.
    pub fn render(&self, z: &Tensor, rng: &mut Rng) -> Result<Tensor> {
        let lin = z.matmul_t(&self.linear)?;
        let mut nl = z.matmul_t(&self.nonlinear)?;
        nl.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        let mut x = lin.add(&nl)?;
        for v in x.data_mut() {
            *v += self.noise * rng.normal();
        }
        Ok(x)
    }
}

/// Generates a `(train, test)` pair. Labels are `0..classes`, rows are
/// grouped by class. Deterministic in `(seed, world_seed)`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let world = World::new(spec.d_in, spec.latent_dim, spec.input_noise, spec.world_seed)?;
    let base = RngState::new(spec.seed);
    let mut means_rng = base.derive("class-means").generator();
    let m = spec.latent_dim;

    let mut centers: Vec<Vec<Vec<f64>>> = Vec::with_capacity(spec.classes);
    for _ in 0..spec.classes {
        let mean: Vec<f64> = (0..m)
            .map(|_| spec.mean_shift + spec.separation * means_rng.normal())
            .collect();
        let subs = (0..spec.clusters_per_class)
            .map(|_| {
                mean.iter()
                    .map(|mu| mu + spec.cluster_spread * spec.separation * means_rng.normal())
                    .collect()
            })
            .collect();
        centers.push(subs);
    }

    let build = |split: Split, per_class: usize, label: &str| -> Result<Dataset> {
        let mut rng = base.derive(label).generator();
        let n = spec.classes * per_class;
        let mut z = Vec::with_capacity(n * m);
        let mut labels = Vec::with_capacity(n);
        for (c, subs) in centers.iter().enumerate() {
            for _ in 0..per_class {
                let center = &subs[rng.below(subs.len())];
                z.extend(center.iter().map(|mu| mu + rng.normal()));
                labels.push(c);
            }
        }
        let z = Tensor::from_matrix(n, m, z)?;
        let x = world.render(&z, &mut rng)?;
        Dataset::new(x, labels, None, split)
    };
    let train = build(Split::Train, spec.n_train, "train")?;
    let test = build(Split::Test, spec.n_test, "test")?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            classes: 4,
            d_in: 8,
            latent_dim: 4,
            clusters_per_class: 2,
            separation: 3.0,
            cluster_spread: 0.3,
            mean_shift: 0.0,
            input_noise: 0.05,
            n_train: 20,
            n_test: 10,
            seed: 1,
            world_seed: 2,
        }
    }

    #[test]
    fn shapes_and_labels() {
        let (tr, te) = make_synthetic(&spec()).unwrap();
        assert_eq!(tr.len(), 80);
        assert_eq!(te.len(), 40);
        assert_eq!(tr.input_dim(), 8);
        assert_eq!(tr.classes(), vec![0, 1, 2, 3]);
        assert_eq!(tr.split, Split::Train);
    }

    #[test]
    fn deterministic() {
        let (a, _) = make_synthetic(&spec()).unwrap();
        let (b, _) = make_synthetic(&spec()).unwrap();
        assert_eq!(a.inputs.to_bits(), b.inputs.to_bits());
        let mut s = spec();
        s.seed = 9;
        let (c, _) = make_synthetic(&s).unwrap();
        assert_ne!(a.inputs.to_bits(), c.inputs.to_bits());
    }

    #[test]
    fn no_train_test_leakage() {
        let (tr, te) = make_synthetic(&spec()).unwrap();
        for i in 0..tr.len() {
            for j in 0..te.len() {
                assert_ne!(tr.inputs.row(i), te.inputs.row(j));
            }
        }
    }

    #[test]
    fn rejects_zero_counts() {
        let mut s = spec();
        s.n_test = 0;
        assert!(make_synthetic(&s).is_err());
    }
}
