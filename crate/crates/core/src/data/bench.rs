//! Ready-made synthetic continual-learning benchmarks: a pre-training set
//! and a class-incremental stream drawn from one shared world.

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::stream::{split_class_incremental, TaskStream};
use super::synthetic::{make_synthetic, SyntheticSpec};
use crate::error::{ensure, Result};
use crate::numcore::RngState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub d_in: usize,
    pub latent_dim: usize,
    pub classes: usize,
    pub tasks: usize,
    pub clusters_per_class: usize,
    pub separation: f64,
    pub cluster_spread: f64,
    pub input_noise: f64,
    /// Samples per class.
    pub n_train: usize,
    pub n_test: usize,
    pub pretrain_classes: usize,
    pub pretrain_separation: f64,
    pub pretrain_mean_shift: f64,
    pub pretrain_n_train: usize,
    pub world_seed: u64,
}

impl BenchmarkSpec {
    /// Ten two-class tasks with well separated classes.
    pub fn coarse() -> Self {
        Self {
            d_in: 32,
            latent_dim: 8,
            classes: 20,
            tasks: 10,
            clusters_per_class: 2,
            separation: 1.5,
            cluster_spread: 0.3,
            input_noise: 0.05,
            n_train: 100,
            n_test: 50,
            pretrain_classes: 40,
            pretrain_separation: 1.5,
            pretrain_mean_shift: 0.0,
            pretrain_n_train: 60,
            world_seed: 2024,
        }
    }

    /// Same layout with closely spaced classes and a pre-training
    /// distribution drawn around a shifted mean field.
    pub fn fine() -> Self {
        Self {
            separation: 0.8,
            pretrain_mean_shift: 1.0,
            ..Self::coarse()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.tasks >= 1, "tasks must be >= 1");
        ensure!(self.classes >= self.tasks, "fewer classes than tasks");
        ensure!(self.pretrain_classes >= 2, "pre-training needs at least two classes");
        ensure!(self.pretrain_n_train >= 1, "pretrain_n_train must be >= 1");
        Ok(())
    }

    fn downstream(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes,
            d_in: self.d_in,
            latent_dim: self.latent_dim,
            clusters_per_class: self.clusters_per_class,
            separation: self.separation,
            cluster_spread: self.cluster_spread,
            mean_shift: 0.0,
            input_noise: self.input_noise,
            n_train: self.n_train,
            n_test: self.n_test,
            seed,
            world_seed: self.world_seed,
        }
    }

    fn pretrain(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.pretrain_classes,
            separation: self.pretrain_separation,
            mean_shift: self.pretrain_mean_shift,
            n_train: self.pretrain_n_train,
            n_test: self.n_test,
            ..self.downstream(seed)
        }
    }

    /// Materializes the benchmark for one seed.
    pub fn build(&self, seed: u64) -> Result<Benchmark> {
        self.validate()?;
        let root = RngState::new(seed);
        let pt_seed = root.derive("pretrain-data").generator().next_u64();
        let ds_seed = root.derive("downstream-data").generator().next_u64();
        let (pretrain_train, pretrain_test) = make_synthetic(&self.pretrain(pt_seed))?;
        let (train, test) = make_synthetic(&self.downstream(ds_seed))?;
        let stream = split_class_incremental(&train, &test, self.tasks, root.derive("class-order"))?;
        Ok(Benchmark {
            pretrain_train,
            pretrain_test,
            train,
            test,
            stream,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub pretrain_train: Dataset,
    pub pretrain_test: Dataset,
    /// Every downstream class, for joint references such as linear probes.
    pub train: Dataset,
    pub test: Dataset,
    pub stream: TaskStream,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let b = BenchmarkSpec::coarse().build(0).unwrap();
        assert_eq!(b.stream.len(), 10);
        assert!(b.stream.tasks.iter().all(|t| t.classes.len() == 2));
        assert_eq!(b.train.len(), 2000);
        assert_eq!(b.pretrain_train.classes().len(), 40);
    }
}
