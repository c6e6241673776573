use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::csv_io::{load_csv, write_csv};
use super::dataset::{Dataset, Split};
use crate::error::{ensure, Error, Result};
use crate::numcore::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    ClassIncremental,
    DomainIncremental,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub train: Dataset,
    pub test: Dataset,
    /// Sorted class ids of this task.
    pub classes: Vec<usize>,
    pub domain: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub scenario: Scenario,
    pub tasks: Vec<Task>,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// All class ids across tasks, sorted.
    pub fn all_classes(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.tasks.iter().flat_map(|t| t.classes.iter().copied()).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Checks the scenario's structural invariants.
    pub fn audit(&self) -> Result<()> {
        ensure!(!self.tasks.is_empty(), "stream has no tasks");
        for (i, t) in self.tasks.iter().enumerate() {
            ensure!(!t.train.is_empty() && !t.test.is_empty(), "task {i} has an empty split");
            ensure!(
                t.train.input_dim() == self.tasks[0].train.input_dim()
                    && t.test.input_dim() == t.train.input_dim(),
                "task {i} input width differs"
            );
            for ds in [&t.train, &t.test] {
                ensure!(
                    ds.labels.iter().all(|l| t.classes.binary_search(l).is_ok()),
                    "task {i} has labels outside its class set"
                );
            }
        }
        match self.scenario {
            Scenario::ClassIncremental => {
                let total: usize = self.tasks.iter().map(|t| t.classes.len()).sum();
                ensure!(
                    total == self.all_classes().len(),
                    "class-incremental tasks must have disjoint class sets"
                );
            }
            Scenario::DomainIncremental => {
                let first = &self.tasks[0].classes;
                ensure!(
                    self.tasks.iter().all(|t| &t.classes == first),
                    "domain-incremental tasks must share one class set"
                );
            }
        }
        Ok(())
    }
}

/// Randomly partitions the classes into `num_tasks` disjoint tasks. When the
/// class count is not divisible, the earliest tasks take one extra class.
pub fn split_class_incremental(train: &Dataset, test: &Dataset, num_tasks: usize, seed: RngState) -> Result<TaskStream> {
    let classes = train.classes();
    ensure!(num_tasks >= 1, "need at least one task");
    ensure!(
        num_tasks <= classes.len(),
        "{num_tasks} tasks but only {} classes",
        classes.len()
    );
    let mut order = classes.clone();
    seed.generator().shuffle(&mut order);

    let base = classes.len() / num_tasks;
    let extra = classes.len() % num_tasks;
    let mut tasks = Vec::with_capacity(num_tasks);
    let mut start = 0;
    for t in 0..num_tasks {
        let size = base + usize::from(t < extra);
        let mut cs = order[start..start + size].to_vec();
        cs.sort_unstable();
        start += size;
        let tr = train
            .filter_classes(&cs)
            .ok_or_else(|| Error::contract(format!("task {t} has no training samples")))?;
        let te = test
            .filter_classes(&cs)
            .ok_or_else(|| Error::contract(format!("task {t} has no test samples")))?;
        tasks.push(Task {
            train: tr,
            test: te,
            classes: cs,
            domain: None,
        });
    }
    let stream = TaskStream {
        scenario: Scenario::ClassIncremental,
        tasks,
    };
    stream.audit()?;
    Ok(stream)
}

/// One task per domain, in the given order.
pub fn split_domain_incremental(domains: Vec<(Dataset, Dataset)>) -> Result<TaskStream> {
    ensure!(!domains.is_empty(), "need at least one domain");
    let universe = domains[0].0.classes();
    let mut tasks = Vec::with_capacity(domains.len());
    for (i, (train, test)) in domains.into_iter().enumerate() {
        ensure!(
            train.classes() == universe,
            "domain {i} class set differs from the first domain"
        );
        ensure!(
            test.labels.iter().all(|l| universe.binary_search(l).is_ok()),
            "domain {i} test labels outside the class universe"
        );
        tasks.push(Task {
            train,
            test,
            classes: universe.clone(),
            domain: Some(i),
        });
    }
    let stream = TaskStream {
        scenario: Scenario::DomainIncremental,
        tasks,
    };
    stream.audit()?;
    Ok(stream)
}

/// On-disk description of a stream: task order, class sets and the CSV
/// files holding each split. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamManifest {
    pub scenario: Scenario,
    pub tasks: Vec<ManifestTask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestTask {
    pub train: PathBuf,
    pub test: PathBuf,
    pub classes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<usize>,
}

impl StreamManifest {
    pub fn load(path: &Path) -> Result<TaskStream> {
        let m: StreamManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut tasks = Vec::with_capacity(m.tasks.len());
        for mt in m.tasks {
            let mut classes = mt.classes.clone();
            classes.sort_unstable();
            tasks.push(Task {
                train: load_csv(&dir.join(&mt.train), Split::Train)?,
                test: load_csv(&dir.join(&mt.test), Split::Test)?,
                classes,
                domain: mt.domain,
            });
        }
        let stream = TaskStream {
            scenario: m.scenario,
            tasks,
        };
        stream.audit()?;
        Ok(stream)
    }

    /// Writes every split as CSV under `dir` plus `stream.json`; returns the
    /// manifest path.
    pub fn write(stream: &TaskStream, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let mut tasks = Vec::new();
        for (i, t) in stream.tasks.iter().enumerate() {
            let train = PathBuf::from(format!("task{i:02}_train.csv"));
            let test = PathBuf::from(format!("task{i:02}_test.csv"));
            write_csv(&t.train, &dir.join(&train))?;
            write_csv(&t.test, &dir.join(&test))?;
            tasks.push(ManifestTask {
                train,
                test,
                classes: t.classes.clone(),
                domain: t.domain,
            });
        }
        let manifest = StreamManifest {
            scenario: stream.scenario,
            tasks,
        };
        let path = dir.join("stream.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticSpec};

    fn data(classes: usize) -> (Dataset, Dataset) {
        make_synthetic(&SyntheticSpec {
            classes,
            d_in: 4,
            latent_dim: 3,
            clusters_per_class: 1,
            separation: 2.0,
            cluster_spread: 0.3,
            mean_shift: 0.0,
            input_noise: 0.05,
            n_train: 5,
            n_test: 3,
            seed: 0,
            world_seed: 0,
        })
        .unwrap()
    }

    #[test]
    fn hundred_classes_ten_tasks() {
        let (tr, te) = data(100);
        let s = split_class_incremental(&tr, &te, 10, RngState::new(1)).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.tasks.iter().all(|t| t.classes.len() == 10));
        assert_eq!(s.all_classes().len(), 100);
        s.audit().unwrap();
    }

    #[test]
    fn remainder_goes_to_early_tasks() {
        let (tr, te) = data(7);
        let s = split_class_incremental(&tr, &te, 3, RngState::new(1)).unwrap();
        let sizes: Vec<usize> = s.tasks.iter().map(|t| t.classes.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
    }

    #[test]
    fn single_task_and_too_many() {
        let (tr, te) = data(4);
        let s = split_class_incremental(&tr, &te, 1, RngState::new(0)).unwrap();
        assert_eq!(s.tasks[0].classes, vec![0, 1, 2, 3]);
        assert!(split_class_incremental(&tr, &te, 5, RngState::new(0)).is_err());
    }

    #[test]
    fn same_seed_same_partition() {
        let (tr, te) = data(20);
        let a = split_class_incremental(&tr, &te, 5, RngState::new(3)).unwrap();
        let b = split_class_incremental(&tr, &te, 5, RngState::new(3)).unwrap();
        let c = split_class_incremental(&tr, &te, 5, RngState::new(4)).unwrap();
        let classes = |s: &TaskStream| s.tasks.iter().map(|t| t.classes.clone()).collect::<Vec<_>>();
        assert_eq!(classes(&a), classes(&b));
        assert_ne!(classes(&a), classes(&c));
    }

    #[test]
    fn domains() {
        let doms: Vec<_> = (0..6).map(|_| data(3)).collect();
        let s = split_domain_incremental(doms).unwrap();
        assert_eq!(s.len(), 6);
        assert!(s.tasks.iter().all(|t| t.classes == vec![0, 1, 2]));
        let mismatched = vec![data(3), data(4)];
        assert!(split_domain_incremental(mismatched).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let (tr, te) = data(6);
        let s = split_class_incremental(&tr, &te, 3, RngState::new(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = StreamManifest::write(&s, dir.path()).unwrap();
        let back = StreamManifest::load(&path).unwrap();
        assert_eq!(back, s);
    }
}
