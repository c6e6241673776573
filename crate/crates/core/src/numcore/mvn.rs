use serde::{Deserialize, Serialize};

use super::linalg::cholesky_jittered;
use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{ensure, Result};

/// Covariance payload accepted by [`sample_mvn`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CovarianceRepr {
    /// Dense `d×d` covariance.
    Full(Tensor),
    /// Per-coordinate variances.
    Diagonal(Vec<f64>),
}

impl CovarianceRepr {
    pub fn dim(&self) -> usize {
        match self {
            CovarianceRepr::Full(s) => s.rows(),
            CovarianceRepr::Diagonal(v) => v.len(),
        }
    }
}

/// Pre-factored covariance, so repeated sampling from one class pays for the
/// Cholesky factor once.
#[derive(Debug, Clone)]
pub enum CovFactor {
    Lower(Tensor),
    StdDev(Vec<f64>),
}

impl CovFactor {
    pub fn new(cov: &CovarianceRepr) -> Result<Self> {
        match cov {
            CovarianceRepr::Full(s) => Ok(CovFactor::Lower(cholesky_jittered(s)?.0)),
            CovarianceRepr::Diagonal(v) => {
                ensure!(
                    v.iter().all(|x| *x >= 0.0),
                    "diagonal covariance has a negative variance"
                );
                Ok(CovFactor::StdDev(v.iter().map(|x| x.sqrt()).collect()))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CovFactor::Lower(l) => l.rows(),
            CovFactor::StdDev(s) => s.len(),
        }
    }

    /// Draws `n` rows of `mu + L·z`, one standard-normal `z` per row.
    pub fn sample(&self, mu: &[f64], n: usize, rng: &mut Rng) -> Result<Tensor> {
        let d = self.dim();
        ensure!(mu.len() == d, "mean has {} entries, covariance is {d}-d", mu.len());
        ensure!(n >= 1, "sample count must be positive");
        let mut out = Vec::with_capacity(n * d);
        let mut z = vec![0.0; d];
        for _ in 0..n {
            z.iter_mut().for_each(|v| *v = rng.normal());
            match self {
                CovFactor::Lower(l) => {
                    for i in 0..d {
                        let row = &l.row(i)[..=i];
                        let dot: f64 = row.iter().zip(&z).map(|(a, b)| a * b).sum();
                        out.push(mu[i] + dot);
                    }
                }
                CovFactor::StdDev(s) => {
                    out.extend(mu.iter().zip(s).zip(&z).map(|((m, s), z)| m + s * z));
                }
            }
        }
        Tensor::from_matrix(n, d, out)
    }
}

/// `n` draws from `N(mu, cov)` as an `n×d` matrix. Full covariances are
/// factored with the jitter schedule of
/// [`cholesky_jittered`](super::linalg::cholesky_jittered).
pub fn sample_mvn(mu: &[f64], cov: &CovarianceRepr, n: usize, rng: &mut Rng) -> Result<Tensor> {
    CovFactor::new(cov)?.sample(mu, n, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_diagonal_returns_mean() {
        let mut rng = Rng::seed_from(0);
        let s = sample_mvn(&[1.5, -2.0], &CovarianceRepr::Diagonal(vec![0.0, 0.0]), 10, &mut rng)
            .unwrap();
        for i in 0..10 {
            assert_eq!(s.row(i), &[1.5, -2.0]);
        }
    }

    #[test]
    fn zero_full_covariance_gets_tiny_spread() {
        let mut rng = Rng::seed_from(0);
        let cov = CovarianceRepr::Full(Tensor::zeros(&[2, 2]));
        let s = sample_mvn(&[1.0, 1.0], &cov, 50, &mut rng).unwrap();
        assert!(s.data().iter().all(|v| (v - 1.0).abs() < 1e-3));
    }

    #[test]
    fn deterministic_for_equal_state() {
        let cov = CovarianceRepr::Full(Tensor::identity(3));
        let a = sample_mvn(&[0.0; 3], &cov, 20, &mut Rng::seed_from(4)).unwrap();
        let b = sample_mvn(&[0.0; 3], &cov, 20, &mut Rng::seed_from(4)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let cov = CovarianceRepr::Diagonal(vec![1.0; 3]);
        assert!(sample_mvn(&[0.0; 2], &cov, 1, &mut Rng::seed_from(0)).is_err());
    }
}
