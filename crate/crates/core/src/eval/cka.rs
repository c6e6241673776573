//! Linear centered kernel alignment between two representations of the same
//! inputs.

use crate::error::{ensure, Error, Result};
use crate::numcore::Tensor;

fn center_columns(x: &Tensor) -> Tensor {
    let means = x.column_means();
    let mut out = x.clone();
    for i in 0..out.rows() {
        for (v, m) in out.row_mut(i).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    out
}

fn frob_sq(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v * v).sum()
}

/// `‖Ȳᵀ X̄‖²_F / (‖X̄ᵀ X̄‖_F · ‖Ȳᵀ Ȳ‖_F)` with column-centered `X̄`, `Ȳ`.
pub fn cka(x: &Tensor, y: &Tensor) -> Result<f64> {
    ensure!(x.is_matrix() && y.is_matrix(), "cka expects matrices");
    ensure!(
        x.rows() == y.rows(),
        "cka needs the same samples: {} vs {} rows",
        x.rows(),
        y.rows()
    );
    ensure!(x.rows() >= 2, "cka needs at least two samples");
    let xc = center_columns(x);
    let yc = center_columns(y);
    let xx = frob_sq(&xc.transpose().matmul(&xc)?).sqrt();
    let yy = frob_sq(&yc.transpose().matmul(&yc)?).sqrt();
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::DegenerateInput(
            "cka input has zero variance".to_string(),
        ));
    }
    let yx = frob_sq(&yc.transpose().matmul(&xc)?);
    Ok(yx / (xx * yy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn rand(n: usize, d: usize, seed: u64) -> Tensor {
        Tensor::from_matrix(n, d, Rng::seed_from(seed).normals(n * d)).unwrap()
    }

    #[test]
    fn self_similarity() {
        let x = rand(50, 4, 1);
        assert!((cka(&x, &x).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn scale_invariance() {
        let x = rand(50, 4, 2);
        assert!((cka(&x, &x.scale(-3.5)).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_variance_rejected() {
        let x = Tensor::from_matrix(3, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        let y = rand(3, 2, 3);
        assert!(matches!(cka(&x, &y), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn row_mismatch_rejected() {
        assert!(cka(&rand(4, 2, 0), &rand(5, 2, 0)).is_err());
    }
}
