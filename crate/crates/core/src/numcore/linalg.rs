use super::tensor::Tensor;
use crate::error::{ensure, Error, Result};

/// Relative jitter levels tried by [`cholesky_jittered`], as multiples of
/// `tr(S)/d`.
pub const JITTER_SCHEDULE: [f64; 3] = [1e-10, 1e-8, 1e-6];

const SYMMETRY_TOL: f64 = 1e-9;

fn check_square_symmetric(s: &Tensor) -> Result<usize> {
    ensure!(
        s.is_matrix() && s.rows() == s.cols(),
        "expected a square matrix, got {:?}",
        s.shape()
    );
    let d = s.rows();
    for i in 0..d {
        for j in 0..i {
            let (a, b) = (s.get(i, j), s.get(j, i));
            ensure!(
                (a - b).abs() <= SYMMETRY_TOL * (1.0 + a.abs().max(b.abs())),
                "matrix not symmetric at ({i},{j}): {a} vs {b}"
            );
        }
    }
    Ok(d)
}

/// Lower-triangular `L` with `L·Lᵀ = S`.
pub fn cholesky(s: &Tensor) -> Result<Tensor> {
    let d = check_square_symmetric(s)?;
    let mut l = Tensor::zeros(&[d, d]);
    for j in 0..d {
        let mut diag = s.get(j, j);
        for k in 0..j {
            diag -= l.get(j, k) * l.get(j, k);
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite {
                pivot: j,
                value: diag,
            });
        }
        let ljj = diag.sqrt();
        l.set(j, j, ljj);
        for i in j + 1..d {
            let mut v = s.get(i, j);
            for k in 0..j {
                v -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, v / ljj);
        }
    }
    Ok(l)
}

/// Cholesky with escalating diagonal jitter `ε·tr(S)/d·I` for the
/// near-singular covariances that arise when a class has fewer samples than
/// feature dimensions. Returns the factor and the jitter actually added.
pub fn cholesky_jittered(s: &Tensor) -> Result<(Tensor, f64)> {
    let d = check_square_symmetric(s)?;
    let trace: f64 = (0..d).map(|i| s.get(i, i)).sum();
    let base = if trace > 0.0 { trace / d as f64 } else { 1.0 };
    let mut last_err = None;
    for eps in JITTER_SCHEDULE {
        let jitter = eps * base;
        let mut shifted = s.clone();
        for i in 0..d {
            let v = shifted.get(i, i) + jitter;
            shifted.set(i, i, v);
        }
        match cholesky(&shifted) {
            Ok(l) => return Ok((l, jitter)),
            Err(e @ Error::NotPositiveDefinite { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Numerical(format!(
        "covariance not positive definite after jitter schedule: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Eigenpairs of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// the rows of a `d×d` matrix.
pub fn symmetric_eigen(s: &Tensor, max_sweeps: usize, tol: f64) -> Result<(Vec<f64>, Tensor)> {
    let d = check_square_symmetric(s)?;
    let mut a: Vec<f64> = s.data().to_vec();
    // v holds eigenvectors as columns while iterating
    let mut v = Tensor::identity(d).into_data();
    let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);

    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    s += a[i * d + j] * a[i * d + j];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = off(&a) <= tol * scale;
    let mut sweep = 0;
    while !converged && sweep < max_sweeps {
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let (app, aqq) = (a[p * d + p], a[q * d + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..d {
                    let (akp, akq) = (a[k * d + p], a[k * d + q]);
                    a[k * d + p] = c * akp - sn * akq;
                    a[k * d + q] = sn * akp + c * akq;
                }
                for k in 0..d {
                    let (apk, aqk) = (a[p * d + k], a[q * d + k]);
                    a[p * d + k] = c * apk - sn * aqk;
                    a[q * d + k] = sn * apk + c * aqk;
                }
                for k in 0..d {
                    let (vkp, vkq) = (v[k * d + p], v[k * d + q]);
                    v[k * d + p] = c * vkp - sn * vkq;
                    v[k * d + q] = sn * vkp + c * vkq;
                }
            }
        }
        sweep += 1;
        converged = off(&a) <= tol * scale;
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi eigensolver did not converge in {max_sweeps} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[j * d + j].total_cmp(&a[i * d + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * d + i]).collect();
    let mut rows = Vec::with_capacity(d * d);
    for &i in &order {
        rows.extend((0..d).map(|k| v[k * d + i]));
    }
    Ok((values, Tensor::from_matrix(d, d, rows)?))
}

/// Top-`k` singular values and right singular vectors of `w` (`d₂×d₁`).
///
/// Computed from the eigendecomposition of `WᵀW`; the left factor is never
/// formed. Each returned row has its first non-negligible entry made
/// non-negative so results are reproducible.
pub fn svd_topk(w: &Tensor, k: usize) -> Result<(Vec<f64>, Tensor)> {
    ensure!(w.is_matrix(), "svd_topk expects a matrix");
    let (d2, d1) = (w.rows(), w.cols());
    ensure!(
        k >= 1 && k <= d1.min(d2),
        "rank {k} outside 1..={}",
        d1.min(d2)
    );
    let gram = w.transpose().matmul(w)?;
    let (values, vecs) = symmetric_eigen(&gram, 100 * d1, 1e-12)?;
    let sigma = values[..k].iter().map(|l| l.max(0.0).sqrt()).collect();
    let mut top = vecs.select_rows(&(0..k).collect::<Vec<_>>())?;
    for r in 0..k {
        canonicalize_sign(top.row_mut(r));
    }
    Ok((sigma, top))
}

fn canonicalize_sign(row: &mut [f64]) {
    let thresh = 1e-12 * row.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if let Some(first) = row.iter().find(|v| v.abs() > thresh) {
        if *first < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
}
