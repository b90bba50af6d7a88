use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sweeps of the cyclic Jacobi method before giving up.
const MAX_SWEEPS: usize = 100;
/// Convergence threshold on the off-diagonal Frobenius norm, relative to
/// the norm of the whole matrix.
const JACOBI_TOL: f64 = 1e-10;
/// Eigenvalues below this fraction of the trace count as zero.
const RANK_TOL: f64 = 1e-10;

/// One cyclic pass of Jacobi rotations over every off-diagonal pair.
fn sweep(a: &mut [f64], v: &mut [f64], n: usize) {
    for p in 0..n {
        for q in p + 1..n {
            let apq = a[p * n + q];
            if apq == 0.0 {
                continue;
            }
            let tau = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
            let t = tau.signum() / (tau.abs() + tau.hypot(1.0));
            let c = 1.0 / t.hypot(1.0);
            let s = t * c;
            for k in 0..n {
                let (akp, akq) = (a[k * n + p], a[k * n + q]);
                a[k * n + p] = c * akp - s * akq;
                a[k * n + q] = s * akp + c * akq;
            }
            for k in 0..n {
                let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                a[p * n + k] = c * apk - s * aqk;
                a[q * n + k] = s * apk + c * aqk;
            }
            for k in 0..n {
                let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                v[k * n + p] = c * vkp - s * vkq;
                v[k * n + q] = s * vkp + c * vkq;
            }
        }
    }
}

/// Eigendecomposition of a symmetric `n x n` row-major matrix by cyclic
/// Jacobi rotations. Returns eigenvalues in descending order and the
/// matching unit eigenvectors as the columns of a row-major `n x n` matrix.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if matrix.len() != n * n {
        return Err(Error::Shape { op: "jacobi_eigen", expected: vec![n, n], got: vec![matrix.len()] });
    }
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += a[p * n + q] * a[p * n + q];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off(&a) > JACOBI_TOL * norm {
        if sweeps == MAX_SWEEPS {
            return Err(Error::Degenerate(format!("Jacobi did not converge in {MAX_SWEEPS} sweeps")));
        }
        sweeps += 1;
        sweep(&mut a, &mut v, n);
    }
    // Convergence is quadratic, so one more sweep takes the residual from
    // the threshold down to roundoff.
    if sweeps > 0 {
        sweep(&mut a, &mut v, n);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + col] = v[k * n + src];
        }
    }
    Ok((values, vectors))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Orthonormal principal axes, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Sample variances (divisor `M - 1`) along each component.
    pub eigenvalues: Vec<f64>,
}

fn check_rows(data: &[Vec<f64>]) -> Result<usize> {
    let d = data.first().ok_or(Error::Empty("PCA input"))?.len();
    if let Some(bad) = data.iter().find(|r| r.len() != d) {
        return Err(Error::Shape { op: "pca_fit", expected: vec![d], got: vec![bad.len()] });
    }
    Ok(d)
}

/// Column means and the `M x M` Gram matrix of the centred rows.
pub fn centered_gram(data: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
    let d = check_rows(data)?;
    let m = data.len();
    let mut mean = vec![0.0; d];
    for row in data {
        for (mu, x) in mean.iter_mut().zip(row) {
            *mu += x;
        }
    }
    mean.iter_mut().for_each(|mu| *mu /= m as f64);
    let centered: Vec<Vec<f64>> = data.iter().map(|r| r.iter().zip(&mean).map(|(x, mu)| x - mu).collect()).collect();
    let mut gram = vec![0.0; m * m];
    for i in 0..m {
        for j in i..m {
            let g: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            gram[i * m + j] = g;
            gram[j * m + i] = g;
        }
    }
    Ok((mean, centered, gram))
}

/// Principal components through the eigendecomposition of the Gram matrix
/// of centred rows, which is `M x M` instead of `D x D`.
pub fn pca_fit(data: &[Vec<f64>], n_components: usize) -> Result<PcaModel> {
    let d = check_rows(data)?;
    let m = data.len();
    if n_components == 0 || d < n_components || m <= n_components {
        return Err(Error::Degenerate(format!(
            "{n_components} components need more than {n_components} samples and at least {n_components} dimensions, got {m} x {d}"
        )));
    }
    let (mean, centered, gram) = centered_gram(data)?;
    let (values, vectors) = jacobi_eigen(&gram, m)?;
    let trace: f64 = (0..m).map(|i| gram[i * m + i]).sum();
    let positive = values.iter().take_while(|&&l| l > RANK_TOL * trace).count();
    if positive < n_components {
        return Err(Error::Degenerate(format!(
            "only {positive} non-zero principal directions, {n_components} requested"
        )));
    }

    let mut components = Vec::with_capacity(n_components);
    for (i, &lambda) in values.iter().take(n_components).enumerate() {
        let mut comp = vec![0.0; d];
        for (k, row) in centered.iter().enumerate() {
            let u = vectors[k * m + i];
            for (c, x) in comp.iter_mut().zip(row) {
                *c += u * x;
            }
        }
        let scale = lambda.sqrt();
        comp.iter_mut().for_each(|c| *c /= scale);
        let norm = comp.iter().map(|c| c * c).sum::<f64>().sqrt();
        let peak = comp.iter().copied().fold(0.0_f64, |best, c| if c.abs() > best.abs() { c } else { best });
        let sign = if peak < 0.0 { -1.0 } else { 1.0 };
        comp.iter_mut().for_each(|c| *c *= sign / norm);
        components.push(comp);
    }
    let eigenvalues = values.iter().take(n_components).map(|l| l / (m - 1) as f64).collect();
    Ok(PcaModel { mean, components, eigenvalues })
}

/// `components^T (v - mean)`.
pub fn pca_project(model: &PcaModel, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != model.mean.len() {
        return Err(Error::Shape { op: "pca_project", expected: vec![model.mean.len()], got: vec![v.len()] });
    }
    Ok(model
        .components
        .iter()
        .map(|c| c.iter().zip(v).zip(&model.mean).map(|((c, x), mu)| c * (x - mu)).sum())
        .collect())
}
