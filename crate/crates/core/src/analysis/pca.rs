//! Principal components via cyclic Jacobi rotations.

use super::{EmbeddingSet, Projection2D, ProjectionMethod};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const JACOBI_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric `n×n` row-major matrix. Returns
/// eigenvalues in descending order and the matching unit eigenvectors as
/// rows.
pub fn jacobi_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if a.len() != n * n {
        return Err(Error::shape("jacobi_eigen", &[a.len()], &[n, n]));
    }
    let mut m = a.to_vec();
    // v holds eigenvectors as columns.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..JACOBI_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    Ok((values, vectors))
}

/// Mean-centred projection onto the top two covariance eigenvectors. Each
/// axis is signed so its largest-magnitude loading is positive.
pub fn pca_project(set: &EmbeddingSet) -> Result<Projection2D> {
    let (n, m) = (set.len(), set.dim());
    if n < 2 || m < 2 {
        return Err(Error::Data(format!("PCA needs n >= 2 and m >= 2, got n={n}, m={m}")));
    }
    let mut mean = vec![0.0; m];
    for i in 0..n {
        for (acc, x) in mean.iter_mut().zip(set.row(i)) {
            *acc += x;
        }
    }
    mean.iter_mut().for_each(|x| *x /= n as f64);
    let centred: Vec<Vec<f64>> = (0..n)
        .map(|i| set.row(i).iter().zip(&mean).map(|(x, mu)| x - mu).collect())
        .collect();
    let mut cov = vec![0.0; m * m];
    for row in &centred {
        for a in 0..m {
            for b in a..m {
                cov[a * m + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..m {
        for b in a..m {
            cov[a * m + b] /= (n - 1) as f64;
            cov[b * m + a] = cov[a * m + b];
        }
    }
    let total_variance: f64 = (0..m).map(|a| cov[a * m + a]).sum();
    if !(total_variance > 0.0) {
        return Err(Error::Data("PCA input has zero variance".into()));
    }
    let (values, mut vectors) = jacobi_eigen(&cov, m)?;
    for axis in vectors.iter_mut().take(2) {
        let lead = axis
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if lead < 0.0 {
            axis.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let mut points = Vec::with_capacity(2 * n);
    for row in &centred {
        for axis in &vectors[..2] {
            points.push(row.iter().zip(axis).map(|(x, w)| x * w).sum());
        }
    }
    Ok(Projection2D {
        points: Tensor::new(&[n, 2], points)?,
        method: ProjectionMethod::Pca {
            eigenvalues: [values[0].max(0.0), values[1].max(0.0)],
            total_variance,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Domain;

    fn set(rows: &[&[f64]]) -> EmbeddingSet {
        let m = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        EmbeddingSet::new(
            Tensor::new(&[rows.len(), m], data).unwrap(),
            vec![Domain::Source; rows.len()],
            vec![None; rows.len()],
        )
        .unwrap()
    }

    #[test]
    fn points_on_a_line() {
        let ts = [-2.0, -0.5, 0.0, 1.0, 1.5];
        let rows: Vec<Vec<f64>> = ts.iter().map(|&t| vec![t, 0.0, 0.0]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let p = pca_project(&set(&refs)).unwrap();
        let mean = ts.iter().sum::<f64>() / ts.len() as f64;
        for (i, t) in ts.iter().enumerate() {
            let (x, y) = p.xy(i);
            assert!((x - (t - mean)).abs() < 1e-12, "{x} vs {t}");
            assert!(y.abs() < 1e-9);
        }
    }

    #[test]
    fn isotropic_cross_is_a_rotation() {
        let s = set(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]);
        let p = pca_project(&s).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let (a, b) = (s.row(i), s.row(j));
                let d0 = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                let (pi, pj) = (p.xy(i), p.xy(j));
                let d1 = ((pi.0 - pj.0).powi(2) + (pi.1 - pj.1).powi(2)).sqrt();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let s = set(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        assert!(matches!(pca_project(&s), Err(Error::Data(_))));
    }

    #[test]
    fn jacobi_diagonalises() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0];
        let (vals, vecs) = jacobi_eigen(&a, 3).unwrap();
        for (l, v) in vals.iter().zip(&vecs) {
            for r in 0..3 {
                let av: f64 = (0..3).map(|c| a[r * 3 + c] * v[c]).sum();
                assert!((av - l * v[r]).abs() < 1e-12);
            }
        }
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
    }
}
