//! Minimal dense linear algebra for the simulation lab.
//!
//! Only a Cholesky factorization is needed, and it has to tolerate positive
//! *semi*-definite inputs: comonotone scenarios use exactly singular
//! correlation matrices (equicorrelation with rho = 1), which strict
//! factorizations reject.

use crate::{Error, Result};

/// Lower-triangular `L` with `A = L L^T`, stored row-major.
///
/// Pivots within `-tol .. tol` of zero (relative to the largest diagonal
/// entry) are clamped to zero so that semi-definite matrices factor; a pivot
/// below `-tol` means the matrix is not PSD and is an error, as is an
/// asymmetric input.
pub fn psd_cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    if n == 0 || a.iter().any(|row| row.len() != n) {
        return Err(Error::Input("covariance matrix must be square and non-empty".into()));
    }
    let mut scale = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if !a[i][j].is_finite() {
                return Err(Error::Input(format!("non-finite matrix entry at ({i}, {j})")));
            }
            if (a[i][j] - a[j][i]).abs() > 1e-9 * a[i][i].abs().max(a[j][j].abs()).max(1.0) {
                return Err(Error::Input(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
        scale = scale.max(a[i][i].abs());
    }
    let tol = 1e-9 * scale.max(1.0);

    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut d = a[j][j];
        d -= l[j][..j].iter().map(|v| v * v).sum::<f64>();
        if d < -tol {
            return Err(Error::Parameter(format!(
                "matrix is not positive semi-definite (pivot {d} at {j})"
            )));
        }
        if d <= tol {
            // Degenerate direction: the whole column is determined by the
            // previous ones, so leave it at zero.
            continue;
        }
        let root = d.sqrt();
        l[j][j] = root;
        for i in (j + 1)..n {
            let dot: f64 = l[i][..j].iter().zip(&l[j][..j]).map(|(x, y)| x * y).sum();
            l[i][j] = (a[i][j] - dot) / root;
        }
    }
    Ok(l)
}

/// `L z` for a lower-triangular `L` and vector `z`.
pub fn lower_mul(l: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    l.iter()
        .map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(l: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = l.len();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (0..n).map(|k| l[i][k] * l[j][k]).sum();
            }
        }
        a
    }

    fn equicorrelation(n: usize, rho: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { rho }).collect())
            .collect()
    }

    #[test]
    fn factors_positive_definite() {
        let a = equicorrelation(3, 0.4);
        let l = psd_cholesky(&a).unwrap();
        let back = reconstruct(&l);
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[i][j] - a[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn factors_exactly_singular() {
        // rho = 1 is comonotone: rank one, every strict factorization fails.
        let a = equicorrelation(4, 1.0);
        let l = psd_cholesky(&a).unwrap();
        let back = reconstruct(&l);
        for (i, row) in back.iter().enumerate() {
            for (j, &entry) in row.iter().enumerate() {
                assert!((entry - 1.0).abs() < 1e-12, "({i},{j}) = {entry}");
            }
        }
    }

    #[test]
    fn rejects_indefinite_and_malformed() {
        // Equicorrelation is PSD only for rho >= -1/(n-1).
        assert!(matches!(
            psd_cholesky(&equicorrelation(3, -0.9)),
            Err(Error::Parameter(_))
        ));
        let asym = vec![vec![1.0, 0.5], vec![0.2, 1.0]];
        assert!(matches!(psd_cholesky(&asym), Err(Error::Input(_))));
        let ragged = vec![vec![1.0, 0.0], vec![0.0]];
        assert!(matches!(psd_cholesky(&ragged), Err(Error::Input(_))));
    }

    #[test]
    fn lower_mul_applies_the_factor() {
        let l = vec![vec![2.0, 0.0], vec![1.0, 3.0]];
        assert_eq!(lower_mul(&l, &[1.0, 1.0]), vec![2.0, 4.0]);
    }
}
