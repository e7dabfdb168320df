//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EigenError {
    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("Jacobi sweeps did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("matrix buffer of length {0} is not square")]
    NotSquare(usize),
}

const MAX_SWEEPS: usize = 100;

/// Eigenvalues ascending; `vectors` holds the matching eigenvectors as
/// columns of a row-major `n x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    pub n: usize,
    pub values: Vec<f64>,
    pub vectors: Vec<f64>,
}

impl SymEigen {
    pub fn vector(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.vectors[i * self.n + j]).collect()
    }
}

/// Decomposes the row-major symmetric matrix `a` (`n x n`).
pub fn sym_eigen(a: &[f64], n: usize) -> Result<SymEigen, EigenError> {
    if a.len() != n * n {
        return Err(EigenError::NotSquare(a.len()));
    }
    for i in 0..n {
        for j in i + 1..n {
            let gap = (a[i * n + j] - a[j * n + i]).abs();
            if gap > 1e-9 || gap.is_nan() {
                return Err(EigenError::NotSymmetric {
                    row: i,
                    col: j,
                    gap,
                });
            }
        }
    }

    let mut m = a.to_vec();
    // symmetrize exactly so rotations act on a truly symmetric matrix
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = v;
            m[j * n + i] = v;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let frob: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = 1e-13 * frob;
    let mut converged = n < 2 || frob == 0.0;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(EigenError::NoConvergence(MAX_SWEEPS));
        }
        sweeps += 1;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, n, p, q, c, s);
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        converged = off <= target;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + col] = v[r * n + src];
        }
    }
    Ok(SymEigen { n, values, vectors })
}

/// `m <- J^T m J` for the rotation in the `(p, q)` plane.
fn rotate(m: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..n {
        let mkp = m[k * n + p];
        let mkq = m[k * n + q];
        m[k * n + p] = c * mkp - s * mkq;
        m[k * n + q] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let mpk = m[p * n + k];
        let mqk = m[q * n + k];
        m[p * n + k] = c * mpk - s * mqk;
        m[q * n + k] = s * mpk + c * mqk;
    }
    m[p * n + q] = 0.0;
    m[q * n + p] = 0.0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.random_range(-1.0..1.0);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        a
    }

    #[test]
    fn identity_and_diagonal() {
        let e = sym_eigen(&[1.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0]);

        let e = sym_eigen(&[3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0], 3).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(e.vector(0), vec![0.0, 1.0, 0.0]);
        assert_eq!(e.vector(1), vec![0.0, 0.0, 1.0]);
        assert_eq!(e.vector(2), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn two_by_two_closed_form() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let e = sym_eigen(&[2.0, 1.0, 1.0, 2.0], 2).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_asymmetric() {
        assert!(matches!(
            sym_eigen(&[1.0, 2.0, 0.0, 1.0], 2),
            Err(EigenError::NotSymmetric { row: 0, col: 1, .. })
        ));
        assert_eq!(sym_eigen(&[1.0; 3], 2), Err(EigenError::NotSquare(3)));
    }

    #[test]
    fn residual_and_orthonormality() {
        let n = 30;
        let a = random_symmetric(n, 42);
        let e = sym_eigen(&a, n).unwrap();
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        for j in 0..n {
            let v = e.vector(j);
            let res: f64 = (0..n)
                .map(|i| {
                    let av: f64 = (0..n).map(|k| a[i * n + k] * v[k]).sum();
                    (av - e.values[j] * v[i]).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            assert!(res <= 1e-8 * norm);
            for k in 0..n {
                let dot: f64 = (0..n).map(|i| v[i] * e.vectors[i * n + k]).sum();
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8);
            }
        }
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        // trace is preserved
        let tr: f64 = (0..n).map(|i| a[i * n + i]).sum();
        assert!((tr - e.values.iter().sum::<f64>()).abs() < 1e-10);
    }
}
