//! Cyclic Jacobi eigensolver for small dense symmetric matrices.

use crate::error::{Error, Result};
use crate::graph::matrix::Matrix;

pub const MAX_SWEEPS: usize = 100;
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Eigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, in the order of `values`.
    pub vectors: Matrix,
    pub sweeps: usize,
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Eigendecomposition `M = U diag(Λ) Uᵀ` with ascending `Λ`. Each column of
/// `U` is sign-normalized so its largest-magnitude entry is positive (the
/// first such entry on exact ties).
pub fn symmetric_eigh(m: &Matrix) -> Result<Eigen> {
    if !m.is_square() {
        return Err(Error::Contract(format!("eigensolver needs a square matrix, got {}x{}", m.rows(), m.cols())));
    }
    let asym = m.asymmetry();
    if !(asym < SYMMETRY_TOL) {
        return Err(Error::Contract(format!("matrix is not symmetric (max |M - Mᵀ| = {asym:e})")));
    }
    let n = m.rows();
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&a);
        if off < OFF_DIAGONAL_TOL {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps, residual: off });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let arp = a[(r, p)];
                        let arq = a[(r, q)];
                        let new_rp = c * arp - s * arq;
                        let new_rq = s * arp + c * arq;
                        a[(r, p)] = new_rp;
                        a[(p, r)] = new_rp;
                        a[(r, q)] = new_rq;
                        a[(q, r)] = new_rq;
                    }
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = c * vrp - s * vrq;
                    v[(r, q)] = s * vrp + c * vrq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src);
        canonicalize_sign(&mut col);
        for (r, x) in col.into_iter().enumerate() {
            vectors[(r, dst)] = x;
        }
    }
    Ok(Eigen { values, vectors, sweeps })
}

fn canonicalize_sign(col: &mut [f64]) {
    let mut best = 0;
    for (i, x) in col.iter().enumerate() {
        if x.abs() > col[best].abs() {
            best = i;
        }
    }
    if col.get(best).is_some_and(|x| *x < 0.0) {
        col.iter_mut().for_each(|x| *x = -*x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reconstruct(e: &Eigen) -> Matrix {
        e.vectors.matmul(&Matrix::diag(&e.values)).matmul(&e.vectors.transpose())
    }

    #[test]
    fn diagonal_input() {
        let e = symmetric_eigh(&Matrix::diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(e.vectors.column(0), vec![0.0, 1.0, 0.0]);
        assert_eq!(e.vectors.column(1), vec![0.0, 0.0, 1.0]);
        assert_eq!(e.vectors.column(2), vec![1.0, 0.0, 0.0]);
        assert_eq!(e.sweeps, 0);
    }

    #[test]
    fn two_by_two_laplacian() {
        let e = symmetric_eigh(&Matrix::from_rows(&[&[1.0, -1.0], &[-1.0, 1.0]])).unwrap();
        assert!(e.values[0].abs() < 1e-14);
        assert!((e.values[1] - 2.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let u0 = e.vectors.column(0);
        let u1 = e.vectors.column(1);
        assert!((u0[0] - h).abs() < 1e-14 && (u0[1] - h).abs() < 1e-14);
        assert!((u1[0].abs() - h).abs() < 1e-14 && (u1[0] + u1[1]).abs() < 1e-14);
    }

    #[test]
    fn random_symmetric_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let mut m = Matrix::zeros(6, 6);
            for i in 0..6 {
                for j in 0..=i {
                    let x = rng.random_range(-3.0..3.0);
                    m[(i, j)] = x;
                    m[(j, i)] = x;
                }
            }
            let e = symmetric_eigh(&m).unwrap();
            assert!(reconstruct(&e).max_abs_diff(&m) < 1e-10);
            let gram = e.vectors.transpose().matmul(&e.vectors);
            assert!(gram.max_abs_diff(&Matrix::identity(6)) < 1e-12);
            assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn sign_convention_and_errors() {
        let e = symmetric_eigh(&Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        for j in 0..2 {
            let col = e.vectors.column(j);
            let big = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big > 0.0);
        }
        let skew = Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert!(matches!(symmetric_eigh(&skew), Err(Error::Contract(_))));
        assert!(matches!(symmetric_eigh(&Matrix::zeros(2, 3)), Err(Error::Contract(_))));
    }
}
