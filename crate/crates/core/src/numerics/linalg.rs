//! Small dense factorizations: Cholesky for symmetric positive-definite
//! systems and cyclic Jacobi for symmetric eigenproblems.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Clone, Debug)]
pub struct Cholesky<T: Scalar> {
    lower: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn factor(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape {
                op: "cholesky",
                lhs: a.shape(),
                rhs: a.shape(),
            });
        }
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)];
            for k in 0..j {
                diag = diag - l[(j, k)] * l[(j, k)];
            }
            if !(diag > T::zero()) {
                return Err(Error::Rank(format!("non-positive pivot at column {j}")));
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    pub fn solve_vec(&self, b: &[T]) -> Vec<T> {
        let n = self.lower.rows();
        assert_eq!(b.len(), n, "cholesky solve: length mismatch");
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s = s - l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    pub fn solve(&self, b: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let x = self.solve_vec(&b.column(j));
            for (i, v) in x.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    pub fn inverse(&self) -> Matrix<T> {
        self.solve(&Matrix::identity(self.lower.rows()))
    }
}

/// Inverse of a symmetric positive-definite matrix with its 2-norm
/// condition number.
#[derive(Clone, Debug)]
pub struct SpdInverse<T: Scalar> {
    pub inverse: Matrix<T>,
    pub condition: T,
}

pub fn spd_inverse<T: Scalar>(a: &Matrix<T>) -> Result<SpdInverse<T>> {
    let inverse = Cholesky::factor(a)?.inverse();
    let eig = symmetric_eigen(a)?;
    let (lo, hi) = eig
        .values
        .iter()
        .fold((T::infinity(), T::zero()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(SpdInverse {
        inverse,
        condition: hi / lo,
    })
}

/// Eigen-decomposition of a symmetric matrix. `vectors` holds the
/// eigenvectors as columns, in the same order as `values` (ascending).
#[derive(Clone, Debug)]
pub struct SymmetricEigen<T: Scalar> {
    pub values: Vec<T>,
    pub vectors: Matrix<T>,
}

pub fn symmetric_eigen<T: Scalar>(a: &Matrix<T>) -> Result<SymmetricEigen<T>> {
    if !a.is_square() {
        return Err(Error::Shape {
            op: "symmetric_eigen",
            lhs: a.shape(),
            rhs: a.shape(),
        });
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm().max(T::min_positive_value());
    let tol = T::epsilon() * scale * T::of_f64(1e-2);

    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in i + 1..n {
                off = off + m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let two = T::of_f64(2.0);
                let theta = (m[(q, q)] - m[(p, p)]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).expect("finite eigenvalues"));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymmetricEigen { values, vectors })
}

/// Numerical rank of `a` by Gaussian elimination with complete pivoting,
/// counting pivots above `rel_tol` times the largest entry.
pub fn numerical_rank<T: Scalar>(a: &Matrix<T>, rel_tol: T) -> Result<usize> {
    let mut m = a.clone();
    let (rows, cols) = m.shape();
    let top = m.max_abs();
    if top == T::zero() {
        return Ok(0);
    }
    let tol = rel_tol * top;
    let mut rank = 0;
    for step in 0..rows.min(cols) {
        let mut best = (step, step, T::zero());
        for i in step..rows {
            for j in step..cols {
                if m[(i, j)].abs() > best.2 {
                    best = (i, j, m[(i, j)].abs());
                }
            }
        }
        if best.2 <= tol {
            break;
        }
        let (pi, pj, _) = best;
        for j in 0..cols {
            let t = m[(step, j)];
            m[(step, j)] = m[(pi, j)];
            m[(pi, j)] = t;
        }
        for i in 0..rows {
            let t = m[(i, step)];
            m[(i, step)] = m[(i, pj)];
            m[(i, pj)] = t;
        }
        let pivot = m[(step, step)];
        for i in step + 1..rows {
            let f = m[(i, step)] / pivot;
            if f == T::zero() {
                continue;
            }
            for j in step..cols {
                m[(i, j)] = m[(i, j)] - f * m[(step, j)];
            }
        }
        rank += 1;
    }
    Ok(rank)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd() -> Matrix<f64> {
        Matrix::from_rows(&[[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]])
    }

    #[test]
    fn cholesky_inverse_round_trips() {
        let a = spd();
        let inv = Cholesky::factor(&a).unwrap().inverse();
        assert!(a.matmul(&inv).max_abs_diff(&Matrix::identity(3)) < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(matches!(Cholesky::factor(&a), Err(Error::Rank(_))));
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let a = spd();
        let eig = symmetric_eigen(&a).unwrap();
        let recon = eig
            .vectors
            .matmul(&Matrix::diag(&eig.values))
            .matmul(&eig.vectors.transpose());
        assert!(recon.max_abs_diff(&a) < 1e-13);
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn condition_number_of_diagonal() {
        let inv = spd_inverse(&Matrix::diag(&[1.0, 2.0, 8.0])).unwrap();
        assert!((inv.condition - 8.0f64).abs() < 1e-12);
    }

    #[test]
    fn rank_of_outer_product_is_one() {
        let u = Matrix::column_vector(&[1.0, 2.0, 3.0]);
        let a = u.matmul(&u.transpose());
        assert_eq!(numerical_rank(&a, 1e-10).unwrap(), 1);
    }
}
