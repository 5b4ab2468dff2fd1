use crate::error::{Error, Result};
use crate::numerics::{Matrix, MatrixOps};
use crate::scalar::Scalar;

/// Linear self-attention weights: value projection `P` and merged
/// key-query matrix `Q`, both `(dbar+1) x (dbar+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights<T: Scalar> {
    pub p: Matrix<T>,
    pub q: Matrix<T>,
}

impl<T: Scalar> AttentionWeights<T> {
    pub fn new(p: Matrix<T>, q: Matrix<T>) -> Result<Self> {
        if !p.is_square() || p.shape() != q.shape() {
            return Err(Error::Shape {
                op: "attention weights",
                lhs: p.shape(),
                rhs: q.shape(),
            });
        }
        Ok(Self { p, q })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            p: Matrix::zeros(dim, dim),
            q: Matrix::zeros(dim, dim),
        }
    }

    /// Side length `dbar + 1`.
    pub fn dim(&self) -> usize {
        self.p.rows()
    }
}

/// Bilinear feed-forward weights `W0`, `W1`, both `dbar x dbar`.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearWeights<T: Scalar> {
    pub w0: Matrix<T>,
    pub w1: Matrix<T>,
}

impl<T: Scalar> BilinearWeights<T> {
    pub fn new(w0: Matrix<T>, w1: Matrix<T>) -> Result<Self> {
        if !w0.is_square() || w0.shape() != w1.shape() {
            return Err(Error::Shape {
                op: "bilinear weights",
                lhs: w0.shape(),
                rhs: w1.shape(),
            });
        }
        Ok(Self { w0, w1 })
    }

    pub fn zeros(dbar: usize) -> Self {
        Self {
            w0: Matrix::zeros(dbar, dbar),
            w1: Matrix::zeros(dbar, dbar),
        }
    }

    pub fn dbar(&self) -> usize {
        self.w0.rows()
    }
}

/// A layer with weights already lifted to the full prompt height, ready to
/// be applied by [`apply_layer`].
#[derive(Clone)]
pub enum LiftedLayer<O> {
    Attention {
        p: O,
        q: O,
    },
    /// `diag(W0, 0)` and `diag(W1, 0)`.
    Bilinear {
        w0: O,
        w1: O,
    },
}

/// `1 - e_last` as a row mask over prompt columns, broadcast to `rows`.
pub fn query_mask<T: Scalar>(rows: usize, cols: usize) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, j| if j + 1 == cols { T::zero() } else { T::one() })
}

/// `Z + (1/n) P Z M Z^T Q Z`, evaluated as `P (Z M Z^T) Q Z`.
pub fn lsa_apply<T: Scalar, O: MatrixOps<T>>(z: &O, p: &O, q: &O, mask: &Matrix<T>) -> O {
    let (_, cols) = z.dims();
    let n = cols - 1;
    let gram = z.masked(mask).mm_nt(z);
    let update = p.mm(&gram).mm(q).mm(z);
    z.plus(&update.scaled(T::one() / T::of_usize(n)))
}

/// `Z + (W0 Z) * (W1 Z)` with lifted weights.
pub fn bilinear_apply<T: Scalar, O: MatrixOps<T>>(z: &O, w0: &O, w1: &O) -> O {
    z.plus(&w0.mm(z).hadamard_with(&w1.mm(z)))
}

pub fn apply_layer<T: Scalar, O: MatrixOps<T>>(z: &O, layer: &LiftedLayer<O>, mask: &Matrix<T>) -> O {
    match layer {
        LiftedLayer::Attention { p, q } => lsa_apply(z, p, q, mask),
        LiftedLayer::Bilinear { w0, w1 } => bilinear_apply(z, w0, w1),
    }
}

fn check_prompt<T: Scalar>(op: &'static str, z: &Matrix<T>, dim: usize) -> Result<()> {
    if z.rows() != dim || z.cols() < 2 {
        return Err(Error::Shape {
            op,
            lhs: z.shape(),
            rhs: (dim, dim),
        });
    }
    Ok(())
}

pub fn lsa_forward<T: Scalar>(z: &Matrix<T>, w: &AttentionWeights<T>) -> Result<Matrix<T>> {
    check_prompt("lsa_forward", z, w.dim())?;
    let mask = query_mask(z.rows(), z.cols());
    Ok(lsa_apply(z, &w.p, &w.q, &mask))
}

pub fn bilinear_forward<T: Scalar>(z: &Matrix<T>, w: &BilinearWeights<T>) -> Result<Matrix<T>> {
    check_prompt("bilinear_forward", z, w.dbar() + 1)?;
    let dim = z.rows();
    let w0 = w.w0.embed(dim, dim, 0, 0);
    let w1 = w.w1.embed(dim, dim, 0, 0);
    Ok(bilinear_apply(z, &w0, &w1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_are_identity() {
        let z = Matrix::from_fn(4, 5, |i, j| (i * 5 + j) as f64 * 0.1 - 0.7);
        assert_eq!(lsa_forward(&z, &AttentionWeights::zeros(4)).unwrap(), z);
        assert_eq!(bilinear_forward(&z, &BilinearWeights::zeros(3)).unwrap(), z);
    }

    #[test]
    fn reassociation_matches_literal_order() {
        let z = Matrix::from_fn(4, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let p = Matrix::from_fn(4, 4, |i, j| (i as f64 - j as f64) * 0.3);
        let q = Matrix::from_fn(4, 4, |i, j| ((i + 2 * j) % 3) as f64 * 0.5);
        let m = Matrix::diag(&[1.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
        let literal = z.add(
            &p.matmul(&z)
                .matmul(&m)
                .matmul(&z.transpose().matmul(&q).matmul(&z))
                .scale(1.0 / 5.0),
        );
        let fast = lsa_forward(&z, &AttentionWeights::new(p, q).unwrap()).unwrap();
        assert!(fast.max_abs_diff(&literal) < 1e-12);
    }

    #[test]
    fn unit_rows_multiply_coordinates() {
        let z = Matrix::from_rows(&[[1.0, 1.0], [2.0, -3.0], [0.0, 0.0], [5.0, 0.0]]);
        let mut w = BilinearWeights::zeros(3);
        w.w0[(2, 1)] = 1.0;
        w.w1[(2, 0)] = 1.0;
        let out = bilinear_forward(&z, &w).unwrap();
        assert_eq!(out.row(2), &[2.0, -3.0]);
        assert_eq!(out.row(3), z.row(3));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let z = Matrix::<f64>::zeros(3, 4);
        assert!(lsa_forward(&z, &AttentionWeights::zeros(4)).is_err());
        assert!(bilinear_forward(&z, &BilinearWeights::zeros(3)).is_err());
    }
}
