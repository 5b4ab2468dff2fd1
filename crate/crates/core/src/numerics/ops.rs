use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// The primitive set shared by plain matrices and tape variables.
///
/// Model forward passes are written once against this trait, so the same
/// code path produces both evaluation values and differentiable graphs.
pub trait MatrixOps<T: Scalar>: Clone {
    fn dims(&self) -> (usize, usize);
    fn mm(&self, rhs: &Self) -> Self;
    /// `self * rhs^T`.
    fn mm_nt(&self, rhs: &Self) -> Self;
    fn plus(&self, rhs: &Self) -> Self;
    fn minus(&self, rhs: &Self) -> Self;
    fn hadamard_with(&self, rhs: &Self) -> Self;
    fn scaled(&self, c: T) -> Self;
    /// Elementwise product with a constant mask.
    fn masked(&self, mask: &Matrix<T>) -> Self;
    /// Elementwise sum with a constant.
    fn offset(&self, c: &Matrix<T>) -> Self;
    fn embedded(&self, rows: usize, cols: usize, row0: usize, col0: usize) -> Self;
    fn sliced(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Self;
    fn squared(&self) -> Self;
}

impl<T: Scalar> MatrixOps<T> for Matrix<T> {
    fn dims(&self) -> (usize, usize) {
        self.shape()
    }

    fn mm(&self, rhs: &Self) -> Self {
        self.matmul(rhs)
    }

    fn mm_nt(&self, rhs: &Self) -> Self {
        self.matmul_nt(rhs)
    }

    fn plus(&self, rhs: &Self) -> Self {
        self.add(rhs)
    }

    fn minus(&self, rhs: &Self) -> Self {
        self.sub(rhs)
    }

    fn hadamard_with(&self, rhs: &Self) -> Self {
        self.hadamard(rhs)
    }

    fn scaled(&self, c: T) -> Self {
        self.scale(c)
    }

    fn masked(&self, mask: &Matrix<T>) -> Self {
        self.hadamard(mask)
    }

    fn offset(&self, c: &Matrix<T>) -> Self {
        self.add(c)
    }

    fn embedded(&self, rows: usize, cols: usize, row0: usize, col0: usize) -> Self {
        self.embed(rows, cols, row0, col0)
    }

    fn sliced(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Self {
        self.slice(row0, col0, rows, cols)
    }

    fn squared(&self) -> Self {
        self.map(|x| x * x)
    }
}
