//! Quadratic feature maps, numeric and symbolic.
//!
//! Both maps are indexed by pairs `(j, k)`, `0 <= j <= k <= d`, in `svec`
//! order, where index `0` stands for the constant. The kernel map sends
//! `(0,0)` to 1, `(0,j)` to `x_j`, `(j,j)` to `x_j^2 - 1` and `(j,k)` to
//! `x_j x_k`. The orthonormal map divides the `(j,j)` entries by `sqrt 2`.

use num_rational::Ratio;

use crate::error::Result;
use crate::numerics::Matrix;
use crate::oracles::{Coefficient, SparsePolynomial};
use crate::scalar::Scalar;
use crate::tasks::{svec_index, svec_len, svec_pairs};

pub type Rational = Ratio<i128>;

/// Number of quadratic features over `d` inputs.
pub fn feature_count(d: usize) -> usize {
    svec_len(d + 1)
}

pub fn quadratic_features<T: Scalar>(x: &[T]) -> Vec<T> {
    let z: Vec<T> = std::iter::once(T::one()).chain(x.iter().copied()).collect();
    svec_pairs(z.len())
        .into_iter()
        .map(|(a, b)| match (a, b) {
            (0, _) => z[b],
            _ if a == b => z[a] * z[a] - T::one(),
            _ => z[a] * z[b],
        })
        .collect()
}

pub fn orthonormal_basis_features<T: Scalar>(x: &[T]) -> Vec<T> {
    let scale = T::one() / T::of_f64(2.0).sqrt();
    let k = x.len() + 1;
    let mut v = quadratic_features(x);
    for j in 1..k {
        v[svec_index(k, j, j)] = v[svec_index(k, j, j)] * scale;
    }
    v
}

/// Monomial `z_a z_b` of `z = (1, x)` as an exponent vector.
pub fn pair_exponents(d: usize, a: usize, b: usize) -> Vec<u32> {
    let mut e = vec![0u32; d];
    for idx in [a, b] {
        if idx > 0 {
            e[idx - 1] += 1;
        }
    }
    e
}

pub fn quadratic_features_symbolic<C: Coefficient>(d: usize) -> Vec<SparsePolynomial<C>> {
    svec_pairs(d + 1)
        .into_iter()
        .map(|(a, b)| {
            let mut p = SparsePolynomial::monomial(pair_exponents(d, a, b), C::one());
            if a > 0 && a == b {
                p = p.sub(&SparsePolynomial::one(d));
            }
            p
        })
        .collect()
}

pub fn orthonormal_basis_features_symbolic(d: usize) -> Vec<SparsePolynomial<f64>> {
    let scale = 0.5f64.sqrt();
    svec_pairs(d + 1)
        .into_iter()
        .zip(quadratic_features_symbolic::<f64>(d))
        .map(|((a, b), p)| if a > 0 && a == b { p.scale(&scale) } else { p })
        .collect()
}

/// Raw monomials `z_a z_b` in `svec` order: a quadratic task's label is
/// `sum_k svec(W)_k * basis_k`.
pub fn raw_monomial_basis<C: Coefficient>(d: usize) -> Vec<SparsePolynomial<C>> {
    svec_pairs(d + 1)
        .into_iter()
        .map(|(a, b)| SparsePolynomial::monomial(pair_exponents(d, a, b), C::one()))
        .collect()
}

pub fn monomial_basis<C: Coefficient>(exponents: &[Vec<u32>]) -> Vec<SparsePolynomial<C>> {
    exponents
        .iter()
        .map(|e| SparsePolynomial::monomial(e.clone(), C::one()))
        .collect()
}

/// `(1, x_1, ..., x_d)`.
pub fn affine_features_symbolic<C: Coefficient>(d: usize) -> Vec<SparsePolynomial<C>> {
    std::iter::once(SparsePolynomial::one(d))
        .chain((0..d).map(|j| SparsePolynomial::variable(d, j)))
        .collect()
}

/// Exact Gram matrix `G[a][b] = E[f_a f_b]` under `x ~ N(0, I)`.
pub fn exact_feature_gram<C: Coefficient>(features: &[SparsePolynomial<C>]) -> Result<Matrix<f64>> {
    let k = features.len();
    let mut g = Matrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let v = features[a].mul(&features[b]).gaussian_expectation()?.to_f64();
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    Ok(g)
}

/// `T` with `quadratic_features(x) = T * raw_monomials(x)`.
pub fn kernel_from_raw(d: usize) -> Matrix<f64> {
    let k = d + 1;
    let n = svec_len(k);
    let mut t = Matrix::identity(n);
    for j in 1..k {
        t[(svec_index(k, j, j), 0)] = -1.0;
    }
    t
}

/// Which second-moment block to build for the label coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    Raw,
    Orthonormal,
}

/// Second moment of the label coefficients in the chosen feature basis,
/// in `svec` order. The block over `(0,0), (1,1), ..., (d,d)` is
/// `[[d+1, 1^T], [1, c I]]` with `c = 1` (raw) or `c = 2` (orthonormal);
/// every other coordinate is an independent unit-variance entry.
pub fn coefficient_second_moment(d: usize, normalization: Normalization) -> Matrix<f64> {
    let k = d + 1;
    let mut s = Matrix::identity(svec_len(k));
    let diag = match normalization {
        Normalization::Raw => 1.0,
        Normalization::Orthonormal => 2.0,
    };
    s[(0, 0)] = (d + 1) as f64;
    for j in 1..k {
        let jj = svec_index(k, j, j);
        s[(0, jj)] = 1.0;
        s[(jj, 0)] = 1.0;
        s[(jj, jj)] = diag;
    }
    s
}

/// Indices of `(0,0), (1,1), ..., (d,d)` in `svec` order.
pub fn diagonal_pair_indices(d: usize) -> Vec<usize> {
    (0..=d).map(|j| svec_index(d + 1, j, j)).collect()
}
