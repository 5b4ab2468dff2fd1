//! Closed-form weights: the quadratic-kernel bilinear layer, gradient-step
//! attention, the single kernel block, the block-coordinate-descent stack,
//! the polynomial feature cycle and the sparse restriction of a bilinear
//! layer.

use std::collections::{BTreeSet, HashMap};

use crate::error::{arg, Error, Result};
use crate::model::{AttentionWeights, BilinearWeights, Layer, ModelKind, TransformerModel};
use crate::numerics::linalg::Cholesky;
use crate::numerics::Matrix;
use crate::oracles::{exact_feature_gram, monomial_basis, quadratic_features_symbolic, Rational};
use crate::scalar::Scalar;
use crate::tasks::{monomials_up_to, svec_index, svec_len, svec_pairs};

/// Blocks of feature slots over a monomial basis.
///
/// Slot `s` of block `l` names the basis monomial that row `s` of the
/// prompt holds while block `l` runs, or `None` if that row is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSchedule {
    basis: Vec<Vec<u32>>,
    blocks: Vec<Vec<Option<usize>>>,
}

impl BlockSchedule {
    pub fn new(basis: Vec<Vec<u32>>, blocks: Vec<Vec<Option<usize>>>) -> Result<Self> {
        let total = basis.len();
        for (l, b) in blocks.iter().enumerate() {
            if let Some(k) = b.iter().flatten().find(|&&k| k >= total) {
                return arg(format!("block {l} refers to feature {k} of {total}"));
            }
        }
        Ok(Self { basis, blocks })
    }

    pub fn basis(&self) -> &[Vec<u32>] {
        &self.basis
    }

    pub fn blocks(&self) -> &[Vec<Option<usize>>] {
        &self.blocks
    }

    pub fn total(&self) -> usize {
        self.basis.len()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn indices(&self, block: usize) -> BTreeSet<usize> {
        self.blocks[block].iter().flatten().copied().collect()
    }

    pub fn covered(&self) -> BTreeSet<usize> {
        self.blocks.iter().flatten().flatten().copied().collect()
    }

    pub fn is_complete(&self) -> bool {
        self.covered().len() == self.total()
    }
}

fn cast<T: Scalar>(m: &Matrix<f64>) -> Matrix<T> {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| T::of_f64(m[(i, j)]))
}

/// Remainder with range `1..=b`.
pub fn cyclic_mod(l: usize, b: usize) -> usize {
    (l + b - 1) % b + 1
}

/// Bilinear layer whose output rows `d+1..` hold `x_j^2 - 1` and `x_j x_k`
/// in `svec` order, for `dbar = (d+2 choose 2)`.
pub fn quadratic_kernel_weights<T: Scalar>(d: usize) -> BilinearWeights<T> {
    let k = d + 1;
    let dbar = svec_len(k);
    let mut w = BilinearWeights::zeros(dbar);
    for (j, l) in svec_pairs(k).into_iter().filter(|&(j, _)| j > 0) {
        let r = svec_index(k, j, l);
        if j == l {
            w.w0[(r, j)] = T::one();
            w.w0[(r, 0)] = -T::one();
            w.w1[(r, j)] = T::one();
            w.w1[(r, 0)] = T::one();
        } else {
            w.w0[(r, j)] = T::one();
            w.w1[(r, l)] = T::one();
        }
    }
    w
}

/// `P = e_last e_last^T`, `Q = diag(Gamma, 0)`.
pub fn gd_attention_weights<T: Scalar>(gamma: &Matrix<T>) -> Result<AttentionWeights<T>> {
    if !gamma.is_square() {
        return Err(Error::Shape {
            op: "gd_attention_weights",
            lhs: gamma.shape(),
            rhs: gamma.shape(),
        });
    }
    let dim = gamma.rows() + 1;
    let mut p = Matrix::zeros(dim, dim);
    p[(dim - 1, dim - 1)] = T::one();
    AttentionWeights::new(p, gamma.embed(dim, dim, 0, 0))
}

/// Exact `E[xbar xbar^T]` of the kernel features.
pub fn kernel_feature_gram(d: usize) -> Matrix<f64> {
    exact_feature_gram(&quadratic_features_symbolic::<Rational>(d)).expect("degree within moment cap")
}

/// One kernel block with an arbitrary preconditioner.
pub fn kernel_block<T: Scalar>(d: usize, gamma: &Matrix<T>) -> Result<TransformerModel<T>> {
    let dbar = svec_len(d + 1);
    if gamma.shape() != (dbar, dbar) {
        return Err(Error::Shape {
            op: "kernel_block",
            lhs: gamma.shape(),
            rhs: (dbar, dbar),
        });
    }
    TransformerModel::new(
        ModelKind::Bilinear,
        d,
        dbar,
        vec![
            Layer::Bilinear(quadratic_kernel_weights(d)),
            Layer::Attention(gd_attention_weights(gamma)?),
        ],
    )
}

/// Kernel block with `Gamma = -Lambda^{-1}`.
pub fn inverse_gram_block<T: Scalar>(d: usize) -> TransformerModel<T> {
    let lambda = kernel_feature_gram(d);
    let gamma = Cholesky::factor(&lambda)
        .expect("feature gram is positive definite")
        .inverse()
        .scale(-1.0);
    kernel_block(d, &cast(&gamma)).expect("dimensions agree")
}

/// Raw monomials `z_a z_b` in `svec` order as exponent vectors.
pub fn quadratic_basis(d: usize) -> Vec<Vec<u32>> {
    svec_pairs(d + 1)
        .into_iter()
        .map(|(a, b)| crate::oracles::pair_exponents(d, a, b))
        .collect()
}

/// Slots `(1, x_1..x_d, x_m x_1..x_m x_d)` for the block-coordinate cycle,
/// `m = l % d`.
pub fn bcd_schedule(d: usize, blocks: usize) -> BlockSchedule {
    let k = d + 1;
    let slots = (1..=blocks)
        .map(|l| {
            let m = cyclic_mod(l, d);
            let mut s: Vec<Option<usize>> = (0..=d).map(|j| Some(svec_index(k, 0, j))).collect();
            s.extend((1..=d).map(|j| Some(svec_index(k, m, j))));
            s
        })
        .collect();
    BlockSchedule::new(quadratic_basis(d), slots).expect("indices in range")
}

fn ones_column<T: Scalar>(m: &mut Matrix<T>, rows: std::ops::Range<usize>, col: usize, v: T) {
    for r in rows {
        m[(r, col)] = m[(r, col)] + v;
    }
}

/// Bilinear layer `l` (1-based) of the block-coordinate stack.
pub fn bcd_bilinear<T: Scalar>(d: usize, l: usize) -> BilinearWeights<T> {
    let dbar = 2 * d + 1;
    let scratch = d + 1..2 * d + 1;
    let mut w = BilinearWeights::zeros(dbar);
    for r in 1..=d {
        w.w0[(d + r, r)] = T::one();
    }
    if l == 1 {
        ones_column(&mut w.w1, scratch, 1, T::one());
    } else {
        ones_column(&mut w.w1, scratch.clone(), cyclic_mod(l - 1, d), -T::one());
        ones_column(&mut w.w1, scratch, cyclic_mod(l, d), T::one());
    }
    w
}

/// `L` blocks, each a cycle bilinear layer followed by gradient-step
/// attention with `preconditioners[l]`, for `dbar = 2d + 1`.
pub fn bcd_transformer<T: Scalar>(
    d: usize,
    blocks: usize,
    preconditioners: &[Matrix<T>],
) -> Result<TransformerModel<T>> {
    let dbar = 2 * d + 1;
    if blocks < 1 {
        return arg("need at least one block");
    }
    if preconditioners.len() != blocks {
        return arg(format!("{} preconditioners for {blocks} blocks", preconditioners.len()));
    }
    let mut layers = Vec::with_capacity(2 * blocks);
    for (l, gamma) in (1..=blocks).zip(preconditioners) {
        if gamma.shape() != (dbar, dbar) {
            return Err(Error::Shape {
                op: "bcd_transformer",
                lhs: gamma.shape(),
                rhs: (dbar, dbar),
            });
        }
        layers.push(Layer::Bilinear(bcd_bilinear(d, l)));
        layers.push(Layer::Attention(gd_attention_weights(gamma)?));
    }
    TransformerModel::new(ModelKind::Bilinear, d, dbar, layers)
}

/// `-eta G_l^{-1}` with `G_l` the exact second moment of block `l`'s
/// features. Slots that are empty get a zero row and column.
pub fn default_preconditioners(schedule: &BlockSchedule, eta: f64) -> Result<Vec<Matrix<f64>>> {
    let basis = monomial_basis::<Rational>(schedule.basis());
    schedule
        .blocks()
        .iter()
        .map(|slots| {
            let live: Vec<(usize, usize)> = slots
                .iter()
                .enumerate()
                .filter_map(|(s, k)| k.map(|k| (s, k)))
                .collect();
            let feats: Vec<_> = live.iter().map(|&(_, k)| basis[k].clone()).collect();
            let inv = Cholesky::factor(&exact_feature_gram(&feats)?)?.inverse();
            let mut g = Matrix::zeros(slots.len(), slots.len());
            for (a, &(sa, _)) in live.iter().enumerate() {
                for (b, &(sb, _)) in live.iter().enumerate() {
                    g[(sa, sb)] = -eta * inv[(a, b)];
                }
            }
            Ok(g)
        })
        .collect()
}

/// The three scratch primitives over `dbar = 2d + 1` rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CyclePrimitive {
    /// Scratch <- 0.
    Erase,
    /// Scratch <- x * x_j (from an empty scratch).
    Generate(usize),
    /// Scratch <- scratch * x_j.
    Multiply(usize),
}

impl CyclePrimitive {
    pub fn weights<T: Scalar>(self, d: usize) -> BilinearWeights<T> {
        let mut w = BilinearWeights::zeros(2 * d + 1);
        let scratch = d + 1..2 * d + 1;
        match self {
            CyclePrimitive::Erase => {
                for r in 1..=d {
                    w.w0[(d + r, d + r)] = T::one();
                }
                ones_column(&mut w.w1, scratch, 0, -T::one());
            }
            CyclePrimitive::Generate(j) => {
                for r in 1..=d {
                    w.w0[(d + r, r)] = T::one();
                }
                ones_column(&mut w.w1, scratch, j, T::one());
            }
            CyclePrimitive::Multiply(j) => {
                for r in 1..=d {
                    w.w0[(d + r, d + r)] = T::one();
                }
                ones_column(&mut w.w1, scratch.clone(), 0, -T::one());
                ones_column(&mut w.w1, scratch, j, T::one());
            }
        }
        w
    }
}

/// Primitive sequence visiting every monomial of degree at most `p`, with
/// the schedule of features each block sees. For each degree `p-1`
/// monomial `x_{j1} ... x_{j(p-1)}` (sorted, graded-lex order) it emits
/// erase, generate `j1`, then multiply by `j2, ..., j(p-1)`.
pub fn polynomial_cycle<T: Scalar>(
    d: usize,
    p: u32,
) -> Result<(Vec<CyclePrimitive>, Vec<BilinearWeights<T>>, BlockSchedule)> {
    if d < 1 || p < 2 {
        return arg("polynomial cycle needs d >= 1 and p >= 2");
    }
    let basis = monomials_up_to(d, p);
    let index: HashMap<Vec<u32>, usize> = basis.iter().cloned().enumerate().map(|(i, e)| (e, i)).collect();
    let unit = |j: usize| {
        let mut e = vec![0u32; d];
        e[j - 1] = 1;
        e
    };
    let mut prims = Vec::new();
    let mut blocks = Vec::new();
    for g in monomials_up_to(d, p - 1)
        .into_iter()
        .filter(|e| e.iter().sum::<u32>() == p - 1)
    {
        let factors: Vec<usize> = g
            .iter()
            .enumerate()
            .flat_map(|(j, &k)| std::iter::repeat(j + 1).take(k as usize))
            .collect();
        let mut current: Option<Vec<u32>> = None;
        let mut emit = |prim: CyclePrimitive, current: &Option<Vec<u32>>| {
            let mut slots: Vec<Option<usize>> = vec![Some(index[&vec![0; d]])];
            slots.extend((1..=d).map(|j| Some(index[&unit(j)])));
            slots.extend((1..=d).map(|r| {
                current.as_ref().map(|h| {
                    let mut e = h.clone();
                    e[r - 1] += 1;
                    index[&e]
                })
            }));
            prims.push(prim);
            blocks.push(slots);
        };
        emit(CyclePrimitive::Erase, &current);
        current = Some(unit(factors[0]));
        emit(CyclePrimitive::Generate(factors[0]), &current);
        for &j in &factors[1..] {
            if let Some(h) = current.as_mut() {
                h[j - 1] += 1;
            }
            emit(CyclePrimitive::Multiply(j), &current);
        }
    }
    let weights = prims.iter().map(|p| p.weights(d)).collect();
    Ok((prims, weights, BlockSchedule::new(basis, blocks)?))
}

/// Bilinear weights and feature schedule of the polynomial cycle.
pub fn polynomial_cycle_weights<T: Scalar>(d: usize, p: u32) -> Result<(Vec<BilinearWeights<T>>, BlockSchedule)> {
    let (_, w, s) = polynomial_cycle(d, p)?;
    Ok((w, s))
}

/// Interleaves bilinear layers with gradient-step attention layers.
pub fn stack_with_attention<T: Scalar>(
    d: usize,
    bilinear: Vec<BilinearWeights<T>>,
    preconditioners: &[Matrix<T>],
) -> Result<TransformerModel<T>> {
    if bilinear.len() != preconditioners.len() {
        return arg("one preconditioner per bilinear layer is required");
    }
    let dbar = bilinear.first().map_or(2 * d + 1, |w| w.dbar());
    let mut layers = Vec::with_capacity(2 * bilinear.len());
    for (w, g) in bilinear.into_iter().zip(preconditioners) {
        layers.push(Layer::Bilinear(w));
        layers.push(Layer::Attention(gd_attention_weights(g)?));
    }
    TransformerModel::new(ModelKind::Bilinear, d, dbar, layers)
}

/// Keeps only rows `d+1..` and columns `0..=d` of both weights.
pub fn sparsify_bilinear<T: Scalar>(w: &BilinearWeights<T>, d: usize) -> Result<BilinearWeights<T>> {
    let dbar = w.dbar();
    if dbar <= d + 1 {
        return arg(format!("dbar = {dbar} has no scratch rows for d = {d}"));
    }
    let keep = |m: &Matrix<T>| Matrix::from_fn(dbar, dbar, |i, j| if i > d && j <= d { m[(i, j)] } else { T::zero() });
    Ok(BilinearWeights {
        w0: keep(&w.w0),
        w1: keep(&w.w1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{bilinear_forward, is_sparse_pattern};

    #[test]
    fn kernel_layer_by_hand() {
        let w = quadratic_kernel_weights::<f64>(1);
        let z = Matrix::from_rows(&[[1.0], [2.0], [0.0], [7.0]]);
        let z = Matrix::from_fn(4, 2, |i, j| if j == 0 { z[(i, 0)] } else { [1.0, 0.5, 0.0, 0.0][i] });
        let out = bilinear_forward(&z, &w).unwrap();
        assert_eq!(out.column(0), vec![1.0, 2.0, 3.0, 7.0]);
    }

    #[test]
    fn inverse_gram_gamma_d1() {
        let m = inverse_gram_block::<f64>(1);
        let Layer::Attention(a) = &m.layers()[1] else { panic!() };
        assert!(a.q.slice(0, 0, 3, 3).max_abs_diff(&Matrix::diag(&[-1.0, -1.0, -0.5])) < 1e-15);
    }

    #[test]
    fn cyclic_mod_range() {
        assert_eq!(cyclic_mod(3, 3), 3);
        assert_eq!(cyclic_mod(4, 3), 1);
        assert_eq!(cyclic_mod(1, 1), 1);
    }

    #[test]
    fn bcd_cycle_is_complete() {
        for d in 1..5 {
            let s = bcd_schedule(d, d);
            assert!(s.is_complete(), "d = {d}");
            assert!(!bcd_schedule(d.max(2), d.max(2) - 1).is_complete() || d == 1);
        }
    }

    #[test]
    fn polynomial_cycle_count_and_completeness() {
        let (w, s) = polynomial_cycle_weights::<f64>(4, 3).unwrap();
        assert_eq!(w.len(), 30);
        assert!(s.is_complete());
        let (prims, _, s2) = polynomial_cycle::<f64>(2, 3).unwrap();
        assert_eq!(
            prims[..3],
            [
                CyclePrimitive::Erase,
                CyclePrimitive::Generate(1),
                CyclePrimitive::Multiply(1)
            ]
        );
        assert!(s2.is_complete());
    }

    #[test]
    fn sparsify_is_idempotent() {
        let bcd = bcd_bilinear::<f64>(3, 2);
        assert_eq!(sparsify_bilinear(&bcd, 3).unwrap(), bcd);
        let erase = CyclePrimitive::Erase.weights::<f64>(3);
        let s = sparsify_bilinear(&erase, 3).unwrap();
        assert!(is_sparse_pattern(&s.w0, 3) && is_sparse_pattern(&s.w1, 3));
        assert!(sparsify_bilinear(&BilinearWeights::<f64>::zeros(3), 2).is_err());
    }
}
