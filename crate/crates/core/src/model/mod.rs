//! Linear-attention and bilinear transformer stacks.

mod layers;
mod serialize;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{arg, Error, Result};
use crate::numerics::{Matrix, MatrixOps, ParameterSet, Tape, Var};
use crate::scalar::Scalar;
use crate::tasks::{PromptBatch, PromptMatrix};

pub use layers::{
    apply_layer, bilinear_apply, bilinear_forward, lsa_apply, lsa_forward, query_mask, AttentionWeights,
    BilinearWeights, LiftedLayer,
};
pub use serialize::{read_model, write_model};

/// Prompts per parallel work item. Fixed so that the reduction order, and
/// therefore every floating-point result, is independent of thread count.
pub const CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    Bilinear,
    BilinearSparse,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Bilinear => "bilinear",
            ModelKind::BilinearSparse => "bilinear-sparse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(ModelKind::Linear),
            "bilinear" => Some(ModelKind::Bilinear),
            "bilinear-sparse" => Some(ModelKind::BilinearSparse),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T: Scalar> {
    Attention(AttentionWeights<T>),
    Bilinear(BilinearWeights<T>),
}

/// Rows `d+1..dbar` and columns `0..=d` of a `dbar x dbar` bilinear weight:
/// the only block a sparse bilinear layer may use.
pub fn sparse_block(d: usize, dbar: usize) -> (usize, usize, usize, usize) {
    (d + 1, 0, dbar - d - 1, d + 1)
}

pub fn is_sparse_pattern<T: Scalar>(w: &Matrix<T>, d: usize) -> bool {
    let dbar = w.rows();
    (0..dbar).all(|i| (0..dbar).all(|j| (i > d && j <= d) || w[(i, j)] == T::zero()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerModel<T: Scalar> {
    kind: ModelKind,
    d: usize,
    dbar: usize,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> TransformerModel<T> {
    pub fn new(kind: ModelKind, d: usize, dbar: usize, layers: Vec<Layer<T>>) -> Result<Self> {
        if d < 1 || dbar < d + 1 {
            return Err(Error::Config(format!("invalid dimensions d = {d}, dbar = {dbar}")));
        }
        if kind == ModelKind::BilinearSparse && dbar <= d + 1 {
            return Err(Error::Config("sparse bilinear layers need dbar > d + 1".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            match (kind, layer) {
                (ModelKind::Linear, Layer::Bilinear(_)) => {
                    return arg(format!("linear model has a bilinear layer at {i}"));
                }
                (ModelKind::Linear, Layer::Attention(_)) => {}
                (_, Layer::Bilinear(_)) if i % 2 == 1 => {
                    return arg(format!("layer {i} should be attention"));
                }
                (_, Layer::Attention(_)) if i % 2 == 0 => {
                    return arg(format!("layer {i} should be bilinear"));
                }
                _ => {}
            }
            match layer {
                Layer::Attention(w) if w.dim() != dbar + 1 => {
                    return Err(Error::Shape {
                        op: "attention layer",
                        lhs: w.p.shape(),
                        rhs: (dbar + 1, dbar + 1),
                    });
                }
                Layer::Bilinear(w) => {
                    if w.dbar() != dbar {
                        return Err(Error::Shape {
                            op: "bilinear layer",
                            lhs: w.w0.shape(),
                            rhs: (dbar, dbar),
                        });
                    }
                    if kind == ModelKind::BilinearSparse
                        && !(is_sparse_pattern(&w.w0, d) && is_sparse_pattern(&w.w1, d))
                    {
                        return arg(format!("layer {i} violates the sparse bilinear pattern"));
                    }
                }
                _ => {}
            }
        }
        if kind != ModelKind::Linear && layers.len() % 2 == 1 {
            return arg("bilinear models need an even number of layers");
        }
        Ok(Self { kind, d, dbar, layers })
    }

    pub fn zeros(kind: ModelKind, d: usize, dbar: usize, depth: usize) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| match (kind, i % 2) {
                (ModelKind::Linear, _) | (_, 1) => Layer::Attention(AttentionWeights::zeros(dbar + 1)),
                _ => Layer::Bilinear(BilinearWeights::zeros(dbar)),
            })
            .collect();
        Self::new(kind, d, dbar, layers)
    }

    /// Every trainable entry i.i.d. `N(0, sigma^2)`; structural zeros of
    /// the sparse kind stay zero.
    pub fn random<R: Rng + ?Sized>(
        kind: ModelKind,
        d: usize,
        dbar: usize,
        depth: usize,
        sigma: T,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(kind, d, dbar, depth)?;
        let mut params = model.parameters();
        for i in 0..params.len() {
            for v in params.get_mut(i).as_mut_slice() {
                *v = sigma * T::standard_normal(rng);
            }
        }
        model.set_parameters(&params)?;
        Ok(model)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dbar(&self) -> usize {
        self.dbar
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Trainable parameters in layer order. Names are `"{layer}.P"`,
    /// `"{layer}.Q"`, `"{layer}.W0"`, `"{layer}.W1"`; the sparse kind exposes
    /// only the free block of each bilinear weight.
    pub fn parameters(&self) -> ParameterSet<T> {
        let mut set = ParameterSet::new();
        let (r0, c0, rows, cols) = sparse_block(self.d, self.dbar.max(self.d + 1));
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Attention(w) => {
                    set.insert(format!("{i}.P"), w.p.clone()).expect("unique");
                    set.insert(format!("{i}.Q"), w.q.clone()).expect("unique");
                }
                Layer::Bilinear(w) => {
                    let (a, b) = if self.kind == ModelKind::BilinearSparse {
                        (w.w0.slice(r0, c0, rows, cols), w.w1.slice(r0, c0, rows, cols))
                    } else {
                        (w.w0.clone(), w.w1.clone())
                    };
                    set.insert(format!("{i}.W0"), a).expect("unique");
                    set.insert(format!("{i}.W1"), b).expect("unique");
                }
            }
        }
        set
    }

    /// Inverse of [`Self::parameters`].
    pub fn set_parameters(&mut self, params: &ParameterSet<T>) -> Result<()> {
        let expected = self.parameters();
        if params.len() != expected.len() {
            return arg(format!("expected {} parameters, got {}", expected.len(), params.len()));
        }
        for i in 0..params.len() {
            if params.name(i) != expected.name(i) || params.get(i).shape() != expected.get(i).shape() {
                return arg(format!(
                    "parameter {i} (`{}`) does not match the model layout",
                    params.name(i)
                ));
            }
        }
        let (r0, c0, _, _) = sparse_block(self.d, self.dbar.max(self.d + 1));
        let sparse = self.kind == ModelKind::BilinearSparse;
        let dbar = self.dbar;
        let mut k = 0;
        for layer in &mut self.layers {
            let a = params.get(k).clone();
            let b = params.get(k + 1).clone();
            k += 2;
            match layer {
                Layer::Attention(w) => {
                    w.p = a;
                    w.q = b;
                }
                Layer::Bilinear(w) => {
                    if sparse {
                        w.w0 = a.embed(dbar, dbar, r0, c0);
                        w.w1 = b.embed(dbar, dbar, r0, c0);
                    } else {
                        w.w0 = a;
                        w.w1 = b;
                    }
                }
            }
        }
        Ok(())
    }

    fn lifted(&self) -> Vec<LiftedLayer<Matrix<T>>> {
        let dim = self.dbar + 1;
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Attention(w) => LiftedLayer::Attention {
                    p: w.p.clone(),
                    q: w.q.clone(),
                },
                Layer::Bilinear(w) => LiftedLayer::Bilinear {
                    w0: w.w0.embed(dim, dim, 0, 0),
                    w1: w.w1.embed(dim, dim, 0, 0),
                },
            })
            .collect()
    }

    /// Lifts the parameter variables produced by [`Self::parameters`] on a
    /// tape into full-height layer weights.
    pub fn lift_vars<'t>(&self, vars: &[Var<'t, T>]) -> Vec<LiftedLayer<Var<'t, T>>> {
        let dim = self.dbar + 1;
        let (r0, c0, _, _) = sparse_block(self.d, self.dbar.max(self.d + 1));
        let sparse = self.kind == ModelKind::BilinearSparse;
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let (a, b) = (vars[2 * i], vars[2 * i + 1]);
                match l {
                    Layer::Attention(_) => LiftedLayer::Attention { p: a, q: b },
                    Layer::Bilinear(_) => {
                        let (r, c) = if sparse { (r0, c0) } else { (0, 0) };
                        LiftedLayer::Bilinear {
                            w0: a.embedded(dim, dim, r, c),
                            w1: b.embedded(dim, dim, r, c),
                        }
                    }
                }
            })
            .collect()
    }

    fn check_input(&self, z: &Matrix<T>) -> Result<()> {
        if z.rows() != self.dbar + 1 || z.cols() < 2 {
            return Err(Error::Shape {
                op: "transformer_forward",
                lhs: z.shape(),
                rhs: (self.dbar + 1, z.cols()),
            });
        }
        Ok(())
    }
}

/// `Z^(0), ..., Z^(L)`.
pub fn transformer_forward<T: Scalar>(model: &TransformerModel<T>, z: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
    model.check_input(z)?;
    let mask = query_mask(z.rows(), z.cols());
    let mut out = Vec::with_capacity(model.depth() + 1);
    out.push(z.clone());
    for layer in model.lifted() {
        let next = apply_layer(out.last().expect("nonempty"), &layer, &mask);
        out.push(next);
    }
    Ok(out)
}

/// Bottom-right entry of the final layer output.
pub fn predict<T: Scalar>(model: &TransformerModel<T>, z: &Matrix<T>) -> Result<T> {
    model.check_input(z)?;
    Ok(predict_lifted(&model.lifted(), z))
}

fn predict_lifted<T: Scalar>(layers: &[LiftedLayer<Matrix<T>>], z: &Matrix<T>) -> T {
    let mask = query_mask(z.rows(), z.cols());
    let mut cur = z.clone();
    for layer in layers {
        cur = apply_layer(&cur, layer, &mask);
    }
    cur[(cur.rows() - 1, cur.cols() - 1)]
}

/// Squared errors `(predict + y_query)^2` for every prompt, in batch order.
pub fn prompt_errors<T: Scalar>(model: &TransformerModel<T>, batch: &PromptBatch<T>) -> Result<Vec<T>> {
    if let Some(p) = batch.prompts().first() {
        model.check_input(p.z())?;
    }
    let lifted = model.lifted();
    let chunks: Vec<Vec<T>> = batch
        .prompts()
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|p| {
                    let e = predict_lifted(&lifted, p.z()) + p.y_query();
                    e * e
                })
                .collect()
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// Mean of `(predict + y_query)^2` over the batch.
pub fn icl_loss<T: Scalar>(model: &TransformerModel<T>, batch: &PromptBatch<T>) -> Result<T> {
    if batch.is_empty() {
        return arg("icl_loss needs a nonempty batch");
    }
    let errs = prompt_errors(model, batch)?;
    let total = errs.into_iter().fold(T::zero(), |a, b| a + b);
    Ok(total / T::of_usize(batch.len()))
}

/// Sum of squared errors over `prompts`, recorded on the tape of `vars`.
pub fn recorded_loss_sum<'t, T: Scalar>(
    model: &TransformerModel<T>,
    tape: &'t Tape<T>,
    vars: &[Var<'t, T>],
    prompts: &[PromptMatrix<T>],
) -> Var<'t, T> {
    let lifted = model.lift_vars(vars);
    let mut total: Option<Var<'t, T>> = None;
    for prompt in prompts {
        let z = prompt.z();
        let mask = query_mask(z.rows(), z.cols());
        let mut cur = tape.leaf(z.clone());
        for layer in &lifted {
            cur = apply_layer(&cur, layer, &mask);
        }
        let pred = cur.sliced(z.rows() - 1, z.cols() - 1, 1, 1);
        let err = pred.offset(&Matrix::scalar(prompt.y_query())).squared();
        total = Some(match total {
            Some(t) => t.plus(&err),
            None => err,
        });
    }
    total.unwrap_or_else(|| tape.leaf(Matrix::scalar(T::zero())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{sample_prompt_batch, TaskKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn layer_order_is_validated() {
        let att = Layer::Attention(AttentionWeights::<f64>::zeros(4));
        let bil = Layer::Bilinear(BilinearWeights::zeros(3));
        assert!(TransformerModel::new(ModelKind::Bilinear, 1, 3, vec![bil.clone(), att.clone()]).is_ok());
        assert!(TransformerModel::new(ModelKind::Bilinear, 1, 3, vec![att.clone(), bil.clone()]).is_err());
        assert!(TransformerModel::new(ModelKind::Linear, 1, 3, vec![bil]).is_err());
        assert!(TransformerModel::new(ModelKind::Linear, 1, 3, vec![att]).is_ok());
    }

    #[test]
    fn forward_lengths_and_zero_prediction() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let batch = sample_prompt_batch::<f64, _>(TaskKind::Quadratic, 2, 5, 4, 3, &mut rng).unwrap();
        let z = batch.prompts()[0].z();
        let empty = TransformerModel::<f64>::zeros(ModelKind::Bilinear, 2, 5, 0).unwrap();
        assert_eq!(transformer_forward(&empty, z).unwrap(), vec![z.clone()]);
        let m = TransformerModel::<f64>::zeros(ModelKind::Bilinear, 2, 5, 4).unwrap();
        assert_eq!(transformer_forward(&m, z).unwrap().len(), 5);
        assert_eq!(predict(&m, z).unwrap(), 0.0);
        let ys = batch.y_queries();
        let want = ys.iter().map(|y| y * y).sum::<f64>() / 3.0;
        assert!((icl_loss(&m, &batch).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn sparse_parameters_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let m = TransformerModel::<f64>::random(ModelKind::BilinearSparse, 2, 6, 2, 0.5, &mut rng).unwrap();
        let params = m.parameters();
        assert_eq!(params.get(0).shape(), (3, 3));
        let Layer::Bilinear(w) = &m.layers()[0] else { panic!() };
        assert!(is_sparse_pattern(&w.w0, 2) && is_sparse_pattern(&w.w1, 2));
        let mut copy = TransformerModel::zeros(ModelKind::BilinearSparse, 2, 6, 2).unwrap();
        copy.set_parameters(&params).unwrap();
        assert_eq!(copy, m);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let m = TransformerModel::<f64>::zeros(ModelKind::Linear, 1, 2, 1).unwrap();
        assert!(icl_loss(&m, &PromptBatch::new(vec![]).unwrap()).is_err());
    }
}
