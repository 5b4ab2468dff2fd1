use crate::error::{arg, Error, Result};
use crate::numerics::{Matrix, Tape, Var};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
struct Entry<T: Scalar> {
    name: String,
    value: Matrix<T>,
    frozen: bool,
}

/// Ordered, uniquely named collection of trainable matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T: Scalar> {
    entries: Vec<Entry<T>>,
}

impl<T: Scalar> Default for ParameterSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix<T>) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return arg(format!("duplicate parameter name `{name}`"));
        }
        self.entries.push(Entry {
            name,
            value,
            frozen: false,
        });
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].name
    }

    pub fn get(&self, i: usize) -> &Matrix<T> {
        &self.entries[i].value
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Matrix<T> {
        &mut self.entries[i].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix<T>> {
        self.index_of(name).map(|i| self.get(i))
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.entries[i].frozen
    }

    pub fn set_frozen(&mut self, i: usize, frozen: bool) {
        self.entries[i].frozen = frozen;
    }

    /// Freezes or thaws every parameter whose name satisfies `pred`.
    pub fn set_frozen_where(&mut self, frozen: bool, pred: impl Fn(&str) -> bool) {
        for e in &mut self.entries {
            if pred(&e.name) {
                e.frozen = frozen;
            }
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &Matrix<T>> {
        self.entries.iter().map(|e| &e.value)
    }

    pub fn scalar_count(&self) -> usize {
        self.values().map(|m| m.rows() * m.cols()).sum()
    }

    /// Records every parameter as a leaf on `tape`, in order.
    pub fn record<'t>(&self, tape: &'t Tape<T>) -> Vec<Var<'t, T>> {
        self.entries.iter().map(|e| tape.leaf(e.value.clone())).collect()
    }
}

/// Gradient per parameter; `None` for frozen parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientRecord<T: Scalar> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> GradientRecord<T> {
    pub fn zeros_like(params: &ParameterSet<T>) -> Self {
        let grads = (0..params.len())
            .map(|i| {
                (!params.is_frozen(i)).then(|| {
                    let (r, c) = params.get(i).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect();
        Self { grads }
    }

    pub fn from_parts(grads: Vec<Option<Matrix<T>>>) -> Self {
        Self { grads }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Matrix<T>> {
        self.grads.get(i).and_then(|g| g.as_ref())
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.grads.len(), other.grads.len(), "gradient records differ in length");
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(c);
        }
    }

    pub fn global_norm(&self) -> T {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.as_slice().iter().map(|&x| x * x).sum::<T>())
            .sum::<T>()
            .sqrt()
    }
}

/// Loss value and reverse-mode gradients of `loss` at `params`.
///
/// `loss` receives the tape and one variable per parameter (same order as
/// the set) and must return a 1x1 variable. Frozen parameters are still
/// passed in but receive no gradient.
pub fn grad<T, F>(params: &ParameterSet<T>, loss: F) -> Result<(T, GradientRecord<T>)>
where
    T: Scalar,
    F: for<'t> FnOnce(&'t Tape<T>, &[Var<'t, T>]) -> Var<'t, T>,
{
    let tape = Tape::new();
    let vars = params.record(&tape);
    let out = loss(&tape, &vars);
    let value = out.scalar_value();
    let adj = tape.backward(out)?;
    let grads = vars
        .iter()
        .enumerate()
        .map(|(i, v)| (!params.is_frozen(i)).then(|| adj.wrt(v)))
        .collect();
    Ok((value, GradientRecord { grads }))
}

/// Central-difference estimate of the gradient, one scalar entry at a time.
pub fn finite_diff_grad<T, F>(loss: F, params: &ParameterSet<T>, h: T) -> Result<GradientRecord<T>>
where
    T: Scalar,
    F: Fn(&ParameterSet<T>) -> T,
{
    if !(h > T::zero()) {
        return arg("finite-difference step must be positive");
    }
    let two_h = h + h;
    let mut work = params.clone();
    let mut grads = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        if params.is_frozen(i) {
            grads.push(None);
            continue;
        }
        let (r, c) = params.get(i).shape();
        let mut g = Matrix::zeros(r, c);
        for k in 0..r * c {
            let orig = work.get(i).as_slice()[k];
            work.get_mut(i).as_mut_slice()[k] = orig + h;
            let up = loss(&work);
            work.get_mut(i).as_mut_slice()[k] = orig - h;
            let down = loss(&work);
            work.get_mut(i).as_mut_slice()[k] = orig;
            let est = (up - down) / two_h;
            if !est.is_finite() {
                return Err(Error::NumericOverflow {
                    op: "finite_difference",
                    node: k,
                });
            }
            g.as_mut_slice()[k] = est;
        }
        grads.push(Some(g));
    }
    Ok(GradientRecord { grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::MatrixOps;

    fn one_param(value: Matrix<f64>) -> ParameterSet<f64> {
        let mut p = ParameterSet::new();
        p.insert("w", value).unwrap();
        p
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let w = Matrix::from_rows(&[[1.5, -2.0], [0.25, 4.0]]);
        let params = one_param(w.clone());
        let (loss, g) = grad(&params, |_, v| v[0].squared().sum().scaled(0.5)).unwrap();
        assert!((loss - 0.5 * w.as_slice().iter().map(|x| x * x).sum::<f64>()).abs() < 1e-15);
        assert_eq!(g.get(0).unwrap(), &w);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let params = one_param(Matrix::from_rows(&[[1.0, 2.0]]));
        let (_, g) = grad(&params, |tape, _| tape.leaf(Matrix::scalar(7.0))).unwrap();
        assert_eq!(g.get(0).unwrap(), &Matrix::zeros(1, 2));
        let fd = finite_diff_grad(|_| 7.0, &params, 1e-5).unwrap();
        assert_eq!(fd.get(0).unwrap(), &Matrix::zeros(1, 2));
    }

    #[test]
    fn finite_difference_of_square() {
        let params = one_param(Matrix::scalar(3.0));
        let fd = finite_diff_grad(|p| p.get(0)[(0, 0)].powi(2), &params, 1e-5).unwrap();
        assert!((fd.get(0).unwrap()[(0, 0)] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn finite_difference_rejects_bad_step() {
        let params = one_param(Matrix::scalar(3.0));
        assert!(finite_diff_grad(|_| 0.0, &params, 0.0).is_err());
        assert!(finite_diff_grad(|_| 0.0, &params, -1e-3).is_err());
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let mut params = one_param(Matrix::scalar(2.0));
        params.insert("b", Matrix::scalar(1.0)).unwrap();
        params.set_frozen(0, true);
        let (_, g) = grad(&params, |_, v| v[0].hadamard_with(&v[1]).sum()).unwrap();
        assert!(g.get(0).is_none());
        assert_eq!(g.get(1).unwrap()[(0, 0)], 2.0);
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut params = one_param(Matrix::scalar(1.0));
        assert!(params.insert("w", Matrix::scalar(2.0)).is_err());
    }
}
