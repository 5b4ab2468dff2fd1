//! Reference predictors: one preconditioned gradient step on kernel least
//! squares, and block-coordinate descent over monomial features.

use crate::constructions::BlockSchedule;
use crate::error::{arg, Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;
use crate::tasks::{raw_monomials, svec_len, PromptMatrix};

pub fn eval_monomial<T: Scalar>(exponents: &[u32], x: &[T]) -> T {
    exponents
        .iter()
        .zip(x)
        .fold(T::one(), |acc, (&k, &xi)| acc * xi.powi(k as i32))
}

/// `phi_q^T Gamma (1/n) sum_i y_i phi_i` over raw monomials in `svec` order.
pub fn kernel_gd_predict<T: Scalar>(prompt: &PromptMatrix<T>, gamma: &Matrix<T>) -> Result<T> {
    let k = svec_len(prompt.d() + 1);
    if gamma.shape() != (k, k) {
        return Err(Error::Shape {
            op: "kernel_gd_predict",
            lhs: gamma.shape(),
            rhs: (k, k),
        });
    }
    let n = prompt.n();
    let mut grad = vec![T::zero(); k];
    for i in 0..n {
        let y = prompt.label(i);
        for (g, f) in grad.iter_mut().zip(raw_monomials(&prompt.x(i))) {
            *g = *g + y * f;
        }
    }
    let inv_n = T::one() / T::of_usize(n);
    grad.iter_mut().for_each(|g| *g = *g * inv_n);
    let step = gamma.matvec(&grad);
    Ok(crate::numerics::dot(&raw_monomials(&prompt.x_query()), &step))
}

/// Iterates `w^(0) = 0, w^(1), ..., w^(L)` of block-coordinate descent on
/// `L(w) = (1/2n) sum_i (f(x_i; w) + y_i)^2`.
#[derive(Clone, Debug)]
pub struct BcdTrace<T: Scalar> {
    pub iterates: Vec<Vec<T>>,
    pub schedule: BlockSchedule,
}

impl<T: Scalar> BcdTrace<T> {
    /// `f(x; w^(step))`.
    pub fn predict(&self, step: usize, x: &[T]) -> T {
        self.schedule
            .basis()
            .iter()
            .zip(&self.iterates[step])
            .map(|(e, &w)| w * eval_monomial(e, x))
            .fold(T::zero(), |a, b| a + b)
    }

    /// `y_i + f(x_i; w^(step))` for every context column.
    pub fn context_labels(&self, step: usize, prompt: &PromptMatrix<T>) -> Vec<T> {
        (0..prompt.n())
            .map(|i| prompt.label(i) + self.predict(step, &prompt.x(i)))
            .collect()
    }
}

/// Runs the block updates `w[b] <- w[b] + Gamma^T grad_b L(w)` in schedule
/// order; a scalar step `eta` corresponds to `Gamma = -eta I`.
pub fn bcd_iterates<T: Scalar>(
    prompt: &PromptMatrix<T>,
    schedule: &BlockSchedule,
    steps: &[Matrix<T>],
) -> Result<BcdTrace<T>> {
    if steps.len() != schedule.len() {
        return arg(format!("{} preconditioners for {} blocks", steps.len(), schedule.len()));
    }
    if schedule.basis().iter().any(|e| e.len() != prompt.d()) {
        return arg("schedule basis does not match the prompt dimension");
    }
    let n = prompt.n();
    let basis = schedule.basis();
    let features: Vec<Vec<T>> = (0..n)
        .map(|i| {
            let x = prompt.x(i);
            basis.iter().map(|e| eval_monomial(e, &x)).collect()
        })
        .collect();
    let labels = prompt.labels();
    let inv_n = T::one() / T::of_usize(n);

    let mut w = vec![T::zero(); basis.len()];
    let mut residual = labels.clone();
    let mut iterates = vec![w.clone()];
    for (slots, gamma) in schedule.blocks().iter().zip(steps) {
        let s = slots.len();
        if gamma.shape() != (s, s) {
            return Err(Error::Shape {
                op: "bcd_iterates",
                lhs: gamma.shape(),
                rhs: (s, s),
            });
        }
        let grad: Vec<T> = slots
            .iter()
            .map(|slot| match slot {
                Some(k) => (0..n).fold(T::zero(), |acc, i| acc + residual[i] * features[i][*k]) * inv_n,
                None => T::zero(),
            })
            .collect();
        let delta = gamma.transpose().matvec(&grad);
        for (slot, dv) in slots.iter().zip(delta) {
            if let Some(k) = slot {
                w[*k] = w[*k] + dv;
            }
        }
        for i in 0..n {
            let f = features[i].iter().zip(&w).fold(T::zero(), |acc, (&p, &c)| acc + p * c);
            residual[i] = labels[i] + f;
        }
        iterates.push(w.clone());
    }
    Ok(BcdTrace {
        iterates,
        schedule: schedule.clone(),
    })
}
