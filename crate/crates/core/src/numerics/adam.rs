use crate::error::{Error, Result};
use crate::numerics::{GradientRecord, Matrix, ParameterSet};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam without weight decay.
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Matrix<T>>,
    second: Vec<Matrix<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParameterSet<T>) -> Self {
        let zeros = || {
            params
                .values()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to the non-frozen entries of `params`.
    pub fn step(&mut self, params: &mut ParameterSet<T>, grads: &GradientRecord<T>) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Argument(format!(
                "adam state holds {} buffers, params {}, grads {}",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for i in 0..params.len() {
            if self.first[i].shape() != params.get(i).shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: self.first[i].shape(),
                    rhs: params.get(i).shape(),
                });
            }
            if let Some(g) = grads.get(i) {
                if g.shape() != params.get(i).shape() {
                    return Err(Error::Shape {
                        op: "adam_step",
                        lhs: g.shape(),
                        rhs: params.get(i).shape(),
                    });
                }
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::of_f64(c.beta1);
        let b2 = T::of_f64(c.beta2);
        let lr = T::of_f64(c.learning_rate);
        let eps = T::of_f64(c.epsilon);
        let corr1 = T::one() - b1.powi(t);
        let corr2 = T::one() - b2.powi(t);

        for i in 0..params.len() {
            if params.is_frozen(i) {
                continue;
            }
            let Some(g) = grads.get(i) else { continue };
            let m = self.first[i].as_mut_slice();
            let v = self.second[i].as_mut_slice();
            let w = params.get_mut(i).as_mut_slice();
            for k in 0..w.len() {
                let gk = g.as_slice()[k];
                m[k] = b1 * m[k] + (T::one() - b1) * gk;
                v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
                let m_hat = m[k] / corr1;
                let v_hat = v[k] / corr2;
                w[k] = w[k] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(x: f64) -> ParameterSet<f64> {
        let mut p = ParameterSet::new();
        p.insert("w", Matrix::scalar(x)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut params = scalar_params(0.7);
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        let zero = GradientRecord::zeros_like(&params);
        for _ in 0..5 {
            adam.step(&mut params, &zero).unwrap();
        }
        assert_eq!(params.get(0)[(0, 0)], 0.7);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = scalar_params(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        let g = GradientRecord::from_parts(vec![Some(Matrix::scalar(1.0))]);
        adam.step(&mut params, &g).unwrap();
        let moved = 1.0 - params.get(0)[(0, 0)];
        assert!((moved - 1e-3).abs() < 1e-10, "moved {moved}");
    }

    #[test]
    fn frozen_parameter_is_untouched() {
        let mut params = scalar_params(1.0);
        params.set_frozen(0, true);
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        let g = GradientRecord::from_parts(vec![Some(Matrix::scalar(5.0))]);
        adam.step(&mut params, &g).unwrap();
        assert_eq!(params.get(0)[(0, 0)], 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut params = scalar_params(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        let g = GradientRecord::from_parts(vec![Some(Matrix::zeros(2, 1))]);
        assert!(adam.step(&mut params, &g).is_err());
    }
}
