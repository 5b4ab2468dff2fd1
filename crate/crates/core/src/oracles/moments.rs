//! Feature/label moment sets and the closed-form loss of a single
//! gradient-descent attention layer on top of a fixed feature map.

use crate::error::{arg, Error, Result};
use crate::numerics::linalg::{spd_inverse, Cholesky};
use crate::numerics::{dot, Matrix};
use crate::oracles::features::{
    affine_features_symbolic, feature_count, monomial_basis, orthonormal_basis_features_symbolic,
    quadratic_features_symbolic, raw_monomial_basis, Rational,
};
use crate::oracles::{Coefficient, SparsePolynomial};
use crate::tasks::{cubic_support, monomials_up_to, TaskKind};

/// Moments of a feature vector `u` and label `v`.
///
/// For the exact path the label is `v = sum_k w_k psi_k(x)` with
/// `w ~ N(0, I)`, and `phi`, `sigma` and `label_power` are averaged over
/// `w`. For the empirical path (one fixed task) `sigma = xi xi^T`.
#[derive(Clone, Debug)]
pub struct MomentSet {
    /// `E[u u^T]`.
    pub lambda: Matrix<f64>,
    /// `Cov[u v]`.
    pub phi: Matrix<f64>,
    /// `E[u v]`.
    pub xi: Vec<f64>,
    /// `E[xi xi^T]`.
    pub sigma: Matrix<f64>,
    /// `E[v^2]`.
    pub label_power: f64,
    /// Set when the empirical feature second moment is rank deficient.
    pub warning: Option<String>,
}

impl MomentSet {
    pub fn dim(&self) -> usize {
        self.lambda.rows()
    }
}

/// Exact moments for features `u_a(x)` and label basis `psi_k(x)`.
pub fn exact_moments_from<C: Coefficient>(
    features: &[SparsePolynomial<C>],
    label_basis: &[SparsePolynomial<C>],
) -> Result<MomentSet> {
    let m = features.len();
    let mut lambda = Matrix::zeros(m, m);
    let mut outer = Matrix::zeros(m, m);
    let mut sigma = Matrix::zeros(m, m);
    let mut label_power = 0.0;
    let pairs: Vec<Vec<SparsePolynomial<C>>> = (0..m)
        .map(|a| {
            (0..m)
                .map(|b| {
                    if b < a {
                        SparsePolynomial::zero(0)
                    } else {
                        features[a].mul(&features[b])
                    }
                })
                .collect()
        })
        .collect();
    for a in 0..m {
        for b in a..m {
            let v = pairs[a][b].gaussian_expectation()?.to_f64();
            lambda[(a, b)] = v;
            lambda[(b, a)] = v;
        }
    }
    for psi in label_basis {
        let psi2 = psi.mul(psi);
        label_power += psi2.gaussian_expectation()?.to_f64();
        let cross: Vec<f64> = features
            .iter()
            .map(|u| Ok(u.mul(psi).gaussian_expectation()?.to_f64()))
            .collect::<Result<_>>()?;
        for a in 0..m {
            for b in a..m {
                let v = pairs[a][b].mul(&psi2).gaussian_expectation()?.to_f64();
                outer[(a, b)] += v;
                let s = cross[a] * cross[b];
                sigma[(a, b)] += s;
                if a != b {
                    outer[(b, a)] += v;
                    sigma[(b, a)] += s;
                }
            }
        }
    }
    Ok(MomentSet {
        lambda,
        phi: outer.sub(&sigma),
        xi: vec![0.0; m],
        sigma,
        label_power,
        warning: None,
    })
}

/// Feature maps available to [`exact_moments`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureMap {
    /// `(1, x, x_j^2 - 1, x_j x_k)`.
    Kernel,
    /// Kernel features with the squared terms divided by `sqrt 2`.
    Orthonormal,
    /// `(1, x)`.
    Affine,
}

pub fn label_basis(d: usize, task: TaskKind) -> Result<Vec<SparsePolynomial<Rational>>> {
    Ok(match task {
        TaskKind::Quadratic => raw_monomial_basis(d),
        TaskKind::Cubic => {
            if d != 4 {
                return arg("the cubic task is defined for d = 4");
            }
            monomial_basis(&cubic_support())
        }
        TaskKind::Polynomial { degree } => monomial_basis(&monomials_up_to(d, degree)),
    })
}

pub fn exact_moments(d: usize, task: TaskKind, features: FeatureMap) -> Result<MomentSet> {
    let basis = label_basis(d, task)?;
    match features {
        FeatureMap::Kernel => exact_moments_from(&quadratic_features_symbolic::<Rational>(d), &basis),
        FeatureMap::Affine => exact_moments_from(&affine_features_symbolic::<Rational>(d), &basis),
        FeatureMap::Orthonormal => {
            let basis: Vec<SparsePolynomial<f64>> = basis.iter().map(|p| p.map_coefficients(|c| c.to_f64())).collect();
            exact_moments_from(&orthonormal_basis_features_symbolic(d), &basis)
        }
    }
}

/// Sample moments of `(u, v)` pairs drawn for one fixed task.
pub fn estimate_moments(samples: &[(Vec<f64>, f64)]) -> Result<MomentSet> {
    if samples.len() < 2 {
        return arg("estimate_moments needs at least two samples");
    }
    let m = samples[0].0.len();
    if samples.iter().any(|(u, _)| u.len() != m) {
        return arg("feature vectors differ in length");
    }
    let count = samples.len() as f64;
    let mut lambda = Matrix::zeros(m, m);
    let mut xi = vec![0.0; m];
    let mut label_power = 0.0;
    for (u, v) in samples {
        for a in 0..m {
            xi[a] += u[a] * v;
            for b in 0..m {
                lambda[(a, b)] += u[a] * u[b];
            }
        }
        label_power += v * v;
    }
    lambda.scale_assign(1.0 / count);
    xi.iter_mut().for_each(|x| *x /= count);
    label_power /= count;
    let mut phi = Matrix::zeros(m, m);
    for (u, v) in samples {
        let c: Vec<f64> = (0..m).map(|a| u[a] * v - xi[a]).collect();
        for a in 0..m {
            for b in 0..m {
                phi[(a, b)] += c[a] * c[b];
            }
        }
    }
    phi.scale_assign(1.0 / (count - 1.0));
    let col = Matrix::column_vector(&xi);
    let sigma = col.matmul_nt(&col);
    let warning = Cholesky::factor(&lambda)
        .err()
        .map(|e| format!("feature second moment is rank deficient: {e}"));
    Ok(MomentSet {
        lambda,
        phi,
        xi,
        sigma,
        label_power,
        warning,
    })
}

/// Best linear predictor of `-v` from `u`.
#[derive(Clone, Debug)]
pub struct LinearFit {
    pub beta: Vec<f64>,
    /// `E[(<beta, u> + v)^2]`.
    pub loss: f64,
    pub condition: f64,
}

/// `beta* = -Lambda^{-1} c`, attaining `E[v^2] - c^T Lambda^{-1} c`.
pub fn best_linear_fit(lambda: &Matrix<f64>, crossmoment: &[f64], label_power: f64) -> Result<LinearFit> {
    if crossmoment.len() != lambda.rows() {
        return arg("cross moment length does not match the second-moment matrix");
    }
    let inv = spd_inverse(lambda)?;
    let sol = inv.inverse.matvec(crossmoment);
    Ok(LinearFit {
        beta: sol.iter().map(|x| -x).collect(),
        loss: label_power - dot(crossmoment, &sol),
        condition: inv.condition,
    })
}

/// Task-averaged loss of the best linear predictor: `E[v^2] - tr(Lambda^{-1} Sigma)`.
pub fn best_linear_loss(m: &MomentSet) -> Result<f64> {
    let inv = Cholesky::factor(&m.lambda)?.inverse();
    Ok(m.label_power - inv.matmul(&m.sigma).trace())
}

/// Expected squared error of the attention prediction
/// `(1/n) sum_i v_i u_i^T Gamma u_q`:
/// `min_beta + (1/n) tr(Gamma Lambda Gamma^T Phi) + tr(A^T Lambda A Sigma)`
/// with `A = Gamma^T + Lambda^{-1}`.
pub fn closed_form_block_loss(gamma: &Matrix<f64>, m: &MomentSet, n: usize) -> Result<f64> {
    let k = m.dim();
    if gamma.shape() != (k, k) {
        return Err(Error::Shape {
            op: "closed_form_block_loss",
            lhs: gamma.shape(),
            rhs: (k, k),
        });
    }
    if n == 0 {
        return arg("n must be positive");
    }
    let inv = Cholesky::factor(&m.lambda)?.inverse();
    let floor = best_linear_loss(m)?.max(0.0);
    let variance = gamma.matmul(&m.lambda).matmul_nt(gamma).matmul(&m.phi).trace() / n as f64;
    let a = gamma.transpose().add(&inv);
    let bias = a.matmul_tn(&m.lambda.matmul(&a)).matmul(&m.sigma).trace();
    Ok(floor + variance + bias)
}

/// Numerically optimal preconditioner for one attention layer on top of the
/// kernel features.
#[derive(Clone, Debug)]
pub struct GammaOptimum {
    pub gamma: Matrix<f64>,
    /// `||Gamma* + Lambda^{-1}||_F`.
    pub distance: f64,
    pub bound: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub loss: f64,
}

/// `n^{-1/2} sqrt(((d+2)(d+1)+d) / (d+2-sqrt(d^2+4d)))`.
pub fn optimal_gamma_bound(d: usize, n: usize) -> f64 {
    let d = d as f64;
    let num = (d + 2.0) * (d + 1.0) + d;
    let den = d + 2.0 - (d * d + 4.0 * d).sqrt();
    (num / den).sqrt() / (n as f64).sqrt()
}

/// Gradient of [`closed_form_block_loss`] in `Gamma`:
/// `(2/n) Phi Gamma Lambda + 2 Sigma Gamma Lambda + 2 Sigma`.
pub fn block_loss_gradient(gamma: &Matrix<f64>, m: &MomentSet, n: usize) -> Matrix<f64> {
    let h = hessian_apply(gamma, m, n);
    h.add(&m.sigma.scale(2.0))
}

fn hessian_apply(x: &Matrix<f64>, m: &MomentSet, n: usize) -> Matrix<f64> {
    let left = m.phi.scale(2.0 / n as f64).add(&m.sigma.scale(2.0));
    left.matmul(x).matmul(&m.lambda)
}

/// Minimises the task-averaged closed-form loss over `Gamma` by conjugate
/// gradients on the (convex quadratic) objective.
pub fn minimize_block_loss_over_gamma(d: usize, n: usize) -> Result<GammaOptimum> {
    let m = exact_moments(d, TaskKind::Quadratic, FeatureMap::Kernel)?;
    minimize_block_loss(&m, d, n)
}

pub fn minimize_block_loss(m: &MomentSet, d: usize, n: usize) -> Result<GammaOptimum> {
    let k = m.dim();
    let frob = |a: &Matrix<f64>, b: &Matrix<f64>| dot(a.as_slice(), b.as_slice());
    let mut x = Matrix::zeros(k, k);
    let mut r = m.sigma.scale(-2.0);
    let mut p = r.clone();
    let mut rr = frob(&r, &r);
    let budget = 20 * k * k;
    let mut iterations = 0;
    while iterations < budget && rr.sqrt() > 1e-13 {
        let hp = hessian_apply(&p, m, n);
        let alpha = rr / frob(&p, &hp);
        x.add_assign(&p.scale(alpha));
        r = r.sub(&hp.scale(alpha));
        let next = frob(&r, &r);
        p = r.add(&p.scale(next / rr));
        rr = next;
        iterations += 1;
    }
    let grad_norm = block_loss_gradient(&x, m, n).frobenius_norm();
    if grad_norm > 1e-10 {
        return Err(Error::Convergence { grad_norm, iterations });
    }
    let inv = Cholesky::factor(&m.lambda)?.inverse();
    let distance = x.add(&inv).frobenius_norm();
    let loss = closed_form_block_loss(&x, m, n)?;
    Ok(GammaOptimum {
        gamma: x,
        distance,
        bound: optimal_gamma_bound(d, n),
        grad_norm,
        iterations,
        loss,
    })
}

/// Loss constant claimed for the kernel construction at `Gamma = -Lambda^{-1}`:
/// `((d+2)(d+1)+d) / (2n)`.
pub fn stated_construction_loss(d: usize, n: usize) -> f64 {
    let d = d as f64;
    ((d + 2.0) * (d + 1.0) + d) / (2.0 * n as f64)
}

/// Exact task-averaged loss of the kernel construction with
/// `Gamma = -Lambda^{-1}` at context length `n`.
pub fn exact_construction_loss(d: usize, n: usize) -> Result<f64> {
    let m = exact_moments(d, TaskKind::Quadratic, FeatureMap::Kernel)?;
    let gamma = Cholesky::factor(&m.lambda)?.inverse().scale(-1.0);
    closed_form_block_loss(&gamma, &m, n)
}

/// Rank lower bound for one block whose attention sees `dbar` coordinates.
pub fn embed_lower_bound(d: usize, dbar: usize) -> f64 {
    feature_count(d).saturating_sub(dbar) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_lambda_and_sigma_d1() {
        let m = exact_moments(1, TaskKind::Quadratic, FeatureMap::Kernel).unwrap();
        assert_eq!(m.lambda, Matrix::diag(&[1.0, 1.0, 2.0]));
        assert_eq!(m.label_power, 5.0);
    }

    #[test]
    fn label_power_matches_hand_count() {
        let m = exact_moments(4, TaskKind::Quadratic, FeatureMap::Kernel).unwrap();
        assert!((m.label_power - 23.0).abs() < 1e-12);
        let a = exact_moments(4, TaskKind::Quadratic, FeatureMap::Affine).unwrap();
        assert!((best_linear_loss(&a).unwrap() - 14.0).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_trivial_cases() {
        let lambda = Matrix::diag(&[1.0, 2.0]);
        let fit = best_linear_fit(&lambda, &[2.0, 0.0], 4.0).unwrap();
        assert_eq!(fit.beta, vec![-2.0, 0.0]);
        assert!(fit.loss.abs() < 1e-15);
        let zero = best_linear_fit(&lambda, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(zero.beta, vec![0.0, 0.0]);
        assert!(best_linear_fit(&Matrix::zeros(2, 2), &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn bound_at_d4_n200() {
        assert!((optimal_gamma_bound(4, 200) - 0.704).abs() < 5e-4);
    }

    #[test]
    fn lower_bound_counts() {
        assert_eq!(embed_lower_bound(4, 12), 3.0);
        assert_eq!(embed_lower_bound(3, 12), 0.0);
        assert_eq!(embed_lower_bound(2, 40), 0.0);
    }

    #[test]
    fn optimum_matches_closed_form_solution() {
        let m = exact_moments(2, TaskKind::Quadratic, FeatureMap::Kernel).unwrap();
        let opt = minimize_block_loss(&m, 2, 100).unwrap();
        let lhs = m.phi.scale(0.01).add(&m.sigma);
        let lam_inv = Cholesky::factor(&m.lambda).unwrap().inverse();
        let want = Cholesky::factor(&lhs)
            .unwrap()
            .solve(&m.sigma.matmul(&lam_inv))
            .scale(-1.0);
        assert!(opt.gamma.max_abs_diff(&want) < 1e-9);
    }
}
