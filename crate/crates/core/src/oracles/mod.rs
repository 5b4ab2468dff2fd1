//! Independent reference computations: exact Gaussian moments of
//! polynomials, feature maps, moment sets, closed-form losses and the
//! descent-based predictors the transformer constructions are checked
//! against.

mod descent;
mod features;
mod moments;
mod polynomial;

pub use descent::{bcd_iterates, eval_monomial, kernel_gd_predict, BcdTrace};
pub use features::{
    affine_features_symbolic, coefficient_second_moment, diagonal_pair_indices, exact_feature_gram, feature_count,
    kernel_from_raw, monomial_basis, orthonormal_basis_features, orthonormal_basis_features_symbolic, pair_exponents,
    quadratic_features, quadratic_features_symbolic, raw_monomial_basis, Normalization, Rational,
};
pub use moments::{
    best_linear_fit, best_linear_loss, block_loss_gradient, closed_form_block_loss, embed_lower_bound,
    estimate_moments, exact_construction_loss, exact_moments, exact_moments_from, label_basis, minimize_block_loss,
    minimize_block_loss_over_gamma, optimal_gamma_bound, stated_construction_loss, FeatureMap, GammaOptimum, LinearFit,
    MomentSet,
};
pub use polynomial::{gaussian_moment, Coefficient, Exponents, SparsePolynomial, MAX_MOMENT_DEGREE};
