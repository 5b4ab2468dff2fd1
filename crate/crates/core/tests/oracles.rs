use icl_core::numerics::linalg::Cholesky;
use icl_core::numerics::Matrix;
use icl_core::oracles::{
    best_linear_loss, block_loss_gradient, closed_form_block_loss, exact_moments, gaussian_moment, minimize_block_loss,
    quadratic_features, FeatureMap, Rational, SparsePolynomial,
};
use icl_core::scalar::Scalar;
use icl_core::tasks::{substream, Stream, TaskKind};
use proptest::prelude::*;

fn polynomial() -> impl Strategy<Value = SparsePolynomial<Rational>> {
    prop::collection::vec((prop::collection::vec(0u32..5, 3), -20i64..20), 0..6).prop_map(|terms| {
        let mut p = SparsePolynomial::zero(3);
        for (e, c) in terms {
            p.add_term(e, Rational::from_integer(c as i128));
        }
        p
    })
}

fn rational() -> impl Strategy<Value = Rational> {
    (-50i64..50, 1i64..20).prop_map(|(a, b)| Rational::new(a as i128, b as i128))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gaussian_expectation_is_linear(p in polynomial(), q in polynomial(), a in rational(), b in rational()) {
        let lhs = p.scale(&a).add(&q.scale(&b)).gaussian_expectation().unwrap();
        let rhs = a * p.gaussian_expectation().unwrap() + b * q.gaussian_expectation().unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn gaussian_expectation_factorises_over_coordinates(e in prop::collection::vec(0u32..9, 3)) {
        let p = SparsePolynomial::monomial(e.clone(), Rational::from_integer(1));
        let want: i64 = e.iter().map(|&k| gaussian_moment(k)).product();
        prop_assert_eq!(p.gaussian_expectation().unwrap(), Rational::from_integer(want as i128));
    }

    #[test]
    fn block_loss_is_midpoint_convex(seed in 0u64..10_000, n in 5usize..400) {
        let m = exact_moments(2, TaskKind::Quadratic, FeatureMap::Kernel).unwrap();
        let mut rng = substream(seed, Stream::Other(7));
        let mut g = || Matrix::from_fn(6, 6, |_, _| f64::standard_normal(&mut rng));
        let (a, b) = (g(), g());
        let mid = a.add(&b).scale(0.5);
        let la = closed_form_block_loss(&a, &m, n).unwrap();
        let lb = closed_form_block_loss(&b, &m, n).unwrap();
        let lm = closed_form_block_loss(&mid, &m, n).unwrap();
        prop_assert!(lm <= 0.5 * (la + lb) + 1e-10 * la.max(lb).max(1.0));
    }
}

#[test]
fn feature_moments_converge_to_the_exact_gram() {
    let d = 2;
    let exact = exact_moments(d, TaskKind::Quadratic, FeatureMap::Kernel)
        .unwrap()
        .lambda;
    let k = exact.rows();
    let mut rng = substream(2024, Stream::Inputs);
    let (mut sum, mut sq) = (vec![0.0; k * k], vec![0.0; k * k]);
    let mut drawn = 0usize;
    for target in [10_000usize, 100_000, 1_000_000] {
        while drawn < target {
            let x: Vec<f64> = (0..d).map(|_| f64::standard_normal(&mut rng)).collect();
            let u = quadratic_features(&x);
            for a in 0..k {
                for b in 0..k {
                    let v = u[a] * u[b];
                    sum[a * k + b] += v;
                    sq[a * k + b] += v * v;
                }
            }
            drawn += 1;
        }
        let t = drawn as f64;
        for a in 0..k {
            for b in 0..k {
                let mean = sum[a * k + b] / t;
                let var = (sq[a * k + b] / t - mean * mean) * t / (t - 1.0);
                let se = (var / t).sqrt();
                let diff = (mean - exact[(a, b)]).abs();
                assert!(
                    diff <= 3.0 * se + 1e-12,
                    "entry ({a},{b}) at {drawn}: |{mean} - {}| > 3 * {se}",
                    exact[(a, b)]
                );
            }
        }
    }
}

#[test]
fn optimum_is_stationary_and_beats_the_inverse_gram() {
    let m = exact_moments(2, TaskKind::Quadratic, FeatureMap::Kernel).unwrap();
    for n in [20, 200] {
        let opt = minimize_block_loss(&m, 2, n).unwrap();
        assert!(block_loss_gradient(&opt.gamma, &m, n).frobenius_norm() <= 1e-10);
        let inv = Cholesky::factor(&m.lambda).unwrap().inverse().scale(-1.0);
        assert!(opt.loss <= closed_form_block_loss(&inv, &m, n).unwrap());
        assert!(opt.loss >= best_linear_loss(&m).unwrap());
    }
}

#[test]
fn affine_baseline_matches_hand_value() {
    // Labels are quadratics in x with i.i.d. unit coefficients over the raw
    // monomials. The affine part is explained; each x_j^2 keeps variance 2
    // after removing its mean and each x_j x_k keeps variance 1.
    for d in 1..=4 {
        let m = exact_moments(d, TaskKind::Quadratic, FeatureMap::Affine).unwrap();
        let want = 2.0 * d as f64 + (d * (d - 1) / 2) as f64;
        let baseline = best_linear_loss(&m).unwrap();
        assert!((baseline - want).abs() < 1e-10, "d={d}: {baseline} vs {want}");
    }
}
