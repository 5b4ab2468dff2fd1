use icl_core::constructions::{
    bcd_schedule, bcd_transformer, polynomial_cycle, quadratic_kernel_weights, sparsify_bilinear, BlockSchedule,
};
use icl_core::model::{
    bilinear_forward, is_sparse_pattern, predict, transformer_forward, BilinearWeights, Layer, ModelKind,
    TransformerModel,
};
use icl_core::numerics::Matrix;
use icl_core::oracles::{bcd_iterates, monomial_basis, quadratic_features, Rational, SparsePolynomial};
use icl_core::scalar::Scalar;
use icl_core::tasks::{sample_prompt, substream, Stream, TaskKind};
use proptest::prelude::*;

fn random_model(kind: ModelKind, d: usize, dbar: usize, depth: usize, seed: u64) -> TransformerModel<f64> {
    let mut rng = substream(seed, Stream::Init);
    TransformerModel::random(kind, d, dbar, depth, 0.3, &mut rng).unwrap()
}

fn zero_query_reads(model: &TransformerModel<f64>) -> TransformerModel<f64> {
    let layers = model
        .layers()
        .iter()
        .cloned()
        .map(|layer| match layer {
            Layer::Attention(mut a) => {
                let last = a.q.rows() - 1;
                for k in 0..=last {
                    a.q[(last, k)] = 0.0;
                    a.q[(k, last)] = 0.0;
                }
                Layer::Attention(a)
            }
            other => other,
        })
        .collect();
    TransformerModel::new(model.kind(), model.d(), model.dbar(), layers).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn query_label_slot_only_passes_through(seed in 0u64..10_000, depth in 1usize..4, v in -5.0f64..5.0) {
        let (d, dbar) = (2, 4);
        let model = zero_query_reads(&random_model(ModelKind::Linear, d, dbar, depth, seed));
        let mut rng = substream(seed, Stream::Task);
        let prompt = sample_prompt::<f64, _>(TaskKind::Quadratic, d, dbar, 12, &mut rng).unwrap();
        let base = predict(&model, prompt.clone().with_query_slot(0.0).z()).unwrap();
        let moved = predict(&model, prompt.with_query_slot(v).z()).unwrap();
        prop_assert!((moved - base - v).abs() <= 1e-10 * base.abs().max(1.0));
    }

    #[test]
    fn context_columns_ignore_the_query(seed in 0u64..10_000) {
        let (d, dbar) = (2, 6);
        let model = random_model(ModelKind::Bilinear, d, dbar, 4, seed);
        let mut rng = substream(seed, Stream::Task);
        let prompt = sample_prompt::<f64, _>(TaskKind::Quadratic, d, dbar, 10, &mut rng).unwrap();
        let other = prompt.with_query_input(&[3.0, -1.0]).unwrap().with_query_slot(7.0);
        let a = transformer_forward(&model, prompt.z()).unwrap();
        let b = transformer_forward(&model, other.z()).unwrap();
        for (za, zb) in a.iter().zip(&b) {
            prop_assert_eq!(za.slice(0, 0, dbar + 1, 10), zb.slice(0, 0, dbar + 1, 10));
        }
    }

    #[test]
    fn bilinear_layer_keeps_the_label_row(seed in 0u64..10_000) {
        let model = random_model(ModelKind::Bilinear, 3, 7, 2, seed);
        let Layer::Bilinear(w) = &model.layers()[0] else { unreachable!() };
        let mut rng = substream(seed, Stream::Task);
        let prompt = sample_prompt::<f64, _>(TaskKind::Quadratic, 3, 7, 9, &mut rng).unwrap();
        let out = bilinear_forward(prompt.z(), w).unwrap();
        prop_assert_eq!(out.row(7), prompt.z().row(7));
    }

    #[test]
    fn linear_prediction_is_affine_in_the_query(seed in 0u64..10_000, t in -2.0f64..2.0) {
        let (d, dbar) = (3, 5);
        let model = random_model(ModelKind::Linear, d, dbar, 3, seed);
        let mut rng = substream(seed, Stream::Task);
        let prompt = sample_prompt::<f64, _>(TaskKind::Quadratic, d, dbar, 15, &mut rng).unwrap();
        let (a, b) = ([0.3, -1.2, 0.8], [-0.5, 0.4, 1.9]);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let f = |x: &[f64]| predict(&model, prompt.with_query_input(x).unwrap().z()).unwrap();
        let (fa, fb, fm) = (f(&a), f(&b), f(&mix));
        let want = t * fa + (1.0 - t) * fb;
        prop_assert!((fm - want).abs() <= 1e-9 * want.abs().max(1.0));
    }

    #[test]
    fn prediction_is_stateless(seed in 0u64..10_000) {
        let model = random_model(ModelKind::BilinearSparse, 2, 6, 4, seed);
        let snapshot = model.clone();
        let mut rng = substream(seed, Stream::Task);
        let p = sample_prompt::<f64, _>(TaskKind::Quadratic, 2, 6, 8, &mut rng).unwrap();
        let q = sample_prompt::<f64, _>(TaskKind::Quadratic, 2, 6, 8, &mut rng).unwrap();
        let first = predict(&model, p.z()).unwrap();
        predict(&model, q.z()).unwrap();
        prop_assert_eq!(predict(&model, p.z()).unwrap().to_bits(), first.to_bits());
        prop_assert_eq!(model, snapshot);
    }
}

#[test]
fn kernel_layer_produces_quadratic_features() {
    for d in 1..=4 {
        let w = quadratic_kernel_weights::<f64>(d);
        let dbar = w.dbar();
        let mut rng = substream(d as u64, Stream::Inputs);
        let n = 1000;
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| f64::standard_normal(&mut rng)).collect())
            .collect();
        let z = Matrix::from_fn(dbar + 1, n + 1, |i, j| match (i, j) {
            (_, j) if j == n => 0.0,
            (0, _) => 1.0,
            (i, j) if i <= d => xs[j][i - 1],
            _ => 0.0,
        });
        let out = bilinear_forward(&z, &w).unwrap();
        for (j, x) in xs.iter().enumerate() {
            let want = quadratic_features(x);
            for (i, v) in want.iter().enumerate() {
                assert!((out[(i, j)] - v).abs() <= 1e-12 * v.abs().max(1.0), "d={d} row {i}");
            }
        }
    }
}

#[test]
fn bcd_stack_tracks_block_coordinate_descent() {
    for d in [2, 3] {
        let dbar = 2 * d + 1;
        for blocks in 1..=2 * d {
            let mut rng = substream((d * 10 + blocks) as u64, Stream::Other(1));
            let gammas: Vec<Matrix<f64>> = (0..blocks)
                .map(|_| Matrix::from_fn(dbar, dbar, |_, _| 0.2 * f64::standard_normal(&mut rng)))
                .collect();
            let model = bcd_transformer(d, blocks, &gammas).unwrap();
            let schedule = bcd_schedule(d, blocks);
            assert_eq!(schedule.is_complete(), blocks >= d);
            for _ in 0..5 {
                let prompt = sample_prompt::<f64, _>(TaskKind::Quadratic, d, dbar, 20, &mut rng).unwrap();
                let trace = bcd_iterates(&prompt, &schedule, &gammas).unwrap();
                let states = transformer_forward(&model, prompt.z()).unwrap();
                for l in 1..=blocks {
                    let z = &states[2 * l];
                    for (i, want) in trace.context_labels(l, &prompt).iter().enumerate() {
                        assert!((z[(dbar, i)] - want).abs() / want.abs().max(1.0) < 1e-9);
                    }
                    let want = trace.predict(l, &prompt.x_query());
                    assert!((z[(dbar, prompt.n())] - want).abs() / want.abs().max(1.0) < 1e-9);
                }
            }
        }
    }
}

#[test]
fn bcd_leaves_off_block_coordinates_untouched() {
    let d = 3;
    let blocks = 4;
    let schedule = bcd_schedule(d, blocks);
    let mut rng = substream(5, Stream::Other(2));
    let gammas: Vec<Matrix<f64>> = (0..blocks)
        .map(|_| Matrix::from_fn(7, 7, |_, _| 0.3 * f64::standard_normal(&mut rng)))
        .collect();
    let prompt = sample_prompt::<f64, _>(TaskKind::Quadratic, d, 7, 25, &mut rng).unwrap();
    let trace = bcd_iterates(&prompt, &schedule, &gammas).unwrap();
    for l in 0..blocks {
        let live = schedule.indices(l);
        for k in 0..schedule.total() {
            if !live.contains(&k) {
                assert_eq!(trace.iterates[l + 1][k].to_bits(), trace.iterates[l][k].to_bits());
            }
        }
    }
}

type Poly = SparsePolynomial<Rational>;

fn exact(v: f64) -> Rational {
    assert_eq!(v.fract(), 0.0);
    Rational::from_integer(v as i128)
}

fn symbolic_layer(column: &[Poly], w: &BilinearWeights<f64>) -> Vec<Poly> {
    let nvars = column[0].nvars();
    let apply = |m: &Matrix<f64>, r: usize| {
        (0..column.len()).fold(Poly::zero(nvars), |acc, c| {
            if m[(r, c)] == 0.0 {
                acc
            } else {
                acc.add(&column[c].scale(&exact(m[(r, c)])))
            }
        })
    };
    (0..column.len())
        .map(|r| column[r].add(&apply(&w.w0, r).mul(&apply(&w.w1, r))))
        .collect()
}

fn input_column(d: usize, dbar: usize) -> Vec<Poly> {
    (0..dbar)
        .map(|r| match r {
            0 => Poly::one(d),
            r if r <= d => Poly::variable(d, r - 1),
            _ => Poly::zero(d),
        })
        .collect()
}

fn check_cycle(d: usize, p: u32) {
    let (_, weights, schedule): (_, Vec<BilinearWeights<f64>>, BlockSchedule) = polynomial_cycle(d, p).unwrap();
    let basis = monomial_basis::<Rational>(schedule.basis());
    let mut column = input_column(d, 2 * d + 1);
    let mut seen = std::collections::BTreeSet::new();
    for (w, slots) in weights.iter().zip(schedule.blocks()) {
        column = symbolic_layer(&column, w);
        for (row, slot) in slots.iter().enumerate() {
            match slot {
                Some(k) => {
                    assert_eq!(column[row], basis[*k], "d={d} p={p} row {row}");
                    seen.insert(*k);
                }
                None => assert!(column[row].is_zero()),
            }
        }
    }
    assert_eq!(seen.len(), schedule.total());
    assert!(schedule.basis().iter().all(|e| e.iter().sum::<u32>() <= p));
}

#[test]
fn polynomial_cycle_visits_every_monomial() {
    for (d, p) in [(1, 2), (2, 3), (3, 3), (2, 4), (4, 3)] {
        check_cycle(d, p);
    }
}

#[test]
fn sparse_layers_keep_scratch_quadratic() {
    let (d, dbar) = (2, 6);
    let model = random_model(ModelKind::Bilinear, d, dbar, 4, 11);
    let to_int = |w: &BilinearWeights<f64>| BilinearWeights {
        w0: w.w0.map(|v| (v * 10.0).round()),
        w1: w.w1.map(|v| (v * 10.0).round()),
    };
    let dense: Vec<BilinearWeights<f64>> = model
        .layers()
        .iter()
        .filter_map(|l| match l {
            Layer::Bilinear(w) => Some(to_int(w)),
            _ => None,
        })
        .collect();
    let sparse: Vec<BilinearWeights<f64>> = dense.iter().map(|w| sparsify_bilinear(w, d).unwrap()).collect();
    assert!(sparse
        .iter()
        .all(|w| is_sparse_pattern(&w.w0, d) && is_sparse_pattern(&w.w1, d)));
    let run = |ws: &[BilinearWeights<f64>]| ws.iter().fold(input_column(d, dbar), |c, w| symbolic_layer(&c, w));
    let s = run(&sparse);
    assert!(s.iter().all(|poly| poly.degree() <= 2));
    assert!(s[..=d].iter().zip(input_column(d, dbar)).all(|(a, b)| *a == b));
    assert!(run(&dense).iter().any(|poly| poly.degree() > 2));
}
