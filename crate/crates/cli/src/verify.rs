//! Quick invariant suites behind `icl-lab verify`.

use std::fmt;

use icl_core::constructions::{bcd_schedule, bcd_transformer, inverse_gram_block, kernel_block};
use icl_core::model::{icl_loss, predict, transformer_forward, ModelKind, TransformerModel};
use icl_core::numerics::linalg::{symmetric_eigen, Cholesky};
use icl_core::numerics::{finite_diff_grad, Matrix, ParameterSet};
use icl_core::oracles::{
    bcd_iterates, best_linear_loss, closed_form_block_loss, coefficient_second_moment, embed_lower_bound,
    exact_construction_loss, exact_feature_gram, exact_moments, minimize_block_loss_over_gamma,
    orthonormal_basis_features_symbolic, stated_construction_loss, FeatureMap, Normalization,
};
use icl_core::tasks::{sample_prompt, sample_prompt_batch, smat, substream, svec, svec_len, Stream, TaskKind};
use icl_core::training::{batch_gradient, monte_carlo_loss};
use icl_core::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Category {
    Numerics,
    Orthonormality,
    Spectra,
    ClosedFormLoss,
    BcdEquivalence,
    LowerBounds,
    ConstructionLoss,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Numerics,
        Category::Orthonormality,
        Category::Spectra,
        Category::ClosedFormLoss,
        Category::BcdEquivalence,
        Category::LowerBounds,
        Category::ConstructionLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Numerics => "numerics",
            Category::Orthonormality => "orthonormality",
            Category::Spectra => "spectra",
            Category::ClosedFormLoss => "lemma-c1",
            Category::BcdEquivalence => "theorem-4-1",
            Category::LowerBounds => "lower-bounds",
            Category::ConstructionLoss => "construction-loss",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub category: Category,
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
    pub note: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "check={}/{} status={} value={:.6e} limit={:.6e}",
            self.category.name(),
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.value,
            self.limit
        )?;
        if !self.note.is_empty() {
            write!(f, " note=\"{}\"", self.note)?;
        }
        Ok(())
    }
}

struct Suite {
    category: Category,
    out: Vec<CheckResult>,
}

impl Suite {
    fn below(&mut self, name: impl Into<String>, value: f64, limit: f64) {
        self.push(name, value <= limit, value, limit, String::new());
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, value: f64, limit: f64, note: String) {
        self.out.push(CheckResult {
            category: self.category,
            name: name.into(),
            passed: passed && value.is_finite(),
            value,
            limit,
            note,
        });
    }

    fn error(&mut self, name: impl Into<String>, e: impl fmt::Display) {
        self.push(name, false, f64::NAN, f64::NAN, e.to_string());
    }
}

/// Runs the requested suites in the given order. Failures are reported in
/// the returned list, never raised.
pub fn run_verify(categories: &[Category]) -> Vec<CheckResult> {
    let mut all = Vec::new();
    for &category in categories {
        let mut suite = Suite {
            category,
            out: Vec::new(),
        };
        match category {
            Category::Numerics => numerics(&mut suite),
            Category::Orthonormality => orthonormality(&mut suite),
            Category::Spectra => spectra(&mut suite),
            Category::ClosedFormLoss => closed_form_loss(&mut suite),
            Category::BcdEquivalence => bcd_equivalence(&mut suite),
            Category::LowerBounds => lower_bounds(&mut suite),
            Category::ConstructionLoss => construction_loss(&mut suite),
        }
        all.extend(suite.out);
    }
    all
}

fn numerics(s: &mut Suite) {
    let mut rng = substream(11, Stream::Other(1));
    let a = Matrix::<f64>::from_fn(5, 5, |_, _| f64::standard_normal(&mut rng));
    let sym = a.add(&a.transpose());
    match svec(&sym).and_then(|v| smat(&v)) {
        Ok(back) => s.below("svec-round-trip", back.max_abs_diff(&sym), 1e-15),
        Err(e) => s.error("svec-round-trip", e),
    }

    let spd = a.matmul_nt(&a).add(&Matrix::identity(5));
    match Cholesky::factor(&spd) {
        Ok(c) => s.below(
            "cholesky-inverse",
            spd.matmul(&c.inverse()).max_abs_diff(&Matrix::identity(5)),
            1e-10,
        ),
        Err(e) => s.error("cholesky-inverse", e),
    }

    match gradient_check() {
        Ok(err) => s.below("autodiff-vs-finite-difference", err, 1e-5),
        Err(e) => s.error("autodiff-vs-finite-difference", e),
    }
}

fn gradient_check() -> icl_core::Result<f64> {
    let mut init = substream(12, Stream::Init);
    let model = TransformerModel::<f64>::random(ModelKind::Bilinear, 2, 5, 4, 0.3, &mut init)?;
    let mut data = substream(12, Stream::Task);
    let batch = sample_prompt_batch(TaskKind::Quadratic, 2, 5, 10, 4, &mut data)?;
    let params = model.parameters();
    let (_, auto) = batch_gradient(&model, &params, &batch)?;
    let loss = |p: &ParameterSet<f64>| {
        let mut m = model.clone();
        m.set_parameters(p).expect("same layout");
        icl_loss(&m, &batch).expect("nonempty batch")
    };
    let fd = finite_diff_grad(loss, &params, 1e-5)?;
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let (a, f) = (auto.get(i).expect("trainable"), fd.get(i).expect("trainable"));
        for (x, y) in a.as_slice().iter().zip(f.as_slice()) {
            worst = worst.max((x - y).abs() / x.abs().max(y.abs()).max(1e-3));
        }
    }
    Ok(worst)
}

fn orthonormality(s: &mut Suite) {
    for d in 1..=5 {
        let name = format!("gram-identity-d{d}");
        match exact_feature_gram(&orthonormal_basis_features_symbolic(d)) {
            Ok(g) => s.below(name, g.max_abs_diff(&Matrix::identity(g.rows())), 1e-12),
            Err(e) => s.error(name, e),
        }
    }
}

/// Sorted spectrum of the coefficient second moment predicted in closed form.
pub fn closed_form_spectrum(d: usize, normalization: Normalization) -> Vec<f64> {
    let df = d as f64;
    let mut values = vec![1.0; svec_len(d + 1) - (d + 1)];
    match normalization {
        Normalization::Raw => {
            let root = (df * df + 4.0 * df).sqrt();
            values.push(0.5 * (df + 2.0 + root));
            values.push(0.5 * (df + 2.0 - root));
            values.extend(std::iter::repeat(1.0).take(d - 1));
        }
        Normalization::Orthonormal => {
            values.push(df + 2.0);
            values.push(1.0);
            values.extend(std::iter::repeat(2.0).take(d - 1));
        }
    }
    values.sort_by(f64::total_cmp);
    values
}

fn spectra(s: &mut Suite) {
    for d in 2..=4 {
        for (label, norm) in [("raw", Normalization::Raw), ("orthonormal", Normalization::Orthonormal)] {
            let name = format!("{label}-d{d}");
            match symmetric_eigen(&coefficient_second_moment(d, norm)) {
                Ok(eig) => {
                    let want = closed_form_spectrum(d, norm);
                    let err = eig
                        .values
                        .iter()
                        .zip(&want)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    s.below(name, err, 1e-10);
                }
                Err(e) => s.error(name, e),
            }
        }
    }
}

fn closed_form_loss(s: &mut Suite) {
    let (d, n, prompts) = (2, 50, 40_000);
    let run = |seed: u64| -> icl_core::Result<(f64, f64, f64)> {
        let m = exact_moments(d, TaskKind::Quadratic, FeatureMap::Kernel)?;
        let inv = Cholesky::factor(&m.lambda)?.inverse();
        let mut rng = substream(seed, Stream::Other(2));
        let k = m.dim();
        let noise = Matrix::from_fn(k, k, |_, _| 0.1 * f64::standard_normal(&mut rng));
        let gamma = inv.scale(-1.0).add(&noise);
        let want = closed_form_block_loss(&gamma, &m, n)?;
        let model = kernel_block(d, &gamma)?;
        let mc = monte_carlo_loss(&model, TaskKind::Quadratic, n, prompts, &mut rng)?;
        Ok((mc.mean, mc.stderr, want))
    };
    for seed in 0..2 {
        let name = format!("closed-form-vs-monte-carlo-{seed}");
        match run(seed) {
            Ok((mean, se, want)) => s.push(
                name,
                (mean - want).abs() <= 3.0 * se,
                (mean - want).abs() / se,
                3.0,
                format!("mc={mean:.4} closed_form={want:.4} se={se:.4}"),
            ),
            Err(e) => s.error(name, e),
        }
    }
    for (d, n) in [(2, 200), (3, 800)] {
        let name = format!("optimal-gamma-bound-d{d}-n{n}");
        match minimize_block_loss_over_gamma(d, n) {
            Ok(opt) => s.below(name, opt.distance, opt.bound),
            Err(e) => s.error(name, e),
        }
    }
}

fn bcd_equivalence(s: &mut Suite) {
    for d in [2, 3] {
        let name = format!("bcd-equivalence-d{d}");
        match bcd_deviation(d, 5, 100 + d as u64) {
            Ok(dev) => s.below(name, dev, 1e-9),
            Err(e) => s.error(name, e),
        }
    }
}

/// Largest relative deviation between the transformer's layer-`2l` label
/// row and the block-coordinate iterates, over `prompts` random prompts
/// with random preconditioners and `L = 2d` blocks.
pub fn bcd_deviation(d: usize, prompts: usize, seed: u64) -> icl_core::Result<f64> {
    let blocks = 2 * d;
    let dbar = 2 * d + 1;
    let mut rng = substream(seed, Stream::Other(3));
    let schedule = bcd_schedule(d, blocks);
    let mut worst = 0.0f64;
    for _ in 0..prompts {
        let gammas: Vec<Matrix<f64>> = (0..blocks)
            .map(|_| Matrix::from_fn(dbar, dbar, |_, _| 0.2 * f64::standard_normal(&mut rng)))
            .collect();
        let model = bcd_transformer(d, blocks, &gammas)?;
        let prompt = sample_prompt::<f64, _>(TaskKind::Quadratic, d, dbar, 20, &mut rng)?;
        let trace = bcd_iterates(&prompt, &schedule, &gammas)?;
        let states = transformer_forward(&model, prompt.z())?;
        for l in 1..=blocks {
            let z = &states[2 * l];
            let last = z.rows() - 1;
            let labels = trace.context_labels(l, &prompt);
            for (i, want) in labels.iter().enumerate() {
                worst = worst.max(relative(z[(last, i)], *want));
            }
            let query = trace.predict(l, &prompt.x_query());
            worst = worst.max(relative(z[(last, prompt.n())], query));
        }
    }
    Ok(worst)
}

fn relative(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

fn lower_bounds(s: &mut Suite) {
    s.push(
        "embedding-rank-bound-d4-dbar12",
        embed_lower_bound(4, 12) == 3.0,
        embed_lower_bound(4, 12),
        3.0,
        String::new(),
    );
    let (d, dbar, n, prompts) = (2, 4, 40, 4000);
    let floor = match exact_moments(d, TaskKind::Quadratic, FeatureMap::Affine).and_then(|m| best_linear_loss(&m)) {
        Ok(v) => v,
        Err(e) => return s.error("best-linear-baseline", e),
    };
    for depth in 1..=2 {
        let name = format!("linear-stack-depth{depth}");
        let run = || -> icl_core::Result<(f64, f64)> {
            let mut rng = substream(depth as u64, Stream::Init);
            let model = TransformerModel::<f64>::random(ModelKind::Linear, d, dbar, depth, 0.3, &mut rng)?;
            let mc = monte_carlo_loss(&model, TaskKind::Quadratic, n, prompts, &mut rng)?;
            Ok((mc.mean, mc.stderr))
        };
        match run() {
            Ok((mean, se)) => s.push(
                name,
                mean >= floor - 3.0 * se,
                mean,
                floor - 3.0 * se,
                format!("baseline={floor:.4}"),
            ),
            Err(e) => s.error(name, e),
        }
    }
    match affine_in_query_deviation(d, dbar, 3, 7) {
        Ok(dev) => s.below("affine-in-query", dev, 1e-9),
        Err(e) => s.error("affine-in-query", e),
    }
}

/// `predict(a + b - c)` against `predict(a) + predict(b) - predict(c)` for
/// random pure-attention stacks and a fixed context.
pub fn affine_in_query_deviation(d: usize, dbar: usize, depth: usize, seed: u64) -> icl_core::Result<f64> {
    let mut rng = substream(seed, Stream::Other(4));
    let model = TransformerModel::<f64>::random(ModelKind::Linear, d, dbar, depth, 0.4, &mut rng)?;
    let prompt = sample_prompt::<f64, _>(TaskKind::Quadratic, d, dbar, 15, &mut rng)?;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let q: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..d).map(|_| f64::standard_normal(&mut rng)).collect())
            .collect();
        let combo: Vec<f64> = (0..d).map(|j| q[0][j] + q[1][j] - q[2][j]).collect();
        let pred = |x: &[f64]| -> icl_core::Result<f64> { predict(&model, prompt.with_query_input(x)?.z()) };
        let lhs = pred(&combo)?;
        let rhs = pred(&q[0])? + pred(&q[1])? - pred(&q[2])?;
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    Ok(worst)
}

fn construction_loss(s: &mut Suite) {
    let d = 2;
    let model = inverse_gram_block::<f64>(d);
    for n in [50, 200] {
        let name = format!("inverse-gram-d{d}-n{n}");
        let run = || -> icl_core::Result<(f64, f64, f64)> {
            let mut rng = substream(n as u64, Stream::Eval);
            let mc = monte_carlo_loss(&model, TaskKind::Quadratic, n, 20_000, &mut rng)?;
            Ok((mc.mean, mc.stderr, exact_construction_loss(d, n)?))
        };
        match run() {
            Ok((mean, se, exact)) => s.push(
                name,
                (mean - exact).abs() <= 3.0 * se,
                (mean - exact).abs() / se,
                3.0,
                format!(
                    "mc={mean:.5} oracle={exact:.5} stated_formula={:.5}",
                    stated_construction_loss(d, n)
                ),
            ),
            Err(e) => s.error(name, e),
        }
    }
}
