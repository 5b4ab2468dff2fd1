//! Target-function distributions and prompt assembly.
//!
//! A prompt for `n` context examples is a `(dbar+1) x (n+1)` matrix. Column
//! `i` holds `(1, x_i, 0, ..., 0, y_i)`; the final column carries the query
//! input with a zero in the label slot. The true query label travels beside
//! the matrix as hidden metadata.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{arg, Error, Result};
use crate::numerics::Matrix;
use crate::oracles::SparsePolynomial;
use crate::scalar::Scalar;

/// Length of `svec` for a `k x k` matrix.
pub fn svec_len(k: usize) -> usize {
    k * (k + 1) / 2
}

/// Position of the pair `(i, j)` in the `svec` ordering (row-major over the
/// upper triangle). The pair is symmetrised first.
pub fn svec_index(k: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    debug_assert!(j < k);
    i * k - i * (i + 1) / 2 + j
}

/// All `(i, j)` pairs with `i <= j < k` in `svec` order.
pub fn svec_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect()
}

/// Inverse of [`svec_len`], if `len` is triangular.
pub fn svec_side(len: usize) -> Option<usize> {
    let mut k = 0;
    while svec_len(k) < len {
        k += 1;
    }
    (svec_len(k) == len).then_some(k)
}

pub fn svec<T: Scalar>(m: &Matrix<T>) -> Result<Vec<T>> {
    if !m.is_square() {
        return arg(format!("svec needs a square matrix, got {:?}", m.shape()));
    }
    if !m.is_symmetric(T::of_f64(1e-10)) {
        return arg("svec input is not symmetric");
    }
    let k = m.rows();
    let two = T::of_f64(2.0);
    Ok(svec_pairs(k)
        .into_iter()
        .map(|(i, j)| if i == j { m[(i, i)] } else { two * m[(i, j)] })
        .collect())
}

pub fn smat<T: Scalar>(v: &[T]) -> Result<Matrix<T>> {
    let Some(k) = svec_side(v.len()) else {
        return arg(format!("smat length {} is not triangular", v.len()));
    };
    let half = T::of_f64(0.5);
    let mut m = Matrix::zeros(k, k);
    for ((i, j), &x) in svec_pairs(k).into_iter().zip(v) {
        if i == j {
            m[(i, i)] = x;
        } else {
            m[(i, j)] = x * half;
            m[(j, i)] = x * half;
        }
    }
    Ok(m)
}

/// Raw monomials `z_a z_b` of `z = (1, x)` in `svec` order, so that
/// `[1 x] W [1; x] = <svec(W), raw_monomials(x)>`.
pub fn raw_monomials<T: Scalar>(x: &[T]) -> Vec<T> {
    let z: Vec<T> = std::iter::once(T::one()).chain(x.iter().copied()).collect();
    svec_pairs(z.len()).into_iter().map(|(a, b)| z[a] * z[b]).collect()
}

/// `f(x) = [1 x] W [1; x]` with symmetric `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTask<T: Scalar> {
    d: usize,
    w: Matrix<T>,
}

impl<T: Scalar> QuadraticTask<T> {
    pub fn new(w: Matrix<T>) -> Result<Self> {
        if !w.is_square() || w.rows() < 2 {
            return arg(format!(
                "quadratic coefficients must be (d+1)x(d+1), got {:?}",
                w.shape()
            ));
        }
        if !w.is_symmetric(T::of_f64(1e-12)) {
            return arg("quadratic coefficient matrix is not symmetric");
        }
        Ok(Self { d: w.rows() - 1, w })
    }

    pub fn from_svec(d: usize, coeffs: &[T]) -> Result<Self> {
        if coeffs.len() != svec_len(d + 1) {
            return arg(format!(
                "expected {} coefficients, got {}",
                svec_len(d + 1),
                coeffs.len()
            ));
        }
        Self::new(smat(coeffs)?)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn w(&self) -> &Matrix<T> {
        &self.w
    }

    pub fn svec(&self) -> Vec<T> {
        svec(&self.w).expect("task matrix is symmetric")
    }

    pub fn eval(&self, x: &[T]) -> Result<T> {
        check_dim(self.d, x)?;
        let z: Vec<T> = std::iter::once(T::one()).chain(x.iter().copied()).collect();
        let wz = self.w.matvec(&z);
        Ok(crate::numerics::dot(&z, &wz))
    }

    pub fn to_polynomial(&self) -> SparsePolynomial<f64> {
        let k = self.d + 1;
        let mut p = SparsePolynomial::zero(self.d);
        for ((a, b), c) in svec_pairs(k).into_iter().zip(self.svec()) {
            let mut e = vec![0u32; self.d];
            for idx in [a, b] {
                if idx > 0 {
                    e[idx - 1] += 1;
                }
            }
            p.add_term(e, c.as_f64());
        }
        p
    }
}

/// Sparse polynomial target `f(x) = sum_alpha c_alpha x^alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialTask<T: Scalar> {
    d: usize,
    p: u32,
    terms: BTreeMap<Vec<u32>, T>,
}

impl<T: Scalar> PolynomialTask<T> {
    pub fn new(d: usize, p: u32, terms: BTreeMap<Vec<u32>, T>) -> Result<Self> {
        for (e, c) in &terms {
            if e.len() != d {
                return arg(format!("multi-index {e:?} has wrong length for d = {d}"));
            }
            if e.iter().sum::<u32>() > p {
                return arg(format!("multi-index {e:?} exceeds degree {p}"));
            }
            if !c.is_finite() {
                return arg("polynomial coefficient is not finite");
            }
        }
        Ok(Self { d, p, terms })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn degree_bound(&self) -> u32 {
        self.p
    }

    pub fn max_degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn terms(&self) -> &BTreeMap<Vec<u32>, T> {
        &self.terms
    }

    pub fn eval(&self, x: &[T]) -> Result<T> {
        check_dim(self.d, x)?;
        Ok(self
            .terms
            .iter()
            .map(|(e, &c)| e.iter().zip(x).fold(c, |acc, (&k, &xi)| acc * xi.powi(k as i32)))
            .sum())
    }

    pub fn to_polynomial(&self) -> SparsePolynomial<f64> {
        let mut p = SparsePolynomial::zero(self.d);
        for (e, c) in &self.terms {
            p.add_term(e.clone(), c.as_f64());
        }
        p
    }
}

fn check_dim<T>(d: usize, x: &[T]) -> Result<()> {
    if x.len() != d {
        return arg(format!("input has length {}, task expects {d}", x.len()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub enum Task<T: Scalar> {
    Quadratic(QuadraticTask<T>),
    Polynomial(PolynomialTask<T>),
}

impl<T: Scalar> Task<T> {
    pub fn d(&self) -> usize {
        match self {
            Task::Quadratic(t) => t.d(),
            Task::Polynomial(t) => t.d(),
        }
    }

    pub fn eval(&self, x: &[T]) -> Result<T> {
        eval_target(self, x)
    }
}

impl<T: Scalar> From<QuadraticTask<T>> for Task<T> {
    fn from(t: QuadraticTask<T>) -> Self {
        Task::Quadratic(t)
    }
}

impl<T: Scalar> From<PolynomialTask<T>> for Task<T> {
    fn from(t: PolynomialTask<T>) -> Self {
        Task::Polynomial(t)
    }
}

pub fn eval_target<T: Scalar>(task: &Task<T>, x: &[T]) -> Result<T> {
    match task {
        Task::Quadratic(t) => t.eval(x),
        Task::Polynomial(t) => t.eval(x),
    }
}

/// Which family prompts draw their targets from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Quadratic,
    /// The ten-term cubic over four variables.
    Cubic,
    /// Every monomial of degree at most `degree`, i.i.d. N(0, 1) coefficients.
    Polynomial {
        degree: u32,
    },
}

impl TaskKind {
    pub fn sample<T: Scalar, R: Rng + ?Sized>(self, d: usize, rng: &mut R) -> Result<Task<T>> {
        Ok(match self {
            TaskKind::Quadratic => sample_quadratic_task(d, rng)?.into(),
            TaskKind::Cubic => {
                if d != 4 {
                    return arg(format!("the cubic task is defined for d = 4, got {d}"));
                }
                sample_cubic_task(rng).into()
            }
            TaskKind::Polynomial { degree } => sample_polynomial_task(d, degree, rng)?.into(),
        })
    }
}

pub fn sample_quadratic_task<T: Scalar, R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<QuadraticTask<T>> {
    if d < 1 {
        return arg("quadratic task needs d >= 1");
    }
    let g: Vec<T> = (0..svec_len(d + 1)).map(|_| T::standard_normal(rng)).collect();
    QuadraticTask::from_svec(d, &g)
}

/// Multi-indices of the ten-term cubic: `1, x1..x4, x1x2, x2x3, x3x4, x1x2x3, x2x3x4`.
pub fn cubic_support() -> Vec<Vec<u32>> {
    vec![
        vec![0, 0, 0, 0],
        vec![1, 0, 0, 0],
        vec![0, 1, 0, 0],
        vec![0, 0, 1, 0],
        vec![0, 0, 0, 1],
        vec![1, 1, 0, 0],
        vec![0, 1, 1, 0],
        vec![0, 0, 1, 1],
        vec![1, 1, 1, 0],
        vec![0, 1, 1, 1],
    ]
}

pub fn sample_cubic_task<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> PolynomialTask<T> {
    let terms = cubic_support()
        .into_iter()
        .map(|e| (e, T::standard_normal(rng)))
        .collect();
    PolynomialTask::new(4, 3, terms).expect("cubic support is within degree 3")
}

/// All multi-indices over `d` variables with total degree at most `p`, in
/// graded lexicographic order.
pub fn monomials_up_to(d: usize, p: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for deg in 0..=p {
        let mut cur = vec![0u32; d];
        fill_degree(&mut cur, 0, deg, &mut out);
    }
    out
}

fn fill_degree(cur: &mut Vec<u32>, pos: usize, left: u32, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    if cur.is_empty() {
        if left == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for k in (0..=left).rev() {
        cur[pos] = k;
        fill_degree(cur, pos + 1, left - k, out);
    }
    cur[pos] = 0;
}

pub fn sample_polynomial_task<T: Scalar, R: Rng + ?Sized>(d: usize, p: u32, rng: &mut R) -> Result<PolynomialTask<T>> {
    if d < 1 {
        return arg("polynomial task needs d >= 1");
    }
    let terms = monomials_up_to(d, p)
        .into_iter()
        .map(|e| (e, T::standard_normal(rng)))
        .collect();
    PolynomialTask::new(d, p, terms)
}

/// A single prompt matrix with its hidden query label.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptMatrix<T: Scalar> {
    d: usize,
    dbar: usize,
    n: usize,
    z: Matrix<T>,
    y_query: T,
}

impl<T: Scalar> PromptMatrix<T> {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dbar(&self) -> usize {
        self.dbar
    }

    /// Number of context examples.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn z(&self) -> &Matrix<T> {
        &self.z
    }

    pub fn into_z(self) -> Matrix<T> {
        self.z
    }

    pub fn y_query(&self) -> T {
        self.y_query
    }

    /// Input stored in column `i` (`i == n` is the query).
    pub fn x(&self, i: usize) -> Vec<T> {
        (1..=self.d).map(|r| self.z[(r, i)]).collect()
    }

    pub fn x_query(&self) -> Vec<T> {
        self.x(self.n)
    }

    /// Context label of column `i < n`.
    pub fn label(&self, i: usize) -> T {
        self.z[(self.dbar, i)]
    }

    pub fn labels(&self) -> Vec<T> {
        (0..self.n).map(|i| self.label(i)).collect()
    }

    /// Same context with the query input replaced by `x`. The hidden query
    /// label is kept.
    pub fn with_query_input(&self, x: &[T]) -> Result<Self> {
        if x.len() != self.d {
            return arg(format!("query needs {} coordinates, got {}", self.d, x.len()));
        }
        let mut out = self.clone();
        for (r, &v) in x.iter().enumerate() {
            out.z[(r + 1, self.n)] = v;
        }
        Ok(out)
    }

    /// Overwrites the query-label slot; used to probe masking.
    pub fn with_query_slot(mut self, v: T) -> Self {
        let (r, c) = (self.dbar, self.n);
        self.z[(r, c)] = v;
        self
    }
}

/// Lays out `inputs` (the `n` context inputs followed by the query) as a
/// prompt of width `dbar + 1`.
pub fn build_prompt<T: Scalar>(task: &Task<T>, inputs: &[Vec<T>], dbar: usize) -> Result<PromptMatrix<T>> {
    let d = task.d();
    if dbar < d + 1 {
        return Err(Error::Config(format!(
            "dbar = {dbar} leaves no room for d = {d} inputs (need dbar >= d + 1)"
        )));
    }
    if inputs.len() < 2 {
        return arg("a prompt needs at least one context example and a query");
    }
    let n = inputs.len() - 1;
    let mut z = Matrix::zeros(dbar + 1, n + 1);
    let mut y_query = T::zero();
    for (i, x) in inputs.iter().enumerate() {
        let y = eval_target(task, x)?;
        z[(0, i)] = T::one();
        for (r, &v) in x.iter().enumerate() {
            z[(r + 1, i)] = v;
        }
        if i < n {
            z[(dbar, i)] = y;
        } else {
            y_query = y;
        }
    }
    Ok(PromptMatrix { d, dbar, n, z, y_query })
}

/// Prompts sharing `(d, dbar, n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptBatch<T: Scalar> {
    prompts: Vec<PromptMatrix<T>>,
}

impl<T: Scalar> PromptBatch<T> {
    pub fn new(prompts: Vec<PromptMatrix<T>>) -> Result<Self> {
        if let Some(first) = prompts.first() {
            let dims = (first.d, first.dbar, first.n);
            if prompts.iter().any(|p| (p.d, p.dbar, p.n) != dims) {
                return arg("prompts in a batch must share (d, dbar, n)");
            }
        }
        Ok(Self { prompts })
    }

    pub fn prompts(&self) -> &[PromptMatrix<T>] {
        &self.prompts
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn y_queries(&self) -> Vec<T> {
        self.prompts.iter().map(|p| p.y_query).collect()
    }
}

/// Draws one prompt: a fresh task, then `n + 1` inputs from N(0, I_d).
pub fn sample_prompt<T: Scalar, R: Rng + ?Sized>(
    kind: TaskKind,
    d: usize,
    dbar: usize,
    n: usize,
    rng: &mut R,
) -> Result<PromptMatrix<T>> {
    let task = kind.sample(d, rng)?;
    let inputs: Vec<Vec<T>> = (0..=n)
        .map(|_| (0..d).map(|_| T::standard_normal(rng)).collect())
        .collect();
    build_prompt(&task, &inputs, dbar)
}

/// A batch whose prompt `i` is generated from its own stream `i` of a key
/// drawn from `rng`, so the result does not depend on generation order.
pub fn sample_prompt_batch<T: Scalar, R: RngCore + ?Sized>(
    kind: TaskKind,
    d: usize,
    dbar: usize,
    n: usize,
    batch: usize,
    rng: &mut R,
) -> Result<PromptBatch<T>> {
    if batch < 1 {
        return arg("batch size must be at least 1");
    }
    if n < 1 {
        return arg("prompts need n >= 1 context examples");
    }
    let key = rng.next_u64();
    let prompts = (0..batch)
        .map(|i| {
            let mut r = ChaCha20Rng::seed_from_u64(key);
            r.set_stream(i as u64);
            sample_prompt(kind, d, dbar, n, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    PromptBatch::new(prompts)
}

/// Named random substreams derived from a single experiment seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Task,
    Inputs,
    Init,
    Eval,
    Other(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Task => 1,
            Stream::Inputs => 2,
            Stream::Init => 3,
            Stream::Eval => 4,
            Stream::Other(k) => 1000 + k,
        }
    }
}

/// Independent generator for `(seed, stream)`.
pub fn substream(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(stream.id());
    r
}
