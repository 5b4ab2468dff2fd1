//! Adam training on freshly sampled prompt batches, the two-stage
//! (features, then attention) procedure, and evaluation sweeps.

use rand::RngCore;
use rayon::prelude::*;

use crate::constructions::gd_attention_weights;
use crate::error::{arg, Error, Result};
use crate::model::{icl_loss, prompt_errors, recorded_loss_sum, Layer, ModelKind, TransformerModel, CHUNK};
use crate::numerics::{grad, AdamConfig, AdamState, GradientRecord, Matrix, ParameterSet};
use crate::scalar::Scalar;
use crate::tasks::{sample_prompt_batch, substream, svec_len, PromptBatch, Stream, TaskKind};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub d: usize,
    pub dbar: usize,
    pub n_train: usize,
    pub model: ModelKind,
    /// Number of layers (attention and bilinear counted separately).
    pub depth: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub iterations: usize,
    pub seed: u64,
    pub test_lengths: Vec<usize>,
    pub trials: usize,
    pub init_sigma: f64,
    /// Prompts behind each held-out loss point.
    pub test_batch: usize,
    /// Record a curve point every `log_every` iterations (and at the end).
    pub log_every: usize,
    /// Leading iterations excluded from curve summaries.
    pub warmup: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Quadratic,
            d: 3,
            dbar: 12,
            n_train: 200,
            model: ModelKind::Bilinear,
            depth: 8,
            learning_rate: 1e-3,
            batch: 256,
            iterations: 2000,
            seed: 0,
            test_lengths: vec![50, 100, 200, 400, 800],
            trials: 5,
            init_sigma: 0.02,
            test_batch: 64,
            log_every: 1,
            warmup: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d < 1 || self.n_train < 1 || self.batch < 1 || self.test_batch < 1 || self.log_every < 1 {
            return bad("dimensions, batch sizes and log interval must be positive".into());
        }
        if self.dbar < self.d + 1 {
            return bad(format!("dbar = {} must be at least d + 1 = {}", self.dbar, self.d + 1));
        }
        if self.model != ModelKind::Linear && self.depth % 2 == 1 {
            return bad(format!("bilinear models need an even depth, got {}", self.depth));
        }
        if self.model == ModelKind::BilinearSparse && self.dbar <= self.d + 1 {
            return bad("sparse bilinear layers need dbar > d + 1".into());
        }
        if !(self.learning_rate > 0.0) || !(self.init_sigma >= 0.0) {
            return bad("learning rate must be positive and init scale non-negative".into());
        }
        if self.task == TaskKind::Cubic && self.d != 4 {
            return bad("the cubic task needs d = 4".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub points: Vec<CurvePoint>,
}

impl LossCurve {
    /// Mean test loss over points at or after `from_iteration`.
    pub fn mean_test_loss(&self, from_iteration: usize) -> Option<f64> {
        let tail: Vec<f64> = self
            .points
            .iter()
            .filter(|p| p.iteration >= from_iteration)
            .map(|p| p.test_loss)
            .collect();
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }

    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }
}

/// Mean loss and gradient over `batch`, computed in fixed-size chunks that
/// are reduced in order.
pub fn batch_gradient<T: Scalar>(
    model: &TransformerModel<T>,
    params: &ParameterSet<T>,
    batch: &PromptBatch<T>,
) -> Result<(T, GradientRecord<T>)> {
    if batch.is_empty() {
        return arg("empty batch");
    }
    let parts: Vec<Result<(T, GradientRecord<T>)>> = batch
        .prompts()
        .par_chunks(CHUNK)
        .map(|chunk| grad(params, |tape, vars| recorded_loss_sum(model, tape, vars, chunk)))
        .collect();
    let mut loss = T::zero();
    let mut total = GradientRecord::zeros_like(params);
    for part in parts {
        let (l, g) = part?;
        loss = loss + l;
        total.add_assign(&g);
    }
    let inv = T::one() / T::of_usize(batch.len());
    total.scale(inv);
    Ok((loss * inv, total))
}

/// Adam on `model` with the frozen flags of `params` respected. Training
/// batches come from `train_rng`, held-out prompts from `test_rng`.
pub fn optimize<T: Scalar>(
    model: &mut TransformerModel<T>,
    params: &mut ParameterSet<T>,
    config: &TrainConfig,
    train_rng: &mut dyn RngCore,
    test_rng: &mut dyn RngCore,
) -> Result<LossCurve> {
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(adam, params);
    let mut curve = LossCurve::default();
    for it in 0..config.iterations {
        let abort = |e: Error| Error::TrainingAborted {
            iteration: it,
            source: Box::new(e),
        };
        let batch = sample_prompt_batch(
            config.task,
            config.d,
            config.dbar,
            config.n_train,
            config.batch,
            train_rng,
        )
        .map_err(abort)?;
        let (loss, g) = batch_gradient(model, params, &batch).map_err(abort)?;
        if !loss.is_finite() {
            return Err(abort(Error::NumericOverflow {
                op: "icl_loss",
                node: 0,
            }));
        }
        state.step(params, &g).map_err(abort)?;
        model.set_parameters(params).map_err(abort)?;
        if (it + 1) % config.log_every == 0 || it + 1 == config.iterations {
            let test = sample_prompt_batch(
                config.task,
                config.d,
                config.dbar,
                config.n_train,
                config.test_batch,
                test_rng,
            )
            .map_err(abort)?;
            let test_loss = icl_loss(model, &test).map_err(abort)?;
            if !test_loss.is_finite() {
                return Err(abort(Error::NumericOverflow {
                    op: "test_loss",
                    node: 0,
                }));
            }
            curve.points.push(CurvePoint {
                iteration: it + 1,
                train_loss: loss.as_f64(),
                test_loss: test_loss.as_f64(),
            });
        }
    }
    Ok(curve)
}

/// Trains a freshly initialised model as described by `config`.
pub fn train<T: Scalar>(config: &TrainConfig) -> Result<(TransformerModel<T>, LossCurve)> {
    config.validate()?;
    let mut init = substream(config.seed, Stream::Init);
    let mut model = TransformerModel::random(
        config.model,
        config.d,
        config.dbar,
        config.depth,
        T::of_f64(config.init_sigma),
        &mut init,
    )?;
    let mut params = model.parameters();
    let mut train_rng = substream(config.seed, Stream::Task);
    let mut test_rng = substream(config.seed, Stream::Eval);
    let curve = optimize(&mut model, &mut params, config, &mut train_rng, &mut test_rng)?;
    Ok((model, curve))
}

#[derive(Clone, Debug)]
pub struct TwoStageResult<T: Scalar> {
    /// Model after stage one (features trained, attention at its start).
    pub stage_one: TransformerModel<T>,
    pub model: TransformerModel<T>,
    pub curves: [LossCurve; 2],
}

/// Budget for one stage of [`two_stage_optimize`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageBudget {
    pub iterations: usize,
    pub batch: usize,
    pub learning_rate: f64,
}

/// One bilinear block over `dbar = (d+2 choose 2)`: first the bilinear
/// weights are trained with attention frozen at `P0 = e e^T`,
/// `Q0 = diag(Gamma0, 0)`; then the bilinear weights are frozen and the
/// attention weights trained.
pub fn two_stage_optimize<T: Scalar>(
    d: usize,
    n: usize,
    gamma0_diag: &[T],
    budgets: [StageBudget; 2],
    seed: u64,
) -> Result<TwoStageResult<T>> {
    let dbar = svec_len(d + 1);
    if gamma0_diag.len() != dbar {
        return arg(format!(
            "Gamma0 needs {dbar} diagonal entries, got {}",
            gamma0_diag.len()
        ));
    }
    if gamma0_diag.iter().any(|g| *g == T::zero() || !g.is_finite()) {
        return arg("Gamma0 must be a full-rank diagonal");
    }
    let mut init = substream(seed, Stream::Init);
    let mut model = TransformerModel::random(ModelKind::Bilinear, d, dbar, 2, T::of_f64(0.02), &mut init)?;
    let attention = gd_attention_weights(&Matrix::diag(gamma0_diag))?;
    let bilinear = match &model.layers()[0] {
        Layer::Bilinear(w) => w.clone(),
        Layer::Attention(_) => unreachable!("bilinear models start with a bilinear layer"),
    };
    model = TransformerModel::new(
        ModelKind::Bilinear,
        d,
        dbar,
        vec![Layer::Bilinear(bilinear), Layer::Attention(attention)],
    )?;

    let mut train_rng = substream(seed, Stream::Task);
    let mut test_rng = substream(seed, Stream::Eval);
    let mut curves: [LossCurve; 2] = Default::default();
    let mut stage_one = model.clone();
    for (stage, budget) in budgets.iter().enumerate() {
        let config = TrainConfig {
            task: TaskKind::Quadratic,
            d,
            dbar,
            n_train: n,
            model: ModelKind::Bilinear,
            depth: 2,
            learning_rate: budget.learning_rate,
            batch: budget.batch,
            iterations: budget.iterations,
            seed,
            log_every: budget.iterations.max(1),
            ..TrainConfig::default()
        };
        config.validate()?;
        let mut params = model.parameters();
        let is_attention = |name: &str| name.ends_with(".P") || name.ends_with(".Q");
        params.set_frozen_where(stage == 0, is_attention);
        params.set_frozen_where(stage == 1, |name| !is_attention(name));
        curves[stage] = optimize(&mut model, &mut params, &config, &mut train_rng, &mut test_rng)?;
        if stage == 0 {
            stage_one = model.clone();
        }
    }
    Ok(TwoStageResult {
        stage_one,
        model,
        curves,
    })
}

/// Monte-Carlo estimate of the task-averaged loss at context length `n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

pub fn monte_carlo_loss<T: Scalar>(
    model: &TransformerModel<T>,
    task: TaskKind,
    n: usize,
    prompts: usize,
    rng: &mut dyn RngCore,
) -> Result<McEstimate> {
    if prompts < 2 {
        return arg("need at least two prompts for a standard error");
    }
    let mut errors = Vec::with_capacity(prompts);
    let step = 4096;
    let mut left = prompts;
    while left > 0 {
        let b = left.min(step);
        let batch = sample_prompt_batch(task, model.d(), model.dbar(), n, b, rng)?;
        errors.extend(prompt_errors(model, &batch)?.into_iter().map(|e| e.as_f64()));
        left -= b;
    }
    Ok(summarize(&errors))
}

pub fn summarize(values: &[f64]) -> McEstimate {
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0).max(1.0);
    McEstimate {
        mean,
        stderr: (var / count).sqrt(),
        samples: values.len(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub n_test: usize,
    pub mean_loss: f64,
    pub std_loss: f64,
    pub trials: usize,
}

/// For each test length, `trials` independent batches of `batch` prompts;
/// reports the mean and sample standard deviation of the batch losses.
pub fn evaluate_sweep<T: Scalar>(
    model: &TransformerModel<T>,
    task: TaskKind,
    test_lengths: &[usize],
    trials: usize,
    batch: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<SweepRow>> {
    if trials < 2 {
        return arg("evaluate_sweep needs at least two trials");
    }
    test_lengths
        .iter()
        .map(|&n| {
            let losses = (0..trials)
                .map(|_| {
                    let b = sample_prompt_batch(task, model.d(), model.dbar(), n, batch, rng)?;
                    Ok(icl_loss(model, &b)?.as_f64())
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean = losses.iter().sum::<f64>() / trials as f64;
            let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
            Ok(SweepRow {
                n_test: n,
                mean_loss: mean,
                std_loss: var.sqrt(),
                trials,
            })
        })
        .collect()
}
