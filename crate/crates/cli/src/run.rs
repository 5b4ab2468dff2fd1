//! Runners behind the `construct-loss`, `train` and `sweep` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use icl_core::constructions::inverse_gram_block;
use icl_core::model::{read_model, write_model, TransformerModel};
use icl_core::oracles::{exact_construction_loss, stated_construction_loss};
use icl_core::tasks::{substream, Stream, TaskKind};
use icl_core::training::{evaluate_sweep, monte_carlo_loss, train, LossCurve, SweepRow};

use crate::{fmt_float, CliError, ExperimentSpec};

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `rows` under a header row, creating the parent directory.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstructLossReport {
    pub d: usize,
    pub n: usize,
    pub trials: usize,
    pub mc_loss: f64,
    pub mc_stderr: f64,
    /// `((d+2)(d+1)+d) / (2n)`.
    pub stated_formula_loss: f64,
    /// Exact task-averaged loss from the moment oracle.
    pub oracle_loss: f64,
}

/// Monte-Carlo loss of the kernel construction with `Gamma = -Lambda^{-1}`.
pub fn construct_loss(d: usize, n: usize, trials: usize, seed: u64) -> Result<ConstructLossReport, CliError> {
    let model = inverse_gram_block::<f64>(d);
    let mut rng = substream(seed, Stream::Eval);
    let mc = monte_carlo_loss(&model, TaskKind::Quadratic, n, trials, &mut rng)?;
    Ok(ConstructLossReport {
        d,
        n,
        trials,
        mc_loss: mc.mean,
        mc_stderr: mc.stderr,
        stated_formula_loss: stated_construction_loss(d, n),
        oracle_loss: exact_construction_loss(d, n)?,
    })
}

pub fn curve_rows(curve: &LossCurve) -> Vec<Vec<String>> {
    curve
        .points
        .iter()
        .map(|p| vec![p.iteration.to_string(), fmt_float(p.train_loss), fmt_float(p.test_loss)])
        .collect()
}

/// Trains one model per seed. Writes `model-seed{s}.txt`, `curve-seed{s}.csv`
/// and `curve-summary.csv` into the output directory and returns their paths.
pub fn train_command(spec: &ExperimentSpec) -> Result<Vec<PathBuf>, CliError> {
    spec.validate()?;
    let dir = &spec.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let mut summary = Vec::new();
    for &seed in &spec.seeds {
        let (model, curve) = train::<f64>(&spec.config_for(seed))?;
        let steady = curve.mean_test_loss(spec.train.warmup + 1).unwrap_or(f64::NAN);
        summary.push(vec![seed.to_string(), spec.train.warmup.to_string(), fmt_float(steady)]);
        let model_path = dir.join(format!("model-seed{seed}.txt"));
        fs::write(&model_path, write_model(&model)).map_err(io_err(&model_path))?;
        let curve_path = dir.join(format!("curve-seed{seed}.csv"));
        write_csv(
            &curve_path,
            &["iteration", "train_loss", "test_loss"],
            &curve_rows(&curve),
        )?;
        written.push(model_path);
        written.push(curve_path);
    }
    let summary_path = dir.join("curve-summary.csv");
    write_csv(&summary_path, &["seed", "warmup", "mean_test_loss"], &summary)?;
    written.push(summary_path);
    Ok(written)
}

pub fn load_model(path: &Path) -> Result<TransformerModel<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(read_model(&text)?)
}

pub fn sweep_rows(rows: &[SweepRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.n_test.to_string(),
                fmt_float(r.mean_loss),
                fmt_float(r.std_loss),
                r.trials.to_string(),
            ]
        })
        .collect()
}

/// Evaluates a saved model over the configured test lengths, writing
/// `sweep.csv`.
pub fn sweep_command(model_path: &Path, spec: &ExperimentSpec) -> Result<PathBuf, CliError> {
    spec.validate()?;
    let model = load_model(model_path)?;
    let cfg = &spec.train;
    let mut rng = substream(spec.seeds[0], Stream::Eval);
    let rows = evaluate_sweep(
        &model,
        cfg.task,
        &cfg.test_lengths,
        cfg.trials,
        cfg.test_batch,
        &mut rng,
    )?;
    let path = spec.output_dir.join("sweep.csv");
    write_csv(
        &path,
        &["n_test", "mean_loss", "std_loss", "trials"],
        &sweep_rows(&rows),
    )?;
    Ok(path)
}
