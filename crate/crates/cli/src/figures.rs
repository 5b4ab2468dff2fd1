//! CSV data behind each figure-style experiment.

use std::path::PathBuf;

use icl_core::model::ModelKind;
use icl_core::tasks::{substream, Stream, TaskKind};
use icl_core::training::{evaluate_sweep, train, SweepRow, TrainConfig};

use crate::run::{construct_loss, write_csv};
use crate::{fmt_float, CliError, ExperimentSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FigureName {
    BlockQuadratic,
    BlockCubic,
    Verification,
    Generalization,
}

impl FigureName {
    pub const ALL: [FigureName; 4] = [
        FigureName::BlockQuadratic,
        FigureName::BlockCubic,
        FigureName::Verification,
        FigureName::Generalization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FigureName::BlockQuadratic => "block-quadratic",
            FigureName::BlockCubic => "block-cubic",
            FigureName::Verification => "verification",
            FigureName::Generalization => "generalization",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn loglog_fit(x: &[f64], y: &[f64]) -> LogLogFit {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    LogLogFit {
        slope,
        intercept: my - slope * mx,
        r2: sxy * sxy / (sxx * syy),
    }
}

/// Pools per-seed sweep rows at one test length into a single row.
fn pool(rows: &[SweepRow]) -> (f64, f64, usize) {
    let total: usize = rows.iter().map(|r| r.trials).sum();
    let mean = rows.iter().map(|r| r.mean_loss * r.trials as f64).sum::<f64>() / total as f64;
    let ss: f64 = rows
        .iter()
        .map(|r| (r.trials as f64 - 1.0) * r.std_loss.powi(2) + r.trials as f64 * (r.mean_loss - mean).powi(2))
        .sum();
    (mean, (ss / (total as f64 - 1.0)).sqrt(), total)
}

/// Trains `cfg` once per seed and pools the sweeps by test length.
fn trained_sweep(spec: &ExperimentSpec, cfg: &TrainConfig) -> Result<Vec<(usize, f64, f64, usize)>, CliError> {
    let mut per_seed = Vec::new();
    for &seed in &spec.seeds {
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let (model, _) = train::<f64>(&cfg)?;
        let mut rng = substream(seed, Stream::Eval);
        per_seed.push(evaluate_sweep(
            &model,
            cfg.task,
            &cfg.test_lengths,
            cfg.trials,
            cfg.test_batch,
            &mut rng,
        )?);
    }
    Ok(spec
        .train
        .test_lengths
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let rows: Vec<SweepRow> = per_seed.iter().map(|s| s[i]).collect();
            let (mean, std, trials) = pool(&rows);
            (n, mean, std, trials)
        })
        .collect())
}

/// Bilinear depths `4, 8, 12` (two, four and six blocks) up to `max_depth`.
pub fn block_depths(max_depth: usize) -> Vec<usize> {
    let depths: Vec<usize> = [4, 8, 12].into_iter().filter(|&l| l <= max_depth).collect();
    if depths.is_empty() {
        vec![max_depth]
    } else {
        depths
    }
}

/// Depth of the attention-only baseline.
pub const LINEAR_BASELINE_DEPTH: usize = 6;

/// Emits the CSV files for `name` into the configured output directory and
/// returns their paths.
pub fn emit_figure_data(name: FigureName, spec: &ExperimentSpec) -> Result<Vec<PathBuf>, CliError> {
    spec.validate()?;
    let dir = &spec.output_dir;
    let base = &spec.train;
    match name {
        FigureName::BlockQuadratic | FigureName::BlockCubic => {
            let models: Vec<(ModelKind, usize)> = if name == FigureName::BlockQuadratic {
                std::iter::once((ModelKind::Linear, LINEAR_BASELINE_DEPTH))
                    .chain(block_depths(base.depth).into_iter().map(|l| (ModelKind::Bilinear, l)))
                    .collect()
            } else {
                vec![
                    (ModelKind::Bilinear, base.depth),
                    (ModelKind::BilinearSparse, base.depth),
                ]
            };
            let task = if name == FigureName::BlockQuadratic {
                TaskKind::Quadratic
            } else {
                TaskKind::Cubic
            };
            let mut rows = Vec::new();
            for (model, depth) in models {
                let cfg = TrainConfig {
                    task,
                    model,
                    depth,
                    ..base.clone()
                };
                for (n, mean, std, trials) in trained_sweep(spec, &cfg)? {
                    rows.push(vec![
                        model.name().to_string(),
                        depth.to_string(),
                        n.to_string(),
                        fmt_float(mean),
                        fmt_float(std),
                        trials.to_string(),
                    ]);
                }
            }
            let path = dir.join(format!("{}.csv", name.name()));
            write_csv(
                &path,
                &["model", "depth", "n_test", "mean_loss", "std_loss", "trials"],
                &rows,
            )?;
            Ok(vec![path])
        }
        FigureName::Verification => {
            let mut rows = Vec::new();
            let (mut ns, mut losses) = (Vec::new(), Vec::new());
            for &n in &base.test_lengths {
                let r = construct_loss(base.d, n, base.trials, spec.seeds[0])?;
                ns.push(n as f64);
                losses.push(r.mc_loss);
                rows.push(vec![
                    n.to_string(),
                    fmt_float(r.mc_loss),
                    fmt_float(r.mc_stderr),
                    fmt_float(r.stated_formula_loss),
                    fmt_float(r.oracle_loss),
                ]);
            }
            let path = dir.join("verification.csv");
            write_csv(
                &path,
                &["n", "mc_loss", "mc_stderr", "paper_formula_loss", "oracle_loss"],
                &rows,
            )?;
            let fit = loglog_fit(&ns, &losses);
            let fit_path = dir.join("verification-fit.csv");
            write_csv(
                &fit_path,
                &["slope", "intercept", "r2"],
                &[vec![fmt_float(fit.slope), fmt_float(fit.intercept), fmt_float(fit.r2)]],
            )?;
            Ok(vec![path, fit_path])
        }
        FigureName::Generalization => {
            let n = base.n_train;
            let train_lengths: Vec<usize> = [n / 2, 3 * n / 4, n, 5 * n / 4]
                .into_iter()
                .filter(|&m| m >= 1)
                .collect();
            let mut rows = Vec::new();
            for n_train in train_lengths {
                let cfg = TrainConfig {
                    n_train,
                    ..base.clone()
                };
                for (n_test, mean, std, _) in trained_sweep(spec, &cfg)? {
                    rows.push(vec![
                        n_train.to_string(),
                        n_test.to_string(),
                        fmt_float(mean),
                        fmt_float(std),
                    ]);
                }
            }
            let path = dir.join("generalization.csv");
            write_csv(&path, &["n_train", "n_test", "mean_loss", "std_loss"], &rows)?;
            Ok(vec![path])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_fits_perfectly() {
        let x = [50.0, 100.0, 200.0, 400.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.0)).collect();
        let fit = loglog_fit(&x, &y);
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pooling_two_identical_groups() {
        let r = SweepRow {
            n_test: 10,
            mean_loss: 2.0,
            std_loss: 1.0,
            trials: 5,
        };
        let (mean, std, k) = pool(&[r, r]);
        assert_eq!((mean, k), (2.0, 10));
        assert!((std - (8.0f64 / 9.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn depth_menu() {
        assert_eq!(block_depths(12), vec![4, 8, 12]);
        assert_eq!(block_depths(8), vec![4, 8]);
        assert_eq!(block_depths(2), vec![2]);
    }
}
