//! Flat `key = value` experiment configuration.

use std::path::{Path, PathBuf};

use icl_core::model::ModelKind;
use icl_core::tasks::TaskKind;
use icl_core::training::TrainConfig;

use crate::CliError;

/// Keys accepted in a configuration file.
pub const KEYS: [&str; 13] = [
    "task",
    "d",
    "dbar",
    "n_train",
    "model",
    "depth",
    "lr",
    "batch",
    "iters",
    "seed",
    "test_lengths",
    "trials",
    "warmup",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Verify,
    ConstructLoss,
    Train,
    Sweep,
    Figure,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Verify => "verify",
            Experiment::ConstructLoss => "construct-loss",
            Experiment::Train => "train",
            Experiment::Sweep => "sweep",
            Experiment::Figure => "figure",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    /// Base configuration; its `seed` field is replaced by each entry of `seeds`.
    pub train: TrainConfig,
    /// `(key, value)` pairs read from the file, in file order.
    pub overrides: Vec<(String, String)>,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            experiment: Experiment::Train,
            train: TrainConfig::default(),
            overrides: Vec::new(),
            output_dir: PathBuf::from("."),
            seeds: vec![0],
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seed list must not be empty".into()));
        }
        Ok(self.train.validate()?)
    }

    /// The base configuration with `seed` substituted.
    pub fn config_for(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}

pub fn parse_task(s: &str) -> Option<TaskKind> {
    match s {
        "quadratic" => Some(TaskKind::Quadratic),
        "cubic" => Some(TaskKind::Cubic),
        "polynomial" => Some(TaskKind::Polynomial { degree: 3 }),
        _ => s
            .strip_prefix("polynomial-")
            .and_then(|p| p.parse().ok())
            .filter(|&degree| degree >= 1)
            .map(|degree| TaskKind::Polynomial { degree }),
    }
}

pub fn task_name(task: TaskKind) -> String {
    match task {
        TaskKind::Quadratic => "quadratic".into(),
        TaskKind::Cubic => "cubic".into(),
        TaskKind::Polynomial { degree } => format!("polynomial-{degree}"),
    }
}

fn list<T: std::str::FromStr>(value: &str) -> Option<Vec<T>> {
    value
        .split(',')
        .map(|v| v.trim().parse().ok())
        .collect::<Option<Vec<T>>>()
        .filter(|v| !v.is_empty())
}

/// Parses configuration text. Blank lines and lines starting with `#` are
/// skipped; every other line must be `key = value` with a known key.
pub fn parse_config_str(text: &str) -> Result<ExperimentSpec, CliError> {
    let mut spec = ExperimentSpec::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: String| CliError::Parse { line, message };
        let (key, value) = trimmed
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(format!("expected `key = value`, got `{trimmed}`")))?;
        if value.is_empty() {
            return Err(err(format!("missing value for `{key}`")));
        }
        let mismatch = |kind: &str| err(format!("`{key}` expects {kind}, got `{value}`"));
        let uint = || value.parse::<usize>().map_err(|_| mismatch("a non-negative integer"));
        let t = &mut spec.train;
        match key {
            "task" => t.task = parse_task(value).ok_or_else(|| mismatch("quadratic, cubic or polynomial[-p]"))?,
            "d" => t.d = uint()?,
            "dbar" => t.dbar = uint()?,
            "n_train" => t.n_train = uint()?,
            "model" => {
                t.model = ModelKind::parse(value).ok_or_else(|| mismatch("linear, bilinear or bilinear-sparse"))?
            }
            "depth" => t.depth = uint()?,
            "lr" => t.learning_rate = value.parse().map_err(|_| mismatch("a number"))?,
            "batch" => t.batch = uint()?,
            "iters" => t.iterations = uint()?,
            "seed" => spec.seeds = list(value).ok_or_else(|| mismatch("a comma-separated list of integers"))?,
            "test_lengths" => {
                t.test_lengths = list(value).ok_or_else(|| mismatch("a comma-separated list of integers"))?
            }
            "trials" => t.trials = uint()?,
            "warmup" => t.warmup = uint()?,
            _ => return Err(err(format!("unknown key `{key}` (known: {})", KEYS.join(", ")))),
        }
        spec.overrides.push((key.to_string(), value.to_string()));
    }
    spec.train.seed = spec.seeds[0];
    Ok(spec)
}

pub fn parse_config(path: &Path) -> Result<ExperimentSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_applied() {
        let spec = parse_config_str("d = 4\ndbar = 12\nn_train = 200\nseed = 3, 4\n").unwrap();
        assert_eq!((spec.train.d, spec.train.dbar, spec.train.n_train), (4, 12, 200));
        assert_eq!(spec.seeds, vec![3, 4]);
        assert_eq!(spec.overrides.len(), 4);
    }

    #[test]
    fn bad_value_names_the_line() {
        match parse_config_str("d = banana") {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse_config_str("# c\n\nwidth = 3") {
            Err(CliError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("unknown key"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn task_names_round_trip() {
        for t in [TaskKind::Quadratic, TaskKind::Cubic, TaskKind::Polynomial { degree: 4 }] {
            assert_eq!(parse_task(&task_name(t)), Some(t));
        }
        assert_eq!(parse_task("polynomial-0"), None);
    }
}
