use std::fs;
use std::process::Command;

use icl_cli::config::Experiment;
use icl_cli::figures::{emit_figure_data, FigureName};
use icl_cli::run::{sweep_command, train_command};
use icl_cli::{parse_config, parse_config_str, run_verify, CliError};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_icl-lab"))
}

#[test]
fn config_file_with_reference_settings() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.cfg");
    fs::write(&path, "d = 4\ndbar = 12\nn_train = 200\n").unwrap();
    let spec = parse_config(&path).unwrap();
    assert_eq!((spec.train.d, spec.train.dbar, spec.train.n_train), (4, 12, 200));
    assert_eq!(spec.train.learning_rate, 1e-3);
    assert_eq!(spec.seeds, vec![0]);
}

#[test]
fn empty_file_gives_defaults() {
    let spec = parse_config_str("").unwrap();
    assert_eq!(spec, icl_cli::ExperimentSpec::default());
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        parse_config(&dir.path().join("nope.cfg")),
        Err(CliError::Io { .. })
    ));
}

#[test]
fn malformed_lines_report_their_number() {
    for (text, line) in [
        ("d = banana", 1),
        ("d = 3\nlr 0.1", 2),
        ("\n\nseed = a,b", 3),
        ("model = mlp", 1),
    ] {
        match parse_config_str(text) {
            Err(CliError::Parse { line: got, .. }) => assert_eq!(got, line, "{text:?}"),
            other => panic!("{text:?} gave {other:?}"),
        }
    }
}

#[test]
fn empty_seed_list_is_rejected() {
    let mut spec = parse_config_str("").unwrap();
    spec.seeds.clear();
    assert!(matches!(spec.validate(), Err(CliError::Config(_))));
}

#[test]
fn empty_verify_is_vacuous() {
    assert!(run_verify(&[]).is_empty());
}

#[test]
fn verify_exits_zero_and_prints_one_line_per_check() {
    let out = bin().args(["verify", "orthonormality", "spectra"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let checks = text.lines().filter(|l| l.starts_with("check=")).count();
    assert_eq!(checks, 11);
    assert!(text.contains("failed=0"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bin().args(["verify", "nonsense"]).status().unwrap().code(), Some(1));
    assert_eq!(bin().args(["frobnicate"]).status().unwrap().code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "depth = 3\n").unwrap();
    let status = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn construct_loss_prints_all_three_losses() {
    let out = bin()
        .args(["construct-loss", "--d", "1", "--n", "40", "--trials", "200"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("d,n,trials,mc_loss,mc_stderr,paper_formula_loss,oracle_loss")
    );
    assert_eq!(lines.next().unwrap().split(',').count(), 7);
}

fn small_spec(dir: &std::path::Path, text: &str) -> icl_cli::ExperimentSpec {
    let mut spec = parse_config_str(text).unwrap();
    spec.output_dir = dir.to_path_buf();
    spec
}

#[test]
fn verification_csv_schema_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let text = "d = 1\ntest_lengths = 20, 40, 80\ntrials = 300\n";
    let pa = emit_figure_data(FigureName::Verification, &small_spec(a.path(), text)).unwrap();
    let pb = emit_figure_data(FigureName::Verification, &small_spec(b.path(), text)).unwrap();
    assert_eq!(pa.len(), 2);
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
    let csv = fs::read_to_string(&pa[0]).unwrap();
    assert!(csv.starts_with("n,mc_loss,mc_stderr,paper_formula_loss,oracle_loss\n"));
    assert_eq!(csv.lines().count(), 4);
    let fit = fs::read_to_string(&pa[1]).unwrap();
    assert!(fit.starts_with("slope,intercept,r2\n"));
}

#[test]
fn train_then_sweep_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let text =
        "d = 1\ndbar = 3\nn_train = 10\ndepth = 2\nbatch = 4\niters = 3\nseed = 5\ntest_lengths = 10, 20\ntrials = 2\n";
    let mut spec = small_spec(dir.path(), text);
    spec.experiment = Experiment::Train;
    let written = train_command(&spec).unwrap();
    assert_eq!(written.len(), 3);
    let summary = fs::read_to_string(&written[2]).unwrap();
    assert!(summary.starts_with("seed,warmup,mean_test_loss\n5,0,"));
    let curve = fs::read_to_string(&written[1]).unwrap();
    assert_eq!(curve.lines().next(), Some("iteration,train_loss,test_loss"));
    assert_eq!(curve.lines().count(), 4);
    let sweep = sweep_command(&written[0], &spec).unwrap();
    let table = fs::read_to_string(sweep).unwrap();
    assert!(table.starts_with("n_test,mean_loss,std_loss,trials\n"));
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn block_figures_have_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let text =
        "d = 1\ndbar = 3\nn_train = 10\ndepth = 4\nbatch = 4\niters = 2\nseed = 1, 2\ntest_lengths = 10\ntrials = 2\n";
    let spec = small_spec(dir.path(), text);
    let paths = emit_figure_data(FigureName::BlockQuadratic, &spec).unwrap();
    let csv = fs::read_to_string(&paths[0]).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,depth,n_test,mean_loss,std_loss,trials");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("linear,6,10,"));
    assert!(lines[2].starts_with("bilinear,4,10,"));
    assert!(lines[2].ends_with(",4"));

    let cubic =
        "task = cubic\nd = 4\ndbar = 6\nn_train = 10\ndepth = 2\nbatch = 4\niters = 2\ntest_lengths = 10\ntrials = 2\n";
    let paths = emit_figure_data(FigureName::BlockCubic, &small_spec(dir.path(), cubic)).unwrap();
    let csv = fs::read_to_string(&paths[0]).unwrap();
    assert!(csv.contains("\nbilinear,2,10,") && csv.contains("\nbilinear-sparse,2,10,"));

    let gen = "d = 1\ndbar = 3\nn_train = 8\ndepth = 2\nbatch = 4\niters = 2\ntest_lengths = 10\ntrials = 2\n";
    let paths = emit_figure_data(FigureName::Generalization, &small_spec(dir.path(), gen)).unwrap();
    let csv = fs::read_to_string(&paths[0]).unwrap();
    assert_eq!(csv.lines().next(), Some("n_train,n_test,mean_loss,std_loss"));
    let trains: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(trains, vec!["4", "6", "8", "10"]);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let spec = small_spec(&blocker.join("sub"), "d = 1\ntest_lengths = 10, 20\ntrials = 20\n");
    assert!(matches!(
        emit_figure_data(FigureName::Verification, &spec),
        Err(CliError::Io { .. })
    ));
}
