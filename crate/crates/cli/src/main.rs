use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use icl_cli::config::Experiment;
use icl_cli::run::{construct_loss, sweep_command, train_command};
use icl_cli::{emit_figure_data, parse_config, run_verify, Category, CliError, ExperimentSpec, FigureName};

#[derive(Parser)]
#[command(
    name = "icl-lab",
    about = "In-context learning experiments with bilinear transformers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run invariant suites (all of them when none are named).
    Verify {
        #[arg(value_name = "CATEGORY")]
        categories: Vec<String>,
    },
    /// Monte-Carlo loss of the one-block kernel construction.
    ConstructLoss {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one model per configured seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Evaluate a saved model over the configured test lengths.
    Sweep {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Emit the CSV data for one figure.
    Figure {
        #[arg(long)]
        name: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("ICL_THREADS") {
        let threads: usize = v
            .parse()
            .map_err(|_| CliError::Config(format!("ICL_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn load(config: &PathBuf, out: PathBuf, experiment: Experiment) -> Result<ExperimentSpec, CliError> {
    let mut spec = parse_config(config)?;
    spec.experiment = experiment;
    spec.output_dir = out;
    Ok(spec)
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Verify { categories } => {
            let cats = if categories.is_empty() {
                Category::ALL.to_vec()
            } else {
                categories
                    .iter()
                    .map(|c| Category::parse(c).ok_or_else(|| CliError::Config(format!("unknown category `{c}`"))))
                    .collect::<Result<Vec<_>, _>>()?
            };
            let results = run_verify(&cats);
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("summary checks={} failed={failed}", results.len());
            Ok(if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::ConstructLoss { d, n, trials, seed } => {
            let r = construct_loss(d, n, trials, seed)?;
            println!("d,n,trials,mc_loss,mc_stderr,paper_formula_loss,oracle_loss");
            println!(
                "{},{},{},{:.10},{:.10},{:.10},{:.10}",
                r.d, r.n, r.trials, r.mc_loss, r.mc_stderr, r.stated_formula_loss, r.oracle_loss
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { config, out } => {
            let spec = load(&config, out, Experiment::Train)?;
            print_paths(&train_command(&spec)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            model_file,
            config,
            out,
        } => {
            let spec = load(&config, out, Experiment::Sweep)?;
            print_paths(&[sweep_command(&model_file, &spec)?]);
            Ok(ExitCode::SUCCESS)
        }
        Command::Figure { name, config, out } => {
            let figure =
                FigureName::parse(&name).ok_or_else(|| CliError::Config(format!("unknown figure `{name}`")))?;
            let spec = load(&config, out, Experiment::Figure)?;
            print_paths(&emit_figure_data(figure, &spec)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
