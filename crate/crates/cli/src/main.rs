use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bset_cli::bench::{bench, BenchSettings};
use bset_cli::config::{ExperimentConfig, Overrides};
use bset_cli::run::{embed_run, evaluate_run, finalize_run, load_data, train_run, FinalizeOptions, Run, Structure, EMBEDDING};
use bset_core::nn::Checkpoint;
use bset_core::Algorithm;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bset", version, about = "Boundary-tree and boundary-set metric learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a run directory
    Train {
        /// TOML file with any of the settings below
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Run directory
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint (parameters, optimizer state, epoch)
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Build the final tree or forest from all training points and report test error
    Finalize {
        #[arg(long)]
        run: PathBuf,
        /// Use this data directory instead of the one recorded in the run
        #[arg(long)]
        data: Option<PathBuf>,
        /// Build a forest of this many trees instead of a single tree
        #[arg(long)]
        forest: Option<usize>,
        #[arg(long = "max-children")]
        max_children: Option<usize>,
        /// Shuffle the insertion order with this seed
        #[arg(long = "shuffle-seed")]
        shuffle_seed: Option<u64>,
    },
    /// Recompute the test error of a finalized run from its saved files
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Export 2-d embeddings of a random subset as CSV
    Embed {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        sample: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        /// Output file (default: embedding.csv in the run directory)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare wall-clock time to a target test error across algorithms
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "dbs,dbt_v1,dbt_v2")]
        algorithms: Vec<String>,
        /// Target test error as a fraction
        #[arg(long = "target", default_value_t = 0.15)]
        target: f64,
        /// Seconds of training between evaluations
        #[arg(long = "interval", default_value_t = 10.0)]
        interval: f64,
        /// Training-time cap per algorithm, in seconds
        #[arg(long = "budget", default_value_t = 600.0)]
        budget: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, overrides, out, resume } => {
            let cfg = ExperimentConfig::resolve(config.as_deref(), &overrides)?;
            let splits = load_data(&cfg)?;
            let resume = resume
                .map(|p| Checkpoint::load(&p).with_context(|| format!("loading {}", p.display())))
                .transpose()?;
            let s = train_run(&cfg, &splits, &out, resume)?;
            let err = s.best_test_error.map_or_else(|| "-".into(), |e| format!("{:.2}%", 100.0 * e));
            println!(
                "{}: {} epochs ({:?}), best evaluation error {err} at epoch {}, {:.1}s",
                s.algorithm, s.epochs_completed, s.stop, s.best_epoch, s.train_secs
            );
        }
        Command::Finalize { run, data, forest, max_children, shuffle_seed } => {
            let run = Run::open(&run)?;
            let splits = run.data(data.as_deref())?;
            let structure = match forest {
                None => Structure::Tree,
                Some(0) => bail!("a forest needs at least one tree"),
                Some(k) => Structure::Forest(k),
            };
            let row = finalize_run(&run, &splits, structure, FinalizeOptions { max_children, shuffle_seed })?;
            println!("{}", bset_cli::ReportRow::CSV_HEADER);
            println!("{}", row.to_csv());
        }
        Command::Evaluate { run, data } => {
            let run = Run::open(&run)?;
            let splits = run.data(data.as_deref())?;
            let e = evaluate_run(&run, &splits.test)?;
            println!("test error {:.4}% ({} of {})", 100.0 * e.rate(), e.wrong, e.total);
        }
        Command::Embed { run, data, sample, seed, split, out } => {
            let run = Run::open(&run)?;
            let splits = run.data(data.as_deref())?;
            let set = match split {
                Split::Train => &splits.train,
                Split::Test => &splits.test,
            };
            let out = out.unwrap_or_else(|| run.dir.join(EMBEDDING));
            let n = embed_run(&run, set, sample, seed, &out)?;
            println!("wrote {n} points to {}", out.display());
        }
        Command::Bench { config, overrides, out, algorithms, target, interval, budget } => {
            let base = ExperimentConfig::resolve(config.as_deref(), &overrides)?;
            let algorithms = algorithms
                .iter()
                .map(|a| a.parse::<Algorithm>())
                .collect::<bset_core::Result<Vec<_>>>()?;
            let splits = load_data(&base)?;
            let settings = BenchSettings { target_error: target, eval_every_secs: interval, time_limit_secs: budget };
            let outcome = bench(&base, &algorithms, &splits, settings, &out)?;
            for (alg, t) in outcome.time_to_target {
                match t {
                    Some(s) => println!("{alg}: reached {:.1}% after {s:.1}s", 100.0 * target),
                    None => println!("{alg}: did not reach {:.1}% within {budget}s", 100.0 * target),
                }
            }
        }
    }
    Ok(())
}
