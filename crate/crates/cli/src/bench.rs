//! Time-to-error comparison: the same data, seed and evaluation protocol for
//! each algorithm, evaluated at fixed intervals of training time.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Result;
use bset_core::dataset::Splits;
use bset_core::training::{MetricRow, RowKind};
use bset_core::Algorithm;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::run::train_run;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub algorithm: Algorithm,
    /// Training time before this evaluation, evaluation time excluded.
    pub elapsed_s: f64,
    pub epoch: usize,
    pub step: u64,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutcome {
    pub rows: Vec<BenchRow>,
    /// First elapsed time at which each algorithm reached the target, if it did.
    pub time_to_target: Vec<(Algorithm, Option<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSettings {
    pub target_error: f64,
    pub eval_every_secs: f64,
    pub time_limit_secs: f64,
}

pub const BENCH_CSV: &str = "bench.csv";
pub const BENCH_SUMMARY_CSV: &str = "bench_summary.csv";

/// Each algorithm runs with its own preset hyperparameters; dataset, seed,
/// epoch budget, evaluation subsample and architecture come from `base`.
pub fn bench(
    base: &ExperimentConfig,
    algorithms: &[Algorithm],
    splits: &Splits,
    settings: BenchSettings,
    out: &Path,
) -> Result<BenchOutcome> {
    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    let mut time_to_target = Vec::new();
    for &alg in algorithms {
        let mut cfg = ExperimentConfig::preset(alg);
        cfg.dataset = base.dataset.clone();
        cfg.data_dir = base.data_dir.clone();
        cfg.architecture = base.architecture.clone().filter(|_| alg.embeds());
        cfg.epochs = base.epochs;
        cfg.seed = base.seed;
        cfg.eval_subsample = base.eval_subsample;
        cfg.eval_every = base.eval_every;
        cfg.lr_breakpoints = base.lr_breakpoints.clone();
        cfg.patience = None;
        cfg.deterministic = false;
        cfg.eval_every_secs = Some(settings.eval_every_secs);
        cfg.target_error = Some(settings.target_error);
        cfg.time_limit_secs = Some(settings.time_limit_secs);
        let dir = out.join(alg.name());
        train_run(&cfg, splits, &dir, None)?;
        let metrics = fs::read_to_string(dir.join(crate::run::METRICS))?;
        let evals: Vec<BenchRow> = parse_eval_rows(&metrics)?
            .into_iter()
            .map(|r| BenchRow {
                algorithm: alg,
                elapsed_s: r.wall_ms as f64 / 1000.0,
                epoch: r.epoch,
                step: r.step,
                test_error: r.test_error.unwrap_or(f64::NAN),
            })
            .collect();
        let reached = evals
            .iter()
            .find(|r| r.test_error <= settings.target_error)
            .map(|r| r.elapsed_s);
        time_to_target.push((alg, reached));
        rows.extend(evals);
    }

    let mut w = BufWriter::new(File::create(out.join(BENCH_CSV))?);
    writeln!(w, "algorithm,elapsed_s,epoch,step,test_error")?;
    for r in &rows {
        writeln!(w, "{},{:.3},{},{},{}", r.algorithm, r.elapsed_s, r.epoch, r.step, r.test_error)?;
    }
    w.flush()?;
    let mut w = BufWriter::new(File::create(out.join(BENCH_SUMMARY_CSV))?);
    writeln!(w, "algorithm,target_error,seconds_to_target")?;
    for (alg, t) in &time_to_target {
        let t = t.map_or_else(|| "-".to_string(), |s| format!("{s:.3}"));
        writeln!(w, "{alg},{},{t}", settings.target_error)?;
    }
    w.flush()?;
    Ok(BenchOutcome { rows, time_to_target })
}

/// Evaluation rows of a metrics CSV written by a training run.
pub fn parse_eval_rows(csv: &str) -> Result<Vec<MetricRow>> {
    let mut out = Vec::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            anyhow::bail!("malformed metrics line {line:?}");
        }
        if f[1] != "eval" {
            continue;
        }
        out.push(MetricRow {
            algorithm: f[0].parse()?,
            kind: RowKind::Eval,
            epoch: f[2].parse()?,
            step: f[3].parse()?,
            loss: None,
            set_size: None,
            lr: f[6].parse()?,
            wall_ms: f[7].parse()?,
            test_error: Some(f[8].parse()?),
        });
    }
    Ok(out)
}
