//! Run directories: training, finalization, evaluation and embedding export.
//!
//! A run directory holds `manifest.json` (configuration, seed, versions),
//! `metrics.csv`, `checkpoint.bin`, `summary.json` and, once finalized,
//! `tree.bin` (or `tree-<i>.bin` per forest member), `report.csv` and
//! optionally `embedding.csv`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use bset_core::dataset::{load_splits, Dataset, Splits};
use bset_core::eval::{
    classifier_error, embed, finalize_forest, finalize_tree, forest_error, tree_error, ErrorCount,
};
use bset_core::nn::Checkpoint;
use bset_core::records::{load_tree, save_tree};
use bset_core::rng::{stream, Stream};
use bset_core::training::{init_network, train, MetricRow, StopReason, TrainStart};
use bset_core::{Algorithm, BoundaryForest, BoundaryTree};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::report::ReportRow;

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.csv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const SUMMARY: &str = "summary.json";
pub const TREE: &str = "tree.bin";
pub const REPORT: &str = "report.csv";
pub const EMBEDDING: &str = "embedding.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub train_points: usize,
    pub test_points: usize,
    pub dim: usize,
    pub classes: usize,
}

impl DatasetInfo {
    pub fn of(splits: &Splits) -> Self {
        Self {
            name: splits.train.name.clone(),
            train_points: splits.train.len(),
            test_points: splits.test.len(),
            dim: splits.train.dim(),
            classes: splits.train.num_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub architecture: Vec<usize>,
    pub dataset: DatasetInfo,
    pub versions: Versions,
    /// Epoch training resumed from (0 for a fresh run).
    pub start_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub bset_cli: String,
    pub bset_core: String,
}

impl Versions {
    pub fn current() -> Self {
        Self { bset_cli: env!("CARGO_PKG_VERSION").into(), bset_core: bset_core::VERSION.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: Algorithm,
    pub epochs_completed: usize,
    pub best_epoch: usize,
    pub best_test_error: Option<f64>,
    pub stop: StopReason,
    pub train_secs: f64,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Splits> {
    let dir = cfg.data_dir()?;
    load_splits(&dir, &cfg.dataset).with_context(|| format!("loading data from {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Trains into `out`, optionally continuing from a checkpoint, and saves the
/// best parameters.
pub fn train_run(cfg: &ExperimentConfig, splits: &Splits, out: &Path, resume: Option<Checkpoint>) -> Result<Summary> {
    let dims = cfg.check_architecture(splits.train.dim(), splits.train.num_classes)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let start = match resume {
        Some(ck) => {
            if ck.network.dims() != dims {
                bail!("checkpoint architecture {:?} differs from configured {dims:?}", ck.network.dims());
            }
            TrainStart { network: ck.network, adam: ck.adam, epoch: ck.epochs as usize }
        }
        None => TrainStart { network: init_network(&dims, cfg.seed)?, adam: None, epoch: 0 },
    };
    write_json(
        &out.join(MANIFEST),
        &Manifest {
            config: cfg.clone(),
            seed: cfg.seed,
            architecture: dims,
            dataset: DatasetInfo::of(splits),
            versions: Versions::current(),
            start_epoch: start.epoch,
        },
    )?;

    let metrics_path = out.join(METRICS);
    let mut metrics = BufWriter::new(File::create(&metrics_path)?);
    writeln!(metrics, "{}", MetricRow::CSV_HEADER)?;
    let mut sink = |row: &MetricRow| -> bset_core::Result<()> {
        writeln!(metrics, "{}", row.to_csv())?;
        Ok(())
    };
    let outcome = train(&splits.train, &splits.test, start, &cfg.train_config(), &mut sink)?;
    metrics.flush()?;

    Checkpoint { network: outcome.network, adam: Some(outcome.adam), epochs: outcome.best_epoch as u64 }
        .save(out.join(CHECKPOINT))?;
    let summary = Summary {
        algorithm: cfg.algorithm,
        epochs_completed: outcome.epochs_completed,
        best_epoch: outcome.best_epoch,
        best_test_error: outcome.best_test_error,
        stop: outcome.stop,
        train_secs: if cfg.deterministic { 0.0 } else { outcome.train_time.as_secs_f64() },
    };
    write_json(&out.join(SUMMARY), &summary)?;
    Ok(summary)
}

/// A finished run directory.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub checkpoint: Checkpoint,
}

impl Run {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
        let checkpoint = Checkpoint::load(dir.join(CHECKPOINT))
            .with_context(|| format!("loading checkpoint from {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), manifest, checkpoint })
    }

    pub fn summary(&self) -> Option<Summary> {
        read_json(&self.dir.join(SUMMARY)).ok()
    }

    /// The run's data, or another directory with the same layout.
    pub fn data(&self, override_dir: Option<&Path>) -> Result<Splits> {
        let mut cfg = self.manifest.config.clone();
        if let Some(d) = override_dir {
            cfg.data_dir = Some(d.to_path_buf());
        }
        load_data(&cfg)
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        let net = &self.checkpoint.network;
        if net.input_dim() != data.dim() {
            bail!("checkpoint expects {}-wide inputs but the data has {}", net.input_dim(), data.dim());
        }
        Ok(())
    }

    fn tree_files(&self) -> Vec<PathBuf> {
        let single = self.dir.join(TREE);
        if single.is_file() {
            return vec![single];
        }
        (0..)
            .map(|i| self.dir.join(format!("tree-{i}.bin")))
            .take_while(|p| p.is_file())
            .collect()
    }

    fn clear_tree_files(&self) -> Result<()> {
        for p in self.tree_files() {
            fs::remove_file(p)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    Tree,
    Forest(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FinalizeOptions {
    pub max_children: Option<usize>,
    /// Shuffle insertion order with this seed instead of using dataset order.
    pub shuffle_seed: Option<u64>,
}

/// Builds the final structure from all training points, saves it and
/// appends a report row.
pub fn finalize_run(run: &Run, splits: &Splits, structure: Structure, opts: FinalizeOptions) -> Result<ReportRow> {
    run.check_data(&splits.train)?;
    let net = &run.checkpoint.network;
    let algorithm = run.manifest.config.algorithm;
    let t0 = Instant::now();
    let (count, nodes, trees) = if !algorithm.embeds() {
        (classifier_error(net, &splits.test)?, None, None)
    } else {
        run.clear_tree_files()?;
        match structure {
            Structure::Tree => {
                let tree = finalize_tree(net, &splits.train, opts.max_children, opts.shuffle_seed)?;
                save_tree(&tree, run.dir.join(TREE))?;
                (tree_error(&tree, net, &splits.test)?, Some(tree.len()), Some(1))
            }
            Structure::Forest(k) => {
                let seed = opts.shuffle_seed.unwrap_or(run.manifest.seed);
                let forest = finalize_forest(net, &splits.train, k, opts.max_children, seed)?;
                for (i, t) in forest.trees().iter().enumerate() {
                    save_tree(t, run.dir.join(format!("tree-{i}.bin")))?;
                }
                let n = forest.trees().iter().map(BoundaryTree::len).sum();
                (forest_error(&forest, net, &splits.test)?, Some(n), Some(k))
            }
        }
    };
    let finalize_secs = t0.elapsed().as_secs_f64();
    let summary = run.summary();
    let row = ReportRow {
        model: algorithm.name().into(),
        dataset: run.manifest.dataset.name.clone(),
        test_error_pct: 100.0 * count.rate(),
        misclassified: count.wrong,
        test_points: count.total,
        nodes,
        trees,
        epochs: run.checkpoint.epochs as usize,
        train_secs: summary.map_or(0.0, |s| s.train_secs),
        finalize_secs,
    };
    row.append_to(&run.dir.join(REPORT))?;
    Ok(row)
}

/// Re-scores saved structures (or the plain classifier) on the test split.
pub fn evaluate_run(run: &Run, test: &Dataset) -> Result<ErrorCount> {
    run.check_data(test)?;
    let net = &run.checkpoint.network;
    if !run.manifest.config.algorithm.embeds() {
        return Ok(classifier_error(net, test)?);
    }
    let files = run.tree_files();
    let trees = files.iter().map(load_tree).collect::<bset_core::Result<Vec<_>>>()?;
    match trees.len() {
        0 => bail!("{} has no saved tree; run finalize first", run.dir.display()),
        1 if files[0].ends_with(TREE) => Ok(tree_error(&trees[0], net, test)?),
        _ => Ok(forest_error(&BoundaryForest::from_trees(trees)?, net, test)?),
    }
}

/// Writes `x,y,label` rows for a seeded random subset of `data`.
pub fn embed_run(run: &Run, data: &Dataset, sample: usize, seed: u64, out: &Path) -> Result<usize> {
    run.check_data(data)?;
    let net = &run.checkpoint.network;
    if net.output_dim() != 2 {
        bail!("embedding export needs a 2-d output layer, this network has {}", net.output_dim());
    }
    let idx = data.sample_indices(sample, &mut stream(seed, Stream::Embedding));
    let subset = data.subset(&idx);
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    writeln!(w, "x,y,label")?;
    if !idx.is_empty() {
        let emb = embed(net, subset.features.view())?;
        for (row, label) in emb.outer_iter().zip(&subset.labels) {
            writeln!(w, "{},{},{label}", row[0], row[1])?;
        }
    }
    w.flush()?;
    Ok(idx.len())
}
