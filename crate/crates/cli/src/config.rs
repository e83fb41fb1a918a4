//! Experiment configuration: algorithm presets, TOML files and flag overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bset_core::nn::LrSchedule;
use bset_core::{Algorithm, TrainConfig};
use clap::Args;
use serde::{Deserialize, Serialize};

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub dataset: String,
    /// Directory holding the four IDX files.
    pub data_dir: Option<PathBuf>,
    /// Layer widths, input first. Derived from the data when absent.
    pub architecture: Option<Vec<usize>>,
    pub n_b: usize,
    pub n_t: usize,
    pub sigma: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Epochs at which the learning rate drops tenfold. When absent each of
    /// 400, 1000 and 3000 is used, or 50%, 75% and 90% of `epochs` if earlier.
    pub lr_breakpoints: Option<Vec<usize>>,
    pub eval_every: usize,
    pub eval_every_secs: Option<f64>,
    pub patience: Option<usize>,
    pub eval_subsample: usize,
    pub target_error: Option<f64>,
    pub time_limit_secs: Option<f64>,
    pub seed: u64,
    pub deterministic: bool,
}

impl ExperimentConfig {
    pub fn preset(algorithm: Algorithm) -> Self {
        let (n, sigma, lr) = match algorithm {
            Algorithm::Dbs => (100, 60.0, 1e-3),
            Algorithm::DbtV1 => (1000, 1.0, 1e-4),
            Algorithm::DbtV2 => (1000, 60.0, 1e-4),
            Algorithm::NnetBaseline => (100, 1.0, 1e-3),
        };
        Self {
            algorithm,
            dataset: "mnist".into(),
            data_dir: None,
            architecture: None,
            n_b: n,
            n_t: n,
            sigma,
            epochs: 5000,
            lr,
            lr_breakpoints: None,
            eval_every: 10,
            eval_every_secs: None,
            patience: Some(20),
            eval_subsample: 10_000,
            target_error: None,
            time_limit_secs: None,
            seed: 0,
            deterministic: false,
        }
    }

    /// Preset for the chosen algorithm, then the file, then the flags.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let from_file = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str::<Overrides>(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => Overrides::default(),
        };
        let merged = from_file.then(flags.clone());
        let algorithm = match &merged.algorithm {
            Some(a) => a.parse()?,
            None => Algorithm::Dbs,
        };
        let mut cfg = Self::preset(algorithm);
        merged.apply(&mut cfg);
        Ok(cfg)
    }

    /// Default widths: two hidden layers of 400 and a 20-d embedding, plus a
    /// class layer for the baseline.
    pub fn architecture_for(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        if let Some(a) = &self.architecture {
            return a.clone();
        }
        let mut dims = vec![input_dim, 400, 400, 20];
        if self.algorithm == Algorithm::NnetBaseline {
            dims.push(num_classes);
        }
        dims
    }

    pub fn check_architecture(&self, input_dim: usize, num_classes: usize) -> Result<Vec<usize>> {
        let dims = self.architecture_for(input_dim, num_classes);
        if dims.len() < 2 || dims.contains(&0) {
            bail!("architecture {dims:?} needs at least two positive widths");
        }
        if dims[0] != input_dim {
            bail!("architecture input width {} does not match data width {input_dim}", dims[0]);
        }
        if self.algorithm == Algorithm::NnetBaseline && *dims.last().unwrap() != num_classes {
            bail!("the baseline architecture must end in {num_classes} outputs");
        }
        Ok(dims)
    }

    pub fn schedule(&self) -> LrSchedule {
        match &self.lr_breakpoints {
            Some(b) => LrSchedule::new(self.lr, b.clone()),
            None => LrSchedule::for_budget(self.lr, self.epochs),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            algorithm: self.algorithm,
            n_b: self.n_b,
            n_t: self.n_t,
            sigma: self.sigma,
            epochs: self.epochs,
            schedule: self.schedule(),
            seed: self.seed,
            eval_every: self.eval_every,
            eval_every_secs: self.eval_every_secs,
            patience: self.patience,
            eval_subsample: self.eval_subsample,
            target_error: self.target_error,
            time_limit_secs: self.time_limit_secs,
            deterministic: self.deterministic,
        }
    }

    pub fn data_dir(&self) -> Result<PathBuf> {
        self.data_dir
            .clone()
            .context("no data directory configured (use --data or data_dir)")
    }
}

/// Optional settings accepted both as flags and as keys of a TOML file.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// dbs, dbt_v1, dbt_v2 or nnet_baseline
    #[arg(long)]
    pub algorithm: Option<String>,
    /// Dataset name recorded in outputs
    #[arg(long)]
    pub dataset: Option<String>,
    /// Directory with train/t10k IDX files (optionally gzipped)
    #[arg(long = "data")]
    pub data_dir: Option<PathBuf>,
    /// Comma-separated layer widths, input first
    #[arg(long = "arch", value_delimiter = ',')]
    pub architecture: Option<Vec<usize>>,
    #[arg(long = "nb")]
    pub n_b: Option<usize>,
    #[arg(long = "nt")]
    pub n_t: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Comma-separated epochs at which the learning rate drops tenfold
    #[arg(long = "lr-breakpoints", value_delimiter = ',')]
    pub lr_breakpoints: Option<Vec<usize>>,
    #[arg(long = "eval-every")]
    pub eval_every: Option<usize>,
    #[arg(long = "eval-every-secs")]
    pub eval_every_secs: Option<f64>,
    /// Evaluations without improvement before stopping; 0 disables
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long = "eval-subsample")]
    pub eval_subsample: Option<usize>,
    /// Stop once the test error (a fraction) is at or below this
    #[arg(long = "target-error")]
    pub target_error: Option<f64>,
    #[arg(long = "time-limit")]
    pub time_limit_secs: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write zero wall-clock times so metrics depend only on the seed
    #[arg(long)]
    #[serde(default)]
    pub deterministic: bool,
}

impl Overrides {
    /// `self` with every setting present in `other` replaced.
    pub fn then(self, other: Overrides) -> Overrides {
        Overrides {
            algorithm: other.algorithm.or(self.algorithm),
            dataset: other.dataset.or(self.dataset),
            data_dir: other.data_dir.or(self.data_dir),
            architecture: other.architecture.or(self.architecture),
            n_b: other.n_b.or(self.n_b),
            n_t: other.n_t.or(self.n_t),
            sigma: other.sigma.or(self.sigma),
            epochs: other.epochs.or(self.epochs),
            lr: other.lr.or(self.lr),
            lr_breakpoints: other.lr_breakpoints.or(self.lr_breakpoints),
            eval_every: other.eval_every.or(self.eval_every),
            eval_every_secs: other.eval_every_secs.or(self.eval_every_secs),
            patience: other.patience.or(self.patience),
            eval_subsample: other.eval_subsample.or(self.eval_subsample),
            target_error: other.target_error.or(self.target_error),
            time_limit_secs: other.time_limit_secs.or(self.time_limit_secs),
            seed: other.seed.or(self.seed),
            deterministic: other.deterministic || self.deterministic,
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig) {
        let named = self.dataset.is_some();
        if let Some(v) = self.dataset {
            cfg.dataset = v;
        }
        if let Some(dir) = self.data_dir {
            if !named {
                if let Some(name) = dir.file_name().and_then(|n| n.to_str()) {
                    cfg.dataset = name.to_string();
                }
            }
            cfg.data_dir = Some(dir);
        }
        cfg.architecture = self.architecture.or(cfg.architecture.take());
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(n_b, n_t, sigma, epochs, lr, eval_every, eval_subsample, seed);
        cfg.lr_breakpoints = self.lr_breakpoints.or(cfg.lr_breakpoints.take());
        cfg.eval_every_secs = self.eval_every_secs.or(cfg.eval_every_secs);
        if let Some(p) = self.patience {
            cfg.patience = (p > 0).then_some(p);
        }
        cfg.target_error = self.target_error.or(cfg.target_error);
        cfg.time_limit_secs = self.time_limit_secs.or(cfg.time_limit_secs);
        cfg.deterministic |= self.deterministic;
    }
}
