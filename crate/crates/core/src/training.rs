//! Epoch loop shared by every algorithm: seeded shuffling, partitioning,
//! learning-rate schedule, periodic evaluation, early stopping and metrics.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{shuffle_partition, Dataset};
use crate::dbs::{dbs_step, StepStats};
use crate::dbt::{dbt_step, Variant};
use crate::error::{Error, Result};
use crate::eval::{classifier_error, embed, labeled_embeddings, tree_error, ErrorCount};
use crate::nn::{AdamState, Gradients, LrSchedule, Network, Scalar};
use crate::rng::{indexed_stream, stream, Stream};
use crate::tree::BoundaryTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dbs,
    DbtV1,
    DbtV2,
    NnetBaseline,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::Dbs, Self::DbtV1, Self::DbtV2, Self::NnetBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dbs => "dbs",
            Self::DbtV1 => "dbt_v1",
            Self::DbtV2 => "dbt_v2",
            Self::NnetBaseline => "nnet_baseline",
        }
    }

    /// Whether predictions go through a boundary tree over embeddings.
    pub fn embeds(self) -> bool {
        self != Self::NnetBaseline
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Structure-building points per batch. The baseline trains on batches
    /// of `n_b + n_t` points.
    pub n_b: usize,
    /// Query points per batch.
    pub n_t: usize,
    pub sigma: f64,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    /// Evaluate every this many epochs (and after the last one).
    pub eval_every: usize,
    /// Additionally evaluate whenever this much training time has passed
    /// since the previous evaluation.
    pub eval_every_secs: Option<f64>,
    /// Stop after this many evaluations without a strictly lower test error.
    pub patience: Option<usize>,
    /// Size of the fixed training subsample the evaluation tree is built from.
    pub eval_subsample: usize,
    /// Stop once the test error is at or below this fraction.
    pub target_error: Option<f64>,
    /// Stop once this much training time has been spent.
    pub time_limit_secs: Option<f64>,
    /// Record zero wall-clock times so that metrics depend only on the seed.
    pub deterministic: bool,
}

impl TrainConfig {
    pub fn validate(&self, train: &Dataset) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_b == 0 || self.n_t == 0 {
            return bad("N_b and N_t must be at least 1".into());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.n_b + self.n_t > train.len() {
            return bad(format!(
                "N_b + N_t = {} exceeds the {} training points",
                self.n_b + self.n_t,
                train.len()
            ));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if self.eval_subsample == 0 {
            return bad("eval_subsample must be at least 1".into());
        }
        if !(self.schedule.initial > 0.0) {
            return bad("learning rate must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Step,
    Eval,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub algorithm: Algorithm,
    pub kind: RowKind,
    /// Epoch the row belongs to (for evaluations: epochs completed).
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub loss: Option<f64>,
    pub set_size: Option<usize>,
    pub lr: f64,
    /// Cumulative training time, evaluation excluded.
    pub wall_ms: u64,
    pub test_error: Option<f64>,
}

impl MetricRow {
    pub const CSV_HEADER: &'static str = "algorithm,kind,epoch,step,loss,set_size,lr,wall_ms,test_error";

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let kind = match self.kind {
            RowKind::Step => "step",
            RowKind::Eval => "eval",
        };
        write!(s, "{},{kind},{},{},", self.algorithm, self.epoch, self.step).unwrap();
        if let Some(l) = self.loss {
            write!(s, "{l}").unwrap();
        }
        s.push(',');
        if let Some(n) = self.set_size {
            write!(s, "{n}").unwrap();
        }
        write!(s, ",{},{},", self.lr, self.wall_ms).unwrap();
        if let Some(e) = self.test_error {
            write!(s, "{e}").unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochBudget,
    NoImprovement,
    TargetReached,
    TimeLimit,
}

/// Where training starts: fresh parameters, or a saved state.
#[derive(Debug, Clone)]
pub struct TrainStart {
    pub network: Network<f32>,
    pub adam: Option<AdamState<f32>>,
    pub epoch: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest test error seen (the starting parameters if
    /// no evaluation ran).
    pub network: Network<f32>,
    /// Optimizer state that goes with `network`.
    pub adam: AdamState<f32>,
    pub best_epoch: usize,
    pub best_test_error: Option<f64>,
    /// Epoch index reached (including any resumed-from offset).
    pub epochs_completed: usize,
    pub stop: StopReason,
    pub train_time: Duration,
    pub metrics: Vec<MetricRow>,
}

/// Fresh parameters for `dims`, drawn from the run seed.
pub fn init_network(dims: &[usize], seed: u64) -> Result<Network<f32>> {
    Network::random(dims, &mut stream(seed, Stream::Init))
}

/// Softmax cross-entropy of a plain classifier, averaged over the batch.
pub fn classifier_objective<T: Scalar>(
    net: &Network<T>,
    x: ArrayView2<'_, T>,
    labels: &[usize],
) -> Result<(f64, Gradients<T>)> {
    if x.nrows() != labels.len() || labels.is_empty() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), found: labels.len() });
    }
    let (out, tape) = net.forward(x)?;
    let classes = out.ncols();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::<T>::zeros(out.raw_dim());
    for ((row, mut g), &y) in out.axis_iter(Axis(0)).zip(grad.axis_iter_mut(Axis(0))).zip(labels) {
        let z: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[y];
        for (c, gc) in g.iter_mut().enumerate() {
            let p = (z[c] - lse).exp() - if c == y { 1.0 } else { 0.0 };
            *gc = crate::nn::cast(p / n);
        }
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("classifier loss"));
    }
    Ok((loss, net.backward(&tape, grad.view(), false)?.0))
}

fn classifier_step(
    net: &mut Network<f32>,
    adam: &mut AdamState<f32>,
    x: ArrayView2<'_, f32>,
    labels: &[usize],
    lr: f64,
) -> Result<StepStats> {
    let (loss, g) = classifier_objective(net, x, labels)?;
    adam.step(net, &g, lr)?;
    Ok(StepStats { loss, structure_size: 0, contributing: labels.len(), queries: labels.len() })
}

struct Evaluator<'a> {
    algorithm: Algorithm,
    reference: Dataset,
    test: &'a Dataset,
}

impl Evaluator<'_> {
    fn error(&self, net: &Network<f32>) -> Result<ErrorCount> {
        if !self.algorithm.embeds() {
            return classifier_error(net, self.test);
        }
        let emb = embed(net, self.reference.features.view())?;
        let tree = BoundaryTree::build(&labeled_embeddings(&emb, &self.reference.labels)?, None)?;
        tree_error(&tree, net, self.test)
    }
}

fn check_architecture(config: &TrainConfig, net: &Network<f32>, train: &Dataset, test: &Dataset) -> Result<()> {
    if net.input_dim() != train.dim() || test.dim() != train.dim() {
        return Err(Error::InvalidConfig(format!(
            "network input width {} does not match data width {}",
            net.input_dim(),
            train.dim()
        )));
    }
    if config.algorithm == Algorithm::NnetBaseline && net.output_dim() != train.num_classes {
        return Err(Error::InvalidConfig(format!(
            "classifier must end in {} outputs, not {}",
            train.num_classes,
            net.output_dim()
        )));
    }
    Ok(())
}

struct Best {
    network: Network<f32>,
    adam: AdamState<f32>,
    epoch: usize,
    error: f64,
}

/// Mutable bookkeeping of a run: metrics, best parameters, stop decisions.
struct Log<'a> {
    config: &'a TrainConfig,
    evaluator: Evaluator<'a>,
    sink: &'a mut dyn FnMut(&MetricRow) -> Result<()>,
    metrics: Vec<MetricRow>,
    best: Option<Best>,
    since_best: usize,
}

impl Log<'_> {
    fn wall_ms(&self, d: Duration) -> u64 {
        if self.config.deterministic {
            0
        } else {
            d.as_millis() as u64
        }
    }

    fn emit(&mut self, row: MetricRow) -> Result<()> {
        (self.sink)(&row)?;
        self.metrics.push(row);
        Ok(())
    }

    fn evaluate(
        &mut self,
        net: &Network<f32>,
        adam: &AdamState<f32>,
        epochs_done: usize,
        lr: f64,
        trained: Duration,
    ) -> Result<Option<StopReason>> {
        let err = self.evaluator.error(net)?.rate();
        self.emit(MetricRow {
            algorithm: self.config.algorithm,
            kind: RowKind::Eval,
            epoch: epochs_done,
            step: adam.steps(),
            loss: None,
            set_size: None,
            lr,
            wall_ms: self.wall_ms(trained),
            test_error: Some(err),
        })?;
        if self.best.as_ref().is_none_or(|b| err < b.error) {
            self.best = Some(Best { network: net.clone(), adam: adam.clone(), epoch: epochs_done, error: err });
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        if self.config.target_error.is_some_and(|t| err <= t) {
            return Ok(Some(StopReason::TargetReached));
        }
        if self.config.patience.is_some_and(|p| self.since_best >= p) {
            return Ok(Some(StopReason::NoImprovement));
        }
        Ok(None)
    }
}

/// Runs the configured algorithm. `sink` sees each metrics row as it is produced.
pub fn train(
    train: &Dataset,
    test: &Dataset,
    start: TrainStart,
    config: &TrainConfig,
    sink: &mut dyn FnMut(&MetricRow) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate(train)?;
    let TrainStart { network: mut net, adam, epoch: first_epoch } = start;
    check_architecture(config, &net, train, test)?;
    let mut adam = adam.unwrap_or_else(|| AdamState::new(&net));

    let reference_idx = train.sample_indices(config.eval_subsample, &mut stream(config.seed, Stream::EvalSubsample));
    let mut log = Log {
        config,
        evaluator: Evaluator { algorithm: config.algorithm, reference: train.subset(&reference_idx), test },
        sink,
        metrics: Vec::new(),
        best: None,
        since_best: 0,
    };

    let mut trained = Duration::ZERO;
    let mut last_eval_at = Duration::ZERO;
    // True while the latest parameters have already been evaluated.
    let mut evaluated = false;
    let mut stop = StopReason::EpochBudget;
    let mut epoch = first_epoch;
    let chunk = config.n_b + config.n_t;

    'epochs: while epoch < config.epochs {
        let lr = config.schedule.rate(epoch);
        let mut rng = indexed_stream(config.seed, Stream::Shuffle, epoch as u32);
        for rows in shuffle_partition(train.len(), chunk, &mut rng) {
            let t0 = Instant::now();
            let x = train.features.select(Axis(0), &rows);
            let labels: Vec<usize> = rows.iter().map(|&i| train.labels[i]).collect();
            let (n_b, sigma, c) = (config.n_b, config.sigma, train.num_classes);
            let stats = match config.algorithm {
                Algorithm::Dbs => dbs_step(&mut net, &mut adam, x.view(), &labels, n_b, sigma, c, lr)?,
                Algorithm::DbtV1 => dbt_step(&mut net, &mut adam, x.view(), &labels, n_b, sigma, c, Variant::V1, lr)?,
                Algorithm::DbtV2 => dbt_step(&mut net, &mut adam, x.view(), &labels, n_b, sigma, c, Variant::V2, lr)?,
                Algorithm::NnetBaseline => classifier_step(&mut net, &mut adam, x.view(), &labels, lr)?,
            };
            trained += t0.elapsed();
            evaluated = false;
            log.emit(MetricRow {
                algorithm: config.algorithm,
                kind: RowKind::Step,
                epoch,
                step: adam.steps(),
                loss: Some(stats.loss),
                set_size: config.algorithm.embeds().then_some(stats.structure_size),
                lr,
                wall_ms: log.wall_ms(trained),
                test_error: None,
            })?;
            let out_of_time = config.time_limit_secs.is_some_and(|t| trained.as_secs_f64() >= t);
            let timed_eval = config
                .eval_every_secs
                .is_some_and(|s| (trained - last_eval_at).as_secs_f64() >= s);
            if timed_eval || out_of_time {
                last_eval_at = trained;
                evaluated = true;
                if let Some(reason) = log.evaluate(&net, &adam, epoch, lr, trained)? {
                    stop = reason;
                    break 'epochs;
                }
                if out_of_time {
                    stop = StopReason::TimeLimit;
                    break 'epochs;
                }
            }
        }
        epoch += 1;
        let due = (epoch - first_epoch) % config.eval_every == 0 || epoch == config.epochs;
        if due && !evaluated {
            last_eval_at = trained;
            evaluated = true;
            if let Some(reason) = log.evaluate(&net, &adam, epoch, lr, trained)? {
                stop = reason;
                break;
            }
        }
    }

    let metrics = std::mem::take(&mut log.metrics);
    let (network, adam, best_epoch, best_test_error) = match log.best {
        Some(b) => (b.network, b.adam, b.epoch, Some(b.error)),
        None => (net, adam, epoch, None),
    };
    Ok(TrainOutcome {
        network,
        adam,
        best_epoch,
        best_test_error,
        epochs_completed: epoch,
        stop,
        train_time: trained,
        metrics,
    })
}
