//! The training protocol: shuffled mini-batch epochs, full-pass train and
//! validation metrics, learning-rate reduction on plateau, early stopping,
//! and best-weights checkpointing.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::dataio::{Dataset, Sample};
use crate::error::{config_err, data_err, Error, Result};
use crate::layers::ConvParams;
use crate::metrics::{cross_entropy, dice_report, AccuracyMode, LabelMap, MetricsReport};
use crate::net::Graph;
use crate::optim::Optimizer;
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopConfig {
    pub min_delta: f64,
    pub patience: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            min_delta: 1e-4,
            patience: 12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceLrConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for ReduceLrConfig {
    fn default() -> Self {
        ReduceLrConfig {
            factor: 0.2,
            patience: 8,
            min_delta: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Safety cap on the number of epochs.
    pub max_epochs: usize,
    pub early_stop: EarlyStopConfig,
    pub reduce_lr: ReduceLrConfig,
    /// Epoch `e` shuffles with `shuffle_seed + e`.
    pub shuffle_seed: u64,
    /// Where the best weights are written whenever validation loss improves.
    pub checkpoint_path: Option<PathBuf>,
    /// Record elapsed seconds in the history. Off by default so that two
    /// identical runs serialize byte-identically.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1,
            max_epochs: 500,
            early_stop: EarlyStopConfig::default(),
            reduce_lr: ReduceLrConfig::default(),
            shuffle_seed: 0,
            checkpoint_path: None,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".to_string());
        }
        if self.max_epochs == 0 {
            problems.push("max_epochs must be >= 1".to_string());
        }
        if self.early_stop.patience == 0 {
            problems.push("early_stop.patience must be >= 1".to_string());
        }
        if self.reduce_lr.patience == 0 {
            problems.push("reduce_lr.patience must be >= 1".to_string());
        }
        if !(self.reduce_lr.factor > 0.0 && self.reduce_lr.factor < 1.0) {
            problems.push(format!("reduce_lr.factor must be in (0, 1), got {}", self.reduce_lr.factor));
        }
        for (name, d) in [("early_stop", self.early_stop.min_delta), ("reduce_lr", self.reduce_lr.min_delta)] {
            if !(d >= 0.0 && d.is_finite()) {
                problems.push(format!("{name}.min_delta must be finite and >= 0, got {d}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(config_err!("{}", problems.join("; ")))
        }
    }
}

/// Tracks the best loss seen so far. A value improves when it is at most
/// `best - min_delta`; NaN never improves.
#[derive(Clone, Copy, Debug, PartialEq)]
struct BestTracker {
    min_delta: f64,
    best: f64,
    wait: usize,
}

impl BestTracker {
    fn new(min_delta: f64) -> Self {
        BestTracker {
            min_delta,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    fn observe(&mut self, loss: f64) -> bool {
        if loss <= self.best - self.min_delta {
            self.best = loss;
            self.wait = 0;
            true
        } else {
            self.wait += 1;
            false
        }
    }
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// non-improving epochs, then starts counting again (the best is kept).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateauTracker {
    tracker: BestTracker,
    factor: f64,
    patience: usize,
}

impl PlateauTracker {
    pub fn new(config: ReduceLrConfig) -> Self {
        PlateauTracker {
            tracker: BestTracker::new(config.min_delta),
            factor: config.factor,
            patience: config.patience,
        }
    }

    /// Returns the reduced learning rate when the patience runs out.
    pub fn update(&mut self, val_loss: f64, current_lr: f64) -> Option<f64> {
        if self.tracker.observe(val_loss) || self.tracker.wait < self.patience {
            return None;
        }
        self.tracker.wait = 0;
        Some(current_lr * self.factor)
    }

    pub fn best(&self) -> f64 {
        self.tracker.best
    }

    pub fn wait(&self) -> usize {
        self.tracker.wait
    }
}

/// Signals a stop after `patience` consecutive non-improving epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStopTracker {
    tracker: BestTracker,
    patience: usize,
}

impl EarlyStopTracker {
    pub fn new(config: EarlyStopConfig) -> Self {
        EarlyStopTracker {
            tracker: BestTracker::new(config.min_delta),
            patience: config.patience,
        }
    }

    /// Returns `(improved, stop)`.
    pub fn update(&mut self, val_loss: f64) -> (bool, bool) {
        let improved = self.tracker.observe(val_loss);
        (improved, self.tracker.wait >= self.patience)
    }

    pub fn best(&self) -> f64 {
        self.tracker.best
    }

    pub fn wait(&self) -> usize {
        self.tracker.wait
    }
}

/// End-of-epoch decision for one validation loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochDecision {
    /// The loss is a new best; the weights should be saved.
    pub improved: bool,
    pub new_lr: Option<f64>,
    pub stop: bool,
}

/// Both callbacks together; the plateau reduction is evaluated first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Monitor {
    pub plateau: PlateauTracker,
    pub early_stop: EarlyStopTracker,
}

impl Monitor {
    pub fn new(config: &TrainConfig) -> Self {
        Monitor {
            plateau: PlateauTracker::new(config.reduce_lr),
            early_stop: EarlyStopTracker::new(config.early_stop),
        }
    }

    pub fn update(&mut self, val_loss: f64, current_lr: f64) -> EpochDecision {
        let new_lr = self.plateau.update(val_loss, current_lr);
        let (improved, stop) = self.early_stop.update(val_loss);
        EpochDecision { improved, new_lr, stop }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate in effect during the epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights were kept, if any epoch improved.
    pub best_epoch: Option<usize>,
    pub stop_reason: StopReason,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_acc,val_loss,val_acc,lr,seconds";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr, r.seconds
            )
            .expect("writing to a String cannot fail");
        }
        out
    }

    pub fn epochs(&self) -> usize {
        self.records.len()
    }

    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|e| &self.records[e - 1])
    }
}

/// Mean per-pixel loss and pooled pixel accuracy of one full pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PassMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

fn stack_batch(samples: &[&Sample], num_classes: usize) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
    let images: Vec<&Tensor4<f32>> = samples.iter().map(|s| &s.image).collect();
    let targets = samples
        .iter()
        .map(|s| s.mask.one_hot(num_classes))
        .collect::<Result<Vec<_>>>()?;
    let target_refs: Vec<&Tensor4<f32>> = targets.iter().collect();
    Ok((Tensor4::stack(&images)?, Tensor4::stack(&target_refs)?))
}

fn check_dataset(graph: &Graph<f32>, data: &Dataset, role: &str) -> Result<()> {
    if data.is_empty() {
        return Err(data_err!("{role} set is empty"));
    }
    data.validate()?;
    let classes = graph.config().num_classes;
    if data.num_classes > classes {
        return Err(data_err!(
            "{role} set has {} classes, model predicts {classes}",
            data.num_classes
        ));
    }
    graph
        .check_input(data.samples[0].image.shape())
        .map_err(|e| data_err!("{role} set: {e}"))
}

/// Full inference pass in chunks of `batch_size`.
pub fn measure(graph: &mut Graph<f32>, data: &Dataset, batch_size: usize) -> Result<PassMetrics> {
    let classes = graph.config().num_classes;
    let mut loss_sum = 0.0;
    let (mut hits, mut pixels) = (0usize, 0usize);
    let refs: Vec<&Sample> = data.samples.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let (input, targets) = stack_batch(chunk, classes)?;
        let probs = graph.forward(&input)?;
        let (loss, _) = cross_entropy(&probs, &targets)?;
        let n = input.shape().batch * input.shape().pixels();
        loss_sum += loss * n as f64;
        pixels += n;
        for (n, s) in chunk.iter().enumerate() {
            let pred = LabelMap::argmax(&probs, n);
            hits += s.mask.labels.iter().zip(&pred.labels).filter(|(a, b)| a == b).count();
        }
    }
    Ok(PassMetrics {
        loss: loss_sum / pixels as f64,
        accuracy: hits as f64 / pixels as f64,
    })
}

/// Result of [`train`]. The graph passed in ends up holding the best weights.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: History,
    pub best_params: Vec<ConvParams<f32>>,
}

/// Runs the training protocol, calling `on_epoch` after each epoch.
pub fn train_with(
    graph: &mut Graph<f32>,
    optimizer: &mut Optimizer<f32>,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    check_dataset(graph, train_set, "training")?;
    check_dataset(graph, val_set, "validation")?;
    let classes = graph.config().num_classes;
    let mut monitor = Monitor::new(config);
    let mut records = Vec::new();
    let mut best: Option<(usize, Vec<ConvParams<f32>>)> = None;
    let mut stop_reason = StopReason::MaxEpochs;
    let clock = config.log_wall_time.then(std::time::Instant::now);

    for epoch in 1..=config.max_epochs {
        let lr = optimizer.current_lr();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.shuffle_seed.wrapping_add(epoch as u64)));
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_set.samples[i]).collect();
            let (input, targets) = stack_batch(&batch, classes)?;
            let probs = graph.forward(&input)?;
            let (loss, grad) = cross_entropy(&probs, &targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss {loss} at epoch {epoch}, batch {}", b + 1)));
            }
            let grads = graph.backward(&input, &grad)?;
            let grad_slices: Vec<&[f32]> = grads.iter().flat_map(|g| [g.kernel.data(), g.bias.as_slice()]).collect();
            optimizer.step(&mut graph.param_slices_mut(), &grad_slices)?;
        }
        let train_m = measure(graph, train_set, config.batch_size)?;
        let val_m = measure(graph, val_set, config.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: train_m.loss,
            train_acc: train_m.accuracy,
            val_loss: val_m.loss,
            val_acc: val_m.accuracy,
            lr,
            seconds: clock.map_or(0.0, |c| c.elapsed().as_secs_f64()),
        };
        records.push(record);
        on_epoch(&record);

        let decision = monitor.update(val_m.loss, lr);
        if decision.improved {
            if let Some(path) = &config.checkpoint_path {
                let meta = CheckpointMeta {
                    optimizer: Some(optimizer.kind()),
                    epoch,
                    val_loss: Some(val_m.loss),
                };
                save_checkpoint(path, graph, &meta)?;
            }
            best = Some((epoch, graph.params()));
        }
        if let Some(new_lr) = decision.new_lr {
            optimizer.set_lr(new_lr)?;
        }
        if decision.stop {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }

    let (best_epoch, best_params) = match best {
        Some((e, p)) => (Some(e), p),
        None => (None, graph.params()),
    };
    graph.load_params(&best_params)?;
    Ok(TrainOutcome {
        history: History {
            records,
            best_epoch,
            stop_reason,
        },
        best_params,
    })
}

pub fn train(
    graph: &mut Graph<f32>,
    optimizer: &mut Optimizer<f32>,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(graph, optimizer, train_set, val_set, config, |_| {})
}

/// Predicts every sample and reports pooled accuracy plus Dice for each
/// foreground class.
pub fn evaluate(graph: &mut Graph<f32>, test_set: &Dataset) -> Result<MetricsReport> {
    check_dataset(graph, test_set, "test")?;
    let preds = test_set
        .samples
        .iter()
        .map(|s| graph.predict(&s.image))
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<LabelMap> = test_set.samples.iter().map(|s| s.mask.clone()).collect();
    dice_report(&preds, &truths, 1..graph.config().num_classes, AccuracyMode::Pooled)
}
