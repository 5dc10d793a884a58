//! Epoch loop with validation, early stopping on validation accuracy and
//! best-checkpoint tracking.
//!
//! After every epoch the network is evaluated on the validation split in
//! eval mode. A checkpoint is taken whenever `val_acc` strictly exceeds the
//! best so far, so ties keep the earliest epoch. Training stops once
//! `epoch - best_epoch >= patience` or at `max_epochs`.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{stack, AugmentConfig, DataGenerator};
use crate::data::{LabeledDataset, Sample, Split};
use crate::error::{format_err, value_err, Error, Result};
use crate::nn::{Mode, Network};
use crate::optim::{Adam, AdamConfig};
use crate::rng::Rng;
use crate::zoo::WeightContainer;

/// Decision threshold on the positive-class probability.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
    /// Trailing window for [`detect_overfit`] at the end of a run.
    pub overfit_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 3000,
            patience: 200,
            batch_size: 32,
            seed: 0,
            optimizer: AdamConfig::default(),
            overfit_window: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(value_err!("max_epochs must be >= 1"));
        }
        if self.patience > self.max_epochs {
            return Err(value_err!(
                "patience ({}) exceeds max_epochs ({})",
                self.patience,
                self.max_epochs
            ));
        }
        if self.batch_size == 0 {
            return Err(value_err!("batch_size must be >= 1"));
        }
        if self.overfit_window < 2 {
            return Err(value_err!("overfit_window must be >= 2"));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    PatienceExhausted,
    MaxEpochs,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::PatienceExhausted => "patience_exhausted",
            StopReason::MaxEpochs => "max_epochs",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StopReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patience_exhausted" => Ok(StopReason::PatienceExhausted),
            "max_epochs" => Ok(StopReason::MaxEpochs),
            other => Err(format_err!("unknown stop reason `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHistory {
    pub rows: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub elapsed_minutes: f64,
    pub overfit_flag: bool,
}

const HISTORY_HEADER: &str = "epoch,loss,acc,val_loss,val_acc";

impl TrainingHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.rows[self.best_epoch - 1]
    }

    pub fn last(&self) -> &EpochRecord {
        self.rows.last().expect("history has at least one row")
    }

    pub fn epochs(&self) -> usize {
        self.rows.len()
    }

    /// CSV rows plus a `# stop_reason=...,best_epoch=...` footer. Wall time
    /// is left out so identical runs give identical files.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.epoch, r.loss, r.acc, r.val_loss, r.val_acc);
        }
        let _ = writeln!(s, "# stop_reason={},best_epoch={}", self.stop_reason, self.best_epoch);
        s
    }

    /// Parses [`TrainingHistory::to_csv`] output. `elapsed_minutes` is set
    /// to 0 and the overfit flag is recomputed with `overfit_window`.
    pub fn parse(text: &str, overfit_window: usize) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next() != Some(HISTORY_HEADER) {
            return Err(format_err!("history must start with `{HISTORY_HEADER}`"));
        }
        let mut rows = Vec::new();
        let mut footer = None;
        for line in lines {
            if let Some(rest) = line.strip_prefix('#') {
                footer = Some(rest.trim().to_string());
                continue;
            }
            let bad = || format_err!("malformed history row `{line}`");
            let f: Vec<&str> = line.split(',').collect();
            let [e, l, a, vl, va] = f[..] else {
                return Err(bad());
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            rows.push(EpochRecord {
                epoch: e.parse().map_err(|_| bad())?,
                loss: num(l)?,
                acc: num(a)?,
                val_loss: num(vl)?,
                val_acc: num(va)?,
            });
        }
        let footer = footer.ok_or_else(|| format_err!("history has no `# stop_reason=` footer"))?;
        let mut stop_reason = None;
        let mut best_epoch = None;
        for kv in footer.split(',') {
            match kv.split_once('=') {
                Some(("stop_reason", v)) => stop_reason = Some(v.parse()?),
                Some(("best_epoch", v)) => best_epoch = v.parse().ok(),
                _ => {}
            }
        }
        let (Some(stop_reason), Some(best_epoch)) = (stop_reason, best_epoch) else {
            return Err(format_err!("history footer `{footer}` is incomplete"));
        };
        if rows.is_empty() || rows.iter().enumerate().any(|(i, r)| r.epoch != i + 1) {
            return Err(format_err!("history rows must run contiguously from epoch 1"));
        }
        if !(1..=rows.len()).contains(&best_epoch) {
            return Err(format_err!("best_epoch {best_epoch} is outside the history"));
        }
        let mut h = Self {
            rows,
            best_epoch,
            stop_reason,
            elapsed_minutes: 0.0,
            overfit_flag: false,
        };
        h.overfit_flag = h.rows.len() >= 2 * overfit_window && detect_overfit(&h, overfit_window)?;
        Ok(h)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, overfit_window: usize) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?, overfit_window)
    }
}

/// Least-squares slope of `ys` against `xs`.
fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

/// True iff, over the trailing `window` epochs, the val_loss trend is
/// strictly rising while the training loss trend is not rising.
pub fn detect_overfit(history: &TrainingHistory, window: usize) -> Result<bool> {
    if window < 2 {
        return Err(value_err!("overfit window must be >= 2, got {window}"));
    }
    if history.rows.len() < 2 * window {
        return Err(value_err!(
            "overfit detection needs at least {} epochs, history has {}",
            2 * window,
            history.rows.len()
        ));
    }
    let tail = &history.rows[history.rows.len() - window..];
    let xs: Vec<f64> = tail.iter().map(|r| r.epoch as f64).collect();
    let train: Vec<f64> = tail.iter().map(|r| r.loss).collect();
    let val: Vec<f64> = tail.iter().map(|r| r.val_loss).collect();
    Ok(slope(&xs, &val) > 0.0 && slope(&xs, &train) <= 0.0)
}

/// Mean loss, accuracy and probabilities of `samples` in eval mode,
/// evaluated in chunks of `batch_size`.
pub fn evaluate_samples(net: &Network, samples: &[Sample], batch_size: usize) -> Result<(f64, f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(value_err!("cannot evaluate an empty split"));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut probs = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = stack(&refs, Vec::new())?;
        let out = net.evaluate(&batch.images, &batch.labels)?;
        loss += out.loss * chunk.len() as f64;
        correct += count_correct(&out.probabilities, batch.labels.data());
        probs.extend(out.probabilities);
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n, probs))
}

fn count_correct(probs: &[f64], labels: &[f64]) -> usize {
    probs
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p >= THRESHOLD) == (y == 1.0))
        .count()
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainingHistory,
    /// Weights at `history.best_epoch`.
    pub best: WeightContainer,
    /// Weights after the last epoch.
    pub final_weights: WeightContainer,
}

/// Trains on the train split and validates on the val split.
pub fn train(
    net: &mut Network,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    augment: Option<&AugmentConfig>,
) -> Result<TrainOutcome> {
    let val = data.subset(Split::Val);
    if val.is_empty() {
        return Err(value_err!("validation split is empty"));
    }
    let batch = cfg.batch_size;
    train_with_validator(net, data.subset(Split::Train), cfg, augment, |_, n| {
        let (loss, acc, _) = evaluate_samples(n, &val, batch)?;
        Ok((loss, acc))
    })
}

/// Like [`train`], with validation supplied by `validate(epoch, net) -> (val_loss, val_acc)`.
pub fn train_with_validator<F>(
    net: &mut Network,
    train_samples: Vec<Sample>,
    cfg: &TrainConfig,
    augment: Option<&AugmentConfig>,
    mut validate: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &Network) -> Result<(f64, f64)>,
{
    cfg.validate()?;
    let start = Instant::now();
    let root = Rng::new(cfg.seed);
    let mut generator = DataGenerator::new(train_samples, augment.copied(), cfg.batch_size, root.fork(0).seed())?;
    let mut dropout_rng = root.fork(1);
    let mut adam = Adam::new(cfg.optimizer)?;
    let n = generator.len() as f64;

    let mut rows = Vec::new();
    let mut best: Option<(usize, f64, WeightContainer)> = None;
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        net.set_mode(Mode::Train);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in generator.next_epoch().enumerate() {
            let batch = batch?;
            let out = net.train_batch(&batch.images, &batch.labels, &mut dropout_rng)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            loss_sum += out.loss * batch.indices.len() as f64;
            correct += count_correct(&out.probabilities, batch.labels.data());
            adam.step(&mut net.param_slots())?;
        }
        net.clear_cache();
        net.set_mode(Mode::Eval);
        let (val_loss, val_acc) = validate(epoch, net)?;
        rows.push(EpochRecord {
            epoch,
            loss: loss_sum / n,
            acc: correct as f64 / n,
            val_loss,
            val_acc,
        });
        if best.as_ref().map_or(true, |(_, acc, _)| val_acc > *acc) {
            best = Some((epoch, val_acc, WeightContainer::from_network(net)));
        }
        let best_epoch = best.as_ref().expect("set above").0;
        if epoch - best_epoch >= cfg.patience {
            stop_reason = StopReason::PatienceExhausted;
            break;
        }
    }
    let (best_epoch, _, best_weights) = best.expect("at least one epoch");
    let mut history = TrainingHistory {
        rows,
        best_epoch,
        stop_reason,
        elapsed_minutes: start.elapsed().as_secs_f64() / 60.0,
        overfit_flag: false,
    };
    if history.rows.len() >= 2 * cfg.overfit_window {
        history.overfit_flag = detect_overfit(&history, cfg.overfit_window)?;
    }
    Ok(TrainOutcome {
        history,
        best: best_weights,
        final_weights: WeightContainer::from_network(net),
    })
}
