use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::data::{stack, PairSet};
use super::loss::{mixed_loss, LossWeights, MixedLoss, SsimConfig};
use super::metrics::MetricsRecord;
use crate::error::{invalid, Error, Result};
use crate::net::ModelState;
use crate::tensor::{Graph, RealGrid, RngState, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without a validation improvement before stopping.
    pub early_stop_patience: usize,
    pub loss_weights: LossWeights,
    pub ssim: SsimConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 100,
            batch_size: 8,
            early_stop_patience: 15,
            loss_weights: LossWeights::default(),
            ssim: SsimConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be positive");
        }
        if self.early_stop_patience == 0 {
            return invalid("early_stop_patience must be positive");
        }
        self.loss_weights.validate()?;
        self.ssim.validate()
    }
}

/// One completed epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean data loss over the epoch's batches (no weight penalty).
    pub train_loss: f64,
    pub val_loss: f64,
    pub mae: f64,
    pub mse: f64,
    pub ssim: f64,
    pub r2: f64,
    pub seconds: f64,
}

/// Inference on every input, stacked to `(n, H, W, 1)`.
pub fn predict_set<T: Scalar>(model: &ModelState<T>, set: &PairSet<T>) -> Result<RealGrid<T>> {
    if set.is_empty() {
        return invalid("empty dataset");
    }
    let preds = model.predict_many(&set.inputs)?;
    stack(&preds)
}

/// Metrics over the whole set in inference mode, SSIM range taken from the
/// set's targets.
pub fn evaluate<T: Scalar>(model: &ModelState<T>, set: &PairSet<T>, ssim: &SsimConfig) -> Result<MetricsRecord> {
    let pred = predict_set(model, set)?;
    MetricsRecord::compute(&pred, &stack(&set.targets)?, ssim)
}

fn validate_sets<T: Scalar>(model: &ModelState<T>, train: &PairSet<T>, val: &PairSet<T>) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return invalid("training and validation sets must be non-empty");
    }
    let (h, w) = model.config.input_size;
    for set in [train, val] {
        if set.inputs.iter().chain(&set.targets).any(|g| g.dims() != [h, w, 1]) {
            return invalid(format!("every patch must be ({h}, {w}, 1) for this network"));
        }
    }
    if train.inputs.iter().zip(&train.targets).any(|p| val.inputs.iter().zip(&val.targets).any(|q| p == q)) {
        return invalid("training and validation sets share a patch");
    }
    Ok(())
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct FitOutcome<T: Scalar> {
    /// State with the lowest validation loss.
    pub best: ModelState<T>,
    /// State after the last completed epoch.
    pub last: ModelState<T>,
    /// Epoch (1-based) of `best`; 0 when no epoch ran.
    pub best_epoch: usize,
    pub logs: Vec<EpochLog>,
}

/// Mini-batch Adam on the mixed loss plus the model's kernel penalty.
/// Returns the state with the lowest validation loss seen.
pub fn fit<T: Scalar>(
    model: ModelState<T>,
    train: &PairSet<T>,
    val: &PairSet<T>,
    cfg: &TrainConfig,
) -> Result<(ModelState<T>, Vec<EpochLog>)> {
    let out = fit_with(model, train, val, cfg, |_| {})?;
    Ok((out.best, out.logs))
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with<T: Scalar>(
    mut model: ModelState<T>,
    train: &PairSet<T>,
    val: &PairSet<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitOutcome<T>> {
    cfg.validate()?;
    model.config.validate()?;
    let mut logs = Vec::new();
    if cfg.epochs == 0 {
        return Ok(FitOutcome { best: model.clone(), last: model, best_epoch: 0, logs });
    }
    validate_sets(&model, train, val)?;
    let val_targets = stack(&val.targets)?;
    let val_ssim = SsimConfig {
        dynamic_range: Some(cfg.ssim.range_for(&val_targets)),
        ..cfg.ssim
    };
    let root = RngState::new(cfg.seed);
    let mut adam = AdamState::new(&model.store);
    let mut best: Option<(f64, usize, ModelState<T>)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        root.fork(0).fork(epoch as u64).shuffle(&mut order);
        let mut dropout_rng = root.fork(1).fork(epoch as u64);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = train.batch(chunk)?;
            let mut g = Graph::new(&model.store);
            let xv = g.input(x);
            let yv = g.input(y);
            let pred = model.forward(&mut g, xv, &mut dropout_rng, true)?;
            let data = g.pair_loss(pred, yv, Box::new(MixedLoss { weights: cfg.loss_weights, ssim: cfg.ssim }))?;
            let value = g.scalar(data)?.as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch} on patches {chunk:?}")));
            }
            let total = match model.l1_penalty(&mut g)? {
                Some(p) => g.add(data, p)?,
                None => data,
            };
            let grads = g.backward(total)?;
            drop(g);
            adam_step(&mut model.store, grads.params(), &mut adam, cfg.learning_rate).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {epoch} on patches {chunk:?}")),
                e => e,
            })?;
            loss_sum += value * chunk.len() as f64;
        }

        let pred = predict_set(&model, val)?;
        let val_loss = mixed_loss(&pred, &val_targets, &cfg.loss_weights, &val_ssim)?;
        let m = MetricsRecord::compute(&pred, &val_targets, &val_ssim)?;
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            mae: m.mae,
            mse: m.mse,
            ssim: m.ssim,
            r2: m.r2,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        logs.push(log);

        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch ran");
    Ok(FitOutcome { best, last: model, best_epoch, logs })
}
