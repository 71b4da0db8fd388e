use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stdn_tensor::{Scalar, Tape};

use crate::data::DatasetSplits;
use crate::error::{Error, Result};
use crate::model::{Batch, Model};
use crate::params::ParamStore;
use crate::train::adam::Adam;
use crate::train::metrics::{evaluate, l1_loss, Metrics};

/// Keeps shuffling independent of the initialization stream drawn from the same seed.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Write wall-clock seconds into the history; off keeps histories byte-identical.
    pub record_seconds: bool,
    /// Worker threads for validation passes.
    pub eval_threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr: 1e-3,
            patience: 10,
            max_epochs: 200,
            seed: 1,
            record_seconds: false,
            eval_threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Param("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Param("patience must be at least 1".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Param(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Metrics,
    pub seconds: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_mae,val_rmse,val_mape,seconds";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.val.mae, r.val.rmse, r.val.mape, r.seconds
        );
    }
    out
}

/// Patience counter on a metric that should decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    wait: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: None, wait: 0 }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Only a strict decrease counts as an improvement; NaN never does.
    pub fn update(&mut self, value: f64) -> StopDecision {
        let improved = match self.best {
            None => !value.is_nan(),
            Some(b) => value < b,
        };
        if improved {
            self.best = Some(value);
            self.wait = 0;
            return StopDecision::Improved;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Scalar> {
    pub best: ParamStore<S>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Runs one epoch over shuffled training samples; returns the mean loss.
fn run_epoch<S: Scalar>(
    model: &mut Model<S>,
    adam: &mut Adam<S>,
    splits: &DatasetSplits,
    order: &[usize],
    batch_size: usize,
    epoch: usize,
) -> Result<f64> {
    let mut loss_sum = 0.0;
    for (bi, chunk) in order.chunks(batch_size).enumerate() {
        let batch = Batch::<S>::from_windows(chunk.iter().map(|&i| &splits.train[i]))?;
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let out = model.forward(&mut tape, &bound, &batch)?;
        let target = tape.constant(batch.y.clone());
        let loss = l1_loss(&mut tape, out.prediction, target)?;
        let value = tape.data(loss)[0].as_f64();
        if !value.is_finite() {
            return Err(Error::Diverged { epoch, batch: bi + 1, loss: value });
        }
        tape.backward(loss).map_err(|source| Error::Tensor { module: "training", source })?;
        adam.step(model.params_mut(), &tape, &bound)?;
        loss_sum += value * chunk.len() as f64;
    }
    Ok(loss_sum / order.len() as f64)
}

/// Trains with Adam and early stopping on validation MAE. On return the
/// model holds the best-validation parameters. `on_epoch` sees each record
/// as it is produced, together with the model after that epoch.
pub fn train<S: Scalar>(
    model: &mut Model<S>,
    splits: &DatasetSplits,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Model<S>),
) -> Result<TrainOutcome<S>> {
    config.validate()?;
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::Size("training and validation splits must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut adam = Adam::new(model.params(), config.lr);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.params().clone();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..splits.train.len()).collect();

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let train_loss = run_epoch(model, &mut adam, splits, &order, config.batch_size, epoch)?;
        let val = evaluate(model, &splits.val, config.batch_size, config.eval_threads)?;
        let seconds = if config.record_seconds { started.elapsed().as_secs_f64() } else { 0.0 };
        let record = EpochRecord { epoch, train_loss, val, seconds };
        info!(
            "epoch {epoch}: train loss {train_loss:.4}, val MAE {:.4}, RMSE {:.4}, MAPE {:.2}%",
            val.mae, val.rmse, val.mape
        );
        on_epoch(&record, model);
        history.push(record);
        match stopper.update(val.mae) {
            StopDecision::Improved => {
                best.copy_from(model.params())?;
                best_epoch = epoch;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    model.params_mut().copy_from(&best)?;
    Ok(TrainOutcome { best, best_epoch, history, stopped_early })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_metric_stops_after_patience_plus_one() {
        let mut s = EarlyStopping::new(10);
        let mut epochs = 0;
        for _ in 0..100 {
            epochs += 1;
            if s.update(3.0) == StopDecision::Stop {
                break;
            }
        }
        assert_eq!(epochs, 11);
    }

    #[test]
    fn improving_metric_never_stops() {
        let mut s = EarlyStopping::new(2);
        for i in 0..50 {
            assert_eq!(s.update(100.0 - i as f64), StopDecision::Improved);
        }
    }

    #[test]
    fn nan_is_not_an_improvement() {
        let mut s = EarlyStopping::new(2);
        assert_eq!(s.update(f64::NAN), StopDecision::Continue);
        assert_eq!(s.update(1.0), StopDecision::Improved);
        assert_eq!(s.update(f64::NAN), StopDecision::Continue);
        assert_eq!(s.update(1.0), StopDecision::Stop);
        assert_eq!(s.best(), Some(1.0));
    }

    #[test]
    fn history_format() {
        let r = EpochRecord { epoch: 1, train_loss: 2.5, val: Metrics { mae: 1.0, rmse: 1.5, mape: 10.0 }, seconds: 0.0 };
        assert_eq!(history_csv(&[r]), "epoch,train_loss,val_mae,val_rmse,val_mape,seconds\n1,2.5,1,1.5,10,0\n");
    }
}
