use log::warn;
use stdn_tensor::{Scalar, Tape, Var};

use crate::data::{ha_baseline, Normalizer, SampleWindow};
use crate::error::{Error, InModule, Result};
use crate::model::{Batch, Model};

/// Targets with smaller magnitude are excluded from MAPE.
pub const MAPE_MASK: f64 = 1e-3;

/// Mean absolute error, recorded on the tape.
pub fn l1_loss<S: Scalar>(tape: &mut Tape<S>, pred: Var, target: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::Size(format!(
            "loss: prediction {:?} and target {:?} differ",
            tape.shape(pred),
            tape.shape(target)
        )));
    }
    let diff = tape.sub(pred, target).in_module("training")?;
    let abs = tape.abs(diff).in_module("training")?;
    tape.mean(abs).in_module("training")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percent; NaN when every target was masked.
    pub mape: f64,
}

/// Running sums for MAE, RMSE and masked MAPE. Sums from separate batches
/// are merged in a fixed order so results do not depend on scheduling.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricSums {
    pub abs: f64,
    pub sq: f64,
    pub count: usize,
    pub pct: f64,
    pub pct_count: usize,
}

impl MetricSums {
    pub fn add(&mut self, pred: f64, target: f64) {
        let e = pred - target;
        self.abs += e.abs();
        self.sq += e * e;
        self.count += 1;
        if target.abs() >= MAPE_MASK {
            self.pct += (e / target).abs();
            self.pct_count += 1;
        }
    }

    pub fn merge(&mut self, other: &MetricSums) {
        self.abs += other.abs;
        self.sq += other.sq;
        self.count += other.count;
        self.pct += other.pct;
        self.pct_count += other.pct_count;
    }

    pub fn finish(&self) -> Metrics {
        let n = self.count as f64;
        let mape = if self.pct_count == 0 {
            if self.count > 0 {
                warn!("every target is below {MAPE_MASK}; MAPE is undefined");
            }
            f64::NAN
        } else {
            100.0 * self.pct / self.pct_count as f64
        };
        Metrics { mae: self.abs / n, rmse: (self.sq / n).sqrt(), mape }
    }
}

pub fn metrics(pred: &[f64], target: &[f64]) -> Metrics {
    let mut sums = MetricSums::default();
    for (p, y) in pred.iter().zip(target) {
        sums.add(*p, *y);
    }
    sums.finish()
}

fn batch_sums<S: Scalar>(model: &Model<S>, windows: &[SampleWindow]) -> Result<MetricSums> {
    let batch = Batch::from_windows(windows)?;
    let pred = model.predict(&batch)?;
    let mut sums = MetricSums::default();
    for (p, y) in pred.data().iter().zip(windows.iter().flat_map(|w| &w.y)) {
        sums.add(p.as_f64(), *y as f64);
    }
    Ok(sums)
}

/// Raw-scale metrics of `model` over `samples`, in batches of `batch_size`.
/// With `threads > 1`, batches are spread over scoped threads; the result is
/// identical to the single-threaded one.
pub fn evaluate<S: Scalar>(model: &Model<S>, samples: &[SampleWindow], batch_size: usize, threads: usize) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::Size("no samples to evaluate".into()));
    }
    let chunks: Vec<&[SampleWindow]> = samples.chunks(batch_size.max(1)).collect();
    let threads = threads.clamp(1, chunks.len());
    let per_batch: Vec<Result<MetricSums>> = if threads == 1 {
        chunks.iter().map(|c| batch_sums(model, c)).collect()
    } else {
        let mut slots: Vec<Option<Result<MetricSums>>> = (0..chunks.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|k| {
                    let chunks = &chunks;
                    scope.spawn(move || {
                        (k..chunks.len())
                            .step_by(threads)
                            .map(|i| (i, batch_sums(model, chunks[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("evaluation worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every batch evaluated")).collect()
    };
    let mut total = MetricSums::default();
    for sums in per_batch {
        total.merge(&sums?);
    }
    Ok(total.finish())
}

/// Metrics of the historical-average baseline.
pub fn evaluate_ha(samples: &[SampleWindow], normalizer: &Normalizer) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::Size("no samples to evaluate".into()));
    }
    let mut sums = MetricSums::default();
    for w in samples {
        for (p, y) in ha_baseline(w, normalizer).iter().zip(&w.y) {
            sums.add(*p, *y as f64);
        }
    }
    Ok(sums.finish())
}
