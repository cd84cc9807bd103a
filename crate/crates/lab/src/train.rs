//! Deterministic training driver for the toy detector.

use dla_lab_core::data::{Augmentation, DatasetRecord};
use dla_lab_core::detector::{
    clip_grad_norm, predict, reduce_gradients, single_gradient, AdamW, DetectorConfig, DetectorParams, ImageLoss,
};
use dla_lab_core::evaluation::{sap, Prediction};
use dla_lab_core::geometry::LineSegment;
use dla_lab_core::params::ParamSet;
use dla_lab_core::rng::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

/// Knobs of a training run that are not part of the model configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub seed: u64,
    pub augment: bool,
    /// Worker threads for per-image gradients; results do not depend on it.
    pub jobs: usize,
    /// Linear warmup length in optimizer steps.
    pub warmup_steps: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            augment: true,
            jobs: 1,
            warmup_steps: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr_scale: f64,
    /// Mean loss over the epoch's training batches.
    pub train_loss: f64,
    pub val_sap10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean total loss of the untrained model on the (unaugmented) training set.
    pub initial_loss: f64,
    pub initial_val_sap10: f64,
    /// Mean total loss of the trained model on the same set.
    pub final_loss: f64,
    pub final_val_sap10: f64,
    pub epochs: Vec<EpochLog>,
}

/// Per-image results in input order, computed on `jobs` threads.
fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Final-layer predictions for every record.
pub fn predict_all(
    cfg: &DetectorConfig,
    params: &DetectorParams,
    records: &[DatasetRecord],
    jobs: usize,
) -> LabResult<Vec<Vec<Prediction>>> {
    parallel_map(records, jobs, |r| predict(cfg, params, &r.image))
        .into_iter()
        .map(|r| r.map_err(LabError::from))
        .collect()
}

pub fn sap_of(
    cfg: &DetectorConfig,
    params: &DetectorParams,
    records: &[DatasetRecord],
    theta: f64,
    jobs: usize,
) -> LabResult<f64> {
    let preds = predict_all(cfg, params, records, jobs)?;
    let truths: Vec<Vec<LineSegment>> = records.iter().map(|r| r.lines.clone()).collect();
    Ok(sap(&preds, &truths, theta)?)
}

/// Mean deeply supervised loss over `records`.
pub fn mean_loss(
    cfg: &DetectorConfig,
    params: &DetectorParams,
    records: &[DatasetRecord],
    jobs: usize,
) -> LabResult<f64> {
    let losses = parallel_map(records, jobs, |r| {
        dla_lab_core::detector::image_loss(cfg, params, &r.image, &r.lines)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?.total();
    }
    Ok(total / records.len().max(1) as f64)
}

/// Learning-rate multiplier: linear warmup, then cosine decay to 5%.
pub fn lr_scale(step: usize, total: usize, warmup: usize) -> f64 {
    if step < warmup {
        return (step + 1) as f64 / warmup as f64;
    }
    let t = (step - warmup) as f64 / (total.saturating_sub(warmup)).max(1) as f64;
    0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos())
}

/// A failed step: the error and the batch that produced it.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: LabError,
    pub batch: Vec<DatasetRecord>,
    pub epoch: usize,
}

/// Trains from `DetectorParams::init(cfg, seed)`. `on_epoch` sees every log
/// line as it is produced.
pub fn train_toy(
    train: &[DatasetRecord],
    val: &[DatasetRecord],
    cfg: &DetectorConfig,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(DetectorParams, TrainReport), Box<TrainFailure>> {
    let fail = |error: LabError, batch: &[DatasetRecord], epoch: usize| {
        Box::new(TrainFailure {
            error,
            batch: batch.to_vec(),
            epoch,
        })
    };
    let mut params = DetectorParams::init(cfg, opts.seed).map_err(|e| fail(e.into(), &[], 0))?;
    let initial_loss = mean_loss(cfg, &params, train, opts.jobs).map_err(|e| fail(e, &[], 0))?;
    let initial_val_sap10 = sap_of(cfg, &params, val, 10.0, opts.jobs).map_err(|e| fail(e, &[], 0))?;
    let mut opt = AdamW::new(&params, cfg.optimizer.clone());
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        Rng::new(opts.seed, 1 << 40 | epoch as u64).shuffle(&mut order);
        let mut sum = 0.0;
        let mut scale = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<DatasetRecord> = idx
                .iter()
                .map(|&i| {
                    if opts.augment {
                        Augmentation::for_epoch(opts.seed, epoch, i).apply(&train[i])
                    } else {
                        train[i].clone()
                    }
                })
                .collect();
            let per_image: Vec<(ImageLoss, Vec<f64>)> =
                parallel_map(&batch, opts.jobs, |r| single_gradient(cfg, &params, r))
                    .into_iter()
                    .collect::<Result<_, _>>()
                    .map_err(|e| fail(e.into(), &batch, epoch))?;
            let (loss, mut grad) = reduce_gradients(&per_image);
            if !loss.total().is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let e = dla_lab_core::Error::NonFinite(format!("batch {b} of epoch {epoch}"));
                return Err(fail(e.into(), &batch, epoch));
            }
            clip_grad_norm(&mut grad, cfg.optimizer.clip_norm);
            scale = lr_scale(epoch * steps_per_epoch + b, total_steps, opts.warmup_steps);
            opt.step(&mut params, &grad, scale);
            if params.tensors_mut().iter().any(|t| !t.is_finite()) {
                let e = dla_lab_core::Error::NonFinite(format!("parameters after batch {b} of epoch {epoch}"));
                return Err(fail(e.into(), &batch, epoch));
            }
            sum += loss.total();
        }
        let val_sap10 = sap_of(cfg, &params, val, 10.0, opts.jobs).map_err(|e| fail(e, &[], epoch))?;
        let log = EpochLog {
            epoch,
            lr_scale: scale,
            train_loss: sum / steps_per_epoch.max(1) as f64,
            val_sap10,
        };
        on_epoch(&log);
        epochs.push(log);
    }
    let final_loss = mean_loss(cfg, &params, train, opts.jobs).map_err(|e| fail(e, &[], cfg.epochs))?;
    let final_val_sap10 = epochs.last().map_or(initial_val_sap10, |e| e.val_sap10);
    Ok((
        params,
        TrainReport {
            initial_loss,
            initial_val_sap10,
            final_loss,
            final_val_sap10,
            epochs,
        },
    ))
}
