use std::io::Write;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{kd_loss, lr_at, true_loss, Adam, KdConfig};
use crate::bench::{distance, Metric};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{update_running_stats, Model};
use crate::tensor::{Tape, Tensor};

/// Samples per chunk when predicting outside the training step.
const EVAL_BATCH: usize = 128;
/// Random streams: batch order per epoch, dropout masks per step.
const SHUFFLE_STREAM: u64 = 0;
const DROPOUT_STREAM: u64 = 1 << 32;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f32,
    pub train_loss: f64,
    /// Mean Euclidean validation distance in pixels.
    pub val_rmse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters the model holds after [`fit`].
    pub best_epoch: usize,
}

impl History {
    pub fn best_val_rmse(&self) -> f64 {
        self.records[self.best_epoch].val_rmse
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains `model` on `train`, keeping the parameters of the epoch with the
/// lowest validation distance.
///
/// With a teacher, the loss is [`kd_loss`] against the teacher's eval-mode
/// outputs in pixels, computed once without gradients; otherwise it is
/// [`true_loss`]. The model's output scaling is set from the training labels
/// first. Each
/// epoch's record is written to `log` as one JSON line when given.
pub fn fit(
    model: &mut Model,
    teacher: Option<&Model>,
    train: &Dataset,
    val: &Dataset,
    cfg: &KdConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract(
            "training needs nonempty train and validation sets".into(),
        ));
    }
    let (mean, std) = train.label_stats()?;
    model.set_target_scaling(mean, std.map(|s| if s > 0.0 { s } else { 1.0 }))?;

    let teacher_out = match teacher {
        Some(t) if cfg.lambda > 0.0 => Some(
            t.predict_batched(&train.eeg_tensor()?, EVAL_BATCH)
                .map_err(|e| e.in_layer("teacher"))?,
        ),
        _ => None,
    };
    if cfg.lambda > 0.0 && teacher_out.is_none() {
        return Err(Error::Contract(format!("lambda {} needs a teacher", cfg.lambda)));
    }

    let mut adam = Adam::new();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, IndexMap<String, Tensor>, IndexMap<String, Tensor>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.sort_unstable();
        order.shuffle(&mut rng_for(cfg.seed, SHUFFLE_STREAM + epoch as u64));
        let mut loss_sum = 0.0f64;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let ctx = |e: Error| e.in_layer(format!("epoch {epoch} step {step}"));
            let (x, y) = train.batch(idx)?;
            let soft = match &teacher_out {
                Some(all) => {
                    let rows: Vec<f32> = idx
                        .iter()
                        .flat_map(|&i| [all.data()[2 * i], all.data()[2 * i + 1]])
                        .collect();
                    Some(Tensor::new(vec![idx.len(), 2], rows)?)
                }
                None => None,
            };
            let stream = DROPOUT_STREAM + ((epoch as u64) << 20) + step as u64;
            let mut tape = Tape::new();
            let mut s = model.session(&mut tape, true, rng_for(cfg.seed, stream));
            let xv = s.tape.constant(x);
            let pred = model.forward(&mut s, xv).map_err(ctx)?;
            let loss = match &soft {
                Some(t) => kd_loss(s.tape, pred, Some(t), &y, cfg),
                None => true_loss(s.tape, pred, &y),
            }
            .map_err(ctx)?;
            let bound = s.bound().clone();
            let stats = s.take_bn_stats();
            let loss_value = tape.value(loss).item()?;
            let mut grads = tape.backward(loss).map_err(ctx)?;
            let mut named = IndexMap::with_capacity(bound.len());
            for (name, var) in bound {
                if let Some(g) = grads.take(var) {
                    if !g.is_finite() {
                        return Err(ctx(Error::NonFinite {
                            op: format!("gradient of {name}"),
                        }));
                    }
                    named.insert(name, g);
                }
            }
            adam.step(&mut model.params, &named, lr, cfg.weight_decay)
                .map_err(ctx)?;
            update_running_stats(&mut model.buffers, &stats).map_err(ctx)?;
            loss_sum += loss_value as f64 * idx.len() as f64;
        }
        let pred = model.predict_batched(&val.eeg_tensor()?, EVAL_BATCH)?;
        let val_rmse = distance(pred.data(), val.labels(), 1.0, Metric::MeanEuclidean)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            val_rmse,
        };
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&record).map_err(|e| Error::Contract(format!("history record: {e}")))?;
            writeln!(w, "{line}")?;
        }
        records.push(record);
        if best.as_ref().is_none_or(|b| val_rmse < b.1) {
            best = Some((epoch, val_rmse, model.params.clone(), model.buffers.clone()));
        }
    }
    let (best_epoch, _, params, buffers) = best.expect("at least one epoch");
    model.params = params;
    model.buffers = buffers;
    Ok(History { records, best_epoch })
}
