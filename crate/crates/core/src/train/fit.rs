use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{AdamConfig, AdamState, TrainError};
use crate::dataset::{BalancedSampler, Dataset};
use crate::model::{forward, save_checkpoint, Model, ModelConfig};
use crate::ndcore::{Mode, Rng, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// One completed epoch. Training loss and accuracy are measured in eval
/// mode over the whole training set after the epoch's updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
}

impl TrainLog {
    /// `epoch,train_loss,train_acc,val_loss,val_acc,seconds`; validation
    /// columns are empty without a validation set.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc,seconds\n");
        for r in &self.rows {
            out += &format!(
                "{},{},{},{},{},{}\n",
                r.epoch,
                r.train_loss,
                r.train_acc,
                opt(r.val_loss),
                opt(r.val_acc),
                r.seconds
            );
        }
        out
    }

    pub fn best_train_acc(&self) -> f64 {
        self.rows.iter().map(|r| r.train_acc).fold(0.0, f64::max)
    }
}

/// Eval-mode pass over a set of windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub labels: Vec<u8>,
    /// Argmax of the logits.
    pub predictions: Vec<u8>,
    /// Softmax probability of class 1.
    pub scores: Vec<f64>,
}

pub fn evaluate(model: &Model, ds: &Dataset, indices: &[usize], batch_size: usize) -> Result<Evaluation, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::Metrics("nothing to evaluate".into()));
    }
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(indices.len());
    let mut scores = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let logits = model.logits(&ds.batch(chunk))?;
        let k = model.config.n_classes;
        for (row, &i) in logits.data().chunks(k).zip(chunk) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss_sum += lse - row[ds.labels[i] as usize];
            let best = (0..k).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            predictions.push(best as u8);
            scores.push((row[1] - lse).exp());
        }
    }
    let labels: Vec<u8> = indices.iter().map(|&i| ds.labels[i]).collect();
    let correct = labels.iter().zip(&predictions).filter(|(a, b)| a == b).count();
    Ok(Evaluation {
        loss: loss_sum / indices.len() as f64,
        accuracy: correct as f64 / indices.len() as f64,
        labels,
        predictions,
        scores,
    })
}

/// Everything `train` needs besides the data.
pub struct TrainRun<'a> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Checkpoint rewritten after every epoch when set.
    pub checkpoint: Option<&'a Path>,
}

/// Trains from a fresh initialisation drawn from `seed`.
///
/// Each epoch draws balanced batches, runs the taped forward in train mode,
/// back-propagates the cross-entropy and takes one Adam step per batch,
/// then evaluates. `on_epoch` sees every row as it is appended.
pub fn train(
    run: &TrainRun,
    ds: &Dataset,
    train_idx: &[usize],
    val_idx: &[usize],
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<(Model, TrainLog), TrainError> {
    let cfg = &run.train;
    if ds.channels != run.model.in_channels || ds.window_len != run.model.window_len {
        return Err(TrainError::Contract(format!(
            "dataset windows are {}×{}, model expects {}×{}",
            ds.channels, ds.window_len, run.model.in_channels, run.model.window_len
        )));
    }
    if let Some(i) = train_idx.iter().chain(val_idx).find(|&&i| ds.window(i).iter().any(|v| !v.is_finite())) {
        return Err(TrainError::Contract(format!("window {i} contains a non-finite sample")));
    }
    let root = Rng::new(cfg.seed);
    let mut model = Model::new(run.model.clone(), &mut root.derive(1))?;
    let sampler = BalancedSampler::new(train_idx, &ds.labels, cfg.batch_size, root.derive(2).next_u64())?;
    let mut adam = AdamState::new(&model.params, cfg.adam);
    let mut dropout_rng = root.derive(3);
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        for (b, batch) in sampler.epoch(epoch as u64).iter().enumerate() {
            let mut tape = Tape::new();
            let x = tape.constant(ds.batch(batch));
            let pv = model.params.map(&mut |_, t| tape.param(t.clone()));
            let out = forward(
                &mut tape,
                x,
                &pv,
                &model.running,
                &model.config,
                Mode::Train,
                &mut dropout_rng,
            )?;
            let loss = tape.softmax_cross_entropy(out.logits, &ds.batch_labels(batch))?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    loss: value,
                });
            }
            let grads = tape.backward(loss)?;
            let g = pv.map(&mut |_, v| grads.get_or_zeros(*v, tape.value(*v)));
            adam.step(&mut model.params, &g)?;
            if let Some(running) = out.running {
                model.running = running;
            }
        }

        let fit = evaluate(&model, ds, train_idx, cfg.batch_size)?;
        let val = if val_idx.is_empty() {
            None
        } else {
            Some(evaluate(&model, ds, val_idx, cfg.batch_size)?)
        };
        if let Some(path) = run.checkpoint {
            save_checkpoint(&model, path)?;
        }
        let row = EpochRow {
            epoch,
            train_loss: fit.loss,
            train_acc: fit.accuracy,
            val_loss: val.as_ref().map(|v| v.loss),
            val_acc: val.as_ref().map(|v| v.accuracy),
            seconds: started.elapsed().as_secs_f64().max(f64::MIN_POSITIVE),
        };
        on_epoch(&row);
        log.rows.push(row);
    }
    Ok((model, log))
}
