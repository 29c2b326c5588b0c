//! Mini-batch training with a held-out validation split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layers::{argmax, softmax_cross_entropy};
use super::model::{Model, ModelConfig, Normalization};
use super::optim::{step_decay_lr, Optimizer};
use super::thread_pool;
use crate::data_io::{pixel_stats, LabeledDataset};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_acc: f64,
    /// `NaN` when there is no validation split.
    pub val_acc: f64,
    /// Mean training loss over the epoch.
    pub loss: f64,
}

pub struct Trained {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
}

/// CSV with header `epoch,train_acc,val_acc,loss`.
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_acc,val_acc,loss\n");
    for m in metrics {
        out.push_str(&format!("{},{:.6},{:.6},{:.8}\n", m.epoch, m.train_acc, m.val_acc, m.loss));
    }
    out
}

// Independent streams derived from the config seed.
const SPLIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains a fresh model on `data`. `on_epoch` sees each epoch's metrics as
/// they are produced. Runs on a pool sized by `PDEQ_THREADS`.
pub fn train(
    config: &ModelConfig,
    data: &LabeledDataset,
    mut on_epoch: impl FnMut(&EpochMetrics) + Send,
) -> Result<Trained> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if data.classes != config.classes {
        return Err(Error::InvalidArgument(format!("dataset has {} classes, model {}", data.classes, config.classes)));
    }
    let mut model = Model::new(config.clone())?;
    let pool = thread_pool()?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream(config.seed, SPLIT_STREAM));
    let n_val = (data.len() as f64 * config.val_fraction).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val.min(data.len() - 1));
    let mut train_idx = train_idx.to_vec();
    let val = data.subset(val_idx, "val");

    let (mean, std) = pixel_stats(&data.subset(&train_idx, "train").images);
    model.normalization = Normalization { mean, std };

    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut opt = Optimizer::new(config.optimizer, config.weight_decay, &sizes);
    let mut shuffle = stream(config.seed, SHUFFLE_STREAM);
    let mut dropout = stream(config.seed, DROPOUT_STREAM);
    let mut metrics = Vec::with_capacity(config.epochs);

    pool.install(|| -> Result<()> {
        for epoch in 0..config.epochs {
            let lr = step_decay_lr(config.lr, epoch, config.epochs);
            train_idx.shuffle(&mut shuffle);
            let (mut loss_sum, mut correct) = (0.0, 0usize);
            for (batch, idx) in train_idx.chunks(config.batch_size).enumerate() {
                let x = model.input_batch(&data.images, idx);
                let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
                let pass = model.forward(x, Some(&mut dropout))?;
                let (loss, grad, hits) = softmax_cross_entropy(&pass.output, &labels)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch: epoch + 1, batch, loss });
                }
                let (grads, _) = model.backward(&pass.caches, grad)?;
                model.commit(pass.bn_updates);
                opt.step(&mut model.params_mut(), &grads, lr);
                loss_sum += loss * idx.len() as f64;
                correct += hits;
            }
            let val_acc = if val.is_empty() { f64::NAN } else { accuracy(&model, &val)? };
            let m = EpochMetrics {
                epoch: epoch + 1,
                train_acc: correct as f64 / train_idx.len() as f64,
                val_acc,
                loss: loss_sum / train_idx.len() as f64,
            };
            on_epoch(&m);
            metrics.push(m);
        }
        Ok(())
    })?;
    Ok(Trained { model, metrics })
}

fn accuracy(model: &Model, data: &LabeledDataset) -> Result<f64> {
    let logits = model.predict(&data.images)?;
    let hits = logits.outer_iter().zip(&data.labels).filter(|(z, &l)| argmax(z.as_slice().expect("row")) == l).count();
    Ok(hits as f64 / data.len().max(1) as f64)
}

/// Classification accuracy in inference mode.
pub fn evaluate(model: &Model, data: &LabeledDataset) -> Result<f64> {
    if data.classes > model.config.classes || data.labels.iter().any(|&l| l >= model.config.classes) {
        return Err(Error::InvalidArgument(format!(
            "dataset labels exceed the model's {} classes",
            model.config.classes
        )));
    }
    thread_pool()?.install(|| accuracy(model, data))
}
