use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// What the shared training loop needs from a network.
pub trait Trainable: Clone + Send + Sync {
    type Sample: Sync;
    type Example: Sync;

    fn params(&self) -> &[Tensor];
    fn params_mut(&mut self) -> &mut [Tensor];
    /// Whether parameter `index` is a weight matrix (subject to decay).
    fn is_weight(&self, index: usize) -> bool;
    /// Fits whichever of the input standardizer and label transform is unset.
    fn fit_standardizers(&mut self, train: &[Self::Sample]) -> Result<()>;
    fn to_example(&self, sample: &Self::Sample) -> Result<Self::Example>;
    fn check_example(&self, ex: &Self::Example) -> Result<()>;
    /// Batch-mean squared error and its exact gradient.
    fn loss_and_gradients(&self, batch: &[&Self::Example]) -> (f64, Vec<Tensor>);
    fn example_loss(&self, ex: &Self::Example) -> f64;
}

/// Exact gradient of the mean squared error over `batch`.
pub fn gradients<N: Trainable>(net: &N, batch: &[N::Example]) -> Result<Vec<Tensor>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for ex in batch {
        net.check_example(ex)?;
    }
    let refs: Vec<&N::Example> = batch.iter().collect();
    Ok(net.loss_and_gradients(&refs).1)
}

pub fn mse<N: Trainable>(net: &N, examples: &[N::Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    examples.iter().map(|e| net.example_loss(e)).sum::<f64>() / examples.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Relative improvement a validation loss must beat to reset patience.
    pub min_delta: f64,
    pub weight_decay: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 500,
            patience: 20,
            min_delta: 1e-4,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Plateau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub stop_reason: StopReason,
    /// 1-based epoch whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
    pub wall_seconds: f64,
}

/// Mini-batch Adam on the training set with validation-based early stopping.
/// Returns the parameters with the lowest validation loss seen.
pub fn train<N: Trainable>(
    mut net: N,
    train_set: &[N::Sample],
    validation: &[N::Sample],
    hyper: &Hyper,
    seed: u64,
) -> Result<(N, TrainReport)> {
    let start = Instant::now();
    if validation.is_empty() {
        return Err(Error::InvalidArgument("validation set is empty".into()));
    }
    if train_set.is_empty() || hyper.batch_size == 0 || hyper.batch_size > train_set.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {} must be in 1..={}",
            hyper.batch_size,
            train_set.len()
        )));
    }
    if !(hyper.lr > 0.0) {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }
    net.fit_standardizers(train_set)?;
    let train_ex = train_set.iter().map(|s| net.to_example(s)).collect::<Result<Vec<_>>>()?;
    let val_ex = validation.iter().map(|s| net.to_example(s)).collect::<Result<Vec<_>>>()?;

    let mut adam = AdamState::new(net.params(), hyper.lr);
    let mut best_params = net.params().to_vec();
    let mut best_val = mse(&net, &val_ex);
    let mut best_epoch = 0;
    let mut reference = best_val;
    let mut stale = 0;
    let mut report = TrainReport {
        epochs_run: 0,
        train_mse: Vec::new(),
        val_mse: Vec::new(),
        stop_reason: StopReason::MaxEpochs,
        best_epoch: 0,
        wall_seconds: 0.0,
    };
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    for epoch in 0..hyper.max_epochs {
        let mut rng = crate::seed::rng_for(seed, &[epoch as u64]);
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<&N::Example> = chunk.iter().map(|&i| &train_ex[i]).collect();
            let (loss, mut grads) = net.loss_and_gradients(&batch);
            if !loss.is_finite() {
                return Err(Error::NonFinite { epoch: epoch + 1 });
            }
            if hyper.weight_decay > 0.0 {
                for (i, (g, p)) in grads.iter_mut().zip(net.params()).enumerate() {
                    if net.is_weight(i) {
                        for (gv, pv) in g.data.iter_mut().zip(&p.data) {
                            *gv += 2.0 * hyper.weight_decay * pv;
                        }
                    }
                }
            }
            adam_step(net.params_mut(), &grads, &mut adam)?;
        }
        let train_loss = mse(&net, &train_ex);
        let val_loss = mse(&net, &val_ex);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::NonFinite { epoch: epoch + 1 });
        }
        report.train_mse.push(train_loss);
        report.val_mse.push(val_loss);
        report.epochs_run = epoch + 1;
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch + 1;
            best_params.clone_from_slice(net.params());
        }
        if val_loss < reference * (1.0 - hyper.min_delta) {
            reference = val_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyper.patience {
                report.stop_reason = StopReason::Plateau;
                break;
            }
        }
    }
    net.params_mut().clone_from_slice(&best_params);
    report.best_epoch = best_epoch;
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok((net, report))
}
