use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NeuralNet;
use crate::dataset::{FeatureMatrix, TargetMatrix};
use crate::error::{Error, Result};
use crate::nn::{mse_loss, Adam, AdamConfig, Mode, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without strict validation improvement before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { max_epochs: 100, batch_size: 64, patience: 5, adam: AdamConfig::default(), seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Argument("max_epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Argument(format!(
                "batch_size must be at least 2 for batch normalization, got {}",
                self.batch_size
            )));
        }
        if self.patience == 0 {
            return Err(Error::Argument("patience must be at least 1".into()));
        }
        let a = self.adam;
        if !(a.learning_rate > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0)
        {
            return Err(Error::Argument(format!("invalid Adam hyperparameters {a:?}")));
        }
        Ok(())
    }
}

/// Losses per epoch (1-based epochs: `val_loss[0]` is epoch 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.best_epoch - 1]
    }

    /// `epoch,train_loss,val_loss` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for (i, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, crate::eval::fmt_sig(*t), crate::eval::fmt_sig(*v)));
        }
        out
    }
}

/// Hooks into the training loop.
pub trait TrainMonitor {
    /// Validation loss used for early stopping at `epoch`, given the measured one.
    fn validation_loss(&mut self, _epoch: usize, measured: f64) -> f64 {
        measured
    }

    /// Called after each epoch's validation, before any restore.
    fn epoch_end(&mut self, _epoch: usize, _model: &NeuralNet) {}
}

pub struct NoMonitor;

impl TrainMonitor for NoMonitor {}

/// Minibatch boundaries over `n` shuffled rows. A trailing batch of one row
/// is folded into the previous batch so batch normalization always sees at
/// least two samples.
fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() > 1 && out[out.len() - 1].len() == 1 {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        let last = out.len() - 1;
        out[last] = &order[start..];
    }
    out
}

fn target_tensor(y: &TargetMatrix, rows: &[usize]) -> Result<Tensor> {
    Tensor::new(vec![rows.len(), 3], rows.iter().flat_map(|&r| y.as_rows()[r]).collect())
}

fn check_pair(x: &FeatureMatrix, y: &TargetMatrix, what: &str) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(Error::Shape(format!("{what}: {} feature rows vs {} target rows", x.rows(), y.rows())));
    }
    Ok(())
}

/// Mean squared error of eval-mode predictions.
pub fn evaluation_loss(model: &mut NeuralNet, x: &FeatureMatrix, y: &TargetMatrix) -> Result<f64> {
    check_pair(x, y, "validation")?;
    let pred = model.predict_in_place(x)?;
    let n = (y.rows() * 3) as f64;
    Ok(pred.flat().iter().zip(y.flat()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n)
}

pub fn train(
    model: &mut NeuralNet,
    train: (&FeatureMatrix, &TargetMatrix),
    val: (&FeatureMatrix, &TargetMatrix),
    config: &TrainConfig,
) -> Result<TrainReport> {
    train_with_monitor(model, train, val, config, &mut NoMonitor)
}

/// Minibatch Adam on MSE with early stopping on validation loss. The
/// parameters of the best epoch are restored before returning.
pub fn train_with_monitor(
    model: &mut NeuralNet,
    (train_x, train_y): (&FeatureMatrix, &TargetMatrix),
    (val_x, val_y): (&FeatureMatrix, &TargetMatrix),
    config: &TrainConfig,
    monitor: &mut dyn TrainMonitor,
) -> Result<TrainReport> {
    config.validate()?;
    check_pair(train_x, train_y, "training")?;
    check_pair(val_x, val_y, "validation")?;
    if train_x.rows() < 2 {
        return Err(Error::Argument(format!("need at least 2 training rows, got {}", train_x.rows())));
    }
    if val_x.rows() == 0 {
        return Err(Error::Argument("validation set is empty".into()));
    }
    let architecture = model.architecture();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam);
    let mut order: Vec<usize> = (0..train_x.rows()).collect();
    let mut report =
        TrainReport { train_loss: Vec::new(), val_loss: Vec::new(), stopped_epoch: 0, best_epoch: 0 };
    let mut best = (f64::INFINITY, model.network().snapshot());
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in batches(&order, config.batch_size) {
            let x = architecture.input_tensor(train_x, batch)?;
            let y = target_tensor(train_y, batch)?;
            let net = model.network_mut();
            net.zero_grad();
            let pred = net.forward(&x, Mode::Train)?;
            let (loss, grad) = mse_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            net.backward(&grad)?;
            adam.step(&mut net.params_mut());
            total += loss * batch.len() as f64;
        }
        report.train_loss.push(total / train_x.rows() as f64);

        let measured = evaluation_loss(model, val_x, val_y)?;
        if !measured.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let val = monitor.validation_loss(epoch, measured);
        report.val_loss.push(val);
        report.stopped_epoch = epoch;
        if val < best.0 {
            best = (val, model.network().snapshot());
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        monitor.epoch_end(epoch, model);
        if stale >= config.patience {
            break;
        }
    }
    model.network_mut().restore(&best.1)?;
    Ok(report)
}
