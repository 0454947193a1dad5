//! Mini-batch training over whole bags with Adam and validation-AUROC early
//! stopping.

use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{bag_loss_and_grad, BagExample, Objective};
use super::MlpModel;
use crate::data::FeatureMatrix;
use crate::error::{invalid, LlpError, Result};
use crate::{metrics, rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda_a: f64,
    /// Instances per mini-batch, rounded down to whole bags (at least one).
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            lambda_a: 1.0,
            batch_size: 512,
            max_epochs: 100,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(invalid(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.lambda_a >= 0.0) {
            return Err(invalid(format!(
                "lambda_a must be >= 0, got {}",
                self.lambda_a
            )));
        }
        if self.patience == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return Err(invalid("patience, max_epochs and batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            *p -= self.learning_rate * (update + self.weight_decay * *p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strict improvement
/// of the monitored score.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: None,
            wait: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        if score > self.best {
            self.best = score;
            self.best_epoch = Some(epoch);
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

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }
}

/// Training bag in global row indices with per-member targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingBag {
    pub members: Vec<usize>,
    pub targets: Vec<f64>,
    pub weights: Option<Vec<f64>>,
    pub proportion: f64,
}

/// Held-out rows with true labels; used only to pick the stopping epoch.
#[derive(Debug, Clone, Copy)]
pub struct ValidationSet<'a> {
    pub features: &'a FeatureMatrix,
    pub rows: &'a [usize],
    pub labels: &'a [u8],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auroc: f64,
    pub stopped_early: bool,
}

impl TrainLog {
    /// `epoch,train_loss,val_auroc`
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w =
            csv::Writer::from_writer(File::create(path).map_err(|e| LlpError::io(path, e))?);
        w.write_record(["epoch", "train_loss", "val_auroc"])?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_auroc.to_string(),
            ])?;
        }
        w.flush().map_err(|e| LlpError::io(path, e))?;
        Ok(())
    }
}

// bags per parallel work unit; fixed so the reduction order never depends
// on the thread count
const GRAIN: usize = 4;

fn batch_loss_and_grad(
    model: &MlpModel,
    features: &FeatureMatrix,
    batch: &[&TrainingBag],
    objective: Objective,
) -> Result<(f64, Vec<f64>)> {
    let n_params = model.params().len();
    let partials: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_chunks(GRAIN)
        .map(|chunk| {
            let mut grad = vec![0.0; n_params];
            let mut loss = 0.0;
            for bag in chunk {
                let ex = BagExample {
                    inputs: bag.members.iter().map(|&i| features.row(i)).collect(),
                    targets: &bag.targets,
                    weights: bag.weights.as_deref(),
                    proportion: bag.proportion,
                };
                loss += bag_loss_and_grad(model, &ex, objective, Some(&mut grad))?;
            }
            Ok((loss, grad))
        })
        .collect();
    let n_inst: usize = batch.iter().map(|b| b.members.len()).sum();
    let scale = 1.0 / n_inst as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; n_params];
    for part in partials {
        let (l, g) = part?;
        total += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((total * scale, grad))
}

/// Fits `model` on `bags` and restores the parameters of the epoch with
/// the best validation AUROC.
pub fn train(
    model: &mut MlpModel,
    features: &FeatureMatrix,
    bags: &[TrainingBag],
    validation: &ValidationSet<'_>,
    cfg: &TrainConfig,
    objective: Objective,
) -> Result<TrainLog> {
    cfg.validate()?;
    if bags.is_empty() {
        return Err(invalid("no training bags"));
    }
    if features.cols() != model.input_dim() {
        return Err(LlpError::DimensionMismatch {
            expected: model.input_dim(),
            got: features.cols(),
        });
    }
    if validation.rows.len() != validation.labels.len() {
        return Err(LlpError::DimensionMismatch {
            expected: validation.rows.len(),
            got: validation.labels.len(),
        });
    }
    let pos = validation.labels.iter().filter(|&&y| y != 0).count();
    if pos == 0 || pos == validation.labels.len() {
        return Err(LlpError::SingleClass);
    }
    for bag in bags {
        if bag.members.len() != bag.targets.len() || bag.members.is_empty() {
            return Err(invalid(
                "training bag members and targets must be non-empty and aligned",
            ));
        }
    }

    let typical = (bags.iter().map(|b| b.members.len()).sum::<usize>() / bags.len()).max(1);
    let bags_per_batch = (cfg.batch_size / typical).clamp(1, bags.len());
    let mut rng = rng::seeded(cfg.seed);
    let mut adam = Adam::new(model.params().len(), cfg.learning_rate, cfg.weight_decay);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.params().to_vec();
    let mut order: Vec<usize> = (0..bags.len()).collect();
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for (b, chunk) in order.chunks(bags_per_batch).enumerate() {
            let batch: Vec<&TrainingBag> = chunk.iter().map(|&k| &bags[k]).collect();
            let (loss, grad) = batch_loss_and_grad(model, features, &batch, objective)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(LlpError::NonFiniteLoss { epoch, batch: b });
            }
            adam.step(model.params_mut(), &grad);
            loss_sum += loss;
            n_batches += 1;
        }
        let scores = model.score_rows(validation.features, validation.rows)?;
        let val_auroc = metrics::auroc(&scores, validation.labels)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            val_auroc,
        });
        match stopper.observe(epoch, val_auroc) {
            StopDecision::Improved => best_params.copy_from_slice(model.params()),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    model.params_mut().copy_from_slice(&best_params);
    let (best_epoch, best_val_auroc) = stopper.best().expect("at least one epoch ran");
    Ok(TrainLog {
        epochs,
        best_epoch,
        best_val_auroc,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_arithmetic() {
        let mut s = EarlyStopping::new(20);
        let mut stopped_at = None;
        for epoch in 1..=100 {
            // rises to a peak at epoch 3, then declines
            let score = if epoch <= 3 {
                0.5 + 0.1 * epoch as f64
            } else {
                0.8 - 0.001 * epoch as f64
            };
            if s.observe(epoch, score) == StopDecision::Stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(23));
        assert_eq!(s.best().unwrap().0, 3);
    }

    #[test]
    fn equal_score_is_not_improvement() {
        let mut s = EarlyStopping::new(2);
        assert_eq!(s.observe(1, 0.7), StopDecision::Improved);
        assert_eq!(s.observe(2, 0.7), StopDecision::Continue);
        assert_eq!(s.observe(3, 0.7), StopDecision::Stop);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, -2.0];
        let mut opt = Adam::new(2, 0.1, 0.0);
        opt.step(&mut p, &[0.5, -3.0]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn decoupled_decay_without_gradient() {
        let mut p = vec![2.0];
        let mut opt = Adam::new(1, 0.1, 0.5);
        opt.step(&mut p, &[0.0]);
        assert!((p[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            patience: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
