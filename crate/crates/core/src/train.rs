//! Adam training over class-balanced batches with a time-ordered hold-out.

use std::time::Instant;

use serde::Serialize;

use crate::data::{BalancedBatches, Class, LabeledWindow};
use crate::error::{Error, Result};
use crate::eval::roc_auc;
use crate::model::{Backend, InferenceEngine, Model};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Seed for batch shuffling.
    pub seed: u64,
    /// Share of each class, latest windows first, held out for validation.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && (0.0..1.0).contains(&self.validation_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad training hyperparameters {self:?}")))
        }
    }
}

/// Adam with per-parameter first and second moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: u64,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            m: Vec::new(),
            v: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update and re-clips/re-packs the binary weights.
    pub fn step(&mut self, model: &mut Model, grads: &[Vec<f32>]) -> Result<()> {
        let mut groups = model.param_groups_mut();
        if groups.len() != grads.len() || groups.iter().zip(grads).any(|(p, g)| p.values.len() != g.len()) {
            return Err(Error::ShapeMismatch("gradients do not match the parameter groups".into()));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, group) in groups.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, p) in group.values.iter_mut().enumerate() {
                let g = grads[k][i] as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let update = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                *p = (*p as f64 - update) as f32;
            }
        }
        drop(groups);
        model.refresh();
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Holds out the latest `fraction` of each class, ordered by recording and
/// start time. A fraction of zero keeps everything for training.
pub fn validation_split(windows: &[LabeledWindow], fraction: f64) -> Result<Split> {
    let mut split = Split {
        train: Vec::new(),
        validation: Vec::new(),
    };
    for class in [Class::Preictal, Class::Interictal] {
        let mut idx: Vec<usize> = (0..windows.len()).filter(|&i| windows[i].class == class).collect();
        idx.sort_by(|&a, &b| {
            let (x, y) = (&windows[a], &windows[b]);
            x.recording_id.cmp(&y.recording_id).then(x.start_s.total_cmp(&y.start_s))
        });
        let held = if fraction > 0.0 {
            ((idx.len() as f64 * fraction).ceil() as usize).min(idx.len().saturating_sub(1))
        } else {
            0
        };
        if idx.len() - held == 0 || (fraction > 0.0 && held == 0) {
            return Err(Error::InvalidDataset(format!(
                "{} {class:?} windows cannot be split into training and validation",
                idx.len()
            )));
        }
        let cut = idx.len() - held;
        split.validation.extend_from_slice(&idx[cut..]);
        idx.truncate(cut);
        split.train.extend(idx);
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_auc: Option<f64>,
    pub seconds: f64,
}

impl EpochRecord {
    /// `epoch<TAB>loss<TAB>val_auc<TAB>seconds`
    pub fn log_line(&self) -> String {
        let auc = self.val_auc.map_or("nan".to_string(), |a| format!("{a:.6}"));
        format!("{}\t{:.6}\t{}\t{:.3}", self.epoch, self.loss, auc, self.seconds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub optimizer_steps: u64,
    pub train_windows: usize,
    pub validation_windows: usize,
}

impl TrainHistory {
    pub fn log(&self) -> String {
        let mut s = String::from("epoch\tloss\tval_auc\tseconds\n");
        for e in &self.epochs {
            s.push_str(&e.log_line());
            s.push('\n');
        }
        s
    }
}

/// ROC AUC of the preictal score over the given windows.
pub fn evaluate_auc(engine: &InferenceEngine, windows: &[&LabeledWindow]) -> Result<f64> {
    let mut scores = Vec::with_capacity(windows.len());
    for w in windows {
        scores.push(engine.forward(&w.data, Backend::Packed)?[1] as f64);
    }
    let labels: Vec<bool> = windows.iter().map(|w| w.class == Class::Preictal).collect();
    roc_auc(&scores, &labels)
}

/// Trains `model` in place and returns the per-epoch history.
pub fn train(model: &mut Model, windows: &[LabeledWindow], cfg: &TrainConfig) -> Result<TrainHistory> {
    train_with(model, windows, cfg, |_| {})
}

/// As [`train`], calling `on_epoch` after each epoch.
pub fn train_with(
    model: &mut Model,
    windows: &[LabeledWindow],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    let shape = model.input_shape();
    if let Some(w) = windows.iter().find(|w| w.data.shape() != shape) {
        return Err(Error::ShapeMismatch(format!(
            "window from {} at {} s has shape {:?}, model expects {shape:?}",
            w.recording_id,
            w.start_s,
            w.data.shape()
        )));
    }
    let split = validation_split(windows, cfg.validation_fraction)?;
    let train_set: Vec<&LabeledWindow> = split.train.iter().map(|&i| &windows[i]).collect();
    let holdout: Vec<&LabeledWindow> = split.validation.iter().map(|&i| &windows[i]).collect();
    let mut batches = BalancedBatches::from_classes(train_set.iter().map(|w| w.class), cfg.seed)?;
    let mut adam = Adam::new(cfg);
    let mut history = TrainHistory {
        epochs: Vec::with_capacity(cfg.epochs),
        optimizer_steps: 0,
        train_windows: train_set.len(),
        validation_windows: holdout.len(),
    };

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for (b, batch) in batches.next_epoch().into_iter().enumerate() {
            let data: Vec<&DenseTensor> = batch.iter().map(|&i| &train_set[i].data).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_set[i].class.label()).collect();
            let result = model.train_batch(&data, &labels).map_err(|e| match e {
                Error::TrainingDiverged { loss, .. } => Error::TrainingDiverged { epoch, batch: b, loss },
                other => other,
            })?;
            adam.step(model, &result.grads)?;
            loss_sum += result.loss * batch.len() as f64;
            correct += result.correct;
            seen += batch.len();
        }
        let val_auc = if holdout.is_empty() {
            None
        } else {
            Some(evaluate_auc(&InferenceEngine::new(model.clone()), &holdout)?)
        };
        let record = EpochRecord {
            epoch,
            loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            val_auc,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!("{}", record.log_line());
        on_epoch(&record);
        history.epochs.push(record);
    }
    history.optimizer_steps = adam.steps();
    Ok(history)
}
