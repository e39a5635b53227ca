//! Minibatch training with Adam, linear warmup and cosine decay.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layerkit::tensor::Params;
use crate::layerkit::{AdamConfig, OptimizerState};
use crate::model::config::Mode;
use crate::model::loss::{edes_classifier_loss, ef_loss, keypoint_loss, LossParts, LossWeights};
use crate::model::network::{Model, OutputGrads};

/// One training example in the layout the model consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `frames_in` frames of `H·W` 8-bit pixels.
    pub frames: Vec<Arc<[u8]>>,
    /// `frames_out × N × 2` normalized target coordinates.
    pub keypoints: Vec<f64>,
    pub ef: Option<f64>,
    /// ED and ES positions inside the clip (classifier mode).
    pub edes: Option<(usize, usize)>,
}

impl Sample {
    pub fn frames_f32(&self) -> Vec<Vec<f32>> {
        self.frames.iter().map(|f| to_unit(f)).collect()
    }
}

pub fn to_unit(pixels: &[u8]) -> Vec<f32> {
    pixels.iter().map(|&p| p as f32 / 255.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate reached at the end of warmup.
    pub lr: f64,
    pub warmup_steps: u64,
    /// Final learning rate as a fraction of the peak.
    pub min_lr_fraction: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Reshuffle the training set every epoch.
    pub shuffle: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr: 1e-3,
            warmup_steps: 50,
            min_lr_fraction: 0.01,
            grad_clip: Some(5.0),
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weights: LossWeights::default(),
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainSchedule {
    pub fn steps_per_epoch(&self, n_train: usize) -> u64 {
        n_train.div_ceil(self.batch_size.max(1)) as u64
    }

    /// Learning rate for 0-based step `step` out of `total` steps.
    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = total.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let floor = self.lr * self.min_lr_fraction;
        floor + 0.5 * (self.lr - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps completed at the end of the epoch.
    pub step: u64,
    pub lr: f64,
    /// Mean over the epoch's minibatches, each measured before its update.
    pub train: LossParts,
    pub val: Option<LossParts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_keypoint: Option<f64>,
    pub steps: u64,
}

fn check_sample(model: &Model, sample: &Sample) -> Result<()> {
    let cfg = model.config();
    if sample.frames.len() != cfg.frames_in() {
        return Err(Error::dim(format!(
            "sample has {} frames, {} model needs {}",
            sample.frames.len(),
            cfg.mode.name(),
            cfg.frames_in()
        )));
    }
    if sample.keypoints.len() != cfg.frames_out() * cfg.n_keypoints * 2 {
        return Err(Error::dim("sample keypoint target does not match model output"));
    }
    if cfg.mode.is_multi_frame() && sample.ef.is_none() {
        return Err(Error::Label("multi-frame sample without EF target".into()));
    }
    if cfg.mode == Mode::MultiFrameClassifier && sample.edes.is_none() {
        return Err(Error::Label("classifier sample without ED/ES indices".into()));
    }
    Ok(())
}

/// Loss components for one sample and, when `grads` is given, their
/// gradient accumulated into it.
pub fn sample_loss(model: &Model, sample: &Sample, weights: &LossWeights, grads: Option<&mut Model>) -> Result<LossParts> {
    check_sample(model, sample)?;
    let frames = sample.frames_f32();
    let refs: Vec<&[f32]> = frames.iter().map(Vec::as_slice).collect();
    let (out, cache) = model.forward(&refs)?;
    let target: Vec<f32> = sample.keypoints.iter().map(|&v| v as f32).collect();
    let (kp, g_coords) = keypoint_loss(&out.coords, &target)?;
    let mut parts = LossParts {
        keypoint: kp as f64,
        ..LossParts::default()
    };
    let mut g_ef = None;
    if let (Some(pred), Some(t)) = (out.ef, sample.ef) {
        let (l, g) = ef_loss(pred, t as f32);
        parts.ef = l as f64;
        g_ef = Some(g * weights.lambda_ef as f32);
    }
    let mut g_logits = None;
    if let (Some(logits), Some((ed, es))) = (&out.logits, sample.edes) {
        let (l, g) = edes_classifier_loss(logits, ed, es, weights.class_weights)?;
        parts.classifier = l as f64;
        let s = weights.lambda_cls as f32;
        g_logits = Some(g.into_iter().map(|v| v * s).collect());
    }
    parts.total = parts.keypoint + weights.lambda_ef * parts.ef + weights.lambda_cls * parts.classifier;
    if !parts.total.is_finite() {
        return Err(Error::Divergence {
            step: model.train_step,
            reason: format!("non-finite loss {parts:?}"),
        });
    }
    if let Some(grads) = grads {
        let grad_out = OutputGrads {
            coords: g_coords,
            ef: g_ef,
            logits: g_logits,
        };
        model.backward(&cache, &grad_out, grads)?;
    }
    Ok(parts)
}

fn mean_parts(parts: &[LossParts]) -> LossParts {
    let n = parts.len().max(1) as f64;
    let mut m = LossParts::default();
    for p in parts {
        m.keypoint += p.keypoint / n;
        m.ef += p.ef / n;
        m.classifier += p.classifier / n;
        m.total += p.total / n;
    }
    m
}

/// Mean loss components over a dataset, forward only.
pub fn evaluate_loss(model: &Model, samples: &[Sample], weights: &LossWeights) -> Result<LossParts> {
    let parts = samples
        .par_iter()
        .map(|s| sample_loss(model, s, weights, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_parts(&parts))
}

fn clip_gradients(grads: &mut Model, max_norm: f64) {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|t| t.data().iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        grads.visit_mut(&mut |t| t.data_mut().iter_mut().for_each(|v| *v *= s));
    }
}

/// Owns the model being trained, its optimizer state, and the best
/// parameters seen so far by validation keypoint loss.
pub struct Trainer {
    model: Model,
    optimizer: OptimizerState<f32>,
    schedule: TrainSchedule,
    best: Option<(f64, usize, Model)>,
}

impl Trainer {
    pub fn new(model: Model, schedule: TrainSchedule) -> Result<Self> {
        if schedule.batch_size == 0 || schedule.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(schedule.lr > 0.0 && schedule.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", schedule.lr)));
        }
        let mut optimizer = OptimizerState::new(
            &model,
            AdamConfig {
                lr: schedule.lr,
                beta1: schedule.beta1,
                beta2: schedule.beta2,
                eps: schedule.adam_eps,
            },
        );
        optimizer.set_step_count(model.train_step);
        Ok(Self {
            model,
            optimizer,
            schedule,
            best: None,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Best model by validation keypoint loss, or the current one when no
    /// validation set was used.
    pub fn best_model(&self) -> &Model {
        self.best.as_ref().map_or(&self.model, |(_, _, m)| m)
    }

    pub fn into_best_model(self) -> Model {
        match self.best {
            Some((_, _, m)) => m,
            None => self.model,
        }
    }

    /// One optimizer step on `batch`; returns the batch-mean loss measured
    /// before the update.
    pub fn step(&mut self, batch: &[Sample], lr: f64) -> Result<LossParts> {
        let weights = self.schedule.weights;
        let model = &self.model;
        let results = batch
            .par_iter()
            .map(|s| {
                let mut g = model.zeros_like();
                let parts = sample_loss(model, s, &weights, Some(&mut g))?;
                Ok((parts, g))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut iter = results.into_iter();
        let (first_parts, mut grads) = iter.next().ok_or_else(|| Error::Config("empty batch".into()))?;
        let mut parts = vec![first_parts];
        for (p, g) in iter {
            grads.accumulate(&g);
            parts.push(p);
        }
        let inv = 1.0 / batch.len() as f32;
        grads.visit_mut(&mut |t| t.data_mut().iter_mut().for_each(|v| *v *= inv));
        if let Some(c) = self.schedule.grad_clip {
            clip_gradients(&mut grads, c);
        }
        self.optimizer.set_lr(lr);
        self.optimizer.step(&mut self.model, &grads)?;
        self.model.train_step = self.optimizer.step_count();
        Ok(mean_parts(&parts))
    }

    /// Runs the full schedule. `on_epoch` sees every epoch log as it is
    /// produced.
    pub fn fit(
        &mut self,
        train: &[Sample],
        val: &[Sample],
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<TrainReport> {
        if train.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        for s in train.iter().chain(val) {
            check_sample(&self.model, s)?;
        }
        let per_epoch = self.schedule.steps_per_epoch(train.len());
        let start = self.model.train_step;
        let total = start + per_epoch * self.schedule.epochs as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.schedule.seed ^ start.rotate_left(32));
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut logs = Vec::with_capacity(self.schedule.epochs);
        for epoch in 0..self.schedule.epochs {
            if self.schedule.shuffle {
                order.shuffle(&mut rng);
            }
            let mut batch_parts = Vec::new();
            let mut lr = self.schedule.lr;
            for chunk in order.chunks(self.schedule.batch_size) {
                let batch: Vec<Sample> = chunk.iter().map(|&i| train[i].clone()).collect();
                lr = self.schedule.lr_at(self.model.train_step, total);
                batch_parts.push(self.step(&batch, lr)?);
            }
            let val_parts = if val.is_empty() {
                None
            } else {
                Some(evaluate_loss(&self.model, val, &self.schedule.weights)?)
            };
            if let Some(v) = &val_parts {
                if self.best.as_ref().is_none_or(|(b, _, _)| v.keypoint < *b) {
                    self.best = Some((v.keypoint, epoch, self.model.clone()));
                }
            }
            let log = EpochLog {
                epoch,
                step: self.model.train_step,
                lr,
                train: mean_parts(&batch_parts),
                val: val_parts,
            };
            on_epoch(&log);
            logs.push(log);
        }
        let (best_epoch, best_val_keypoint) = match &self.best {
            Some((v, e, _)) => (*e, Some(*v)),
            None => (logs.len() - 1, None),
        };
        Ok(TrainReport {
            epochs: logs,
            best_epoch,
            best_val_keypoint,
            steps: self.model.train_step,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;

    fn tiny(mode: Mode) -> ModelConfig {
        ModelConfig {
            mode,
            n_keypoints: 6,
            spiral_len: 3,
            feature_width: 6,
            decoder_width: 4,
            clip_len: 3,
            image_height: 16,
            image_width: 16,
            encoder_channels: [2, 2, 3, 2],
            ef_hidden: [4, 3, 2],
            classifier_hidden: 4,
        }
    }

    fn samples(cfg: &ModelConfig, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                frames: (0..cfg.frames_in())
                    .map(|f| (0..cfg.image_len()).map(|p| ((p * 31 + i * 17 + f * 5) % 256) as u8).collect::<Vec<u8>>().into())
                    .collect(),
                keypoints: (0..cfg.frames_out() * cfg.n_keypoints * 2)
                    .map(|k| 0.3 + 0.4 * ((k + i) % 7) as f64 / 7.0)
                    .collect(),
                ef: Some(0.3 + 0.05 * i as f64),
                edes: Some((0, cfg.clip_len - 1)),
            })
            .collect()
    }

    #[test]
    fn schedule_shape() {
        let s = TrainSchedule {
            lr: 1.0,
            warmup_steps: 10,
            min_lr_fraction: 0.0,
            ..TrainSchedule::default()
        };
        assert!((s.lr_at(0, 110) - 0.1).abs() < 1e-12);
        assert!((s.lr_at(9, 110) - 1.0).abs() < 1e-12);
        assert!((s.lr_at(10, 110) - 1.0).abs() < 1e-12);
        assert!((s.lr_at(60, 110) - 0.5).abs() < 1e-12);
        assert!(s.lr_at(109, 110) < 0.01);
    }

    #[test]
    fn same_seed_same_curve() {
        let cfg = tiny(Mode::MultiFrameClassifier);
        let data = samples(&cfg, 6);
        let run = || {
            let mut t = Trainer::new(
                Model::new(cfg.clone(), 3).unwrap(),
                TrainSchedule {
                    epochs: 3,
                    batch_size: 4,
                    warmup_steps: 2,
                    seed: 5,
                    ..TrainSchedule::default()
                },
            )
            .unwrap();
            let report = t.fit(&data, &data[..2], |_| {}).unwrap();
            (report, t.into_best_model())
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_eq!(a.steps, 6);
    }

    #[test]
    fn zero_lambda_ef_leaves_ef_head_without_gradient() {
        let cfg = tiny(Mode::MultiFrameKnown);
        let model = Model::new(cfg.clone(), 1).unwrap();
        let weights = LossWeights {
            lambda_ef: 0.0,
            ..LossWeights::default()
        };
        let mut grads = model.zeros_like();
        sample_loss(&model, &samples(&cfg, 1)[0], &weights, Some(&mut grads)).unwrap();
        let head = grads.ef_head.as_ref().unwrap();
        assert!(head.layers.iter().all(|l| l.weight.data().iter().chain(l.bias.data()).all(|&v| v == 0.0)));
        // the keypoint term still reaches the encoder
        assert!(grads.projection.weight.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn total_gradient_is_sum_of_parts() {
        let cfg = tiny(Mode::MultiFrameClassifier);
        let model = Model::new(cfg.clone(), 2).unwrap();
        let s = &samples(&cfg, 1)[0];
        let full = LossWeights::default();
        let mut g_all = model.zeros_like();
        sample_loss(&model, s, &full, Some(&mut g_all)).unwrap();
        let mut g_sum = model.zeros_like();
        for w in [
            LossWeights { lambda_ef: 0.0, lambda_cls: 0.0, ..full },
            LossWeights { lambda_ef: full.lambda_ef, lambda_cls: 0.0, ..full },
            LossWeights { lambda_ef: 0.0, lambda_cls: full.lambda_cls, ..full },
        ] {
            sample_loss(&model, s, &w, Some(&mut g_sum)).unwrap();
        }
        // g_sum counted the keypoint term three times
        let mut g_kp = model.zeros_like();
        sample_loss(&model, s, &LossWeights { lambda_ef: 0.0, lambda_cls: 0.0, ..full }, Some(&mut g_kp)).unwrap();
        for ((a, s), k) in g_all.flatten().iter().zip(g_sum.flatten()).zip(g_kp.flatten()) {
            assert!((a - (s - 2.0 * k)).abs() <= 1e-5 * (1.0 + a.abs()), "{a} vs {}", s - 2.0 * k);
        }
    }

    #[test]
    fn resume_continues_step_counter() {
        let cfg = tiny(Mode::SingleFrame);
        let data = samples(&cfg, 4);
        let schedule = TrainSchedule {
            epochs: 2,
            batch_size: 2,
            ..TrainSchedule::default()
        };
        let mut t = Trainer::new(Model::new(cfg, 0).unwrap(), schedule.clone()).unwrap();
        t.fit(&data, &[], |_| {}).unwrap();
        let m = t.into_best_model();
        assert_eq!(m.train_step, 4);
        let mut t2 = Trainer::new(m, schedule).unwrap();
        let report = t2.fit(&data, &[], |_| {}).unwrap();
        assert_eq!(report.steps, 8);
    }

    #[test]
    fn mismatched_sample_rejected() {
        let cfg = tiny(Mode::MultiFrameKnown);
        let mut s = samples(&cfg, 1);
        s[0].frames.pop();
        let mut t = Trainer::new(Model::new(cfg, 0).unwrap(), TrainSchedule::default()).unwrap();
        assert!(matches!(t.fit(&s, &[], |_| {}), Err(Error::Dimension(_))));
    }
}
