//! Training objectives. Each function returns the loss and its gradient
//! with respect to the prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layerkit::activation::log_softmax;
use crate::layerkit::Scalar;

/// Mean absolute error over every coordinate. For multi-frame outputs the
/// ED and ES contours have equal size, so this is also the mean of the two
/// per-frame terms.
pub fn keypoint_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::dim(format!(
            "keypoint loss: prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    let inv = T::one() / T::lit(pred.len() as f64);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d.abs();
            if d > T::zero() {
                inv
            } else if d < T::zero() {
                -inv
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((loss * inv, grad))
}

/// Squared error.
pub fn ef_loss<T: Scalar>(pred: T, target: T) -> (T, T) {
    let d = pred - target;
    (d * d, T::lit(2.0) * d)
}

/// Per-frame cross-entropy weights: the ground-truth frame gets
/// `gt_weight`, every other frame `other_weight`. With one-hot targets only
/// the ground-truth term is nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub gt_weight: f64,
    pub other_weight: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self {
            gt_weight: 5.0,
            other_weight: 1.0,
        }
    }
}

impl ClassWeights {
    pub fn weight(&self, frame: usize, gt: usize) -> f64 {
        if frame == gt {
            self.gt_weight
        } else {
            self.other_weight
        }
    }
}

/// Weighted cross-entropy of the ED and ES logit arrays against one-hot
/// frame indices, summed over the two arrays. `logits` holds ED scores
/// followed by ES scores.
pub fn edes_classifier_loss<T: Scalar>(
    logits: &[T],
    ed_index: usize,
    es_index: usize,
    weights: ClassWeights,
) -> Result<(T, Vec<T>)> {
    if logits.len() % 2 != 0 || logits.is_empty() {
        return Err(Error::dim(format!("classifier logits length {} is not 2F", logits.len())));
    }
    let f = logits.len() / 2;
    if ed_index >= f || es_index >= f {
        return Err(Error::Label(format!(
            "ED/ES index ({ed_index}, {es_index}) outside clip of {f} frames"
        )));
    }
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (half, gt) in [(&logits[..f], ed_index), (&logits[f..], es_index)] {
        let logp = log_softmax(half);
        // loss = -Σ w_j q_j log p_j with q one-hot; d/dz_i = w_gt (p_i - q_i)
        let w = T::lit(weights.weight(gt, gt));
        loss -= w * logp[gt];
        for (i, lp) in logp.iter().enumerate() {
            let q = if i == gt { T::one() } else { T::zero() };
            grad.push(w * (lp.exp() - q));
        }
    }
    Ok((loss, grad))
}

/// Relative weights of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_ef: f64,
    pub lambda_cls: f64,
    pub class_weights: ClassWeights,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ef: 1.0,
            lambda_cls: 0.1,
            class_weights: ClassWeights::default(),
        }
    }
}

/// Component values of one evaluation of the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub keypoint: f64,
    pub ef: f64,
    pub classifier: f64,
    pub total: f64,
}
