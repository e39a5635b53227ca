//! Elementwise activations and softmax.

use crate::layerkit::Scalar;

pub fn elu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp() - T::one()
    }
}

fn elu_grad<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        x.exp()
    }
}

pub fn relu<T: Scalar>(x: T) -> T {
    x.max(T::zero())
}

pub fn elu_forward<T: Scalar>(input: &[T]) -> Vec<T> {
    input.iter().map(|&v| elu(v)).collect()
}

pub fn elu_backward<T: Scalar>(input: &[T], grad_out: &[T]) -> Vec<T> {
    input
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| g * elu_grad(x))
        .collect()
}

pub fn relu_forward<T: Scalar>(input: &[T]) -> Vec<T> {
    input.iter().map(|&v| relu(v)).collect()
}

pub fn relu_backward<T: Scalar>(input: &[T], grad_out: &[T]) -> Vec<T> {
    input
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    logits.iter().map(|&v| v - lse).collect()
}

/// Gradient through softmax given its output `probs`.
pub fn softmax_backward<T: Scalar>(probs: &[T], grad_out: &[T]) -> Vec<T> {
    let dot: T = probs.iter().zip(grad_out).map(|(&p, &g)| p * g).sum();
    probs
        .iter()
        .zip(grad_out)
        .map(|(&p, &g)| p * (g - dot))
        .collect()
}
