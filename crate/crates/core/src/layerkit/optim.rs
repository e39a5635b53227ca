use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layerkit::tensor::Params;
use crate::layerkit::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment (Adam) state: one first/second moment buffer per
/// parameter tensor, in the model's visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new<P: Params<T>>(params: &P, config: AdamConfig) -> Self {
        let first: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .map(|t| vec![T::zero(); t.len()])
            .collect();
        Self {
            config,
            second: first.clone(),
            first,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Continues the bias-correction schedule from an earlier run.
    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update. Gradients are checked for finiteness before any
    /// parameter is touched.
    pub fn step<P: Params<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grad_tensors = grads.tensors();
        if grad_tensors.len() != self.first.len() {
            return Err(Error::dim("optimizer state does not match parameter set"));
        }
        for (g, m) in grad_tensors.iter().zip(&self.first) {
            if g.len() != m.len() {
                return Err(Error::dim("gradient shape differs from optimizer state"));
            }
            if !g.is_finite() {
                return Err(Error::Divergence {
                    step: self.step,
                    reason: "non-finite gradient".into(),
                });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
        let step_size = T::lit(lr / c1);
        let inv_sqrt_c2 = T::lit(1.0 / c2.sqrt());
        let eps = T::lit(eps);

        let mut idx = 0;
        let first = &mut self.first;
        let second = &mut self.second;
        params.visit_mut(&mut |p| {
            let g = grad_tensors[idx].data();
            let m = &mut first[idx];
            let v = &mut second[idx];
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                *w -= step_size * *mi / ((*vi).sqrt() * inv_sqrt_c2 + eps);
            }
            idx += 1;
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layerkit::dense::Dense;
    use crate::layerkit::tensor::Tensor;

    fn scalar_param(v: f64) -> Dense<f64> {
        Dense {
            weight: Tensor::from_vec(&[1, 1], vec![v]).unwrap(),
            bias: Tensor::zeros(&[1]),
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_param(2.0);
        let mut g = scalar_param(1.0);
        g.bias.fill(0.0);
        let mut opt = OptimizerState::new(&p, AdamConfig { lr: 0.1, ..Default::default() });
        opt.step(&mut p, &g).unwrap();
        assert!((p.weight.data()[0] - 1.9).abs() < 1e-6);
        assert_eq!(p.bias.data()[0], 0.0);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters_alone() {
        let mut p = scalar_param(0.5);
        let g = Dense::<f64>::zeros(1, 1);
        let mut opt = OptimizerState::new(&p, AdamConfig::default());
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p.weight.data()[0], 0.5);
    }

    #[test]
    fn non_finite_gradient_fails_without_updating() {
        let mut p = scalar_param(0.5);
        let mut g = Dense::<f64>::zeros(1, 1);
        g.weight.data_mut()[0] = f64::NAN;
        let mut opt = OptimizerState::new(&p, AdamConfig::default());
        assert!(matches!(opt.step(&mut p, &g), Err(Error::Divergence { .. })));
        assert_eq!(p.weight.data()[0], 0.5);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = scalar_param(1.0);
            let mut opt = OptimizerState::new(&p, AdamConfig::default());
            for k in 0..100 {
                let mut g = Dense::<f64>::zeros(1, 1);
                g.weight.data_mut()[0] = (k as f64 * 0.3).sin() + p.weight.data()[0];
                g.bias.data_mut()[0] = 0.1;
                opt.step(&mut p, &g).unwrap();
            }
            (p.weight.data()[0].to_bits(), p.bias.data()[0].to_bits())
        };
        assert_eq!(run(), run());
    }
}
