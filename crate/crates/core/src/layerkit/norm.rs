use crate::error::{Error, Result};
use crate::layerkit::tensor::{join, Params, Tensor};
use crate::layerkit::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Layer normalization over one feature vector with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    normalized: Vec<T>,
    inv_std: T,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(width: usize) -> Self {
        let mut scale = Tensor::zeros(&[width]);
        scale.fill(T::one());
        Self {
            scale,
            shift: Tensor::zeros(&[width]),
        }
    }

    pub fn width(&self) -> usize {
        self.scale.len()
    }

    pub fn forward(&self, input: &[T]) -> Result<(Vec<T>, LayerNormCache<T>)> {
        let d = self.width();
        if input.len() != d || d < 2 {
            return Err(Error::dim(format!(
                "layer norm of width {d} got {} values",
                input.len()
            )));
        }
        let n = T::lit(d as f64);
        let mean = input.iter().copied().sum::<T>() / n;
        let var = input.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv_std = T::one() / (var + T::lit(LAYER_NORM_EPS)).sqrt();
        let normalized: Vec<T> = input.iter().map(|&v| (v - mean) * inv_std).collect();
        let out = normalized
            .iter()
            .zip(self.scale.data().iter().zip(self.shift.data()))
            .map(|(&z, (&g, &b))| g * z + b)
            .collect();
        Ok((out, LayerNormCache { normalized, inv_std }))
    }

    pub fn backward(&self, cache: &LayerNormCache<T>, grad_out: &[T], grads: &mut LayerNorm<T>) -> Vec<T> {
        let d = self.width();
        let n = T::lit(d as f64);
        let mut dz = Vec::with_capacity(d);
        for k in 0..d {
            grads.scale.data_mut()[k] += grad_out[k] * cache.normalized[k];
            grads.shift.data_mut()[k] += grad_out[k];
            dz.push(grad_out[k] * self.scale.data()[k]);
        }
        let sum_dz: T = dz.iter().copied().sum();
        let sum_dz_z: T = dz.iter().zip(&cache.normalized).map(|(&a, &b)| a * b).sum();
        dz.iter()
            .zip(&cache.normalized)
            .map(|(&g, &z)| cache.inv_std / n * (n * g - sum_dz - z * sum_dz_z))
            .collect()
    }
}

impl<T: Scalar> Params<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "scale"), &self.scale);
        f(join(prefix, "shift"), &self.shift);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Tensor<T>)) {
        f(&mut self.scale);
        f(&mut self.shift);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::layerkit::gradcheck::{finite_diff_check, random_vec};

    #[test]
    fn constant_input_normalizes_to_shift() {
        let mut ln = LayerNorm::<f64>::new(4);
        ln.shift.data_mut().copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);
        let (y, _) = ln.forward(&[2.5; 4]).unwrap();
        assert_eq!(y, vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ln = LayerNorm::<f64>::new(32);
        let x: Vec<f64> = random_vec(&mut rng, 32).iter().map(|v| 3.0 * v + 1.5).collect();
        let (y, _) = ln.forward(&x).unwrap();
        let mean = y.iter().sum::<f64>() / 32.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-6);
        // epsilon in the denominator pulls variance slightly below one
        assert!((var - 1.0).abs() < 1e-5, "variance {var}");
    }

    #[test]
    fn width_one_is_rejected() {
        assert!(LayerNorm::<f64>::new(1).forward(&[1.0]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = 6;
        let mut ln = LayerNorm::<f64>::new(d);
        ln.load_flat(&random_vec(&mut rng, 2 * d));
        let x = random_vec(&mut rng, d);
        let probe = random_vec(&mut rng, d);
        let mut theta = ln.flatten();
        theta.extend_from_slice(&x);
        let eval = |t: &[f64]| {
            let mut l = ln.clone();
            l.load_flat(&t[..2 * d]);
            let (y, _) = l.forward(&t[2 * d..]).unwrap();
            y.iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = ln.forward(&x).unwrap();
        let mut grads = LayerNorm::new(d);
        grads.zero();
        let gx = ln.backward(&cache, &probe, &mut grads);
        let mut analytic = grads.flatten();
        analytic.extend(gx);
        let err = finite_diff_check(eval, &theta, &analytic, 1e-6);
        assert!(err < 1e-5, "max relative error {err}");
    }
}
