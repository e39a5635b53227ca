use rand::Rng;

use crate::error::{Error, Result};
use crate::layerkit::tensor::{join, Params, Tensor};
use crate::layerkit::Scalar;

/// Affine layer `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| T::lit(rng.random_range(-limit..limit)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches generated length")
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: glorot_uniform(rng, &[out_dim, in_dim], in_dim, out_dim),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    fn check_rows(&self, input: &[T], rows: usize) -> Result<()> {
        if input.len() != rows * self.in_dim() {
            return Err(Error::dim(format!(
                "dense layer expects {} × {} inputs, got {}",
                rows,
                self.in_dim(),
                input.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        self.forward_rows(input, 1)
    }

    /// Applies the layer to each row of a `rows × in_dim` matrix.
    pub fn forward_rows(&self, input: &[T], rows: usize) -> Result<Vec<T>> {
        self.check_rows(input, rows)?;
        let (i, o) = (self.in_dim(), self.out_dim());
        let mut out = vec![T::zero(); rows * o];
        T::gemm(rows, i, o, input, false, self.weight.data(), true, &mut out, false);
        for row in out.chunks_exact_mut(o) {
            for (y, &b) in row.iter_mut().zip(self.bias.data()) {
                *y += b;
            }
        }
        Ok(out)
    }

    pub fn backward(&self, input: &[T], grad_out: &[T], grads: &mut Dense<T>) -> Result<Vec<T>> {
        self.backward_rows(input, grad_out, 1, grads)
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward_rows(
        &self,
        input: &[T],
        grad_out: &[T],
        rows: usize,
        grads: &mut Dense<T>,
    ) -> Result<Vec<T>> {
        self.check_rows(input, rows)?;
        let (i, o) = (self.in_dim(), self.out_dim());
        if grad_out.len() != rows * o {
            return Err(Error::dim(format!(
                "dense backward expects {} output gradients, got {}",
                rows * o,
                grad_out.len()
            )));
        }
        T::gemm(o, rows, i, grad_out, true, input, false, grads.weight.data_mut(), true);
        let gb = grads.bias.data_mut();
        for row in grad_out.chunks_exact(o) {
            for (g, &v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut grad_in = vec![T::zero(); rows * i];
        T::gemm(rows, o, i, grad_out, false, self.weight.data(), false, &mut grad_in, false);
        Ok(grad_in)
    }
}

impl<T: Scalar> Params<T> for Dense<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Tensor<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
