use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::SpiralSequence;
use crate::layerkit::activation::{elu_backward, elu_forward};
use crate::layerkit::dense::Dense;
use crate::layerkit::tensor::{join, Params, Tensor};
use crate::layerkit::Scalar;

/// Spiral convolution: for each node, the features of its spiral are
/// concatenated in order and passed through a shared two-layer perceptron
/// (`dense → ELU → dense`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpiralConv<T> {
    pub spiral_len: usize,
    pub in_dim: usize,
    pub hidden: Dense<T>,
    pub output: Dense<T>,
}

#[derive(Debug, Clone)]
pub struct SpiralCache<T> {
    gathered: Vec<T>,
    hidden_pre: Vec<T>,
    hidden_act: Vec<T>,
    n_nodes: usize,
}

impl<T: Scalar> SpiralConv<T> {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        in_dim: usize,
        out_dim: usize,
        spiral_len: usize,
        hidden_dim: usize,
    ) -> Self {
        Self {
            spiral_len,
            in_dim,
            hidden: Dense::new(rng, spiral_len * in_dim, hidden_dim),
            output: Dense::new(rng, hidden_dim, out_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            spiral_len: self.spiral_len,
            in_dim: self.in_dim,
            hidden: Dense::zeros(self.hidden.in_dim(), self.hidden.out_dim()),
            output: Dense::zeros(self.output.in_dim(), self.output.out_dim()),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.output.out_dim()
    }

    fn gather(&self, features: &[T], spirals: &[SpiralSequence]) -> Result<Vec<T>> {
        let n = spirals.len();
        if features.len() != n * self.in_dim {
            return Err(Error::dim(format!(
                "spiral conv: {} spirals but {} feature values (width {})",
                n,
                features.len(),
                self.in_dim
            )));
        }
        let d = self.in_dim;
        let mut gathered = Vec::with_capacity(n * self.spiral_len * d);
        for s in spirals {
            if s.order.len() != self.spiral_len {
                return Err(Error::dim(format!(
                    "spiral of length {} for a layer of spiral length {}",
                    s.order.len(),
                    self.spiral_len
                )));
            }
            for &j in &s.order {
                if j >= n {
                    return Err(Error::dim(format!("spiral index {j} outside {n} nodes")));
                }
                gathered.extend_from_slice(&features[j * d..(j + 1) * d]);
            }
        }
        Ok(gathered)
    }

    /// `features` is `N × in_dim` row-major; returns `N × out_dim`.
    pub fn forward(&self, features: &[T], spirals: &[SpiralSequence]) -> Result<(Vec<T>, SpiralCache<T>)> {
        let n = spirals.len();
        let gathered = self.gather(features, spirals)?;
        let hidden_pre = self.hidden.forward_rows(&gathered, n)?;
        let hidden_act = elu_forward(&hidden_pre);
        let out = self.output.forward_rows(&hidden_act, n)?;
        Ok((
            out,
            SpiralCache {
                gathered,
                hidden_pre,
                hidden_act,
                n_nodes: n,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &SpiralCache<T>,
        spirals: &[SpiralSequence],
        grad_out: &[T],
        grads: &mut SpiralConv<T>,
    ) -> Result<Vec<T>> {
        let n = cache.n_nodes;
        let g_act = self
            .output
            .backward_rows(&cache.hidden_act, grad_out, n, &mut grads.output)?;
        let g_pre = elu_backward(&cache.hidden_pre, &g_act);
        let g_gathered = self
            .hidden
            .backward_rows(&cache.gathered, &g_pre, n, &mut grads.hidden)?;
        let d = self.in_dim;
        let mut grad_in = vec![T::zero(); n * d];
        for (s, chunk) in spirals.iter().zip(g_gathered.chunks_exact(self.spiral_len * d)) {
            for (&j, g) in s.order.iter().zip(chunk.chunks_exact(d)) {
                for (dst, &v) in grad_in[j * d..(j + 1) * d].iter_mut().zip(g) {
                    *dst += v;
                }
            }
        }
        Ok(grad_in)
    }
}

impl<T: Scalar> Params<T> for SpiralConv<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Tensor<T>)) {
        self.hidden.visit_mut(f);
        self.output.visit_mut(f);
    }
}
