//! 2D cross-correlation, max pooling and global average pooling over
//! `H × W × C` (channel-last) feature maps.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layerkit::dense::glorot_uniform;
use crate::layerkit::tensor::{join, Params, Tensor};
use crate::layerkit::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl MapShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Square-kernel convolution. Weights are stored `out × k × k × in` so a
/// row of the weight matrix lines up with an im2col patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    input: MapShape,
    output: MapShape,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = kernel * kernel * in_channels;
        let fan_out = kernel * kernel * out_channels;
        Self {
            weight: glorot_uniform(rng, &[out_channels, kernel, kernel, in_channels], fan_in, fan_out),
            bias: Tensor::zeros(&[out_channels]),
            stride,
            padding,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[3]
    }

    pub fn output_shape(&self, input: MapShape) -> Result<MapShape> {
        let k = self.kernel();
        if input.channels != self.in_channels() {
            return Err(Error::dim(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                input.channels
            )));
        }
        let ph = input.height + 2 * self.padding;
        let pw = input.width + 2 * self.padding;
        if ph < k || pw < k {
            return Err(Error::dim(format!(
                "kernel {k} does not fit padded input {ph}×{pw}"
            )));
        }
        Ok(MapShape::new(
            (ph - k) / self.stride + 1,
            (pw - k) / self.stride + 1,
            self.out_channels(),
        ))
    }

    /// Output columns `ox` whose tap `kx` lands inside an input row of
    /// `width` pixels.
    fn valid_cols(&self, kx: usize, width: usize, out_width: usize) -> std::ops::Range<usize> {
        let (s, p) = (self.stride, self.padding);
        let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
        let hi = if width + p > kx {
            ((width + p - kx - 1) / s + 1).min(out_width)
        } else {
            0
        };
        lo..hi.max(lo)
    }

    fn im2col(&self, input: &[T], shape: MapShape, out: MapShape) -> Vec<T> {
        let k = self.kernel();
        let c = shape.channels;
        let patch = k * k * c;
        let row_len = shape.width * c;
        let mut cols = vec![T::zero(); out.height * out.width * patch];
        for oy in 0..out.height {
            for ky in 0..k {
                let Some(iy) = (oy * self.stride + ky).checked_sub(self.padding) else {
                    continue;
                };
                if iy >= shape.height {
                    continue;
                }
                let in_row = &input[iy * row_len..(iy + 1) * row_len];
                for kx in 0..k {
                    for ox in self.valid_cols(kx, shape.width, out.width) {
                        let ix = ox * self.stride + kx - self.padding;
                        let dst = (oy * out.width + ox) * patch + (ky * k + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&in_row[ix * c..ix * c + c]);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], shape: MapShape, out: MapShape) -> Vec<T> {
        let k = self.kernel();
        let c = shape.channels;
        let patch = k * k * c;
        let row_len = shape.width * c;
        let mut grad = vec![T::zero(); shape.len()];
        for oy in 0..out.height {
            for ky in 0..k {
                let Some(iy) = (oy * self.stride + ky).checked_sub(self.padding) else {
                    continue;
                };
                if iy >= shape.height {
                    continue;
                }
                let g_row = &mut grad[iy * row_len..(iy + 1) * row_len];
                for kx in 0..k {
                    for ox in self.valid_cols(kx, shape.width, out.width) {
                        let ix = ox * self.stride + kx - self.padding;
                        let src = (oy * out.width + ox) * patch + (ky * k + kx) * c;
                        for (g, &v) in g_row[ix * c..ix * c + c].iter_mut().zip(&cols[src..src + c]) {
                            *g += v;
                        }
                    }
                }
            }
        }
        grad
    }

    pub fn forward(&self, input: &[T], shape: MapShape) -> Result<(Vec<T>, ConvCache<T>)> {
        if input.len() != shape.len() {
            return Err(Error::dim(format!(
                "conv input has {} values, shape {:?} needs {}",
                input.len(),
                shape,
                shape.len()
            )));
        }
        let out_shape = self.output_shape(shape)?;
        let cols = self.im2col(input, shape, out_shape);
        let pixels = out_shape.height * out_shape.width;
        let patch = self.kernel() * self.kernel() * shape.channels;
        let oc = self.out_channels();
        let mut out = vec![T::zero(); pixels * oc];
        T::gemm(pixels, patch, oc, &cols, false, self.weight.data(), true, &mut out, false);
        for px in out.chunks_exact_mut(oc) {
            for (y, &b) in px.iter_mut().zip(self.bias.data()) {
                *y += b;
            }
        }
        Ok((
            out,
            ConvCache {
                cols,
                input: shape,
                output: out_shape,
            },
        ))
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// `want_input_grad` (the first layer of a network can skip it).
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        grad_out: &[T],
        grads: &mut Conv2d<T>,
        want_input_grad: bool,
    ) -> Result<Option<Vec<T>>> {
        let out = cache.output;
        if grad_out.len() != out.len() {
            return Err(Error::dim("conv backward: output gradient size"));
        }
        let pixels = out.height * out.width;
        let patch = self.kernel() * self.kernel() * cache.input.channels;
        let oc = self.out_channels();
        T::gemm(oc, pixels, patch, grad_out, true, &cache.cols, false, grads.weight.data_mut(), true);
        let gb = grads.bias.data_mut();
        for px in grad_out.chunks_exact(oc) {
            for (g, &v) in gb.iter_mut().zip(px) {
                *g += v;
            }
        }
        if !want_input_grad {
            return Ok(None);
        }
        let mut grad_cols = vec![T::zero(); pixels * patch];
        T::gemm(pixels, oc, patch, grad_out, false, self.weight.data(), false, &mut grad_cols, false);
        Ok(Some(self.col2im(&grad_cols, cache.input, out)))
    }
}

impl<T: Scalar> Params<T> for Conv2d<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Tensor<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
pub fn max_pool2<T: Scalar>(input: &[T], shape: MapShape) -> (Vec<T>, Vec<u32>, MapShape) {
    let out = MapShape::new(shape.height / 2, shape.width / 2, shape.channels);
    let c = shape.channels;
    let mut values = Vec::with_capacity(out.len());
    let mut argmax = Vec::with_capacity(out.len());
    for oy in 0..out.height {
        for ox in 0..out.width {
            for ch in 0..c {
                let mut best_idx = ((2 * oy) * shape.width + 2 * ox) * c + ch;
                let mut best = input[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * oy + dy) * shape.width + 2 * ox + dx) * c + ch;
                    if input[idx] > best {
                        best = input[idx];
                        best_idx = idx;
                    }
                }
                values.push(best);
                argmax.push(best_idx as u32);
            }
        }
    }
    (values, argmax, out)
}

pub fn max_pool2_backward<T: Scalar>(argmax: &[u32], grad_out: &[T], input_len: usize) -> Vec<T> {
    let mut grad = vec![T::zero(); input_len];
    for (&idx, &g) in argmax.iter().zip(grad_out) {
        grad[idx as usize] += g;
    }
    grad
}

pub fn global_avg_pool<T: Scalar>(input: &[T], shape: MapShape) -> Vec<T> {
    let c = shape.channels;
    let mut out = vec![T::zero(); c];
    for px in input.chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    let n = T::lit((shape.height * shape.width) as f64);
    out.iter_mut().for_each(|v| *v = *v / n);
    out
}

pub fn global_avg_pool_backward<T: Scalar>(grad_out: &[T], shape: MapShape) -> Vec<T> {
    let n = T::lit((shape.height * shape.width) as f64);
    let scaled: Vec<T> = grad_out.iter().map(|&g| g / n).collect();
    let mut grad = Vec::with_capacity(shape.len());
    for _ in 0..shape.height * shape.width {
        grad.extend_from_slice(&scaled);
    }
    grad
}
