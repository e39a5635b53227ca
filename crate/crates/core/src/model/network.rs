//! The EchoGraph network: conv encoder → feature vector → spiral graph
//! decoder, plus the EF regressor and ED/ES classifier heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry;
use crate::graph::{build_ring_graph, build_spatiotemporal_graph, SpiralSequence};
use crate::keypoints::KeypointSet;
use crate::layerkit::activation::{
    elu_backward, elu_forward, relu_backward, relu_forward, sigmoid, softmax, softmax_backward,
};
use crate::layerkit::conv::{
    global_avg_pool, global_avg_pool_backward, max_pool2, max_pool2_backward, ConvCache,
};
use crate::layerkit::norm::LayerNormCache;
use crate::layerkit::tensor::{ensure_finite, join, Params, Tensor};
use crate::layerkit::{Conv2d, Dense, LayerNorm, MapShape, Scalar, SpiralConv};
use crate::model::config::{Mode, ModelConfig, ENCODER_INPUT_CHANNELS, SPIRAL_LAYERS};

/// Four conv blocks (3×3 conv, ELU, 2×2 max pool) and a global average
/// pool. Two coordinate planes are stacked onto the image so pooled
/// features retain where structures are.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEncoder<T> {
    pub convs: Vec<Conv2d<T>>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    conv: ConvCache<T>,
    pre: Vec<T>,
    argmax: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    blocks: Vec<BlockCache<T>>,
    last: MapShape,
}

impl<T: Scalar> FrameEncoder<T> {
    fn new(rng: &mut ChaCha8Rng, channels: &[usize]) -> Self {
        let mut c_in = ENCODER_INPUT_CHANNELS;
        let convs = channels
            .iter()
            .map(|&c| {
                let conv = Conv2d::new(rng, c_in, c, 3, 1, 1);
                c_in = c;
                conv
            })
            .collect();
        Self { convs }
    }

    fn zeros_like(&self) -> Self {
        Self {
            convs: self.convs.iter().map(Conv2d::zeros_like).collect(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.convs.last().map_or(0, Conv2d::out_channels)
    }

    fn input_planes(frame: &[f32], height: usize, width: usize) -> Vec<T> {
        let mut planes = Vec::with_capacity(frame.len() * ENCODER_INPUT_CHANNELS);
        for y in 0..height {
            let yc = T::lit(2.0 * (y as f64 + 0.5) / height as f64 - 1.0);
            for x in 0..width {
                let xc = T::lit(2.0 * (x as f64 + 0.5) / width as f64 - 1.0);
                let v = T::lit(2.0 * frame[y * width + x] as f64 - 1.0);
                planes.extend_from_slice(&[v, xc, yc]);
            }
        }
        planes
    }

    pub fn forward(&self, frame: &[f32], height: usize, width: usize) -> Result<(Vec<T>, EncoderCache<T>)> {
        let mut x = Self::input_planes(frame, height, width);
        let mut shape = MapShape::new(height, width, ENCODER_INPUT_CHANNELS);
        let mut blocks = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (pre, cache) = conv.forward(&x, shape)?;
            let out_shape = conv.output_shape(shape)?;
            let act = elu_forward(&pre);
            let (pooled, argmax, pooled_shape) = max_pool2(&act, out_shape);
            blocks.push(BlockCache { conv: cache, pre, argmax });
            x = pooled;
            shape = pooled_shape;
        }
        Ok((global_avg_pool(&x, shape), EncoderCache { blocks, last: shape }))
    }

    pub fn backward(&self, cache: &EncoderCache<T>, grad_feature: &[T], grads: &mut FrameEncoder<T>) -> Result<()> {
        let mut g = global_avg_pool_backward(grad_feature, cache.last);
        for (i, (conv, block)) in self.convs.iter().zip(&cache.blocks).enumerate().rev() {
            let g_act = max_pool2_backward(&block.argmax, &g, block.pre.len());
            let g_pre = elu_backward(&block.pre, &g_act);
            match conv.backward(&block.conv, &g_pre, &mut grads.convs[i], i > 0)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }
}

/// Dense layer producing per-node features, four spiral convolutions with
/// ELU, and a shared 2-wide coordinate head.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDecoder<T> {
    pub compress: Dense<T>,
    pub layers: Vec<SpiralConv<T>>,
    pub head: Dense<T>,
}

#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    input: Vec<T>,
    compress_pre: Vec<T>,
    layer_inputs: Vec<Vec<T>>,
    layer_pre: Vec<Vec<T>>,
    layer_caches: Vec<crate::layerkit::spiral::SpiralCache<T>>,
    head_input: Vec<T>,
}

impl<T: Scalar> GraphDecoder<T> {
    fn new(rng: &mut ChaCha8Rng, config: &ModelConfig) -> Self {
        let nodes = config.frames_out() * config.n_keypoints;
        let d = config.decoder_width;
        let compress = Dense::new(rng, config.decoder_input_width(), nodes * d);
        let layers = (0..SPIRAL_LAYERS)
            .map(|_| SpiralConv::new(rng, d, d, config.effective_spiral_len(), d))
            .collect();
        let mut head = Dense::new(rng, d, 2);
        head.bias.fill(T::lit(0.5));
        Self { compress, layers, head }
    }

    fn zeros_like(&self) -> Self {
        Self {
            compress: Dense::zeros(self.compress.in_dim(), self.compress.out_dim()),
            layers: self.layers.iter().map(SpiralConv::zeros_like).collect(),
            head: Dense::zeros(self.head.in_dim(), self.head.out_dim()),
        }
    }

    fn forward(&self, input: &[T], spirals: &[SpiralSequence]) -> Result<(Vec<T>, DecoderCache<T>)> {
        let nodes = spirals.len();
        let compress_pre = self.compress.forward(input)?;
        let mut x = elu_forward(&compress_pre);
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut layer_pre = Vec::with_capacity(self.layers.len());
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (pre, cache) = layer.forward(&x, spirals)?;
            layer_inputs.push(x);
            x = elu_forward(&pre);
            layer_pre.push(pre);
            layer_caches.push(cache);
        }
        let coords = self.head.forward_rows(&x, nodes)?;
        Ok((
            coords,
            DecoderCache {
                input: input.to_vec(),
                compress_pre,
                layer_inputs,
                layer_pre,
                layer_caches,
                head_input: x,
            },
        ))
    }

    fn backward(
        &self,
        cache: &DecoderCache<T>,
        spirals: &[SpiralSequence],
        grad_coords: &[T],
        grads: &mut GraphDecoder<T>,
    ) -> Result<Vec<T>> {
        let nodes = spirals.len();
        let mut g = self
            .head
            .backward_rows(&cache.head_input, grad_coords, nodes, &mut grads.head)?;
        for i in (0..self.layers.len()).rev() {
            let g_pre = elu_backward(&cache.layer_pre[i], &g);
            g = self.layers[i].backward(&cache.layer_caches[i], spirals, &g_pre, &mut grads.layers[i])?;
            debug_assert_eq!(g.len(), cache.layer_inputs[i].len());
        }
        let g_pre = elu_backward(&cache.compress_pre, &g);
        self.compress.backward(&cache.input, &g_pre, &mut grads.compress)
    }
}

/// Four dense layers with ELU between them and a logistic output.
#[derive(Debug, Clone, PartialEq)]
pub struct EfRegressor<T> {
    pub layers: Vec<Dense<T>>,
}

#[derive(Debug, Clone)]
struct MlpCache<T> {
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    norm: Vec<LayerNormCache<T>>,
    normed: Vec<Vec<T>>,
}

impl<T: Scalar> EfRegressor<T> {
    fn new(rng: &mut ChaCha8Rng, input: usize, hidden: [usize; 3]) -> Self {
        let widths = [input, hidden[0], hidden[1], hidden[2], 1];
        Self {
            layers: widths.windows(2).map(|w| Dense::new(rng, w[0], w[1])).collect(),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Dense::zeros(l.in_dim(), l.out_dim())).collect(),
        }
    }

    /// Returns the logistic output in (0, 1).
    fn forward(&self, feature: &[T]) -> Result<(T, MlpCache<T>)> {
        let mut x = feature.to_vec();
        let mut cache = MlpCache {
            inputs: Vec::new(),
            pre: Vec::new(),
            norm: Vec::new(),
            normed: Vec::new(),
        };
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&x)?;
            cache.inputs.push(std::mem::take(&mut x));
            x = if i < last { elu_forward(&pre) } else { pre.clone() };
            cache.pre.push(pre);
        }
        Ok((sigmoid(x[0]), cache))
    }

    fn backward(&self, cache: &MlpCache<T>, output: T, grad_output: T, grads: &mut EfRegressor<T>) -> Result<Vec<T>> {
        let mut g = vec![grad_output * output * (T::one() - output)];
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                g = elu_backward(&cache.pre[i], &g);
            }
            g = self.layers[i].backward(&cache.inputs[i], &g, &mut grads.layers[i])?;
        }
        Ok(g)
    }
}

/// Four dense layers; the first three are followed by layer normalization
/// and ReLU. Emits `2F` logits: ED scores then ES scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EdEsClassifier<T> {
    pub layers: Vec<Dense<T>>,
    pub norms: Vec<LayerNorm<T>>,
}

impl<T: Scalar> EdEsClassifier<T> {
    fn new(rng: &mut ChaCha8Rng, input: usize, hidden: usize, clip_len: usize) -> Self {
        let widths = [input, hidden, hidden, hidden, 2 * clip_len];
        Self {
            layers: widths.windows(2).map(|w| Dense::new(rng, w[0], w[1])).collect(),
            norms: (0..3).map(|_| LayerNorm::new(hidden)).collect(),
        }
    }

    fn zeros_like(&self) -> Self {
        let mut norms: Vec<LayerNorm<T>> = self.norms.iter().map(|n| LayerNorm::new(n.width())).collect();
        norms.iter_mut().for_each(|n| n.zero());
        Self {
            layers: self.layers.iter().map(|l| Dense::zeros(l.in_dim(), l.out_dim())).collect(),
            norms,
        }
    }

    fn forward(&self, feature: &[T]) -> Result<(Vec<T>, MlpCache<T>)> {
        let mut x = feature.to_vec();
        let mut cache = MlpCache {
            inputs: Vec::new(),
            pre: Vec::new(),
            norm: Vec::new(),
            normed: Vec::new(),
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&x)?;
            cache.inputs.push(std::mem::take(&mut x));
            if let Some(norm) = self.norms.get(i) {
                let (normed, nc) = norm.forward(&pre)?;
                x = relu_forward(&normed);
                cache.norm.push(nc);
                cache.normed.push(normed);
            } else {
                x = pre.clone();
            }
            cache.pre.push(pre);
        }
        Ok((x, cache))
    }

    fn backward(&self, cache: &MlpCache<T>, grad_logits: &[T], grads: &mut EdEsClassifier<T>) -> Result<Vec<T>> {
        let mut g = grad_logits.to_vec();
        for i in (0..self.layers.len()).rev() {
            if let Some(norm) = self.norms.get(i) {
                let g_norm = relu_backward(&cache.normed[i], &g);
                g = norm.backward(&cache.norm[i], &g_norm, &mut grads.norms[i]);
            }
            g = self.layers[i].backward(&cache.inputs[i], &g, &mut grads.layers[i])?;
        }
        Ok(g)
    }
}

/// Raw network outputs for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    /// `frames_out × N × 2` normalized coordinates, frame-major.
    pub coords: Vec<T>,
    /// Logistic EF output (multi-frame modes).
    pub ef: Option<T>,
    /// ED logits then ES logits, each of length `clip_len` (classifier mode).
    pub logits: Option<Vec<T>>,
}

/// Loss gradients with respect to [`ForwardOutput`] fields.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads<T> {
    pub coords: Vec<T>,
    pub ef: Option<T>,
    pub logits: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    encoders: Vec<EncoderCache<T>>,
    pooled: Vec<T>,
    projection_pre: Vec<T>,
    feature: Vec<T>,
    decoder: DecoderCache<T>,
    ef: Option<(T, MlpCache<T>)>,
    classifier: Option<(Vec<T>, Vec<T>, MlpCache<T>)>,
}

/// Keypoints plus both EF estimates for a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfPrediction {
    pub ef_regressed: f64,
    /// `None` when a predicted contour has no valid long axis or chord.
    pub ef_from_keypoints: Option<f64>,
    pub ed_keypoints: KeypointSet,
    pub es_keypoints: KeypointSet,
    pub ed_likelihood: Option<Vec<f64>>,
    pub es_likelihood: Option<Vec<f64>>,
}

pub fn clamp_ef(raw: f64) -> f64 {
    if raw.is_nan() {
        return 0.0;
    }
    raw.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EchoGraph<T> {
    config: ModelConfig,
    pub encoder: FrameEncoder<T>,
    pub projection: Dense<T>,
    pub decoder: GraphDecoder<T>,
    pub ef_head: Option<EfRegressor<T>>,
    pub classifier: Option<EdEsClassifier<T>>,
    spirals: Vec<SpiralSequence>,
    /// Optimizer steps taken so far; stored in checkpoints so resumed runs
    /// continue the schedule.
    pub train_step: u64,
}

/// Training and inference precision.
pub type Model = EchoGraph<f32>;

fn build_spirals(config: &ModelConfig) -> Result<Vec<SpiralSequence>> {
    if config.mode.is_multi_frame() {
        build_spatiotemporal_graph(config.n_keypoints)?.all_spatiotemporal_spirals(config.spiral_len)
    } else {
        build_ring_graph(config.n_keypoints)?.all_spirals(config.spiral_len)
    }
}

impl<T: Scalar> EchoGraph<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = FrameEncoder::new(&mut rng, &config.encoder_channels);
        let projection = Dense::new(
            &mut rng,
            config.frames_in() * encoder.out_channels(),
            config.feature_width,
        );
        let decoder = GraphDecoder::new(&mut rng, &config);
        let ef_head = config
            .mode
            .is_multi_frame()
            .then(|| EfRegressor::new(&mut rng, config.feature_width, config.ef_hidden));
        let classifier = (config.mode == Mode::MultiFrameClassifier).then(|| {
            EdEsClassifier::new(&mut rng, config.feature_width, config.classifier_hidden, config.clip_len)
        });
        Ok(Self {
            spirals: build_spirals(&config)?,
            config,
            encoder,
            projection,
            decoder,
            ef_head,
            classifier,
            train_step: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn spirals(&self) -> &[SpiralSequence] {
        &self.spirals
    }

    /// Same structure with every parameter zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            encoder: self.encoder.zeros_like(),
            projection: Dense::zeros(self.projection.in_dim(), self.projection.out_dim()),
            decoder: self.decoder.zeros_like(),
            ef_head: self.ef_head.as_ref().map(EfRegressor::zeros_like),
            classifier: self.classifier.as_ref().map(EdEsClassifier::zeros_like),
            spirals: self.spirals.clone(),
            train_step: 0,
        }
    }

    pub fn cast<U: Scalar>(&self) -> EchoGraph<U> {
        let mut out = EchoGraph::<U>::new(self.config.clone(), 0).expect("config already validated");
        let flat: Vec<U> = self.flatten().into_iter().map(|v| U::lit(v.as_f64())).collect();
        out.load_flat(&flat);
        out.train_step = self.train_step;
        out
    }

    /// Warm start from another model: every tensor whose name and shape
    /// match is copied. The decoder's compress weight may be narrower in
    /// `source` (a known-ED/ES model feeding a classifier model); its columns
    /// fill the leading inputs and the extra inputs start at zero, so the
    /// copied decoder initially ignores the likelihoods. Returns the number
    /// of tensors taken over. The step counter is reset.
    pub fn transfer_from(&mut self, source: &EchoGraph<T>) -> usize {
        let names: Vec<String> = self.named_tensors().into_iter().map(|(n, _)| n).collect();
        let src: std::collections::HashMap<String, &Tensor<T>> = source.named_tensors().into_iter().collect();
        let mut targets = self.tensors_mut();
        let mut copied = 0;
        for (name, dst) in names.iter().zip(targets.iter_mut()) {
            let Some(s) = src.get(name) else { continue };
            if s.shape() == dst.shape() {
                dst.data_mut().copy_from_slice(s.data());
                copied += 1;
            } else if name == "decoder.compress.weight"
                && s.shape()[0] == dst.shape()[0]
                && s.shape()[1] <= dst.shape()[1]
            {
                let (cols_in, cols_out) = (s.shape()[1], dst.shape()[1]);
                for (row_out, row_in) in dst.data_mut().chunks_mut(cols_out).zip(s.data().chunks(cols_in)) {
                    row_out[..cols_in].copy_from_slice(row_in);
                    row_out[cols_in..].fill(T::zero());
                }
                copied += 1;
            }
        }
        self.train_step = 0;
        copied
    }

    fn check_frames(&self, frames: &[&[f32]]) -> Result<()> {
        let want = self.config.frames_in();
        if frames.len() != want {
            return Err(Error::dim(format!(
                "{} model expects {want} frame(s), got {}",
                self.config.mode.name(),
                frames.len()
            )));
        }
        let len = self.config.image_len();
        for (i, f) in frames.iter().enumerate() {
            if f.len() != len {
                return Err(Error::dim(format!(
                    "frame {i} has {} pixels, expected {}×{}",
                    f.len(),
                    self.config.image_height,
                    self.config.image_width
                )));
            }
            ensure_finite(f, "input frame")?;
        }
        Ok(())
    }

    /// Runs the network and keeps everything needed for [`Self::backward`].
    pub fn forward(&self, frames: &[&[f32]]) -> Result<(ForwardOutput<T>, ForwardCache<T>)> {
        self.check_frames(frames)?;
        let (h, w) = (self.config.image_height, self.config.image_width);
        let mut pooled = Vec::with_capacity(frames.len() * self.encoder.out_channels());
        let mut encoders = Vec::with_capacity(frames.len());
        for frame in frames {
            let (f, cache) = self.encoder.forward(frame, h, w)?;
            pooled.extend(f);
            encoders.push(cache);
        }
        let projection_pre = self.projection.forward(&pooled)?;
        let feature = elu_forward(&projection_pre);

        let classifier = match &self.classifier {
            Some(c) => {
                let (logits, cache) = c.forward(&feature)?;
                let f = self.config.clip_len;
                let mut probs = softmax(&logits[..f]);
                probs.extend(softmax(&logits[f..]));
                Some((logits, probs, cache))
            }
            None => None,
        };
        let mut decoder_input = feature.clone();
        if let Some((_, probs, _)) = &classifier {
            decoder_input.extend_from_slice(probs);
        }
        let (coords, decoder) = self.decoder.forward(&decoder_input, &self.spirals)?;
        let ef = match &self.ef_head {
            Some(head) => Some(head.forward(&feature)?),
            None => None,
        };
        ensure_finite(&coords, "predicted coordinates")?;
        let output = ForwardOutput {
            coords,
            ef: ef.as_ref().map(|(v, _)| *v),
            logits: classifier.as_ref().map(|(l, _, _)| l.clone()),
        };
        Ok((
            output,
            ForwardCache {
                encoders,
                pooled,
                projection_pre,
                feature,
                decoder,
                ef,
                classifier,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads`.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &OutputGrads<T>, grads: &mut EchoGraph<T>) -> Result<()> {
        let fw = self.config.feature_width;
        let g_dec_in = self
            .decoder
            .backward(&cache.decoder, &self.spirals, &grad_out.coords, &mut grads.decoder)?;
        let mut g_feature = g_dec_in[..fw].to_vec();

        if let (Some(head), Some((value, ef_cache))) = (&self.ef_head, &cache.ef) {
            let g = grad_out.ef.unwrap_or_else(T::zero);
            if g != T::zero() {
                let gh = grads.ef_head.as_mut().expect("gradient buffer mirrors model");
                let gf = head.backward(ef_cache, *value, g, gh)?;
                g_feature.iter_mut().zip(gf).for_each(|(a, b)| *a += b);
            }
        }

        if let (Some(cls), Some((logits, probs, cls_cache))) = (&self.classifier, &cache.classifier) {
            let f = self.config.clip_len;
            let mut g_logits = grad_out
                .logits
                .clone()
                .unwrap_or_else(|| vec![T::zero(); logits.len()]);
            let g_probs = &g_dec_in[fw..];
            let g_ed = softmax_backward(&probs[..f], &g_probs[..f]);
            let g_es = softmax_backward(&probs[f..], &g_probs[f..]);
            g_logits.iter_mut().zip(g_ed.iter().chain(&g_es)).for_each(|(a, &b)| *a += b);
            let gc = grads.classifier.as_mut().expect("gradient buffer mirrors model");
            let gf = cls.backward(cls_cache, &g_logits, gc)?;
            g_feature.iter_mut().zip(gf).for_each(|(a, b)| *a += b);
        }

        let g_proj = elu_backward(&cache.projection_pre, &g_feature);
        let g_pooled = self
            .projection
            .backward(&cache.pooled, &g_proj, &mut grads.projection)?;
        let c = self.encoder.out_channels();
        for (i, enc_cache) in cache.encoders.iter().enumerate() {
            self.encoder
                .backward(enc_cache, &g_pooled[i * c..(i + 1) * c], &mut grads.encoder)?;
        }
        Ok(())
    }

    /// Encoder feature vector for the given frames (after projection).
    pub fn encode(&self, frames: &[&[f32]]) -> Result<Vec<T>> {
        Ok(self.forward(frames)?.1.feature)
    }

    fn keypoint_sets(&self, coords: &[T]) -> Result<Vec<KeypointSet>> {
        let n = self.config.n_keypoints;
        let (apex, basal) = self.config.landmark_indices();
        coords
            .chunks_exact(2 * n)
            .map(|c| {
                let flat: Vec<f64> = c.iter().map(|v| v.as_f64()).collect();
                KeypointSet::from_flat(&flat, apex, basal)
            })
            .collect()
    }

    pub fn predict_frame(&self, image: &[f32]) -> Result<KeypointSet> {
        if self.config.mode != Mode::SingleFrame {
            return Err(Error::Config(format!(
                "predict_frame needs a single_frame model, this one is {}",
                self.config.mode.name()
            )));
        }
        let (out, _) = self.forward(&[image])?;
        Ok(self.keypoint_sets(&out.coords)?.remove(0))
    }

    pub fn predict_clip(&self, frames: &[&[f32]], n_disks: usize) -> Result<EfPrediction> {
        if !self.config.mode.is_multi_frame() {
            return Err(Error::Config("predict_clip needs a multi-frame model".into()));
        }
        let (out, _) = self.forward(frames)?;
        let mut sets = self.keypoint_sets(&out.coords)?;
        let es_keypoints = sets.pop().expect("two contours");
        let ed_keypoints = sets.pop().expect("two contours");
        let ef_from_keypoints = geometry::ef_from_keypoints(&ed_keypoints, &es_keypoints, n_disks)
            .ok()
            .map(|e| e.ef);
        let f = self.config.clip_len;
        let (ed_likelihood, es_likelihood) = match &out.logits {
            Some(l) => {
                let l: Vec<f64> = l.iter().map(|v| v.as_f64()).collect();
                (Some(softmax(&l[..f])), Some(softmax(&l[f..])))
            }
            None => (None, None),
        };
        Ok(EfPrediction {
            ef_regressed: clamp_ef(out.ef.map_or(f64::NAN, |v| v.as_f64())),
            ef_from_keypoints,
            ed_keypoints,
            es_keypoints,
            ed_likelihood,
            es_likelihood,
        })
    }
}

impl<T: Scalar> Params<T> for EchoGraph<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        for (i, conv) in self.encoder.convs.iter().enumerate() {
            conv.visit(&join(prefix, &format!("encoder.block{i}")), f);
        }
        self.projection.visit(&join(prefix, "projection"), f);
        self.decoder.compress.visit(&join(prefix, "decoder.compress"), f);
        for (i, layer) in self.decoder.layers.iter().enumerate() {
            layer.visit(&join(prefix, &format!("decoder.spiral{i}")), f);
        }
        self.decoder.head.visit(&join(prefix, "decoder.head"), f);
        if let Some(head) = &self.ef_head {
            for (i, l) in head.layers.iter().enumerate() {
                l.visit(&join(prefix, &format!("ef_head.layer{i}")), f);
            }
        }
        if let Some(cls) = &self.classifier {
            for (i, l) in cls.layers.iter().enumerate() {
                l.visit(&join(prefix, &format!("classifier.layer{i}")), f);
                if let Some(n) = cls.norms.get(i) {
                    n.visit(&join(prefix, &format!("classifier.norm{i}")), f);
                }
            }
        }
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Tensor<T>)) {
        for conv in &mut self.encoder.convs {
            conv.visit_mut(f);
        }
        self.projection.visit_mut(f);
        self.decoder.compress.visit_mut(f);
        for layer in &mut self.decoder.layers {
            layer.visit_mut(f);
        }
        self.decoder.head.visit_mut(f);
        if let Some(head) = &mut self.ef_head {
            for l in &mut head.layers {
                l.visit_mut(f);
            }
        }
        if let Some(cls) = &mut self.classifier {
            let EdEsClassifier { layers, norms } = cls;
            let mut norms = norms.iter_mut();
            for l in layers.iter_mut() {
                l.visit_mut(f);
                if let Some(n) = norms.next() {
                    n.visit_mut(f);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layerkit::gradcheck::finite_diff_check;
    use crate::model::loss::{edes_classifier_loss, ef_loss, keypoint_loss, ClassWeights};
    use rand::Rng;

    fn tiny(mode: Mode) -> ModelConfig {
        ModelConfig {
            mode,
            n_keypoints: 6,
            spiral_len: 3,
            feature_width: 6,
            decoder_width: 3,
            clip_len: 3,
            image_height: 16,
            image_width: 16,
            encoder_channels: [2, 2, 3, 2],
            ef_hidden: [4, 3, 2],
            classifier_hidden: 4,
        }
    }

    fn random_frames(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<Vec<f32>> {
        (0..n).map(|_| (0..len).map(|_| rng.random::<f32>()).collect()).collect()
    }

    fn total_loss(model: &EchoGraph<f64>, frames: &[&[f32]], target: &[f64], grads: Option<&mut EchoGraph<f64>>) -> f64 {
        let (out, cache) = model.forward(frames).unwrap();
        let (mut loss, g_coords) = keypoint_loss(&out.coords, target).unwrap();
        let mut grad = OutputGrads {
            coords: g_coords,
            ef: None,
            logits: None,
        };
        if let Some(ef) = out.ef {
            let (l, g) = ef_loss(ef, 0.55);
            loss += l;
            grad.ef = Some(g);
        }
        if let Some(logits) = &out.logits {
            let (l, g) = edes_classifier_loss(logits, 0, 2, ClassWeights::default()).unwrap();
            loss += 0.1 * l;
            grad.logits = Some(g.into_iter().map(|v| 0.1 * v).collect());
        }
        if let Some(grads) = grads {
            model.backward(&cache, &grad, grads).unwrap();
        }
        loss
    }

    #[test]
    fn parameter_count_matches_formula() {
        for mode in [Mode::SingleFrame, Mode::MultiFrameKnown, Mode::MultiFrameClassifier] {
            for cfg in [ModelConfig::with_mode(mode), tiny(mode)] {
                let m = Model::new(cfg.clone(), 1).unwrap();
                assert_eq!(m.parameter_count(), cfg.analytic_parameter_count(), "{mode:?}");
            }
        }
    }

    #[test]
    fn zero_head_puts_points_at_centre() {
        let mut m = Model::new(ModelConfig::default(), 2).unwrap();
        m.decoder.head.weight.fill(0.0);
        let kp = m.predict_frame(&vec![0.3; 112 * 112]).unwrap();
        assert_eq!(kp.len(), 42);
        assert!(kp.points().iter().all(|p| p[0] == 0.5 && p[1] == 0.5));
    }

    #[test]
    fn wrong_image_shape_is_rejected() {
        let m = Model::new(ModelConfig::default(), 2).unwrap();
        assert!(matches!(m.predict_frame(&[0.0; 100]), Err(Error::Dimension(_))));
        let clip = Model::new(tiny(Mode::MultiFrameKnown), 2).unwrap();
        let f = vec![0.0f32; 256];
        assert!(matches!(clip.predict_clip(&[&f, &f], 20), Err(Error::Dimension(_))));
    }

    #[test]
    fn clamp_rule() {
        assert_eq!(clamp_ef(-0.3), 0.0);
        assert_eq!(clamp_ef(1.4), 1.0);
        assert_eq!(clamp_ef(0.42), 0.42);
    }

    #[test]
    fn whole_model_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (i, mode) in [Mode::SingleFrame, Mode::MultiFrameKnown, Mode::MultiFrameClassifier]
            .into_iter()
            .enumerate()
        {
            let cfg = tiny(mode);
            let model = EchoGraph::<f64>::new(cfg.clone(), 40 + i as u64).unwrap();
            let frames = random_frames(&mut rng, cfg.frames_in(), cfg.image_len());
            let refs: Vec<&[f32]> = frames.iter().map(Vec::as_slice).collect();
            let target: Vec<f64> = (0..cfg.frames_out() * cfg.n_keypoints * 2)
                .map(|_| rng.random_range(0.2..0.8))
                .collect();
            let mut grads = model.zeros_like();
            total_loss(&model, &refs, &target, Some(&mut grads));
            let theta = model.flatten();
            let err = finite_diff_check(
                |x| {
                    let mut probe = model.clone();
                    probe.load_flat(x);
                    total_loss(&probe, &refs, &target, None)
                },
                &theta,
                &grads.flatten(),
                1e-6,
            );
            assert!(err < 1e-5, "{mode:?}: {err}");
        }
    }

    #[test]
    fn forward_does_not_mutate() {
        let m = Model::new(tiny(Mode::MultiFrameClassifier), 3).unwrap();
        let before = m.clone();
        let f = vec![0.5f32; 256];
        m.predict_clip(&[&f, &f, &f], 20).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn likelihoods_are_distributions() {
        let m = Model::new(tiny(Mode::MultiFrameClassifier), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames = random_frames(&mut rng, 3, 256);
        let refs: Vec<&[f32]> = frames.iter().map(Vec::as_slice).collect();
        let p = m.predict_clip(&refs, 20).unwrap();
        for l in [p.ed_likelihood.unwrap(), p.es_likelihood.unwrap()] {
            assert_eq!(l.len(), 3);
            assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!((0.0..=1.0).contains(&p.ef_regressed));
        assert_eq!(p.ed_keypoints.len(), 6);
    }

    #[test]
    fn keypoints_depend_on_image_only_through_features() {
        let mut m = Model::new(ModelConfig::default(), 5).unwrap();
        let last = m.encoder.convs.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_frames(&mut rng, 2, 112 * 112);
        assert_eq!(m.encode(&[&a[0]]).unwrap(), m.encode(&[&a[1]]).unwrap());
        assert_eq!(m.predict_frame(&a[0]).unwrap(), m.predict_frame(&a[1]).unwrap());
    }

    #[test]
    fn cast_round_trip_preserves_f32_values() {
        let m = Model::new(tiny(Mode::MultiFrameKnown), 6).unwrap();
        let back: Model = m.cast::<f64>().cast();
        assert_eq!(back.flatten(), m.flatten());
    }

    #[test]
    fn transfer_keeps_known_mode_outputs() {
        let known = Model::new(tiny(Mode::MultiFrameKnown), 8).unwrap();
        let mut cls = Model::new(tiny(Mode::MultiFrameClassifier), 9).unwrap();
        let copied = cls.transfer_from(&known);
        assert_eq!(copied, known.tensors().len());
        let frames: Vec<Vec<f32>> = (0..3).map(|k| (0..256).map(|i| ((i * 7 + k * 13) % 17) as f32 / 17.0).collect()).collect();
        let refs: Vec<&[f32]> = frames.iter().map(|f| f.as_slice()).collect();
        let (a, _) = known.forward(&refs).unwrap();
        let (b, _) = cls.forward(&refs).unwrap();
        assert_eq!(a.coords, b.coords);
        assert_eq!(a.ef, b.ef);
    }
}
