//! The six-layer binary classifier and its exact backpropagation.
//!
//! Layer chain: Conv(3x3, valid, ReLU) -> Conv(3x3, valid, ReLU) ->
//! MaxPool(2x2, stride 2) -> Flatten -> Dense(ReLU) -> Dense(1, logistic).
//! With the default spec and a 1×100×100 input the intermediate shapes are
//! 32×98×98 -> 16×96×96 -> 16×48×48 -> 36864 -> 128 -> 1.
//!
//! Batch work parallelizes per sample and, for parameter gradients, per
//! output row; every parallel unit owns a disjoint output region and reduces
//! in a fixed order, so results are bit-identical to a sequential run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use super::layers::{
    self, conv2d_accumulate_kernel_grad, conv2d_backward_input, conv2d_forward_slices,
    dense_backward_input, maxpool2_backward, maxpool2_slices, ConvDims,
};
use super::tensor::{Tensor, TensorError};
use crate::image::FrameImage;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {reason}")]
    BadSpec { reason: String },
    #[error("batch shape {got:?}, expected B×1×{h}×{w}")]
    BatchShape { got: Vec<usize>, h: usize, w: usize },
    #[error("cache does not match this batch (stale or foreign cache)")]
    StaleCache,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Architecture hyperparameters; kernel 3x3 and the layer order are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub dense_units: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { input_height: 100, input_width: 100, conv1_filters: 32, conv2_filters: 16, dense_units: 128 }
    }
}

impl ModelSpec {
    /// Small variant used by gradient-check tests: 1×8×8 input, 2+2 filters,
    /// 4 dense units.
    pub fn reduced() -> Self {
        Self { input_height: 8, input_width: 8, conv1_filters: 2, conv2_filters: 2, dense_units: 4 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (h2, w2) = (self.input_height.wrapping_sub(4), self.input_width.wrapping_sub(4));
        if self.input_height < 6 || self.input_width < 6 {
            return Err(ModelError::BadSpec { reason: "input must be at least 6x6".into() });
        }
        if h2 % 2 != 0 || w2 % 2 != 0 {
            return Err(ModelError::BadSpec {
                reason: format!("second conv output {h2}x{w2} must have even extents for pooling"),
            });
        }
        if self.conv1_filters == 0 || self.conv2_filters == 0 || self.dense_units == 0 {
            return Err(ModelError::BadSpec { reason: "layer widths must be positive".into() });
        }
        Ok(())
    }

    /// Spatial extents after the first conv.
    pub fn conv1_out(&self) -> (usize, usize) {
        (self.input_height - 2, self.input_width - 2)
    }

    /// Spatial extents after the second conv.
    pub fn conv2_out(&self) -> (usize, usize) {
        (self.input_height - 4, self.input_width - 4)
    }

    /// Spatial extents after pooling.
    pub fn pool_out(&self) -> (usize, usize) {
        let (h, w) = self.conv2_out();
        (h / 2, w / 2)
    }

    /// Flattened feature count feeding the first dense layer.
    pub fn flat_len(&self) -> usize {
        let (h, w) = self.pool_out();
        self.conv2_filters * h * w
    }

    pub fn parameter_count(&self) -> usize {
        let conv1 = self.conv1_filters * 9 + self.conv1_filters;
        let conv2 = self.conv2_filters * self.conv1_filters * 9 + self.conv2_filters;
        let dense1 = self.dense_units * self.flat_len() + self.dense_units;
        let dense2 = self.dense_units + 1;
        conv1 + conv2 + dense1 + dense2
    }
}

/// A convolution layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// K×C×3×3 kernels.
    pub kernels: Tensor,
    /// K biases.
    pub bias: Tensor,
}

/// A dense layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// O×I weights.
    pub weights: Tensor,
    /// O biases.
    pub bias: Tensor,
}

/// The trained model: all parameters plus the architecture they instantiate.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub dense1: DenseLayer,
    pub dense2: DenseLayer,
}

/// Per-parameter gradients, in the same shapes as [`Model`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub dense1: DenseLayer,
    pub dense2: DenseLayer,
}

impl Gradients {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let flat = spec.flat_len();
        Self {
            conv1: ConvLayer {
                kernels: Tensor::zeros(&[spec.conv1_filters, 1, 3, 3]),
                bias: Tensor::zeros(&[spec.conv1_filters]),
            },
            conv2: ConvLayer {
                kernels: Tensor::zeros(&[spec.conv2_filters, spec.conv1_filters, 3, 3]),
                bias: Tensor::zeros(&[spec.conv2_filters]),
            },
            dense1: DenseLayer {
                weights: Tensor::zeros(&[spec.dense_units, flat]),
                bias: Tensor::zeros(&[spec.dense_units]),
            },
            dense2: DenseLayer {
                weights: Tensor::zeros(&[1, spec.dense_units]),
                bias: Tensor::zeros(&[1]),
            },
        }
    }

    pub fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.conv1.kernels,
            &self.conv1.bias,
            &self.conv2.kernels,
            &self.conv2.bias,
            &self.dense1.weights,
            &self.dense1.bias,
            &self.dense2.weights,
            &self.dense2.bias,
        ]
    }
}

/// Activations retained by [`Model::forward`] for the matching backward pass.
#[derive(Debug)]
pub struct ForwardCache {
    /// The input batch, B×1×H×W.
    pub batch: Tensor,
    samples: Vec<SampleCache>,
    /// Clamped logistic outputs, B×1.
    pub probs: Tensor,
}

#[derive(Debug)]
struct SampleCache {
    conv1_pre: Vec<f32>,
    conv2_pre: Vec<f32>,
    pool_out: Vec<f32>,
    pool_idx: Vec<u32>,
    dense1_pre: Vec<f32>,
    logit: f32,
}

struct SampleGrads {
    dz_conv1: Vec<f32>,
    dz_conv2: Vec<f32>,
    dz_dense1: Vec<f32>,
    dz_out: f32,
}

impl Model {
    /// Seeded initialization: uniform `±sqrt(6 / (fan_in + fan_out))` weights
    /// per layer, zero biases.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv_fan = |c: usize, k: usize| (c * 9, k * 9);
        let mut uniform = |shape: &[usize], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
            let data = (0..shape.iter().product::<usize>())
                .map(|_| rng.gen_range(-limit..=limit))
                .collect();
            Tensor::from_vec(shape, data).expect("generated data matches shape")
        };
        let (f1_in, f1_out) = conv_fan(1, spec.conv1_filters);
        let conv1_k = uniform(&[spec.conv1_filters, 1, 3, 3], f1_in, f1_out);
        let (f2_in, f2_out) = conv_fan(spec.conv1_filters, spec.conv2_filters);
        let conv2_k = uniform(&[spec.conv2_filters, spec.conv1_filters, 3, 3], f2_in, f2_out);
        let flat = spec.flat_len();
        let dense1_w = uniform(&[spec.dense_units, flat], flat, spec.dense_units);
        let dense2_w = uniform(&[1, spec.dense_units], spec.dense_units, 1);
        Ok(Self {
            spec,
            conv1: ConvLayer { kernels: conv1_k, bias: Tensor::zeros(&[spec.conv1_filters]) },
            conv2: ConvLayer { kernels: conv2_k, bias: Tensor::zeros(&[spec.conv2_filters]) },
            dense1: DenseLayer { weights: dense1_w, bias: Tensor::zeros(&[spec.dense_units]) },
            dense2: DenseLayer { weights: dense2_w, bias: Tensor::zeros(&[1]) },
        })
    }

    fn conv1_dims(&self) -> ConvDims {
        ConvDims {
            c: 1,
            h: self.spec.input_height,
            w: self.spec.input_width,
            k: self.spec.conv1_filters,
            kh: 3,
            kw: 3,
        }
    }

    fn conv2_dims(&self) -> ConvDims {
        let (h1, w1) = self.spec.conv1_out();
        ConvDims { c: self.spec.conv1_filters, h: h1, w: w1, k: self.spec.conv2_filters, kh: 3, kw: 3 }
    }

    /// Runs the layer chain over a B×1×H×W batch of [0,1] pixels, returning
    /// B×1 probabilities and the activation cache for `backward`.
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, ForwardCache), ModelError> {
        let shape = batch.shape();
        let (h, w) = (self.spec.input_height, self.spec.input_width);
        if shape.len() != 4 || shape[1] != 1 || shape[2] != h || shape[3] != w {
            return Err(ModelError::BatchShape { got: shape.to_vec(), h, w });
        }
        let b = shape[0];
        let in_len = h * w;
        let d1 = self.conv1_dims();
        let d2 = self.conv2_dims();
        let (h1, w1) = self.spec.conv1_out();
        let (h2, w2) = self.spec.conv2_out();
        let samples: Vec<SampleCache> = (0..b)
            .into_par_iter()
            .map(|i| {
                let input = &batch.data()[i * in_len..(i + 1) * in_len];
                let mut conv1_pre = vec![0.0f32; d1.k * h1 * w1];
                conv2d_forward_slices(
                    input,
                    self.conv1.kernels.data(),
                    self.conv1.bias.data(),
                    &mut conv1_pre,
                    d1,
                );
                let act1: Vec<f32> = conv1_pre.iter().map(|&z| layers::relu(z)).collect();
                let mut conv2_pre = vec![0.0f32; d2.k * h2 * w2];
                conv2d_forward_slices(
                    &act1,
                    self.conv2.kernels.data(),
                    self.conv2.bias.data(),
                    &mut conv2_pre,
                    d2,
                );
                let act2: Vec<f32> = conv2_pre.iter().map(|&z| layers::relu(z)).collect();
                let mut pool_out = vec![0.0f32; d2.k * (h2 / 2) * (w2 / 2)];
                let mut pool_idx = vec![0u32; pool_out.len()];
                maxpool2_slices(&act2, &mut pool_out, &mut pool_idx, d2.k, h2, w2);
                let dense1_pre: Vec<f32> = (0..self.spec.dense_units)
                    .map(|o| {
                        let row = &self.dense1.weights.data()[o * pool_out.len()..(o + 1) * pool_out.len()];
                        self.dense1.bias.data()[o] + layers::dot(row, &pool_out)
                    })
                    .collect();
                let act3: Vec<f32> = dense1_pre.iter().map(|&z| layers::relu(z)).collect();
                let logit = self.dense2.bias.data()[0] + layers::dot(self.dense2.weights.data(), &act3);
                SampleCache { conv1_pre, conv2_pre, pool_out, pool_idx, dense1_pre, logit }
            })
            .collect();
        let probs_vec: Vec<f32> = samples.iter().map(|s| layers::logistic(s.logit)).collect();
        let probs = Tensor::from_vec(&[b, 1], probs_vec)?;
        Ok((
            probs.clone(),
            ForwardCache { batch: batch.clone(), samples, probs },
        ))
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
        Ok(self.forward(batch)?.0)
    }

    /// Classifies one frame image; returns the probability of class 1.
    pub fn predict_image(&self, img: &FrameImage) -> Result<f32, ModelError> {
        let batch = Tensor::from_vec(
            &[1, 1, img.height(), img.width()],
            img.pixels().to_vec(),
        )?;
        Ok(self.predict(&batch)?.data()[0])
    }

    /// Exact analytic gradients for every parameter given `d_prob = dL/dp`
    /// from the loss. ReLU gates on positive pre-activations, pooling routes
    /// through recorded argmax positions, and the convolution gradient is the
    /// correlation adjoint.
    pub fn backward(&self, cache: &ForwardCache, d_prob: &Tensor) -> Result<Gradients, ModelError> {
        let b = cache.samples.len();
        if d_prob.shape() != [b, 1] {
            return Err(ModelError::Tensor(TensorError::ShapeMismatch {
                got: d_prob.shape().to_vec(),
                want: format!("[{b}, 1] upstream gradient"),
            }));
        }
        let (h, w) = (self.spec.input_height, self.spec.input_width);
        if cache.batch.shape() != [b, 1, h, w] {
            return Err(ModelError::StaleCache);
        }
        let d1 = self.conv1_dims();
        let d2 = self.conv2_dims();
        let flat = self.spec.flat_len();

        // Per-sample pre-activation gradients (parallel over samples).
        let per_sample: Vec<SampleGrads> = (0..b)
            .into_par_iter()
            .map(|i| {
                let s = &cache.samples[i];
                let p = cache.probs.data()[i];
                let dz_out = d_prob.data()[i] * p * (1.0 - p);
                // Dense head.
                let dz_dense1: Vec<f32> = self
                    .dense2
                    .weights
                    .data()
                    .iter()
                    .zip(&s.dense1_pre)
                    .map(|(&w, &pre)| layers::relu_gate(pre, dz_out * w))
                    .collect();
                let mut d_pool = vec![0.0f32; flat];
                dense_backward_input(&dz_dense1, self.dense1.weights.data(), &mut d_pool);
                // Unpool and gate through the second conv's ReLU.
                let mut dz_conv2 = vec![0.0f32; s.conv2_pre.len()];
                maxpool2_backward(&d_pool, &s.pool_idx, &mut dz_conv2);
                for (dz, &pre) in dz_conv2.iter_mut().zip(&s.conv2_pre) {
                    *dz = layers::relu_gate(pre, *dz);
                }
                // Into the first conv's ReLU.
                let mut d_act1 = vec![0.0f32; s.conv1_pre.len()];
                conv2d_backward_input(&dz_conv2, self.conv2.kernels.data(), &mut d_act1, d2);
                let mut dz_conv1 = d_act1;
                for (dz, &pre) in dz_conv1.iter_mut().zip(&s.conv1_pre) {
                    *dz = layers::relu_gate(pre, *dz);
                }
                SampleGrads { dz_conv1, dz_conv2, dz_dense1, dz_out }
            })
            .collect();

        // Parameter gradients: parallel over output rows, sequential over
        // samples within each row, so the reduction order is fixed.
        let mut grads = Gradients::zeros(&self.spec);
        let in_len = h * w;

        let conv1_kernel_len = 9;
        grads
            .conv1
            .kernels
            .data_mut()
            .par_chunks_mut(conv1_kernel_len)
            .enumerate()
            .for_each(|(k, dk)| {
                for (i, sg) in per_sample.iter().enumerate() {
                    let input = &cache.batch.data()[i * in_len..(i + 1) * in_len];
                    conv2d_accumulate_kernel_grad(&sg.dz_conv1, input, dk, k, d1, |x| x);
                }
            });
        {
            let (oh1, ow1) = self.spec.conv1_out();
            let plane = oh1 * ow1;
            let bias = grads.conv1.bias.data_mut();
            for (k, slot) in bias.iter_mut().enumerate() {
                let mut acc = 0.0f32;
                for sg in &per_sample {
                    acc += sg.dz_conv1[k * plane..(k + 1) * plane].iter().sum::<f32>();
                }
                *slot = acc;
            }
        }

        let conv2_kernel_len = self.spec.conv1_filters * 9;
        grads
            .conv2
            .kernels
            .data_mut()
            .par_chunks_mut(conv2_kernel_len)
            .enumerate()
            .for_each(|(k, dk)| {
                for (i, sg) in per_sample.iter().enumerate() {
                    // The second conv consumed ReLU(conv1_pre), recomputed here.
                    conv2d_accumulate_kernel_grad(
                        &sg.dz_conv2,
                        &cache.samples[i].conv1_pre,
                        dk,
                        k,
                        d2,
                        layers::relu,
                    );
                }
            });
        {
            let (oh2, ow2) = self.spec.conv2_out();
            let plane = oh2 * ow2;
            let bias = grads.conv2.bias.data_mut();
            for (k, slot) in bias.iter_mut().enumerate() {
                let mut acc = 0.0f32;
                for sg in &per_sample {
                    acc += sg.dz_conv2[k * plane..(k + 1) * plane].iter().sum::<f32>();
                }
                *slot = acc;
            }
        }

        grads
            .dense1
            .weights
            .data_mut()
            .par_chunks_mut(flat)
            .enumerate()
            .for_each(|(o, dw_row)| {
                for (i, sg) in per_sample.iter().enumerate() {
                    let g = sg.dz_dense1[o];
                    if g != 0.0 {
                        layers::axpy(dw_row, g, &cache.samples[i].pool_out);
                    }
                }
            });
        for (o, slot) in grads.dense1.bias.data_mut().iter_mut().enumerate() {
            *slot = per_sample.iter().map(|sg| sg.dz_dense1[o]).sum();
        }

        {
            let dw2 = grads.dense2.weights.data_mut();
            for (i, sg) in per_sample.iter().enumerate() {
                if sg.dz_out != 0.0 {
                    let pre = &cache.samples[i].dense1_pre;
                    for (slot, &z) in dw2.iter_mut().zip(pre) {
                        *slot += sg.dz_out * layers::relu(z);
                    }
                }
            }
            grads.dense2.bias.data_mut()[0] = per_sample.iter().map(|sg| sg.dz_out).sum();
        }

        Ok(grads)
    }

    /// Parameter tensors in serialization order.
    pub fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.conv1.kernels,
            &self.conv1.bias,
            &self.conv2.kernels,
            &self.conv2.bias,
            &self.dense1.weights,
            &self.dense1.bias,
            &self.dense2.weights,
            &self.dense2.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.conv1.kernels,
            &mut self.conv1.bias,
            &mut self.conv2.kernels,
            &mut self.conv2.bias,
            &mut self.dense1.weights,
            &mut self.dense1.bias,
            &mut self.dense2.weights,
            &mut self.dense2.bias,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch_of(spec: &ModelSpec, images: usize, value: f32) -> Tensor {
        Tensor::from_vec(
            &[images, 1, spec.input_height, spec.input_width],
            vec![value; images * spec.input_height * spec.input_width],
        )
        .unwrap()
    }

    #[test]
    fn default_shape_chain() {
        let spec = ModelSpec::default();
        assert_eq!(spec.conv1_out(), (98, 98));
        assert_eq!(spec.conv2_out(), (96, 96));
        assert_eq!(spec.pool_out(), (48, 48));
        assert_eq!(spec.flat_len(), 36_864);
        assert_eq!(
            spec.parameter_count(),
            32 * 9 + 32 + 16 * 32 * 9 + 16 + 128 * 36_864 + 128 + 128 + 1
        );
    }

    #[test]
    fn zero_weights_give_even_odds() {
        let spec = ModelSpec::reduced();
        let mut model = Model::init(spec, 1).unwrap();
        for t in model.tensors_mut() {
            t.clear();
        }
        let batch = batch_of(&spec, 3, 0.7);
        let (probs, _) = model.forward(&batch).unwrap();
        for &p in probs.data() {
            assert!((p - 0.5).abs() < 1e-7);
        }
    }

    #[test]
    fn identical_inputs_give_identical_probabilities() {
        let spec = ModelSpec::reduced();
        let model = Model::init(spec, 2).unwrap();
        let batch = batch_of(&spec, 2, 0.31);
        let (probs, _) = model.forward(&batch).unwrap();
        assert_eq!(probs.data()[0], probs.data()[1]);
    }

    #[test]
    fn probabilities_stay_in_open_interval() {
        let spec = ModelSpec::reduced();
        for seed in 0..100 {
            let model = Model::init(spec, seed).unwrap();
            let batch = batch_of(&spec, 1, (seed % 11) as f32 / 10.0);
            let (probs, _) = model.forward(&batch).unwrap();
            let p = probs.data()[0];
            assert!(p > 0.0 && p < 1.0, "seed {seed} produced {p}");
        }
    }

    #[test]
    fn zero_upstream_gradient_zeroes_all_parameters() {
        let spec = ModelSpec::reduced();
        let model = Model::init(spec, 3).unwrap();
        let batch = batch_of(&spec, 2, 0.5);
        let (_, cache) = model.forward(&batch).unwrap();
        let d_prob = Tensor::zeros(&[2, 1]);
        let grads = model.backward(&cache, &d_prob).unwrap();
        for t in grads.tensors() {
            assert!(t.data().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn duplicated_batch_doubles_parameter_gradients() {
        let spec = ModelSpec::reduced();
        let model = Model::init(spec, 4).unwrap();
        let single = batch_of(&spec, 1, 0.4);
        let double = batch_of(&spec, 2, 0.4);
        let (_, cache1) = model.forward(&single).unwrap();
        let (_, cache2) = model.forward(&double).unwrap();
        let g = 0.37f32;
        let g1 = model.backward(&cache1, &Tensor::from_vec(&[1, 1], vec![g]).unwrap()).unwrap();
        let g2 = model.backward(&cache2, &Tensor::from_vec(&[2, 1], vec![g, g]).unwrap()).unwrap();
        for (a, b) in g1.tensors().iter().zip(g2.tensors().iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((2.0 * x - y).abs() <= 1e-5 * x.abs().max(1.0), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn batch_shape_is_validated() {
        let spec = ModelSpec::reduced();
        let model = Model::init(spec, 5).unwrap();
        let bad = Tensor::zeros(&[1, 1, 9, 8]);
        assert!(matches!(model.forward(&bad), Err(ModelError::BatchShape { .. })));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let spec = ModelSpec::default();
        assert_eq!(Model::init(spec, 9).unwrap(), Model::init(spec, 9).unwrap());
        assert_ne!(Model::init(spec, 9).unwrap(), Model::init(spec, 10).unwrap());
    }
}
