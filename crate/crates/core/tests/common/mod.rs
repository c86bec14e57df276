//! Shared test fixtures: naive reference implementations (independent of the
//! library's layer code) and small helpers.

#![allow(dead_code)] // each integration-test binary uses a subset

use s2c_core::cnn::model::Model;
use s2c_core::cnn::tensor::Tensor;

/// Naive reference kernels in f32: straightforward nested loops, accumulating
/// left to right. Independent of the library's blocked/unrolled paths.
pub mod naive32 {
    /// Valid cross-correlation, `input` C×H×W, `kernels` K×C×kh×kw.
    pub fn conv2d(
        input: &[f32],
        (c, h, w): (usize, usize, usize),
        kernels: &[f32],
        (k, kh, kw): (usize, usize, usize),
        bias: &[f32],
    ) -> Vec<f32> {
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let mut out = vec![0.0f32; k * oh * ow];
        for f in 0..k {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias[f];
                    for ch in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                acc += input[ch * h * w + (i + u) * w + (j + v)]
                                    * kernels[((f * c + ch) * kh + u) * kw + v];
                            }
                        }
                    }
                    out[(f * oh + i) * ow + j] = acc;
                }
            }
        }
        out
    }

    pub fn maxpool2(input: &[f32], (k, h, w): (usize, usize, usize)) -> Vec<f32> {
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0f32; k * oh * ow];
        for ch in 0..k {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    for du in 0..2 {
                        for dv in 0..2 {
                            best = best.max(input[ch * h * w + (2 * i + du) * w + (2 * j + dv)]);
                        }
                    }
                    out[(ch * oh + i) * ow + j] = best;
                }
            }
        }
        out
    }

    pub fn dense(x: &[f32], weights: &[f32], (o, i): (usize, usize), bias: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0f32; o];
        for row in 0..o {
            let mut acc = bias[row];
            for col in 0..i {
                acc += weights[row * i + col] * x[col];
            }
            out[row] = acc;
        }
        out
    }
}

/// f64 shadow of the whole model, used as the finite-difference oracle: the
/// loss surface is evaluated in double precision so central differences at
/// h = 1e-3 resolve gradients well below the 1e-3 relative tolerance.
pub mod shadow64 {
    /// Model parameters widened to f64, in serialization order.
    pub struct Params {
        pub tensors: Vec<Vec<f64>>,
        pub shapes: Vec<Vec<usize>>,
    }

    impl Params {
        pub fn of(model: &super::Model) -> Self {
            let tensors = model
                .tensors()
                .iter()
                .map(|t| t.data().iter().map(|&v| v as f64).collect())
                .collect();
            let shapes = model.tensors().iter().map(|t| t.shape().to_vec()).collect();
            Self { tensors, shapes }
        }

        pub fn parameter_count(&self) -> usize {
            self.tensors.iter().map(|t| t.len()).sum()
        }
    }

    fn conv2d(
        input: &[f64],
        (c, h, w): (usize, usize, usize),
        kernels: &[f64],
        k: usize,
        bias: &[f64],
    ) -> (Vec<f64>, usize, usize) {
        let (oh, ow) = (h - 2, w - 2);
        let mut out = vec![0.0f64; k * oh * ow];
        for f in 0..k {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias[f];
                    for ch in 0..c {
                        for u in 0..3 {
                            for v in 0..3 {
                                acc += input[ch * h * w + (i + u) * w + (j + v)]
                                    * kernels[((f * c + ch) * 3 + u) * 3 + v];
                            }
                        }
                    }
                    out[(f * oh + i) * ow + j] = acc;
                }
            }
        }
        (out, oh, ow)
    }

    /// Smallest distance to a nondifferentiable point along the forward
    /// pass: ReLU pre-activations near zero or near-tied 2x2 pool blocks.
    /// Central differences are only trustworthy when this margin clears the
    /// perturbation's reach.
    pub fn smoothness_margin(
        params: &Params,
        spec: &s2c_core::cnn::model::ModelSpec,
        batch: &[Vec<f64>],
    ) -> f64 {
        let [c1k, c1b, c2k, c2b, d1w, d1b, ..]: &[Vec<f64>; 8] =
            params.tensors.as_slice().try_into().expect("eight tensors");
        let (h, w) = (spec.input_height, spec.input_width);
        let mut margin = f64::INFINITY;
        for img in batch {
            let (pre1, h1, w1) = conv2d(img, (1, h, w), c1k, spec.conv1_filters, c1b);
            margin = pre1.iter().fold(margin, |m, z| m.min(z.abs()));
            let act1: Vec<f64> = pre1.iter().map(|&z| z.max(0.0)).collect();
            let (pre2, h2, w2) =
                conv2d(&act1, (spec.conv1_filters, h1, w1), c2k, spec.conv2_filters, c2b);
            margin = pre2.iter().fold(margin, |m, z| m.min(z.abs()));
            let act2: Vec<f64> = pre2.iter().map(|&z| z.max(0.0)).collect();
            for ch in 0..spec.conv2_filters {
                for i in 0..h2 / 2 {
                    for j in 0..w2 / 2 {
                        let mut block = [0.0f64; 4];
                        for (b, (du, dv)) in
                            [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate()
                        {
                            block[b] = act2[ch * h2 * w2 + (2 * i + du) * w2 + (2 * j + dv)];
                        }
                        block.sort_by(|a, b| b.partial_cmp(a).unwrap());
                        margin = margin.min(block[0] - block[1]);
                    }
                }
            }
            let pooled = super::naive_pool64(&act2, (spec.conv2_filters, h2, w2));
            for o in 0..spec.dense_units {
                let mut acc = d1b[o];
                for (i, &x) in pooled.iter().enumerate() {
                    acc += d1w[o * pooled.len() + i] * x;
                }
                margin = margin.min(acc.abs());
            }
        }
        margin
    }

    /// Mean binary cross-entropy of the full layer chain over a batch.
    pub fn batch_loss(
        params: &Params,
        spec: &s2c_core::cnn::model::ModelSpec,
        batch: &[Vec<f64>],
        labels: &[f64],
    ) -> f64 {
        let [c1k, c1b, c2k, c2b, d1w, d1b, d2w, d2b]: &[Vec<f64>; 8] =
            params.tensors.as_slice().try_into().expect("eight tensors");
        let (h, w) = (spec.input_height, spec.input_width);
        let mut loss = 0.0f64;
        for (img, &label) in batch.iter().zip(labels) {
            let (pre1, h1, w1) = conv2d(img, (1, h, w), c1k, spec.conv1_filters, c1b);
            let act1: Vec<f64> = pre1.iter().map(|&z| z.max(0.0)).collect();
            let (pre2, h2, w2) =
                conv2d(&act1, (spec.conv1_filters, h1, w1), c2k, spec.conv2_filters, c2b);
            let act2: Vec<f64> = pre2.iter().map(|&z| z.max(0.0)).collect();
            let pooled = super::naive_pool64(&act2, (spec.conv2_filters, h2, w2));
            let mut hidden = vec![0.0f64; spec.dense_units];
            for o in 0..spec.dense_units {
                let mut acc = d1b[o];
                for (i, &x) in pooled.iter().enumerate() {
                    acc += d1w[o * pooled.len() + i] * x;
                }
                hidden[o] = acc.max(0.0);
            }
            let mut logit = d2b[0];
            for (o, &x) in hidden.iter().enumerate() {
                logit += d2w[o] * x;
            }
            let p = (1.0 / (1.0 + (-logit).exp())).clamp(1e-7, 1.0 - 1e-7);
            loss -= label * p.ln() + (1.0 - label) * (1.0 - p).ln();
        }
        loss / batch.len() as f64
    }
}

fn naive_pool64(input: &[f64], (k, h, w): (usize, usize, usize)) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f64; k * oh * ow];
    for ch in 0..k {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for du in 0..2 {
                    for dv in 0..2 {
                        best = best.max(input[ch * h * w + (2 * i + du) * w + (2 * j + dv)]);
                    }
                }
                out[(ch * oh + i) * ow + j] = best;
            }
        }
    }
    out
}

/// Uniformly random tensor in [-0.5, 0.5].
pub fn random_tensor<R: rand::Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
    Tensor::from_vec(shape, data).unwrap()
}
