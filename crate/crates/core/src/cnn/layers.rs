//! Layer primitives: valid 2D convolution (cross-correlation convention),
//! 2x2 max pooling, dense products, ReLU and the logistic output.
//!
//! The hot paths operate on flat slices with explicit extents so the inner
//! loops run over contiguous rows and autovectorize; the tensor-typed
//! wrappers validate shapes and are the public single-sample entry points.

use super::tensor::{Tensor, TensorError};

/// Probabilities are clamped into this open interval before any logarithm.
pub const PROB_CLAMP: f32 = 1e-7;

/// Valid cross-correlation of a C×H×W input with K×C×kh×kw kernels plus bias.
///
/// `out[k,i,j] = bias[k] + sum_{c,u,v} input[c,i+u,j+v] * kernels[k,c,u,v]`
pub fn conv2d_valid(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    let [c, h, w] = dims3(input, "input C×H×W")?;
    let kshape = kernels.shape();
    if kernels.rank() != 4 || kshape[1] != c {
        return Err(TensorError::ShapeMismatch {
            got: kshape.to_vec(),
            want: format!("K×{c}×kh×kw kernels"),
        });
    }
    let (k, kh, kw) = (kshape[0], kshape[2], kshape[3]);
    if bias.shape() != [k] {
        return Err(TensorError::ShapeMismatch { got: bias.shape().to_vec(), want: format!("[{k}] bias") });
    }
    if h < kh || w < kw {
        return Err(TensorError::ShapeMismatch {
            got: input.shape().to_vec(),
            want: format!("spatial extents of at least {kh}x{kw}"),
        });
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = Tensor::zeros(&[k, oh, ow]);
    conv2d_forward_slices(
        input.data(),
        kernels.data(),
        bias.data(),
        out.data_mut(),
        ConvDims { c, h, w, k, kh, kw },
    );
    Ok(out)
}

/// Extents describing one convolution: input C×H×W against K×C×kh×kw.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        self.h - self.kh + 1
    }
    pub fn out_w(&self) -> usize {
        self.w - self.kw + 1
    }
}

pub fn conv2d_forward_slices(input: &[f32], kernels: &[f32], bias: &[f32], out: &mut [f32], d: ConvDims) {
    let (oh, ow) = (d.out_h(), d.out_w());
    for k in 0..d.k {
        let out_k = &mut out[k * oh * ow..(k + 1) * oh * ow];
        out_k.fill(bias[k]);
        for c in 0..d.c {
            let in_c = &input[c * d.h * d.w..(c + 1) * d.h * d.w];
            for u in 0..d.kh {
                for v in 0..d.kw {
                    let weight = kernels[((k * d.c + c) * d.kh + u) * d.kw + v];
                    for i in 0..oh {
                        let in_row = &in_c[(i + u) * d.w + v..(i + u) * d.w + v + ow];
                        let out_row = &mut out_k[i * ow..i * ow + ow];
                        for (o, x) in out_row.iter_mut().zip(in_row) {
                            *o += weight * x;
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the convolution input (the correlation adjoint).
pub fn conv2d_backward_input(d_out: &[f32], kernels: &[f32], d_input: &mut [f32], d: ConvDims) {
    let (oh, ow) = (d.out_h(), d.out_w());
    d_input.fill(0.0);
    for c in 0..d.c {
        let din_c = &mut d_input[c * d.h * d.w..(c + 1) * d.h * d.w];
        for k in 0..d.k {
            let dout_k = &d_out[k * oh * ow..(k + 1) * oh * ow];
            for u in 0..d.kh {
                for v in 0..d.kw {
                    let weight = kernels[((k * d.c + c) * d.kh + u) * d.kw + v];
                    for i in 0..oh {
                        let dout_row = &dout_k[i * ow..i * ow + ow];
                        let din_row = &mut din_c[(i + u) * d.w + v..(i + u) * d.w + v + ow];
                        for (dx, g) in din_row.iter_mut().zip(dout_row) {
                            *dx += weight * g;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates kernel gradients for filter `k` from one sample:
/// `d_kernels[k,c,u,v] += sum_{i,j} d_out[k,i,j] * input[c,i+u,j+v]`.
///
/// `input_map` lets the caller feed an activation computed on the fly
/// (e.g. ReLU of a cached pre-activation) without materializing it.
pub fn conv2d_accumulate_kernel_grad<F: Fn(f32) -> f32 + Copy>(
    d_out: &[f32],
    input: &[f32],
    d_kernels_k: &mut [f32],
    k: usize,
    d: ConvDims,
    input_map: F,
) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let dout_k = &d_out[k * oh * ow..(k + 1) * oh * ow];
    for c in 0..d.c {
        let in_c = &input[c * d.h * d.w..(c + 1) * d.h * d.w];
        for u in 0..d.kh {
            for v in 0..d.kw {
                let mut acc = 0.0f32;
                for i in 0..oh {
                    let dout_row = &dout_k[i * ow..i * ow + ow];
                    let in_row = &in_c[(i + u) * d.w + v..(i + u) * d.w + v + ow];
                    acc += dot_with(dout_row, in_row, input_map);
                }
                d_kernels_k[(c * d.kh + u) * d.kw + v] += acc;
            }
        }
    }
}

/// 2x2 max pooling with stride 2 over a K×H×W tensor (H, W even).
/// Returns the pooled tensor and, per output element, the flat index of the
/// winning input element for gradient routing.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, Vec<u32>), TensorError> {
    let [k, h, w] = dims3(input, "input K×H×W")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::ShapeMismatch {
            got: input.shape().to_vec(),
            want: "even spatial extents for 2x2 pooling".into(),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[k, oh, ow]);
    let mut argmax = vec![0u32; k * oh * ow];
    maxpool2_slices(input.data(), out.data_mut(), &mut argmax, k, h, w);
    Ok((out, argmax))
}

pub fn maxpool2_slices(input: &[f32], out: &mut [f32], argmax: &mut [u32], k: usize, h: usize, w: usize) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..k {
        let in_c = &input[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let base = (2 * i) * w + 2 * j;
                let candidates = [base, base + 1, base + w, base + w + 1];
                let mut best = candidates[0];
                let mut best_val = in_c[best];
                for &cand in &candidates[1..] {
                    if in_c[cand] > best_val {
                        best_val = in_c[cand];
                        best = cand;
                    }
                }
                let o = (ch * oh + i) * ow + j;
                out[o] = best_val;
                argmax[o] = (ch * h * w + best) as u32;
            }
        }
    }
}

/// Routes pooled gradients back to the recorded argmax positions.
pub fn maxpool2_backward(d_out: &[f32], argmax: &[u32], d_input: &mut [f32]) {
    d_input.fill(0.0);
    for (g, &idx) in d_out.iter().zip(argmax) {
        d_input[idx as usize] += g;
    }
}

/// Dense layer forward: `out[o] = bias[o] + dot(weights[o], input)`.
pub fn dense_forward(input: &[f32], weights: &Tensor, bias: &Tensor) -> Result<Vec<f32>, TensorError> {
    let shape = weights.shape();
    if weights.rank() != 2 || shape[1] != input.len() {
        return Err(TensorError::ShapeMismatch {
            got: shape.to_vec(),
            want: format!("O×{} weights", input.len()),
        });
    }
    let o = shape[0];
    if bias.shape() != [o] {
        return Err(TensorError::ShapeMismatch { got: bias.shape().to_vec(), want: format!("[{o}] bias") });
    }
    let mut out = Vec::with_capacity(o);
    for row in 0..o {
        out.push(bias.data()[row] + dot(&weights.data()[row * input.len()..(row + 1) * input.len()], input));
    }
    Ok(out)
}

/// Gradient w.r.t. a dense layer's input: `d_input = W^T d_out`.
pub fn dense_backward_input(d_out: &[f32], weights: &[f32], d_input: &mut [f32]) {
    d_input.fill(0.0);
    let i = d_input.len();
    for (o, &g) in d_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &weights[o * i..(o + 1) * i];
        for (dx, w) in d_input.iter_mut().zip(row) {
            *dx += g * w;
        }
    }
}

/// Dot product with eight independent accumulator lanes so the reduction is
/// not one long dependency chain; the summation order is fixed, so results
/// are deterministic (though not identical to a naive left fold).
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    dot_with(a, b, |x| x)
}

/// As [`dot`], mapping each `b` element first (used to fold a ReLU into
/// gradient accumulation without materializing the activation).
#[inline]
pub fn dot_with<F: Fn(f32) -> f32>(a: &[f32], b: &[f32], map: F) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    const LANES: usize = 8;
    let mut acc = [0.0f32; LANES];
    let chunks = a.len() / LANES;
    for i in 0..chunks {
        let av = &a[i * LANES..(i + 1) * LANES];
        let bv = &b[i * LANES..(i + 1) * LANES];
        for l in 0..LANES {
            acc[l] += av[l] * map(bv[l]);
        }
    }
    let mut sum = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for i in chunks * LANES..a.len() {
        sum += a[i] * map(b[i]);
    }
    sum
}

/// `acc += scale * x`, elementwise.
#[inline]
pub fn axpy(acc: &mut [f32], scale: f32, x: &[f32]) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, v) in acc.iter_mut().zip(x) {
        *a += scale * v;
    }
}

#[inline]
pub fn relu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// ReLU passes gradient exactly where the pre-activation was positive.
#[inline]
pub fn relu_gate(pre: f32, grad: f32) -> f32 {
    if pre > 0.0 {
        grad
    } else {
        0.0
    }
}

/// Logistic output clamped into `(0, 1)` so downstream logs stay finite.
#[inline]
pub fn logistic(z: f32) -> f32 {
    (1.0 / (1.0 + (-z).exp())).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn dims3(t: &Tensor, want: &str) -> Result<[usize; 3], TensorError> {
    if t.rank() != 3 {
        return Err(TensorError::ShapeMismatch { got: t.shape().to_vec(), want: want.into() });
    }
    Ok([t.shape()[0], t.shape()[1], t.shape()[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_shapes_follow_valid_arithmetic() {
        let input = Tensor::zeros(&[1, 100, 100]);
        let kernels = Tensor::zeros(&[32, 1, 3, 3]);
        let bias = Tensor::zeros(&[32]);
        let out = conv2d_valid(&input, &kernels, &bias).unwrap();
        assert_eq!(out.shape(), &[32, 98, 98]);
    }

    #[test]
    fn constant_input_all_ones_kernel() {
        let c = 0.37f32;
        let input = Tensor::from_vec(&[1, 5, 5], vec![c; 25]).unwrap();
        let kernels = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_valid(&input, &kernels, &bias).unwrap();
        for &v in out.data() {
            assert!((v - 9.0 * c).abs() < 1e-6);
        }
    }

    #[test]
    fn conv_matches_quadruple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let input = Tensor::from_vec(&[1, 5, 5], (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let kernels =
            Tensor::from_vec(&[2, 1, 3, 3], (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let bias = Tensor::from_vec(&[2], vec![0.1, -0.2]).unwrap();
        let out = conv2d_valid(&input, &kernels, &bias).unwrap();
        for k in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut expect = bias.at(&[k]);
                    for u in 0..3 {
                        for v in 0..3 {
                            expect += input.at(&[0, i + u, j + v]) * kernels.at(&[k, 0, u, v]);
                        }
                    }
                    assert!((out.at(&[k, i, j]) - expect).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn conv_rejects_shape_mismatch() {
        let input = Tensor::zeros(&[2, 5, 5]);
        let kernels = Tensor::zeros(&[4, 3, 3, 3]); // wrong channel count
        let bias = Tensor::zeros(&[4]);
        assert!(conv2d_valid(&input, &kernels, &bias).is_err());
        let small = Tensor::zeros(&[1, 2, 2]);
        let k1 = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(conv2d_valid(&small, &k1, &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn maxpool_single_block() {
        let input = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, argmax) = maxpool2(&input).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(argmax, vec![3]);
    }

    #[test]
    fn maxpool_constant_input() {
        let input = Tensor::from_vec(&[2, 4, 4], vec![0.5; 32]).unwrap();
        let (out, _) = maxpool2(&input).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
        assert_eq!(out.shape(), &[2, 2, 2]);
    }

    #[test]
    fn maxpool_rejects_odd_extents() {
        let input = Tensor::zeros(&[1, 3, 4]);
        assert!(maxpool2(&input).is_err());
    }

    #[test]
    fn maxpool_is_translation_invariant_within_block() {
        // The same salient value anywhere inside a 2x2 block pools identically.
        for pos in 0..4 {
            let mut v = vec![0.0f32; 4];
            v[pos] = 9.0;
            let input = Tensor::from_vec(&[1, 2, 2], v).unwrap();
            let (out, _) = maxpool2(&input).unwrap();
            assert_eq!(out.data(), &[9.0]);
        }
    }

    #[test]
    fn dense_forward_is_affine() {
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.25, -0.25]).unwrap();
        let out = dense_forward(&[2.0, 4.0, 6.0], &w, &b).unwrap();
        assert_eq!(out, vec![2.0 - 6.0 + 0.25, 6.0 - 0.25]);
    }

    #[test]
    fn logistic_is_clamped_open_interval() {
        assert!(logistic(100.0) < 1.0);
        assert!(logistic(-100.0) > 0.0);
        assert!((logistic(0.0) - 0.5).abs() < 1e-7);
    }
}
