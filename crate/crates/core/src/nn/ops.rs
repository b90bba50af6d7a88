//! Layer primitives: same-padded convolution, ReLU, 2x2 max pooling, and
//! the backward passes the fixed architecture needs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn conv_dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let &[c_in, h, w] = input.shape() else {
        return Err(Error::Shape {
            op: "conv2d input",
            expected: vec![0, 0, 0],
            got: input.shape().to_vec(),
        });
    };
    let &[c_out, wc, k, k2] = weights.shape() else {
        return Err(Error::Shape {
            op: "conv2d weights",
            expected: vec![0, c_in, 0, 0],
            got: weights.shape().to_vec(),
        });
    };
    if wc != c_in || k != k2 || k % 2 == 0 {
        return Err(Error::Shape {
            op: "conv2d weights",
            expected: vec![c_out, c_in, k, k],
            got: weights.shape().to_vec(),
        });
    }
    bias.expect_shape("conv2d bias", &[c_out])?;
    if h == 0 || w == 0 {
        return Err(Error::Shape {
            op: "conv2d input",
            expected: vec![c_in, 1, 1],
            got: input.shape().to_vec(),
        });
    }
    Ok((c_in, c_out, h, w, k))
}

/// Zero-padded ("same") 2D convolution, stride 1, odd square kernels.
///
/// `out[o, i, j] = bias[o] + sum_{c,u,v} weights[o, c, u, v] * in[c, i + u - p, j + v - p]`
/// with `p = (k - 1) / 2` and out-of-range input reads as zero.
///
/// The loop is written in scatter form over non-zero input pixels, which
/// makes it cheap on sparse histogram stacks. Output channels sit in the
/// innermost loop, so the work runs in channel-last scratch buffers.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c_in, c_out, h, w, k) = conv_dims(input, weights, bias)?;
    // [c, u, v, o]
    let wt = to_channel_last(weights.data(), c_out, c_in * k * k);
    let mut acc: Vec<f64> = bias.data().iter().copied().cycle().take(h * w * c_out).collect();
    for t in nonzero_taps(input, k) {
        for u in t.u.clone() {
            let i = t.y + t.p - u;
            for v in t.v.clone() {
                let j = t.x + t.p - v;
                let dst = &mut acc[(i * w + j) * c_out..(i * w + j + 1) * c_out];
                let src = &wt[((t.c * k + u) * k + v) * c_out..((t.c * k + u) * k + v + 1) * c_out];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s * t.val;
                }
            }
        }
    }
    Tensor::from_vec(vec![c_out, h, w], to_channel_last(&acc, h * w, c_out))
}

/// Transposes a row-major `rows x cols` matrix.
fn to_channel_last(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// A non-zero input pixel with the kernel taps that reach valid outputs.
struct Tap {
    c: usize,
    y: usize,
    x: usize,
    p: usize,
    val: f64,
    u: std::ops::RangeInclusive<usize>,
    v: std::ops::RangeInclusive<usize>,
}

fn nonzero_taps(input: &Tensor, k: usize) -> Vec<Tap> {
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let p = (k - 1) / 2;
    input
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, &val)| {
            let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
            let (u_lo, u_hi) = tap_range(y, p, h, k);
            let (v_lo, v_hi) = tap_range(x, p, w, k);
            Tap { c, y, x, p, val, u: u_lo..=u_hi, v: v_lo..=v_hi }
        })
        .collect()
}

/// Kernel taps `u` for which input row `y` lands on a valid output row
/// `i = y + p - u`, i.e. `0 <= i < n`.
#[inline]
fn tap_range(y: usize, p: usize, n: usize, k: usize) -> (usize, usize) {
    let lo = (y + p).saturating_sub(n - 1);
    let hi = (y + p).min(k - 1);
    (lo, hi)
}

/// Gradients of a [`conv2d`] with respect to its weights and bias, given the
/// gradient flowing into its output.
///
/// The input gradient is not computed: in this architecture the convolutions
/// read the data directly.
pub fn conv2d_backward(input: &Tensor, weights_shape: &[usize], grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let &[c_in, h, w] = input.shape() else {
        return Err(Error::Shape {
            op: "conv2d_backward input",
            expected: vec![0, 0, 0],
            got: input.shape().to_vec(),
        });
    };
    let &[c_out, wc, k, _] = weights_shape else {
        return Err(Error::Shape {
            op: "conv2d_backward weights",
            expected: vec![0, c_in, 0, 0],
            got: weights_shape.to_vec(),
        });
    };
    if wc != c_in {
        return Err(Error::Shape {
            op: "conv2d_backward weights",
            expected: vec![c_out, c_in, k, k],
            got: weights_shape.to_vec(),
        });
    }
    grad_out.expect_shape("conv2d_backward grad", &[c_out, h, w])?;

    let p = (k - 1) / 2;
    let plane = h * w;
    let g = grad_out.data();
    let mut grad_w = Tensor::zeros(weights_shape);
    let mut grad_b = Tensor::zeros(&[c_out]);

    for (o, gb) in grad_b.data_mut().iter_mut().enumerate() {
        *gb = g[o * plane..(o + 1) * plane].iter().sum();
    }

    // Channel-last gradient [h, w, o] and weight gradient [c, u, v, o].
    let g_t = to_channel_last(g, c_out, plane);
    let mut gw_t = vec![0.0; c_in * k * k * c_out];
    for t in nonzero_taps(input, k) {
        for u in t.u.clone() {
            let i = t.y + p - u;
            for v in t.v.clone() {
                let j = t.x + p - v;
                let src = &g_t[(i * w + j) * c_out..(i * w + j + 1) * c_out];
                let dst = &mut gw_t[((t.c * k + u) * k + v) * c_out..((t.c * k + u) * k + v + 1) * c_out];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s * t.val;
                }
            }
        }
    }
    grad_w.data_mut().copy_from_slice(&to_channel_last(&gw_t, c_in * k * k, c_out));
    Ok((grad_w, grad_b))
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Zeroes the gradient wherever the ReLU output was not positive.
pub fn relu_backward(relu_out: &Tensor, grad_out: &mut Tensor) {
    for (g, &a) in grad_out.data_mut().iter_mut().zip(relu_out.data()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Output of [`maxpool2d`]: the pooled tensor and, for each pooled cell, the
/// flat offset of the input element that won the window.
#[derive(Debug, Clone)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped.
/// Within a window the first maximum in row-major order wins.
pub fn maxpool2d(input: &Tensor) -> Result<Pooled> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::Shape {
            op: "maxpool2d",
            expected: vec![0, 2, 2],
            got: input.shape().to_vec(),
        });
    };
    if h < 2 || w < 2 {
        return Err(Error::Shape {
            op: "maxpool2d",
            expected: vec![c, 2, 2],
            got: input.shape().to_vec(),
        });
    }
    let (ph, pw) = (h / 2, w / 2);
    let x = input.data();
    let mut output = Tensor::zeros(&[c, ph, pw]);
    let mut argmax = vec![0; c * ph * pw];
    let out = output.data_mut();
    for ch in 0..c {
        for i in 0..ph {
            for j in 0..pw {
                let base = (ch * h + 2 * i) * w + 2 * j;
                let mut best = base;
                for off in [base + 1, base + w, base + w + 1] {
                    if x[off] > x[best] {
                        best = off;
                    }
                }
                let dst = (ch * ph + i) * pw + j;
                out[dst] = x[best];
                argmax[dst] = best;
            }
        }
    }
    Ok(Pooled { output, argmax })
}

/// Routes each pooled gradient back to the input position that produced the
/// maximum; every other input position receives zero.
pub fn maxpool2d_backward(grad_out: &[f64], argmax: &[usize], input_shape: &[usize]) -> Tensor {
    let mut grad_in = Tensor::zeros(input_shape);
    let gi = grad_in.data_mut();
    for (&g, &src) in grad_out.iter().zip(argmax) {
        gi[src] += g;
    }
    grad_in
}
