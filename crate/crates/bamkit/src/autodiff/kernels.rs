//! Forward and backward compute kernels, generic over the element type.
//!
//! Convolution uses the cross-correlation convention (no kernel flip)
//! throughout the crate. All kernels are plain nested loops over row-major
//! buffers; the inner loops run over contiguous output rows.

use crate::tensor::Element;

pub struct ConvDims {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvDims {
    pub fn new(
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> Option<ConvDims> {
        if stride == 0 || kh > h + 2 * padding || kw > w + 2 * padding {
            return None;
        }
        let h_out = (h + 2 * padding - kh) / stride + 1;
        let w_out = (w + 2 * padding - kw) / stride + 1;
        Some(ConvDims {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            padding,
            h_out,
            w_out,
        })
    }

    /// Output columns whose sampled input column lies inside the image,
    /// for a fixed kernel column offset.
    #[inline]
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        // ix = ox*stride + kx - padding must satisfy 0 <= ix < w
        let lo = if kx >= self.padding {
            0
        } else {
            (self.padding - kx).div_ceil(self.stride)
        };
        let hi_num = self.w + self.padding;
        if hi_num <= kx {
            return (1, 0); // empty
        }
        let hi = ((hi_num - 1 - kx) / self.stride).min(self.w_out.saturating_sub(1));
        (lo, hi)
    }

    #[inline]
    fn iy_of(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = oy * self.stride + ky;
        if iy < self.padding {
            return None;
        }
        let iy = iy - self.padding;
        if iy < self.h {
            Some(iy)
        } else {
            None
        }
    }
}

pub fn conv2d_forward<T: Element>(input: &[T], kernels: &[T], bias: &[T], d: &ConvDims) -> Vec<T> {
    let mut out = vec![T::ZERO; d.c_out * d.h_out * d.w_out];
    for co in 0..d.c_out {
        let out_ch = &mut out[co * d.h_out * d.w_out..(co + 1) * d.h_out * d.w_out];
        for v in out_ch.iter_mut() {
            *v = bias[co];
        }
        for ci in 0..d.c_in {
            let in_ch = &input[ci * d.h * d.w..(ci + 1) * d.h * d.w];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let weight = kernels[((co * d.c_in + ci) * d.kh + ky) * d.kw + kx];
                    let (lo, hi) = d.ox_range(kx);
                    if lo > hi {
                        continue;
                    }
                    for oy in 0..d.h_out {
                        let Some(iy) = d.iy_of(oy, ky) else { continue };
                        let in_row = &in_ch[iy * d.w..(iy + 1) * d.w];
                        let out_row = &mut out_ch[oy * d.w_out..(oy + 1) * d.w_out];
                        for ox in lo..=hi {
                            let ix = ox * d.stride + kx - d.padding;
                            out_row[ox] += weight * in_row[ix];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Element>(
    input: &[T],
    kernels: &[T],
    grad_out: &[T],
    d: &ConvDims,
    grad_input: &mut [T],
    grad_kernels: &mut [T],
    grad_bias: &mut [T],
) {
    for co in 0..d.c_out {
        let go_ch = &grad_out[co * d.h_out * d.w_out..(co + 1) * d.h_out * d.w_out];
        for &g in go_ch.iter() {
            grad_bias[co] += g;
        }
        for ci in 0..d.c_in {
            let in_ch = &input[ci * d.h * d.w..(ci + 1) * d.h * d.w];
            let gi_ch = &mut grad_input[ci * d.h * d.w..(ci + 1) * d.h * d.w];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let kidx = ((co * d.c_in + ci) * d.kh + ky) * d.kw + kx;
                    let weight = kernels[kidx];
                    let mut wgrad = T::ZERO;
                    let (lo, hi) = d.ox_range(kx);
                    if lo > hi {
                        continue;
                    }
                    for oy in 0..d.h_out {
                        let Some(iy) = d.iy_of(oy, ky) else { continue };
                        let in_row = &in_ch[iy * d.w..(iy + 1) * d.w];
                        let gi_row = &mut gi_ch[iy * d.w..(iy + 1) * d.w];
                        let go_row = &go_ch[oy * d.w_out..(oy + 1) * d.w_out];
                        for ox in lo..=hi {
                            let ix = ox * d.stride + kx - d.padding;
                            let g = go_row[ox];
                            wgrad += g * in_row[ix];
                            gi_row[ix] += weight * g;
                        }
                    }
                    grad_kernels[kidx] += wgrad;
                }
            }
        }
    }
}

pub fn relu_forward<T: Element>(x: &[T]) -> Vec<T> {
    // NaN must pass through, not clamp to zero, so numeric blowups stay
    // visible to downstream divergence checks
    x.iter()
        .map(|&v| if v <= T::ZERO { T::ZERO } else { v })
        .collect()
}

pub fn relu_backward<T: Element>(x: &[T], grad_out: &[T], grad_in: &mut [T]) {
    for i in 0..x.len() {
        if x[i] > T::ZERO {
            grad_in[i] += grad_out[i];
        }
    }
}

pub struct PoolDims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl PoolDims {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize) -> Option<PoolDims> {
        if k == 0 || stride == 0 || k > h || k > w {
            return None;
        }
        Some(PoolDims {
            c,
            h,
            w,
            k,
            stride,
            h_out: (h - k) / stride + 1,
            w_out: (w - k) / stride + 1,
        })
    }
}

/// Window maxima. Ties go to the first element in row-major scan order;
/// `argmax` records the chosen flat input index per output element.
pub fn maxpool_forward<T: Element>(x: &[T], d: &PoolDims) -> (Vec<T>, Vec<u32>) {
    let n_out = d.c * d.h_out * d.w_out;
    let mut out = Vec::with_capacity(n_out);
    let mut argmax = Vec::with_capacity(n_out);
    for c in 0..d.c {
        let ch = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for oy in 0..d.h_out {
            for ox in 0..d.w_out {
                let (y0, x0) = (oy * d.stride, ox * d.stride);
                let mut best = ch[y0 * d.w + x0];
                let mut best_idx = y0 * d.w + x0;
                for wy in y0..y0 + d.k {
                    for wx in x0..x0 + d.k {
                        let idx = wy * d.w + wx;
                        if ch[idx] > best {
                            best = ch[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push((c * d.h * d.w + best_idx) as u32);
            }
        }
    }
    (out, argmax)
}

pub fn maxpool_backward<T: Element>(argmax: &[u32], grad_out: &[T], grad_in: &mut [T]) {
    for (i, &src) in argmax.iter().enumerate() {
        grad_in[src as usize] += grad_out[i];
    }
}

/// out[m] = b[m] + sum_n W[m,n] x[n]
pub fn dense_forward<T: Element>(x: &[T], weights: &[T], bias: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(m);
    for row in 0..m {
        let w_row = &weights[row * n..(row + 1) * n];
        let mut acc = bias[row];
        for i in 0..n {
            acc += w_row[i] * x[i];
        }
        out.push(acc);
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Element>(
    x: &[T],
    weights: &[T],
    grad_out: &[T],
    m: usize,
    n: usize,
    grad_x: &mut [T],
    grad_w: &mut [T],
    grad_b: &mut [T],
) {
    for row in 0..m {
        let g = grad_out[row];
        grad_b[row] += g;
        let w_row = &weights[row * n..(row + 1) * n];
        let gw_row = &mut grad_w[row * n..(row + 1) * n];
        for i in 0..n {
            gw_row[i] += g * x[i];
            grad_x[i] += g * w_row[i];
        }
    }
}

/// Numerically stable softmax over a flat vector.
pub fn softmax_forward<T: Element>(x: &[T]) -> Vec<T> {
    let mut max = x[0];
    for &v in &x[1..] {
        if v > max {
            max = v;
        }
    }
    let mut out: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let mut sum = T::ZERO;
    for &v in &out {
        sum += v;
    }
    for v in out.iter_mut() {
        *v = *v / sum;
    }
    out
}

pub fn softmax_backward<T: Element>(probs: &[T], grad_out: &[T], grad_in: &mut [T]) {
    let mut dot = T::ZERO;
    for i in 0..probs.len() {
        dot += grad_out[i] * probs[i];
    }
    for i in 0..probs.len() {
        grad_in[i] += probs[i] * (grad_out[i] - dot);
    }
}

pub const PROB_FLOOR: f64 = 1e-12;

/// -log(probs[label]) with probabilities floored at 1e-12.
pub fn cross_entropy_forward<T: Element>(probs: &[T], label: usize) -> T {
    let floor = T::from_f64(PROB_FLOOR);
    // non-finite probabilities must surface in the loss, not be clamped
    // away, or divergence detection never sees them
    let p = if probs[label] > floor || !probs[label].is_finite() {
        probs[label]
    } else {
        floor
    };
    -p.ln()
}

pub fn cross_entropy_backward<T: Element>(probs: &[T], label: usize, grad_out: T, grad_in: &mut [T]) {
    let floor = T::from_f64(PROB_FLOOR);
    if probs[label] > floor {
        grad_in[label] += -(T::ONE / probs[label]) * grad_out;
    }
}
