//! Dense feature maps and the handful of layers the network is built from,
//! each with an explicit backward pass.
//!
//! Convolutions are stride 1 with "same" zero padding and run as im2col
//! followed by a single-threaded GEMM, so results are reproducible run to run.

/// A single `C x H x W` feature map stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Feature {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * height * width, "feature buffer size");
        Self { channels, height, width, data }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    /// Channel-wise concatenation `[a; b]`.
    pub fn concat(a: &Feature, b: &Feature) -> Feature {
        assert_eq!((a.height, a.width), (b.height, b.width), "concat spatial size");
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Feature::from_vec(a.channels + b.channels, a.height, a.width, data)
    }

    /// Splits off the first `channels` channels.
    pub fn split(self, channels: usize) -> (Feature, Feature) {
        let p = self.plane();
        let mut data = self.data;
        let tail = data.split_off(channels * p);
        (
            Feature::from_vec(channels, self.height, self.width, data),
            Feature::from_vec(self.channels - channels, self.height, self.width, tail),
        )
    }
}

/// Lowers `input` into a `[C*k*k][H*W]` patch matrix.
pub fn im2col(input: &Feature, k: usize) -> Vec<f32> {
    let (h, w) = (input.height, input.width);
    let pad = (k / 2) as isize;
    let mut cols = vec![0.0f32; input.channels * k * k * h * w];
    for c in 0..input.channels {
        let src = input.channel(c);
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * h * w;
                let dx = kx as isize - pad;
                let dy = ky as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let dst = &mut cols[row + y * w + x0..row + y * w + x1];
                    let s0 = (sy as usize) * w + (x0 as isize + dx) as usize;
                    dst.copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates patch gradients back onto the input.
pub fn col2im(cols: &[f32], channels: usize, height: usize, width: usize, k: usize) -> Feature {
    let (h, w) = (height, width);
    let pad = (k / 2) as isize;
    let mut out = Feature::zeros(channels, h, w);
    for c in 0..channels {
        let dst = out.channel_mut(c);
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * h * w;
                let dx = kx as isize - pad;
                let dy = ky as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let src = &cols[row + y * w + x0..row + y * w + x1];
                    let s0 = (sy as usize) * w + (x0 as isize + dx) as usize;
                    for (d, s) in dst[s0..s0 + (x1 - x0)].iter_mut().zip(src) {
                        *d += *s;
                    }
                }
            }
        }
    }
    out
}

/// `c[m x n] = a[m x k] * b[k x n]` with arbitrary strides, overwriting `c`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    // SAFETY: the caller-supplied strides describe in-bounds matrices; every
    // call site below passes dense row- or column-major views of slices whose
    // lengths are checked by the debug assertions.
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Same-padded stride-1 convolution. `kernel` is `[C_out][C_in][k][k]`.
pub fn conv2d(input: &Feature, kernel: &[f32], bias: &[f32], c_out: usize, k: usize) -> Feature {
    let cols = im2col(input, k);
    conv2d_with_cols(&cols, input.height, input.width, kernel, bias, c_out, input.channels * k * k)
}

fn conv2d_with_cols(
    cols: &[f32],
    height: usize,
    width: usize,
    kernel: &[f32],
    bias: &[f32],
    c_out: usize,
    patch: usize,
) -> Feature {
    assert_eq!(kernel.len(), c_out * patch, "kernel size");
    assert_eq!(bias.len(), c_out, "bias size");
    let hw = height * width;
    let mut out = Feature::zeros(c_out, height, width);
    gemm(c_out, patch, hw, kernel, patch, 1, cols, hw, 1, &mut out.data);
    for (o, b) in bias.iter().enumerate() {
        out.channel_mut(o).iter_mut().for_each(|x| *x += *b);
    }
    out
}

/// Gradients of a convolution with respect to its input, kernel and bias.
pub struct ConvGrads {
    pub input: Feature,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

pub fn conv2d_backward(input: &Feature, kernel: &[f32], grad_out: &Feature, k: usize) -> ConvGrads {
    let cols = im2col(input, k);
    let patch = input.channels * k * k;
    let hw = input.plane();
    let c_out = grad_out.channels;
    let mut d_kernel = vec![0.0f32; c_out * patch];
    // dK = dOut * cols^T
    gemm(c_out, hw, patch, &grad_out.data, hw, 1, &cols, 1, hw, &mut d_kernel);
    // dCols = K^T * dOut
    let mut d_cols = vec![0.0f32; patch * hw];
    gemm(patch, c_out, hw, kernel, 1, patch, &grad_out.data, hw, 1, &mut d_cols);
    let d_input = col2im(&d_cols, input.channels, input.height, input.width, k);
    let d_bias = (0..c_out).map(|o| grad_out.channel(o).iter().sum()).collect();
    ConvGrads { input: d_input, kernel: d_kernel, bias: d_bias }
}

/// Nearest-neighbour source index for destination index `dst`.
#[inline]
fn nearest_src(dst: usize, src_len: usize, dst_len: usize) -> usize {
    (dst * src_len / dst_len).min(src_len - 1)
}

/// Nearest-neighbour resize to an exact target size.
pub fn resize_nearest(input: &Feature, height: usize, width: usize) -> Feature {
    let mut out = Feature::zeros(input.channels, height, width);
    let xs: Vec<usize> = (0..width).map(|x| nearest_src(x, input.width, width)).collect();
    for c in 0..input.channels {
        let src = input.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..height {
            let sy = nearest_src(y, input.height, height);
            let srow = &src[sy * input.width..(sy + 1) * input.width];
            for (d, &sx) in dst[y * width..(y + 1) * width].iter_mut().zip(&xs) {
                *d = srow[sx];
            }
        }
    }
    out
}

pub fn resize_nearest_backward(grad_out: &Feature, height: usize, width: usize) -> Feature {
    let mut out = Feature::zeros(grad_out.channels, height, width);
    let (oh, ow) = (grad_out.height, grad_out.width);
    let xs: Vec<usize> = (0..ow).map(|x| nearest_src(x, width, ow)).collect();
    for c in 0..grad_out.channels {
        let src = grad_out.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..oh {
            let sy = nearest_src(y, height, oh);
            for (g, &sx) in src[y * ow..(y + 1) * ow].iter().zip(&xs) {
                dst[sy * width + sx] += *g;
            }
        }
    }
    out
}

pub const BN_EPS: f32 = 1e-5;

/// Per-channel mean and biased variance over a batch of feature maps.
pub fn channel_moments(batch: &[Feature]) -> (Vec<f32>, Vec<f32>) {
    let channels = batch[0].channels;
    let mut mean = vec![0.0f32; channels];
    let mut var = vec![0.0f32; channels];
    for c in 0..channels {
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        let mut n = 0usize;
        for f in batch {
            for &x in f.channel(c) {
                sum += x as f64;
                sq += (x as f64) * (x as f64);
            }
            n += f.plane();
        }
        let m = sum / n as f64;
        mean[c] = m as f32;
        var[c] = (sq / n as f64 - m * m).max(0.0) as f32;
    }
    (mean, var)
}

/// Saved state of a training-mode batch normalization.
pub struct BatchNormCache {
    pub normalized: Vec<Feature>,
    pub inv_std: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

/// Training-mode batch normalization using the statistics of `batch`.
pub fn batch_norm_train(
    batch: &[Feature],
    gamma: &[f32],
    beta: &[f32],
) -> (Vec<Feature>, BatchNormCache) {
    let (mean, var) = channel_moments(batch);
    let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut normalized = Vec::with_capacity(batch.len());
    let mut outputs = Vec::with_capacity(batch.len());
    for f in batch {
        let mut n = f.clone();
        let mut o = f.clone();
        for c in 0..f.channels {
            let (m, s, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
            for (nx, ox) in n.channel_mut(c).iter_mut().zip(o.channel_mut(c).iter_mut()) {
                *nx = (*nx - m) * s;
                *ox = g * *nx + b;
            }
        }
        normalized.push(n);
        outputs.push(o);
    }
    (outputs, BatchNormCache { normalized, inv_std, mean, var })
}

/// Returns (input grads, gamma grads, beta grads).
pub fn batch_norm_backward(
    grad_out: &[Feature],
    cache: &BatchNormCache,
    gamma: &[f32],
) -> (Vec<Feature>, Vec<f32>, Vec<f32>) {
    let channels = grad_out[0].channels;
    let n: usize = grad_out.iter().map(|f| f.plane()).sum();
    let mut d_gamma = vec![0.0f32; channels];
    let mut d_beta = vec![0.0f32; channels];
    for c in 0..channels {
        let mut sg = 0.0f64;
        let mut sgx = 0.0f64;
        for (g, xh) in grad_out.iter().zip(&cache.normalized) {
            for (a, b) in g.channel(c).iter().zip(xh.channel(c)) {
                sg += *a as f64;
                sgx += (*a as f64) * (*b as f64);
            }
        }
        d_beta[c] = sg as f32;
        d_gamma[c] = sgx as f32;
    }
    let mut d_input = Vec::with_capacity(grad_out.len());
    for (g, xh) in grad_out.iter().zip(&cache.normalized) {
        let mut d = g.clone();
        for c in 0..channels {
            let scale = gamma[c] * cache.inv_std[c] / n as f32;
            let (sg, sgx) = (d_beta[c], d_gamma[c]);
            for (dx, x) in d.channel_mut(c).iter_mut().zip(xh.channel(c)) {
                *dx = scale * (n as f32 * *dx - sg - *x * sgx);
            }
        }
        d_input.push(d);
    }
    (d_input, d_gamma, d_beta)
}

/// Per-channel `scale * x + shift`, the folded inference form of batch norm.
pub fn channel_affine(f: &mut Feature, scale: &[f32], shift: &[f32]) {
    for c in 0..f.channels {
        let (a, b) = (scale[c], shift[c]);
        f.channel_mut(c).iter_mut().for_each(|x| *x = a * *x + b);
    }
}

const GELU_A: f32 = 0.797_884_6; // sqrt(2 / pi)
const GELU_B: f32 = 0.044_715;

/// GeLU, tanh formulation.
#[inline]
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::tanhf(GELU_A * (x + GELU_B * x * x * x)))
}

#[inline]
pub fn gelu_grad(x: f32) -> f32 {
    let t = libm::tanhf(GELU_A * (x + GELU_B * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_A * (1.0 + 3.0 * GELU_B * x * x)
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + libm::expf(-x))
}
