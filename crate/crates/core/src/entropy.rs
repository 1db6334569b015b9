//! Rate models.
//!
//! Quantized weights are modelled per tensor by a Laplace distribution
//! integrated over unit bins. Latent codes use a channel-wise autoregressive
//! model: channel 1 of a level uses fitted Laplace statistics, every later
//! channel gets per-element `(mu, sigma)` predicted from the previous channel
//! by a small three-layer convolutional network.
//!
//! Everything here runs in portable scalar `f64` (exponentials from `libm`)
//! because the decoder has to rebuild the exact same probabilities.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Smallest probability mass a symbol may receive.
pub const PROB_FLOOR: f64 = 1.0 / (1u64 << 24) as f64;
/// Lower bound on predicted standard deviations.
pub const SIGMA_MIN: f64 = 1e-3;
/// Lower bound on fitted Laplace scales.
pub const B_MIN: f32 = 1e-6;

/// Laplace location `mu` and scale `b`; the standard deviation is `b * sqrt(2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceParams {
    pub mu: f32,
    pub b: f32,
}

impl LaplaceParams {
    pub fn new(mu: f32, b: f32) -> Result<Self> {
        if !(b > 0.0) || !mu.is_finite() || !b.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid Laplace parameters mu={mu}, b={b}")));
        }
        Ok(Self { mu, b })
    }

    pub fn sigma(&self) -> f32 {
        self.b * std::f32::consts::SQRT_2
    }

    pub fn from_sigma(mu: f32, sigma: f32) -> Result<Self> {
        Self::new(mu, sigma / std::f32::consts::SQRT_2)
    }
}

/// Laplace CDF at `t` relative to the location.
#[inline]
pub fn laplace_cdf(t: f64, b: f64) -> f64 {
    if t < 0.0 {
        0.5 * libm::exp(t / b)
    } else {
        1.0 - 0.5 * libm::exp(-t / b)
    }
}

#[inline]
fn laplace_pdf(t: f64, b: f64) -> f64 {
    0.5 / b * libm::exp(-t.abs() / b)
}

/// Probability mass of the unit bin centred on `x`, evaluated without
/// catastrophic cancellation in either tail.
#[inline]
pub fn bin_mass(x: f64, mu: f64, b: f64) -> f64 {
    let lo = x - 0.5 - mu;
    let hi = x + 0.5 - mu;
    if lo >= 0.0 {
        0.5 * (libm::exp(-lo / b) - libm::exp(-hi / b))
    } else if hi <= 0.0 {
        0.5 * (libm::exp(hi / b) - libm::exp(lo / b))
    } else {
        1.0 - 0.5 * libm::exp(-hi / b) - 0.5 * libm::exp(lo / b)
    }
}

/// Bits of one symbol and their partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolCost {
    pub bits: f64,
    pub d_x: f64,
    pub d_mu: f64,
    pub d_b: f64,
}

/// `-log2` of the bin mass with the probability floor applied.
#[inline]
pub fn symbol_bits(x: f64, mu: f64, b: f64) -> f64 {
    -bin_mass(x, mu, b).max(PROB_FLOOR).log2()
}

pub fn symbol_cost(x: f64, mu: f64, b: f64) -> SymbolCost {
    let p = bin_mass(x, mu, b);
    if p <= PROB_FLOOR {
        return SymbolCost { bits: -PROB_FLOOR.log2(), d_x: 0.0, d_mu: 0.0, d_b: 0.0 };
    }
    let lo = x - 0.5 - mu;
    let hi = x + 0.5 - mu;
    let (f_lo, f_hi) = (laplace_pdf(lo, b), laplace_pdf(hi, b));
    let dp_dx = f_hi - f_lo;
    let dp_db = -(hi * f_hi - lo * f_lo) / b;
    let k = -1.0 / (p * std::f64::consts::LN_2);
    SymbolCost { bits: -p.log2(), d_x: k * dp_dx, d_mu: -k * dp_dx, d_b: k * dp_db }
}

/// Total bits plus the optional per-element breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    pub bits: f64,
    pub per_element: Option<Vec<f64>>,
}

impl RateEstimate {
    fn from_elements(per_element: Vec<f64>) -> Self {
        Self { bits: per_element.iter().sum(), per_element: Some(per_element) }
    }
}

/// Rate of lattice values under one Laplace model.
pub fn laplace_rate<T: Copy + Into<f64>>(w_hat: &[T], params: LaplaceParams) -> RateEstimate {
    let (mu, b) = (params.mu as f64, params.b as f64);
    RateEstimate::from_elements(w_hat.iter().map(|&w| symbol_bits(w.into(), mu, b)).collect())
}

/// Gradients of [`laplace_rate`] with respect to each value, `mu` and `b`.
pub struct LaplaceRateGrad {
    pub bits: f64,
    pub d_values: Vec<f64>,
    pub d_mu: f64,
    pub d_b: f64,
}

pub fn laplace_rate_grad<T: Copy + Into<f64>>(w_hat: &[T], mu: f64, b: f64) -> LaplaceRateGrad {
    let mut out = LaplaceRateGrad { bits: 0.0, d_values: Vec::with_capacity(w_hat.len()), d_mu: 0.0, d_b: 0.0 };
    for &w in w_hat {
        let c = symbol_cost(w.into(), mu, b);
        out.bits += c.bits;
        out.d_values.push(c.d_x);
        out.d_mu += c.d_mu;
        out.d_b += c.d_b;
    }
    out
}

/// Maximum-likelihood Laplace fit: median location, mean absolute deviation scale.
pub fn fit_laplace<T: Copy + Into<f64>>(x: &[T]) -> Result<LaplaceParams> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("Laplace fit needs at least one value".into()));
    }
    let mut v: Vec<f64> = x.iter().map(|&a| a.into()).collect();
    if v.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in Laplace fit".into()));
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    let mu = median as f32 + 0.0;
    let mad = v.iter().map(|a| (a - mu as f64).abs()).sum::<f64>() / n as f64;
    Ok(LaplaceParams { mu, b: (mad as f32).max(B_MIN) })
}

/// One 3x3, padding 1, stride 1 convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CtxLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl CtxLayer {
    fn new(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((c_in * 9) as f32).sqrt();
        Self {
            c_in,
            c_out,
            weight: (0..c_out * c_in * 9).map(|_| rng.gen_range(-bound..bound)).collect(),
            bias: (0..c_out).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    fn forward(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let plane = h * w;
        let mut out = vec![0.0f64; self.c_out * plane];
        for o in 0..self.c_out {
            let dst = &mut out[o * plane..(o + 1) * plane];
            dst.iter_mut().for_each(|x| *x = self.bias[o] as f64);
            for i in 0..self.c_in {
                let src = &input[i * plane..(i + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wgt = self.weight[((o * self.c_in + i) * 3 + ky) * 3 + kx] as f64;
                        for_each_tap(h, w, ky, kx, |d, s| dst[d] += wgt * src[s]);
                    }
                }
            }
        }
        out
    }

    /// Returns the input gradient and accumulates parameter gradients.
    fn backward(&self, input: &[f64], grad_out: &[f64], h: usize, w: usize, d_weight: &mut [f64], d_bias: &mut [f64]) -> Vec<f64> {
        let plane = h * w;
        let mut d_input = vec![0.0f64; self.c_in * plane];
        for o in 0..self.c_out {
            let g = &grad_out[o * plane..(o + 1) * plane];
            d_bias[o] += g.iter().sum::<f64>();
            for i in 0..self.c_in {
                let src = &input[i * plane..(i + 1) * plane];
                let di = &mut d_input[i * plane..(i + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let idx = ((o * self.c_in + i) * 3 + ky) * 3 + kx;
                        let wgt = self.weight[idx] as f64;
                        let mut acc = 0.0;
                        for_each_tap(h, w, ky, kx, |d, s| {
                            acc += g[d] * src[s];
                            di[s] += wgt * g[d];
                        });
                        d_weight[idx] += acc;
                    }
                }
            }
        }
        d_input
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Visits every (destination, source) pixel pair of one kernel tap.
#[inline]
fn for_each_tap(h: usize, w: usize, ky: usize, kx: usize, mut f: impl FnMut(usize, usize)) {
    let y_range = match ky {
        0 => 1..h,
        1 => 0..h,
        _ => 0..h.saturating_sub(1),
    };
    let x_range = match kx {
        0 => 1..w,
        1 => 0..w,
        _ => 0..w.saturating_sub(1),
    };
    for y in y_range {
        let sy = y + ky - 1;
        for x in x_range.clone() {
            f(y * w + x, sy * w + x + kx - 1);
        }
    }
}

/// Channel-transition predictor: `1 -> width -> width -> 2` with ReLU between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextModel {
    pub layers: [CtxLayer; 3],
}

/// Intermediate activations of one context prediction, kept for the backward pass.
struct CtxTrace {
    input: Vec<f64>,
    act1: Vec<f64>,
    act2: Vec<f64>,
    out: Vec<f64>,
}

impl ContextModel {
    pub fn new(width: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut last = CtxLayer::new(width, 2, rng);
        last.bias = vec![0.0, 1.0];
        Self { layers: [CtxLayer::new(1, width, rng), CtxLayer::new(width, width, rng), last] }
    }

    /// All-zero weights with output bias `(mu, sigma)`.
    pub fn constant(width: usize, mu: f32, sigma: f32) -> Self {
        let zero = |c_in: usize, c_out: usize| CtxLayer {
            c_in,
            c_out,
            weight: vec![0.0; c_in * c_out * 9],
            bias: vec![0.0; c_out],
        };
        let mut last = zero(width, 2);
        last.bias = vec![mu, sigma];
        Self { layers: [zero(1, width), zero(width, width), last] }
    }

    pub fn from_layers(layers: [CtxLayer; 3]) -> Result<Self> {
        let ok = layers[0].c_in == 1
            && layers[1].c_in == layers[0].c_out
            && layers[2].c_in == layers[1].c_out
            && layers[2].c_out == 2
            && layers.iter().all(|l| l.weight.len() == l.c_in * l.c_out * 9 && l.bias.len() == l.c_out);
        if ok {
            Ok(Self { layers })
        } else {
            Err(Error::Shape("context model layers do not chain 1 -> w -> w -> 2".into()))
        }
    }

    pub fn width(&self) -> usize {
        self.layers[0].c_out
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(CtxLayer::param_count).sum()
    }

    fn trace(&self, prev: &[f64], h: usize, w: usize) -> CtxTrace {
        let relu = |mut v: Vec<f64>| {
            v.iter_mut().for_each(|x| *x = x.max(0.0));
            v
        };
        let act1 = relu(self.layers[0].forward(prev, h, w));
        let act2 = relu(self.layers[1].forward(&act1, h, w));
        let out = self.layers[2].forward(&act2, h, w);
        CtxTrace { input: prev.to_vec(), act1, act2, out }
    }
}

/// Predicts per-element `(mu, sigma)` maps for a channel from the previous one.
pub fn context_predict(prev_channel: &[f64], h: usize, w: usize, ctx: &ContextModel) -> Result<(Vec<f64>, Vec<f64>)> {
    if prev_channel.len() != h * w || h == 0 || w == 0 {
        return Err(Error::Shape(format!("context input has {} values for {h}x{w}", prev_channel.len())));
    }
    let t = ctx.trace(prev_channel, h, w);
    let plane = h * w;
    let mu = t.out[..plane].to_vec();
    let sigma = t.out[plane..].iter().map(|s| s.max(SIGMA_MIN)).collect();
    Ok((mu, sigma))
}

/// Gradient buffers shaped like a [`ContextModel`].
#[derive(Debug, Clone)]
pub struct ContextGrads {
    pub weight: [Vec<f64>; 3],
    pub bias: [Vec<f64>; 3],
}

impl ContextGrads {
    pub fn zeros(ctx: &ContextModel) -> Self {
        Self {
            weight: std::array::from_fn(|i| vec![0.0; ctx.layers[i].weight.len()]),
            bias: std::array::from_fn(|i| vec![0.0; ctx.layers[i].bias.len()]),
        }
    }
}

/// Borrowed latent tensor `C x h x w`.
#[derive(Debug, Clone, Copy)]
pub struct LatentView<'a> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: &'a [f32],
}

impl<'a> LatentView<'a> {
    pub fn new(channels: usize, height: usize, width: usize, data: &'a [f32]) -> Result<Self> {
        if data.len() != channels * height * width || channels == 0 {
            return Err(Error::Shape(format!(
                "latent buffer holds {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn channel(&self, c: usize) -> &'a [f32] {
        let p = self.height * self.width;
        &self.data[c * p..(c + 1) * p]
    }
}

/// Probability model of one channel given the already decoded channels.
pub enum ChannelModel {
    Shared(LaplaceParams),
    PerElement { mu: Vec<f64>, b: Vec<f64> },
}

impl ChannelModel {
    /// Model for channel `c`; `prev` is channel `c - 1` (ignored for `c == 0`).
    pub fn for_channel(
        c: usize,
        prev: Option<&[f64]>,
        h: usize,
        w: usize,
        ctx: &ContextModel,
        first: LaplaceParams,
    ) -> Result<Self> {
        match (c, prev) {
            (0, _) => Ok(ChannelModel::Shared(first)),
            (_, Some(p)) => {
                let (mu, sigma) = context_predict(p, h, w, ctx)?;
                let b = sigma.iter().map(|s| s / std::f64::consts::SQRT_2).collect();
                Ok(ChannelModel::PerElement { mu, b })
            }
            _ => Err(Error::InvalidArgument(format!("channel {c} needs its predecessor"))),
        }
    }

    pub fn params(&self, i: usize) -> (f64, f64) {
        match self {
            ChannelModel::Shared(p) => (p.mu as f64, p.b as f64),
            ChannelModel::PerElement { mu, b } => (mu[i], b[i]),
        }
    }
}

/// Rate of a latent level under the channel-wise autoregressive model.
///
/// The per-element breakdown is channel-major, so channel `c` owns the
/// slice `[c*h*w, (c+1)*h*w)`.
pub fn latent_rate(y_hat: LatentView<'_>, ctx: &ContextModel, first: LaplaceParams) -> Result<RateEstimate> {
    let (h, w) = (y_hat.height, y_hat.width);
    let mut per_element = Vec::with_capacity(y_hat.data.len());
    let mut prev: Option<Vec<f64>> = None;
    for c in 0..y_hat.channels {
        let model = ChannelModel::for_channel(c, prev.as_deref(), h, w, ctx, first)?;
        let cur: Vec<f64> = y_hat.channel(c).iter().map(|&v| v as f64).collect();
        for (i, &x) in cur.iter().enumerate() {
            let (mu, b) = model.params(i);
            per_element.push(symbol_bits(x, mu, b));
        }
        prev = Some(cur);
    }
    Ok(RateEstimate::from_elements(per_element))
}

/// Latent rate together with its gradients.
pub struct LatentRateGrad {
    pub bits: f64,
    /// d bits / d latent values (direct term plus the path through the context input).
    pub d_latents: Vec<f64>,
    pub d_first_mu: f64,
    pub d_first_b: f64,
}

/// Differentiable [`latent_rate`]; context parameter gradients are
/// accumulated into `ctx_grads`.
pub fn latent_rate_grad(
    y_hat: LatentView<'_>,
    ctx: &ContextModel,
    first: LaplaceParams,
    ctx_grads: &mut ContextGrads,
) -> Result<LatentRateGrad> {
    let (h, w) = (y_hat.height, y_hat.width);
    let plane = h * w;
    let mut out = LatentRateGrad {
        bits: 0.0,
        d_latents: vec![0.0; y_hat.data.len()],
        d_first_mu: 0.0,
        d_first_b: 0.0,
    };
    let (mu0, b0) = (first.mu as f64, first.b as f64);
    for (i, &x) in y_hat.channel(0).iter().enumerate() {
        let c = symbol_cost(x as f64, mu0, b0);
        out.bits += c.bits;
        out.d_latents[i] += c.d_x;
        out.d_first_mu += c.d_mu;
        out.d_first_b += c.d_b;
    }
    for ch in 1..y_hat.channels {
        let prev: Vec<f64> = y_hat.channel(ch - 1).iter().map(|&v| v as f64).collect();
        let t = ctx.trace(&prev, h, w);
        let mut d_out = vec![0.0f64; 2 * plane];
        for (i, &x) in y_hat.channel(ch).iter().enumerate() {
            let mu = t.out[i];
            let raw_sigma = t.out[plane + i];
            let sigma = raw_sigma.max(SIGMA_MIN);
            let b = sigma / std::f64::consts::SQRT_2;
            let c = symbol_cost(x as f64, mu, b);
            out.bits += c.bits;
            out.d_latents[ch * plane + i] += c.d_x;
            d_out[i] = c.d_mu;
            if raw_sigma > SIGMA_MIN {
                d_out[plane + i] = c.d_b / std::f64::consts::SQRT_2;
            }
        }
        let d_prev = backprop_ctx(ctx, &t, &d_out, h, w, ctx_grads);
        for (i, g) in d_prev.iter().enumerate() {
            out.d_latents[(ch - 1) * plane + i] += g;
        }
    }
    Ok(out)
}

fn backprop_ctx(ctx: &ContextModel, t: &CtxTrace, d_out: &[f64], h: usize, w: usize, grads: &mut ContextGrads) -> Vec<f64> {
    let relu_mask = |g: Vec<f64>, act: &[f64]| -> Vec<f64> {
        g.into_iter().zip(act).map(|(g, a)| if *a > 0.0 { g } else { 0.0 }).collect()
    };
    let [g0w, g1w, g2w] = &mut grads.weight;
    let [g0b, g1b, g2b] = &mut grads.bias;
    let d_act2 = ctx.layers[2].backward(&t.act2, d_out, h, w, g2w, g2b);
    let d_act2 = relu_mask(d_act2, &t.act2);
    let d_act1 = ctx.layers[1].backward(&t.act1, &d_act2, h, w, g1w, g1b);
    let d_act1 = relu_mask(d_act1, &t.act1);
    ctx.layers[0].backward(&t.input, &d_act1, h, w, g0w, g0b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Closed-form bin mass straight from the CDF.
    fn cdf_mass(x: f64, mu: f64, b: f64) -> f64 {
        laplace_cdf(x + 0.5 - mu, b) - laplace_cdf(x - 0.5 - mu, b)
    }

    #[test]
    fn closed_form_symbol_costs() {
        let z = laplace_rate(&[0.0f64], LaplaceParams::new(0.0, 1.0).unwrap()).bits;
        assert!((z - -(1.0 - (-0.5f64).exp()).log2()).abs() < 1e-12);
        assert!((z - 1.3457).abs() < 1e-3);
        let three = laplace_rate(&[3.0f64], LaplaceParams::new(0.0, 1.0).unwrap()).bits;
        assert!((three - -(0.5 * ((-2.5f64).exp() - (-3.5f64).exp())).log2()).abs() < 1e-12);
        assert!((three - 5.269).abs() < 1e-3);
    }

    #[test]
    fn stable_mass_matches_cdf_difference() {
        for &(x, mu, b) in &[(0.0, 0.0, 1.0), (3.0, 0.3, 0.7), (-4.0, 1.0, 2.0), (0.2, 0.0, 0.01)] {
            assert!((bin_mass(x, mu, b) - cdf_mass(x, mu, b)).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_about_location() {
        let p = LaplaceParams::new(1.0, 2.5).unwrap();
        for t in 1..6 {
            let a = laplace_rate(&[1.0 + t as f64], p).bits;
            let b = laplace_rate(&[1.0 - t as f64], p).bits;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn floor_keeps_costs_finite() {
        let bits = laplace_rate(&[1000.0f64], LaplaceParams::new(0.0, 1e-3).unwrap()).bits;
        assert_eq!(bits, 24.0);
    }

    #[test]
    fn mass_sums_to_one() {
        for &(mu, b) in &[(0.0, 1.0), (0.3, 4.0), (-2.2, 0.2)] {
            let total: f64 = (-400..=400).map(|x| bin_mass(x as f64, mu, b)).sum();
            assert!(total <= 1.0 + 1e-12 && total >= 1.0 - 1e-6, "{total}");
        }
    }

    #[test]
    fn fit_examples() {
        let p = fit_laplace(&[-1.0f64, 0.0, 1.0]).unwrap();
        assert_eq!(p.mu, 0.0);
        assert!((p.b - 2.0 / 3.0).abs() < 1e-7);
        let c = fit_laplace(&[4.0f32; 5]).unwrap();
        assert_eq!((c.mu, c.b), (4.0, B_MIN));
        let x = [0.3f64, -1.2, 2.0, 0.8, -0.1, 5.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 5.0).collect();
        let (a, b) = (fit_laplace(&x).unwrap(), fit_laplace(&shifted).unwrap());
        assert!((a.b - b.b).abs() < 1e-6 && (b.mu - a.mu - 5.0).abs() < 1e-6);
        assert!(fit_laplace::<f64>(&[]).is_err());
        assert_eq!(fit_laplace(&[1.0f64]).unwrap().b, B_MIN);
        assert!((a.sigma() - a.b * 2f32.sqrt()).abs() < 1e-7);
    }

    #[test]
    fn constant_context_yields_constant_maps() {
        let ctx = ContextModel::constant(16, 0.7, 2.0);
        let (mu, sigma) = context_predict(&[1.0, -3.0, 2.0, 0.0, 5.0, 1.0, 0.0, 0.0, 9.0], 3, 3, &ctx).unwrap();
        assert!(mu.iter().all(|m| (*m - 0.7).abs() < 1e-7));
        assert!(sigma.iter().all(|s| (*s - 2.0).abs() < 1e-7));
        let tiny = ContextModel::constant(4, 0.0, -1.0);
        let (_, sigma) = context_predict(&[0.0; 16], 4, 4, &tiny).unwrap();
        assert!(sigma.iter().all(|s| *s == SIGMA_MIN));
        assert!(context_predict(&[0.0; 5], 2, 2, &tiny).is_err());
    }

    #[test]
    fn context_output_shape_follows_input() {
        let ctx = ContextModel::new(16, &mut ChaCha8Rng::seed_from_u64(1));
        for (h, w) in [(3, 3), (5, 7), (8, 4)] {
            let (mu, sigma) = context_predict(&vec![1.0; h * w], h, w, &ctx).unwrap();
            assert_eq!((mu.len(), sigma.len()), (h * w, h * w));
        }
    }

    #[test]
    fn one_channel_latent_reduces_to_laplace_rate() {
        let ctx = ContextModel::new(8, &mut ChaCha8Rng::seed_from_u64(2));
        let first = LaplaceParams::new(0.5, 1.3).unwrap();
        let y = [0.0f32, 1.0, -2.0, 3.0, 0.0, 1.0];
        let a = latent_rate(LatentView::new(1, 2, 3, &y).unwrap(), &ctx, first).unwrap();
        let b = laplace_rate(&y, first);
        assert_eq!(a.bits, b.bits);
    }

    #[test]
    fn all_zero_latents_with_unit_model() {
        let ctx = ContextModel::constant(16, 0.0, std::f32::consts::SQRT_2);
        let first = LaplaceParams::new(0.0, 1.0).unwrap();
        let y = vec![0.0f32; 3 * 4 * 5];
        let r = latent_rate(LatentView::new(3, 4, 5, &y).unwrap(), &ctx, first).unwrap();
        let per = -(1.0 - (-0.5f64).exp()).log2();
        assert!((r.bits - 60.0 * per).abs() < 1e-6 * r.bits);
    }

    #[test]
    fn sharper_model_is_cheaper_at_its_mode() {
        let y = vec![0.0f32; 2 * 9];
        let mut last = f64::INFINITY;
        for b in [2.0f32, 1.0, 0.5] {
            let ctx = ContextModel::constant(4, 0.0, b * std::f32::consts::SQRT_2);
            let r = latent_rate(LatentView::new(2, 3, 3, &y).unwrap(), &ctx, LaplaceParams::new(0.0, b).unwrap())
                .unwrap()
                .bits;
            assert!(r <= last);
            last = r;
        }
    }

    #[test]
    fn per_channel_rates_sum_to_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ctx = ContextModel::new(16, &mut rng);
        let y: Vec<f32> = (0..4 * 5 * 6).map(|_| rng.gen_range(-4..=4) as f32).collect();
        let r = latent_rate(LatentView::new(4, 5, 6, &y).unwrap(), &ctx, LaplaceParams::new(0.0, 2.0).unwrap()).unwrap();
        let per = r.per_element.as_ref().unwrap();
        let by_channel: f64 = per.chunks(30).map(|c| c.iter().sum::<f64>()).sum();
        assert!((by_channel - r.bits).abs() < 1e-9 * r.bits);
    }
}
