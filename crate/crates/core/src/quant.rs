//! Quantizers used during and after training.
//!
//! * straight-through rounding for the weights trained with QAT,
//! * additive uniform noise and Stochastic Gumbel Annealing for latent codes,
//! * uniform post-training quantization for the small raw tensors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::entropy::LaplaceParams;
use crate::error::{Error, Result};

/// Round half away from zero (`2.5 -> 3`, `-2.5 -> -3`). Never returns `-0.0`.
#[inline]
pub fn round_half_away(x: f32) -> f32 {
    x.round() + 0.0
}

/// Integer lattice indices `round(x / scale)`.
pub fn quantize_ints(x: &[f32], scale: f32) -> Result<Vec<i32>> {
    check_scale(scale)?;
    x.iter()
        .map(|v| {
            let q = round_half_away(v / scale);
            if q.abs() > i32::MAX as f32 {
                Err(Error::InvalidArgument(format!("value {v} overflows the integer grid")))
            } else {
                Ok(q as i32)
            }
        })
        .collect()
}

fn check_scale(scale: f32) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("quantization scale must be positive, got {scale}")))
    }
}

/// Forward pass of straight-through rounding: `round(x / s) * s`.
///
/// The backward pass is the identity, see [`ste_round_backward`].
pub fn ste_round(x: &[f32], scale: f32) -> Result<Vec<f32>> {
    check_scale(scale)?;
    Ok(x.iter().map(|v| round_half_away(v / scale) * scale + 0.0).collect())
}

/// Straight-through gradient: passes `grad` unchanged.
pub fn ste_round_backward(grad: &[f32]) -> Vec<f32> {
    grad.to_vec()
}

/// A weight tensor on its integer grid together with the Laplace statistics
/// used to entropy code it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub ints: Vec<i32>,
    pub scale: f32,
    pub laplace: LaplaceParams,
    pub shape: Vec<usize>,
}

impl QuantizedTensor {
    pub fn dequantize(&self) -> Vec<f32> {
        self.ints.iter().map(|&q| q as f32 * self.scale).collect()
    }

    pub fn int_range(&self) -> (i32, i32) {
        let lo = self.ints.iter().copied().min().unwrap_or(0);
        let hi = self.ints.iter().copied().max().unwrap_or(0);
        (lo, hi)
    }
}

/// `y + n` with `n ~ U(-0.5, 0.5)` i.i.d.; the gradient w.r.t. `y` is the identity.
pub fn add_uniform_noise(y: &[f32], rng: &mut ChaCha8Rng) -> Vec<f32> {
    y.iter().map(|v| v + uniform_noise(rng)).collect()
}

/// One draw from the open interval `(-0.5, 0.5)`.
pub fn uniform_noise(rng: &mut ChaCha8Rng) -> f32 {
    loop {
        let n = rng.gen::<f32>() - 0.5;
        if n > -0.5 {
            return n;
        }
    }
}

/// Exponential temperature decay for SGA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgaSchedule {
    pub tau_start: f32,
    pub tau_end: f32,
    pub total_steps: usize,
}

impl Default for SgaSchedule {
    fn default() -> Self {
        Self { tau_start: 0.5, tau_end: 0.02, total_steps: 1 }
    }
}

impl SgaSchedule {
    /// Temperature at `step` in `0..total_steps`; the last step sits exactly on `tau_end`.
    pub fn temperature(&self, step: usize) -> f32 {
        if self.total_steps <= 1 || step + 1 >= self.total_steps {
            return self.tau_end;
        }
        let t = step as f64 / (self.total_steps - 1) as f64;
        let ratio = self.tau_end as f64 / self.tau_start as f64;
        (self.tau_start as f64 * ratio.powf(t)) as f32
    }
}

/// Annealing progress plus the random stream that drives the Gumbel noise.
#[derive(Debug, Clone)]
pub struct SgaState {
    pub schedule: SgaSchedule,
    pub step: usize,
    pub rng: ChaCha8Rng,
}

impl SgaState {
    pub fn new(schedule: SgaSchedule, rng: ChaCha8Rng) -> Result<Self> {
        if !(schedule.tau_end > 0.0 && schedule.tau_start >= schedule.tau_end) {
            return Err(Error::InvalidArgument(format!(
                "SGA needs tau_start >= tau_end > 0, got {} -> {}",
                schedule.tau_start, schedule.tau_end
            )));
        }
        Ok(Self { schedule, step: 0, rng })
    }

    pub fn temperature(&self) -> f32 {
        self.schedule.temperature(self.step)
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }
}

pub const SGA_EPS: f64 = 1e-4;

/// Output of [`sga_sample`].
#[derive(Debug, Clone)]
pub struct SgaSample {
    /// Relaxed values `floor + p_ceil`, used in the forward pass.
    pub values: Vec<f32>,
    /// The candidate with the larger relaxed weight, always on the integer grid.
    pub hard: Vec<f32>,
    /// `d values / d y`.
    pub grad: Vec<f32>,
}

fn gumbel(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// Stochastic Gumbel Annealing relaxation of `round(y)` at temperature `tau`.
///
/// Each element chooses between `floor(y)` and `ceil(y)` with logits
/// `-atanh(clamp(d)) / tau` where `d` is the distance to the candidate; a
/// Gumbel-softmax at temperature `tau` mixes the two candidates.
pub fn sga_sample(y: &[f32], tau: f32, rng: &mut ChaCha8Rng) -> Result<SgaSample> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("SGA temperature must be positive, got {tau}")));
    }
    let tau = tau as f64;
    let mut values = Vec::with_capacity(y.len());
    let mut hard = Vec::with_capacity(y.len());
    let mut grad = Vec::with_capacity(y.len());
    for &v in y {
        let v = v as f64;
        let lo = v.floor();
        let d = v - lo;
        let df = d.clamp(SGA_EPS, 1.0 - SGA_EPS);
        let dc = (1.0 - d).clamp(SGA_EPS, 1.0 - SGA_EPS);
        let logit_floor = -df.atanh() / tau;
        let logit_ceil = -dc.atanh() / tau;
        let g_floor = gumbel(rng);
        let g_ceil = gumbel(rng);
        let z = ((logit_ceil + g_ceil) - (logit_floor + g_floor)) / tau;
        let p_ceil = 1.0 / (1.0 + (-z).exp());
        values.push((lo + p_ceil) as f32);
        hard.push(if p_ceil > 0.5 { lo + 1.0 } else { lo } as f32);
        // dz/dd through both clamped logits.
        let d_logit_floor = if d > SGA_EPS && d < 1.0 - SGA_EPS { -1.0 / (tau * (1.0 - df * df)) } else { 0.0 };
        let d_logit_ceil = if d > SGA_EPS && d < 1.0 - SGA_EPS { 1.0 / (tau * (1.0 - dc * dc)) } else { 0.0 };
        let dz = (d_logit_ceil - d_logit_floor) / tau;
        grad.push((p_ceil * (1.0 - p_ceil) * dz) as f32);
    }
    Ok(SgaSample { values, hard, grad })
}

/// Uniform post-training quantization onto `2^bits` levels spanning `[min, max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformPtq {
    pub levels: Vec<u16>,
    pub min: f32,
    pub max: f32,
    pub bits: u8,
}

impl UniformPtq {
    fn top(&self) -> f64 {
        ((1u32 << self.bits) - 1) as f64
    }

    /// Reconstruction computed in double precision.
    pub fn dequantize_f64(&self) -> Vec<f64> {
        let (lo, range, top) = (self.min as f64, self.max as f64 - self.min as f64, self.top());
        self.levels.iter().map(|&q| lo + q as f64 / top * range).collect()
    }

    pub fn dequantize(&self) -> Vec<f32> {
        self.dequantize_f64().into_iter().map(|x| x as f32).collect()
    }
}

/// Uniform quantization with `bits <= 16`.
pub fn ptq_uniform(x: &[f32], bits: u8) -> Result<UniformPtq> {
    if bits == 0 || bits > 16 {
        return Err(Error::InvalidArgument(format!("PTQ supports 1..=16 bits, got {bits}")));
    }
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite value {bad} in PTQ input")));
    }
    let min = x.iter().copied().fold(f32::INFINITY, f32::min);
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let (min, max) = if x.is_empty() { (0.0, 0.0) } else { (min, max) };
    let top = ((1u32 << bits) - 1) as f64;
    let range = max as f64 - min as f64;
    let levels = x
        .iter()
        .map(|&v| {
            if range == 0.0 {
                0
            } else {
                ((v as f64 - min as f64) / range * top).round().clamp(0.0, top) as u16
            }
        })
        .collect();
    Ok(UniformPtq { levels, min, max, bits })
}

/// 16-bit uniform quantization of a minor tensor.
pub fn ptq_uniform16(x: &[f32]) -> Result<UniformPtq> {
    ptq_uniform(x, 16)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn ste_forward_and_ties() {
        assert_eq!(ste_round(&[0.4], 1.0).unwrap(), vec![0.0]);
        assert_eq!(ste_round(&[2.5, -2.5, 1.49], 1.0).unwrap(), vec![3.0, -3.0, 1.0]);
        assert_eq!(ste_round(&[0.26], 0.5).unwrap(), vec![0.5]);
        assert!(ste_round(&[1.0], 0.0).is_err());
        assert!(ste_round(&[1.0], -1.0).is_err());
        assert_eq!(ste_round_backward(&[0.3, -2.0]), vec![0.3, -2.0]);
    }

    #[test]
    fn ste_gradient_is_identity_not_true_derivative() {
        let x = [0.3f32, 1.2, -0.7];
        // The true derivative of the rounding map is zero almost everywhere.
        let h = 1e-3;
        for &v in &x {
            let fd = (ste_round(&[v + h], 1.0).unwrap()[0] - ste_round(&[v - h], 1.0).unwrap()[0]) / (2.0 * h);
            assert_eq!(fd, 0.0);
        }
        let ones = vec![1.0f32; x.len()];
        assert_eq!(ste_round_backward(&ones), ones);
    }

    #[test]
    fn uniform_noise_support_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = vec![1.5f32; 10_000];
        let out = add_uniform_noise(&y, &mut rng);
        assert!(out.iter().all(|o| (o - 1.5).abs() < 0.5));
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(add_uniform_noise(&y, &mut a), add_uniform_noise(&y, &mut b));
    }

    #[test]
    fn uniform_noise_is_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| uniform_noise(&mut rng) as f64).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "{mean}");
    }

    #[test]
    fn sga_schedule_endpoints() {
        let s = SgaSchedule { tau_start: 0.5, tau_end: 0.02, total_steps: 100 };
        assert_eq!(s.temperature(0), 0.5);
        assert_eq!(s.temperature(99), 0.02);
        for t in 1..100 {
            assert!(s.temperature(t) < s.temperature(t - 1));
        }
        assert!(SgaState::new(SgaSchedule { tau_end: 0.0, ..s }, ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn sga_integer_input_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = sga_sample(&[3.0, -2.0, 0.0], 0.02, &mut rng).unwrap();
        assert_eq!(out.values, vec![3.0, -2.0, 0.0]);
    }

    #[test]
    fn sga_half_integer_is_fair() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for tau in [0.5f32, 0.1, 0.02] {
            let y = vec![2.5f32; 10_000];
            let s = sga_sample(&y, tau, &mut rng).unwrap();
            let ceil = s.hard.iter().filter(|&&h| h == 3.0).count() as f64 / y.len() as f64;
            assert!((ceil - 0.5).abs() < 0.02, "tau {tau}: {ceil}");
            assert!(s.hard.iter().all(|h| *h == 2.0 || *h == 3.0));
        }
    }

    #[test]
    fn sga_annealed_picks_nearest() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = vec![4.1f32; 10_000];
        let s = sga_sample(&y, 0.02, &mut rng).unwrap();
        let hits = s.values.iter().filter(|&&v| v == 4.0).count() as f64 / y.len() as f64;
        assert!(hits > 0.99, "{hits}");
    }

    #[test]
    fn sga_gradient_matches_finite_differences_with_fixed_noise() {
        let y = [0.3f32, 1.7, -0.45];
        let out = sga_sample(&y, 0.4, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let h = 1e-3f32;
        for i in 0..y.len() {
            let mut plus = y;
            plus[i] += h;
            let mut minus = y;
            minus[i] -= h;
            // same seed replays the same Gumbel draws
            let p = sga_sample(&plus, 0.4, &mut ChaCha8Rng::seed_from_u64(8)).unwrap().values[i];
            let m = sga_sample(&minus, 0.4, &mut ChaCha8Rng::seed_from_u64(8)).unwrap().values[i];
            let fd = (p - m) / (2.0 * h);
            assert!((fd - out.grad[i]).abs() < 1e-2 * fd.abs().max(1.0), "{fd} vs {}", out.grad[i]);
        }
    }

    #[test]
    fn ptq_endpoints_and_constant() {
        let q = ptq_uniform16(&[0.0, 1.0]).unwrap();
        assert_eq!(q.levels, vec![0, 65535]);
        assert_eq!(q.dequantize(), vec![0.0, 1.0]);
        let c = ptq_uniform16(&[2.5; 4]).unwrap();
        assert_eq!(c.levels, vec![0; 4]);
        assert_eq!(c.dequantize(), vec![2.5; 4]);
        assert!(ptq_uniform16(&[1.0, f32::NAN]).is_err());
    }

    #[test]
    fn ptq_error_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x: Vec<f32> = (0..5000).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let q = ptq_uniform16(&x).unwrap();
        let bound = (q.max as f64 - q.min as f64) / 65535.0 / 2.0 + 1e-9;
        for (a, b) in x.iter().zip(q.dequantize_f64()) {
            assert!((*a as f64 - b).abs() <= bound);
        }
    }
}
