//! The scene-aware network: four hierarchical scene modeling blocks, each a
//! latent scene code concatenated onto the incoming features and pushed
//! through an angularly modulated convolution, nearest upsampling, batch
//! normalization and GeLU, followed by a convolutional RGB head.
//!
//! A modulated convolution assembles its kernel per view from a shared
//! kernel base `B` (`r x k x k`) and three coefficient tensors: the spatial
//! coefficients `W_S` plus one horizontal row `W_u[u]` and one vertical row
//! `W_v[v]`. The kernel bias is `b_u[u] + b_v[v]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::entropy::ContextModel;
use crate::error::{Error, Result};
use crate::lightfield::{AngularCoord, LightField};
use crate::nn::{self, Feature};
use crate::quant;

pub const NUM_BLOCKS: usize = 4;
/// Latent code initialization spread.
pub const LATENT_INIT_STD: f32 = 0.01;
/// QAT grid step is this fraction of the initial tensor standard deviation.
pub const QAT_SCALE_DIVISOR: f32 = 32.0;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Spatial output channels `C_S` of every block.
    pub c_s: usize,
    /// Number of kernel bases `r`.
    pub rank: usize,
    /// Latent channels `C_l`.
    pub c_l: usize,
    /// Kernel spatial size.
    pub k: usize,
    pub u_count: usize,
    pub v_count: usize,
    pub height: usize,
    pub width: usize,
    /// Hidden width of the context models.
    pub ctx_width: usize,
    /// `false` replaces the learned latent codes by fixed seeded noise that
    /// is neither trained nor transmitted (the ablation base model).
    pub scene_codes: bool,
}

impl ModelConfig {
    /// Paper-scale defaults (`r = 6`, `C_l = 10`, `k = 3`).
    pub fn new(c_s: usize, u_count: usize, v_count: usize, height: usize, width: usize) -> Self {
        Self {
            c_s,
            rank: 6,
            c_l: 10,
            k: 3,
            u_count,
            v_count,
            height,
            width,
            ctx_width: 16,
            scene_codes: true,
        }
    }

    pub fn for_lightfield(c_s: usize, lf: &LightField) -> Self {
        Self::new(c_s, lf.u_count(), lf.v_count(), lf.height(), lf.width())
    }

    /// Output channels of every modulated convolution: `C_S + 2`.
    pub fn c_out(&self) -> usize {
        self.c_s + 2
    }

    /// Input channels of block `i` (0-based).
    pub fn block_in_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.c_l
        } else {
            self.c_out() + self.c_l
        }
    }

    /// Spatial size of latent level `i + 1` (0-based block index `i`).
    pub fn latent_hw(&self, i: usize) -> (usize, usize) {
        latent_shape(i + 1, self.height, self.width).expect("validated config")
    }

    /// Spatial size a block resizes its output to.
    pub fn block_out_hw(&self, i: usize) -> (usize, usize) {
        if i + 1 < NUM_BLOCKS {
            self.latent_hw(i + 1)
        } else {
            (self.height, self.width)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_s == 0 || self.rank == 0 || self.c_l == 0 || self.ctx_width == 0 {
            return Err(Error::InvalidArgument("C_S, r, C_l and context width must be >= 1".into()));
        }
        if self.k % 2 == 0 {
            return Err(Error::InvalidArgument(format!("kernel size must be odd, got {}", self.k)));
        }
        if self.u_count == 0 || self.v_count == 0 || self.u_count > 255 || self.v_count > 255 {
            return Err(Error::InvalidArgument("angular counts must lie in 1..=255".into()));
        }
        if self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return Err(Error::InvalidArgument("spatial size exceeds 65535".into()));
        }
        let mut prev = (0, 0);
        for level in 1..=NUM_BLOCKS {
            let hw = latent_shape(level, self.height, self.width)?;
            if hw.0 < prev.0 || hw.1 < prev.1 {
                return Err(Error::InvalidArgument(format!("latent sizes do not chain at level {level}")));
            }
            prev = hw;
        }
        Ok(())
    }
}

/// Latent spatial size for `level` in `1..=4`: `h / 2^(5 - level)` rounded
/// half to even.
pub fn latent_shape(level: usize, h: usize, w: usize) -> Result<(usize, usize)> {
    if !(1..=NUM_BLOCKS).contains(&level) {
        return Err(Error::InvalidArgument(format!("latent level must be 1..=4, got {level}")));
    }
    let div = (1usize << (5 - level)) as f64;
    if h < div as usize || w < div as usize {
        return Err(Error::InvalidArgument(format!(
            "spatial size {h}x{w} too small for latent level {level}"
        )));
    }
    let round = |x: usize| (x as f64 / div).round_ties_even() as usize;
    Ok((round(h), round(w)))
}

/// `K_S[o, i] = sum_j W_S[o, i, j] * B[j]`.
pub fn compose_spatial_kernel(
    coeffs: &[f32],
    c_rows: usize,
    c_in: usize,
    basis: &[f32],
    rank: usize,
    k: usize,
) -> Result<Vec<f32>> {
    let kk = k * k;
    if coeffs.len() != c_rows * c_in * rank || basis.len() != rank * kk {
        return Err(Error::Shape(format!(
            "coefficients {} for {c_rows}x{c_in}x{rank} and basis {} for {rank}x{k}x{k}",
            coeffs.len(),
            basis.len()
        )));
    }
    let mut kernel = vec![0.0f32; c_rows * c_in * kk];
    for (row, out) in coeffs.chunks_exact(rank).zip(kernel.chunks_exact_mut(kk)) {
        for (j, &c) in row.iter().enumerate() {
            for (o, &b) in out.iter_mut().zip(&basis[j * kk..(j + 1) * kk]) {
                *o += c * b;
            }
        }
    }
    Ok(kernel)
}

/// Identifies the five QAT tensors of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QatKind {
    Spatial,
    Horizontal,
    Vertical,
    BiasU,
    BiasV,
}

impl QatKind {
    pub const ALL: [QatKind; 5] = [Self::Spatial, Self::Horizontal, Self::Vertical, Self::BiasU, Self::BiasV];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Learnable parameters of one modulated convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulatedConvParams {
    pub c_in: usize,
    pub c_s: usize,
    pub rank: usize,
    pub k: usize,
    pub u_count: usize,
    pub v_count: usize,
    /// `B`, `r x k x k`.
    pub basis: Vec<f32>,
    /// `W_S`, `C_S x C_in x r`.
    pub w_s: Vec<f32>,
    /// `U` rows of `C_in x r`.
    pub w_u: Vec<f32>,
    /// `V` rows of `C_in x r`.
    pub w_v: Vec<f32>,
    /// `U` rows of `C_out`.
    pub b_u: Vec<f32>,
    /// `V` rows of `C_out`.
    pub b_v: Vec<f32>,
    /// QAT grid step per [`QatKind`].
    pub scales: [f32; 5],
}

fn std_dev(x: &[f32]) -> f32 {
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    (x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt() as f32
}

impl ModulatedConvParams {
    pub fn new(c_in: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (r, k) = (cfg.rank, cfg.k);
        let c_out = cfg.c_out();
        // var(K) = r var(W) var(B) = 1 / (3 C_in k^2), the usual fan-in uniform variance.
        let basis_bound = 3f32.sqrt() / k as f32;
        let coeff_bound = 1.0 / ((r * c_in) as f32).sqrt();
        let bias_bound = 1.0 / ((c_in * k * k) as f32).sqrt();
        let mut uniform = |n: usize, bound: f32| -> Vec<f32> { (0..n).map(|_| rng.gen_range(-bound..bound)).collect() };
        let basis = uniform(r * k * k, basis_bound);
        let w_s = uniform(cfg.c_s * c_in * r, coeff_bound);
        let w_u = uniform(cfg.u_count * c_in * r, coeff_bound);
        let w_v = uniform(cfg.v_count * c_in * r, coeff_bound);
        let b_u = uniform(cfg.u_count * c_out, bias_bound);
        let b_v = uniform(cfg.v_count * c_out, bias_bound);
        let mut p = Self {
            c_in,
            c_s: cfg.c_s,
            rank: r,
            k,
            u_count: cfg.u_count,
            v_count: cfg.v_count,
            basis,
            w_s,
            w_u,
            w_v,
            b_u,
            b_v,
            scales: [1.0; 5],
        };
        for kind in QatKind::ALL {
            let s = std_dev(p.qat(kind)) / QAT_SCALE_DIVISOR;
            p.scales[kind.index()] = if s > 0.0 && s.is_finite() { s } else { 1e-3 };
        }
        p
    }

    pub fn c_out(&self) -> usize {
        self.c_s + 2
    }

    pub fn qat(&self, kind: QatKind) -> &[f32] {
        match kind {
            QatKind::Spatial => &self.w_s,
            QatKind::Horizontal => &self.w_u,
            QatKind::Vertical => &self.w_v,
            QatKind::BiasU => &self.b_u,
            QatKind::BiasV => &self.b_v,
        }
    }

    pub fn qat_mut(&mut self, kind: QatKind) -> &mut Vec<f32> {
        match kind {
            QatKind::Spatial => &mut self.w_s,
            QatKind::Horizontal => &mut self.w_u,
            QatKind::Vertical => &mut self.w_v,
            QatKind::BiasU => &mut self.b_u,
            QatKind::BiasV => &mut self.b_v,
        }
    }

    /// Logical shape of a QAT tensor.
    pub fn qat_shape(&self, kind: QatKind) -> Vec<usize> {
        match kind {
            QatKind::Spatial => vec![self.c_s, self.c_in, self.rank],
            QatKind::Horizontal => vec![self.u_count, self.c_in, self.rank],
            QatKind::Vertical => vec![self.v_count, self.c_in, self.rank],
            QatKind::BiasU => vec![self.u_count, self.c_out()],
            QatKind::BiasV => vec![self.v_count, self.c_out()],
        }
    }

    /// Copy with every QAT tensor snapped to its grid (STE forward).
    pub fn quantized(&self) -> Self {
        let mut q = self.clone();
        for kind in QatKind::ALL {
            let s = self.scales[kind.index()];
            *q.qat_mut(kind) = quant::ste_round(self.qat(kind), s).expect("positive QAT scale");
        }
        q
    }

    pub fn qat_param_count(&self) -> usize {
        QatKind::ALL.iter().map(|&k| self.qat(k).len()).sum()
    }

    fn row(&self, kind: QatKind, index: usize) -> &[f32] {
        let len = self.c_in * self.rank;
        &self.qat(kind)[index * len..(index + 1) * len]
    }

    /// Stacked coefficients `[W_S; W_u[u]; W_v[v]]`, `C_out x C_in x r`.
    pub fn stacked_coefficients(&self, coord: AngularCoord) -> Vec<f32> {
        let mut coeffs = Vec::with_capacity(self.c_out() * self.c_in * self.rank);
        coeffs.extend_from_slice(&self.w_s);
        coeffs.extend_from_slice(self.row(QatKind::Horizontal, coord.u));
        coeffs.extend_from_slice(self.row(QatKind::Vertical, coord.v));
        coeffs
    }
}

/// Kernel `concat(K_S, K_u, K_v)` and bias `b_u[u] + b_v[v]` for one view.
pub fn build_modulated_kernel(params: &ModulatedConvParams, coord: AngularCoord) -> Result<(Vec<f32>, Vec<f32>)> {
    if coord.u >= params.u_count || coord.v >= params.v_count {
        return Err(Error::InvalidArgument(format!(
            "coordinate ({}, {}) outside {}x{} grid",
            coord.u, coord.v, params.u_count, params.v_count
        )));
    }
    let coeffs = params.stacked_coefficients(coord);
    let kernel = compose_spatial_kernel(&coeffs, params.c_out(), params.c_in, &params.basis, params.rank, params.k)?;
    let c_out = params.c_out();
    let bu = &params.b_u[coord.u * c_out..(coord.u + 1) * c_out];
    let bv = &params.b_v[coord.v * c_out..(coord.v + 1) * c_out];
    let bias = bu.iter().zip(bv).map(|(a, b)| a + b).collect();
    Ok((kernel, bias))
}

/// Normalization state of a block.
#[derive(Debug, Clone, PartialEq)]
pub enum Norm {
    /// Learnable affine plus the population statistics used at evaluation.
    Batch { gamma: Vec<f32>, beta: Vec<f32>, mean: Vec<f32>, var: Vec<f32> },
    /// Frozen per-channel `scale * x + shift`.
    Folded { scale: Vec<f32>, shift: Vec<f32> },
}

impl Norm {
    fn new(channels: usize) -> Self {
        Norm::Batch {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// The inference-time affine.
    pub fn affine(&self) -> (Vec<f32>, Vec<f32>) {
        match self {
            Norm::Batch { gamma, beta, mean, var } => {
                let scale: Vec<f32> = gamma.iter().zip(var).map(|(g, v)| g / (v + nn::BN_EPS).sqrt()).collect();
                let shift = beta.iter().zip(mean).zip(&scale).map(|((b, m), s)| b - m * s).collect();
                (scale, shift)
            }
            Norm::Folded { scale, shift } => (scale.clone(), shift.clone()),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Norm::Batch { gamma, beta, .. } => gamma.len() + beta.len(),
            Norm::Folded { scale, shift } => scale.len() + shift.len(),
        }
    }
}

/// A latent scene code `C_l x h_i x w_i` at level `i` in `1..=4`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSceneCode {
    pub level: usize,
    pub values: Feature,
}

impl LatentSceneCode {
    /// Hard rounding, half away from zero.
    pub fn rounded(&self) -> Self {
        let mut values = self.values.clone();
        values.data.iter_mut().for_each(|v| *v = quant::round_half_away(*v));
        Self { level: self.level, values }
    }
}

/// One hierarchical scene modeling block.
#[derive(Debug, Clone, PartialEq)]
pub struct HsmBlock {
    pub conv: ModulatedConvParams,
    pub latent: LatentSceneCode,
    pub norm: Norm,
    /// Spatial size the block output is resized to.
    pub out_hw: (usize, usize),
}

/// Final `C_out -> 3` convolution followed by a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub k: usize,
    pub c_in: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// All learnable state of the representation.
#[derive(Debug, Clone, PartialEq)]
pub struct SanrModel {
    pub config: ModelConfig,
    pub blocks: Vec<HsmBlock>,
    pub head: Head,
    /// One context model per latent level.
    pub context_models: Vec<ContextModel>,
    /// Set once every tensor sits on its transmitted grid.
    pub finalized: bool,
}

impl SanrModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let latent_dist = Normal::new(0.0f32, LATENT_INIT_STD).expect("finite std");
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_1a7e_u64);
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        for i in 0..NUM_BLOCKS {
            let conv = ModulatedConvParams::new(config.block_in_channels(i), &config, &mut rng);
            let (h, w) = config.latent_hw(i);
            let n = config.c_l * h * w;
            let data: Vec<f32> = if config.scene_codes {
                (0..n).map(|_| latent_dist.sample(&mut rng)).collect()
            } else {
                let unit = Normal::new(0.0f32, 1.0).expect("finite std");
                (0..n).map(|_| unit.sample(&mut noise_rng)).collect()
            };
            blocks.push(HsmBlock {
                conv,
                latent: LatentSceneCode { level: i + 1, values: Feature::from_vec(config.c_l, h, w, data) },
                norm: Norm::new(config.c_out()),
                out_hw: config.block_out_hw(i),
            });
        }
        let c_out = config.c_out();
        let bound = 1.0 / ((c_out * config.k * config.k) as f32).sqrt();
        let head = Head {
            k: config.k,
            c_in: c_out,
            weight: (0..3 * c_out * config.k * config.k).map(|_| rng.gen_range(-bound..bound)).collect(),
            bias: (0..3).map(|_| rng.gen_range(-bound..bound)).collect(),
        };
        let context_models = (0..NUM_BLOCKS).map(|_| ContextModel::new(config.ctx_width, &mut rng)).collect();
        Ok(Self { config, blocks, head, context_models, finalized: false })
    }

    /// Current latent codes of every level.
    pub fn latents(&self) -> Vec<LatentSceneCode> {
        self.blocks.iter().map(|b| b.latent.clone()).collect()
    }

    /// Hard-rounded latent codes; the fixed noise of a base model is used as is.
    pub fn quantized_latents(&self) -> Vec<LatentSceneCode> {
        if self.config.scene_codes {
            self.blocks.iter().map(|b| b.latent.rounded()).collect()
        } else {
            self.latents()
        }
    }

    /// Parameters trained with quantization awareness.
    pub fn qat_param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.conv.qat_param_count()).sum()
    }

    /// Kernel bases, normalization, head and context models.
    pub fn minor_param_count(&self) -> usize {
        let blocks: usize = self.blocks.iter().map(|b| b.conv.basis.len() + b.norm.param_count()).sum();
        let ctx: usize = if self.config.scene_codes {
            self.context_models.iter().map(ContextModel::param_count).sum()
        } else {
            0
        };
        blocks + self.head.weight.len() + self.head.bias.len() + ctx
    }

    pub fn latent_count(&self) -> usize {
        if self.config.scene_codes {
            self.blocks.iter().map(|b| b.latent.values.data.len()).sum()
        } else {
            0
        }
    }

    /// Same model with every QAT tensor snapped to its grid.
    pub fn with_quantized_weights(&self) -> Self {
        let mut m = self.clone();
        for b in &mut m.blocks {
            b.conv = b.conv.quantized();
        }
        m
    }
}

/// Evaluation-mode block: concat, modulated conv, resize, affine norm, GeLU.
pub fn hsm_block_forward(
    block: &HsmBlock,
    f_prev: Option<&Feature>,
    y_quant: &LatentSceneCode,
    coord: AngularCoord,
) -> Result<Feature> {
    let input = match f_prev {
        Some(f) => {
            if (f.height, f.width) != (y_quant.values.height, y_quant.values.width) {
                return Err(Error::Shape(format!(
                    "feature {}x{} does not match latent {}x{}",
                    f.height, f.width, y_quant.values.height, y_quant.values.width
                )));
            }
            Feature::concat(f, &y_quant.values)
        }
        None => y_quant.values.clone(),
    };
    if input.channels != block.conv.c_in {
        return Err(Error::Shape(format!(
            "block expects {} input channels, got {}",
            block.conv.c_in, input.channels
        )));
    }
    let (kernel, bias) = build_modulated_kernel(&block.conv, coord)?;
    let conv = nn::conv2d(&input, &kernel, &bias, block.conv.c_out(), block.conv.k);
    let mut up = nn::resize_nearest(&conv, block.out_hw.0, block.out_hw.1);
    let (scale, shift) = block.norm.affine();
    nn::channel_affine(&mut up, &scale, &shift);
    up.data.iter_mut().for_each(|x| *x = nn::gelu(*x));
    Ok(up)
}

/// Renders one view as a planar `3 x H x W` image in `[0, 1]`.
///
/// Weights are used exactly as stored in `model`; pass a model from
/// [`SanrModel::with_quantized_weights`] or a finalized model for the
/// quantized reconstruction.
pub fn sanr_forward(model: &SanrModel, coord: AngularCoord, latents: &[LatentSceneCode]) -> Result<Feature> {
    if latents.len() != NUM_BLOCKS {
        return Err(Error::Shape(format!("expected {NUM_BLOCKS} latent codes, got {}", latents.len())));
    }
    let mut feature: Option<Feature> = None;
    for (i, (block, latent)) in model.blocks.iter().zip(latents).enumerate() {
        let want = model.config.latent_hw(i);
        let got = (latent.values.height, latent.values.width);
        if got != want || latent.values.channels != model.config.c_l {
            return Err(Error::Shape(format!(
                "latent level {} is {}x{}x{}, expected {}x{}x{}",
                i + 1,
                latent.values.channels,
                got.0,
                got.1,
                model.config.c_l,
                want.0,
                want.1
            )));
        }
        feature = Some(hsm_block_forward(block, feature.as_ref(), latent, coord)?);
    }
    let feature = feature.expect("four blocks");
    let mut out = nn::conv2d(&feature, &model.head.weight, &model.head.bias, 3, model.head.k);
    out.data.iter_mut().for_each(|x| *x = nn::sigmoid(*x).clamp(0.0, 1.0));
    Ok(out)
}

/// Planar `[0, 1]` image to interleaved 8-bit RGB.
pub fn to_rgb8(image: &Feature) -> Vec<u8> {
    let plane = image.plane();
    let mut out = vec![0u8; plane * 3];
    for c in 0..3 {
        for (p, &x) in image.channel(c).iter().enumerate() {
            out[p * 3 + c] = (x.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    out
}

/// Decodes every view into a light field.
pub fn render_lightfield(model: &SanrModel, latents: &[LatentSceneCode]) -> Result<LightField> {
    let cfg = &model.config;
    let mut views = Vec::with_capacity(cfg.u_count * cfg.v_count);
    for coord in all_coords(cfg) {
        views.push(to_rgb8(&sanr_forward(model, coord, latents)?));
    }
    LightField::new(cfg.u_count, cfg.v_count, cfg.height, cfg.width, views)
}

fn all_coords(cfg: &ModelConfig) -> Vec<AngularCoord> {
    (0..cfg.u_count)
        .flat_map(|u| (0..cfg.v_count).map(move |v| AngularCoord::new(u, v)))
        .collect()
}

/// Re-estimates every block's normalization statistics over all views,
/// block by block, with the given latents and the model's current weights.
pub fn recalibrate_norm(model: &mut SanrModel, latents: &[LatentSceneCode]) -> Result<()> {
    for i in 0..NUM_BLOCKS {
        recalibrate_block(model, latents, i)?;
    }
    Ok(())
}

/// Population statistics of block `i`'s normalization input over all views,
/// running the earlier blocks in evaluation mode. A folded block is left as is.
pub fn recalibrate_block(model: &mut SanrModel, latents: &[LatentSceneCode], i: usize) -> Result<()> {
    let c_out = model.config.c_out();
    let mut sum = vec![0.0f64; c_out];
    let mut sq = vec![0.0f64; c_out];
    let mut count = 0usize;
    for coord in all_coords(&model.config) {
        let mut feature: Option<Feature> = None;
        for j in 0..i {
            feature = Some(hsm_block_forward(&model.blocks[j], feature.as_ref(), &latents[j], coord)?);
        }
        let block = &model.blocks[i];
        let input = match &feature {
            Some(f) => Feature::concat(f, &latents[i].values),
            None => latents[i].values.clone(),
        };
        let (kernel, bias) = build_modulated_kernel(&block.conv, coord)?;
        let conv = nn::conv2d(&input, &kernel, &bias, block.conv.c_out(), block.conv.k);
        let up = nn::resize_nearest(&conv, block.out_hw.0, block.out_hw.1);
        for c in 0..c_out {
            for &x in up.channel(c) {
                sum[c] += x as f64;
                sq[c] += (x as f64) * (x as f64);
            }
        }
        count += up.plane();
    }
    if let Norm::Batch { mean, var, .. } = &mut model.blocks[i].norm {
        for c in 0..c_out {
            let m = sum[c] / count as f64;
            mean[c] = m as f32;
            var[c] = (sq[c] / count as f64 - m * m).max(0.0) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig { rank: 2, c_l: 3, ctx_width: 4, ..ModelConfig::new(4, 3, 3, 32, 32) }
    }

    #[test]
    fn latent_shapes() {
        assert_eq!(latent_shape(4, 432, 624).unwrap(), (216, 312));
        assert_eq!(latent_shape(1, 512, 512).unwrap(), (32, 32));
        assert_eq!(latent_shape(1, 432, 624).unwrap(), (27, 39));
        // 100 / 16 = 6.25 -> 6, 100 / 8 = 12.5 -> 12 (ties to even)
        assert_eq!(latent_shape(2, 100, 100).unwrap(), (12, 12));
        assert!(latent_shape(0, 64, 64).is_err());
        assert!(latent_shape(5, 64, 64).is_err());
        assert!(latent_shape(1, 8, 64).is_err());
    }

    /// Brute-force triple loop over every index.
    fn compose_oracle(ws: &[f32], c_s: usize, c_in: usize, basis: &[f32], r: usize, k: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; c_s * c_in * k * k];
        for o in 0..c_s {
            for i in 0..c_in {
                for y in 0..k {
                    for x in 0..k {
                        let mut acc = 0.0f32;
                        for j in 0..r {
                            acc += ws[(o * c_in + i) * r + j] * basis[(j * k + y) * k + x];
                        }
                        out[((o * c_in + i) * k + y) * k + x] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn spatial_kernel_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let basis: Vec<f32> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k = compose_spatial_kernel(&[1.0; 6], 3, 2, &basis, 1, 3).unwrap();
        for chunk in k.chunks(9) {
            assert_eq!(chunk, &basis[..]);
        }
        let ws: Vec<f32> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let basis2: Vec<f32> = (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = compose_spatial_kernel(&ws, 2, 1, &basis2, 2, 3).unwrap();
        let slow = compose_oracle(&ws, 2, 1, &basis2, 2, 3);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
        assert!(compose_spatial_kernel(&[0.0; 4], 2, 1, &basis2, 2, 3).unwrap().iter().all(|&x| x == 0.0));
        assert!(compose_spatial_kernel(&[0.0; 5], 2, 1, &basis2, 2, 3).is_err());
    }

    #[test]
    fn modulated_kernel_structure() {
        let cfg = ModelConfig { c_s: 2, ..small_config() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModulatedConvParams::new(3, &cfg, &mut rng);
        let plane = p.c_in * 9;
        let (k00, _) = build_modulated_kernel(&p, AngularCoord::new(1, 0)).unwrap();
        let (k01, _) = build_modulated_kernel(&p, AngularCoord::new(1, 2)).unwrap();
        assert_eq!(k00.len(), 4 * plane);
        assert_eq!(&k00[..3 * plane], &k01[..3 * plane]);
        assert_ne!(&k00[3 * plane..], &k01[3 * plane..]);
        // the u-kernel channel equals W_u[u] composed with B
        let ku = compose_spatial_kernel(&p.w_u[p.c_in * p.rank..2 * p.c_in * p.rank], 1, 3, &p.basis, 2, 3).unwrap();
        assert_eq!(&k00[2 * plane..3 * plane], &ku[..]);
        let c_out = p.c_out();
        p.b_u[c_out..2 * c_out].iter_mut().for_each(|b| *b = 0.0);
        let (_, bias) = build_modulated_kernel(&p, AngularCoord::new(1, 2)).unwrap();
        assert_eq!(&bias[..], &p.b_v[2 * c_out..3 * c_out]);
        assert!(build_modulated_kernel(&p, AngularCoord::new(3, 0)).is_err());
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let model = SanrModel::new(small_config(), 7).unwrap();
        let latents = model.quantized_latents();
        let a = sanr_forward(&model, AngularCoord::new(0, 2), &latents).unwrap();
        let b = sanr_forward(&model, AngularCoord::new(0, 2), &latents).unwrap();
        assert_eq!((a.channels, a.height, a.width), (3, 32, 32));
        assert_eq!(a, b);
        assert!(sanr_forward(&model, AngularCoord::new(0, 2), &latents[..3]).is_err());
    }

    #[test]
    fn block_output_sizes_chain() {
        let cfg = ModelConfig { height: 432, width: 624, c_s: 2, c_l: 1, rank: 1, ..small_config() };
        let model = SanrModel::new(cfg.clone(), 1).unwrap();
        let latents = model.quantized_latents();
        let mut f: Option<Feature> = None;
        let expect = [(54, 78), (108, 156), (216, 312), (432, 624)];
        for (i, block) in model.blocks.iter().enumerate() {
            let out = hsm_block_forward(block, f.as_ref(), &latents[i], AngularCoord::new(1, 1)).unwrap();
            assert_eq!((out.channels, out.height, out.width), (cfg.c_out(), expect[i].0, expect[i].1));
            f = Some(out);
        }
        // a mismatched prior feature is rejected
        let bad = Feature::zeros(cfg.c_out(), 10, 10);
        assert!(hsm_block_forward(&model.blocks[1], Some(&bad), &latents[1], AngularCoord::new(0, 0)).is_err());
    }

    #[test]
    fn distinct_views_render_differently() {
        let model = SanrModel::new(small_config(), 3).unwrap();
        let lf = render_lightfield(&model, &model.quantized_latents()).unwrap();
        let mut views: Vec<&Vec<u8>> = lf.views().iter().collect();
        views.sort();
        views.dedup();
        assert_eq!(views.len(), 9);
    }

    #[test]
    fn recalibrated_norm_whitens_features() {
        let mut model = SanrModel::new(small_config(), 5).unwrap();
        let latents = model.latents();
        recalibrate_norm(&mut model, &latents).unwrap();
        if let Norm::Batch { var, .. } = &model.blocks[0].norm {
            assert!(var.iter().all(|v| *v > 0.0));
        }
    }
}
