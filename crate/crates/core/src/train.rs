//! Rate-distortion training: the QAT loop and SGA fine-tuning.
//!
//! Rates enter the loss normalized to bits per pixel of the whole light
//! field, so `lambda` weighs bpp against the summed per-view MSE of a batch.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::{self, ContextGrads, LaplaceParams, LatentView};
use crate::error::{Error, Result};
use crate::graph::{self, block_slot, ctx_slot, Grads};
use crate::lightfield::{AngularCoord, LightField};
use crate::model::{self, LatentSceneCode, ModelConfig, Norm, QatKind, SanrModel};
use crate::nn::Feature;
use crate::quant::{self, SgaSchedule, SgaState};

/// Optimization schedule and rate-distortion trade-off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr_init: f64,
    pub max_epochs: usize,
    pub sga_epochs: usize,
    /// Draws of every view per epoch.
    pub samples_per_sai: usize,
    pub batch_views: usize,
    /// One iteration in this many includes the rate term.
    pub rd_update_period: usize,
    /// Epochs without improvement before the learning rate is halved.
    pub plateau_patience: usize,
    /// Training stops on the halving after this many.
    pub lr_halvings_max: usize,
    pub seed: u64,
    pub fast_preset: bool,
    /// Train through straight-through weight quantization.
    pub qat: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            lr_init: 0.01,
            max_epochs: 30,
            sga_epochs: 6,
            samples_per_sai: 500,
            batch_views: 5,
            rd_update_period: 5,
            plateau_patience: 2,
            lr_halvings_max: 2,
            seed: 0,
            fast_preset: false,
            qat: true,
        }
    }
}

impl TrainConfig {
    /// 6 QAT epochs followed by a single SGA epoch.
    pub fn fast(lambda: f64, seed: u64) -> Self {
        Self { lambda, seed, max_epochs: 6, sga_epochs: 1, fast_preset: true, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr_init)));
        }
        let counts = [
            ("max_epochs", self.max_epochs),
            ("samples_per_sai", self.samples_per_sai),
            ("batch_views", self.batch_views),
            ("rd_update_period", self.rd_update_period),
            ("plateau_patience", self.plateau_patience),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: String,
    /// Mean per-view MSE in `[0, 1]` units.
    pub mse: f64,
    pub psnr_db: f64,
    pub rate_latents_bits: f64,
    pub rate_weights_bits: f64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub iterations: usize,
    /// Iterations (0-based, counted across phases) whose step included the rate term.
    #[serde(skip)]
    pub rate_step_iters: Vec<usize>,
    pub wall_clock_s: f64,
    pub stop_reason: String,
    pub final_lr: f64,
    /// Estimated `(R(y) + R(w)) / pixels` of the final model.
    pub estimated_bpp: f64,
    /// Actual stream size, once the model has been serialized.
    pub coded_bpp: Option<f64>,
    pub final_psnr_db: f64,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// Loss trace, the part of a report that must repeat under a fixed seed.
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "epoch,phase,mse,psnr_db,rate_latents_bits,rate_weights_bits,loss,lr")?;
        for e in &self.epochs {
            writeln!(
                f,
                "{},{},{:.9e},{:.4},{:.1},{:.1},{:.9e},{:.6e}",
                e.epoch, e.phase, e.mse, e.psnr_db, e.rate_latents_bits, e.rate_weights_bits, e.loss, e.lr
            )?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Sum over views of the per-view mean squared error.
pub fn mse_loss(x: &[&[f32]], x_hat: &[&[f32]]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::Shape(format!("{} targets vs {} reconstructions", x.len(), x_hat.len())));
    }
    let mut total = 0.0;
    for (a, b) in x.iter().zip(x_hat) {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::Shape(format!("view of {} values vs {}", a.len(), b.len())));
        }
        let se: f64 = a.iter().zip(b.iter()).map(|(p, q)| ((p - q) as f64).powi(2)).sum();
        total += se / a.len() as f64;
    }
    Ok(total)
}

/// `mse + lambda * (r_latents + r_weights)`.
pub fn rd_loss(mse: f64, r_latents: f64, r_weights: f64, lambda: f64) -> f64 {
    mse + lambda * (r_latents + r_weights)
}

/// Adam with per-tensor step counts; tensors without a gradient keep their
/// moments untouched.
struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: Vec<i32>,
}

impl Adam {
    const BETA1: f32 = 0.9;
    const BETA2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(slots: usize) -> Self {
        Self { m: vec![Vec::new(); slots], v: vec![Vec::new(); slots], t: vec![0; slots] }
    }

    fn step(&mut self, model: &mut SanrModel, grads: &Grads, lr: f64) {
        let lr = lr as f32;
        for (i, p) in graph::param_slots(model).into_iter().enumerate() {
            let Some(g) = &grads.slots[i] else { continue };
            if self.m[i].is_empty() {
                self.m[i] = vec![0.0; p.len()];
                self.v[i] = vec![0.0; p.len()];
            }
            self.t[i] += 1;
            let c1 = 1.0 - Self::BETA1.powi(self.t[i]);
            let c2 = 1.0 - Self::BETA2.powi(self.t[i]);
            for (((w, &g), m), v) in p.iter_mut().zip(g).zip(&mut self.m[i]).zip(&mut self.v[i]) {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Entropy-coding statistics of one QAT tensor: integers and their fitted Laplace.
pub fn qat_tensor_stats(values: &[f32], scale: f32) -> Result<(Vec<i32>, LaplaceParams)> {
    let ints = quant::quantize_ints(values, scale)?;
    let params = entropy::fit_laplace(&ints)?;
    Ok((ints, params))
}

/// `R(w)` over every QAT tensor, each under its own fitted Laplace.
pub fn weight_rate_bits(model: &SanrModel) -> Result<f64> {
    let mut bits = 0.0;
    for block in &model.blocks {
        for kind in QatKind::ALL {
            let (ints, params) = qat_tensor_stats(block.conv.qat(kind), block.conv.scales[kind.index()])?;
            bits += entropy::laplace_rate(&ints, params).bits;
        }
    }
    Ok(bits)
}

/// First-channel statistics of a latent level.
pub fn first_channel_params(latent: &Feature) -> Result<LaplaceParams> {
    let c0 = latent.channel(0);
    if c0.len() < 2 {
        return LaplaceParams::new(c0.first().copied().unwrap_or(0.0), 1.0);
    }
    entropy::fit_laplace(c0)
}

/// `R(y)` of the given (integer-valued) latents under the model's context models.
pub fn latent_rate_bits(model: &SanrModel, latents: &[LatentSceneCode]) -> Result<f64> {
    if !model.config.scene_codes {
        return Ok(0.0);
    }
    let mut bits = 0.0;
    for (l, ctx) in latents.iter().zip(&model.context_models) {
        let v = &l.values;
        let view = LatentView::new(v.channels, v.height, v.width, &v.data)?;
        bits += entropy::latent_rate(view, ctx, first_channel_params(v)?)?.bits;
    }
    Ok(bits)
}

/// Quality and rate of a model under hard rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub mse: f64,
    pub psnr_db: f64,
    pub rate_latents_bits: f64,
    pub rate_weights_bits: f64,
    /// Eq. (6) at `batch_views` times the mean view MSE, matching the scale of a training step.
    pub loss: f64,
}

impl EvalPoint {
    pub fn estimated_bpp(&self, lf: &LightField) -> f64 {
        (self.rate_latents_bits + self.rate_weights_bits) / lf.pixel_count() as f64
    }
}

/// Quantizes weights (when `qat`), hard-rounds latents, recalibrates the
/// normalization statistics over all views and measures the full field.
///
/// Returns the evaluated point and the recalibrated quantized model.
pub fn evaluate(model: &SanrModel, lf: &LightField, lambda: f64, batch_views: usize, qat: bool) -> Result<(EvalPoint, SanrModel)> {
    let mut q = if qat { model.with_quantized_weights() } else { model.clone() };
    let latents = q.quantized_latents();
    model::recalibrate_norm(&mut q, &latents)?;
    let mut mse_sum = 0.0;
    let mut se8 = 0.0;
    for coord in lf.coords() {
        let img = model::sanr_forward(&q, coord, &latents)?;
        let target = lf.view_planar_f32(coord);
        mse_sum += mse_loss(&[&target], &[&img.data])?;
        let rgb = model::to_rgb8(&img);
        se8 += rgb
            .iter()
            .zip(lf.view(coord))
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>();
    }
    let mse = mse_sum / lf.view_count() as f64;
    let mse8 = se8 / (lf.pixel_count() * 3) as f64;
    let psnr_db = if mse8 == 0.0 { 100.0 } else { (10.0 * (255.0f64 * 255.0 / mse8).log10()).min(100.0) };
    let rate_latents_bits = latent_rate_bits(&q, &latents)?;
    let rate_weights_bits = if qat { weight_rate_bits(model)? } else { 0.0 };
    let pixels = lf.pixel_count() as f64;
    let loss = rd_loss(batch_views as f64 * mse, rate_latents_bits / pixels, rate_weights_bits / pixels, lambda);
    Ok((EvalPoint { mse, psnr_db, rate_latents_bits, rate_weights_bits, loss }, q))
}

fn check_fit(lf: &LightField, mcfg: &ModelConfig) -> Result<()> {
    if (lf.u_count(), lf.v_count(), lf.height(), lf.width())
        != (mcfg.u_count, mcfg.v_count, mcfg.height, mcfg.width)
    {
        return Err(Error::Shape(format!(
            "model is {}x{} views of {}x{}, light field is {}x{} views of {}x{}",
            mcfg.u_count,
            mcfg.v_count,
            mcfg.height,
            mcfg.width,
            lf.u_count(),
            lf.v_count(),
            lf.height(),
            lf.width()
        )));
    }
    Ok(())
}

enum Relax<'a> {
    /// Additive uniform noise.
    Noise,
    /// Annealed stochastic rounding.
    Sga(&'a mut SgaState),
}

/// Mutable state of one optimization phase.
struct Phase<'a> {
    lf: &'a LightField,
    targets: Vec<Vec<f32>>,
    tcfg: &'a TrainConfig,
    rng: ChaCha8Rng,
    adam: Adam,
    report: &'a mut TrainReport,
    started: Instant,
}

impl<'a> Phase<'a> {
    fn new(lf: &'a LightField, tcfg: &'a TrainConfig, rng: ChaCha8Rng, report: &'a mut TrainReport) -> Self {
        let targets = lf.coords().map(|c| lf.view_planar_f32(c)).collect();
        Self { lf, targets, tcfg, rng, adam: Adam::new(graph::CTX + 24), report, started: Instant::now() }
    }

    fn batches(&mut self) -> Vec<Vec<AngularCoord>> {
        let mut draws: Vec<usize> = (0..self.lf.view_count())
            .flat_map(|i| std::iter::repeat(i).take(self.tcfg.samples_per_sai))
            .collect();
        draws.shuffle(&mut self.rng);
        draws
            .chunks(self.tcfg.batch_views)
            .map(|c| c.iter().map(|&i| self.lf.coord_of(i)).collect())
            .collect()
    }

    /// One optimizer step. Returns the training loss of the step.
    fn step(&mut self, model: &mut SanrModel, coords: &[AngularCoord], relax: &mut Relax<'_>, lr: f64, epoch: usize) -> Result<f64> {
        let tcfg = self.tcfg;
        let scene = model.config.scene_codes;
        let iteration = self.report.iterations;
        let rate_step = tcfg.lambda > 0.0 && iteration % tcfg.rd_update_period == 0;

        // relaxed latents and d relaxed / d latent
        let mut relaxed = Vec::with_capacity(model::NUM_BLOCKS);
        let mut chain: Vec<Option<Vec<f32>>> = Vec::with_capacity(model::NUM_BLOCKS);
        for block in &model.blocks {
            let y = &block.latent.values;
            if !scene {
                relaxed.push(y.clone());
                chain.push(None);
                continue;
            }
            let (values, grad) = match relax {
                Relax::Noise => (quant::add_uniform_noise(&y.data, &mut self.rng), None),
                Relax::Sga(state) => {
                    let tau = state.temperature();
                    let s = quant::sga_sample(&y.data, tau, &mut state.rng)?;
                    (s.values, Some(s.grad))
                }
            };
            relaxed.push(Feature::from_vec(y.channels, y.height, y.width, values));
            chain.push(grad);
        }

        let forward_model = if tcfg.qat { model.with_quantized_weights() } else { model.clone() };
        let index: Vec<usize> = coords.iter().map(|&c| self.lf.index_of(c)).collect();
        let targets: Vec<&[f32]> = index.iter().map(|&i| self.targets[i].as_slice()).collect();
        let out = graph::mse_step(&forward_model, &relaxed, coords, &targets);
        let mut grads = out.grads;
        let mut loss: f64 = out.view_mse.iter().sum();
        for (i, c) in chain.iter().enumerate() {
            if let (Some(c), Some(g)) = (c, grads.slots[block_slot(i, graph::LATENT)].as_mut()) {
                g.iter_mut().zip(c).for_each(|(g, c)| *g *= c);
            }
        }

        if rate_step {
            self.report.rate_step_iters.push(iteration);
            let factor = tcfg.lambda / self.lf.pixel_count() as f64;
            let mut bits = 0.0;
            if tcfg.qat {
                for (i, block) in model.blocks.iter().enumerate() {
                    for kind in QatKind::ALL {
                        let s = block.conv.scales[kind.index()];
                        let (ints, p) = qat_tensor_stats(block.conv.qat(kind), s)?;
                        let g = entropy::laplace_rate_grad(&ints, p.mu as f64, p.b as f64);
                        bits += g.bits;
                        grads.accumulate_f64(block_slot(i, 1 + kind.index()), &g.d_values, factor / s as f64);
                    }
                }
            }
            if scene {
                for (i, y) in relaxed.iter().enumerate() {
                    let ctx = &model.context_models[i];
                    let mut cg = ContextGrads::zeros(ctx);
                    let first = first_channel_params(&y.rounded())?;
                    let view = LatentView::new(y.channels, y.height, y.width, &y.data)?;
                    let g = entropy::latent_rate_grad(view, ctx, first, &mut cg)?;
                    bits += g.bits;
                    let d: Vec<f64> = match &chain[i] {
                        Some(c) => g.d_latents.iter().zip(c).map(|(a, &b)| a * b as f64).collect(),
                        None => g.d_latents,
                    };
                    grads.accumulate_f64(block_slot(i, graph::LATENT), &d, factor);
                    for layer in 0..3 {
                        grads.accumulate_f64(ctx_slot(i, layer, false), &cg.weight[layer], factor);
                        grads.accumulate_f64(ctx_slot(i, layer, true), &cg.bias[layer], factor);
                    }
                }
            }
            loss += factor * bits;
        }

        if !scene {
            for i in 0..model::NUM_BLOCKS {
                grads.slots[block_slot(i, graph::LATENT)] = None;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, iteration, loss });
        }
        self.adam.step(model, &grads, lr);
        self.report.iterations += 1;
        if let Relax::Sga(state) = relax {
            state.advance();
        }
        Ok(loss)
    }

    fn record(&mut self, model: &SanrModel, epoch: usize, phase: &str, lr: f64) -> Result<EvalPoint> {
        let (point, _) = evaluate(model, self.lf, self.tcfg.lambda, self.tcfg.batch_views, self.tcfg.qat)?;
        if !point.loss.is_finite() {
            return Err(Error::Diverged { epoch, iteration: self.report.iterations, loss: point.loss });
        }
        self.report.epochs.push(EpochRecord {
            epoch,
            phase: phase.to_string(),
            mse: point.mse,
            psnr_db: point.psnr_db,
            rate_latents_bits: point.rate_latents_bits,
            rate_weights_bits: point.rate_weights_bits,
            loss: point.loss,
            lr,
        });
        self.report.wall_clock_s += self.started.elapsed().as_secs_f64();
        self.started = Instant::now();
        Ok(point)
    }
}

trait Rounded {
    fn rounded(&self) -> Feature;
}

impl Rounded for Feature {
    fn rounded(&self) -> Feature {
        let mut f = self.clone();
        f.data.iter_mut().for_each(|x| *x = quant::round_half_away(*x));
        f
    }
}

fn finish(model: &mut SanrModel, lf: &LightField, tcfg: &TrainConfig, report: &mut TrainReport, lr: f64) -> Result<()> {
    let (point, calibrated) = evaluate(model, lf, tcfg.lambda, tcfg.batch_views, tcfg.qat)?;
    for (b, c) in model.blocks.iter_mut().zip(&calibrated.blocks) {
        if let (Norm::Batch { mean, var, .. }, Norm::Batch { mean: cm, var: cv, .. }) = (&mut b.norm, &c.norm) {
            mean.clone_from(cm);
            var.clone_from(cv);
        }
    }
    report.final_lr = lr;
    report.final_psnr_db = point.psnr_db;
    report.estimated_bpp = point.estimated_bpp(lf);
    Ok(())
}

/// QAT training with plateau-driven learning-rate halving.
///
/// Each epoch draws every view `samples_per_sai` times in shuffled batches of
/// `batch_views`. One iteration in `rd_update_period` adds the rate term.
/// After every epoch the model is evaluated with quantized weights and
/// hard-rounded latents; two epochs in a row without a lower loss halve the
/// learning rate, and the halving after `lr_halvings_max` ends training.
pub fn train(lf: &LightField, mcfg: &ModelConfig, tcfg: &TrainConfig) -> Result<(SanrModel, TrainReport)> {
    tcfg.validate()?;
    mcfg.validate()?;
    check_fit(lf, mcfg)?;
    let mut model = SanrModel::new(mcfg.clone(), tcfg.seed)?;
    let mut report = TrainReport::default();
    let mut lr = tcfg.lr_init;
    let rng = ChaCha8Rng::seed_from_u64(tcfg.seed.wrapping_add(0x7261_696e));
    let mut phase = Phase::new(lf, tcfg, rng, &mut report);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut halvings = 0;
    let mut reason = "max_epochs".to_string();
    for epoch in 1..=tcfg.max_epochs {
        for batch in phase.batches() {
            phase.step(&mut model, &batch, &mut Relax::Noise, lr, epoch)?;
        }
        let point = phase.record(&model, epoch, "qat", lr)?;
        if point.loss < best {
            best = point.loss;
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= tcfg.plateau_patience {
            stale = 0;
            halvings += 1;
            if halvings > tcfg.lr_halvings_max {
                reason = format!("plateau after {} halvings", tcfg.lr_halvings_max);
                break;
            }
            lr *= 0.5;
        }
    }
    report.stop_reason = reason;
    finish(&mut model, lf, tcfg, &mut report, lr)?;
    Ok((model, report))
}

/// Replaces latent noise by annealed stochastic rounding for `sga_epochs`
/// more epochs at the learning rate the QAT run ended with, then rounds the
/// latents. Epoch records are appended to `report`.
pub fn sga_finetune(model: SanrModel, lf: &LightField, tcfg: &TrainConfig, report: &mut TrainReport) -> Result<SanrModel> {
    tcfg.validate()?;
    check_fit(lf, &model.config)?;
    if tcfg.sga_epochs == 0 || !model.config.scene_codes {
        return Ok(model);
    }
    let mut model = model;
    let lr = if report.final_lr > 0.0 { report.final_lr } else { tcfg.lr_init };
    let per_epoch = (lf.view_count() * tcfg.samples_per_sai).div_ceil(tcfg.batch_views);
    let schedule = SgaSchedule { total_steps: per_epoch * tcfg.sga_epochs, ..SgaSchedule::default() };
    let mut state = SgaState::new(schedule, ChaCha8Rng::seed_from_u64(tcfg.seed.wrapping_add(0x5a61)))?;
    let rng = ChaCha8Rng::seed_from_u64(tcfg.seed.wrapping_add(0x5a62));
    let first_epoch = report.epochs.len() + 1;
    {
        let mut phase = Phase::new(lf, tcfg, rng, report);
        for e in 0..tcfg.sga_epochs {
            let mut relax = Relax::Sga(&mut state);
            for batch in phase.batches() {
                phase.step(&mut model, &batch, &mut relax, lr, first_epoch + e)?;
            }
            if e + 1 < tcfg.sga_epochs {
                phase.record(&model, first_epoch + e, "sga", lr)?;
            }
        }
        for block in &mut model.blocks {
            block.latent = block.latent.rounded();
        }
        phase.record(&model, first_epoch + tcfg.sga_epochs - 1, "sga", lr)?;
    }
    finish(&mut model, lf, tcfg, report, lr)?;
    Ok(model)
}

/// QAT training followed by SGA fine-tuning.
pub fn fit(lf: &LightField, mcfg: &ModelConfig, tcfg: &TrainConfig) -> Result<(SanrModel, TrainReport)> {
    let (model, mut report) = train(lf, mcfg, tcfg)?;
    let model = sga_finetune(model, lf, tcfg, &mut report)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightfield::make_synthetic_lightfield;

    #[test]
    fn mse_loss_examples() {
        let a = vec![0.25f32; 12];
        assert_eq!(mse_loss(&[&a], &[&a]).unwrap(), 0.0);
        let zeros = vec![0.0f32; 12];
        let ones = vec![1.0f32; 12];
        assert_eq!(mse_loss(&[&zeros], &[&ones]).unwrap(), 1.0);
        let half = vec![0.5f32; 12];
        // per-view MSE 1.0 and 0.25 sum to 1.25
        assert_eq!(mse_loss(&[&zeros, &zeros], &[&ones, &half]).unwrap(), 1.25);
        assert!(mse_loss(&[&zeros], &[&ones[..6]]).is_err());
        assert!(mse_loss(&[&zeros], &[]).is_err());
    }

    #[test]
    fn rd_loss_examples() {
        assert_eq!(rd_loss(0.3, 10.0, 20.0, 0.0), 0.3);
        assert_eq!(rd_loss(0.0, 3.0, 4.0, 1.0), 7.0);
        let base = rd_loss(0.0, 3.0, 4.0, 0.25);
        assert_eq!(rd_loss(0.0, 3.0, 4.0, 0.5), 2.0 * base);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_views: 0, ..Default::default() }.validate().is_err());
        let fast = TrainConfig::fast(0.01, 3);
        assert_eq!((fast.max_epochs, fast.sga_epochs), (6, 1));
    }

    fn tiny() -> (LightField, ModelConfig) {
        let lf = make_synthetic_lightfield(32, 32, 3, 3, 1.0, 5).unwrap();
        let mcfg = ModelConfig { rank: 2, c_l: 4, ctx_width: 4, ..ModelConfig::new(8, 3, 3, 32, 32) };
        (lf, mcfg)
    }

    #[test]
    fn rate_term_every_period() {
        let (lf, mcfg) = tiny();
        let tcfg = TrainConfig { lambda: 1e-3, samples_per_sai: 5, max_epochs: 2, sga_epochs: 0, ..Default::default() };
        let (_, report) = train(&lf, &mcfg, &tcfg).unwrap();
        assert_eq!(report.iterations, 18);
        for window in 0..=report.iterations - 5 {
            let n = report.rate_step_iters.iter().filter(|&&i| i >= window && i < window + 5).count();
            assert_eq!(n, 1, "window starting at {window}");
        }
        let (_, silent) = train(&lf, &mcfg, &TrainConfig { lambda: 0.0, ..tcfg }).unwrap();
        assert!(silent.rate_step_iters.is_empty());
    }

    #[test]
    fn sga_zero_epochs_is_identity() {
        let (lf, mcfg) = tiny();
        let tcfg = TrainConfig { samples_per_sai: 5, max_epochs: 1, sga_epochs: 0, ..Default::default() };
        let (model, mut report) = train(&lf, &mcfg, &tcfg).unwrap();
        let before = report.clone();
        let after = sga_finetune(model.clone(), &lf, &tcfg, &mut report).unwrap();
        assert_eq!(after, model);
        assert_eq!(report, before);
    }

    #[test]
    fn sga_finishes_on_integers() {
        let (lf, mcfg) = tiny();
        let tcfg = TrainConfig { lambda: 1e-3, samples_per_sai: 5, max_epochs: 1, sga_epochs: 1, ..Default::default() };
        let (model, report) = fit(&lf, &mcfg, &tcfg).unwrap();
        assert!(model.blocks.iter().all(|b| b.latent.values.data.iter().all(|v| v.fract() == 0.0)));
        assert_eq!(report.epochs.last().unwrap().phase, "sga");
    }
}
