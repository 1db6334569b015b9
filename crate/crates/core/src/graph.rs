//! Training-mode forward and backward pass over a batch of views.
//!
//! Batch normalization uses the statistics of the batch, so the views of
//! one batch are processed block by block rather than one view at a time.

use crate::lightfield::AngularCoord;
use crate::model::{build_modulated_kernel, Norm, SanrModel, NUM_BLOCKS};
use crate::nn::{self, BatchNormCache, Feature};

/// Gradients of every trainable tensor of a [`SanrModel`], in the slot order
/// of [`param_slots`].
#[derive(Debug, Clone)]
pub(crate) struct Grads {
    pub slots: Vec<Option<Vec<f32>>>,
}

pub(crate) const SLOTS_PER_BLOCK: usize = 9;
pub(crate) const BASIS: usize = 0;
pub(crate) const W_S: usize = 1;
pub(crate) const W_U: usize = 2;
pub(crate) const W_V: usize = 3;
pub(crate) const B_U: usize = 4;
pub(crate) const B_V: usize = 5;
pub(crate) const GAMMA: usize = 6;
pub(crate) const BETA: usize = 7;
pub(crate) const LATENT: usize = 8;
pub(crate) const HEAD: usize = NUM_BLOCKS * SLOTS_PER_BLOCK;
pub(crate) const CTX: usize = HEAD + 2;

pub(crate) fn block_slot(block: usize, offset: usize) -> usize {
    block * SLOTS_PER_BLOCK + offset
}

pub(crate) fn ctx_slot(level: usize, layer: usize, bias: bool) -> usize {
    CTX + level * 6 + layer * 2 + bias as usize
}

/// Mutable handles to every trainable tensor.
pub(crate) fn param_slots(model: &mut SanrModel) -> Vec<&mut Vec<f32>> {
    let mut slots: Vec<&mut Vec<f32>> = Vec::with_capacity(CTX + NUM_BLOCKS * 6);
    for block in &mut model.blocks {
        let conv = &mut block.conv;
        slots.push(&mut conv.basis);
        slots.push(&mut conv.w_s);
        slots.push(&mut conv.w_u);
        slots.push(&mut conv.w_v);
        slots.push(&mut conv.b_u);
        slots.push(&mut conv.b_v);
        match &mut block.norm {
            Norm::Batch { gamma, beta, .. } => {
                slots.push(gamma);
                slots.push(beta);
            }
            Norm::Folded { scale, shift } => {
                slots.push(scale);
                slots.push(shift);
            }
        }
        slots.push(&mut block.latent.values.data);
    }
    slots.push(&mut model.head.weight);
    slots.push(&mut model.head.bias);
    for ctx in &mut model.context_models {
        for layer in &mut ctx.layers {
            slots.push(&mut layer.weight);
            slots.push(&mut layer.bias);
        }
    }
    slots
}

impl Grads {
    pub fn empty() -> Self {
        Self { slots: vec![None; CTX + NUM_BLOCKS * 6] }
    }

    /// Adds `g * factor` into slot `i`.
    pub fn accumulate(&mut self, i: usize, g: &[f32], factor: f32) {
        let slot = self.slots[i].get_or_insert_with(|| vec![0.0; g.len()]);
        for (s, x) in slot.iter_mut().zip(g) {
            *s += factor * x;
        }
    }

    pub fn accumulate_f64(&mut self, i: usize, g: &[f64], factor: f64) {
        let slot = self.slots[i].get_or_insert_with(|| vec![0.0; g.len()]);
        for (s, x) in slot.iter_mut().zip(g) {
            *s += (factor * x) as f32;
        }
    }

    pub fn get_mut(&mut self, i: usize, len: usize) -> &mut Vec<f32> {
        self.slots[i].get_or_insert_with(|| vec![0.0; len])
    }
}

struct BlockCache {
    inputs: Vec<Feature>,
    kernels: Vec<Vec<f32>>,
    pre_act: Vec<Feature>,
    norm: BatchNormCache,
    conv_hw: (usize, usize),
}

/// Result of one training step's forward and backward pass.
pub(crate) struct StepOutput {
    /// Per-view mean squared error in `[0, 1]` units.
    pub view_mse: Vec<f64>,
    pub grads: Grads,
}

/// Runs the batch through `model` (whose QAT tensors should already be on
/// their grid) with the given relaxed latent inputs and back-propagates the
/// summed per-view MSE. Latent gradients are taken with respect to `latents`.
pub(crate) fn mse_step(
    model: &SanrModel,
    latents: &[Feature],
    coords: &[AngularCoord],
    targets: &[&[f32]],
) -> StepOutput {
    let n = coords.len();
    let mut caches: Vec<BlockCache> = Vec::with_capacity(NUM_BLOCKS);
    let mut feats: Vec<Option<Feature>> = vec![None; n];
    for (i, block) in model.blocks.iter().enumerate() {
        let conv = &block.conv;
        let mut inputs = Vec::with_capacity(n);
        let mut kernels = Vec::with_capacity(n);
        let mut ups = Vec::with_capacity(n);
        let mut conv_hw = (0, 0);
        for (f, &coord) in feats.iter().zip(coords) {
            let input = match f {
                Some(f) => Feature::concat(f, &latents[i]),
                None => latents[i].clone(),
            };
            let (kernel, bias) = build_modulated_kernel(conv, coord).expect("coordinate inside the grid");
            let out = nn::conv2d(&input, &kernel, &bias, conv.c_out(), conv.k);
            conv_hw = (out.height, out.width);
            ups.push(nn::resize_nearest(&out, block.out_hw.0, block.out_hw.1));
            inputs.push(input);
            kernels.push(kernel);
        }
        let (gamma, beta) = match &block.norm {
            Norm::Batch { gamma, beta, .. } => (gamma, beta),
            Norm::Folded { .. } => panic!("training a folded model"),
        };
        let (pre_act, norm) = nn::batch_norm_train(&ups, gamma, beta);
        for (f, p) in feats.iter_mut().zip(&pre_act) {
            let mut g = p.clone();
            g.data.iter_mut().for_each(|x| *x = nn::gelu(*x));
            *f = Some(g);
        }
        caches.push(BlockCache { inputs, kernels, pre_act, norm, conv_hw });
    }

    let head = &model.head;
    let mut grads = Grads::empty();
    let mut view_mse = Vec::with_capacity(n);
    let mut d_feats: Vec<Feature> = Vec::with_capacity(n);
    for (f, target) in feats.iter().zip(targets) {
        let f = f.as_ref().expect("four blocks");
        let mut out = nn::conv2d(f, &head.weight, &head.bias, 3, head.k);
        let count = out.data.len() as f64;
        let mut se = 0.0f64;
        for (o, &t) in out.data.iter_mut().zip(target.iter()) {
            let s = nn::sigmoid(*o);
            let e = s - t;
            se += (e as f64) * (e as f64);
            *o = 2.0 * e / count as f32 * s * (1.0 - s);
        }
        view_mse.push(se / count);
        let g = nn::conv2d_backward(f, &head.weight, &out, head.k);
        grads.accumulate(HEAD, &g.kernel, 1.0);
        grads.accumulate(HEAD + 1, &g.bias, 1.0);
        d_feats.push(g.input);
    }

    for i in (0..NUM_BLOCKS).rev() {
        let block = &model.blocks[i];
        let conv = &block.conv;
        let cache = &caches[i];
        let gamma = match &block.norm {
            Norm::Batch { gamma, .. } => gamma,
            Norm::Folded { .. } => unreachable!(),
        };
        for (d, p) in d_feats.iter_mut().zip(&cache.pre_act) {
            for (g, &x) in d.data.iter_mut().zip(&p.data) {
                *g *= nn::gelu_grad(x);
            }
        }
        let (d_ups, d_gamma, d_beta) = nn::batch_norm_backward(&d_feats, &cache.norm, gamma);
        grads.accumulate(block_slot(i, GAMMA), &d_gamma, 1.0);
        grads.accumulate(block_slot(i, BETA), &d_beta, 1.0);

        let (c_out, c_in, r, kk) = (conv.c_out(), conv.c_in, conv.rank, conv.k * conv.k);
        let row = c_in * r;
        let mut next = Vec::with_capacity(n);
        for (v, d_up) in d_ups.iter().enumerate() {
            let d_conv = nn::resize_nearest_backward(d_up, cache.conv_hw.0, cache.conv_hw.1);
            let g = nn::conv2d_backward(&cache.inputs[v], &cache.kernels[v], &d_conv, conv.k);
            // kernel = coeffs (c_out x c_in x r) * basis (r x kk)
            let coeffs = conv.stacked_coefficients(coords[v]);
            let mut d_coeffs = vec![0.0f32; c_out * row];
            let d_basis = grads.get_mut(block_slot(i, BASIS), r * kk);
            for (oi, dk) in g.kernel.chunks_exact(kk).enumerate() {
                for j in 0..r {
                    let bj = &conv.basis[j * kk..(j + 1) * kk];
                    d_coeffs[oi * r + j] = dk.iter().zip(bj).map(|(a, b)| a * b).sum();
                    let c = coeffs[oi * r + j];
                    for (db, &d) in d_basis[j * kk..(j + 1) * kk].iter_mut().zip(dk) {
                        *db += c * d;
                    }
                }
            }
            let (u, vv) = (coords[v].u, coords[v].v);
            grads.accumulate(block_slot(i, W_S), &d_coeffs[..conv.c_s * row], 1.0);
            let du = grads.get_mut(block_slot(i, W_U), conv.w_u.len());
            add(&mut du[u * row..(u + 1) * row], &d_coeffs[conv.c_s * row..(conv.c_s + 1) * row]);
            let dv = grads.get_mut(block_slot(i, W_V), conv.w_v.len());
            add(&mut dv[vv * row..(vv + 1) * row], &d_coeffs[(conv.c_s + 1) * row..]);
            let dbu = grads.get_mut(block_slot(i, B_U), conv.b_u.len());
            add(&mut dbu[u * c_out..(u + 1) * c_out], &g.bias);
            let dbv = grads.get_mut(block_slot(i, B_V), conv.b_v.len());
            add(&mut dbv[vv * c_out..(vv + 1) * c_out], &g.bias);

            let (d_prev, d_latent) = if i > 0 {
                let (a, b) = g.input.split(c_out);
                (Some(a), b)
            } else {
                (None, g.input)
            };
            grads.accumulate(block_slot(i, LATENT), &d_latent.data, 1.0);
            if let Some(d) = d_prev {
                next.push(d);
            }
        }
        d_feats = next;
    }
    StepOutput { view_mse, grads }
}

fn add(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn loss(model: &SanrModel, latents: &[Feature], coords: &[AngularCoord], targets: &[&[f32]]) -> f64 {
        mse_step(model, latents, coords, targets).view_mse.iter().sum()
    }

    /// Central differences through the full batch graph, in f64 on the
    /// summed loss, probing a few entries of every slot.
    #[test]
    fn gradients_match_finite_differences() {
        let cfg = ModelConfig { rank: 2, c_l: 2, ctx_width: 2, ..ModelConfig::new(3, 2, 2, 16, 16) };
        let model = SanrModel::new(cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let latents: Vec<Feature> = model
            .blocks
            .iter()
            .map(|b| {
                let v = &b.latent.values;
                Feature::from_vec(v.channels, v.height, v.width, (0..v.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            })
            .collect();
        let coords = [AngularCoord::new(0, 1), AngularCoord::new(1, 1), AngularCoord::new(1, 0)];
        let targets: Vec<Vec<f32>> = (0..3).map(|_| (0..3 * 256).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let t: Vec<&[f32]> = targets.iter().map(|v| v.as_slice()).collect();
        let out = mse_step(&model, &latents, &coords, &t);

        let h = 1e-2f32;
        let mut checked = 0;
        for slot in 0..HEAD + 2 {
            let g = out.grads.slots[slot].as_ref();
            let len = {
                let mut m = model.clone();
                if slot % SLOTS_PER_BLOCK == LATENT && slot < HEAD {
                    latents[slot / SLOTS_PER_BLOCK].data.len()
                } else {
                    param_slots(&mut m)[slot].len()
                }
            };
            for probe in [0, len / 2, len - 1] {
                let analytic = g.map_or(0.0, |g| g[probe]) as f64;
                let eval = |delta: f32| {
                    let mut m = model.clone();
                    let mut l = latents.clone();
                    if slot % SLOTS_PER_BLOCK == LATENT && slot < HEAD {
                        l[slot / SLOTS_PER_BLOCK].data[probe] += delta;
                    } else {
                        param_slots(&mut m)[slot][probe] += delta;
                    }
                    loss(&m, &l, &coords, &t)
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h as f64);
                let tol = 2e-2 * numeric.abs().max(analytic.abs()) + 2e-6;
                assert!((numeric - analytic).abs() <= tol, "slot {slot} index {probe}: analytic {analytic} numeric {numeric}");
                checked += 1;
            }
        }
        assert_eq!(checked, 3 * (HEAD + 2));
    }
}
