//! Per-view kernel assembly: a shared spatial part plus one horizontal and
//! one vertical channel selected by the angular coordinate, all composed
//! from a small set of kernel bases.

use sanr::model::{build_modulated_kernel, ModelConfig, SanrModel};
use sanr::AngularCoord;

fn main() -> sanr::Result<()> {
    let cfg = ModelConfig::new(8, 5, 5, 64, 64);
    let model = SanrModel::new(cfg.clone(), 11)?;
    let conv = &model.blocks[1].conv;
    let per_out = conv.c_in * cfg.k * cfg.k;

    let (a, bias_a) = build_modulated_kernel(conv, AngularCoord::new(0, 0))?;
    let (b, bias_b) = build_modulated_kernel(conv, AngularCoord::new(4, 2))?;
    let differs = |o: usize| a[o * per_out..(o + 1) * per_out] != b[o * per_out..(o + 1) * per_out];
    let changed: Vec<usize> = (0..conv.c_out()).filter(|&o| differs(o)).collect();
    println!("kernel {}x{}x{}x{}", conv.c_out(), conv.c_in, cfg.k, cfg.k);
    println!("output channels that change between views (0,0) and (4,2): {changed:?}");
    println!("bias changes in {} of {} channels", bias_a.iter().zip(&bias_b).filter(|(x, y)| x != y).count(), bias_a.len());
    println!("stored coefficients {} vs dense per-view kernels {}", conv.qat_param_count() + conv.basis.len(), a.len() * 25);
    Ok(())
}
