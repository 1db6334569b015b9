//! Trains a small model on a synthetic field, writes the stream, decodes it
//! and checks the decoded views against the encoder's own reconstruction.

use sanr::bitstream::{deserialize_model, finalize, serialize_model};
use sanr::eval;
use sanr::lightfield::make_synthetic_lightfield;
use sanr::model::{render_lightfield, ModelConfig};
use sanr::train::{fit, TrainConfig};

fn main() -> sanr::Result<()> {
    let lf = make_synthetic_lightfield(32, 32, 3, 3, 1.0, 2)?;
    let mcfg = ModelConfig { rank: 4, c_l: 4, ..ModelConfig::new(12, 3, 3, 32, 32) };
    let tcfg = TrainConfig { lambda: 1e-3, max_epochs: 6, sga_epochs: 1, samples_per_sai: 20, seed: 4, ..TrainConfig::default() };

    let (trained, report) = fit(&lf, &mcfg, &tcfg)?;
    println!("{} iterations in {:.1}s, stopped on {}", report.iterations, report.wall_clock_s, report.stop_reason);

    let encoder_side = finalize(&trained)?;
    let bytes = serialize_model(&encoder_side)?;
    let decoded = deserialize_model(&bytes)?;

    let a = render_lightfield(&encoder_side, &encoder_side.latents())?;
    let b = render_lightfield(&decoded, &decoded.latents())?;
    assert!(a == b, "decoder disagrees with the encoder");

    let bpp = eval::bpp(bytes.len(), lf.u_count(), lf.v_count(), lf.height(), lf.width());
    println!("{} bytes, {bpp:.3} bpp (estimated {:.3}), {:.2} dB", bytes.len(), report.estimated_bpp, eval::psnr(&lf, &b)?.mean);
    Ok(())
}
