//! Byte accounting of a stream: header, coded weights, coded latents and the
//! 16-bit raw section.
//!
//! With no argument an untrained model with rounded random latents is used.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sanr::bitstream::{finalize, inspect, serialize_model, tensor_costs};
use sanr::model::{ModelConfig, SanrModel};

fn main() -> sanr::Result<()> {
    let bytes = match std::env::args().nth(1) {
        Some(path) => std::fs::read(path)?,
        None => {
            let mut m = SanrModel::new(ModelConfig::new(16, 3, 3, 64, 64), 9)?;
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for b in &mut m.blocks {
                b.latent.values.data.iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
            }
            let m = finalize(&m)?;
            for cost in tensor_costs(&m)? {
                println!("{:<22}{:>10.0} estimated {:>8} coded bits", cost.name, cost.estimated_bits, cost.coded_bits);
            }
            serialize_model(&m)?
        }
    };
    let info = inspect(&bytes)?;
    println!("{:?}", info.header);
    for s in &info.sections {
        println!("{:<10}{:>8} bytes", s.kind.name(), s.bytes);
    }
    println!("total {} bytes, raw share {:.1}%, {:.3} bpp", info.total_bytes(), info.raw_share() * 100.0, info.bpp());
    Ok(())
}
