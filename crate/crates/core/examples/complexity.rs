//! Decoder multiply-accumulates per pixel for the four rate presets on a
//! 9x9 field of 432x624 views.

use sanr::eval::kmac_per_pixel;
use sanr::model::ModelConfig;

fn main() -> sanr::Result<()> {
    for (name, c_s) in [("r1", 48), ("r2", 93), ("r3", 123), ("r4", 163)] {
        let cfg = ModelConfig::new(c_s, 9, 9, 432, 624);
        println!("{name}: C_S = {c_s:>3}  {:>7.2} kMAC/pixel", kmac_per_pixel(&cfg)?);
    }
    Ok(())
}
