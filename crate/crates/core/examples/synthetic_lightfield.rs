//! Renders a synthetic 5x5 light field with one pixel of disparity per view
//! step and writes it as PNGs plus `meta.json`.
//!
//! ```text
//! cargo run --example synthetic_lightfield -- /tmp/field
//! ```

use std::path::PathBuf;

use sanr::lightfield::{make_synthetic_lightfield, save_lightfield, ViewNaming};
use sanr::AngularCoord;

fn main() -> sanr::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("sanr-synthetic"));
    let lf = make_synthetic_lightfield(96, 128, 5, 5, 1.0, 7)?;
    save_lightfield(&lf, &dir, &ViewNaming::default(), "synthetic")?;

    let center = AngularCoord::new(2, 2);
    let corner = AngularCoord::new(0, 0);
    let diff: u64 = lf
        .view(center)
        .iter()
        .zip(lf.view(corner))
        .map(|(&a, &b)| (a as i64 - b as i64).unsigned_abs())
        .sum();
    println!("{} views of {}x{} in {}", lf.view_count(), lf.height(), lf.width(), dir.display());
    println!("mean |center - corner| = {:.2}", diff as f64 / lf.view(center).len() as f64);
    Ok(())
}
