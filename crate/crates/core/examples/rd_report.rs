//! Bjøntegaard deltas between two rate-distortion curves, written out as
//! `rd.csv` and `rd.png`.

use std::path::PathBuf;

use sanr::eval::{bd_metrics, emit_reports, RdCurve, RdPoint, ReportMaps};

fn main() -> sanr::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("sanr-rd"));
    let anchor = RdCurve::new(
        "anchor",
        [(0.02, 29.0), (0.05, 31.6), (0.1, 33.5), (0.3, 36.4)].map(|(bpp, psnr)| RdPoint { bpp, psnr }).to_vec(),
    )?;
    let test = RdCurve::new(
        "test",
        [(0.015, 29.8), (0.04, 32.5), (0.08, 34.3), (0.22, 37.0)].map(|(bpp, psnr)| RdPoint { bpp, psnr }).to_vec(),
    )?;
    let (rate, psnr) = bd_metrics(&anchor, &test)?;
    println!("BD-rate {rate:+.2}%  BD-PSNR {psnr:+.3} dB");
    emit_reports(&[anchor, test], &ReportMaps::default(), &out)?;
    println!("report in {}", out.display());
    Ok(())
}
