//! Quality and rate metrics, Bjøntegaard deltas, complexity counting and
//! report files.

use std::io::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lightfield::LightField;
use crate::model::{self, ModelConfig, Norm, QatKind, SanrModel, NUM_BLOCKS};
use crate::quant::ptq_uniform;

/// PSNR reported for a view without any error.
pub const PSNR_CAP_DB: f64 = 100.0;

/// PSNR of an 8-bit signal with the given mean squared error.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Per-view PSNR, `per_view[u][v]`, and the mean over all views.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsnrReport {
    pub per_view: Vec<Vec<f64>>,
    pub mean: f64,
}

fn check_dims(a: &LightField, b: &LightField) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::Shape(format!(
            "{}x{} views of {}x{} vs {}x{} views of {}x{}",
            a.u_count(),
            a.v_count(),
            a.height(),
            a.width(),
            b.u_count(),
            b.v_count(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// RGB PSNR per view, averaging the squared error over the three channels.
pub fn psnr(reference: &LightField, recon: &LightField) -> Result<PsnrReport> {
    check_dims(reference, recon)?;
    let mut per_view = vec![vec![0.0; reference.v_count()]; reference.u_count()];
    let mut sum = 0.0;
    for coord in reference.coords() {
        let (a, b) = (reference.view(coord), recon.view(coord));
        let se: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
        let p = psnr_from_mse(se / a.len() as f64);
        per_view[coord.u][coord.v] = p;
        sum += p;
    }
    Ok(PsnrReport { per_view, mean: sum / reference.view_count() as f64 })
}

/// Bits per pixel of a stream covering all `U x V` views.
pub fn bpp(stream_bytes: usize, u: usize, v: usize, h: usize, w: usize) -> f64 {
    stream_bytes as f64 * 8.0 / (u * v * h * w) as f64
}

/// A dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Map {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        Self { rows: rows.len(), cols, data: rows.concat() }
    }

    /// Writes `<stem>.f32` (little-endian `f32`, row-major) and `<stem>.json`
    /// describing its shape.
    pub fn write_raw(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for &x in &self.data {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
        std::fs::write(dir.join(format!("{stem}.f32")), bytes)?;
        let meta = serde_json::json!({
            "shape": [self.rows, self.cols],
            "dtype": "float32",
            "endianness": "little",
            "order": "row-major",
        });
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}

/// Mean absolute 8-bit error per pixel over all views and channels.
pub fn avg_error_map(reference: &LightField, recon: &LightField) -> Result<Map> {
    check_dims(reference, recon)?;
    let (h, w) = (reference.height(), reference.width());
    let mut data = vec![0.0f64; h * w];
    for coord in reference.coords() {
        for (p, (a, b)) in reference.view(coord).chunks_exact(3).zip(recon.view(coord).chunks_exact(3)).enumerate() {
            data[p] += a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum::<f64>();
        }
    }
    let n = (reference.view_count() * 3) as f64;
    data.iter_mut().for_each(|x| *x /= n);
    Ok(Map { rows: h, cols: w, data })
}

/// `U x V` matrix of per-view PSNR.
pub fn per_view_psnr_map(reference: &LightField, recon: &LightField) -> Result<Map> {
    Ok(Map::from_rows(&psnr(reference, recon)?.per_view))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RdPoint {
    pub bpp: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RdCurve {
    pub label: String,
    pub points: Vec<RdPoint>,
}

impl RdCurve {
    /// Sorts by rate; rates must be positive and distinct.
    pub fn new(label: &str, mut points: Vec<RdPoint>) -> Result<Self> {
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        if points.iter().any(|p| !(p.bpp > 0.0) || !p.psnr.is_finite()) {
            return Err(Error::InvalidArgument(format!("curve {label} has a non-positive rate")));
        }
        if points.windows(2).any(|w| w[1].bpp <= w[0].bpp) {
            return Err(Error::InvalidArgument(format!("curve {label} repeats a rate")));
        }
        Ok(Self { label: label.to_string(), points })
    }
}

/// Least-squares cubic `y = c0 + c1 x + c2 x^2 + c3 x^3`.
fn cubic_fit(x: &[f64], y: &[f64]) -> Result<[f64; 4]> {
    let a = DMatrix::from_fn(x.len(), 4, |r, c| x[r].powi(c as i32));
    let b = DVector::from_column_slice(y);
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::InvalidArgument(format!("cubic fit failed: {e}")))?;
    Ok([sol[0], sol[1], sol[2], sol[3]])
}

/// Definite integral of the cubic over `[lo, hi]`.
fn cubic_integral(c: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let prim = |x: f64| c[0] * x + c[1] * x * x / 2.0 + c[2] * x.powi(3) / 3.0 + c[3] * x.powi(4) / 4.0;
    prim(hi) - prim(lo)
}

/// Average difference `test - anchor` of two fitted curves over their
/// common abscissa range.
fn mean_gap(xa: &[f64], ya: &[f64], xt: &[f64], yt: &[f64]) -> Result<f64> {
    let (alo, ahi) = range(xa);
    let (tlo, thi) = range(xt);
    let (lo, hi) = (alo.max(tlo), ahi.min(thi));
    if !(hi > lo) {
        return Err(Error::InvalidArgument("RD curves do not overlap".into()));
    }
    let pa = cubic_fit(xa, ya)?;
    let pt = cubic_fit(xt, yt)?;
    Ok((cubic_integral(&pt, lo, hi) - cubic_integral(&pa, lo, hi)) / (hi - lo))
}

fn range(v: &[f64]) -> (f64, f64) {
    (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Bjøntegaard delta rate (percent) and delta PSNR (dB) of `test` against `anchor`.
pub fn bd_metrics(anchor: &RdCurve, test: &RdCurve) -> Result<(f64, f64)> {
    for c in [anchor, test] {
        if c.points.len() < 4 {
            return Err(Error::InvalidArgument(format!("curve {} needs at least 4 points", c.label)));
        }
    }
    let lr = |c: &RdCurve| c.points.iter().map(|p| p.bpp.log10()).collect::<Vec<_>>();
    let ps = |c: &RdCurve| c.points.iter().map(|p| p.psnr).collect::<Vec<_>>();
    let (ra, pa, rt, pt) = (lr(anchor), ps(anchor), lr(test), ps(test));
    let bd_psnr = mean_gap(&ra, &pa, &rt, &pt)?;
    let log_gap = mean_gap(&pa, &ra, &pt, &rt)?;
    Ok(((10f64.powf(log_gap) - 1.0) * 100.0, bd_psnr))
}

/// Analytic multiply-accumulates of decoding the whole field, per pixel, in thousands.
///
/// Counts every block's convolution at its latent resolution, the per-view
/// kernel assembly, the normalization affine at the upsampled resolution,
/// the head, and the context models run once per field.
pub fn kmac_per_pixel(cfg: &ModelConfig) -> Result<f64> {
    cfg.validate()?;
    let views = (cfg.u_count * cfg.v_count) as f64;
    let kk = (cfg.k * cfg.k) as f64;
    let c_out = cfg.c_out() as f64;
    let mut per_view = 0.0;
    for i in 0..NUM_BLOCKS {
        let (h, w) = cfg.latent_hw(i);
        let (oh, ow) = cfg.block_out_hw(i);
        let c_in = cfg.block_in_channels(i) as f64;
        per_view += (h * w) as f64 * c_in * c_out * kk;
        per_view += c_out * c_in * cfg.rank as f64 * kk;
        per_view += (oh * ow) as f64 * c_out;
    }
    let pixels = (cfg.height * cfg.width) as f64;
    per_view += pixels * 3.0 * c_out * kk;
    let cw = cfg.ctx_width as f64;
    let ctx_per_pixel = 9.0 * (cw + cw * cw + 2.0 * cw);
    let mut ctx = 0.0;
    for i in 0..NUM_BLOCKS {
        let (h, w) = cfg.latent_hw(i);
        ctx += (cfg.c_l.saturating_sub(1) * h * w) as f64 * ctx_per_pixel;
    }
    Ok((per_view * views + ctx) / (views * pixels) / 1000.0)
}

/// A model stored by post-training quantization of every tensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PtqPoint {
    /// Levels plus a 64-bit min/max pair per tensor.
    pub bits: f64,
    pub bpp: f64,
    pub psnr_db: f64,
}

/// Uniformly quantizes every tensor of `model` to `bits` bits and measures
/// the reconstruction: normalization is recalibrated block by block on the
/// quantized convolutions and folded into an affine before it is quantized.
///
/// Latents are not counted, so only a model without scene codes, whose
/// latent noise the decoder regenerates from the seed, gets a complete rate.
pub fn ptq_point(model: &SanrModel, lf: &LightField, bits: u8) -> Result<(PtqPoint, SanrModel)> {
    let mut m = model.clone();
    let quantize = |x: &mut Vec<f32>| -> Result<()> {
        *x = ptq_uniform(x, bits)?.dequantize();
        Ok(())
    };
    for block in &mut m.blocks {
        quantize(&mut block.conv.basis)?;
        for kind in QatKind::ALL {
            quantize(block.conv.qat_mut(kind))?;
        }
    }
    let latents = m.quantized_latents();
    for i in 0..NUM_BLOCKS {
        if matches!(m.blocks[i].norm, Norm::Batch { .. }) {
            model::recalibrate_block(&mut m, &latents, i)?;
            let (scale, shift) = m.blocks[i].norm.affine();
            m.blocks[i].norm = Norm::Folded { scale, shift };
        }
        if let Norm::Folded { scale, shift } = &mut m.blocks[i].norm {
            quantize(scale)?;
            quantize(shift)?;
        }
    }
    quantize(&mut m.head.weight)?;
    quantize(&mut m.head.bias)?;
    if m.config.scene_codes {
        for ctx in &mut m.context_models {
            for layer in &mut ctx.layers {
                quantize(&mut layer.weight)?;
                quantize(&mut layer.bias)?;
            }
        }
    }
    let total_bits = ptq_bits(&m.config, bits)?;
    let recon = model::render_lightfield(&m, &latents)?;
    let point = PtqPoint {
        bits: total_bits,
        bpp: total_bits / lf.pixel_count() as f64,
        psnr_db: psnr(lf, &recon)?.mean,
    };
    Ok((point, m))
}

/// Size of the model [`ptq_point`] stores, in bits.
pub fn ptq_bits(cfg: &ModelConfig, bits: u8) -> Result<f64> {
    let m = SanrModel::new(cfg.clone(), 0)?;
    let mut values = m.qat_param_count() + m.head.weight.len() + m.head.bias.len();
    let mut tensors = NUM_BLOCKS * (1 + QatKind::ALL.len() + 2) + 2;
    values += m.blocks.iter().map(|b| b.conv.basis.len() + 2 * cfg.c_out()).sum::<usize>();
    if cfg.scene_codes {
        values += m.context_models.iter().map(|c| c.param_count()).sum::<usize>();
        tensors += m.context_models.len() * 6;
    }
    Ok((values * bits as usize + tensors * 64) as f64)
}

/// One 3x3 convolution over an image, per pixel, in thousands: the counting oracle's unit case.
pub fn conv_kmac_per_pixel(c_in: usize, c_out: usize, k: usize) -> f64 {
    (c_in * c_out * k * k) as f64 / 1000.0
}

// ---- drawing ----

const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189], [255, 127, 14], [23, 190, 207]];

/// 3x5 glyphs for digits, '.', '-' and 'd' 'B'; each row is 3 bits, MSB left.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        _ => return None,
    })
}

fn draw_text(img: &mut RgbImage, text: &str, x: i64, y: i64, scale: i64, color: Rgb<u8>) {
    let mut cx = x;
    for ch in text.chars() {
        if let Some(g) = glyph(ch) {
            for (row, bits) in g.iter().enumerate() {
                for col in 0..3 {
                    if bits & (4 >> col) != 0 {
                        fill_rect(img, cx + col * scale, y + row as i64 * scale, scale, scale, color);
                    }
                }
            }
        }
        cx += 4 * scale;
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn fill_rect(img: &mut RgbImage, x: i64, y: i64, w: i64, h: i64, color: Rgb<u8>) {
    for yy in y..y + h {
        for xx in x..x + w {
            put(img, xx, yy, color);
        }
    }
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        fill_rect(img, x, y, 2, 2, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Black-red-yellow-white ramp for `t` in `[0, 1]`.
fn heat(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let stops = [[0.0, 0.0, 0.0], [180.0, 20.0, 20.0], [250.0, 200.0, 30.0], [255.0, 255.0, 255.0]];
    let pos = t * 3.0;
    let i = (pos.floor() as usize).min(2);
    let f = pos - i as f64;
    let c: Vec<u8> = (0..3).map(|k| (stops[i][k] + f * (stops[i + 1][k] - stops[i][k])).round() as u8).collect();
    Rgb([c[0], c[1], c[2]])
}

/// Heat-map rendering of a map normalized to its own maximum.
pub fn render_heat_map(map: &Map) -> RgbImage {
    let max = map.data.iter().copied().fold(0.0f64, f64::max);
    let mut img = RgbImage::new(map.cols as u32, map.rows as u32);
    for r in 0..map.rows {
        for c in 0..map.cols {
            let t = if max > 0.0 { map.at(r, c) / max } else { 0.0 };
            img.put_pixel(c as u32, r as u32, heat(t));
        }
    }
    img
}

/// Grid of cells colored by value and annotated with it (one decimal).
pub fn render_view_grid(map: &Map) -> RgbImage {
    const CELL: i64 = 48;
    let (lo, hi) = range(&map.data);
    let mut img = RgbImage::new((map.cols as i64 * CELL) as u32, (map.rows as i64 * CELL) as u32);
    for r in 0..map.rows {
        for c in 0..map.cols {
            let v = map.at(r, c);
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            let bg = heat(0.25 + 0.5 * t);
            let (x, y) = (c as i64 * CELL, r as i64 * CELL);
            fill_rect(&mut img, x + 1, y + 1, CELL - 2, CELL - 2, bg);
            let text = format!("{v:.1}");
            let fg = if t > 0.5 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) };
            let width = text.len() as i64 * 8 - 2;
            draw_text(&mut img, &text, x + (CELL - width) / 2, y + CELL / 2 - 5, 2, fg);
        }
    }
    img
}

/// Rate-distortion plot: bpp on x, PSNR on y, one colored polyline per curve.
pub fn render_rd_plot(curves: &[RdCurve]) -> RgbImage {
    const W: i64 = 640;
    const H: i64 = 480;
    const M: i64 = 48;
    let mut img = RgbImage::from_pixel(W as u32, H as u32, Rgb([255, 255, 255]));
    let pts: Vec<&RdPoint> = curves.iter().flat_map(|c| &c.points).collect();
    let (mut x0, mut x1) = range(&pts.iter().map(|p| p.bpp).collect::<Vec<_>>());
    let (mut y0, mut y1) = range(&pts.iter().map(|p| p.psnr).collect::<Vec<_>>());
    if !(x1 > x0) {
        x0 -= 0.5 * x0.abs().max(1e-3);
        x1 += 0.5 * x1.abs().max(1e-3);
    }
    if !(y1 > y0) {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let map = |p: &RdPoint| {
        let x = M + ((p.bpp - x0) / (x1 - x0) * (W - 2 * M) as f64).round() as i64;
        let y = H - M - ((p.psnr - y0) / (y1 - y0) * (H - 2 * M) as f64).round() as i64;
        (x, y)
    };
    let axis = Rgb([60, 60, 60]);
    draw_line(&mut img, (M, H - M), (W - M, H - M), axis);
    draw_line(&mut img, (M, M), (M, H - M), axis);
    draw_text(&mut img, &format!("{x0:.3}"), M, H - M + 10, 2, axis);
    draw_text(&mut img, &format!("{x1:.3}"), W - M - 40, H - M + 10, 2, axis);
    draw_text(&mut img, &format!("{y1:.1}"), 4, M, 2, axis);
    draw_text(&mut img, &format!("{y0:.1}"), 4, H - M - 10, 2, axis);
    for (i, c) in curves.iter().enumerate() {
        let color = Rgb(PALETTE[i % PALETTE.len()]);
        for w in c.points.windows(2) {
            draw_line(&mut img, map(&w[0]), map(&w[1]), color);
        }
        for p in &c.points {
            let (x, y) = map(p);
            fill_rect(&mut img, x - 3, y - 3, 7, 7, color);
        }
    }
    img
}

/// Maps to emit next to the RD data.
#[derive(Debug, Clone, Default)]
pub struct ReportMaps {
    /// `(name, H x W mean absolute error)`.
    pub error_maps: Vec<(String, Map)>,
    /// `(name, U x V per-view PSNR)`.
    pub view_maps: Vec<(String, Map)>,
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Writes `rd.csv`, `rd.png` and every map as PNG plus raw `.f32`/`.json`.
pub fn emit_reports(curves: &[RdCurve], maps: &ReportMaps, out_dir: &Path) -> Result<()> {
    if curves.is_empty() || curves.iter().all(|c| c.points.is_empty()) {
        return Err(Error::InvalidArgument("no RD points to report".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut csv = Vec::new();
    writeln!(csv, "label,bpp,psnr_db")?;
    for c in curves {
        for p in &c.points {
            writeln!(csv, "{},{:.6},{:.4}", c.label, p.bpp, p.psnr)?;
        }
    }
    std::fs::write(out_dir.join("rd.csv"), csv)?;
    save_png(&render_rd_plot(curves), &out_dir.join("rd.png"))?;
    for (name, m) in &maps.error_maps {
        save_png(&render_heat_map(m), &out_dir.join(format!("{name}.png")))?;
        m.write_raw(out_dir, name)?;
    }
    for (name, m) in &maps.view_maps {
        save_png(&render_view_grid(m), &out_dir.join(format!("{name}.png")))?;
        m.write_raw(out_dir, name)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightfield::AngularCoord;

    fn solid(u: usize, v: usize, h: usize, w: usize, value: u8) -> LightField {
        LightField::new(u, v, h, w, vec![vec![value; h * w * 3]; u * v]).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = solid(2, 3, 4, 5, 0);
        let r = psnr(&a, &a).unwrap();
        assert!(r.per_view.iter().flatten().all(|&p| p == PSNR_CAP_DB));
        assert_eq!((r.per_view.len(), r.per_view[0].len()), (2, 3));
        let b = solid(2, 3, 4, 5, 255);
        assert_eq!(psnr(&a, &b).unwrap().mean, 0.0);
        assert!((psnr_from_mse(255.0 * 255.0 / 10.0) - 10.0).abs() < 1e-12);
        assert!(psnr(&a, &solid(2, 2, 4, 5, 0)).is_err());
    }

    #[test]
    fn mean_is_mean_of_matrix() {
        let a = solid(2, 2, 3, 3, 10);
        let mut views: Vec<Vec<u8>> = a.views().to_vec();
        views[1][4] = 90;
        views[2].iter_mut().for_each(|x| *x = 13);
        let b = LightField::new(2, 2, 3, 3, views).unwrap();
        let r = psnr(&a, &b).unwrap();
        let m: f64 = r.per_view.iter().flatten().sum::<f64>() / 4.0;
        assert_eq!(r.mean, m);
    }

    #[test]
    fn bpp_examples() {
        assert!((bpp(1000, 9, 9, 64, 64) - 8000.0 / 331776.0).abs() < 1e-15);
        assert_eq!(bpp(0, 9, 9, 64, 64), 0.0);
        assert_eq!(bpp(2000, 9, 9, 64, 64), 2.0 * bpp(1000, 9, 9, 64, 64));
    }

    #[test]
    fn error_map_examples() {
        let a = solid(2, 2, 3, 4, 100);
        assert!(avg_error_map(&a, &a).unwrap().data.iter().all(|&x| x == 0.0));
        assert!(avg_error_map(&a, &solid(2, 2, 3, 4, 101)).unwrap().data.iter().all(|&x| x == 1.0));
        let mut views = a.views().to_vec();
        let idx = a.index_of(AngularCoord::new(1, 0));
        views[idx][0] = 140; // pixel 0, red channel: 40 of error
        let b = LightField::new(2, 2, 3, 4, views).unwrap();
        let m = avg_error_map(&a, &b).unwrap();
        assert!((m.at(0, 0) - 40.0 / 3.0 / 4.0).abs() < 1e-12);
        assert_eq!(m.at(0, 1), 0.0);
    }

    fn curve(label: &str, pts: &[(f64, f64)]) -> RdCurve {
        RdCurve::new(label, pts.iter().map(|&(bpp, psnr)| RdPoint { bpp, psnr }).collect()).unwrap()
    }

    #[test]
    fn bd_oracles() {
        let anchor = curve("a", &[(0.05, 30.0), (0.1, 33.0), (0.2, 35.5), (0.4, 37.2)]);
        let (r, p) = bd_metrics(&anchor, &anchor).unwrap();
        assert!(r.abs() < 1e-9 && p.abs() < 1e-9);
        let halved = curve("h", &anchor.points.iter().map(|p| (p.bpp / 2.0, p.psnr)).collect::<Vec<_>>());
        assert!((bd_metrics(&anchor, &halved).unwrap().0 + 50.0).abs() < 0.1);
        let up = curve("u", &anchor.points.iter().map(|p| (p.bpp, p.psnr + 1.0)).collect::<Vec<_>>());
        assert!((bd_metrics(&anchor, &up).unwrap().1 - 1.0).abs() < 1e-6);
        let short = curve("s", &[(0.1, 30.0), (0.2, 31.0), (0.3, 32.0)]);
        assert!(bd_metrics(&anchor, &short).is_err());
        let far = curve("f", &[(10.0, 50.0), (11.0, 51.0), (12.0, 52.0), (13.0, 53.0)]);
        assert!(bd_metrics(&anchor, &far).is_err());
    }

    #[test]
    fn kmac_counts() {
        assert_eq!(conv_kmac_per_pixel(1, 1, 3), 0.009);
        assert_eq!(conv_kmac_per_pixel(2, 1, 3), 2.0 * conv_kmac_per_pixel(1, 1, 3));
        let a = kmac_per_pixel(&ModelConfig::new(48, 9, 9, 64, 64)).unwrap();
        let b = kmac_per_pixel(&ModelConfig::new(48, 9, 9, 128, 128)).unwrap();
        assert!((a - b).abs() / b < 0.01, "{a} vs {b}");
        // within an order of magnitude of 4.07 kMAC/pixel at the lowest rate point
        let paper_scale = kmac_per_pixel(&ModelConfig::new(48, 9, 9, 432, 624)).unwrap();
        assert!((0.407..=40.7).contains(&paper_scale), "{paper_scale}");
    }

    #[test]
    fn emitted_csv_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let c = curve("sanr", &[(0.1, 30.0), (0.2, 33.0)]);
        let maps = ReportMaps {
            error_maps: vec![("err".into(), Map { rows: 2, cols: 3, data: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0] })],
            view_maps: vec![("views".into(), Map { rows: 2, cols: 2, data: vec![30.0, 31.5, 32.0, 33.25] })],
        };
        emit_reports(std::slice::from_ref(&c), &maps, dir.path()).unwrap();
        let first = std::fs::read(dir.path().join("rd.csv")).unwrap();
        assert_eq!(String::from_utf8_lossy(&first).lines().count(), 3);
        emit_reports(&[c], &maps, dir.path()).unwrap();
        assert_eq!(std::fs::read(dir.path().join("rd.csv")).unwrap(), first);
        assert_eq!(std::fs::read(dir.path().join("err.f32")).unwrap().len(), 24);
        assert!(dir.path().join("views.png").exists());
        assert!(emit_reports(&[], &maps, dir.path()).is_err());
    }
}
