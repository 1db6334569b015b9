//! Light field containers, PNG directory I/O and synthetic fixtures.
//!
//! A light field is a `U x V` grid of sub-aperture images (SAIs). Views are
//! stored row-major with `u` as the outer (horizontal view) index and `v` as
//! the inner (vertical view) index. Every view is an interleaved 8-bit RGB
//! buffer of `height x width` pixels.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete angular position of a view inside the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AngularCoord {
    pub u: usize,
    pub v: usize,
}

impl AngularCoord {
    pub fn new(u: usize, v: usize) -> Self {
        Self { u, v }
    }
}

/// A `U x V` array of RGB sub-aperture images sharing one spatial size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LightField {
    u_count: usize,
    v_count: usize,
    height: usize,
    width: usize,
    views: Vec<Vec<u8>>,
}

/// Sidecar written next to the view PNGs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LightFieldMeta {
    #[serde(rename = "U")]
    pub u: usize,
    #[serde(rename = "V")]
    pub v: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub dataset_name: String,
    /// Color space the codec fits and measures in.
    #[serde(default = "default_color_space")]
    pub color_space: String,
}

fn default_color_space() -> String {
    "RGB".to_string()
}

impl LightField {
    /// Builds a light field from row-major views (`u` outer, `v` inner).
    pub fn new(
        u_count: usize,
        v_count: usize,
        height: usize,
        width: usize,
        views: Vec<Vec<u8>>,
    ) -> Result<Self> {
        if u_count == 0 || v_count == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument("light field dimensions must be positive".into()));
        }
        if views.len() != u_count * v_count {
            return Err(Error::Shape(format!(
                "expected {} views, got {}",
                u_count * v_count,
                views.len()
            )));
        }
        let expect = height * width * 3;
        if let Some(i) = views.iter().position(|view| view.len() != expect) {
            return Err(Error::Shape(format!(
                "view ({},{}) holds {} bytes, expected {expect}",
                i / v_count,
                i % v_count,
                views[i].len()
            )));
        }
        Ok(Self { u_count, v_count, height, width, views })
    }

    pub fn u_count(&self) -> usize {
        self.u_count
    }

    pub fn v_count(&self) -> usize {
        self.v_count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn view_count(&self) -> usize {
        self.u_count * self.v_count
    }

    /// Total number of pixels over every view, the bpp denominator.
    pub fn pixel_count(&self) -> usize {
        self.view_count() * self.height * self.width
    }

    pub fn contains(&self, coord: AngularCoord) -> bool {
        coord.u < self.u_count && coord.v < self.v_count
    }

    pub fn index_of(&self, coord: AngularCoord) -> usize {
        coord.u * self.v_count + coord.v
    }

    pub fn coord_of(&self, index: usize) -> AngularCoord {
        AngularCoord::new(index / self.v_count, index % self.v_count)
    }

    /// Every coordinate in storage order.
    pub fn coords(&self) -> impl Iterator<Item = AngularCoord> + '_ {
        (0..self.view_count()).map(move |i| self.coord_of(i))
    }

    /// Interleaved RGB bytes of one view.
    pub fn view(&self, coord: AngularCoord) -> &[u8] {
        &self.views[self.index_of(coord)]
    }

    pub fn views(&self) -> &[Vec<u8>] {
        &self.views
    }

    pub fn pixel(&self, coord: AngularCoord, y: usize, x: usize) -> [u8; 3] {
        let view = self.view(coord);
        let o = (y * self.width + x) * 3;
        [view[o], view[o + 1], view[o + 2]]
    }

    /// Planar `[3][H][W]` copy of one view scaled to `[0, 1]`.
    pub fn view_planar_f32(&self, coord: AngularCoord) -> Vec<f32> {
        let view = self.view(coord);
        let plane = self.height * self.width;
        let mut out = vec![0.0f32; 3 * plane];
        for (p, px) in view.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = px[c] as f32 / 255.0;
            }
        }
        out
    }

    pub fn same_dims(&self, other: &LightField) -> bool {
        self.u_count == other.u_count
            && self.v_count == other.v_count
            && self.height == other.height
            && self.width == other.width
    }

    pub fn meta(&self, dataset_name: &str) -> LightFieldMeta {
        LightFieldMeta {
            u: self.u_count,
            v: self.v_count,
            h: self.height,
            w: self.width,
            dataset_name: dataset_name.to_string(),
            color_space: default_color_space(),
        }
    }
}

/// File naming scheme for a directory of view PNGs.
///
/// A pattern contains `{u}` and `{v}` placeholders which expand to two-digit
/// zero-padded indices. The default is `view_{u}_{v}.png`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewNaming {
    pattern: String,
}

impl Default for ViewNaming {
    fn default() -> Self {
        Self { pattern: "view_{u}_{v}.png".to_string() }
    }
}

impl ViewNaming {
    pub fn new(pattern: &str) -> Result<Self> {
        let u_at = pattern.find("{u}");
        let v_at = pattern.find("{v}");
        match (u_at, v_at) {
            (Some(a), Some(b)) if a < b => Ok(Self { pattern: pattern.to_string() }),
            _ => Err(Error::InvalidArgument(format!(
                "naming pattern {pattern:?} needs {{u}} followed by {{v}}"
            ))),
        }
    }

    pub fn file_name(&self, coord: AngularCoord) -> String {
        self.pattern
            .replace("{u}", &format!("{:02}", coord.u))
            .replace("{v}", &format!("{:02}", coord.v))
    }

    /// Inverse of [`ViewNaming::file_name`].
    pub fn parse(&self, name: &str) -> Option<AngularCoord> {
        let u_at = self.pattern.find("{u}")?;
        let v_at = self.pattern.find("{v}")?;
        let prefix = &self.pattern[..u_at];
        let middle = &self.pattern[u_at + 3..v_at];
        let suffix = &self.pattern[v_at + 3..];
        let rest = name.strip_prefix(prefix)?.strip_suffix(suffix)?;
        let split = if middle.is_empty() { 2.min(rest.len()) } else { rest.find(middle)? };
        let (u_str, tail) = rest.split_at(split);
        let v_str = tail.strip_prefix(middle)?;
        let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
        if !digits(u_str) || !digits(v_str) {
            return None;
        }
        Some(AngularCoord::new(u_str.parse().ok()?, v_str.parse().ok()?))
    }
}

/// Loads every view of a light field stored as one PNG per view.
///
/// The grid size comes from `meta.json` when present, otherwise from the
/// largest indices found in the directory.
pub fn load_lightfield(dir: &Path, naming: &ViewNaming) -> Result<LightField> {
    let meta_path = dir.join("meta.json");
    let (u_count, v_count) = if meta_path.exists() {
        let meta: LightFieldMeta = serde_json::from_slice(&fs::read(&meta_path)?)?;
        (meta.u, meta.v)
    } else {
        let mut found = HashSet::new();
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            if let Some(coord) = entry.file_name().to_str().and_then(|n| naming.parse(n)) {
                found.insert(coord);
            }
        }
        if found.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no view files found in {}",
                dir.display()
            )));
        }
        let u = found.iter().map(|c| c.u).max().unwrap_or(0) + 1;
        let v = found.iter().map(|c| c.v).max().unwrap_or(0) + 1;
        (u, v)
    };

    // Completeness first so a missing file is reported before any decoding.
    for u in 0..u_count {
        for v in 0..v_count {
            if !dir.join(naming.file_name(AngularCoord::new(u, v))).is_file() {
                return Err(Error::MissingView(u, v));
            }
        }
    }

    let mut views = Vec::with_capacity(u_count * v_count);
    let mut dims: Option<(u32, u32)> = None;
    for u in 0..u_count {
        for v in 0..v_count {
            let path = dir.join(naming.file_name(AngularCoord::new(u, v)));
            let img = image::open(&path)
                .map_err(|source| Error::Image { path: path.clone(), source })?
                .into_rgb8();
            let (w, h) = img.dimensions();
            match dims {
                None => dims = Some((h, w)),
                Some((want_h, want_w)) if (want_h, want_w) != (h, w) => {
                    return Err(Error::InconsistentDimensions {
                        u,
                        v,
                        got_h: h,
                        got_w: w,
                        want_h,
                        want_w,
                    })
                }
                Some(_) => {}
            }
            views.push(img.into_raw());
        }
    }
    let (h, w) = dims.unwrap_or((0, 0));
    LightField::new(u_count, v_count, h as usize, w as usize, views)
}

/// Writes every view as a lossless PNG plus a `meta.json` sidecar.
pub fn save_lightfield(
    lf: &LightField,
    dir: &Path,
    naming: &ViewNaming,
    dataset_name: &str,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    for coord in lf.coords() {
        let path = dir.join(naming.file_name(coord));
        image::save_buffer(
            &path,
            lf.view(coord),
            lf.width() as u32,
            lf.height() as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|source| Error::Image { path, source })?;
    }
    let meta = serde_json::to_vec_pretty(&lf.meta(dataset_name))?;
    fs::write(dir.join("meta.json"), meta)?;
    Ok(())
}

/// Keeps the central `target_u x target_v` views and trims `crop_left`
/// columns and `crop_top` rows from every view.
pub fn crop_and_center(
    lf: &LightField,
    target_u: usize,
    target_v: usize,
    crop_left: usize,
    crop_top: usize,
) -> Result<LightField> {
    if target_u == 0 || target_v == 0 || target_u > lf.u_count || target_v > lf.v_count {
        return Err(Error::InvalidArgument(format!(
            "target {target_u}x{target_v} exceeds available {}x{} views",
            lf.u_count, lf.v_count
        )));
    }
    if crop_left >= lf.width || crop_top >= lf.height {
        return Err(Error::InvalidArgument(format!(
            "crop ({crop_left}, {crop_top}) exceeds view size {}x{}",
            lf.height, lf.width
        )));
    }
    let u0 = (lf.u_count - target_u) / 2;
    let v0 = (lf.v_count - target_v) / 2;
    let h = lf.height - crop_top;
    let w = lf.width - crop_left;
    let mut views = Vec::with_capacity(target_u * target_v);
    for u in u0..u0 + target_u {
        for v in v0..v0 + target_v {
            let src = lf.view(AngularCoord::new(u, v));
            let mut out = Vec::with_capacity(h * w * 3);
            for y in crop_top..lf.height {
                let row = (y * lf.width + crop_left) * 3;
                out.extend_from_slice(&src[row..row + w * 3]);
            }
            views.push(out);
        }
    }
    LightField::new(target_u, target_v, h, w, views)
}

/// Smooth procedural RGB texture evaluated at continuous coordinates.
struct Texture {
    waves: Vec<[f32; 5]>,
    blobs: Vec<[f32; 6]>,
}

impl Texture {
    fn new(seed: u64, h: usize, w: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau = std::f32::consts::TAU;
        let waves = (0..6)
            .map(|_| {
                let wavelength = rng.gen_range(10.0f32..40.0);
                let angle = rng.gen_range(0.0..tau);
                let phase = rng.gen_range(0.0..tau);
                let amp = rng.gen_range(0.04f32..0.10);
                let channel = rng.gen_range(0..3) as f32;
                [tau / wavelength * angle.cos(), tau / wavelength * angle.sin(), phase, amp, channel]
            })
            .collect();
        let extent = h.min(w) as f32;
        let blobs = (0..4)
            .map(|_| {
                let cx = rng.gen_range(0.0..w as f32);
                let cy = rng.gen_range(0.0..h as f32);
                let radius = rng.gen_range(0.12f32..0.3) * extent;
                [cx, cy, radius, rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)]
            })
            .collect();
        Self { waves, blobs }
    }

    fn sample(&self, x: f32, y: f32) -> [f32; 3] {
        let mut rgb = [0.5f32, 0.45, 0.4];
        for wave in &self.waves {
            let s = (wave[0] * x + wave[1] * y + wave[2]).sin() * wave[3];
            let c = wave[4] as usize;
            rgb[c] += s;
            rgb[(c + 1) % 3] += 0.5 * s;
        }
        for blob in &self.blobs {
            let d2 = (x - blob[0]).powi(2) + (y - blob[1]).powi(2);
            let g = (-d2 / (2.0 * blob[2] * blob[2])).exp();
            for c in 0..3 {
                rgb[c] += blob[3 + c] * g;
            }
        }
        rgb
    }
}

/// Deterministic textured light field: view `(u, v)` samples a shared base
/// texture at `(x + d (u - uc), y + d (v - vc))`.
pub fn make_synthetic_lightfield(
    h: usize,
    w: usize,
    u_count: usize,
    v_count: usize,
    disparity: f32,
    seed: u64,
) -> Result<LightField> {
    if h < 16 || w < 16 || u_count == 0 || v_count == 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic field needs h, w >= 16 and a non-empty grid, got {h}x{w}, {u_count}x{v_count}"
        )));
    }
    if !disparity.is_finite()
        || disparity.abs() * u_count.max(v_count) as f32 >= h.min(w) as f32 / 4.0
    {
        return Err(Error::InvalidArgument(format!(
            "disparity {disparity} too large for {h}x{w} views on a {u_count}x{v_count} grid"
        )));
    }
    let texture = Texture::new(seed, h, w);
    let uc = (u_count as f32 - 1.0) / 2.0;
    let vc = (v_count as f32 - 1.0) / 2.0;
    let mut views = Vec::with_capacity(u_count * v_count);
    for u in 0..u_count {
        for v in 0..v_count {
            let dx = disparity * (u as f32 - uc);
            let dy = disparity * (v as f32 - vc);
            let mut view = Vec::with_capacity(h * w * 3);
            for y in 0..h {
                for x in 0..w {
                    let rgb = texture.sample(x as f32 + dx, y as f32 + dy);
                    view.extend(rgb.iter().map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
                }
            }
            views.push(view);
        }
    }
    LightField::new(u_count, v_count, h, w, views)
}
