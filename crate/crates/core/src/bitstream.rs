//! The `.sanr` container.
//!
//! ```text
//! header   "SANR" version:u8 U:u8 V:u8 H:u16 W:u16 C_S:u16 r:u8 C_l:u8 k:u8 sections:u8
//! section  kind:u8 length:u32 body[length]
//! footer   crc32:u32 over every preceding byte
//! ```
//!
//! All integers are little-endian and floats are IEEE-754 `f32`. There is one
//! weight section (all range-coded QAT tensors), one latent section per level
//! and one raw section holding the 16-bit tensors.

use crate::coder::{LaplaceCdf, RangeDecoder, RangeEncoder};
use crate::entropy::{self, ChannelModel, ContextModel, CtxLayer, LaplaceParams, LatentView};
use crate::error::{Error, Result};
use crate::model::{
    self, LatentSceneCode, ModelConfig, ModulatedConvParams, Norm, QatKind, SanrModel, NUM_BLOCKS,
};
use crate::nn::Feature;
use crate::quant::{self, ptq_uniform16};
use crate::train::{first_channel_params, qat_tensor_stats};

pub const MAGIC: &[u8; 4] = b"SANR";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 17;
pub const SECTION_HEADER_BYTES: usize = 5;
pub const CRC_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum SectionKind {
    Weights = 1,
    Latents = 2,
    Raw = 3,
}

impl SectionKind {
    fn from_u8(b: u8) -> Result<Self> {
        match b {
            1 => Ok(Self::Weights),
            2 => Ok(Self::Latents),
            3 => Ok(Self::Raw),
            _ => Err(Error::CorruptPayload(format!("unknown section kind {b}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Weights => "weights",
            Self::Latents => "latents",
            Self::Raw => "raw16",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub version: u8,
    pub u_count: u8,
    pub v_count: u8,
    pub height: u16,
    pub width: u16,
    pub c_s: u16,
    pub rank: u8,
    pub c_l: u8,
    pub k: u8,
    pub sections: u8,
}

impl BitstreamHeader {
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        out.push(self.u_count);
        out.push(self.v_count);
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.c_s.to_le_bytes());
        out.extend_from_slice(&[self.rank, self.c_l, self.k, self.sections]);
    }

    /// Parses and gates magic and version.
    pub fn read(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(Error::Truncated);
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = *bytes.get(4).ok_or(Error::Truncated)?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let mut r = Reader::new(bytes);
        r.skip(5)?;
        Ok(Self {
            version,
            u_count: r.u8()?,
            v_count: r.u8()?,
            height: r.u16()?,
            width: r.u16()?,
            c_s: r.u16()?,
            rank: r.u8()?,
            c_l: r.u8()?,
            k: r.u8()?,
            sections: r.u8()?,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn skip(&mut self, n: usize) -> Result<()> {
        self.take(n).map(|_| ())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let rank = self.u8()? as usize;
        (0..rank).map(|_| self.u16().map(|d| d as usize)).collect()
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn put_dims(out: &mut Vec<u8>, dims: &[usize]) -> Result<()> {
    out.push(dims.len() as u8);
    for &d in dims {
        let d = u16::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u16")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(())
}

/// Weight record tensor ids: `block * 16 + kind`.
fn weight_id(block: usize, kind: QatKind) -> u16 {
    (block * 16 + kind.index()) as u16
}

const RAW_BASIS: usize = 8;
const RAW_NORM_SCALE: usize = 9;
const RAW_NORM_SHIFT: usize = 10;
const RAW_HEAD: u16 = 64;
const RAW_CTX: u16 = 80;

/// Snaps a trained model onto its transmitted grid: QAT tensors to
/// `ints * scale`, latents to integers, kernel bases to 16 bits, then block
/// by block recalibrates and folds normalization into a 16-bit affine, and
/// finally stores head and context models at 16 bits.
pub fn finalize(model: &SanrModel) -> Result<SanrModel> {
    if model.finalized {
        return Ok(model.clone());
    }
    if !model.config.scene_codes {
        return Err(Error::InvalidArgument("a model without scene codes has nothing to transmit as latents".into()));
    }
    let mut m = model.with_quantized_weights();
    for block in &mut m.blocks {
        block.conv.basis = ptq_uniform16(&block.conv.basis)?.dequantize();
        block.latent = block.latent.rounded();
    }
    let latents = m.latents();
    for i in 0..NUM_BLOCKS {
        model::recalibrate_block(&mut m, &latents, i)?;
        let (scale, shift) = m.blocks[i].norm.affine();
        m.blocks[i].norm = Norm::Folded {
            scale: ptq_uniform16(&scale)?.dequantize(),
            shift: ptq_uniform16(&shift)?.dequantize(),
        };
    }
    m.head.weight = ptq_uniform16(&m.head.weight)?.dequantize();
    m.head.bias = ptq_uniform16(&m.head.bias)?.dequantize();
    for ctx in &mut m.context_models {
        for layer in &mut ctx.layers {
            layer.weight = ptq_uniform16(&layer.weight)?.dequantize();
            layer.bias = ptq_uniform16(&layer.bias)?.dequantize();
        }
    }
    m.finalized = true;
    Ok(m)
}

/// Range codes integers under one Laplace over their own min/max support.
pub fn encode_weight_ints(ints: &[i32], params: LaplaceParams) -> Result<(Vec<u8>, i32, i32)> {
    let lo = ints.iter().copied().min().unwrap_or(0);
    let hi = ints.iter().copied().max().unwrap_or(0);
    let cdf = LaplaceCdf::new(lo, hi, params.mu as f64, params.b as f64)?;
    let mut enc = RangeEncoder::new();
    for &s in ints {
        enc.encode_symbol(s, &cdf)?;
    }
    Ok((enc.finish(), lo, hi))
}

fn channel_cdf(model: &ChannelModel, i: usize, lo: i32, hi: i32) -> Result<LaplaceCdf> {
    let (mu, b) = model.params(i);
    LaplaceCdf::new(lo, hi, mu, b)
}

/// Range codes an integer-valued latent level: channel 0 under `first`,
/// every later channel under the context model's prediction from the one
/// before it.
pub fn encode_latent_level(values: &Feature, ctx: &ContextModel, first: LaplaceParams) -> Result<(Vec<u8>, i32, i32)> {
    let ints: Vec<i32> = values.data.iter().map(|&v| v as i32).collect();
    let lo = ints.iter().copied().min().unwrap_or(0);
    let hi = ints.iter().copied().max().unwrap_or(0);
    let (h, w, plane) = (values.height, values.width, values.plane());
    let mut enc = RangeEncoder::new();
    for c in 0..values.channels {
        let prev: Option<Vec<f64>> = (c > 0).then(|| values.channel(c - 1).iter().map(|&v| v as f64).collect());
        let cm = ChannelModel::for_channel(c, prev.as_deref(), h, w, ctx, first)?;
        for (i, &s) in ints[c * plane..(c + 1) * plane].iter().enumerate() {
            enc.encode_symbol(s, &channel_cdf(&cm, i, lo, hi)?)?;
        }
    }
    Ok((enc.finish(), lo, hi))
}

/// Inverse of [`encode_latent_level`].
#[allow(clippy::too_many_arguments)]
pub fn decode_latent_level(
    payload: &[u8],
    channels: usize,
    h: usize,
    w: usize,
    ctx: &ContextModel,
    first: LaplaceParams,
    lo: i32,
    hi: i32,
) -> Result<Feature> {
    let plane = h * w;
    let mut data = vec![0.0f32; channels * plane];
    let mut dec = RangeDecoder::new(payload)?;
    for c in 0..channels {
        let prev: Option<Vec<f64>> = (c > 0).then(|| data[(c - 1) * plane..c * plane].iter().map(|&v| v as f64).collect());
        let cm = ChannelModel::for_channel(c, prev.as_deref(), h, w, ctx, first)?;
        for i in 0..plane {
            data[c * plane + i] = dec.decode_symbol(&channel_cdf(&cm, i, lo, hi)?)? as f32;
        }
    }
    Ok(Feature::from_vec(channels, h, w, data))
}

/// A tensor in the raw section.
struct RawTensor {
    id: u16,
    dims: Vec<usize>,
    values: Vec<f32>,
}

fn raw_tensors(m: &SanrModel) -> Result<Vec<RawTensor>> {
    let cfg = &m.config;
    let mut out = Vec::new();
    for (i, block) in m.blocks.iter().enumerate() {
        out.push(RawTensor { id: (i * 16 + RAW_BASIS) as u16, dims: vec![cfg.rank, cfg.k, cfg.k], values: block.conv.basis.clone() });
        let Norm::Folded { scale, shift } = &block.norm else {
            return Err(Error::NotFinalized);
        };
        out.push(RawTensor { id: (i * 16 + RAW_NORM_SCALE) as u16, dims: vec![scale.len()], values: scale.clone() });
        out.push(RawTensor { id: (i * 16 + RAW_NORM_SHIFT) as u16, dims: vec![shift.len()], values: shift.clone() });
    }
    out.push(RawTensor { id: RAW_HEAD, dims: vec![3, cfg.c_out(), cfg.k, cfg.k], values: m.head.weight.clone() });
    out.push(RawTensor { id: RAW_HEAD + 1, dims: vec![3], values: m.head.bias.clone() });
    for (l, ctx) in m.context_models.iter().enumerate() {
        for (j, layer) in ctx.layers.iter().enumerate() {
            let id = RAW_CTX + (l * 8 + j * 2) as u16;
            out.push(RawTensor { id, dims: vec![layer.c_out, layer.c_in, 3, 3], values: layer.weight.clone() });
            out.push(RawTensor { id: id + 1, dims: vec![layer.c_out], values: layer.bias.clone() });
        }
    }
    Ok(out)
}

fn push_section(out: &mut Vec<u8>, kind: SectionKind, body: &[u8]) {
    out.push(kind as u8);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(body);
}

/// Writes a finalized model as a `.sanr` byte stream.
pub fn serialize_model(m: &SanrModel) -> Result<Vec<u8>> {
    if !m.finalized {
        return Err(Error::NotFinalized);
    }
    let cfg = &m.config;
    let narrow = |v: usize, what: &str| -> Result<u8> {
        u8::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} = {v} does not fit the header")))
    };
    let header = BitstreamHeader {
        version: VERSION,
        u_count: narrow(cfg.u_count, "U")?,
        v_count: narrow(cfg.v_count, "V")?,
        height: cfg.height as u16,
        width: cfg.width as u16,
        c_s: u16::try_from(cfg.c_s).map_err(|_| Error::InvalidArgument("C_S exceeds u16".into()))?,
        rank: narrow(cfg.rank, "r")?,
        c_l: narrow(cfg.c_l, "C_l")?,
        k: narrow(cfg.k, "k")?,
        sections: (2 + NUM_BLOCKS) as u8,
    };
    let mut out = Vec::new();
    header.write(&mut out);

    let mut body = Vec::new();
    body.extend_from_slice(&((NUM_BLOCKS * QatKind::ALL.len()) as u16).to_le_bytes());
    for (i, block) in m.blocks.iter().enumerate() {
        for kind in QatKind::ALL {
            let scale = block.conv.scales[kind.index()];
            let (ints, params) = qat_tensor_stats(block.conv.qat(kind), scale)?;
            let (payload, lo, hi) = encode_weight_ints(&ints, params)?;
            body.extend_from_slice(&weight_id(i, kind).to_le_bytes());
            put_dims(&mut body, &block.conv.qat_shape(kind))?;
            for f in [scale, params.mu, params.b] {
                body.extend_from_slice(&f.to_le_bytes());
            }
            body.extend_from_slice(&lo.to_le_bytes());
            body.extend_from_slice(&hi.to_le_bytes());
            body.extend_from_slice(&(payload.len() as u32).to_le_bytes());
            body.extend_from_slice(&payload);
        }
    }
    push_section(&mut out, SectionKind::Weights, &body);

    for (i, block) in m.blocks.iter().enumerate() {
        let v = &block.latent.values;
        let first = first_channel_params(v)?;
        let (payload, lo, hi) = encode_latent_level(v, &m.context_models[i], first)?;
        let mut body = vec![(i + 1) as u8];
        put_dims(&mut body, &[v.channels, v.height, v.width])?;
        body.extend_from_slice(&first.mu.to_le_bytes());
        body.extend_from_slice(&first.b.to_le_bytes());
        body.extend_from_slice(&lo.to_le_bytes());
        body.extend_from_slice(&hi.to_le_bytes());
        body.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        body.extend_from_slice(&payload);
        push_section(&mut out, SectionKind::Latents, &body);
    }

    let raws = raw_tensors(m)?;
    let mut body = Vec::new();
    body.extend_from_slice(&(raws.len() as u16).to_le_bytes());
    for t in &raws {
        let q = ptq_uniform16(&t.values)?;
        body.extend_from_slice(&t.id.to_le_bytes());
        put_dims(&mut body, &t.dims)?;
        body.extend_from_slice(&q.min.to_le_bytes());
        body.extend_from_slice(&q.max.to_le_bytes());
        for l in &q.levels {
            body.extend_from_slice(&l.to_le_bytes());
        }
    }
    push_section(&mut out, SectionKind::Raw, &body);

    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Checks magic, version, length and checksum; returns the header and the
/// `(kind, body)` sections.
fn open(bytes: &[u8]) -> Result<(BitstreamHeader, Vec<(SectionKind, &[u8])>)> {
    let header = BitstreamHeader::read(bytes)?;
    if bytes.len() < HEADER_BYTES + CRC_BYTES {
        return Err(Error::Truncated);
    }
    let (data, footer) = bytes.split_at(bytes.len() - CRC_BYTES);
    let stored = u32::from_le_bytes(footer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(data);
    if stored != computed {
        // a short stream fails the checksum too; report what actually happened
        let mut r = Reader::new(&data[HEADER_BYTES..]);
        for _ in 0..header.sections {
            if r.skip(1).and_then(|_| r.u32()).and_then(|n| r.skip(n as usize)).is_err() {
                return Err(Error::Truncated);
            }
        }
        return Err(Error::CrcFailure { stored, computed });
    }
    let mut r = Reader::new(&data[HEADER_BYTES..]);
    let mut sections = Vec::with_capacity(header.sections as usize);
    for _ in 0..header.sections {
        let kind = SectionKind::from_u8(r.u8()?)?;
        let len = r.u32()? as usize;
        sections.push((kind, r.take(len)?));
    }
    if !r.done() {
        return Err(Error::CorruptPayload("trailing bytes after the last section".into()));
    }
    Ok((header, sections))
}

fn expect_dims(got: &[usize], want: &[usize], what: &str) -> Result<()> {
    if got != want {
        return Err(Error::CorruptPayload(format!("{what} has dims {got:?}, expected {want:?}")));
    }
    Ok(())
}

/// Reads a `.sanr` stream back into a finalized model.
pub fn deserialize_model(bytes: &[u8]) -> Result<SanrModel> {
    let (h, sections) = open(bytes)?;
    let mut weights: Vec<(u16, Vec<usize>, f32, Vec<i32>)> = Vec::new();
    let mut latent_bodies: Vec<&[u8]> = Vec::new();
    let mut raws: Vec<(u16, Vec<usize>, Vec<f32>)> = Vec::new();
    for (kind, body) in sections {
        let mut r = Reader::new(body);
        match kind {
            SectionKind::Weights => {
                let count = r.u16()?;
                for _ in 0..count {
                    let id = r.u16()?;
                    let dims = r.dims()?;
                    let (scale, mu, b) = (r.f32()?, r.f32()?, r.f32()?);
                    let (lo, hi) = (r.i32()?, r.i32()?);
                    let len = r.u32()? as usize;
                    let payload = r.take(len)?;
                    let n: usize = dims.iter().product();
                    let cdf = LaplaceCdf::new(lo, hi, mu as f64, b as f64)
                        .map_err(|e| Error::CorruptPayload(format!("weight record {id}: {e}")))?;
                    let mut dec = RangeDecoder::new(payload)?;
                    let ints = (0..n).map(|_| dec.decode_symbol(&cdf)).collect::<Result<Vec<i32>>>()?;
                    weights.push((id, dims, scale, ints));
                }
            }
            SectionKind::Latents => latent_bodies.push(body),
            SectionKind::Raw => {
                let count = r.u16()?;
                for _ in 0..count {
                    let id = r.u16()?;
                    let dims = r.dims()?;
                    let (min, max) = (r.f32()?, r.f32()?);
                    let n: usize = dims.iter().product();
                    let levels = (0..n).map(|_| r.u16()).collect::<Result<Vec<u16>>>()?;
                    let q = quant::UniformPtq { levels, min, max, bits: 16 };
                    raws.push((id, dims, q.dequantize()));
                }
            }
        }
        if kind != SectionKind::Latents && !r.done() {
            return Err(Error::CorruptPayload(format!("{} section has trailing bytes", kind.name())));
        }
    }

    let ctx_width = raws
        .iter()
        .find(|(id, _, _)| *id == RAW_CTX)
        .and_then(|(_, dims, _)| dims.first().copied())
        .ok_or_else(|| Error::CorruptPayload("context model missing".into()))?;
    let mut take_raw = |id: u16, want: &[usize]| -> Result<Vec<f32>> {
        let pos = raws
            .iter()
            .position(|(i, _, _)| *i == id)
            .ok_or_else(|| Error::CorruptPayload(format!("raw tensor {id} missing")))?;
        let (_, dims, values) = raws.swap_remove(pos);
        expect_dims(&dims, want, &format!("raw tensor {id}"))?;
        Ok(values)
    };
    let config = ModelConfig {
        c_s: h.c_s as usize,
        rank: h.rank as usize,
        c_l: h.c_l as usize,
        k: h.k as usize,
        u_count: h.u_count as usize,
        v_count: h.v_count as usize,
        height: h.height as usize,
        width: h.width as usize,
        ctx_width,
        scene_codes: true,
    };
    config.validate().map_err(|e| Error::CorruptPayload(format!("header: {e}")))?;
    // the skeleton is overwritten tensor by tensor below
    let mut m = SanrModel::new(config.clone(), 0)?;
    let c_out = config.c_out();
    let (r, k) = (config.rank, config.k);

    for (i, block) in m.blocks.iter_mut().enumerate() {
        let conv: &mut ModulatedConvParams = &mut block.conv;
        for kind in QatKind::ALL {
            let id = weight_id(i, kind);
            let pos = weights
                .iter()
                .position(|w| w.0 == id)
                .ok_or_else(|| Error::CorruptPayload(format!("weight record {id} missing")))?;
            let (_, dims, scale, ints) = weights.swap_remove(pos);
            expect_dims(&dims, &conv.qat_shape(kind), &format!("weight record {id}"))?;
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::CorruptPayload(format!("weight record {id} has scale {scale}")));
            }
            conv.scales[kind.index()] = scale;
            *conv.qat_mut(kind) = ints.iter().map(|&q| q as f32 * scale).collect();
        }
        conv.basis = take_raw((i * 16 + RAW_BASIS) as u16, &[r, k, k])?;
        block.norm = Norm::Folded {
            scale: take_raw((i * 16 + RAW_NORM_SCALE) as u16, &[c_out])?,
            shift: take_raw((i * 16 + RAW_NORM_SHIFT) as u16, &[c_out])?,
        };
    }
    m.head.weight = take_raw(RAW_HEAD, &[3, c_out, k, k])?;
    m.head.bias = take_raw(RAW_HEAD + 1, &[3])?;

    let cw = ctx_width;
    let mut contexts = Vec::with_capacity(NUM_BLOCKS);
    for l in 0..NUM_BLOCKS {
        let base = RAW_CTX + (l * 8) as u16;
        let shapes = [(1, cw), (cw, cw), (cw, 2)];
        let mut layers = Vec::with_capacity(3);
        for (j, &(c_in, c_out)) in shapes.iter().enumerate() {
            let id = base + (j * 2) as u16;
            let weight = take_raw(id, &[c_out, c_in, 3, 3])?;
            let bias = take_raw(id + 1, &[c_out])?;
            layers.push(CtxLayer { c_in, c_out, weight, bias });
        }
        let layers: [CtxLayer; 3] = layers.try_into().map_err(|_| Error::CorruptPayload("context layers".into()))?;
        contexts.push(ContextModel::from_layers(layers)?);
    }
    m.context_models = contexts;

    if latent_bodies.len() != NUM_BLOCKS {
        return Err(Error::CorruptPayload(format!("{} latent sections, expected {NUM_BLOCKS}", latent_bodies.len())));
    }
    for body in latent_bodies {
        let mut rd = Reader::new(body);
        let level = rd.u8()? as usize;
        if !(1..=NUM_BLOCKS).contains(&level) {
            return Err(Error::CorruptPayload(format!("latent level {level}")));
        }
        let dims = rd.dims()?;
        let (lh, lw) = config.latent_hw(level - 1);
        expect_dims(&dims, &[config.c_l, lh, lw], &format!("latent level {level}"))?;
        let first = LaplaceParams::new(rd.f32()?, rd.f32()?).map_err(|e| Error::CorruptPayload(e.to_string()))?;
        let (lo, hi) = (rd.i32()?, rd.i32()?);
        let len = rd.u32()? as usize;
        let payload = rd.take(len)?;
        if !rd.done() {
            return Err(Error::CorruptPayload(format!("latent level {level} has trailing bytes")));
        }
        let values = decode_latent_level(payload, config.c_l, lh, lw, &m.context_models[level - 1], first, lo, hi)?;
        m.blocks[level - 1].latent = LatentSceneCode { level, values };
    }
    m.finalized = true;
    Ok(m)
}

/// Byte accounting of one section.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionInfo {
    pub kind: SectionKind,
    /// Including the 5-byte section header.
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamInfo {
    pub header: BitstreamHeader,
    pub header_bytes: usize,
    pub sections: Vec<SectionInfo>,
    pub crc_bytes: usize,
}

impl StreamInfo {
    pub fn total_bytes(&self) -> usize {
        self.header_bytes + self.crc_bytes + self.sections.iter().map(|s| s.bytes).sum::<usize>()
    }

    pub fn bytes_of(&self, kind: SectionKind) -> usize {
        self.sections.iter().filter(|s| s.kind == kind).map(|s| s.bytes).sum()
    }

    /// Fraction of the stream held by the 16-bit raw section.
    pub fn raw_share(&self) -> f64 {
        self.bytes_of(SectionKind::Raw) as f64 / self.total_bytes() as f64
    }

    pub fn bpp(&self) -> f64 {
        let h = &self.header;
        let pixels = h.u_count as f64 * h.v_count as f64 * h.height as f64 * h.width as f64;
        self.total_bytes() as f64 * 8.0 / pixels
    }
}

/// Validates a stream and reports its layout without decoding payloads.
pub fn inspect(bytes: &[u8]) -> Result<StreamInfo> {
    let (header, sections) = open(bytes)?;
    Ok(StreamInfo {
        header,
        header_bytes: HEADER_BYTES,
        sections: sections
            .into_iter()
            .map(|(kind, body)| SectionInfo { kind, bytes: SECTION_HEADER_BYTES + body.len() })
            .collect(),
        crc_bytes: CRC_BYTES,
    })
}

/// Estimated and actually coded size of one entropy-coded tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCost {
    pub name: String,
    pub estimated_bits: f64,
    pub coded_bits: f64,
}

/// Per-tensor estimator versus range-coder payload sizes of a finalized model.
pub fn tensor_costs(m: &SanrModel) -> Result<Vec<TensorCost>> {
    if !m.finalized {
        return Err(Error::NotFinalized);
    }
    let mut out = Vec::new();
    for (i, block) in m.blocks.iter().enumerate() {
        for kind in QatKind::ALL {
            let (ints, params) = qat_tensor_stats(block.conv.qat(kind), block.conv.scales[kind.index()])?;
            let (payload, _, _) = encode_weight_ints(&ints, params)?;
            out.push(TensorCost {
                name: format!("block{}.{kind:?}", i + 1),
                estimated_bits: entropy::laplace_rate(&ints, params).bits,
                coded_bits: (payload.len() * 8) as f64,
            });
        }
        let v = &block.latent.values;
        let first = first_channel_params(v)?;
        let (payload, _, _) = encode_latent_level(v, &m.context_models[i], first)?;
        let view = LatentView::new(v.channels, v.height, v.width, &v.data)?;
        out.push(TensorCost {
            name: format!("latent{}", i + 1),
            estimated_bits: entropy::latent_rate(view, &m.context_models[i], first)?.bits,
            coded_bits: (payload.len() * 8) as f64,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightfield::AngularCoord;

    fn finalized() -> SanrModel {
        let cfg = ModelConfig { rank: 2, c_l: 3, ctx_width: 4, ..ModelConfig::new(4, 2, 3, 32, 48) };
        let mut m = SanrModel::new(cfg, 21).unwrap();
        for b in &mut m.blocks {
            b.latent.values.data.iter_mut().enumerate().for_each(|(i, v)| *v = ((i * 7) % 5) as f32 - 2.3);
        }
        finalize(&m).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = finalized();
        let bytes = serialize_model(&m).unwrap();
        let back = deserialize_model(&bytes).unwrap();
        assert_eq!(back, m);
        let c = AngularCoord::new(1, 2);
        let a = model::sanr_forward(&m, c, &m.latents()).unwrap();
        let b = model::sanr_forward(&back, c, &back.latents()).unwrap();
        assert_eq!(a, b);
        assert_eq!(serialize_model(&back).unwrap(), bytes);
    }

    #[test]
    fn unfinalized_is_rejected() {
        let cfg = ModelConfig { rank: 2, c_l: 3, ctx_width: 4, ..ModelConfig::new(4, 2, 3, 32, 48) };
        let m = SanrModel::new(cfg, 1).unwrap();
        assert!(matches!(serialize_model(&m), Err(Error::NotFinalized)));
    }

    #[test]
    fn accounting_and_errors() {
        let bytes = serialize_model(&finalized()).unwrap();
        let info = inspect(&bytes).unwrap();
        assert_eq!(info.total_bytes(), bytes.len());
        assert_eq!(info.sections.len(), 6);
        assert!((info.bpp() - bytes.len() as f64 * 8.0 / (6.0 * 32.0 * 48.0)).abs() < 1e-12);

        let mut tampered = bytes.clone();
        tampered[HEADER_BYTES + 20] ^= 0x40;
        assert!(matches!(deserialize_model(&tampered), Err(Error::CrcFailure { .. })));
        let mut bumped = bytes.clone();
        bumped[4] = 2;
        assert!(matches!(deserialize_model(&bumped), Err(Error::UnsupportedVersion(2))));
        assert!(matches!(deserialize_model(&bytes[..HEADER_BYTES]), Err(Error::Truncated)));
        assert!(matches!(deserialize_model(&bytes[..bytes.len() - 9]), Err(Error::Truncated)));
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(deserialize_model(&magic), Err(Error::BadMagic)));
    }
}
