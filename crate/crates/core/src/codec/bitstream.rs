//! The `.gicx` container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GICX" | version u16
//! height u32 | width u32 | latent codec u8 | embedding codec u8
//! schedule: kind u8, T u32, beta_start f64, beta_end f64
//! model id u64
//! K u16 | N u16 | embedding quantizer (min f64, max f64, levels u32)
//! 3 × guidance quantizer | guidance height u32 | guidance width u32
//! s_c f64 | s_f f64 | sampler steps u32 | eta f64
//! guidance reduction u8 (0 sum, 1 mean) | gradient mode u8 (0 eps constant, 1 full)
//! embedding payload length u64 | guidance payload length u64
//! embedding payload | guidance payload
//! ```

use std::path::Path;

use super::guidance_image::{decode_guidance_image, GUIDANCE_FACTOR};
use super::quantizer::QuantizerSpec;
use super::range::{decode_symbols, encode_symbols};
use crate::bytes::{Reader, Writer};
use crate::diffusion::NoiseSchedule;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"GICX";
pub const VERSION: u16 = 1;
/// Uniform per-tensor quantizer followed by the adaptive range coder.
pub const EMBEDDING_CODEC_UNIFORM_RANGE: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct BitstreamHeader {
    pub height: u32,
    pub width: u32,
    pub latent_codec: u8,
    pub embedding_codec: u8,
    pub schedule: NoiseSchedule,
    pub model_id: u64,
    pub tokens: u16,
    pub dims: u16,
    pub embedding_quantizer: QuantizerSpec,
    pub guidance_quantizers: [QuantizerSpec; 3],
    pub guidance_height: u32,
    pub guidance_width: u32,
    pub s_c: f64,
    pub s_f: f64,
    pub sampler_steps: u32,
    pub eta: f64,
    pub reduction: u8,
    pub gradient_mode: u8,
}

impl BitstreamHeader {
    fn validate(&self) -> Result<()> {
        let fail = |field, detail: String| Err(Error::format(field, detail));
        if self.height == 0 || self.width == 0 {
            return fail("image size", format!("{}×{}", self.height, self.width));
        }
        if self.embedding_codec != EMBEDDING_CODEC_UNIFORM_RANGE {
            return fail("embedding codec id", format!("unknown id {}", self.embedding_codec));
        }
        if self.tokens == 0 || self.dims == 0 {
            return fail("embedding size", format!("{}×{}", self.tokens, self.dims));
        }
        if self.guidance_height as usize * GUIDANCE_FACTOR != self.height as usize
            || self.guidance_width as usize * GUIDANCE_FACTOR != self.width as usize
        {
            return fail(
                "guidance dims",
                format!(
                    "{}×{} is not the ×{GUIDANCE_FACTOR} reduction of {}×{}",
                    self.guidance_height, self.guidance_width, self.height, self.width
                ),
            );
        }
        let levels = self.guidance_quantizers[0].levels();
        if self.guidance_quantizers.iter().any(|q| q.levels() != levels) {
            return fail("guidance quantizer", "channels disagree on level count".into());
        }
        if !(self.s_c.is_finite() && self.s_c >= 0.0) {
            return fail("s_c", format!("{}", self.s_c));
        }
        if !(self.s_f.is_finite() && self.s_f >= 0.0) {
            return fail("s_f", format!("{}", self.s_f));
        }
        if self.sampler_steps == 0 || self.sampler_steps as usize > self.schedule.steps() {
            return fail("sampler steps", format!("{}", self.sampler_steps));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return fail("eta", format!("{}", self.eta));
        }
        if self.reduction > 1 {
            return fail("guidance reduction", format!("unknown id {}", self.reduction));
        }
        if self.gradient_mode > 1 {
            return fail("gradient mode", format!("unknown id {}", self.gradient_mode));
        }
        Ok(())
    }

    pub fn embedding_symbols(&self) -> usize {
        self.tokens as usize * self.dims as usize
    }

    pub fn guidance_symbols(&self) -> usize {
        3 * self.guidance_height as usize * self.guidance_width as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bitstream {
    pub header: BitstreamHeader,
    pub embedding_payload: Vec<u8>,
    pub guidance_payload: Vec<u8>,
}

/// Bit accounting of one packed stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BitBreakdown {
    pub header_bits: u64,
    pub embedding_bits: u64,
    pub guidance_bits: u64,
    pub total_bits: u64,
    pub bpp: f64,
}

/// `8·bytes/(H·W)`.
pub fn bits_per_pixel(total_bytes: usize, height: usize, width: usize) -> f64 {
    8.0 * total_bytes as f64 / (height * width) as f64
}

impl Bitstream {
    pub fn pack(&self) -> Result<Vec<u8>> {
        self.header.validate()?;
        let h = &self.header;
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u32(h.height);
        w.u32(h.width);
        w.u8(h.latent_codec);
        w.u8(h.embedding_codec);
        h.schedule.write(&mut w);
        w.u64(h.model_id);
        w.u16(h.tokens);
        w.u16(h.dims);
        h.embedding_quantizer.write(&mut w);
        for q in &h.guidance_quantizers {
            q.write(&mut w);
        }
        w.u32(h.guidance_height);
        w.u32(h.guidance_width);
        w.f64(h.s_c);
        w.f64(h.s_f);
        w.u32(h.sampler_steps);
        w.f64(h.eta);
        w.u8(h.reduction);
        w.u8(h.gradient_mode);
        w.u64(self.embedding_payload.len() as u64);
        w.u64(self.guidance_payload.len() as u64);
        w.bytes(&self.embedding_payload);
        w.bytes(&self.guidance_payload);
        Ok(w.finish())
    }

    pub fn unpack(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::format("magic", "not a GICX stream"));
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::format("version", format!("unsupported version {version}")));
        }
        let height = r.u32("height")?;
        let width = r.u32("width")?;
        let latent_codec = r.u8("latent codec id")?;
        let embedding_codec = r.u8("embedding codec id")?;
        let schedule = NoiseSchedule::read(&mut r)?;
        let model_id = r.u64("model id")?;
        let tokens = r.u16("tokens")?;
        let dims = r.u16("dims")?;
        let embedding_quantizer = QuantizerSpec::read(&mut r, "embedding quantizer")?;
        let guidance_quantizers = [
            QuantizerSpec::read(&mut r, "guidance quantizer")?,
            QuantizerSpec::read(&mut r, "guidance quantizer")?,
            QuantizerSpec::read(&mut r, "guidance quantizer")?,
        ];
        let header = BitstreamHeader {
            height,
            width,
            latent_codec,
            embedding_codec,
            schedule,
            model_id,
            tokens,
            dims,
            embedding_quantizer,
            guidance_quantizers,
            guidance_height: r.u32("guidance height")?,
            guidance_width: r.u32("guidance width")?,
            s_c: r.f64("s_c")?,
            s_f: r.f64("s_f")?,
            sampler_steps: r.u32("sampler steps")?,
            eta: r.f64("eta")?,
            reduction: r.u8("guidance reduction")?,
            gradient_mode: r.u8("gradient mode")?,
        };
        let emb_len = r.u64("embedding payload length")?;
        let gui_len = r.u64("guidance payload length")?;
        header.validate()?;
        let rest = r.remaining() as u64;
        if emb_len.checked_add(gui_len) != Some(rest) {
            return Err(Error::format(
                "payload lengths",
                format!("header declares {emb_len} + {gui_len} bytes, {rest} present"),
            ));
        }
        let embedding_payload = r.take(emb_len as usize, "embedding payload")?.to_vec();
        let guidance_payload = r.take(gui_len as usize, "guidance payload")?.to_vec();
        Ok(Self {
            header,
            embedding_payload,
            guidance_payload,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.pack()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::unpack(&bytes)
    }

    pub fn breakdown(&self) -> Result<BitBreakdown> {
        let total = self.pack()?.len() as u64;
        let emb = self.embedding_payload.len() as u64;
        let gui = self.guidance_payload.len() as u64;
        Ok(BitBreakdown {
            header_bits: 8 * (total - emb - gui),
            embedding_bits: 8 * emb,
            guidance_bits: 8 * gui,
            total_bits: 8 * total,
            bpp: bits_per_pixel(total as usize, self.header.height as usize, self.header.width as usize),
        })
    }

    pub fn decode_embedding(&self) -> Result<EmbeddingMatrix> {
        let h = &self.header;
        decode_embedding(&self.embedding_payload, &h.embedding_quantizer, h.tokens as usize, h.dims as usize)
    }

    pub fn decode_guidance(&self) -> Result<Tensor> {
        let h = &self.header;
        decode_guidance_image(
            &self.guidance_payload,
            &h.guidance_quantizers,
            h.guidance_height as usize,
            h.guidance_width as usize,
        )
    }
}

/// Quantizes and range-codes embedding values.
pub fn encode_embedding(e: &EmbeddingMatrix, q: &QuantizerSpec) -> Result<Vec<u8>> {
    encode_symbols(&q.quantize(e.values().data()), q.levels() as usize)
}

pub fn decode_embedding(payload: &[u8], q: &QuantizerSpec, tokens: usize, dims: usize) -> Result<EmbeddingMatrix> {
    let symbols = decode_symbols(payload, tokens * dims, q.levels() as usize)?;
    EmbeddingMatrix::from_quantized(Tensor::new(&[tokens, dims], q.dequantize(&symbols))?)
}

/// Corpus-level bit-rate statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BitrateStats {
    pub bpp: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn bitrate_report(streams: &[Bitstream]) -> Result<BitrateStats> {
    let bpp = streams
        .iter()
        .map(|s| s.breakdown().map(|b| b.bpp))
        .collect::<Result<Vec<_>>>()?;
    bitrate_stats(bpp)
}

pub fn bitrate_stats(bpp: Vec<f64>) -> Result<BitrateStats> {
    if bpp.is_empty() {
        return Err(Error::Parameter("bitrate report needs at least one stream".into()));
    }
    let n = bpp.len() as f64;
    let mean = bpp.iter().sum::<f64>() / n;
    let std = (bpp.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / n).sqrt();
    let min = bpp.iter().copied().fold(f64::INFINITY, f64::min);
    let max = bpp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(BitrateStats {
        bpp,
        mean,
        std,
        min,
        max,
    })
}
