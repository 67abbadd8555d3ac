use super::quantizer::QuantizerSpec;
use super::range::{decode_symbols, encode_symbols};
use crate::error::{Error, Result};
use crate::numerics::{avg_pool, Tensor};

pub const GUIDANCE_FACTOR: usize = 4;

/// The stored low-rate reference: per-channel quantizers, its size and the
/// range-coded symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedGuidance {
    pub quantizers: [QuantizerSpec; 3],
    pub height: usize,
    pub width: usize,
    pub payload: Vec<u8>,
    /// Dequantized reference `x̂_g`, identical to what a decoder recovers.
    pub decoded: Tensor,
}

/// ×4 average-pool, per-channel uniform quantization, range coding.
pub fn compress_guidance_image(x: &Tensor, levels: u32) -> Result<CompressedGuidance> {
    let (c, h, w) = x.chw()?;
    if c != 3 {
        return Err(Error::Dimension(format!("guidance image needs 3 channels, got {c}")));
    }
    if h % GUIDANCE_FACTOR != 0 || w % GUIDANCE_FACTOR != 0 {
        return Err(Error::Parameter(format!(
            "image {h}×{w} not divisible by {GUIDANCE_FACTOR}"
        )));
    }
    let small = avg_pool(x, GUIDANCE_FACTOR)?;
    let (gh, gw) = (h / GUIDANCE_FACTOR, w / GUIDANCE_FACTOR);
    let plane = gh * gw;
    let mut quantizers = Vec::with_capacity(3);
    let mut symbols = Vec::with_capacity(3 * plane);
    for ch in small.data().chunks(plane) {
        let q = QuantizerSpec::fit(ch, levels)?;
        symbols.extend(q.quantize(ch));
        quantizers.push(q);
    }
    let quantizers: [QuantizerSpec; 3] = quantizers.try_into().expect("three channels");
    let payload = encode_symbols(&symbols, levels as usize)?;
    let decoded = dequantize_planes(&symbols, &quantizers, gh, gw)?;
    Ok(CompressedGuidance {
        quantizers,
        height: gh,
        width: gw,
        payload,
        decoded,
    })
}

fn dequantize_planes(symbols: &[u32], q: &[QuantizerSpec; 3], h: usize, w: usize) -> Result<Tensor> {
    let plane = h * w;
    let mut data = Vec::with_capacity(3 * plane);
    for (ch, s) in symbols.chunks(plane).enumerate() {
        data.extend(q[ch].dequantize(s));
    }
    Tensor::new(&[3, h, w], data)
}

/// Recovers `x̂_g` from a payload.
pub fn decode_guidance_image(
    payload: &[u8],
    quantizers: &[QuantizerSpec; 3],
    height: usize,
    width: usize,
) -> Result<Tensor> {
    let levels = quantizers[0].levels();
    if quantizers.iter().any(|q| q.levels() != levels) {
        return Err(Error::format("guidance quantizers", "channels disagree on level count"));
    }
    let symbols = decode_symbols(payload, 3 * height * width, levels as usize)?;
    dequantize_planes(&symbols, quantizers, height, width)
}
