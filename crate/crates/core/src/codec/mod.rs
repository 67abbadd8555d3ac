//! Uniform quantization, adaptive range coding, guidance-image compression
//! and the `.gicx` container.

pub mod bitstream;
pub mod guidance_image;
pub mod quantizer;
pub mod range;

pub use bitstream::{
    bitrate_report, bitrate_stats, bits_per_pixel, decode_embedding, encode_embedding, BitBreakdown,
    BitrateStats, Bitstream, BitstreamHeader, EMBEDDING_CODEC_UNIFORM_RANGE,
};
pub use guidance_image::{compress_guidance_image, decode_guidance_image, CompressedGuidance, GUIDANCE_FACTOR};
pub use quantizer::QuantizerSpec;
pub use range::{decode_symbols, encode_symbols, range_decode, range_encode, RangeModel};
