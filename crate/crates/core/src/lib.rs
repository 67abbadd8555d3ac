//! Generative image compression: an image is stored as a quantized,
//! range-coded conditioning embedding plus a ×4-downsampled guidance image,
//! and reconstructed by conditional diffusion sampling steered by
//! classifier-free guidance and compression guidance.

pub mod backbone;
mod bytes;
pub mod codec;
pub mod diffusion;
pub mod embedding;
pub mod error;
pub mod guidance;
pub mod inversion;
pub mod metrics;
pub mod numerics;
pub mod pipeline;

pub use embedding::EmbeddingMatrix;
pub use error::{Error, Result};
