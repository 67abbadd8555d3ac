//! Image-quality metrics, PPM image I/O and the procedural toy corpus.

pub mod dataset;
pub mod ppm;
pub mod quality;

pub use dataset::{generate_toy_dataset, ToyDatasetSpec, ToyKind};
pub use ppm::{decode_ppm, encode_ppm, quantize_8bit, read_ppm, write_ppm};
pub use quality::{psnr, ssim};
