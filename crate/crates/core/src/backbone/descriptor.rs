//! Deterministic image descriptors used as training conditions.
//!
//! Toy training has no captions, so each image is described by a fixed
//! feature vector (coarse colour layout, contrast, edge energy, luma
//! histogram) mapped to a `tokens × dims` matrix by a seeded projection.

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Tensor};

const GRID: usize = 4;
const HIST_BINS: usize = 8;
const PROJECTION_SEED: u64 = 0x6465_7363;

pub const FEATURES: usize = 3 * GRID * GRID + 3 + 2 + HIST_BINS;

fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Feature vector of a `3×H×W` image in `[0, 1]`, centred near zero.
pub fn describe(x: &Tensor) -> Result<Vec<f64>> {
    let (c, h, w) = x.chw()?;
    if c != 3 || h % GRID != 0 || w % GRID != 0 {
        return Err(Error::Dimension(format!(
            "descriptor needs a 3×H×W image with H, W divisible by {GRID}, got {:?}",
            x.shape()
        )));
    }
    let d = x.data();
    let px = |ch: usize, i: usize, j: usize| d[(ch * h + i) * w + j];
    let mut f = Vec::with_capacity(FEATURES);
    let (bh, bw) = (h / GRID, w / GRID);
    for ch in 0..3 {
        for gi in 0..GRID {
            for gj in 0..GRID {
                let mut s = 0.0;
                for i in gi * bh..(gi + 1) * bh {
                    for j in gj * bw..(gj + 1) * bw {
                        s += px(ch, i, j);
                    }
                }
                f.push(s / (bh * bw) as f64 - 0.5);
            }
        }
    }
    let n = (h * w) as f64;
    for plane in d.chunks(h * w) {
        let m = plane.iter().sum::<f64>() / n;
        let var = plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        f.push(4.0 * var.sqrt() - 0.5);
    }
    let lum: Vec<f64> = (0..h * w)
        .map(|k| luma(d[k], d[h * w + k], d[2 * h * w + k]))
        .collect();
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..h {
        for j in 0..w {
            if j + 1 < w {
                dx += (lum[i * w + j + 1] - lum[i * w + j]).abs();
            }
            if i + 1 < h {
                dy += (lum[(i + 1) * w + j] - lum[i * w + j]).abs();
            }
        }
    }
    f.push(8.0 * dx / (h * (w - 1).max(1)) as f64 - 0.5);
    f.push(8.0 * dy / ((h - 1).max(1) * w) as f64 - 0.5);
    let mut hist = [0.0; HIST_BINS];
    for v in &lum {
        let b = ((v.clamp(0.0, 1.0) * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
        hist[b] += 1.0;
    }
    f.extend(hist.iter().map(|c| 2.0 * c / n - 0.25));
    Ok(f)
}

/// Fixed random map from descriptor features to an embedding matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorProjection {
    tokens: usize,
    dims: usize,
    weights: Tensor,
}

impl DescriptorProjection {
    pub fn new(tokens: usize, dims: usize) -> Self {
        let mut rng = seeded_rng(PROJECTION_SEED);
        let scale = 2.0 / (FEATURES as f64).sqrt();
        let weights = Tensor::randn(&[tokens * dims, FEATURES], &mut rng).scale(scale);
        Self {
            tokens,
            dims,
            weights,
        }
    }

    pub fn embed(&self, x: &Tensor) -> Result<EmbeddingMatrix> {
        let f = describe(x)?;
        let w = self.weights.data();
        let data = (0..self.tokens * self.dims)
            .map(|r| {
                w[r * FEATURES..(r + 1) * FEATURES]
                    .iter()
                    .zip(&f)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        EmbeddingMatrix::new(Tensor::new(&[self.tokens, self.dims], data)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_is_deterministic_and_sized() {
        let x = Tensor::uniform(&[3, 8, 8], 0.0, 1.0, &mut seeded_rng(0));
        let a = describe(&x).unwrap();
        assert_eq!(a.len(), FEATURES);
        assert_eq!(a, describe(&x).unwrap());
        let p = DescriptorProjection::new(4, 6);
        let e = p.embed(&x).unwrap();
        assert_eq!((e.tokens(), e.dims()), (4, 6));
        assert_eq!(e, DescriptorProjection::new(4, 6).embed(&x).unwrap());
    }

    #[test]
    fn different_images_differ() {
        let a = Tensor::full(&[3, 8, 8], 0.2);
        let b = Tensor::full(&[3, 8, 8], 0.8);
        let p = DescriptorProjection::new(2, 4);
        assert_ne!(p.embed(&a).unwrap(), p.embed(&b).unwrap());
    }
}
