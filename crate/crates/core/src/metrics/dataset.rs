//! Procedural toy corpus: smooth gradients, anti-aliased shapes and
//! band-limited textures.

use std::f64::consts::PI;

use rand::RngExt;

use super::ppm::quantize_8bit;
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Rng64, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyKind {
    Gradients,
    Shapes,
    Textures,
    /// Cycles through the other kinds.
    Mixed,
}

impl std::str::FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradients" => Ok(ToyKind::Gradients),
            "shapes" => Ok(ToyKind::Shapes),
            "textures" => Ok(ToyKind::Textures),
            "mixed" => Ok(ToyKind::Mixed),
            _ => Err(Error::Parameter(format!("unknown dataset kind {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyDatasetSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub kind: ToyKind,
}

fn color(rng: &mut Rng64) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn gradient(h: usize, w: usize, rng: &mut Rng64) -> Vec<f64> {
    let a = color(rng);
    let b = color(rng);
    let theta = rng.random_range(0.0..2.0 * PI);
    let (dx, dy) = (theta.cos(), theta.sin());
    let bend = rng.random_range(-0.5..0.5);
    let plane = h * w;
    let mut out = vec![0.0; 3 * plane];
    for i in 0..h {
        for j in 0..w {
            let u = (j as f64 + 0.5) / w as f64 - 0.5;
            let v = (i as f64 + 0.5) / h as f64 - 0.5;
            let s = (u * dx + v * dy) * std::f64::consts::SQRT_2 + 0.5 + bend * (u * u + v * v);
            let s = s.clamp(0.0, 1.0);
            for ch in 0..3 {
                out[ch * plane + i * w + j] = a[ch] * (1.0 - s) + b[ch] * s;
            }
        }
    }
    out
}

enum Shape {
    Disc { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
        }
    }
}

fn shapes(h: usize, w: usize, rng: &mut Rng64) -> Vec<f64> {
    let plane = h * w;
    let bg = color(rng);
    let mut out = vec![0.0; 3 * plane];
    for ch in 0..3 {
        out[ch * plane..(ch + 1) * plane].fill(bg[ch]);
    }
    let n = rng.random_range(2..=5);
    const SS: usize = 4;
    for _ in 0..n {
        let shape = if rng.random_bool(0.5) {
            Shape::Disc {
                cx: rng.random(),
                cy: rng.random(),
                r: rng.random_range(0.1..0.35),
            }
        } else {
            let (x0, y0): (f64, f64) = (rng.random_range(0.0..0.7), rng.random_range(0.0..0.7));
            Shape::Rect {
                x0,
                y0,
                x1: x0 + rng.random_range(0.15..0.5),
                y1: y0 + rng.random_range(0.15..0.5),
            }
        };
        let c = color(rng);
        for i in 0..h {
            for j in 0..w {
                let mut cover = 0usize;
                for si in 0..SS {
                    for sj in 0..SS {
                        let x = (j as f64 + (sj as f64 + 0.5) / SS as f64) / w as f64;
                        let y = (i as f64 + (si as f64 + 0.5) / SS as f64) / h as f64;
                        cover += shape.contains(x, y) as usize;
                    }
                }
                let a = cover as f64 / (SS * SS) as f64;
                if a > 0.0 {
                    for ch in 0..3 {
                        let p = &mut out[ch * plane + i * w + j];
                        *p = *p * (1.0 - a) + c[ch] * a;
                    }
                }
            }
        }
    }
    out
}

fn texture(h: usize, w: usize, rng: &mut Rng64) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; 3 * plane];
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            let f = rng.random_range(1.0..6.0);
            let theta = rng.random_range(0.0..PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            let gains = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            (f * theta.cos(), f * theta.sin(), phase, gains)
        })
        .collect();
    let base = color(rng);
    let amp = rng.random_range(0.15..0.35);
    for i in 0..h {
        for j in 0..w {
            let u = j as f64 / w as f64;
            let v = i as f64 / h as f64;
            for ch in 0..3 {
                let s: f64 = waves
                    .iter()
                    .map(|(kx, ky, ph, g)| g[ch] * (2.0 * PI * (kx * u + ky * v) + ph).sin())
                    .sum();
                out[ch * plane + i * w + j] = (base[ch] + amp * s / 2.0).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Generates `spec.count` images of shape `3×H×W`, quantized to 8 bits so
/// they survive a PPM round trip unchanged.
pub fn generate_toy_dataset(spec: &ToyDatasetSpec) -> Result<Vec<Tensor>> {
    let (h, w) = (spec.height, spec.width);
    if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
        return Err(Error::Parameter(format!(
            "toy resolution {h}×{w} must be a positive multiple of 4"
        )));
    }
    (0..spec.count)
        .map(|i| {
            let mut rng = seeded_rng(spec.seed.wrapping_mul(0x9e37_79b9).wrapping_add(i as u64));
            let kind = match spec.kind {
                ToyKind::Mixed => [ToyKind::Gradients, ToyKind::Shapes, ToyKind::Textures][i % 3],
                k => k,
            };
            let data = match kind {
                ToyKind::Gradients => gradient(h, w, &mut rng),
                ToyKind::Shapes => shapes(h, w, &mut rng),
                _ => texture(h, w, &mut rng),
            };
            Ok(quantize_8bit(&Tensor::new(&[3, h, w], data)?))
        })
        .collect()
}
