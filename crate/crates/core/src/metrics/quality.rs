use crate::error::{Error, Result};
use crate::numerics::Tensor;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Peak signal-to-noise ratio in dB; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Parameter(format!("peak {peak} must be positive")));
    }
    let mse = a.mse(b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn to_luma(x: &Tensor) -> Result<(Vec<f64>, usize, usize)> {
    let (c, h, w) = x.chw()?;
    let d = x.data();
    let plane = h * w;
    let y = match c {
        1 => d.to_vec(),
        3 => (0..plane)
            .map(|k| 0.299 * d[k] + 0.587 * d[plane + k] + 0.114 * d[2 * plane + k])
            .collect(),
        _ => {
            return Err(Error::Dimension(format!(
                "SSIM needs 1 or 3 channels, got {c}"
            )))
        }
    };
    Ok((y, h, w))
}

fn gaussian_kernel() -> [f64; WINDOW] {
    let r = (WINDOW / 2) as f64;
    let mut k = [0.0; WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filter over every position where the window fits.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..WINDOW).map(|t| k[t] * x[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..WINDOW).map(|t| k[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Single-scale SSIM on luma with an 11×11 Gaussian window (σ = 1.5) and
/// unit peak.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.same_shape(b)?;
    let (ya, h, w) = to_luma(a)?;
    let (yb, _, _) = to_luma(b)?;
    if h < WINDOW || w < WINDOW {
        return Err(Error::Parameter(format!(
            "SSIM needs at least {WINDOW}×{WINDOW} pixels, got {h}×{w}"
        )));
    }
    let k = gaussian_kernel();
    let aa: Vec<f64> = ya.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = yb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = ya.iter().zip(&yb).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&ya, h, w, &k);
    let mu_b = filter_valid(&yb, h, w, &k);
    let e_aa = filter_valid(&aa, h, w, &k);
    let e_bb = filter_valid(&bb, h, w, &k);
    let e_ab = filter_valid(&ab, h, w, &k);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        sum += num / den;
    }
    Ok(sum / mu_a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use proptest::prelude::*;

    #[test]
    fn psnr_endpoints() {
        let a = Tensor::zeros(&[3, 4, 4]);
        let b = Tensor::full(&[3, 4, 4], 1.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), 0.0);
        assert!(matches!(psnr(&a, &Tensor::zeros(&[3, 4, 5]), 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn psnr_of_std_point_one_noise_is_twenty_db() {
        let mut rng = seeded_rng(0);
        let a = Tensor::uniform(&[3, 64, 64], 0.0, 1.0, &mut rng);
        let noise = Tensor::randn(&[3, 64, 64], &mut rng).scale(0.1);
        let b = a.add(&noise).unwrap();
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!((p - 20.0).abs() < 0.5, "{p}");
    }

    /// Frozen from scikit-image `structural_similarity` on the same luma
    /// planes (Gaussian weights, σ = 1.5, population covariance, range 1).
    #[test]
    fn ssim_matches_reference_implementation() {
        let (h, w) = (16, 20);
        let mut a = Tensor::zeros(&[3, h, w]);
        let mut b = Tensor::zeros(&[3, h, w]);
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    let (fi, fj, fc) = (i as f64, j as f64, c as f64);
                    let va = 0.5 + 0.4 * (0.3 * fi + 0.7 * fj + fc).sin();
                    let vb = (va + 0.1 * (1.3 * fi - 0.4 * fj + 2.0 * fc).cos()).clamp(0.0, 1.0);
                    a.data_mut()[(c * h + i) * w + j] = va;
                    b.data_mut()[(c * h + i) * w + j] = vb;
                }
            }
        }
        let s = ssim(&a, &b).unwrap();
        assert!((s - 0.987516094716385).abs() < 1e-12, "{s}");
    }

    #[test]
    fn ssim_identity_and_negative() {
        let mut rng = seeded_rng(1);
        let a = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let neg = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &neg).unwrap() < 0.0);
        let small = Tensor::zeros(&[3, 8, 16]);
        assert!(matches!(ssim(&small, &small), Err(Error::Parameter(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn metrics_symmetric_and_bounded(seed in 0u64..1000) {
            let mut rng = seeded_rng(seed);
            let a = Tensor::uniform(&[3, 12, 14], 0.0, 1.0, &mut rng);
            let b = Tensor::uniform(&[3, 12, 14], 0.0, 1.0, &mut rng);
            prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
            let s = ssim(&a, &b).unwrap();
            prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!(psnr(&a, &b, 1.0).unwrap() >= 0.0);
        }
    }
}
