//! Binary portable pixmap (P6) I/O for `3×H×W` images in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub fn encode_ppm(x: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = x.chw()?;
    if c != 3 {
        return Err(Error::Dimension(format!("PPM needs 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = x.data();
    let plane = h * w;
    out.reserve(3 * plane);
    for k in 0..plane {
        for ch in 0..3 {
            out.push((d[ch * plane + k].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|b| *b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::format("ppm header", "truncated header")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format("ppm header", format!("expected a number at byte {start}")))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::format("ppm magic", "expected P6"));
    }
    let mut pos = 2;
    let w = header_token(bytes, &mut pos)?;
    let h = header_token(bytes, &mut pos)?;
    let maxval = header_token(bytes, &mut pos)?;
    if w == 0 || h == 0 {
        return Err(Error::format("ppm header", "zero dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format("ppm maxval", format!("unsupported maxval {maxval}")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format("ppm header", "missing separator before pixel data"));
    }
    pos += 1;
    let plane = w * h;
    let pixels = &bytes[pos..];
    if pixels.len() < 3 * plane {
        return Err(Error::format(
            "ppm pixels",
            format!("need {} bytes, found {}", 3 * plane, pixels.len()),
        ));
    }
    let scale = maxval as f64;
    let mut data = vec![0.0; 3 * plane];
    for k in 0..plane {
        for ch in 0..3 {
            data[ch * plane + k] = pixels[3 * k + ch] as f64 / scale;
        }
    }
    Tensor::new(&[3, h, w], data)
}

pub fn write_ppm(path: impl AsRef<Path>, x: &Tensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(x)?).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

/// Rounds every value to the nearest 8-bit level, as a PPM round trip would.
pub fn quantize_8bit(x: &Tensor) -> Tensor {
    x.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    #[test]
    fn round_trip_on_8bit_grid() {
        let x = quantize_8bit(&Tensor::uniform(&[3, 5, 7], 0.0, 1.0, &mut seeded_rng(0)));
        let back = decode_ppm(&encode_ppm(&x).unwrap()).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn header_with_comment() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
        let x = decode_ppm(&bytes).unwrap();
        assert_eq!(x.shape(), &[3, 1, 2]);
        assert_eq!(x.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn truncated_pixels_fail() {
        let bytes = b"P6 2 2 255\n\x00\x00".to_vec();
        assert!(matches!(decode_ppm(&bytes), Err(Error::Format { .. })));
        assert!(decode_ppm(b"P5 1 1 255\n\x00").is_err());
    }
}
