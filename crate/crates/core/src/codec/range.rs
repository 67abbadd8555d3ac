//! Adaptive-frequency range coder.
//!
//! A 32-bit carry-propagating coder in the style of LZMA's: `low` is kept
//! in 64 bits so a carry out of the top byte can ripple into bytes still
//! held back in `cache`. The first output byte of that scheme is always
//! zero and is not stored.
//!
//! [`encode_symbols`] prefixes one mode byte and falls back to a static
//! uniform model when adaptation would cost more, which bounds the payload
//! by the raw symbol size plus a few bytes for every input.

use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;
const INCREMENT: u32 = 32;
const MAX_TOTAL: u32 = 1 << 16;
pub const MAX_ALPHABET: usize = 1 << 12;

/// Adaptive symbol-frequency table shared in lockstep by encoder and decoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RangeModel {
    freqs: Vec<u32>,
    total: u32,
    increment: u32,
}

impl RangeModel {
    pub fn new(alphabet: usize) -> Result<Self> {
        if alphabet == 0 || alphabet > MAX_ALPHABET {
            return Err(Error::Parameter(format!(
                "alphabet size {alphabet} outside [1, {MAX_ALPHABET}]"
            )));
        }
        Ok(Self {
            freqs: vec![1; alphabet],
            total: alphabet as u32,
            increment: INCREMENT,
        })
    }

    /// Non-adaptive uniform model.
    pub fn uniform(alphabet: usize) -> Result<Self> {
        let mut m = Self::new(alphabet)?;
        m.increment = 0;
        Ok(m)
    }

    pub fn alphabet(&self) -> usize {
        self.freqs.len()
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    fn cumulative(&self, symbol: usize) -> u32 {
        self.freqs[..symbol].iter().sum()
    }

    /// Symbol whose cumulative interval contains `target`, with its low end.
    fn find(&self, target: u32) -> (usize, u32) {
        let mut cum = 0;
        for (s, f) in self.freqs.iter().enumerate() {
            if target < cum + f {
                return (s, cum);
            }
            cum += f;
        }
        unreachable!("target below total")
    }

    pub fn update(&mut self, symbol: usize) {
        if self.increment == 0 {
            return;
        }
        self.freqs[symbol] += self.increment;
        self.total += self.increment;
        while self.total > MAX_TOTAL {
            self.total = 0;
            for f in &mut self.freqs {
                *f = (*f + 1) / 2;
                self.total += *f;
            }
        }
    }
}

struct Encoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
    skip_first: bool,
}

impl Encoder {
    fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
            skip_first: true,
        }
    }

    fn emit(&mut self, b: u8) {
        if self.skip_first {
            debug_assert_eq!(b, 0);
            self.skip_first = false;
        } else {
            self.out.push(b);
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.emit(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn encode(&mut self, cum: u32, freq: u32, total: u32) {
        let r = self.range / total;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> Decoder<'a> {
    fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut d = Self {
            bytes,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next()? as u32;
        }
        Ok(d)
    }

    fn next(&mut self) -> Result<u8> {
        let b = *self.bytes.get(self.pos).ok_or_else(|| Error::Decode {
            position: self.pos,
            detail: "range-coded stream truncated".into(),
        })?;
        self.pos += 1;
        Ok(b)
    }

    fn decode(&mut self, model: &mut RangeModel) -> Result<usize> {
        let total = model.total();
        let r = self.range / total;
        let target = (self.code / r).min(total - 1);
        let (sym, cum) = model.find(target);
        let freq = model.freqs[sym];
        self.code -= r * cum;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next()? as u32;
        }
        model.update(sym);
        Ok(sym)
    }
}

/// Codes `symbols` with `model`, which is advanced past every symbol.
pub fn range_encode(symbols: &[u32], model: &mut RangeModel) -> Result<Vec<u8>> {
    if symbols.is_empty() {
        return Ok(Vec::new());
    }
    let mut enc = Encoder::new();
    for &s in symbols {
        let s = s as usize;
        if s >= model.alphabet() {
            return Err(Error::Parameter(format!(
                "symbol {s} outside alphabet of {}",
                model.alphabet()
            )));
        }
        enc.encode(model.cumulative(s), model.freqs[s], model.total());
        model.update(s);
    }
    Ok(enc.finish())
}

/// Decodes exactly `count` symbols; the stream must be consumed exactly.
pub fn range_decode(bytes: &[u8], count: usize, model: &mut RangeModel) -> Result<Vec<u32>> {
    if count == 0 {
        if !bytes.is_empty() {
            return Err(Error::Decode {
                position: 0,
                detail: format!("{} bytes for an empty symbol stream", bytes.len()),
            });
        }
        return Ok(Vec::new());
    }
    let mut dec = Decoder::new(bytes)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(dec.decode(model)? as u32);
    }
    if dec.pos != bytes.len() {
        return Err(Error::Decode {
            position: dec.pos,
            detail: format!("{} trailing bytes after last symbol", bytes.len() - dec.pos),
        });
    }
    Ok(out)
}

const MODE_ADAPTIVE: u8 = 0;
const MODE_UNIFORM: u8 = 1;

/// Payload coding: a mode byte, then the symbols under a fresh adaptive
/// model or, if that is larger, a static uniform one. Empty input gives an
/// empty payload.
pub fn encode_symbols(symbols: &[u32], alphabet: usize) -> Result<Vec<u8>> {
    if symbols.is_empty() {
        RangeModel::new(alphabet)?;
        return Ok(Vec::new());
    }
    let adaptive = range_encode(symbols, &mut RangeModel::new(alphabet)?)?;
    let uniform = range_encode(symbols, &mut RangeModel::uniform(alphabet)?)?;
    let (mode, body) = if uniform.len() < adaptive.len() {
        (MODE_UNIFORM, uniform)
    } else {
        (MODE_ADAPTIVE, adaptive)
    };
    let mut out = Vec::with_capacity(body.len() + 1);
    out.push(mode);
    out.extend(body);
    Ok(out)
}

pub fn decode_symbols(bytes: &[u8], count: usize, alphabet: usize) -> Result<Vec<u32>> {
    if count == 0 {
        return range_decode(bytes, 0, &mut RangeModel::new(alphabet)?);
    }
    let (&mode, body) = bytes.split_first().ok_or_else(|| Error::Decode {
        position: 0,
        detail: "missing coding mode byte".into(),
    })?;
    let mut model = match mode {
        MODE_ADAPTIVE => RangeModel::new(alphabet)?,
        MODE_UNIFORM => RangeModel::uniform(alphabet)?,
        m => {
            return Err(Error::Decode {
                position: 0,
                detail: format!("unknown coding mode {m}"),
            })
        }
    };
    range_decode(body, count, &mut model).map_err(|e| match e {
        Error::Decode { position, detail } => Error::Decode {
            position: position + 1,
            detail,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use proptest::prelude::*;
    use rand::RngExt;

    #[test]
    fn empty_round_trip() {
        assert!(encode_symbols(&[], 4).unwrap().is_empty());
        assert!(decode_symbols(&[], 0, 4).unwrap().is_empty());
    }

    #[test]
    fn models_evolve_identically() {
        let syms: Vec<u32> = (0..5000).map(|i| (i * 7 % 13) as u32).collect();
        let mut me = RangeModel::new(13).unwrap();
        let bytes = range_encode(&syms, &mut me).unwrap();
        let mut md = RangeModel::new(13).unwrap();
        assert_eq!(range_decode(&bytes, syms.len(), &mut md).unwrap(), syms);
        assert_eq!(me, md);
        assert!(me.freqs().iter().all(|f| *f >= 1));
        assert!(me.total() <= MAX_TOTAL);
    }

    #[test]
    fn uniform_source_is_incompressible() {
        let mut rng = seeded_rng(0);
        let syms: Vec<u32> = (0..100_000).map(|_| rng.random_range(0..256)).collect();
        let bytes = encode_symbols(&syms, 256).unwrap();
        let bits = 8.0 * bytes.len() as f64 / syms.len() as f64;
        assert!(bits >= 7.9, "{bits}");
        assert_eq!(decode_symbols(&bytes, syms.len(), 256).unwrap(), syms);
    }

    #[test]
    fn skewed_binary_source_near_entropy() {
        let mut rng = seeded_rng(1);
        let syms: Vec<u32> = (0..100_000).map(|_| rng.random_bool(0.1) as u32).collect();
        let bytes = range_encode(&syms, &mut RangeModel::new(2).unwrap()).unwrap();
        let bits = 8.0 * bytes.len() as f64 / syms.len() as f64;
        assert_eq!(decode_symbols(&encode_symbols(&syms, 2).unwrap(), syms.len(), 2).unwrap(), syms);
        let h = -(0.9f64 * 0.9f64.log2() + 0.1 * 0.1f64.log2());
        assert!((h - 0.469).abs() < 1e-3);
        assert!((bits - h).abs() / h < 0.05, "{bits} vs {h}");
    }

    #[test]
    fn truncation_reports_position() {
        let mut rng = seeded_rng(2);
        let syms: Vec<u32> = (0..1000).map(|_| rng.random_range(0..16)).collect();
        let bytes = encode_symbols(&syms, 16).unwrap();
        for cut in [0, 1, 3, bytes.len() / 2, bytes.len() - 1] {
            match decode_symbols(&bytes[..cut], syms.len(), 16) {
                Err(Error::Decode { position, .. }) => assert!(position <= cut.max(1)),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_symbols(&long, syms.len(), 16), Err(Error::Decode { .. })));
    }

    #[test]
    fn out_of_alphabet_symbol_is_rejected() {
        assert!(matches!(encode_symbols(&[0, 4], 4), Err(Error::Parameter(_))));
        assert!(RangeModel::new(0).is_err());
    }

    proptest! {
        #[test]
        fn lossless(alphabet in 1usize..300, syms in proptest::collection::vec(0u32..300, 0..400)) {
            let syms: Vec<u32> = syms.into_iter().map(|s| s % alphabet as u32).collect();
            let bytes = encode_symbols(&syms, alphabet).unwrap();
            prop_assert_eq!(decode_symbols(&bytes, syms.len(), alphabet).unwrap(), syms.clone());
            let raw_bits = syms.len() as f64 * (alphabet as f64).log2().ceil();
            prop_assert!(8.0 * bytes.len() as f64 <= raw_bits + 8.0 * 64.0);
            let mut m = RangeModel::new(alphabet).unwrap();
            let pure = range_encode(&syms, &mut m).unwrap();
            prop_assert_eq!(range_decode(&pure, syms.len(), &mut RangeModel::new(alphabet).unwrap()).unwrap(), syms);
        }
    }
}
