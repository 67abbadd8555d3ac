use crate::bytes::{Reader, Writer};
use crate::error::{Error, Result};

/// Uniform scalar quantizer over `[min, max]` with `levels` grid points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantizerSpec {
    min: f64,
    max: f64,
    levels: u32,
}

impl QuantizerSpec {
    pub fn new(min: f64, max: f64, levels: u32) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::Parameter(format!("quantizer range [{min}, {max}] is empty")));
        }
        if levels < 2 {
            return Err(Error::Parameter(format!("quantizer needs ≥ 2 levels, got {levels}")));
        }
        Ok(Self { min, max, levels })
    }

    /// Spans the range of `values`; a degenerate range is widened to
    /// `[v, v + 1]`.
    pub fn fit(values: &[f64], levels: u32) -> Result<Self> {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Parameter("cannot fit a quantizer to empty or non-finite data".into()));
        }
        let hi = if hi > lo { hi } else { lo + 1.0 };
        Self::new(lo, hi, levels)
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.levels - 1) as f64
    }

    /// Nearest grid index, halves rounded up, clamped to the grid.
    pub fn index(&self, v: f64) -> u32 {
        let top = (self.levels - 1) as f64;
        let x = ((v - self.min) * top / (self.max - self.min) + 0.5).floor();
        x.clamp(0.0, top) as u32
    }

    pub fn value(&self, index: u32) -> f64 {
        let top = (self.levels - 1) as f64;
        let i = index.min(self.levels - 1) as f64;
        self.min + (self.max - self.min) * i / top
    }

    pub fn quantize(&self, values: &[f64]) -> Vec<u32> {
        values.iter().map(|v| self.index(*v)).collect()
    }

    pub fn dequantize(&self, indices: &[u32]) -> Vec<f64> {
        indices.iter().map(|i| self.value(*i)).collect()
    }

    /// Snaps every value to its grid point.
    pub fn round_trip(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| self.value(self.index(*v))).collect()
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.f64(self.min);
        w.f64(self.max);
        w.u32(self.levels);
    }

    pub(crate) fn read(r: &mut Reader<'_>, field: &'static str) -> Result<Self> {
        let min = r.f64(field)?;
        let max = r.f64(field)?;
        let levels = r.u32(field)?;
        Self::new(min, max, levels).map_err(|e| Error::format(field, e.to_string()))
    }
}
