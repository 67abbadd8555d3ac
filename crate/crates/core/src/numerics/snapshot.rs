//! `GTNS` tensor snapshots.
//!
//! Layout (little-endian): magic `GTNS`, `u32` version (1), `u32` rank,
//! `u64` dims\[rank\], then `product(dims)` raw `f64` scalars.

use std::path::Path;

use super::tensor::Tensor;
use crate::bytes::{Reader, Writer};
use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"GTNS";
pub const SNAPSHOT_VERSION: u32 = 1;

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut w = Writer::new();
    write_tensor(&mut w, t);
    w.finish()
}

pub(crate) fn write_tensor(w: &mut Writer, t: &Tensor) {
    w.bytes(SNAPSHOT_MAGIC);
    w.u32(SNAPSHOT_VERSION);
    w.u32(t.shape().len() as u32);
    for &d in t.shape() {
        w.u64(d as u64);
    }
    for &v in t.data() {
        w.f64(v);
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes);
    let t = read_tensor(&mut r)?;
    r.expect_end("tensor payload")?;
    Ok(t)
}

pub(crate) fn read_tensor(r: &mut Reader<'_>) -> Result<Tensor> {
    if r.take(4, "tensor magic")? != SNAPSHOT_MAGIC {
        return Err(Error::format("tensor magic", "expected GTNS"));
    }
    let version = r.u32("tensor version")?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::format(
            "tensor version",
            format!("unsupported version {version}"),
        ));
    }
    let rank = r.u32("tensor rank")? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::format("tensor rank", format!("rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for _ in 0..rank {
        let d = r.u64("tensor dims")? as usize;
        if d == 0 {
            return Err(Error::format("tensor dims", "zero dimension"));
        }
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::format("tensor dims", "element count overflows"))?;
        shape.push(d);
    }
    if count.checked_mul(8).is_none_or(|b| b > r.remaining()) {
        return Err(Error::format(
            "tensor data",
            format!("{count} scalars do not fit in {} bytes", r.remaining()),
        ));
    }
    let raw = r.take(count * 8, "tensor data")?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(&shape, data)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    std::fs::write(&path, encode_tensor(t)).map_err(|e| Error::io(&path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    decode_tensor(&bytes)
}
