use std::path::Path;

use sha2::{Digest, Sha256};

use super::latent::{LatentCodec, LatentNorm};
use super::net::{DenoiserNet, NetConfig};
use super::params::ParamSet;
use crate::bytes::{Reader, Writer};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::numerics::snapshot::{read_tensor, write_tensor};
use crate::numerics::{Tape, Tensor, Var};

const MAGIC: &[u8; 4] = b"GCKP";
const VERSION: u16 = 1;

/// Statistics recorded at training time.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainStats {
    /// Std of the conditioning embeddings seen in training; sets the scale
    /// of freshly initialized embeddings during inversion.
    pub embedding_std: f64,
    pub p_uncond: f64,
    pub steps: u64,
}

/// Everything sampling and inversion need: schedule, denoiser, latent codec
/// and latent statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub net: DenoiserNet,
    pub codec: LatentCodec,
    pub norm: LatentNorm,
    pub stats: TrainStats,
}

impl Model {
    /// The noise schedule the denoiser was trained with.
    pub fn schedule(&self) -> &NoiseSchedule {
        &self.net.config().schedule
    }

    /// Image `3×H×W` to a standardized latent.
    pub fn encode_image(&self, x: &Tensor) -> Result<Tensor> {
        self.norm.normalize(&self.codec.encode(x)?)
    }

    /// Standardized latent to an image in `[0, 1]`.
    pub fn decode_latent(&self, z: &Tensor) -> Result<Tensor> {
        let img = self.codec.decode(&self.norm.denormalize(z)?)?;
        Ok(img.map(|v| v.clamp(0.0, 1.0)))
    }

    /// Differentiable unclamped decode of a standardized latent. `codec_vars`
    /// come from [`LatentCodec::register`] on the same tape.
    pub fn decode_on_tape(&self, tape: &mut Tape, codec_vars: &[Var], z: Var) -> Result<Var> {
        let raw = self.norm.denormalize_on_tape(tape, z)?;
        self.codec.decode_on_tape(tape, codec_vars, raw)
    }

    /// Image resolution the model was trained for.
    pub fn image_size(&self) -> (usize, usize) {
        let c = self.net.config();
        let f = self.codec.factor();
        (c.height * f, c.width * f)
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        self.net.config().latent_shape()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u16(VERSION);
        self.net.config().write(&mut w);
        self.codec.write(&mut w);
        write_table(&mut w, self.net.params());
        if let Some(p) = self.codec.params() {
            write_table(&mut w, p);
        }
        self.norm.write(&mut w);
        w.f64(self.stats.embedding_std);
        w.f64(self.stats.p_uncond);
        w.u64(self.stats.steps);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::format("magic", "not a GCKP checkpoint"));
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::format("version", format!("unsupported checkpoint version {version}")));
        }
        let config = NetConfig::read(&mut r)?;
        let mut codec = LatentCodec::read(&mut r)?;
        if codec.latent_channels() != config.latent_channels {
            return Err(Error::format("latent codec id", "codec channels disagree with net config"));
        }
        let mut net = DenoiserNet::new(config, 0).map_err(|e| Error::format("net config", e.to_string()))?;
        let (names, tensors) = read_table(&mut r)?;
        net.load_params(&names, tensors)?;
        if let Some(p) = codec.params_mut() {
            let (names, tensors) = read_table(&mut r)?;
            p.load_from(&names, tensors)?;
        }
        let norm = LatentNorm::read(&mut r)?;
        if norm.mean().len() != net.config().latent_channels {
            return Err(Error::format("latent stats", "channel count disagrees with net config"));
        }
        let stats = TrainStats {
            embedding_std: r.finite("embedding std")?,
            p_uncond: r.finite("p_uncond")?,
            steps: r.u64("train steps")?,
        };
        if !(stats.embedding_std > 0.0) || !(0.0..=1.0).contains(&stats.p_uncond) {
            return Err(Error::format("training stats", "embedding std or p_uncond out of range"));
        }
        r.expect_end("trailing bytes")?;
        Ok(Self {
            net,
            codec,
            norm,
            stats,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// First 8 bytes of the SHA-256 of the serialized checkpoint.
    pub fn id(&self) -> u64 {
        model_id(&self.to_bytes())
    }
}

pub fn model_id(checkpoint: &[u8]) -> u64 {
    let digest = Sha256::digest(checkpoint);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn write_table(w: &mut Writer, p: &ParamSet) {
    w.u32(p.len() as u32);
    for (name, t) in p.names().iter().zip(p.tensors()) {
        w.u16(name.len() as u16);
        w.bytes(name.as_bytes());
        let mut blob = Writer::new();
        write_tensor(&mut blob, t);
        let blob = blob.finish();
        w.u64(blob.len() as u64);
        w.bytes(&blob);
    }
}

fn read_table(r: &mut Reader<'_>) -> Result<(Vec<String>, Vec<Tensor>)> {
    let count = r.u32("tensor count")? as usize;
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::format("tensor name", "not UTF-8"))?
            .to_string();
        let blob_len = r.u64("tensor blob length")?;
        if blob_len > r.remaining() as u64 {
            return Err(Error::format("tensor blob length", format!("{name}: {blob_len} bytes past end")));
        }
        let blob = r.take(blob_len as usize, "tensor blob")?;
        let mut br = Reader::new(blob);
        let t = read_tensor(&mut br)?;
        br.expect_end("tensor blob")?;
        names.push(name);
        tensors.push(t);
    }
    Ok((names, tensors))
}
