//! End-to-end workflows behind the command-line verbs: training, compress,
//! decompress, the guidance-scale sweep and corpus evaluation.

mod config;

pub use config::{CodecChoice, Preset, RunConfig};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::backbone::{train_model, Model, ModelSpec, TrainConfig, TrainedModel};
use crate::codec::{
    bits_per_pixel, bitrate_stats, compress_guidance_image, encode_embedding, BitBreakdown, Bitstream,
    BitstreamHeader, EMBEDDING_CODEC_UNIFORM_RANGE,
};
use crate::diffusion::{sample_loop, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::guidance::{guided_denoise_fn, GradientMode, GuidanceConfig, Reduction};
use crate::inversion::{invert_embedding, Inversion, InversionConfig};
use crate::metrics::{psnr, quantize_8bit, read_ppm, ssim};
use crate::numerics::Tensor;

/// Mixed into the run seed for sampler noise so it never replays the
/// inversion draws.
const SAMPLER_SEED_SALT: u64 = 0x5a4d_504c_4552;

/// Column header of the sweep CSV.
pub const SWEEP_CSV_HEADER: &str = "sc,sf,image,psnr,ssim,bpp";
/// Column header of the evaluation CSV.
pub const EVAL_CSV_HEADER: &str = "image,psnr,ssim,bpp,bpp_std";

pub fn schedule(cfg: &RunConfig) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end)
}

pub fn model_spec(cfg: &RunConfig) -> Result<ModelSpec> {
    Ok(ModelSpec {
        schedule: schedule(cfg)?,
        widths: cfg.widths,
        time_dim: cfg.time_dim,
        cond_hidden: cfg.cond_hidden,
        tokens: cfg.tokens,
        dims: cfg.dims,
        head: cfg.head,
        autoencoder: match cfg.codec {
            CodecChoice::Identity => None,
            CodecChoice::Autoencoder => Some((cfg.ae_channels, cfg.ae_hidden)),
        },
        ae_steps: cfg.ae_steps,
    })
}

pub fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        steps: cfg.train_steps,
        batch: cfg.train_batch,
        lr: cfg.train_lr,
        p_uncond: cfg.p_uncond,
        seed: cfg.seed,
    }
}

pub fn train(images: &[Tensor], cfg: &RunConfig) -> Result<TrainedModel> {
    train_model(images, &model_spec(cfg)?, &train_config(cfg))
}

/// Sorted `*.ppm` files of a directory, with their file stems.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Parameter(format!("no .ppm images in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, read_ppm(p)?))
        })
        .collect()
}

/// Output of [`compress`].
#[derive(Clone, Debug)]
pub struct Compressed {
    pub bitstream: Bitstream,
    pub bytes: Vec<u8>,
    pub breakdown: BitBreakdown,
    pub inversion: Inversion,
}

/// Inverts the embedding, codes the guidance image and packs the container.
pub fn compress(model: &Model, x: &Tensor, cfg: &RunConfig) -> Result<Compressed> {
    cfg.validate()?;
    let (_, h, w) = x.chw()?;
    let (mh, mw) = model.image_size();
    if (h, w) != (mh, mw) {
        return Err(Error::Dimension(format!("image is {h}×{w} but the model expects {mh}×{mw}")));
    }
    let mut inv_cfg = InversionConfig::for_model(model, cfg.inv_steps, cfg.inv_lr, cfg.embedding_levels, cfg.seed)?;
    inv_cfg.quantize_in_loop = cfg.quantize_in_loop;
    inv_cfg.batch = cfg.inv_batch;
    let inversion = invert_embedding(model, x, &inv_cfg)?;
    let guidance = compress_guidance_image(x, cfg.guidance_levels)?;
    let net = model.net.config();
    let header = BitstreamHeader {
        height: h as u32,
        width: w as u32,
        latent_codec: model.codec.mode().id(),
        embedding_codec: EMBEDDING_CODEC_UNIFORM_RANGE,
        schedule: model.schedule().clone(),
        model_id: model.id(),
        tokens: net.tokens as u16,
        dims: net.dims as u16,
        embedding_quantizer: inv_cfg.quantizer.clone(),
        guidance_quantizers: guidance.quantizers.clone(),
        guidance_height: guidance.height as u32,
        guidance_width: guidance.width as u32,
        s_c: cfg.sc,
        s_f: cfg.sf,
        sampler_steps: cfg.steps as u32,
        eta: cfg.eta,
        reduction: cfg.reduction as u8,
        gradient_mode: cfg.gradient as u8,
    };
    let bitstream = Bitstream {
        header,
        embedding_payload: encode_embedding(&inversion.shipped, &inv_cfg.quantizer)?,
        guidance_payload: guidance.payload,
    };
    let bytes = bitstream.pack()?;
    let breakdown = bitstream.breakdown()?;
    Ok(Compressed {
        bitstream,
        bytes,
        breakdown,
        inversion,
    })
}

/// Rejects streams produced for another checkpoint or codec.
pub fn check_compatible(model: &Model, header: &BitstreamHeader) -> Result<()> {
    let net = model.net.config();
    let (h, w) = model.image_size();
    let mismatch = |what: &str, stream: String, model: String| {
        Err(Error::Incompatible(format!("{what}: stream has {stream}, checkpoint has {model}")))
    };
    if header.model_id != model.id() {
        return mismatch("model id", format!("{:016x}", header.model_id), format!("{:016x}", model.id()));
    }
    if header.latent_codec != model.codec.mode().id() {
        return mismatch("latent codec", header.latent_codec.to_string(), model.codec.mode().id().to_string());
    }
    if &header.schedule != model.schedule() {
        return mismatch("noise schedule", format!("{:?}", header.schedule), format!("{:?}", model.schedule()));
    }
    if (header.tokens as usize, header.dims as usize) != (net.tokens, net.dims) {
        return mismatch(
            "embedding size",
            format!("{}×{}", header.tokens, header.dims),
            format!("{}×{}", net.tokens, net.dims),
        );
    }
    if (header.height as usize, header.width as usize) != (h, w) {
        return mismatch(
            "image size",
            format!("{}×{}", header.height, header.width),
            format!("{h}×{w}"),
        );
    }
    Ok(())
}

/// Sampler seed of the `index`-th decompression under run seed `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    let mut z = (seed ^ SAMPLER_SEED_SALT).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z ^= z >> 31;
    z.wrapping_add(index as u64)
}

/// Guided reconstruction using the scales and sampler settings stored in
/// the header.
pub fn decompress(model: &Model, stream: &Bitstream, sampler_seed: u64) -> Result<Tensor> {
    let h = &stream.header;
    check_compatible(model, h)?;
    let embedding = stream.decode_embedding()?;
    let x_g_hat = stream.decode_guidance()?;
    let reduction = Reduction::from_id(h.reduction).ok_or_else(|| Error::format("guidance reduction", "unknown id"))?;
    let mode = GradientMode::from_id(h.gradient_mode).ok_or_else(|| Error::format("gradient mode", "unknown id"))?;
    let gcfg = GuidanceConfig::new(h.s_f, h.s_c, x_g_hat)?
        .with_reduction(reduction)
        .with_mode(mode);
    let mut denoiser = guided_denoise_fn(model, &gcfg, &embedding)?;
    let sampler = SamplerConfig {
        num_steps: h.sampler_steps as usize,
        eta: h.eta,
        seed: sampler_seed,
    };
    let z = sample_loop(model.schedule(), &mut denoiser, &sampler, &model.latent_shape())?;
    let y = model.decode_latent(&z)?;
    if y.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("reconstruction contains non-finite values".into()));
    }
    Ok(quantize_8bit(&y))
}

/// Quality of one reconstruction against its original.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quality {
    pub psnr: f64,
    pub ssim: f64,
    pub bpp: f64,
}

pub fn measure(original: &Tensor, reconstruction: &Tensor, bpp: f64) -> Result<Quality> {
    Ok(Quality {
        psnr: psnr(original, reconstruction, 1.0)?,
        ssim: ssim(original, reconstruction)?,
        bpp,
    })
}

/// One cell of a sweep for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub s_c: f64,
    pub s_f: f64,
    pub image: String,
    pub quality: Quality,
}

/// Full-factorial `s_c × s_f` grid. The embedding is inverted once per image
/// and the stored scales are rewritten per cell, so each cell is exactly
/// what compress followed by decompress with those scales produces.
pub fn sweep(
    model: &Model,
    corpus: &[(String, Tensor)],
    sc_list: &[f64],
    sf_list: &[f64],
    cfg: &RunConfig,
) -> Result<Vec<SweepRow>> {
    if sc_list.is_empty() || sf_list.is_empty() {
        return Err(Error::Config("sweep needs at least one s_c and one s_f".into()));
    }
    let mut rows = Vec::with_capacity(corpus.len() * sc_list.len() * sf_list.len());
    for (name, x) in corpus {
        let base = compress(model, x, cfg)?;
        for &s_c in sc_list {
            for &s_f in sf_list {
                let mut stream = base.bitstream.clone();
                stream.header.s_c = s_c;
                stream.header.s_f = s_f;
                let bpp = stream.breakdown()?.bpp;
                let y = decompress(model, &stream, sample_seed(cfg.seed, 0))?;
                rows.push(SweepRow {
                    s_c,
                    s_f,
                    image: name.clone(),
                    quality: measure(x, &y, bpp)?,
                });
            }
        }
    }
    Ok(rows)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Per-cell corpus means, in grid order.
pub fn sweep_means(rows: &[SweepRow]) -> Vec<(f64, f64, Quality)> {
    let mut cells: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        if !cells.contains(&(r.s_c, r.s_f)) {
            cells.push((r.s_c, r.s_f));
        }
    }
    cells
        .into_iter()
        .map(|(s_c, s_f)| {
            let cell = || rows.iter().filter(move |r| r.s_c == s_c && r.s_f == s_f);
            let q = Quality {
                psnr: mean(cell().map(|r| r.quality.psnr)),
                ssim: mean(cell().map(|r| r.quality.ssim)),
                bpp: mean(cell().map(|r| r.quality.bpp)),
            };
            (s_c, s_f, q)
        })
        .collect()
}

/// Per-image rows followed by one `mean` row per cell.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        let q = r.quality;
        writeln!(s, "{},{},{},{:.6},{:.6},{:.6}", r.s_c, r.s_f, r.image, q.psnr, q.ssim, q.bpp).unwrap();
    }
    for (s_c, s_f, q) in sweep_means(rows) {
        writeln!(s, "{s_c},{s_f},mean,{:.6},{:.6},{:.6}", q.psnr, q.ssim, q.bpp).unwrap();
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub quality: Quality,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean: Quality,
    /// Population std of the per-image bpp.
    pub bpp_std: f64,
}

/// Compress and decompress every image with the run's own settings.
pub fn evaluate(model: &Model, corpus: &[(String, Tensor)], cfg: &RunConfig) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(corpus.len());
    for (name, x) in corpus {
        let c = compress(model, x, cfg)?;
        let y = decompress(model, &c.bitstream, sample_seed(cfg.seed, 0))?;
        rows.push(EvalRow {
            image: name.clone(),
            quality: measure(x, &y, c.breakdown.bpp)?,
        });
    }
    let stats = bitrate_stats(rows.iter().map(|r| r.quality.bpp).collect())?;
    let mean = Quality {
        psnr: mean(rows.iter().map(|r| r.quality.psnr)),
        ssim: mean(rows.iter().map(|r| r.quality.ssim)),
        bpp: stats.mean,
    };
    Ok(EvalReport {
        rows,
        mean,
        bpp_std: stats.std,
    })
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{EVAL_CSV_HEADER}\n");
        for r in &self.rows {
            let q = r.quality;
            writeln!(s, "{},{:.6},{:.6},{:.6},", r.image, q.psnr, q.ssim, q.bpp).unwrap();
        }
        let m = self.mean;
        writeln!(s, "mean,{:.6},{:.6},{:.6},{:.6}", m.psnr, m.ssim, m.bpp, self.bpp_std).unwrap();
        s
    }
}

/// Human-readable bit accounting printed by the compress verb.
pub fn describe_breakdown(b: &BitBreakdown, header: &BitstreamHeader) -> String {
    format!(
        "embedding symbols {}\nembedding bits {}\nguidance bits {}\nheader bits {}\ntotal bits {}\nbpp {:.6} (8·{}/({}·{}))",
        header.embedding_symbols(),
        b.embedding_bits,
        b.guidance_bits,
        b.header_bits,
        b.total_bits,
        b.bpp,
        b.total_bits / 8,
        header.height,
        header.width
    )
}

/// Checks the accounting identity of a packed stream.
pub fn bpp_of_bytes(bytes: &[u8], header: &BitstreamHeader) -> f64 {
    bits_per_pixel(bytes.len(), header.height as usize, header.width as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{generate_toy_dataset, ToyDatasetSpec, ToyKind};

    fn tiny_cfg() -> RunConfig {
        let mut c = RunConfig::default();
        c.timesteps = 50;
        c.widths = [4, 6, 8];
        c.time_dim = 8;
        c.cond_hidden = 8;
        c.tokens = 2;
        c.dims = 4;
        c.train_steps = 5;
        c.steps = 4;
        c.inv_steps = 3;
        c
    }

    fn tiny_model(cfg: &RunConfig) -> (Model, Vec<Tensor>) {
        let images = generate_toy_dataset(&ToyDatasetSpec {
            count: 2,
            height: 16,
            width: 16,
            seed: 3,
            kind: ToyKind::Mixed,
        })
        .unwrap();
        (train(&images, cfg).unwrap().model, images)
    }

    #[test]
    fn compress_decompress_round_trip() {
        let cfg = tiny_cfg();
        let (m, images) = tiny_model(&cfg);
        let c = compress(&m, &images[0], &cfg).unwrap();
        assert_eq!(c.breakdown.bpp, bpp_of_bytes(&c.bytes, &c.bitstream.header));
        let back = Bitstream::unpack(&c.bytes).unwrap();
        let y = decompress(&m, &back, 1).unwrap();
        assert_eq!(y.shape(), &[3, 16, 16]);
        assert_eq!(y, decompress(&m, &c.bitstream, 1).unwrap());
    }

    #[test]
    fn foreign_checkpoint_is_incompatible() {
        let cfg = tiny_cfg();
        let (m, images) = tiny_model(&cfg);
        let c = compress(&m, &images[0], &cfg).unwrap();
        let mut other_cfg = cfg.clone();
        other_cfg.seed = 9;
        let (other, _) = tiny_model(&other_cfg);
        assert!(matches!(decompress(&other, &c.bitstream, 0), Err(Error::Incompatible(_))));
    }

    #[test]
    fn wrong_image_size_is_rejected() {
        let cfg = tiny_cfg();
        let (m, _) = tiny_model(&cfg);
        let x = Tensor::zeros(&[3, 32, 32]);
        assert!(matches!(compress(&m, &x, &cfg), Err(Error::Dimension(_))));
    }

    #[test]
    fn sweep_and_eval_shapes() {
        let cfg = tiny_cfg();
        let (m, images) = tiny_model(&cfg);
        let corpus: Vec<(String, Tensor)> =
            images.into_iter().enumerate().map(|(i, x)| (format!("im{i}"), x)).collect();
        let rows = sweep(&m, &corpus, &[0.0, 5.0], &[0.95], &cfg).unwrap();
        assert_eq!(rows.len(), 4);
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 1 + 4 + 2);
        let report = evaluate(&m, &corpus, &cfg).unwrap();
        assert_eq!(report.to_csv().lines().count(), 1 + 2 + 1);
        let single = sweep(&m, &corpus[..1], &[cfg.sc], &[cfg.sf], &cfg).unwrap();
        assert_eq!(single[0].quality, report.rows[0].quality);
    }

    #[test]
    fn sample_seeds_are_distinct() {
        assert_ne!(sample_seed(0, 0), sample_seed(0, 1));
        assert_ne!(sample_seed(0, 1), sample_seed(1, 0));
    }
}
