use super::params::{Conv, ParamSet};
use crate::bytes::{Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Adam, Rng64, Tape, Tensor, Var};
use rand::RngExt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodecMode {
    Identity,
    Autoencoder,
}

impl CodecMode {
    pub fn id(self) -> u8 {
        match self {
            CodecMode::Identity => 0,
            CodecMode::Autoencoder => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(CodecMode::Identity),
            1 => Some(CodecMode::Autoencoder),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Autoencoder {
    latent_channels: usize,
    hidden: usize,
    params: ParamSet,
    enc: [Conv; 3],
    dec: [Conv; 4],
}

impl Autoencoder {
    fn new(latent_channels: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut p = ParamSet::new();
        let h = hidden;
        let enc = [
            Conv::new(&mut p, "ae.enc0", 3, h, 3, true, &mut rng),
            Conv::new(&mut p, "ae.enc1", h, h, 3, true, &mut rng),
            Conv::new(&mut p, "ae.enc2", h, latent_channels, 3, true, &mut rng),
        ];
        let dec = [
            Conv::new(&mut p, "ae.dec0", latent_channels, h, 3, true, &mut rng),
            Conv::new(&mut p, "ae.dec1", h, h, 3, true, &mut rng),
            Conv::new(&mut p, "ae.dec2", h, h, 3, true, &mut rng),
            Conv::new(&mut p, "ae.dec3", h, 3, 3, true, &mut rng),
        ];
        Self {
            latent_channels,
            hidden,
            params: p,
            enc,
            dec,
        }
    }

    fn encode(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let x = self.enc[0].forward(tape, vars, x)?;
        let x = tape.silu(x)?;
        let x = tape.avg_pool(x, 2)?;
        let x = self.enc[1].forward(tape, vars, x)?;
        let x = tape.silu(x)?;
        let x = tape.avg_pool(x, 2)?;
        self.enc[2].forward(tape, vars, x)
    }

    fn decode(&self, tape: &mut Tape, vars: &[Var], z: Var) -> Result<Var> {
        let x = self.dec[0].forward(tape, vars, z)?;
        let x = tape.silu(x)?;
        let x = tape.upsample2(x)?;
        let x = self.dec[1].forward(tape, vars, x)?;
        let x = tape.silu(x)?;
        let x = tape.upsample2(x)?;
        let x = self.dec[2].forward(tape, vars, x)?;
        let x = tape.silu(x)?;
        let x = self.dec[3].forward(tape, vars, x)?;
        tape.add_scalar(x, 0.5)
    }
}

/// The map `d(·)` between image space and the space diffusion runs in.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCodec {
    ae: Option<Autoencoder>,
}

impl LatentCodec {
    pub fn identity() -> Self {
        Self { ae: None }
    }

    /// Untrained ×4 autoencoder; see [`train_autoencoder`].
    pub fn autoencoder(latent_channels: usize, hidden: usize, seed: u64) -> Result<Self> {
        if latent_channels == 0 || hidden == 0 {
            return Err(Error::Parameter("autoencoder channel counts must be positive".into()));
        }
        Ok(Self {
            ae: Some(Autoencoder::new(latent_channels, hidden, seed)),
        })
    }

    pub fn mode(&self) -> CodecMode {
        match self.ae {
            None => CodecMode::Identity,
            Some(_) => CodecMode::Autoencoder,
        }
    }

    pub fn latent_channels(&self) -> usize {
        self.ae.as_ref().map_or(3, |a| a.latent_channels)
    }

    /// Spatial reduction factor of [`LatentCodec::encode`].
    pub fn factor(&self) -> usize {
        if self.ae.is_some() {
            4
        } else {
            1
        }
    }

    pub fn latent_shape(&self, height: usize, width: usize) -> Result<[usize; 3]> {
        let f = self.factor();
        if height % f != 0 || width % f != 0 {
            return Err(Error::Parameter(format!(
                "image {height}×{width} not divisible by {f}"
            )));
        }
        Ok([self.latent_channels(), height / f, width / f])
    }

    pub fn params(&self) -> Option<&ParamSet> {
        self.ae.as_ref().map(|a| &a.params)
    }

    fn check_image(&self, x: &Tensor) -> Result<()> {
        let (c, h, w) = x.chw()?;
        if c != 3 {
            return Err(Error::Dimension(format!("image must have 3 channels, got {c}")));
        }
        self.latent_shape(h, w).map(|_| ())
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_image(x)?;
        match &self.ae {
            None => Ok(x.clone()),
            Some(ae) => {
                let mut tape = Tape::new();
                let vars = ae.params.register(&mut tape, false);
                let xv = tape.constant(x.clone());
                let z = ae.encode(&mut tape, &vars, xv)?;
                Ok(tape.value(z).clone())
            }
        }
    }

    /// Decoded image clamped to `[0, 1]`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        match &self.ae {
            None => Ok(z.clone()),
            Some(_) => Ok(self.decode_unclamped(z)?.map(|v| v.clamp(0.0, 1.0))),
        }
    }

    pub fn decode_unclamped(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let zv = tape.constant(z.clone());
        let x = self.decode_on_tape(&mut tape, &vars, zv)?;
        Ok(tape.value(x).clone())
    }

    /// Records this codec's (frozen) parameters on a tape.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.ae.as_ref().map_or_else(Vec::new, |a| a.params.register(tape, false))
    }

    /// Differentiable, unclamped decode.
    pub fn decode_on_tape(&self, tape: &mut Tape, vars: &[Var], z: Var) -> Result<Var> {
        match &self.ae {
            None => Ok(z),
            Some(ae) => {
                let (c, _, _) = tape.value(z).chw()?;
                if c != ae.latent_channels {
                    return Err(Error::Dimension(format!(
                        "latent has {c} channels, decoder expects {}",
                        ae.latent_channels
                    )));
                }
                ae.decode(tape, vars, z)
            }
        }
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.u8(self.mode().id());
        if let Some(ae) = &self.ae {
            w.u32(ae.latent_channels as u32);
            w.u32(ae.hidden as u32);
        }
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let id = r.u8("latent codec id")?;
        match CodecMode::from_id(id) {
            Some(CodecMode::Identity) => Ok(Self::identity()),
            Some(CodecMode::Autoencoder) => {
                let c = r.u32("autoencoder latent channels")? as usize;
                let h = r.u32("autoencoder hidden")? as usize;
                Self::autoencoder(c, h, 0).map_err(|e| Error::format("autoencoder config", e.to_string()))
            }
            None => Err(Error::format("latent codec id", format!("unknown id {id}"))),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Option<&mut ParamSet> {
        self.ae.as_mut().map(|a| &mut a.params)
    }
}

/// Trains the autoencoder on reconstruction MSE; returns per-step losses.
/// Identity codecs return an empty log.
pub fn train_autoencoder(
    codec: &mut LatentCodec,
    images: &[Tensor],
    steps: usize,
    batch: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let Some(ae) = codec.ae.as_mut() else {
        return Ok(Vec::new());
    };
    if images.is_empty() {
        return Err(Error::Parameter("autoencoder training needs at least one image".into()));
    }
    if batch == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    let mut rng: Rng64 = seeded_rng(seed);
    let mut opt = Adam::new(lr);
    let mut log = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut total = 0.0;
        for _ in 0..batch {
            let x = &images[rng.random_range(0..images.len())];
            let mut tape = Tape::new();
            let vars = ae.params.register(&mut tape, true);
            let xv = tape.constant(x.clone());
            let z = ae.encode(&mut tape, &vars, xv)?;
            let y = ae.decode(&mut tape, &vars, z)?;
            let mse = tape.mse(y, xv)?;
            total += tape.value(mse).data()[0];
            let loss = tape.scale(mse, 1.0 / batch as f64)?;
            let mut grads = tape.backward(loss)?;
            ae.params.collect_grads(&mut grads, &vars)?;
        }
        ae.params.step(&mut opt)?;
        log.push(total / batch as f64);
    }
    Ok(log)
}

/// Per-channel standardization of latents using training statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentNorm {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl LatentNorm {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::Dimension(format!(
                "{} means for {} stds",
                mean.len(),
                std.len()
            )));
        }
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Parameter("latent statistics must be finite with std > 0".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Statistics of a set of `C×H×W` latents.
    pub fn fit(latents: &[Tensor]) -> Result<Self> {
        let first = latents
            .first()
            .ok_or_else(|| Error::Parameter("no latents to fit".into()))?;
        let (c, _, _) = first.chw()?;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut count = 0usize;
        for z in latents {
            z.same_shape(first)?;
            let (_, h, w) = z.chw()?;
            for (ch, plane) in z.data().chunks(h * w).enumerate() {
                sum[ch] += plane.iter().sum::<f64>();
                sq[ch] += plane.iter().map(|v| v * v).sum::<f64>();
            }
            count += h * w;
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n - m * m).max(0.0).sqrt().max(1e-3))
            .collect();
        Self::new(mean, std)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    fn check(&self, z: &Tensor) -> Result<usize> {
        let (c, h, w) = z.chw()?;
        if c != self.mean.len() {
            return Err(Error::Dimension(format!(
                "latent has {c} channels, statistics cover {}",
                self.mean.len()
            )));
        }
        Ok(h * w)
    }

    pub fn normalize(&self, z: &Tensor) -> Result<Tensor> {
        let plane = self.check(z)?;
        let mut out = z.clone();
        for (ch, p) in out.data_mut().chunks_mut(plane).enumerate() {
            let (m, s) = (self.mean[ch], self.std[ch]);
            p.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }

    pub fn denormalize(&self, z: &Tensor) -> Result<Tensor> {
        let plane = self.check(z)?;
        let mut out = z.clone();
        for (ch, p) in out.data_mut().chunks_mut(plane).enumerate() {
            let (m, s) = (self.mean[ch], self.std[ch]);
            p.iter_mut().for_each(|v| *v = *v * s + m);
        }
        Ok(out)
    }

    /// Differentiable [`LatentNorm::denormalize`].
    pub fn denormalize_on_tape(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let c = self.mean.len();
        let gain = tape.constant(Tensor::new(&[c], self.std.iter().map(|s| s - 1.0).collect())?);
        let shift = tape.constant(Tensor::from_slice(&[c], &self.mean)?);
        tape.film(z, gain, shift)
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.u32(self.mean.len() as u32);
        for (m, s) in self.mean.iter().zip(&self.std) {
            w.f64(*m);
            w.f64(*s);
        }
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let c = r.u32("latent stats channels")? as usize;
        if c == 0 || c > 4096 {
            return Err(Error::format("latent stats channels", format!("implausible count {c}")));
        }
        let mut mean = Vec::with_capacity(c);
        let mut std = Vec::with_capacity(c);
        for _ in 0..c {
            mean.push(r.f64("latent mean")?);
            std.push(r.f64("latent std")?);
        }
        Self::new(mean, std).map_err(|e| Error::format("latent stats", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_round_trip_is_exact() {
        let x = Tensor::uniform(&[3, 8, 12], 0.0, 1.0, &mut seeded_rng(0));
        let c = LatentCodec::identity();
        assert_eq!(c.decode(&c.encode(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn autoencoder_shapes() {
        let c = LatentCodec::autoencoder(4, 8, 1).unwrap();
        let x = Tensor::uniform(&[3, 16, 24], 0.0, 1.0, &mut seeded_rng(0));
        let z = c.encode(&x).unwrap();
        assert_eq!(z.shape(), &[4, 4, 6]);
        let y = c.decode(&z).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let bad = Tensor::zeros(&[3, 10, 8]);
        assert!(matches!(c.encode(&bad), Err(Error::Parameter(_))));
    }

    #[test]
    fn norm_denormalize_on_tape_matches() {
        let z = Tensor::randn(&[2, 3, 3], &mut seeded_rng(5));
        let n = LatentNorm::new(vec![0.3, -1.0], vec![0.5, 2.0]).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(z.clone());
        let d = n.denormalize_on_tape(&mut tape, v).unwrap();
        assert!(tape.value(d).max_abs_diff(&n.denormalize(&z).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn fit_standardizes() {
        let mut rng = seeded_rng(2);
        let zs: Vec<Tensor> = (0..4)
            .map(|_| Tensor::randn(&[3, 4, 4], &mut rng).map(|v| 2.0 * v + 0.7))
            .collect();
        let n = LatentNorm::fit(&zs).unwrap();
        let normed: Vec<Tensor> = zs.iter().map(|z| n.normalize(z).unwrap()).collect();
        let refit = LatentNorm::fit(&normed).unwrap();
        for (m, s) in refit.mean().iter().zip(refit.std()) {
            assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn norm_round_trip(vals in proptest::collection::vec(-5.0f64..5.0, 18), m in -1.0f64..1.0, s in 0.1f64..3.0) {
            let z = Tensor::new(&[2, 3, 3], vals).unwrap();
            let n = LatentNorm::new(vec![m, -m], vec![s, 1.0 / s]).unwrap();
            let back = n.denormalize(&n.normalize(&z).unwrap()).unwrap();
            prop_assert!(back.max_abs_diff(&z).unwrap() < 1e-12);
        }
    }

    #[test]
    fn autoencoder_training_reduces_loss() {
        let mut rng = seeded_rng(9);
        let imgs: Vec<Tensor> = (0..4).map(|_| Tensor::uniform(&[3, 8, 8], 0.2, 0.8, &mut rng)).collect();
        let mut c = LatentCodec::autoencoder(4, 8, 3).unwrap();
        let log = train_autoencoder(&mut c, &imgs, 60, 2, 3e-3, 1).unwrap();
        let head: f64 = log[..6].iter().sum::<f64>() / 6.0;
        let tail: f64 = log[54..].iter().sum::<f64>() / 6.0;
        assert!(tail < head, "{head} -> {tail}");
    }
}
