use rand::{Rng, RngExt};

use super::descriptor::DescriptorProjection;
use super::latent::{train_autoencoder, LatentCodec, LatentNorm};
use super::model::{Model, TrainStats};
use super::net::{CondVar, DenoiserNet, NetConfig, OutputHead};
use crate::diffusion::{q_sample, NoiseSchedule};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Adam, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Probability of replacing the condition with the null embedding.
    pub p_uncond: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 4,
            lr: 5e-4,
            p_uncond: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(Error::Parameter(format!("p_uncond {} outside [0, 1]", self.p_uncond)));
        }
        if self.batch == 0 {
            return Err(Error::Parameter("batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Parameter(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// Per-step record of a denoiser training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    /// `key=value` echo of the configuration.
    pub header: Vec<String>,
    pub losses: Vec<f64>,
    /// Number of batch entries trained with the null condition, per step.
    pub dropped: Vec<usize>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for h in &self.header {
            s.push_str(&format!("# {h}\n"));
        }
        s.push_str("step,loss,dropped\n");
        for (i, (l, d)) in self.losses.iter().zip(&self.dropped).enumerate() {
            s.push_str(&format!("{},{l:.9e},{d}\n", i + 1));
        }
        s
    }
}

/// One Bernoulli draw of the condition-dropout decision.
pub fn drop_condition<R: Rng + ?Sized>(rng: &mut R, p_uncond: f64) -> bool {
    p_uncond > 0.0 && rng.random_bool(p_uncond)
}

/// MSE noise-prediction training with condition dropout.
///
/// `latents` are standardized latents and `conditions[i]` the embedding of
/// `latents[i]`.
pub fn train_denoiser(
    net: &mut DenoiserNet,
    latents: &[Tensor],
    conditions: &[EmbeddingMatrix],
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    if latents.is_empty() {
        return Err(Error::Parameter("training set is empty".into()));
    }
    if latents.len() != conditions.len() {
        return Err(Error::Dimension(format!(
            "{} latents but {} conditions",
            latents.len(),
            conditions.len()
        )));
    }
    let schedule = net.config().schedule.clone();
    let header = vec![
        format!("steps={}", config.steps),
        format!("batch={}", config.batch),
        format!("lr={}", config.lr),
        format!("p_uncond={}", config.p_uncond),
        format!("seed={}", config.seed),
    ];
    let mut rng = seeded_rng(config.seed);
    let mut opt = Adam::new(config.lr);
    let mut losses = Vec::with_capacity(config.steps);
    let mut dropped = Vec::with_capacity(config.steps);
    let inv_b = 1.0 / config.batch as f64;
    for _ in 0..config.steps {
        let mut total = 0.0;
        let mut n_drop = 0;
        for _ in 0..config.batch {
            let i = rng.random_range(0..latents.len());
            let t = rng.random_range(1..=schedule.steps());
            let eps = Tensor::randn(latents[i].shape(), &mut rng);
            let z_t = q_sample(&schedule, &latents[i], t, &eps)?;
            let drop = drop_condition(&mut rng, config.p_uncond);
            n_drop += drop as usize;

            let mut tape = Tape::new();
            let vars = net.params().register(&mut tape, true);
            let z = tape.constant(z_t);
            let cond = if drop {
                CondVar::Null
            } else {
                CondVar::Embedding(tape.constant(conditions[i].values().clone()))
            };
            let out = net.forward(&mut tape, &vars, z, t, cond)?;
            let target = tape.constant(eps);
            let mse = tape.mse(out, target)?;
            total += tape.value(mse).data()[0];
            let loss = tape.scale(mse, inv_b)?;
            let mut grads = tape.backward(loss)?;
            net.params_mut().collect_grads(&mut grads, &vars)?;
        }
        net.params_mut().step(&mut opt)?;
        losses.push(total * inv_b);
        dropped.push(n_drop);
    }
    Ok(TrainLog {
        header,
        losses,
        dropped,
    })
}

/// Architecture and schedule of a model to be trained from images.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub schedule: NoiseSchedule,
    pub widths: [usize; 3],
    pub time_dim: usize,
    pub cond_hidden: usize,
    pub tokens: usize,
    pub dims: usize,
    pub head: OutputHead,
    /// `Some((latent_channels, hidden))` selects the ×4 autoencoder codec.
    pub autoencoder: Option<(usize, usize)>,
    pub ae_steps: usize,
}

/// Result of [`train_model`].
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: Model,
    pub log: TrainLog,
    pub ae_losses: Vec<f64>,
}

/// Full training: optional autoencoder, latent statistics, descriptor
/// conditions, then the denoiser.
pub fn train_model(images: &[Tensor], spec: &ModelSpec, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let first = images
        .first()
        .ok_or_else(|| Error::Parameter("training set is empty".into()))?;
    let (_, h, w) = first.chw()?;
    for x in images {
        if x.shape() != first.shape() {
            return Err(Error::Dimension(format!(
                "training images differ in shape: {:?} vs {:?}",
                x.shape(),
                first.shape()
            )));
        }
    }
    let mut codec = match spec.autoencoder {
        None => LatentCodec::identity(),
        Some((c, hidden)) => LatentCodec::autoencoder(c, hidden, config.seed ^ 0xae)?,
    };
    let ae_losses = train_autoencoder(&mut codec, images, spec.ae_steps, config.batch, config.lr, config.seed ^ 0xae)?;
    let raw: Vec<Tensor> = images.iter().map(|x| codec.encode(x)).collect::<Result<_>>()?;
    let norm = LatentNorm::fit(&raw)?;
    let latents: Vec<Tensor> = raw.iter().map(|z| norm.normalize(z)).collect::<Result<_>>()?;

    let projection = DescriptorProjection::new(spec.tokens, spec.dims);
    let conditions: Vec<EmbeddingMatrix> = images.iter().map(|x| projection.embed(x)).collect::<Result<_>>()?;
    let all: Vec<f64> = conditions.iter().flat_map(|e| e.values().data().to_vec()).collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let embedding_std = (all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / all.len() as f64)
        .sqrt()
        .max(1e-6);

    let [c, lh, lw] = codec.latent_shape(h, w)?;
    let net_config = NetConfig {
        latent_channels: c,
        height: lh,
        width: lw,
        widths: spec.widths,
        time_dim: spec.time_dim,
        cond_hidden: spec.cond_hidden,
        tokens: spec.tokens,
        dims: spec.dims,
        schedule: spec.schedule.clone(),
        head: spec.head,
        condition_enabled: config.p_uncond < 1.0,
    };
    let mut net = DenoiserNet::new(net_config, config.seed)?;
    let log = train_denoiser(&mut net, &latents, &conditions, config)?;
    let model = Model {
        net,
        codec,
        norm,
        stats: TrainStats {
            embedding_std,
            p_uncond: config.p_uncond,
            steps: config.steps as u64,
        },
    };
    Ok(TrainedModel {
        model,
        log,
        ae_losses,
    })
}
