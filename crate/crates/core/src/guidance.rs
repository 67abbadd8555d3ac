//! Classifier-free guidance and compression guidance.
//!
//! Compression guidance perturbs the reverse-step mean by the gradient of
//! `L = Σ|pool₄(d(x̂₀(z_t))) − x̂_g|`, where `x̂₀` is the clean-sample
//! estimate, `d` the latent decoder and `pool₄` a ×4 average pool standing in
//! for the non-differentiable guidance-image compressor.
//!
//! With [`Reduction::Mean`] the applied scale is `s_c / n` for `n` guidance
//! elements, i.e. `s_c` multiplies the gradient of the mean absolute error.

use crate::backbone::{CondVar, Condition, Model};
use crate::codec::GUIDANCE_FACTOR;
use crate::diffusion::{predict_x0, Denoise, NoiseSchedule};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::numerics::{avg_pool, Tape, Tensor, Var};

/// How `s_c` relates to the summed L1 discrepancy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reduction {
    /// `s_c` scales the gradient of `Σ|·|`.
    Sum = 0,
    /// `s_c` scales the gradient of the mean of `|·|`.
    #[default]
    Mean = 1,
}

/// How the compression gradient treats the noise estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// `eps_hat` is a constant; one backward pass through the proxy only.
    EpsConstant = 0,
    /// Backpropagate through the denoiser as well.
    #[default]
    FullBackprop = 1,
}

impl Reduction {
    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Reduction::Sum),
            1 => Some(Reduction::Mean),
            _ => None,
        }
    }
}

impl GradientMode {
    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(GradientMode::EpsConstant),
            1 => Some(GradientMode::FullBackprop),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceConfig {
    s_f: f64,
    s_c: f64,
    x_g_hat: Tensor,
    reduction: Reduction,
    mode: GradientMode,
}

impl GuidanceConfig {
    pub fn new(s_f: f64, s_c: f64, x_g_hat: Tensor) -> Result<Self> {
        for (name, v) in [("s_f", s_f), ("s_c", s_c)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Parameter(format!("{name} = {v} must be finite and ≥ 0")));
            }
        }
        let (c, _, _) = x_g_hat.chw()?;
        if c != 3 {
            return Err(Error::Dimension(format!("guidance image needs 3 channels, got {c}")));
        }
        Ok(Self {
            s_f,
            s_c,
            x_g_hat,
            reduction: Reduction::default(),
            mode: GradientMode::default(),
        })
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn with_mode(mut self, mode: GradientMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn mode(&self) -> GradientMode {
        self.mode
    }

    /// Factor applied to the gradient of the summed discrepancy.
    pub fn effective_scale(&self) -> f64 {
        match self.reduction {
            Reduction::Sum => self.s_c,
            Reduction::Mean => self.s_c / self.x_g_hat.len() as f64,
        }
    }

    pub fn s_f(&self) -> f64 {
        self.s_f
    }

    pub fn s_c(&self) -> f64 {
        self.s_c
    }

    pub fn x_g_hat(&self) -> &Tensor {
        &self.x_g_hat
    }

    /// Checks that `x̂_g` is the ×4 reduction of an `height × width` image.
    pub fn check_image_size(&self, height: usize, width: usize) -> Result<()> {
        let s = self.x_g_hat.shape();
        if s[1] * GUIDANCE_FACTOR != height || s[2] * GUIDANCE_FACTOR != width {
            return Err(Error::Dimension(format!(
                "guidance image {}×{} is not the ×{GUIDANCE_FACTOR} reduction of {height}×{width}",
                s[1], s[2]
            )));
        }
        Ok(())
    }
}

/// Differentiable stand-in for compress-after-decode: latent decode
/// followed by ×4 average pooling.
#[derive(Clone, Copy, Debug)]
pub struct GuidanceProxy<'a> {
    model: &'a Model,
}

impl<'a> GuidanceProxy<'a> {
    pub fn new(model: &'a Model) -> Self {
        Self { model }
    }

    pub fn output_shape(&self) -> [usize; 3] {
        let (h, w) = self.model.image_size();
        [3, h / GUIDANCE_FACTOR, w / GUIDANCE_FACTOR]
    }

    /// Records the proxy on `tape`; `codec_vars` come from
    /// [`crate::backbone::LatentCodec::register`].
    pub fn on_tape(&self, tape: &mut Tape, codec_vars: &[Var], z0: Var) -> Result<Var> {
        let img = self.model.decode_on_tape(tape, codec_vars, z0)?;
        tape.avg_pool(img, GUIDANCE_FACTOR)
    }

    pub fn apply(&self, z0: &Tensor) -> Result<Tensor> {
        let img = self.model.codec.decode_unclamped(&self.model.norm.denormalize(z0)?)?;
        avg_pool(&img, GUIDANCE_FACTOR)
    }

    fn check_target(&self, x_g_hat: &Tensor) -> Result<()> {
        if x_g_hat.shape() != self.output_shape() {
            return Err(Error::Dimension(format!(
                "guidance image {:?}, proxy produces {:?}",
                x_g_hat.shape(),
                self.output_shape()
            )));
        }
        Ok(())
    }
}

/// `Σ|proxy(z0) − x̂_g|`.
pub fn guidance_loss(proxy: &GuidanceProxy<'_>, z0: &Tensor, x_g_hat: &Tensor) -> Result<f64> {
    proxy.check_target(x_g_hat)?;
    Ok(proxy.apply(z0)?.sub(x_g_hat)?.abs().sum())
}

/// `eps_uncond + s_f·(eps_cond − eps_uncond)`, evaluated as
/// `(1 − s_f)·eps_uncond + s_f·eps_cond` so both endpoints are exact.
pub fn cfg_combine(eps_cond: &Tensor, eps_uncond: &Tensor, s_f: f64) -> Result<Tensor> {
    eps_uncond.axpby(1.0 - s_f, eps_cond, s_f)
}

fn x0_on_tape(tape: &mut Tape, schedule: &NoiseSchedule, z: Var, eps: Var, t: usize) -> Result<Var> {
    let ab = schedule.alpha_bar(t);
    let noise = tape.scale(eps, (1.0 - ab).sqrt())?;
    let diff = tape.sub(z, noise)?;
    let x0 = tape.scale(diff, 1.0 / ab.sqrt())?;
    // Forward value identical to `predict_x0`, so an exact match has zero loss.
    let exact = predict_x0(schedule, tape.value(z), t, tape.value(eps))?;
    tape.straight_through(x0, exact)
}

fn l1_on_tape(tape: &mut Tape, proxy: &GuidanceProxy<'_>, codec_vars: &[Var], x0: Var, x_g_hat: &Tensor) -> Result<Var> {
    let pooled = proxy.on_tape(tape, codec_vars, x0)?;
    let target = tape.constant(x_g_hat.clone());
    let diff = tape.sub(pooled, target)?;
    let a = tape.abs(diff)?;
    tape.sum(a)
}

/// `∇_{z_t} Σ|proxy(x̂₀(z_t, eps_hat)) − x̂_g|` with `eps_hat` held constant.
pub fn compression_gradient(
    proxy: &GuidanceProxy<'_>,
    schedule: &NoiseSchedule,
    z_t: &Tensor,
    t: usize,
    eps_hat: &Tensor,
    x_g_hat: &Tensor,
) -> Result<Tensor> {
    schedule.check_t(t)?;
    proxy.check_target(x_g_hat)?;
    z_t.same_shape(eps_hat)?;
    let mut tape = Tape::new();
    let codec_vars = proxy.model.codec.register(&mut tape);
    let z = tape.leaf(z_t.clone().with_requires_grad(true));
    let eps = tape.constant(eps_hat.clone());
    let x0 = x0_on_tape(&mut tape, schedule, z, eps, t)?;
    let loss = l1_on_tape(&mut tape, proxy, &codec_vars, x0, x_g_hat)?;
    let mut grads = tape.backward(loss)?;
    let g = grads.take(z).expect("leaf requires grad");
    Tensor::new(z_t.shape(), g)
}

/// Guided noise estimate and compression gradient with the denoiser itself
/// on the tape, so `eps_hat` varies with `z_t`.
pub fn compression_gradient_full(
    model: &Model,
    z_t: &Tensor,
    t: usize,
    embedding: &EmbeddingMatrix,
    s_f: f64,
    x_g_hat: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let proxy = GuidanceProxy::new(model);
    proxy.check_target(x_g_hat)?;
    model.schedule().check_t(t)?;
    let mut tape = Tape::new();
    let net_vars = model.net.params().register(&mut tape, false);
    let codec_vars = model.codec.register(&mut tape);
    let z = tape.leaf(z_t.clone().with_requires_grad(true));
    let e = tape.constant(embedding.values().clone());
    let cond = model.net.forward(&mut tape, &net_vars, z, t, CondVar::Embedding(e))?;
    let uncond = model.net.forward(&mut tape, &net_vars, z, t, CondVar::Null)?;
    let a = tape.scale(uncond, 1.0 - s_f)?;
    let b = tape.scale(cond, s_f)?;
    let eps = tape.add(a, b)?;
    let x0 = x0_on_tape(&mut tape, model.schedule(), z, eps, t)?;
    let loss = l1_on_tape(&mut tape, &proxy, &codec_vars, x0, x_g_hat)?;
    let eps_value = tape.value(eps).clone();
    let mut grads = tape.backward(loss)?;
    let g = Tensor::new(z_t.shape(), grads.take(z).expect("leaf requires grad"))?;
    Ok((eps_value, g))
}

/// `μ − s_c·σ_t²·grad`.
pub fn perturb_mean(mu: &Tensor, schedule: &NoiseSchedule, t: usize, grad: &Tensor, s_c: f64) -> Result<Tensor> {
    schedule.check_t(t)?;
    let var = schedule.sigma(t).powi(2);
    mu.axpby(1.0, grad, -s_c * var)
}

/// Coefficient `c_t` with `eps_eff = eps + s_c·c_t·grad`.
///
/// The DDPM mean is `μ(eps) = (z_t − β_t/√(1−ᾱ_t)·eps)/√α_t`, so shifting
/// `eps` by `Δ` shifts `μ` by `−β_t/(√α_t·√(1−ᾱ_t))·Δ`. Matching the mean
/// perturbation `−s_c·σ_t²·grad` gives `Δ = s_c·σ_t²·√α_t·√(1−ᾱ_t)/β_t·grad`.
pub fn fold_coefficient(schedule: &NoiseSchedule, t: usize) -> f64 {
    let var = schedule.sigma(t).powi(2);
    var * schedule.alpha(t).sqrt() * (1.0 - schedule.alpha_bar(t)).sqrt() / schedule.beta(t)
}

/// Noise estimate whose DDPM mean equals the compression-guided mean.
pub fn fold_into_eps(eps: &Tensor, schedule: &NoiseSchedule, t: usize, grad: &Tensor, s_c: f64) -> Result<Tensor> {
    schedule.check_t(t)?;
    eps.axpby(1.0, grad, s_c * fold_coefficient(schedule, t))
}

/// Sampler callback combining both guidances; see [`guided_denoise_fn`].
pub struct GuidedDenoiser<'a> {
    model: &'a Model,
    config: &'a GuidanceConfig,
    embedding: &'a EmbeddingMatrix,
}

/// Builds the `(z_t, t) → eps_eff` callback used for guided sampling.
pub fn guided_denoise_fn<'a>(
    model: &'a Model,
    config: &'a GuidanceConfig,
    embedding: &'a EmbeddingMatrix,
) -> Result<GuidedDenoiser<'a>> {
    let (h, w) = model.image_size();
    config.check_image_size(h, w)?;
    Ok(GuidedDenoiser {
        model,
        config,
        embedding,
    })
}

impl GuidedDenoiser<'_> {
    /// Classifier-free combination only.
    pub fn cfg_eps(&self, z_t: &Tensor, t: usize) -> Result<Tensor> {
        let net = &self.model.net;
        let s_f = self.config.s_f;
        if s_f == 1.0 {
            return net.predict_noise(z_t, t, Condition::Embedding(self.embedding));
        }
        let uncond = net.predict_noise(z_t, t, Condition::Null)?;
        if s_f == 0.0 {
            return Ok(uncond);
        }
        let cond = net.predict_noise(z_t, t, Condition::Embedding(self.embedding))?;
        cfg_combine(&cond, &uncond, s_f)
    }
}

impl Denoise for GuidedDenoiser<'_> {
    fn denoise(&mut self, z_t: &Tensor, t: usize) -> Result<Tensor> {
        if self.config.s_c == 0.0 {
            return self.cfg_eps(z_t, t);
        }
        let schedule = self.model.schedule();
        let (eps, grad) = match self.config.mode {
            GradientMode::EpsConstant => {
                let eps = self.cfg_eps(z_t, t)?;
                let proxy = GuidanceProxy::new(self.model);
                let g = compression_gradient(&proxy, schedule, z_t, t, &eps, &self.config.x_g_hat)?;
                (eps, g)
            }
            GradientMode::FullBackprop => compression_gradient_full(
                self.model,
                z_t,
                t,
                self.embedding,
                self.config.s_f,
                &self.config.x_g_hat,
            )?,
        };
        fold_into_eps(&eps, schedule, t, &grad, self.config.effective_scale())
    }
}
