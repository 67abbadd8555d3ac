
use super::schedule::{ddpm_posterior_mean, predict_x0, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Rng64, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub num_steps: usize,
    /// DDIM stochasticity: 0 is deterministic, 1 matches ancestral sampling.
    pub eta: f64,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.num_steps == 0 || self.num_steps > schedule.steps() {
            return Err(Error::Parameter(format!(
                "sampler steps {} outside [1, {}]",
                self.num_steps,
                schedule.steps()
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Parameter(format!("eta {} outside [0, 1]", self.eta)));
        }
        Ok(())
    }
}

/// Evenly spaced, strictly decreasing timesteps from `T` down to 1.
pub fn timestep_grid(total: usize, num_steps: usize) -> Vec<usize> {
    if num_steps <= 1 {
        return vec![total];
    }
    let span = (total - 1) as f64;
    (0..num_steps)
        .rev()
        .map(|i| 1 + (span * i as f64 / (num_steps - 1) as f64).round() as usize)
        .collect()
}

/// Standard deviation of the fresh noise in a DDIM step from `t` to `t_prev`.
pub fn ddim_sigma(schedule: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> f64 {
    let ab = schedule.alpha_bar(t);
    let abp = schedule.alpha_bar(t_prev);
    eta * ((1.0 - abp) / (1.0 - ab)).sqrt() * (1.0 - ab / abp).sqrt()
}

fn standard_normal_like(shape: &[usize], rng: &mut Rng64) -> Tensor {
    Tensor::randn(shape, rng)
}

/// One DDIM update `z_t → z_{t_prev}`; `t_prev = 0` lands on the clean end.
pub fn ddim_step(
    schedule: &NoiseSchedule,
    z_t: &Tensor,
    t: usize,
    t_prev: usize,
    eps_hat: &Tensor,
    eta: f64,
    rng: &mut Rng64,
) -> Result<Tensor> {
    schedule.check_t(t)?;
    if t_prev >= t {
        return Err(Error::Parameter(format!(
            "DDIM step must go backwards, got {t} -> {t_prev}"
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Parameter(format!("eta {eta} outside [0, 1]")));
    }
    let x0 = predict_x0(schedule, z_t, t, eps_hat)?;
    let abp = schedule.alpha_bar(t_prev);
    let sigma = ddim_sigma(schedule, t, t_prev, eta);
    let dir = (1.0 - abp - sigma * sigma).max(0.0).sqrt();
    let mut out = x0.axpby(abp.sqrt(), eps_hat, dir)?;
    if sigma > 0.0 {
        let noise = standard_normal_like(z_t.shape(), rng);
        for (o, n) in out.data_mut().iter_mut().zip(noise.data()) {
            *o += sigma * n;
        }
    }
    Ok(out)
}

/// Draws `z_{t−1} ~ N(mu, σ_t²·I)`; the final step (`t = 1`) returns `mu`.
pub fn ddpm_sample_from_mean(schedule: &NoiseSchedule, mu: &Tensor, t: usize, rng: &mut Rng64) -> Result<Tensor> {
    schedule.check_t(t)?;
    if t == 1 {
        return Ok(mu.clone());
    }
    let sigma = schedule.sigma(t);
    let noise = standard_normal_like(mu.shape(), rng);
    mu.axpby(1.0, &noise, sigma)
}

/// One ancestral DDPM step driven by a noise estimate.
pub fn ddpm_step(
    schedule: &NoiseSchedule,
    z_t: &Tensor,
    t: usize,
    eps_hat: &Tensor,
    rng: &mut Rng64,
) -> Result<Tensor> {
    let mu = ddpm_posterior_mean(schedule, z_t, t, eps_hat)?;
    ddpm_sample_from_mean(schedule, &mu, t, rng)
}

/// Noise-prediction callback `(z_t, t) → eps_hat` consumed by [`sample_loop`].
pub trait Denoise {
    fn denoise(&mut self, z_t: &Tensor, t: usize) -> Result<Tensor>;
}

impl<F> Denoise for F
where
    F: FnMut(&Tensor, usize) -> Result<Tensor>,
{
    fn denoise(&mut self, z_t: &Tensor, t: usize) -> Result<Tensor> {
        self(z_t, t)
    }
}

/// DDIM sampling from seeded standard-normal `z_T` down to `z_0`.
pub fn sample_loop<D: Denoise + ?Sized>(
    schedule: &NoiseSchedule,
    denoise: &mut D,
    config: &SamplerConfig,
    shape: &[usize],
) -> Result<Tensor> {
    config.validate(schedule)?;
    let mut rng = seeded_rng(config.seed);
    let mut z = Tensor::randn(shape, &mut rng);
    let grid = timestep_grid(schedule.steps(), config.num_steps);
    for (i, &t) in grid.iter().enumerate() {
        let t_prev = grid.get(i + 1).copied().unwrap_or(0);
        let eps = denoise.denoise(&z, t)?;
        if eps.shape() != z.shape() {
            return Err(Error::Contract(format!(
                "denoiser returned shape {:?} for latent {:?}",
                eps.shape(),
                z.shape()
            )));
        }
        z = ddim_step(schedule, &z, t, t_prev, &eps, config.eta, &mut rng)?;
        if !z.is_finite() {
            return Err(Error::Numeric(format!("non-finite latent after step t={t}")));
        }
    }
    Ok(z)
}
