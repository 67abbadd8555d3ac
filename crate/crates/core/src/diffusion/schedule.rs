use crate::bytes::{Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
}

impl ScheduleKind {
    pub fn id(self) -> u8 {
        match self {
            ScheduleKind::Linear => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(ScheduleKind::Linear),
            _ => None,
        }
    }
}

/// Variance schedule of the forward noising chain.
///
/// Timesteps are 1-based: `t ∈ [1, T]`. Index 0 of the `alpha_bar` accessor
/// is the clean end of the chain where `ᾱ_0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    beta_start: f64,
    beta_end: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_variance: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear interpolation of `β_t` from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::new(ScheduleKind::Linear, steps, beta_start, beta_end)
    }

    pub fn new(kind: ScheduleKind, steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 || steps > u32::MAX as usize {
            return Err(Error::Parameter(format!("invalid step count {steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Parameter(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let beta: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..steps)
                .map(|i| {
                    if steps == 1 {
                        beta_start
                    } else {
                        beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                    }
                })
                .collect(),
        };
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        // β̃_t = (1−ᾱ_{t−1})/(1−ᾱ_t)·β_t with ᾱ_0 = 1, so β̃_1 = 0.
        let posterior_variance: Vec<f64> = (0..steps)
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]
            })
            .collect();
        // The sampling std uses β̃_t except at t = 1, where β_1 stands in for
        // the degenerate zero variance.
        let sigma = posterior_variance
            .iter()
            .enumerate()
            .map(|(i, &v)| if i == 0 { beta[0].sqrt() } else { v.sqrt() })
            .collect();
        Ok(Self {
            kind,
            beta_start,
            beta_end,
            beta,
            alpha,
            alpha_bar,
            posterior_variance,
            sigma,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Parameter(format!(
                "timestep {t} outside [1, {}]",
                self.steps()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// True posterior variance `β̃_t` of `q(z_{t−1} | z_t, z_0)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.posterior_variance[t - 1]
    }

    /// Reverse-step standard deviation `σ_t`; `Σ_θ = σ_t²·I`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    /// Appends `(kind u8, T u32, beta_start f64, beta_end f64)`.
    pub(crate) fn write(&self, w: &mut Writer) {
        w.u8(self.kind.id());
        w.u32(self.steps() as u32);
        w.f64(self.beta_start);
        w.f64(self.beta_end);
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let id = r.u8("schedule kind")?;
        let kind = ScheduleKind::from_id(id)
            .ok_or_else(|| Error::format("schedule kind", format!("unknown id {id}")))?;
        let steps = r.u32("schedule steps")? as usize;
        let beta_start = r.f64("schedule beta_start")?;
        let beta_end = r.f64("schedule beta_end")?;
        Self::new(kind, steps, beta_start, beta_end)
            .map_err(|e| Error::format("schedule params", e.to_string()))
    }
}

/// `√ᾱ_t·z0 + √(1−ᾱ_t)·eps`.
pub fn q_sample(schedule: &NoiseSchedule, z0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
    schedule.check_t(t)?;
    let ab = schedule.alpha_bar(t);
    z0.axpby(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

/// Clean-sample estimate `(z_t − √(1−ᾱ_t)·eps_hat)/√ᾱ_t`.
pub fn predict_x0(schedule: &NoiseSchedule, z_t: &Tensor, t: usize, eps_hat: &Tensor) -> Result<Tensor> {
    schedule.check_t(t)?;
    let ab = schedule.alpha_bar(t);
    let (c, s) = ((1.0 - ab).sqrt(), ab.sqrt());
    z_t.zip_map(eps_hat, |z, e| (z - c * e) / s)
}

/// DDPM reverse mean `(z_t − β_t/√(1−ᾱ_t)·eps_hat)/√α_t`.
pub fn ddpm_posterior_mean(
    schedule: &NoiseSchedule,
    z_t: &Tensor,
    t: usize,
    eps_hat: &Tensor,
) -> Result<Tensor> {
    schedule.check_t(t)?;
    posterior_mean_with(z_t, eps_hat, schedule.beta(t), schedule.alpha_bar(t))
}

/// DDPM reverse mean for explicit `β_t` and `ᾱ_t`.
pub fn posterior_mean_with(z_t: &Tensor, eps_hat: &Tensor, beta: f64, alpha_bar: f64) -> Result<Tensor> {
    let coef = beta / (1.0 - alpha_bar).sqrt();
    let inv = 1.0 / (1.0 - beta).sqrt();
    z_t.zip_map(eps_hat, |z, e| (z - coef * e) * inv)
}
