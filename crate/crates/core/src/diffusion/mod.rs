//! Noise schedules, forward noising and the DDPM/DDIM reverse samplers.

pub mod sampler;
pub mod schedule;

pub use sampler::{
    ddim_sigma, ddim_step, ddpm_sample_from_mean, ddpm_step, sample_loop, timestep_grid, Denoise,
    SamplerConfig,
};
pub use schedule::{
    ddpm_posterior_mean, posterior_mean_with, predict_x0, q_sample, NoiseSchedule, ScheduleKind,
};
