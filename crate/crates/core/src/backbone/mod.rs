//! Conditional noise-prediction network, latent codec and checkpoints.

pub mod descriptor;
pub mod latent;
pub mod model;
pub mod net;
pub mod params;
pub mod train;

pub use descriptor::{describe, DescriptorProjection};
pub use latent::{train_autoencoder, CodecMode, LatentCodec, LatentNorm};
pub use model::{model_id, Model, TrainStats};
pub use net::{CondVar, Condition, DenoiserNet, NetConfig, OutputHead};
pub use params::ParamSet;
pub use train::{drop_condition, train_denoiser, train_model, ModelSpec, TrainConfig, TrainLog, TrainedModel};
