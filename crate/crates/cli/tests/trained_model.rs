//! Checks on the committed toy checkpoint.

use std::path::PathBuf;

use gicx_core::backbone::{Condition, DescriptorProjection, Model};
use gicx_core::diffusion::q_sample;
use gicx_core::metrics::{generate_toy_dataset, ToyDatasetSpec, ToyKind};
use gicx_core::numerics::{seeded_rng, Tensor};
use rand::RngExt;

fn model() -> Model {
    Model::load(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy.gckp")).unwrap()
}

/// Held-out images (training used seed 1), 200 `(t, ε)` pairs. The zero
/// predictor's error is `mean(ε²)` on the same draws.
#[test]
fn denoiser_beats_zero_predictor_on_held_out_pairs() {
    let m = model();
    let images = generate_toy_dataset(&ToyDatasetSpec {
        count: 20,
        height: 32,
        width: 32,
        seed: 2,
        kind: ToyKind::Mixed,
    })
    .unwrap();
    let net = m.net.config();
    let projection = DescriptorProjection::new(net.tokens, net.dims);
    let mut rng = seeded_rng(42);
    let (mut cond_err, mut null_err, mut zero_err) = (0.0, 0.0, 0.0);
    let n = 200;
    for k in 0..n {
        let x = &images[k % images.len()];
        let z0 = m.encode_image(x).unwrap();
        let t = rng.random_range(1..=m.schedule().steps());
        let eps = Tensor::randn(z0.shape(), &mut rng);
        let zt = q_sample(m.schedule(), &z0, t, &eps).unwrap();
        let e = projection.embed(x).unwrap();
        cond_err += m.net.predict_noise(&zt, t, Condition::Embedding(&e)).unwrap().mse(&eps).unwrap();
        null_err += m.net.predict_noise(&zt, t, Condition::Null).unwrap().mse(&eps).unwrap();
        zero_err += eps.data().iter().map(|v| v * v).sum::<f64>() / eps.len() as f64;
    }
    let (cond_err, null_err, zero_err) = (cond_err / n as f64, null_err / n as f64, zero_err / n as f64);
    assert!(cond_err < zero_err, "conditional {cond_err} vs zero predictor {zero_err}");
    assert!(null_err < zero_err, "unconditional {null_err} vs zero predictor {zero_err}");
}

#[test]
fn checkpoint_round_trips_and_id_is_stable() {
    let m = model();
    let bytes = m.to_bytes();
    assert_eq!(Model::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    assert_eq!(m.image_size(), (32, 32));
    assert_eq!(m.id(), gicx_core::backbone::model_id(&bytes));
}
