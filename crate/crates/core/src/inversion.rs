//! Embedding inversion: fit the conditioning embedding of one image by
//! minimizing the denoising loss of the frozen network, with the embedding
//! quantizer inside the loop.

use rand::RngExt;

use crate::backbone::{CondVar, Condition, Model};
use crate::codec::QuantizerSpec;
use crate::diffusion::q_sample;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Adam, Rng64, Tape, Tensor, Var};

/// Half-width of the default embedding quantizer range, in units of the
/// training-time embedding std.
pub const QUANTIZER_RANGE_STDS: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct InversionConfig {
    pub steps: usize,
    pub lr: f64,
    pub quantize_in_loop: bool,
    pub quantizer: QuantizerSpec,
    pub seed: u64,
    /// `(t, ε)` draws averaged per step.
    pub batch: usize,
}

impl InversionConfig {
    /// Quantizer spanning `±4·embedding_std` of `model` with `levels` points.
    pub fn for_model(model: &Model, steps: usize, lr: f64, levels: u32, seed: u64) -> Result<Self> {
        let r = QUANTIZER_RANGE_STDS * model.stats.embedding_std;
        Ok(Self {
            steps,
            lr,
            quantize_in_loop: true,
            quantizer: QuantizerSpec::new(-r, r, levels)?,
            seed,
            batch: 1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Parameter("inversion needs at least one step".into()));
        }
        if self.batch == 0 {
            return Err(Error::Parameter("inversion batch must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Parameter(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// One `(t, ε)` draw of an inversion run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InversionRecord {
    pub step: usize,
    pub t: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionLog {
    pub header: Vec<String>,
    pub records: Vec<InversionRecord>,
}

impl InversionLog {
    /// Mean loss of each optimization step.
    pub fn step_losses(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.records {
            if out.len() < r.step {
                out.push((0.0, 0));
            }
            let slot = &mut out[r.step - 1];
            slot.0 += r.loss;
            slot.1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n as f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for h in &self.header {
            s.push_str(&format!("# {h}\n"));
        }
        s.push_str("step,t,loss\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{:.9e}\n", r.step, r.t, r.loss));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inversion {
    /// Starting point of the optimization.
    pub init: EmbeddingMatrix,
    /// Continuous optimizer state after the last step.
    pub embedding: EmbeddingMatrix,
    /// What goes into the bitstream: the quantized embedding when
    /// quantizing in the loop, otherwise the continuous one.
    pub shipped: EmbeddingMatrix,
    pub log: InversionLog,
    /// Loss of `shipped` on one extra `(t, ε)` draw after the last update.
    pub final_loss: f64,
    pub final_t: usize,
    pub final_eps: Tensor,
}

/// Forward value is the quantized grid point.
pub fn straight_through_quantize(e: &EmbeddingMatrix, q: &QuantizerSpec) -> EmbeddingMatrix {
    let values = Tensor::new(e.values().shape(), q.round_trip(e.values().data())).expect("same length");
    EmbeddingMatrix::from_quantized(values).expect("2-D input")
}

/// Quantizes on the tape with an identity Jacobian.
pub fn straight_through_on_tape(tape: &mut Tape, e: Var, q: &QuantizerSpec) -> Result<Var> {
    let v = tape.value(e);
    let snapped = Tensor::new(v.shape(), q.round_trip(v.data()))?;
    tape.straight_through(e, snapped)
}

/// `‖ε − ε_θ(q_sample(z0, t, ε), t, e)‖²` averaged over elements.
pub fn denoising_loss(model: &Model, z0: &Tensor, t: usize, eps: &Tensor, e: &EmbeddingMatrix) -> Result<f64> {
    let z_t = q_sample(model.schedule(), z0, t, eps)?;
    model.net.predict_noise(&z_t, t, Condition::Embedding(e))?.mse(eps)
}

fn check_image(model: &Model, x: &Tensor) -> Result<()> {
    let (h, w) = model.image_size();
    if x.shape() != [3, h, w] {
        return Err(Error::Parameter(format!(
            "image {:?} does not match the model resolution 3×{h}×{w}",
            x.shape()
        )));
    }
    Ok(())
}

fn draw(model: &Model, shape: &[usize], rng: &mut Rng64) -> (usize, Tensor) {
    let t = rng.random_range(1..=model.schedule().steps());
    (t, Tensor::randn(shape, rng))
}

/// Inverts `x` into a conditioning embedding; network weights stay frozen.
pub fn invert_embedding(model: &Model, x: &Tensor, config: &InversionConfig) -> Result<Inversion> {
    config.validate()?;
    check_image(model, x)?;
    let z0 = model.encode_image(x)?;
    let nc = model.net.config();
    let mut rng = seeded_rng(config.seed);
    let init = EmbeddingMatrix::new(
        Tensor::randn(&[nc.tokens, nc.dims], &mut rng).scale(model.stats.embedding_std),
    )?;
    let mut e = init.values().clone();
    let mut opt = Adam::new(config.lr);
    let mut records = Vec::with_capacity(config.steps * config.batch);
    let inv_b = 1.0 / config.batch as f64;
    for step in 1..=config.steps {
        let mut grad = vec![0.0; e.len()];
        for _ in 0..config.batch {
            let (t, eps) = draw(model, z0.shape(), &mut rng);
            let z_t = q_sample(model.schedule(), &z0, t, &eps)?;
            let mut tape = Tape::new();
            let vars = model.net.params().register(&mut tape, false);
            let ev = tape.leaf(e.clone().with_requires_grad(true));
            let cond = if config.quantize_in_loop {
                straight_through_on_tape(&mut tape, ev, &config.quantizer)?
            } else {
                ev
            };
            let z = tape.constant(z_t);
            let out = model.net.forward(&mut tape, &vars, z, t, CondVar::Embedding(cond))?;
            let target = tape.constant(eps);
            let mse = tape.mse(out, target)?;
            records.push(InversionRecord {
                step,
                t,
                loss: tape.value(mse).data()[0],
            });
            let mut grads = tape.backward(mse)?;
            // A severed condition path leaves no gradient at all.
            if let Some(g) = grads.take(ev) {
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b * inv_b;
                }
            }
        }
        e.set_grad(grad)?;
        opt.step(&mut [&mut e])?;
        if !e.is_finite() {
            return Err(Error::Numeric(format!("embedding diverged at step {step}")));
        }
    }
    let embedding = EmbeddingMatrix::new(e)?;
    let shipped = if config.quantize_in_loop {
        straight_through_quantize(&embedding, &config.quantizer)
    } else {
        embedding.clone()
    };
    let (final_t, final_eps) = draw(model, z0.shape(), &mut rng);
    let final_loss = denoising_loss(model, &z0, final_t, &final_eps, &shipped)?;
    let header = vec![
        format!("steps={}", config.steps),
        format!("lr={}", config.lr),
        format!("batch={}", config.batch),
        format!("quantize_in_loop={}", config.quantize_in_loop),
        format!("levels={}", config.quantizer.levels()),
        format!("seed={}", config.seed),
        format!("tokens={}", nc.tokens),
        format!("dims={}", nc.dims),
    ];
    Ok(Inversion {
        init,
        embedding,
        shipped,
        log: InversionLog { header, records },
        final_loss,
        final_t,
        final_eps,
    })
}

/// Paired Monte-Carlo comparison of two embeddings under the denoising loss.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilityReport {
    pub trials: usize,
    pub learned_mean: f64,
    pub random_mean: f64,
    /// `(random − learned)/random`.
    pub relative_gap: f64,
    pub pass: bool,
    /// Fewer than [`UtilityReport::MIN_TRIALS`] draws.
    pub high_variance: bool,
}

impl UtilityReport {
    pub const MIN_TRIALS: usize = 30;
}

/// Evaluates both embeddings on the same `trials` draws of `(t, ε)`.
pub fn embedding_utility_check(
    model: &Model,
    x: &Tensor,
    e_learned: &EmbeddingMatrix,
    e_random: &EmbeddingMatrix,
    trials: usize,
    seed: u64,
) -> Result<UtilityReport> {
    check_image(model, x)?;
    if e_learned.values().shape() != e_random.values().shape() {
        return Err(Error::Dimension(format!(
            "embeddings differ in shape: {:?} vs {:?}",
            e_learned.values().shape(),
            e_random.values().shape()
        )));
    }
    if trials == 0 {
        return Err(Error::Parameter("utility check needs at least one trial".into()));
    }
    let z0 = model.encode_image(x)?;
    let mut rng = seeded_rng(seed);
    let (mut a, mut b) = (0.0, 0.0);
    for _ in 0..trials {
        let (t, eps) = draw(model, z0.shape(), &mut rng);
        a += denoising_loss(model, &z0, t, &eps, e_learned)?;
        b += denoising_loss(model, &z0, t, &eps, e_random)?;
    }
    let (learned_mean, random_mean) = (a / trials as f64, b / trials as f64);
    Ok(UtilityReport {
        trials,
        learned_mean,
        random_mean,
        relative_gap: (random_mean - learned_mean) / random_mean,
        pass: learned_mean < random_mean,
        high_variance: trials < UtilityReport::MIN_TRIALS,
    })
}
