use super::params::{Conv, Linear, ParamSet};
use crate::bytes::{Reader, Writer};
use crate::diffusion::NoiseSchedule;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Tape, Tensor, Var};

/// What the last convolution predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputHead {
    /// The noise `ε` directly.
    Noise = 0,
    /// `F` with `ε = √(1−ᾱ_t)·z_t + √ᾱ_t·F`, i.e. velocity prediction
    /// expressed as a noise estimate. Keeps `x̂₀` errors bounded at large `t`.
    Velocity = 1,
}

/// Architecture of a [`DenoiserNet`]. Everything needed to rebuild the
/// parameter layout from a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub latent_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Channel widths of the three resolution levels.
    pub widths: [usize; 3],
    pub time_dim: usize,
    pub cond_hidden: usize,
    pub tokens: usize,
    pub dims: usize,
    pub schedule: NoiseSchedule,
    pub head: OutputHead,
    /// Cleared for nets trained with 100% condition dropout; the embedding
    /// input is then ignored entirely.
    pub condition_enabled: bool,
}

impl NetConfig {
    pub fn toy(latent_channels: usize, height: usize, width: usize) -> Self {
        Self {
            latent_channels,
            height,
            width,
            widths: [16, 32, 64],
            time_dim: 32,
            cond_hidden: 64,
            tokens: 8,
            dims: 32,
            schedule: NoiseSchedule::linear(1000, 1e-4, 0.02).expect("valid default schedule"),
            head: OutputHead::Velocity,
            condition_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.widths.contains(&0) {
            return Err(Error::Parameter("channel counts must be positive".into()));
        }
        if self.height == 0 || self.width == 0 || self.height % 4 != 0 || self.width % 4 != 0 {
            return Err(Error::Parameter(format!(
                "latent size {}×{} must be a positive multiple of 4",
                self.height, self.width
            )));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::Parameter(format!("time_dim {} must be even", self.time_dim)));
        }
        if self.cond_hidden == 0 || self.tokens == 0 || self.dims == 0 {
            return Err(Error::Parameter("conditioning sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        [self.latent_channels, self.height, self.width]
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        for v in [self.latent_channels, self.height, self.width] {
            w.u32(v as u32);
        }
        for v in self.widths {
            w.u32(v as u32);
        }
        for v in [self.time_dim, self.cond_hidden, self.tokens, self.dims] {
            w.u32(v as u32);
        }
        self.schedule.write(w);
        w.u8(self.head as u8);
        w.u8(self.condition_enabled as u8);
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let mut v = [0usize; 10];
        let names = [
            "latent channels",
            "latent height",
            "latent width",
            "width 0",
            "width 1",
            "width 2",
            "time dim",
            "cond hidden",
            "tokens",
            "dims",
        ];
        for (slot, name) in v.iter_mut().zip(names) {
            *slot = r.u32(name)? as usize;
        }
        let schedule = NoiseSchedule::read(r)?;
        let head = match r.u8("output head")? {
            0 => OutputHead::Noise,
            1 => OutputHead::Velocity,
            b => return Err(Error::format("output head", format!("invalid value {b}"))),
        };
        let condition_enabled = match r.u8("condition flag")? {
            0 => false,
            1 => true,
            b => return Err(Error::format("condition flag", format!("invalid value {b}"))),
        };
        let cfg = Self {
            latent_channels: v[0],
            height: v[1],
            width: v[2],
            widths: [v[3], v[4], v[5]],
            time_dim: v[6],
            cond_hidden: v[7],
            tokens: v[8],
            dims: v[9],
            schedule,
            head,
            condition_enabled,
        };
        cfg.validate().map_err(|e| Error::format("net config", e.to_string()))?;
        Ok(cfg)
    }
}

/// Conditioning passed to [`DenoiserNet::predict_noise`].
#[derive(Clone, Copy, Debug)]
pub enum Condition<'a> {
    Embedding(&'a EmbeddingMatrix),
    Null,
}

/// Conditioning already recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub enum CondVar {
    Embedding(Var),
    Null,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    pool: usize,
    embed: usize,
    time: usize,
    null: usize,
    mlp: Linear,
    film: [(Linear, Linear); 5],
    c_in: Conv,
    c0: Conv,
    d1: Conv,
    c1: Conv,
    d2: Conv,
    c2: Conv,
    u1: Conv,
    u0: Conv,
    out: Conv,
}

/// Three-level convolutional encoder–decoder predicting the noise in `z_t`.
///
/// The timestep and the pooled embedding projection drive a small MLP whose
/// output sets a per-channel scale and shift at every level.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserNet {
    config: NetConfig,
    params: ParamSet,
    layout: Layout,
    time_table: Vec<f64>,
}

fn sinusoid_table(steps: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut table = vec![0.0; steps * dim];
    for t in 1..=steps {
        let row = &mut table[(t - 1) * dim..t * dim];
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            row[i] = (t as f64 * freq).sin();
            row[half + i] = (t as f64 * freq).cos();
        }
    }
    table
}

impl DenoiserNet {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut p = ParamSet::new();
        let [w0, w1, w2] = config.widths;
        let (k, n, hd, td) = (config.tokens, config.dims, config.cond_hidden, config.time_dim);
        let pool = p.push("cond.pool", Tensor::full(&[1, k], 1.0 / k as f64));
        let embed = p.normal("cond.embed", &[n, hd], 1.0 / (n as f64).sqrt(), &mut rng);
        let time = p.normal("cond.time", &[td, hd], 1.0 / (td as f64).sqrt(), &mut rng);
        let null = p.normal("cond.null", &[k, n], 1.0, &mut rng);
        let mlp = Linear::new(&mut p, "cond.mlp", hd, hd, 1.0 / (hd as f64).sqrt(), &mut rng);
        let film_std = 0.1 / (hd as f64).sqrt();
        let mut films = Vec::with_capacity(5);
        for (i, w) in [w0, w1, w2, w1, w0].into_iter().enumerate() {
            let s = Linear::new(&mut p, &format!("film{i}.scale"), hd, w, film_std, &mut rng);
            let b = Linear::new(&mut p, &format!("film{i}.shift"), hd, w, film_std, &mut rng);
            films.push((s, b));
        }
        let c = config.latent_channels;
        let c_in = Conv::new(&mut p, "enc.in", c, w0, 3, true, &mut rng);
        let c0 = Conv::new(&mut p, "enc.c0", w0, w0, 3, true, &mut rng);
        let d1 = Conv::new(&mut p, "enc.d1", w0, w1, 3, true, &mut rng);
        let c1 = Conv::new(&mut p, "enc.c1", w1, w1, 3, true, &mut rng);
        let d2 = Conv::new(&mut p, "enc.d2", w1, w2, 3, true, &mut rng);
        let c2 = Conv::new(&mut p, "enc.c2", w2, w2, 3, true, &mut rng);
        let u1 = Conv::new(&mut p, "dec.u1", w2 + w1, w1, 3, true, &mut rng);
        let u0 = Conv::new(&mut p, "dec.u0", w1 + w0, w0, 3, true, &mut rng);
        let out = Conv::new(&mut p, "dec.out", w0, c, 3, true, &mut rng);
        // Small output init keeps the first predictions near zero.
        let shrunk = p.get(out.weight).scale(0.1);
        p.replace(out.weight, shrunk);
        let layout = Layout {
            pool,
            embed,
            time,
            null,
            mlp,
            film: films.try_into().expect("five levels"),
            c_in,
            c0,
            d1,
            c1,
            d2,
            c2,
            u1,
            u0,
            out,
        };
        let time_table = sinusoid_table(config.schedule.steps(), td);
        Ok(Self {
            config,
            params: p,
            layout,
            time_table,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// The reserved embedding the net sees in place of a real condition.
    pub fn null_embedding(&self) -> &Tensor {
        self.params.get(self.layout.null)
    }

    pub fn check_input(&self, z_t: &[usize], t: usize) -> Result<()> {
        if z_t != self.config.latent_shape() {
            return Err(Error::Dimension(format!(
                "latent shape {:?}, net expects {:?}",
                z_t,
                self.config.latent_shape()
            )));
        }
        self.config.schedule.check_t(t)
    }

    fn check_embedding(&self, shape: &[usize]) -> Result<()> {
        if shape != [self.config.tokens, self.config.dims] {
            return Err(Error::Dimension(format!(
                "embedding shape {:?}, net expects [{}, {}]",
                shape, self.config.tokens, self.config.dims
            )));
        }
        Ok(())
    }

    /// Noise estimate `ε_θ(z_t, t, e)`.
    pub fn predict_noise(&self, z_t: &Tensor, t: usize, cond: Condition<'_>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false);
        let z = tape.constant(z_t.clone());
        let c = match cond {
            Condition::Embedding(e) => CondVar::Embedding(tape.constant(e.values().clone())),
            Condition::Null => CondVar::Null,
        };
        let out = self.forward(&mut tape, &vars, z, t, c)?;
        Ok(tape.value(out).clone())
    }

    /// Records the forward pass on `tape`. `vars` are this net's parameters
    /// as returned by [`ParamSet::register`].
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], z: Var, t: usize, cond: CondVar) -> Result<Var> {
        self.check_input(tape.value(z).shape(), t)?;
        let l = &self.layout;
        let td = self.config.time_dim;
        let temb = Tensor::from_slice(&[1, td], &self.time_table[(t - 1) * td..t * td])?;
        let temb = tape.constant(temb);
        let mut pre = tape.matmul(temb, vars[l.time])?;
        if self.config.condition_enabled {
            let e = match cond {
                CondVar::Embedding(e) => e,
                CondVar::Null => vars[l.null],
            };
            self.check_embedding(tape.value(e).shape())?;
            let pooled = tape.matmul(vars[l.pool], e)?;
            let proj = tape.matmul(pooled, vars[l.embed])?;
            pre = tape.add(pre, proj)?;
        }
        let h1 = tape.silu(pre)?;
        let h = l.mlp.forward(tape, vars, h1)?;
        let h = tape.silu(h)?;

        let film = |tape: &mut Tape, x: Var, i: usize| -> Result<Var> {
            let (s, b) = &l.film[i];
            let scale = s.forward(tape, vars, h)?;
            let shift = b.forward(tape, vars, h)?;
            let y = tape.film(x, scale, shift)?;
            tape.silu(y)
        };

        let x = l.c_in.forward(tape, vars, z)?;
        let x = film(tape, x, 0)?;
        let x = l.c0.forward(tape, vars, x)?;
        let skip0 = tape.silu(x)?;

        let x = tape.avg_pool(skip0, 2)?;
        let x = l.d1.forward(tape, vars, x)?;
        let x = film(tape, x, 1)?;
        let x = l.c1.forward(tape, vars, x)?;
        let skip1 = tape.silu(x)?;

        let x = tape.avg_pool(skip1, 2)?;
        let x = l.d2.forward(tape, vars, x)?;
        let x = film(tape, x, 2)?;
        let x = l.c2.forward(tape, vars, x)?;
        let x = tape.silu(x)?;

        let x = tape.upsample2(x)?;
        let x = tape.concat_channels(x, skip1)?;
        let x = l.u1.forward(tape, vars, x)?;
        let x = film(tape, x, 3)?;

        let x = tape.upsample2(x)?;
        let x = tape.concat_channels(x, skip0)?;
        let x = l.u0.forward(tape, vars, x)?;
        let x = film(tape, x, 4)?;
        let out = l.out.forward(tape, vars, x)?;
        match self.config.head {
            OutputHead::Noise => Ok(out),
            OutputHead::Velocity => {
                let ab = self.config.schedule.alpha_bar(t);
                let direct = tape.scale(z, (1.0 - ab).sqrt())?;
                let learned = tape.scale(out, ab.sqrt())?;
                tape.add(direct, learned)
            }
        }
    }

    pub(crate) fn load_params(&mut self, names: &[String], tensors: Vec<Tensor>) -> Result<()> {
        self.params.load_from(names, tensors)
    }
}
