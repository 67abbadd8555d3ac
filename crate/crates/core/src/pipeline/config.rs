use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::backbone::OutputHead;
use crate::error::{Error, Result};
use crate::guidance::{GradientMode, Reduction};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 32×32 corpus, 20 deterministic DDIM steps.
    Toy,
    /// 64 × 768 embedding, 100 DDIM steps at eta 1, 4000 inversion steps.
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Preset::Toy),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::Config(format!("unknown preset {s:?} (expected toy or paper)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodecChoice {
    Identity,
    Autoencoder,
}

/// Every knob of a run, serializable as flat `key = value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub checkpoint: PathBuf,
    pub seed: u64,

    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub codec: CodecChoice,
    pub ae_channels: usize,
    pub ae_hidden: usize,
    pub ae_steps: usize,
    pub widths: [usize; 3],
    pub time_dim: usize,
    pub cond_hidden: usize,
    pub tokens: usize,
    pub dims: usize,
    pub head: OutputHead,
    pub train_steps: usize,
    pub train_batch: usize,
    pub train_lr: f64,
    pub p_uncond: f64,

    pub steps: usize,
    pub eta: f64,
    pub samples: usize,

    pub sc: f64,
    pub sf: f64,
    pub reduction: Reduction,
    pub gradient: GradientMode,

    pub inv_steps: usize,
    pub inv_lr: f64,
    pub inv_batch: usize,
    pub quantize_in_loop: bool,
    pub embedding_levels: u32,
    pub guidance_levels: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Toy)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let toy = Self {
            checkpoint: PathBuf::from("model.gckp"),
            seed: 0,
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            codec: CodecChoice::Identity,
            ae_channels: 4,
            ae_hidden: 16,
            ae_steps: 1500,
            widths: [16, 32, 64],
            time_dim: 32,
            cond_hidden: 64,
            tokens: 8,
            dims: 32,
            head: OutputHead::Velocity,
            train_steps: 2000,
            train_batch: 4,
            train_lr: 5e-4,
            p_uncond: 0.1,
            steps: 20,
            eta: 0.0,
            samples: 1,
            sc: 215.0,
            sf: 0.95,
            reduction: Reduction::Mean,
            gradient: GradientMode::FullBackprop,
            inv_steps: 500,
            inv_lr: 0.05,
            inv_batch: 1,
            quantize_in_loop: true,
            embedding_levels: 256,
            guidance_levels: 32,
        };
        match preset {
            Preset::Toy => toy,
            Preset::Paper => Self {
                codec: CodecChoice::Autoencoder,
                widths: [32, 64, 128],
                tokens: 64,
                dims: 768,
                steps: 100,
                eta: 1.0,
                inv_steps: 4000,
                ..toy
            },
        }
    }

    /// Ordered `(key, value)` pairs; [`RunConfig::set`] accepts every key.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let w = self.widths;
        vec![
            ("checkpoint", self.checkpoint.display().to_string()),
            ("seed", self.seed.to_string()),
            ("timesteps", self.timesteps.to_string()),
            ("beta_start", self.beta_start.to_string()),
            ("beta_end", self.beta_end.to_string()),
            (
                "codec",
                match self.codec {
                    CodecChoice::Identity => "identity",
                    CodecChoice::Autoencoder => "autoencoder",
                }
                .into(),
            ),
            ("ae_channels", self.ae_channels.to_string()),
            ("ae_hidden", self.ae_hidden.to_string()),
            ("ae_steps", self.ae_steps.to_string()),
            ("widths", format!("{},{},{}", w[0], w[1], w[2])),
            ("time_dim", self.time_dim.to_string()),
            ("cond_hidden", self.cond_hidden.to_string()),
            ("tokens", self.tokens.to_string()),
            ("dims", self.dims.to_string()),
            (
                "head",
                match self.head {
                    OutputHead::Noise => "noise",
                    OutputHead::Velocity => "velocity",
                }
                .into(),
            ),
            ("train_steps", self.train_steps.to_string()),
            ("train_batch", self.train_batch.to_string()),
            ("train_lr", self.train_lr.to_string()),
            ("p_uncond", self.p_uncond.to_string()),
            ("steps", self.steps.to_string()),
            ("eta", self.eta.to_string()),
            ("samples", self.samples.to_string()),
            ("sc", self.sc.to_string()),
            ("sf", self.sf.to_string()),
            (
                "reduction",
                match self.reduction {
                    Reduction::Sum => "sum",
                    Reduction::Mean => "mean",
                }
                .into(),
            ),
            (
                "gradient",
                match self.gradient {
                    GradientMode::EpsConstant => "eps",
                    GradientMode::FullBackprop => "full",
                }
                .into(),
            ),
            ("inv_steps", self.inv_steps.to_string()),
            ("inv_lr", self.inv_lr.to_string()),
            ("inv_batch", self.inv_batch.to_string()),
            ("quantize_in_loop", self.quantize_in_loop.to_string()),
            ("embedding_levels", self.embedding_levels.to_string()),
            ("guidance_levels", self.guidance_levels.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "checkpoint" => self.checkpoint = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "timesteps" => self.timesteps = parse(key, v)?,
            "beta_start" => self.beta_start = parse(key, v)?,
            "beta_end" => self.beta_end = parse(key, v)?,
            "codec" => {
                self.codec = match v {
                    "identity" => CodecChoice::Identity,
                    "autoencoder" => CodecChoice::Autoencoder,
                    _ => return Err(Error::Config(format!("codec: unknown value {v:?}"))),
                }
            }
            "ae_channels" => self.ae_channels = parse(key, v)?,
            "ae_hidden" => self.ae_hidden = parse(key, v)?,
            "ae_steps" => self.ae_steps = parse(key, v)?,
            "widths" => {
                let parts: Vec<usize> = v.split(',').map(|p| parse(key, p.trim())).collect::<Result<_>>()?;
                self.widths = parts
                    .try_into()
                    .map_err(|_| Error::Config(format!("widths: expected three values, got {v:?}")))?;
            }
            "time_dim" => self.time_dim = parse(key, v)?,
            "cond_hidden" => self.cond_hidden = parse(key, v)?,
            "tokens" => self.tokens = parse(key, v)?,
            "dims" => self.dims = parse(key, v)?,
            "head" => {
                self.head = match v {
                    "noise" => OutputHead::Noise,
                    "velocity" => OutputHead::Velocity,
                    _ => return Err(Error::Config(format!("head: unknown value {v:?}"))),
                }
            }
            "train_steps" => self.train_steps = parse(key, v)?,
            "train_batch" => self.train_batch = parse(key, v)?,
            "train_lr" => self.train_lr = parse(key, v)?,
            "p_uncond" => self.p_uncond = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "eta" => self.eta = parse(key, v)?,
            "samples" => self.samples = parse(key, v)?,
            "sc" => self.sc = parse(key, v)?,
            "sf" => self.sf = parse(key, v)?,
            "reduction" => {
                self.reduction = match v {
                    "sum" => Reduction::Sum,
                    "mean" => Reduction::Mean,
                    _ => return Err(Error::Config(format!("reduction: unknown value {v:?}"))),
                }
            }
            "gradient" => {
                self.gradient = match v {
                    "eps" => GradientMode::EpsConstant,
                    "full" => GradientMode::FullBackprop,
                    _ => return Err(Error::Config(format!("gradient: unknown value {v:?}"))),
                }
            }
            "inv_steps" => self.inv_steps = parse(key, v)?,
            "inv_lr" => self.inv_lr = parse(key, v)?,
            "inv_batch" => self.inv_batch = parse(key, v)?,
            "quantize_in_loop" => self.quantize_in_loop = parse_bool(key, v)?,
            "embedding_levels" => self.embedding_levels = parse(key, v)?,
            "guidance_levels" => self.guidance_levels = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(preset: Preset, text: &str) -> Result<Self> {
        let mut cfg = Self::preset(preset);
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.steps == 0 || self.steps > self.timesteps {
            return bad(format!("steps {} outside [1, {}]", self.steps, self.timesteps));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta {} outside [0, 1]", self.eta));
        }
        if self.samples == 0 {
            return bad("samples must be ≥ 1".into());
        }
        for (k, v) in [("sc", self.sc), ("sf", self.sf)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{k} = {v} must be finite and ≥ 0"));
            }
        }
        if self.inv_steps == 0 || self.inv_batch == 0 {
            return bad("inversion steps and batch must be ≥ 1".into());
        }
        if self.embedding_levels < 2 || self.guidance_levels < 2 {
            return bad("quantizers need ≥ 2 levels".into());
        }
        if self.tokens > u16::MAX as usize || self.dims > u16::MAX as usize {
            return bad("tokens and dims must fit in 16 bits".into());
        }
        Ok(())
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
