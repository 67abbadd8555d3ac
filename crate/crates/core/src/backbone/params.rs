use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Adam, Gradients, Rng64, Tape, Tensor, Var};

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn push(&mut self, name: &str, t: Tensor) -> usize {
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    /// Gaussian-initialized parameter with the given std.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut Rng64) -> usize {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.push(name, Tensor::new(shape, data).expect("shape matches"))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> usize {
        self.push(name, Tensor::zeros(shape))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub(crate) fn replace(&mut self, i: usize, t: Tensor) {
        self.tensors[i] = t;
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Records every parameter as a tape leaf.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| tape.leaf(t.clone().with_requires_grad(trainable)))
            .collect()
    }

    /// Accumulates tape gradients into each parameter's `grad` buffer.
    pub fn collect_grads(&mut self, grads: &mut Gradients, vars: &[Var]) -> Result<()> {
        for (t, &v) in self.tensors.iter_mut().zip(vars) {
            let g = grads
                .take(v)
                .ok_or_else(|| Error::Contract("parameter leaf lost its gradient".into()))?;
            match t.grad() {
                Some(prev) => {
                    let sum = prev.iter().zip(&g).map(|(a, b)| a + b).collect();
                    t.set_grad(sum)?;
                }
                None => t.set_grad(g)?,
            }
        }
        Ok(())
    }

    pub fn step(&mut self, opt: &mut Adam) -> Result<()> {
        let mut refs: Vec<&mut Tensor> = self.tensors.iter_mut().collect();
        opt.step(&mut refs)
    }

    /// Replaces every tensor by the entry with the same name.
    pub(crate) fn load_from(&mut self, names: &[String], tensors: Vec<Tensor>) -> Result<()> {
        if names.len() != self.names.len() {
            return Err(Error::format(
                "tensor table",
                format!("expected {} tensors, found {}", self.names.len(), names.len()),
            ));
        }
        for (name, t) in names.iter().zip(tensors) {
            let i = self
                .index_of(name)
                .ok_or_else(|| Error::format("tensor table", format!("unexpected tensor {name}")))?;
            if self.tensors[i].shape() != t.shape() {
                return Err(Error::format(
                    "tensor table",
                    format!(
                        "{name} has shape {:?}, architecture expects {:?}",
                        t.shape(),
                        self.tensors[i].shape()
                    ),
                ));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and raw scalar bits.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            h.update(n.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn count_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Conv weight + optional bias, indices into a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv {
    pub weight: usize,
    pub bias: Option<usize>,
    pub padding: usize,
}

impl Conv {
    pub fn new(p: &mut ParamSet, name: &str, c_in: usize, c_out: usize, k: usize, bias: bool, rng: &mut Rng64) -> Self {
        let std = (2.0 / (c_in * k * k) as f64).sqrt();
        let weight = p.normal(&format!("{name}.weight"), &[c_out, c_in, k, k], std, rng);
        let bias = bias.then(|| p.zeros(&format!("{name}.bias"), &[c_out]));
        Self {
            weight,
            bias,
            padding: k / 2,
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let y = tape.conv2d(x, vars[self.weight], 1, self.padding)?;
        match self.bias {
            Some(b) => tape.add_channel_bias(y, vars[b]),
            None => Ok(y),
        }
    }
}

/// Row-vector affine map `x·W + b` for `1×in` inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Linear {
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn new(p: &mut ParamSet, name: &str, d_in: usize, d_out: usize, std: f64, rng: &mut Rng64) -> Self {
        let weight = p.normal(&format!("{name}.weight"), &[d_in, d_out], std, rng);
        let bias = p.zeros(&format!("{name}.bias"), &[1, d_out]);
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let y = tape.matmul(x, vars[self.weight])?;
        tape.add(y, vars[self.bias])
    }
}
