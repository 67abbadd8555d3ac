//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate value produced during a forward pass and
//! hands out [`Var`] handles. Nodes are appended in evaluation order, so the
//! node vector is already a topological order and [`Tape::backward`] is a single
//! reverse sweep. Nodes whose operands do not require gradients are kept for
//! their values but skipped by the sweep.

use super::linalg::{col2im_add, gemm, im2col, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Abs(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
        out_ch: usize,
        cols: Option<Vec<f64>>,
    },
    Silu(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    ChannelBias(Var, Var),
    Film {
        x: Var,
        scale: Var,
        shift: Var,
    },
    Concat(Var, Var),
    Upsample2(Var),
    AvgPool(Var, usize),
    StraightThrough(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`. Leaves that require gradients but were not reached
    /// from the loss report zeros; values that never required gradients
    /// report `None`.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Releases every recorded node.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Records a leaf. Whether it receives a gradient follows
    /// [`Tensor::requires_grad`].
    pub fn leaf(&mut self, mut value: Tensor) -> Var {
        let requires_grad = value.requires_grad();
        value.zero_grad();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite result from {}",
                op_name(&op)
            )));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// `|a|`; the derivative at exactly zero is taken to be zero.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).abs();
        let rg = self.rg(&[a]);
        self.push(out, Op::Abs(a), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).scale(s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v + s);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => {
                return Err(Error::Dimension(format!(
                    "matmul of {sa:?} and {sb:?}"
                )))
            }
        };
        let mut c = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            &mut c,
        );
        let out = Tensor::new(&[m, n], c)?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// Cross-correlation of a `C_in×H×W` input with a `C_out×C_in×k×k` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (c_in, h, w) = self.value(input).chw()?;
        let ks = self.value(kernel).shape().to_vec();
        let (out_ch, k) = match ks[..] {
            [o, c, k1, k2] if c == c_in && k1 == k2 => (o, k1),
            _ => {
                return Err(Error::Dimension(format!(
                    "kernel {ks:?} incompatible with input channels {c_in}"
                )))
            }
        };
        if k % 2 == 0 {
            return Err(Error::Dimension(format!("kernel size {k} must be odd")));
        }
        if stride == 0 {
            return Err(Error::Parameter("stride must be positive".into()));
        }
        let span_h = (h + 2 * padding).checked_sub(k);
        let span_w = (w + 2 * padding).checked_sub(k);
        let (span_h, span_w) = match (span_h, span_w) {
            (Some(a), Some(b)) if a % stride == 0 && b % stride == 0 => (a, b),
            _ => {
                return Err(Error::Dimension(format!(
                    "non-integral conv output for {h}×{w}, k={k}, stride={stride}, padding={padding}"
                )))
            }
        };
        let geom = ConvGeom {
            c_in,
            h,
            w,
            k,
            stride,
            padding,
            h_out: span_h / stride + 1,
            w_out: span_w / stride + 1,
        };
        let cols = im2col(self.value(input).data(), &geom);
        let mut out = vec![0.0; out_ch * geom.cols()];
        gemm(
            out_ch,
            geom.rows(),
            geom.cols(),
            self.value(kernel).data(),
            false,
            &cols,
            false,
            0.0,
            &mut out,
        );
        let out = Tensor::new(&[out_ch, geom.h_out, geom.w_out], out)?;
        let rg = self.rg(&[input, kernel]);
        let keep_cols = self.requires_grad(kernel);
        self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                geom,
                out_ch,
                cols: keep_cols.then_some(cols),
            },
            rg,
        )
    }

    /// `x·sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x * sigmoid(x));
        let rg = self.rg(&[a]);
        self.push(out, Op::Silu(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(&[a]);
        self.push(out, Op::Mean(a), rg)
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().with_requires_grad(false).reshape(shape)?;
        let rg = self.rg(&[a]);
        self.push(out, Op::Reshape(a), rg)
    }

    fn channel_vec(&self, v: Var, c: usize, what: &str) -> Result<()> {
        if self.value(v).len() != c {
            return Err(Error::Dimension(format!(
                "{what} has {} elements, expected {c}",
                self.value(v).len()
            )));
        }
        Ok(())
    }

    /// Adds a per-channel bias to a `C×H×W` tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        self.channel_vec(bias, c, "bias")?;
        let mut out = self.value(x).clone().with_requires_grad(false);
        let b = self.value(bias).data();
        for (ch, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
            plane.iter_mut().for_each(|v| *v += b[ch]);
        }
        let rg = self.rg(&[x, bias]);
        self.push(out, Op::ChannelBias(x, bias), rg)
    }

    /// Feature-wise modulation `x·(1 + scale[c]) + shift[c]` of a `C×H×W` tensor.
    pub fn film(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        self.channel_vec(scale, c, "scale")?;
        self.channel_vec(shift, c, "shift")?;
        let mut out = self.value(x).clone().with_requires_grad(false);
        let (s, b) = (self.value(scale).data(), self.value(shift).data());
        for (ch, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
            let g = 1.0 + s[ch];
            plane.iter_mut().for_each(|v| *v = *v * g + b[ch]);
        }
        let rg = self.rg(&[x, scale, shift]);
        self.push(out, Op::Film { x, scale, shift }, rg)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).chw()?;
        let (cb, hb, wb) = self.value(b).chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::Dimension(format!(
                "concat of {ha}×{wa} and {hb}×{wb} planes"
            )));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let out = Tensor::new(&[ca + cb, ha, wa], data)?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Concat(a, b), rg)
    }

    /// Nearest-neighbour ×2 spatial upsampling.
    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.value(a).chw()?;
        let src = self.value(a).data();
        let mut data = vec![0.0; c * 4 * h * w];
        for ch in 0..c {
            for i in 0..2 * h {
                for j in 0..2 * w {
                    data[(ch * 2 * h + i) * 2 * w + j] = src[(ch * h + i / 2) * w + j / 2];
                }
            }
        }
        let out = Tensor::new(&[c, 2 * h, 2 * w], data)?;
        let rg = self.rg(&[a]);
        self.push(out, Op::Upsample2(a), rg)
    }

    /// Non-overlapping `factor×factor` average pooling.
    pub fn avg_pool(&mut self, a: Var, factor: usize) -> Result<Var> {
        let out = avg_pool(self.value(a), factor)?;
        let rg = self.rg(&[a]);
        self.push(out, Op::AvgPool(a, factor), rg)
    }

    /// Forward value `forward`, backward identity with respect to `a`.
    pub fn straight_through(&mut self, a: Var, forward: Tensor) -> Result<Var> {
        self.value(a).same_shape(&forward)?;
        let rg = self.rg(&[a]);
        self.push(forward.with_requires_grad(false), Op::StraightThrough(a), rg)
    }

    /// Reverse sweep from a one-element `loss`, consuming the tape.
    ///
    /// A loss that does not depend on any gradient-requiring leaf yields
    /// all-zero leaf gradients.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            // Interior gradients are not part of the result.
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[idx].is_none() {
                grads[idx] = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].requires_grad;
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if wants(v) {
                        accumulate(&mut grads[v.0], g.len(), |buf| {
                            buf.iter_mut().zip(g).for_each(|(o, gi)| *o += sign * gi)
                        });
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if wants(v) {
                        accumulate(&mut grads[v.0], g.len(), |buf| {
                            buf.iter_mut().zip(g).for_each(|(o, gi)| *o += sign * gi)
                        });
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for i in 0..g.len() {
                            buf[i] += g[i] * bv[i];
                        }
                    });
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], g.len(), |buf| {
                        for i in 0..g.len() {
                            buf[i] += g[i] * av[i];
                        }
                    });
                }
            }
            Op::Abs(a) => {
                let av = val(*a).data();
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    for i in 0..g.len() {
                        let s = if av[i] > 0.0 {
                            1.0
                        } else if av[i] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        buf[i] += g[i] * s;
                    }
                });
            }
            Op::Scale(a, s) => {
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    buf.iter_mut().zip(g).for_each(|(o, gi)| *o += s * gi)
                });
            }
            Op::AddScalar(a) | Op::Reshape(a) | Op::StraightThrough(a) => {
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    buf.iter_mut().zip(g).for_each(|(o, gi)| *o += gi)
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                if wants(*a) {
                    // dA = G·Bᵀ
                    accumulate(&mut grads[a.0], m * k, |buf| {
                        gemm(m, n, k, g, false, val(*b).data(), true, 1.0, buf)
                    });
                }
                if wants(*b) {
                    // dB = Aᵀ·G
                    accumulate(&mut grads[b.0], k * n, |buf| {
                        gemm(k, m, n, val(*a).data(), true, g, false, 1.0, buf)
                    });
                }
            }
            Op::Conv2d {
                input,
                kernel,
                geom,
                out_ch,
                cols,
            } => {
                if wants(*kernel) {
                    let cols = cols.as_ref().expect("columns kept when kernel needs grad");
                    accumulate(&mut grads[kernel.0], out_ch * geom.rows(), |buf| {
                        gemm(*out_ch, geom.cols(), geom.rows(), g, false, cols, true, 1.0, buf)
                    });
                }
                if wants(*input) {
                    let mut dcols = vec![0.0; geom.rows() * geom.cols()];
                    gemm(
                        geom.rows(),
                        *out_ch,
                        geom.cols(),
                        val(*kernel).data(),
                        true,
                        g,
                        false,
                        0.0,
                        &mut dcols,
                    );
                    let len = val(*input).len();
                    accumulate(&mut grads[input.0], len, |buf| col2im_add(&dcols, geom, buf));
                }
            }
            Op::Silu(a) => {
                let av = val(*a).data();
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    for i in 0..g.len() {
                        let s = sigmoid(av[i]);
                        buf[i] += g[i] * s * (1.0 + av[i] * (1.0 - s));
                    }
                });
            }
            Op::Sum(a) | Op::Mean(a) => {
                let len = val(*a).len();
                let coeff = if matches!(nodes[idx].op, Op::Mean(_)) {
                    g[0] / len as f64
                } else {
                    g[0]
                };
                accumulate(&mut grads[a.0], len, |buf| {
                    buf.iter_mut().for_each(|o| *o += coeff)
                });
            }
            Op::ChannelBias(x, bias) => {
                let (c, h, w) = val(*x).chw().expect("checked in forward");
                if wants(*x) {
                    accumulate(&mut grads[x.0], g.len(), |buf| {
                        buf.iter_mut().zip(g).for_each(|(o, gi)| *o += gi)
                    });
                }
                if wants(*bias) {
                    accumulate(&mut grads[bias.0], c, |buf| {
                        for ch in 0..c {
                            buf[ch] += g[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::Film { x, scale, shift } => {
                let (c, h, w) = val(*x).chw().expect("checked in forward");
                let plane = h * w;
                let xv = val(*x).data();
                let sv = val(*scale).data();
                if wants(*x) {
                    accumulate(&mut grads[x.0], g.len(), |buf| {
                        for ch in 0..c {
                            let f = 1.0 + sv[ch];
                            for i in ch * plane..(ch + 1) * plane {
                                buf[i] += g[i] * f;
                            }
                        }
                    });
                }
                if wants(*scale) {
                    accumulate(&mut grads[scale.0], c, |buf| {
                        for ch in 0..c {
                            let r = ch * plane..(ch + 1) * plane;
                            buf[ch] += g[r.clone()].iter().zip(&xv[r]).map(|(a, b)| a * b).sum::<f64>();
                        }
                    });
                }
                if wants(*shift) {
                    accumulate(&mut grads[shift.0], c, |buf| {
                        for ch in 0..c {
                            buf[ch] += g[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::Concat(a, b) => {
                let la = val(*a).len();
                if wants(*a) {
                    accumulate(&mut grads[a.0], la, |buf| {
                        buf.iter_mut().zip(&g[..la]).for_each(|(o, gi)| *o += gi)
                    });
                }
                if wants(*b) {
                    let lb = val(*b).len();
                    accumulate(&mut grads[b.0], lb, |buf| {
                        buf.iter_mut().zip(&g[la..]).for_each(|(o, gi)| *o += gi)
                    });
                }
            }
            Op::Upsample2(a) => {
                let (c, h, w) = val(*a).chw().expect("checked in forward");
                accumulate(&mut grads[a.0], c * h * w, |buf| {
                    for ch in 0..c {
                        for i in 0..2 * h {
                            for j in 0..2 * w {
                                buf[(ch * h + i / 2) * w + j / 2] += g[(ch * 2 * h + i) * 2 * w + j];
                            }
                        }
                    }
                });
            }
            Op::AvgPool(a, f) => {
                let (c, h, w) = val(*a).chw().expect("checked in forward");
                let (ho, wo) = (h / f, w / f);
                let inv = 1.0 / (f * f) as f64;
                accumulate(&mut grads[a.0], c * h * w, |buf| {
                    for ch in 0..c {
                        for i in 0..h {
                            for j in 0..w {
                                buf[(ch * h + i) * w + j] += g[(ch * ho + i / f) * wo + j / f] * inv;
                            }
                        }
                    }
                });
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Abs(..) => "abs",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::MatMul(..) => "matmul",
        Op::Conv2d { .. } => "conv2d",
        Op::Silu(..) => "silu",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::Reshape(..) => "reshape",
        Op::ChannelBias(..) => "add_channel_bias",
        Op::Film { .. } => "film",
        Op::Concat(..) => "concat_channels",
        Op::Upsample2(..) => "upsample2",
        Op::AvgPool(..) => "avg_pool",
        Op::StraightThrough(..) => "straight_through",
    }
}

/// Non-overlapping average pooling of a `C×H×W` tensor.
pub fn avg_pool(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Dimension(format!(
            "{h}×{w} is not divisible by pooling factor {factor}"
        )));
    }
    let (ho, wo) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let src = x.data();
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let mut s = 0.0;
                for di in 0..factor {
                    let row = (ch * h + i * factor + di) * w + j * factor;
                    s += src[row..row + factor].iter().sum::<f64>();
                }
                out[(ch * ho + i) * wo + j] = s * inv;
            }
        }
    }
    Tensor::new(&[c, ho, wo], out)
}
