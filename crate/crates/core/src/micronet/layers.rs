//! Layers with explicit forward and backward passes.
//!
//! Every `forward` returns its output together with whatever the matching
//! `backward` needs. `backward` accumulates parameter gradients into the
//! layer's [`Param`]s and returns the gradient with respect to the input.

use rand::Rng;

use super::param::{Module, Param};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Non-trainable state saved alongside parameters (batch-norm statistics).
#[derive(Debug, Clone)]
pub struct Buffer {
    pub name: String,
    pub value: Tensor,
}

// ---------------------------------------------------------------------------
// conv2d

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub pad: (usize, usize),
}

pub struct ConvCache {
    input: Tensor,
}

impl Conv2d {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: (usize, usize), rng: &mut impl Rng) -> Self {
        let fan_in = in_ch * k * k;
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[out_ch, in_ch, k, k], fan_in, rng),
            bias: Param::uniform(format!("{name}.bias"), &[out_ch], fan_in, rng),
            stride,
            pad,
        }
    }

    pub fn from_params(weight: Param, bias: Param, stride: usize, pad: (usize, usize)) -> Result<Self> {
        weight.value.expect_rank("conv weight", 4)?;
        bias.value.expect_shape("conv bias", &[weight.value.dim(0)])?;
        Ok(Self { weight, bias, stride, pad })
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.weight.value.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (_, _, kh, kw) = self.dims();
        let (ph, pw) = self.pad;
        if h + 2 * ph < kh || w + 2 * pw < kw || self.stride == 0 {
            return Err(Error::ShapeMismatch(format!("conv kernel {kh}x{kw} larger than padded input {h}x{w}")));
        }
        Ok(((h + 2 * ph - kh) / self.stride + 1, (w + 2 * pw - kw) / self.stride + 1))
    }

    fn im2col(&self, x: &[f64], c: usize, h: usize, w: usize, ho: usize, wo: usize, cols: &mut [f64]) {
        let (_, _, kh, kw) = self.dims();
        let (ph, pw) = self.pad;
        let s = self.stride;
        let plane = ho * wo;
        for ci in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oh in 0..ho {
                        let ih = (oh * s + ki) as isize - ph as isize;
                        for ow in 0..wo {
                            let iw = (ow * s + kj) as isize - pw as isize;
                            dst[oh * wo + ow] = if ih >= 0 && (ih as usize) < h && iw >= 0 && (iw as usize) < w {
                                x[(ci * h + ih as usize) * w + iw as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], c: usize, h: usize, w: usize, ho: usize, wo: usize, dx: &mut [f64]) {
        let (_, _, kh, kw) = self.dims();
        let (ph, pw) = self.pad;
        let s = self.stride;
        let plane = ho * wo;
        for ci in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oh in 0..ho {
                        let ih = (oh * s + ki) as isize - ph as isize;
                        if ih < 0 || ih as usize >= h {
                            continue;
                        }
                        for ow in 0..wo {
                            let iw = (ow * s + kj) as isize - pw as isize;
                            if iw >= 0 && (iw as usize) < w {
                                dx[(ci * h + ih as usize) * w + iw as usize] += src[oh * wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        x.expect_rank("conv input", 4)?;
        let (o, c, kh, kw) = self.dims();
        let (n, xc, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        if xc != c {
            return Err(Error::ShapeMismatch(format!("conv expects {c} input channels, got {xc}")));
        }
        let (ho, wo) = self.output_hw(h, w)?;
        let ck = c * kh * kw;
        let plane = ho * wo;
        let mut out = Tensor::zeros(&[n, o, ho, wo]);
        let mut cols = vec![0.0; ck * plane];
        let bias = self.bias.value.data();
        for b in 0..n {
            self.im2col(&x.data()[b * c * h * w..(b + 1) * c * h * w], c, h, w, ho, wo, &mut cols);
            let dst = &mut out.data_mut()[b * o * plane..(b + 1) * o * plane];
            for (oc, row) in dst.chunks_exact_mut(plane).enumerate() {
                row.fill(bias[oc]);
            }
            gemm(o, ck, plane, 1.0, self.weight.value.data(), false, &cols, false, 1.0, dst);
        }
        Ok((out, ConvCache { input: x.clone() }))
    }

    pub fn backward(&mut self, cache: &ConvCache, dy: &Tensor) -> Result<Tensor> {
        let x = &cache.input;
        let (o, c, kh, kw) = self.dims();
        let (n, h, w) = (x.dim(0), x.dim(2), x.dim(3));
        let (ho, wo) = self.output_hw(h, w)?;
        dy.expect_shape("conv grad", &[n, o, ho, wo])?;
        let ck = c * kh * kw;
        let plane = ho * wo;
        let mut dx = Tensor::zeros(x.shape());
        let mut cols = vec![0.0; ck * plane];
        let mut dcols = vec![0.0; ck * plane];
        let mut dw = vec![0.0; o * ck];
        let mut db = vec![0.0; o];
        for b in 0..n {
            self.im2col(&x.data()[b * c * h * w..(b + 1) * c * h * w], c, h, w, ho, wo, &mut cols);
            let g = &dy.data()[b * o * plane..(b + 1) * o * plane];
            gemm(o, plane, ck, 1.0, g, false, &cols, true, 1.0, &mut dw);
            for (oc, row) in g.chunks_exact(plane).enumerate() {
                db[oc] += row.iter().sum::<f64>();
            }
            gemm(ck, o, plane, 1.0, self.weight.value.data(), true, g, false, 0.0, &mut dcols);
            self.col2im(&dcols, c, h, w, ho, wo, &mut dx.data_mut()[b * c * h * w..(b + 1) * c * h * w]);
        }
        add_into(self.weight.grad_mut(), &dw);
        add_into(self.bias.grad_mut(), &db);
        Ok(dx)
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

fn add_into(t: &mut Tensor, v: &[f64]) {
    for (a, b) in t.data_mut().iter_mut().zip(v) {
        *a += b;
    }
}

// ---------------------------------------------------------------------------
// max pooling

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub k: usize,
    pub stride: usize,
    pub pad: (usize, usize),
}

pub struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl MaxPool2d {
    pub fn new(k: usize, stride: usize, pad: (usize, usize)) -> Self {
        Self { k, stride, pad }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = self.pad;
        if h + 2 * ph < self.k || w + 2 * pw < self.k || self.stride == 0 || ph >= self.k || pw >= self.k {
            return Err(Error::ShapeMismatch(format!(
                "pool k={} pad={:?} does not fit input {h}x{w}",
                self.k, self.pad
            )));
        }
        Ok(((h + 2 * ph - self.k) / self.stride + 1, (w + 2 * pw - self.k) / self.stride + 1))
    }

    /// Padding cells act as negative infinity; ties go to the first maximum
    /// in row-major window order.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, PoolCache)> {
        x.expect_rank("pool input", 4)?;
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (ho, wo) = self.output_hw(h, w)?;
        let (ph, pw) = (self.pad.0 as isize, self.pad.1 as isize);
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        let mut argmax = vec![0usize; n * c * ho * wo];
        let xd = x.data();
        let od = out.data_mut();
        for nc in 0..n * c {
            let base = nc * h * w;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for ki in 0..self.k {
                        let ih = (oh * self.stride + ki) as isize - ph;
                        if ih < 0 || ih as usize >= h {
                            continue;
                        }
                        for kj in 0..self.k {
                            let iw = (ow * self.stride + kj) as isize - pw;
                            if iw < 0 || iw as usize >= w {
                                continue;
                            }
                            let idx = base + ih as usize * w + iw as usize;
                            if xd[idx] > best || best_idx == usize::MAX {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (nc * ho + oh) * wo + ow;
                    od[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        Ok((
            out,
            PoolCache {
                input_shape: x.shape().to_vec(),
                argmax,
            },
        ))
    }

    pub fn backward(&self, cache: &PoolCache, dy: &Tensor) -> Result<Tensor> {
        if dy.len() != cache.argmax.len() {
            return Err(Error::ShapeMismatch("pool grad size".into()));
        }
        let mut dx = Tensor::zeros(&cache.input_shape);
        let d = dx.data_mut();
        for (g, &idx) in dy.data().iter().zip(&cache.argmax) {
            d[idx] += g;
        }
        Ok(dx)
    }
}

// ---------------------------------------------------------------------------
// batch norm

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Buffer,
    pub running_var: Buffer,
}

pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Tensor::filled(&[channels], 1.0)),
            beta: Param::zeros(format!("{name}.beta"), &[channels]),
            running_mean: Buffer {
                name: format!("{name}.running_mean"),
                value: Tensor::zeros(&[channels]),
            },
            running_var: Buffer {
                name: format!("{name}.running_var"),
                value: Tensor::filled(&[channels], 1.0),
            },
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    /// Normalizes per channel. Train mode uses batch statistics and updates
    /// the running estimates (unbiased variance); eval mode uses the running
    /// estimates.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, BnCache)> {
        x.expect_rank("batchnorm input", 4)?;
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        if c != self.channels() {
            return Err(Error::ShapeMismatch(format!("batchnorm has {} channels, input {c}", self.channels())));
        }
        let m = n * h * w;
        let plane = h * w;
        let (mean, var) = match mode {
            Mode::Train => {
                if m < 2 {
                    return Err(Error::InsufficientStatistics(format!("{m} value(s) per channel")));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter().sum::<f64>();
                    }
                    let mu = s / m as f64;
                    let mut v = 0.0;
                    for b in 0..n {
                        v += x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane]
                            .iter()
                            .map(|x| (x - mu) * (x - mu))
                            .sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = v / m as f64;
                }
                let unbias = m as f64 / (m - 1) as f64;
                for ch in 0..c {
                    let rm = &mut self.running_mean.value.data_mut()[ch];
                    *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[ch];
                    let rv = &mut self.running_var.value.data_mut()[ch];
                    *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var[ch] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.value.data().to_vec(),
                self.running_var.value.data().to_vec(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let (g, bt) = (self.gamma.value.data(), self.beta.value.data());
        for b in 0..n {
            for ch in 0..c {
                let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                for i in r {
                    let xh = (x.data()[i] - mean[ch]) * inv_std[ch];
                    xhat.data_mut()[i] = xh;
                    y.data_mut()[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        Ok((y, BnCache { xhat, inv_std, mode }))
    }

    pub fn backward(&mut self, cache: &BnCache, dy: &Tensor) -> Result<Tensor> {
        dy.expect_shape("batchnorm grad", cache.xhat.shape())?;
        let (n, c, h, w) = (dy.dim(0), dy.dim(1), dy.dim(2), dy.dim(3));
        let plane = h * w;
        let m = (n * plane) as f64;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                for i in (b * c + ch) * plane..(b * c + ch + 1) * plane {
                    dgamma[ch] += dy.data()[i] * cache.xhat.data()[i];
                    dbeta[ch] += dy.data()[i];
                }
            }
        }
        let g = self.gamma.value.data().to_vec();
        let mut dx = Tensor::zeros(dy.shape());
        for b in 0..n {
            for ch in 0..c {
                for i in (b * c + ch) * plane..(b * c + ch + 1) * plane {
                    let dxhat = dy.data()[i] * g[ch];
                    dx.data_mut()[i] = match cache.mode {
                        Mode::Train => {
                            // sum(dxhat) = g * dbeta, sum(dxhat * xhat) = g * dgamma
                            cache.inv_std[ch] / m
                                * (m * dxhat - g[ch] * dbeta[ch] - cache.xhat.data()[i] * g[ch] * dgamma[ch])
                        }
                        Mode::Eval => dxhat * cache.inv_std[ch],
                    };
                }
            }
        }
        add_into(self.gamma.grad_mut(), &dgamma);
        add_into(self.beta.grad_mut(), &dbeta);
        Ok(dx)
    }
}

impl Module for BatchNorm2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

// ---------------------------------------------------------------------------
// linear

/// `y = x W + b` with `W` stored as `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[inputs, outputs], inputs, rng),
            bias: Param::uniform(format!("{name}.bias"), &[outputs], inputs, rng),
        }
    }

    pub fn zeros(name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), &[inputs, outputs]),
            bias: Param::zeros(format!("{name}.bias"), &[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_rank("linear input", 2)?;
        let (n, d) = (x.dim(0), x.dim(1));
        if d != self.inputs() {
            return Err(Error::ShapeMismatch(format!("linear expects {} inputs, got {d}", self.inputs())));
        }
        let e = self.outputs();
        let mut y = Tensor::zeros(&[n, e]);
        for row in y.data_mut().chunks_exact_mut(e) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(n, d, e, 1.0, x.data(), false, self.weight.value.data(), false, 1.0, y.data_mut());
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let (n, d, e) = (x.dim(0), self.inputs(), self.outputs());
        dy.expect_shape("linear grad", &[n, e])?;
        gemm(d, n, e, 1.0, x.data(), true, dy.data(), false, 1.0, self.weight.grad_mut().data_mut());
        let mut db = vec![0.0; e];
        for row in dy.data().chunks_exact(e) {
            for (a, b) in db.iter_mut().zip(row) {
                *a += b;
            }
        }
        add_into(self.bias.grad_mut(), &db);
        let mut dx = Tensor::zeros(&[n, d]);
        gemm(n, e, d, 1.0, dy.data(), false, self.weight.value.data(), true, 0.0, dx.data_mut());
        Ok(dx)
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

// ---------------------------------------------------------------------------
// activations

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    /// Over the last axis.
    Softmax,
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn last_dim(x: &Tensor) -> usize {
    *x.shape().last().unwrap_or(&1)
}

/// Numerically stable softmax over one row.
pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// Log-softmax over the last axis.
pub fn log_softmax(x: &Tensor) -> Tensor {
    let d = last_dim(x);
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(d) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// Gradient of log-softmax given its output `logp` and upstream `dy`.
pub fn log_softmax_backward(logp: &Tensor, dy: &Tensor) -> Tensor {
    let d = last_dim(logp);
    let mut dx = dy.clone();
    for (row, lp) in dx.data_mut().chunks_exact_mut(d).zip(logp.data().chunks_exact(d)) {
        let s: f64 = row.iter().sum();
        for (g, l) in row.iter_mut().zip(lp) {
            *g -= l.exp() * s;
        }
    }
    dx
}

pub fn activation_forward(kind: Activation, x: &Tensor) -> Tensor {
    match kind {
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Tanh => x.map(f64::tanh),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Softmax => {
            let d = last_dim(x);
            let mut out = x.clone();
            for (o, row) in out.data_mut().chunks_exact_mut(d).zip(x.data().chunks_exact(d)) {
                softmax_row(row, o);
            }
            out
        }
    }
}

/// Input gradient given the input `x`, the forward output `y` and `dy`.
pub fn activation_backward(kind: Activation, x: &Tensor, y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    match kind {
        Activation::Relu => {
            for (g, v) in dx.data_mut().iter_mut().zip(x.data()) {
                if *v <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        Activation::Tanh => {
            for (g, v) in dx.data_mut().iter_mut().zip(y.data()) {
                *g *= 1.0 - v * v;
            }
        }
        Activation::Sigmoid => {
            for (g, v) in dx.data_mut().iter_mut().zip(y.data()) {
                *g *= v * (1.0 - v);
            }
        }
        Activation::Softmax => {
            let d = last_dim(y);
            for (g, p) in dx.data_mut().chunks_exact_mut(d).zip(y.data().chunks_exact(d)) {
                let dot: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
                for (gi, pi) in g.iter_mut().zip(p) {
                    *gi = pi * (*gi - dot);
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// GRU

/// GRU cell over `[x, h]` concatenations:
///
/// ```text
/// z  = sigmoid([x, h] Wz + bz)
/// r  = sigmoid([x, h] Wr + br)
/// h~ = tanh([x, r*h] Wh + bh)
/// h' = (1 - z) * h~ + z * h
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub wz: Param,
    pub wr: Param,
    pub wh: Param,
    pub bz: Param,
    pub br: Param,
    pub bh: Param,
}

pub struct GruCache {
    xh: Vec<f64>,
    xrh: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    n: usize,
}

impl GruCell {
    pub fn new(name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let fan = input + hidden;
        Self {
            wz: Param::uniform(format!("{name}.wz"), &[fan, hidden], fan, rng),
            wr: Param::uniform(format!("{name}.wr"), &[fan, hidden], fan, rng),
            wh: Param::uniform(format!("{name}.wh"), &[fan, hidden], fan, rng),
            bz: Param::uniform(format!("{name}.bz"), &[hidden], fan, rng),
            br: Param::uniform(format!("{name}.br"), &[hidden], fan, rng),
            bh: Param::uniform(format!("{name}.bh"), &[hidden], fan, rng),
        }
    }

    pub fn zeros(name: &str, input: usize, hidden: usize) -> Self {
        let fan = input + hidden;
        Self {
            wz: Param::zeros(format!("{name}.wz"), &[fan, hidden]),
            wr: Param::zeros(format!("{name}.wr"), &[fan, hidden]),
            wh: Param::zeros(format!("{name}.wh"), &[fan, hidden]),
            bz: Param::zeros(format!("{name}.bz"), &[hidden]),
            br: Param::zeros(format!("{name}.br"), &[hidden]),
            bh: Param::zeros(format!("{name}.bh"), &[hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wz.value.dim(1)
    }

    pub fn input(&self) -> usize {
        self.wz.value.dim(0) - self.hidden()
    }

    fn affine(&self, xh: &[f64], w: &Param, b: &Param, n: usize) -> Vec<f64> {
        let dh = self.hidden();
        let fan = self.wz.value.dim(0);
        let mut out = Vec::with_capacity(n * dh);
        for _ in 0..n {
            out.extend_from_slice(b.value.data());
        }
        gemm(n, fan, dh, 1.0, xh, false, w.value.data(), false, 1.0, &mut out);
        out
    }

    pub fn forward(&self, x: &Tensor, h: &Tensor) -> Result<(Tensor, GruCache)> {
        let (dx, dh) = (self.input(), self.hidden());
        x.expect_rank("gru input", 2)?;
        let n = x.dim(0);
        x.expect_shape("gru input", &[n, dx])?;
        h.expect_shape("gru state", &[n, dh])?;
        let fan = dx + dh;
        let mut xh = vec![0.0; n * fan];
        for b in 0..n {
            xh[b * fan..b * fan + dx].copy_from_slice(&x.data()[b * dx..(b + 1) * dx]);
            xh[b * fan + dx..(b + 1) * fan].copy_from_slice(&h.data()[b * dh..(b + 1) * dh]);
        }
        let z: Vec<f64> = self.affine(&xh, &self.wz, &self.bz, n).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = self.affine(&xh, &self.wr, &self.br, n).into_iter().map(sigmoid).collect();
        let mut xrh = xh.clone();
        for b in 0..n {
            for j in 0..dh {
                xrh[b * fan + dx + j] *= r[b * dh + j];
            }
        }
        let cand: Vec<f64> = self.affine(&xrh, &self.wh, &self.bh, n).into_iter().map(f64::tanh).collect();
        let hp = h.data();
        let out: Vec<f64> = (0..n * dh).map(|i| (1.0 - z[i]) * cand[i] + z[i] * hp[i]).collect();
        Ok((
            Tensor::from_vec(&[n, dh], out)?,
            GruCache {
                xh,
                xrh,
                h_prev: hp.to_vec(),
                z,
                r,
                cand,
                n,
            },
        ))
    }

    /// Returns `(dx, dh_prev)`.
    pub fn backward(&mut self, cache: &GruCache, dh_new: &Tensor) -> Result<(Tensor, Tensor)> {
        let (dx_dim, dh) = (self.input(), self.hidden());
        let n = cache.n;
        dh_new.expect_shape("gru grad", &[n, dh])?;
        let fan = dx_dim + dh;
        let g = dh_new.data();
        let mut dpre_z = vec![0.0; n * dh];
        let mut dpre_h = vec![0.0; n * dh];
        let mut dh_prev = vec![0.0; n * dh];
        for i in 0..n * dh {
            let (z, c, hp) = (cache.z[i], cache.cand[i], cache.h_prev[i]);
            dpre_z[i] = g[i] * (hp - c) * z * (1.0 - z);
            dpre_h[i] = g[i] * (1.0 - z) * (1.0 - c * c);
            dh_prev[i] = g[i] * z;
        }
        // candidate branch
        gemm(fan, n, dh, 1.0, &cache.xrh, true, &dpre_h, false, 1.0, self.wh.grad_mut().data_mut());
        add_rows(self.bh.grad_mut(), &dpre_h, dh);
        let mut dxrh = vec![0.0; n * fan];
        gemm(n, dh, fan, 1.0, &dpre_h, false, self.wh.value.data(), true, 0.0, &mut dxrh);
        let mut dpre_r = vec![0.0; n * dh];
        let mut dxh = vec![0.0; n * fan];
        for b in 0..n {
            for j in 0..dx_dim {
                dxh[b * fan + j] = dxrh[b * fan + j];
            }
            for j in 0..dh {
                let i = b * dh + j;
                let d_rh = dxrh[b * fan + dx_dim + j];
                let r = cache.r[i];
                dpre_r[i] = d_rh * cache.h_prev[i] * r * (1.0 - r);
                dh_prev[i] += d_rh * r;
            }
        }
        // gate branches
        gemm(fan, n, dh, 1.0, &cache.xh, true, &dpre_z, false, 1.0, self.wz.grad_mut().data_mut());
        gemm(fan, n, dh, 1.0, &cache.xh, true, &dpre_r, false, 1.0, self.wr.grad_mut().data_mut());
        add_rows(self.bz.grad_mut(), &dpre_z, dh);
        add_rows(self.br.grad_mut(), &dpre_r, dh);
        gemm(n, dh, fan, 1.0, &dpre_z, false, self.wz.value.data(), true, 1.0, &mut dxh);
        gemm(n, dh, fan, 1.0, &dpre_r, false, self.wr.value.data(), true, 1.0, &mut dxh);
        let mut dx = vec![0.0; n * dx_dim];
        for b in 0..n {
            dx[b * dx_dim..(b + 1) * dx_dim].copy_from_slice(&dxh[b * fan..b * fan + dx_dim]);
            for j in 0..dh {
                dh_prev[b * dh + j] += dxh[b * fan + dx_dim + j];
            }
        }
        Ok((Tensor::from_vec(&[n, dx_dim], dx)?, Tensor::from_vec(&[n, dh], dh_prev)?))
    }
}

fn add_rows(t: &mut Tensor, rows: &[f64], width: usize) {
    let acc = t.data_mut();
    for row in rows.chunks_exact(width) {
        for (a, b) in acc.iter_mut().zip(row) {
            *a += b;
        }
    }
}

impl Module for GruCell {
    fn params(&self) -> Vec<&Param> {
        vec![&self.wz, &self.wr, &self.wh, &self.bz, &self.br, &self.bh]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.wz, &mut self.wr, &mut self.wh, &mut self.bz, &mut self.br, &mut self.bh]
    }
}
