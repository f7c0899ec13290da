//! Small real-valued convolutional networks: valid (unpadded) 2-D
//! convolutions without biases, ReLU or identity activations, and exact
//! backpropagation.

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            _ => Err(Error::Config(format!("unknown activation {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub taps_x: usize,
    pub taps_y: usize,
    pub cin: usize,
    pub cout: usize,
    pub act: Activation,
}

impl ConvSpec {
    pub fn n_weights(&self) -> usize {
        self.taps_x * self.taps_y * self.cin * self.cout
    }
}

/// Channel-major `c × h × w` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }
}

/// Stack of [`ConvSpec`] layers with all weights in one flat vector
/// (layer by layer, each `[cout][cin][taps_y][taps_x]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNet {
    layers: Vec<ConvSpec>,
    offsets: Vec<usize>,
}

impl ConvNet {
    pub fn new(layers: Vec<ConvSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.taps_x == 0 || l.taps_y == 0 || l.cin == 0 || l.cout == 0 {
                return Err(Error::Config(format!("layer {i} has a zero dimension: {l:?}")));
            }
            if i > 0 && layers[i - 1].cout != l.cin {
                return Err(Error::Config(format!(
                    "layer {i} expects {} input channels, previous layer gives {}",
                    l.cin,
                    layers[i - 1].cout
                )));
            }
        }
        let mut offsets = vec![0];
        for l in &layers {
            offsets.push(offsets.last().unwrap() + l.n_weights());
        }
        Ok(Self { layers, offsets })
    }

    pub fn layers(&self) -> &[ConvSpec] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Receptive field `(rx, ry)`.
    pub fn receptive_field(&self) -> (usize, usize) {
        let rx = self.layers.iter().map(|l| l.taps_x - 1).sum::<usize>() + 1;
        let ry = self.layers.iter().map(|l| l.taps_y - 1).sum::<usize>() + 1;
        (rx, ry)
    }

    fn weights<'a>(&self, params: &'a [f64], l: usize) -> &'a [f64] {
        &params[self.offsets[l]..self.offsets[l + 1]]
    }

    /// Output only.
    pub fn forward(&self, params: &[f64], input: &Tensor) -> Tensor {
        let mut x = input.clone();
        for l in 0..self.layers.len() {
            x = conv_forward(&self.layers[l], self.weights(params, l), &x);
        }
        x
    }

    /// Input followed by every layer's activated output.
    pub fn forward_cached(&self, params: &[f64], input: &Tensor) -> Vec<Tensor> {
        let mut acts = vec![input.clone()];
        for l in 0..self.layers.len() {
            let next = conv_forward(&self.layers[l], self.weights(params, l), acts.last().unwrap());
            acts.push(next);
        }
        acts
    }

    /// Accumulates `∂loss/∂params` into `grads`, given `∂loss/∂output` for
    /// the cached forward pass.
    pub fn backward(&self, params: &[f64], acts: &[Tensor], d_out: Tensor, grads: &mut [f64]) {
        let mut delta = d_out;
        for l in (0..self.layers.len()).rev() {
            let spec = &self.layers[l];
            if spec.act == Activation::Relu {
                for (d, a) in delta.data.iter_mut().zip(&acts[l + 1].data) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let g = &mut grads[self.offsets[l]..self.offsets[l + 1]];
            conv_weight_grad(spec, &acts[l], &delta, g);
            if l > 0 {
                delta = conv_input_grad(spec, self.weights(params, l), &delta, acts[l].h, acts[l].w);
            }
        }
    }
}

/// Valid convolution (cross-correlation) followed by the activation.
pub fn conv_forward(spec: &ConvSpec, w: &[f64], input: &Tensor) -> Tensor {
    debug_assert_eq!(input.c, spec.cin);
    let (tx, ty) = (spec.taps_x, spec.taps_y);
    if input.h < ty || input.w < tx {
        return Tensor::zeros(spec.cout, 0, 0);
    }
    let ho = input.h + 1 - ty;
    let wo = input.w + 1 - tx;
    let mut out = Tensor::zeros(spec.cout, ho, wo);
    out.data.par_chunks_mut(ho * wo).enumerate().for_each(|(o, dst)| {
        for c in 0..spec.cin {
            let src = input.plane(c);
            for dy in 0..ty {
                for dx in 0..tx {
                    let wt = w[((o * spec.cin + c) * ty + dy) * tx + dx];
                    if wt == 0.0 {
                        continue;
                    }
                    for y in 0..ho {
                        let s = &src[(y + dy) * input.w + dx..(y + dy) * input.w + dx + wo];
                        let d = &mut dst[y * wo..(y + 1) * wo];
                        for (di, si) in d.iter_mut().zip(s) {
                            *di += wt * si;
                        }
                    }
                }
            }
        }
        if spec.act == Activation::Relu {
            dst.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    });
    out
}

fn conv_weight_grad(spec: &ConvSpec, input: &Tensor, delta: &Tensor, g: &mut [f64]) {
    let (tx, ty) = (spec.taps_x, spec.taps_y);
    let (ho, wo) = (delta.h, delta.w);
    g.par_chunks_mut(spec.cin * ty * tx).enumerate().for_each(|(o, go)| {
        let d = delta.plane(o);
        for c in 0..spec.cin {
            let src = input.plane(c);
            for dy in 0..ty {
                for dx in 0..tx {
                    let mut acc = 0.0;
                    for y in 0..ho {
                        let s = &src[(y + dy) * input.w + dx..(y + dy) * input.w + dx + wo];
                        acc += d[y * wo..(y + 1) * wo].iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                    }
                    go[(c * ty + dy) * tx + dx] += acc;
                }
            }
        }
    });
}

fn conv_input_grad(spec: &ConvSpec, w: &[f64], delta: &Tensor, h: usize, wd: usize) -> Tensor {
    let (tx, ty) = (spec.taps_x, spec.taps_y);
    let (ho, wo) = (delta.h, delta.w);
    let mut out = Tensor::zeros(spec.cin, h, wd);
    out.data.par_chunks_mut(h * wd).enumerate().for_each(|(c, dst)| {
        for o in 0..spec.cout {
            let d = delta.plane(o);
            for dy in 0..ty {
                for dx in 0..tx {
                    let wt = w[((o * spec.cin + c) * ty + dy) * tx + dx];
                    if wt == 0.0 {
                        continue;
                    }
                    for y in 0..ho {
                        let row = &mut dst[(y + dy) * wd + dx..(y + dy) * wd + dx + wo];
                        for (ri, di) in row.iter_mut().zip(&d[y * wo..(y + 1) * wo]) {
                            *ri += wt * di;
                        }
                    }
                }
            }
        }
    });
    out
}
