//! A small fully-connected network with hand-written backpropagation and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ReLU on hidden layers, identity on the output layer.
///
/// Parameters live in one flat vector: for each layer the weight matrix
/// (row-major, `out x in`) followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardNet {
    widths: Vec<usize>,
    params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDocument {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

/// Scratch buffers for one forward/backward pass.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl FeedForwardNet {
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer widths {widths:?}")));
        }
        let n = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(FeedForwardNet {
            widths: widths.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn random<R: Rng>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        let mut off = 0;
        for w in widths.windows(2) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            for p in &mut net.params[off..off + w[0] * w[1]] {
                *p = rng.gen_range(-limit..limit);
            }
            off += w[0] * w[1] + w[1];
        }
        Ok(net)
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("at least two layers")
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, fan_in, fan_out)
        self.widths.windows(2).scan(0, |off, w| {
            let here = *off;
            *off += w[0] * w[1] + w[1];
            Some((here, w[0], w[1]))
        })
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = Workspace::default();
        self.forward_into(x, &mut ws);
        ws.acts.pop().expect("output layer")
    }

    /// Pre-activation values of every hidden layer, for kink diagnostics.
    pub fn hidden_pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let mut input = x.to_vec();
        let layers: Vec<_> = self.layers().collect();
        for &(off, fi, fo) in &layers[..layers.len() - 1] {
            let w = &self.params[off..off + fi * fo];
            let z: Vec<f64> = (0..fo)
                .map(|o| self.params[off + fi * fo + o] + w[o * fi..(o + 1) * fi].iter().zip(&input).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            input = z.iter().map(|v| v.max(0.0)).collect();
            out.push(z);
        }
        out
    }

    fn forward_into(&self, x: &[f64], ws: &mut Workspace) {
        let depth = self.widths.len();
        ws.acts.resize(depth, Vec::new());
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(x);
        for (l, (off, fi, fo)) in self.layers().enumerate() {
            let (prev, next) = ws.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut next[0];
            out.clear();
            let w = &self.params[off..off + fi * fo];
            let b = &self.params[off + fi * fo..off + fi * fo + fo];
            let hidden = l + 2 < depth;
            for o in 0..fo {
                let row = &w[o * fi..(o + 1) * fi];
                let mut s = b[o];
                for (wi, xi) in row.iter().zip(input) {
                    s += wi * xi;
                }
                out.push(if hidden { s.max(0.0) } else { s });
            }
        }
    }

    /// Squared error of one sample; accumulates `d(0.5*|y-t|^2 * scale)/dparams` into `grad`.
    fn accumulate(&self, x: &[f64], t: &[f64], scale: f64, grad: &mut [f64], ws: &mut Workspace) -> f64 {
        self.forward_into(x, ws);
        let depth = self.widths.len();
        ws.deltas.resize(depth, Vec::new());
        let y = &ws.acts[depth - 1];
        let out = &mut ws.deltas[depth - 1];
        out.clear();
        let mut sq = 0.0;
        for (yi, ti) in y.iter().zip(t) {
            let d = yi - ti;
            sq += d * d;
            out.push(d * scale);
        }
        let layers: Vec<_> = self.layers().collect();
        for (l, &(off, fi, fo)) in layers.iter().enumerate().rev() {
            let (lower, upper) = ws.deltas.split_at_mut(l + 1);
            let delta = &upper[0];
            let input = &ws.acts[l];
            let (gw, rest) = grad[off..].split_at_mut(fi * fo);
            for o in 0..fo {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * fi..(o + 1) * fi];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += d * xi;
                }
                rest[o] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + fi * fo];
                let back = &mut lower[l];
                back.clear();
                back.resize(fi, 0.0);
                for o in 0..fo {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (bi, wi) in back.iter_mut().zip(&w[o * fi..(o + 1) * fi]) {
                        *bi += d * wi;
                    }
                }
                // ReLU derivative: zero where the activation was clipped.
                for (bi, a) in back.iter_mut().zip(&ws.acts[l]) {
                    if *a <= 0.0 {
                        *bi = 0.0;
                    }
                }
            }
        }
        sq
    }

    /// Mean squared error over all outputs of the given samples, and its gradient.
    pub fn mse_and_grad<'a, I>(&self, samples: I, grad: &mut Vec<f64>, ws: &mut Workspace) -> f64
    where
        I: ExactSizeIterator<Item = (&'a [f64], &'a [f64])>,
    {
        grad.clear();
        grad.resize(self.params.len(), 0.0);
        let count = samples.len() * self.output_width();
        if count == 0 {
            return 0.0;
        }
        let scale = 2.0 / count as f64;
        let mut sq = 0.0;
        for (x, t) in samples {
            sq += self.accumulate(x, t, scale, grad, ws);
        }
        sq / count as f64
    }

    pub fn mse<'a, I>(&self, samples: I) -> f64
    where
        I: ExactSizeIterator<Item = (&'a [f64], &'a [f64])>,
    {
        let count = samples.len() * self.output_width();
        if count == 0 {
            return 0.0;
        }
        let mut ws = Workspace::default();
        let mut sq = 0.0;
        for (x, t) in samples {
            self.forward_into(x, &mut ws);
            let y = &ws.acts[self.widths.len() - 1];
            sq += y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        sq / count as f64
    }

    pub fn to_layers(&self) -> Vec<LayerDocument> {
        self.layers()
            .map(|(off, fi, fo)| LayerDocument {
                weights: (0..fo)
                    .map(|o| self.params[off + o * fi..off + (o + 1) * fi].to_vec())
                    .collect(),
                biases: self.params[off + fi * fo..off + fi * fo + fo].to_vec(),
            })
            .collect()
    }

    pub fn from_layers(widths: &[usize], layers: &[LayerDocument]) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        if layers.len() != widths.len() - 1 {
            return Err(Error::Config(format!(
                "expected {} layers, found {}",
                widths.len() - 1,
                layers.len()
            )));
        }
        let mut flat = Vec::with_capacity(net.params.len());
        for (doc, w) in layers.iter().zip(widths.windows(2)) {
            if doc.weights.len() != w[1] || doc.weights.iter().any(|r| r.len() != w[0]) || doc.biases.len() != w[1] {
                return Err(Error::Config(format!("layer shape does not match {}x{}", w[1], w[0])));
            }
            for r in &doc.weights {
                flat.extend_from_slice(r);
            }
            flat.extend_from_slice(&doc.biases);
        }
        net.params = flat;
        Ok(net)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n: usize) -> Self {
        Adam {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= c.learning_rate * mh / (vh.sqrt() + c.epsilon);
        }
    }
}
