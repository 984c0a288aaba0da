//! Small feedforward networks with hand-written backpropagation, the policy
//! heads (softmax over discrete order quantities, Gaussian over a normalized
//! continuous order) and a bias-corrected Adam optimizer.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const LN_2PI: f64 = 1.8378770664093453;
/// Floor added to the softplus std so sigma stays strictly positive.
pub const STD_FLOOR: f64 = 1e-3;

/// Policy head kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Softmax over `n_actions` discrete order quantities.
    Discrete { n_actions: usize },
    /// Normal law over a scalar action in normalized space.
    Gaussian,
}

impl HeadKind {
    pub fn output_dim(&self) -> usize {
        match self {
            HeadKind::Discrete { n_actions } => *n_actions,
            HeadKind::Gaussian => 2,
        }
    }
}

/// Architecture descriptor stored with checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
    pub head: HeadKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Vec<f64>, // row-major, out_dim x in_dim
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Layer {
    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// Fully-connected net: relu on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Gram-Schmidt rows of a Gaussian matrix, scaled by `gain`.
fn init_layer(in_dim: usize, out_dim: usize, gain: f64, rng: &mut RngStream) -> Layer {
    let mut rows: Vec<Vec<f64>> = (0..out_dim)
        .map(|_| (0..in_dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for i in 0..out_dim {
        // orthogonalize only within blocks of `in_dim` rows: with more rows
        // than inputs, later rows would otherwise collapse to zero
        let block_start = i - (i % in_dim);
        for j in block_start..i {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let norm2: f64 = rows[j].iter().map(|v| v * v).sum();
            if norm2 > 1e-12 {
                let f = dot / norm2;
                for k in 0..in_dim {
                    rows[i][k] -= f * rows[j][k];
                }
            }
        }
        let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for v in &mut rows[i] {
                *v *= gain / norm;
            }
        }
    }
    Layer {
        w: rows.into_iter().flatten().collect(),
        b: vec![0.0; out_dim],
        in_dim,
        out_dim,
    }
}

impl Mlp {
    /// `dims` lists input, hidden... and output sizes. Hidden layers get a
    /// sqrt(2) gain; the output layer gets `head_gain`.
    pub fn new(dims: &[usize], head_gain: f64, rng: &mut RngStream) -> Self {
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let last = i == dims.len() - 2;
            let gain = if last { head_gain } else { 2.0f64.sqrt() };
            layers.push(init_layer(dims[i], dims[i + 1], gain, rng));
        }
        Self { layers }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if i + 1 < self.layers.len() {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward pass keeping post-activation values for backprop.
    /// Returns (activations per layer incl. the input, output).
    pub fn forward_cached(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut acts = vec![x.to_vec()];
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if i + 1 < self.layers.len() {
                for v in &mut next {
                    *v = v.max(0.0);
                }
                acts.push(next.clone());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        (acts, cur)
    }

    /// Accumulate parameter gradients for one sample into `grad`.
    pub fn backward(&self, acts: &[Vec<f64>], dout: &[f64], grad: &mut MlpGrad) {
        let mut delta = dout.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[li];
            let g = &mut grad.layers[li];
            for o in 0..layer.out_dim {
                g.b[o] += delta[o];
                let row = &mut g.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gi, xi) in row.iter_mut().zip(input) {
                    *gi += delta[o] * xi;
                }
            }
            if li == 0 {
                break;
            }
            let mut dprev = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (dp, wi) in dprev.iter_mut().zip(row) {
                    *dp += delta[o] * wi;
                }
            }
            // relu mask from the post-activation values of the previous layer
            for (dp, &a) in dprev.iter_mut().zip(&acts[li]) {
                if a <= 0.0 {
                    *dp = 0.0;
                }
            }
            delta = dprev;
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
    }

    pub fn read_flat<'a>(&mut self, mut src: &'a [f64]) -> &'a [f64] {
        for l in &mut self.layers {
            let (head, rest) = src.split_at(l.w.len());
            l.w.copy_from_slice(head);
            let (head, rest) = rest.split_at(l.b.len());
            l.b.copy_from_slice(head);
            src = rest;
        }
        src
    }
}

/// Gradient buffer matching an `Mlp`.
#[derive(Debug, Clone)]
pub struct MlpGrad {
    pub layers: Vec<Layer>,
}

impl MlpGrad {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer {
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                })
                .collect(),
        }
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
    }

    pub fn scale(&mut self, f: f64) {
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v *= f;
            }
        }
    }
}

/// Actor-critic parameter set: two towers over the same observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyValueNet {
    pub arch: Arch,
    pub actor: Mlp,
    pub critic: Mlp,
}

impl PolicyValueNet {
    pub fn new(arch: Arch, rng: &mut RngStream) -> Self {
        let mut actor_dims = vec![arch.obs_dim];
        actor_dims.extend_from_slice(&arch.hidden);
        actor_dims.push(arch.head.output_dim());
        let mut critic_dims = vec![arch.obs_dim];
        critic_dims.extend_from_slice(&arch.hidden);
        critic_dims.push(1);
        let actor = Mlp::new(&actor_dims, 0.01, rng);
        let critic = Mlp::new(&critic_dims, 1.0, rng);
        Self { arch, actor, critic }
    }

    pub fn param_count(&self) -> usize {
        self.actor.param_count() + self.critic.param_count()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.actor.write_flat(&mut out);
        self.critic.write_flat(&mut out);
        out
    }

    pub fn from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Config(format!(
                "parameter vector length {} does not match architecture ({})",
                flat.len(),
                self.param_count()
            )));
        }
        let rest = self.actor.read_flat(flat);
        self.critic.read_flat(rest);
        Ok(())
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.critic.forward(obs)[0]
    }

    pub fn all_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// softplus(x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        (1.0 + x.exp()).ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Softmax probabilities from logits, max-shifted.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gaussian head transform: raw output -> (mean, std).
pub fn gaussian_head(out: &[f64]) -> (f64, f64) {
    (out[0], softplus(out[1]) + STD_FLOOR)
}

/// Log-density of N(mean, std^2) at `a`.
pub fn gaussian_log_prob(mean: f64, std: f64, a: f64) -> f64 {
    let z = (a - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * LN_2PI
}

/// Flat-vector Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// In-place descent step on `params` along `grads` (gradient of the loss).
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
