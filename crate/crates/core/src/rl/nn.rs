//! Small fully connected networks with hand-written backpropagation.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

static POLICY_FORWARDS: AtomicU64 = AtomicU64::new(0);

/// Number of policy-network forward passes since process start.
pub fn policy_forward_count() -> u64 {
    POLICY_FORWARDS.load(Ordering::Relaxed)
}

/// Tanh hidden layers and a linear output layer. Parameters are one flat
/// vector: for each layer, a row-major `out x in` weight block then `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `acts[0]` is the input; `acts[l]` the output of layer `l` (after tanh for hidden layers).
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform Glorot initialization; the last layer is scaled by `out_scale`.
    pub fn new(sizes: &[usize], out_scale: f64, rng: &mut impl Rng) -> Self {
        let mut params = Vec::with_capacity(Self::param_count(sizes));
        let layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if l + 1 == layers {
                bound *= out_scale;
            }
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { sizes: sizes.to_vec(), params }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap_or(&0)
    }

    /// Offset of the output-layer biases in `params`.
    pub fn output_bias_offset(&self) -> usize {
        self.params.len() - self.output_dim()
    }

    pub fn forward(&self, input: &[f64]) -> Tape {
        debug_assert_eq!(input.len(), self.sizes[0]);
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(input.to_vec());
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let x = &acts[l];
            let mut y: Vec<f64> = b.to_vec();
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *yo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < layers {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(y);
            off += n_in * n_out + n_out;
        }
        Tape { acts }
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, tape: &Tape, d_out: &[f64], grad: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = d_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let x = &tape.acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += d * xi;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            // Through tanh: d/dz tanh(z) = 1 - tanh(z)^2.
            for (p, a) in prev.iter_mut().zip(x) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn entropy(probs: &[f64], log_probs: &[f64]) -> f64 {
    -probs.iter().zip(log_probs).map(|(p, lp)| p * lp).sum::<f64>()
}

/// Separate policy and value networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub policy: Mlp,
    pub value: Mlp,
}

impl ActorCritic {
    pub fn new(policy_in: usize, value_in: usize, hidden: &[usize], actions: usize, rng: &mut impl Rng) -> Self {
        let mut ps = vec![policy_in];
        ps.extend_from_slice(hidden);
        ps.push(actions);
        let mut vs = vec![value_in];
        vs.extend_from_slice(hidden);
        vs.push(1);
        Self { policy: Mlp::new(&ps, 0.01, rng), value: Mlp::new(&vs, 1.0, rng) }
    }

    pub fn policy_tape(&self, obs: &[f64]) -> Tape {
        POLICY_FORWARDS.fetch_add(1, Ordering::Relaxed);
        self.policy.forward(obs)
    }

    pub fn action_probs(&self, obs: &[f64]) -> Vec<f64> {
        softmax(self.policy_tape(obs).output())
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.value.forward(obs).output()[0]
    }

    pub fn is_finite(&self) -> bool {
        self.policy.params.iter().chain(&self.value.params).all(|v| v.is_finite())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -5.0, 3.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let lp = log_softmax(&[1.0, 2.0, 3.0]);
        let p = softmax(&[1.0, 2.0, 3.0]);
        for (a, b) in lp.iter().zip(&p) {
            assert!((a.exp() - b).abs() < 1e-15);
        }
        let h = entropy(&[1.0 / 3.0; 3], &[(1.0f64 / 3.0).ln(); 3]);
        assert!((h - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[5, 7, 6, 3], 1.0, &mut rng);
        let x: Vec<f64> = (0..5).map(|i| (i as f64 * 0.37).sin()).collect();
        let w = [0.3, -1.2, 0.7];
        let loss = |n: &Mlp| n.forward(&x).output().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let mut g = vec![0.0; net.params.len()];
        net.backward(&net.forward(&x), &w, &mut g);
        for i in 0..net.params.len() {
            let mut a = net.clone();
            let mut b = net.clone();
            a.params[i] += 1e-6;
            b.params[i] -= 1e-6;
            let fd = (loss(&a) - loss(&b)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g = vec![2.0 * p[0], 2.0 * p[1]];
            opt.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-2 && p[1].abs() < 1e-2);
    }
}
