//! Behavior-cloning baseline: a ReLU MLP with a scaled tanh output, trained
//! full-batch with Adam. No stability guarantee.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lpvds::VelocityField;
use crate::optim::Adam;
use crate::types::{serde_matrix, serde_vector, Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BcError {
    #[error("no training pairs")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Layer {
    #[serde(with = "serde_matrix")]
    w: Matrix,
    #[serde(with = "serde_vector")]
    b: Vector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpPolicy {
    widths: Vec<usize>,
    layers: Vec<Layer>,
    output_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub output_scale: f64,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100, 100],
            epochs: 5000,
            learning_rate: 1e-3,
            output_scale: 50.0,
            seed: 0,
        }
    }
}

fn relu(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

struct Cache {
    /// Layer inputs, one per layer, plus the final pre-activation.
    acts: Vec<Matrix>,
    z: Matrix,
}

impl MlpPolicy {
    /// Uniform(−1/√fan_in, 1/√fan_in) initialization.
    pub fn init(widths: &[usize], output_scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|p| {
                let bound = 1.0 / (p[0] as f64).sqrt();
                let w = Matrix::from_fn(p[1], p[0], |_, _| rng.random_range(-bound..bound));
                let b = Vector::from_fn(p[1], |_, _| rng.random_range(-bound..bound));
                Layer { w, b }
            })
            .collect();
        Self {
            widths: widths.to_vec(),
            layers,
            output_scale,
        }
    }

    /// A network whose weights are all zero.
    pub fn zeros(widths: &[usize], output_scale: f64) -> Self {
        let mut p = Self::init(widths, output_scale, 0);
        for l in &mut p.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        p
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    fn forward(&self, x: &Matrix) -> Cache {
        let mut acts = vec![x.clone()];
        let last = self.layers.len() - 1;
        let mut z = Matrix::zeros(0, 0);
        for (i, l) in self.layers.iter().enumerate() {
            let mut pre = &l.w * acts.last().expect("input");
            for mut c in pre.column_iter_mut() {
                c += &l.b;
            }
            if i == last {
                z = pre;
            } else {
                acts.push(relu(&pre));
            }
        }
        Cache { acts, z }
    }

    pub fn predict(&self, x: &Vector) -> Vector {
        let xm = Matrix::from_column_slice(x.len(), 1, x.as_slice());
        let z = self.forward(&xm).z;
        Vector::from_iterator(z.nrows(), z.iter().map(|v| self.output_scale * v.tanh()))
    }

    fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    fn unflatten(&mut self, p: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&p[at..at + nw]);
            at += nw;
            let nb = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&p[at..at + nb]);
            at += nb;
        }
    }

    /// Mean over samples of the squared error norm, and its gradient.
    fn loss_grad(&self, x: &Matrix, t: &Matrix) -> (f64, Vec<f64>) {
        let cache = self.forward(x);
        let nsamp = x.ncols() as f64;
        let th = cache.z.map(f64::tanh);
        let y = &th * self.output_scale;
        let diff = &y - t;
        let loss = diff.norm_squared() / nsamp;
        // dL/dz = 2 (y − t)/N · s (1 − tanh²)
        let mut delta = diff.zip_map(&th, |d, h| 2.0 * d / nsamp * self.output_scale * (1.0 - h * h));
        let mut grads: Vec<(Matrix, Vector)> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = &cache.acts[i];
            let gw = &delta * input.transpose();
            let gb = delta.column_sum();
            if i > 0 {
                let back = self.layers[i].w.transpose() * &delta;
                delta = back.zip_map(input, |g, a| if a > 0.0 { g } else { 0.0 });
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads {
            flat.extend_from_slice(gw.as_slice());
            flat.extend_from_slice(gb.as_slice());
        }
        (loss, flat)
    }
}

impl VelocityField for MlpPolicy {
    fn velocity(&self, x: &Vector) -> Vector {
        self.predict(x)
    }
}

fn batch(pairs: &[(Vector, Vector)]) -> (Matrix, Matrix) {
    let n = pairs[0].0.len();
    let x = Matrix::from_fn(n, pairs.len(), |r, c| pairs[c].0[r]);
    let t = Matrix::from_fn(n, pairs.len(), |r, c| pairs[c].1[r]);
    (x, t)
}

/// Full-batch training; samples are treated as i.i.d.
pub fn train(pairs: &[(Vector, Vector)], cfg: &BcConfig) -> Result<MlpPolicy, BcError> {
    let first = pairs.first().ok_or(BcError::Empty)?;
    let n = first.0.len();
    for (x, v) in pairs {
        if x.len() != n || v.len() != n {
            return Err(BcError::DimensionMismatch { expected: n, got: x.len() });
        }
    }
    let mut widths = vec![n];
    widths.extend(&cfg.hidden);
    widths.push(n);
    let mut policy = MlpPolicy::init(&widths, cfg.output_scale, cfg.seed);
    let (x, t) = batch(pairs);
    let mut params = policy.flatten();
    let mut opt = Adam::new(params.len(), cfg.learning_rate);
    for _ in 0..cfg.epochs {
        let (_, g) = policy.loss_grad(&x, &t);
        opt.step(&mut params, &g);
        policy.unflatten(&params);
    }
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(a: f64, b: f64) -> Vector {
        Vector::from_vec(vec![a, b])
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpPolicy::zeros(&[2, 100, 100, 2], 50.0);
        assert_eq!(p.predict(&v(0.3, -4.0)), v(0.0, 0.0));
    }

    #[test]
    fn outputs_are_bounded() {
        let mut p = MlpPolicy::init(&[2, 8, 8, 2], 50.0, 1);
        let big: Vec<f64> = p.flatten().iter().map(|w| w * 1e3).collect();
        p.unflatten(&big);
        for x in [v(1e3, -1e3), v(-5e2, 7e2), v(0.0, 1e6)] {
            assert!(p.predict(&x).iter().all(|c| c.abs() <= 50.0));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = MlpPolicy::init(&[2, 5, 4, 2], 3.0, 7);
        let pairs = vec![
            (v(0.1, 0.9), v(0.5, -0.2)),
            (v(-0.4, 0.3), v(-0.1, 0.7)),
            (v(0.8, -0.6), v(0.3, 0.3)),
        ];
        let (x, t) = batch(&pairs);
        let (_, g) = p.loss_grad(&x, &t);
        let base = p.flatten();
        let h = 1e-6;
        let mut probe = p.clone();
        for i in 0..base.len() {
            let mut pp = base.clone();
            pp[i] += h;
            probe.unflatten(&pp);
            let lp = probe.loss_grad(&x, &t).0;
            pp[i] -= 2.0 * h;
            probe.unflatten(&pp);
            let lm = probe.loss_grad(&x, &t).0;
            let fd = (lp - lm) / (2.0 * h);
            let tol = 1e-4 * fd.abs().max(g[i].abs()).max(1e-3);
            assert!((fd - g[i]).abs() <= tol, "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert_eq!(train(&[], &BcConfig::default()), Err(BcError::Empty));
    }
}
