//! Gaussian mixture over positions, fitted by expectation-maximization with
//! the component count chosen by the Bayesian information criterion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LpvError;
use crate::types::{serde_matrices, serde_vectors, Matrix, Vector};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmData", into = "GmmData")]
pub struct Gmm {
    weights: Vec<f64>,
    means: Vec<Vector>,
    covs: Vec<Matrix>,
    // cached per component: inverse covariance and log normalizer
    precisions: Vec<Matrix>,
    log_norm: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GmmData {
    weights: Vec<f64>,
    #[serde(with = "serde_vectors")]
    means: Vec<Vector>,
    #[serde(with = "serde_matrices")]
    covariances: Vec<Matrix>,
}

impl TryFrom<GmmData> for Gmm {
    type Error = LpvError;
    fn try_from(d: GmmData) -> Result<Self, LpvError> {
        Gmm::new(d.weights, d.means, d.covariances)
    }
}

impl From<Gmm> for GmmData {
    fn from(g: Gmm) -> Self {
        GmmData {
            weights: g.weights,
            means: g.means,
            covariances: g.covs,
        }
    }
}

impl Gmm {
    pub fn new(weights: Vec<f64>, means: Vec<Vector>, covs: Vec<Matrix>) -> Result<Self, LpvError> {
        let k = weights.len();
        if k == 0 || means.len() != k || covs.len() != k {
            return Err(LpvError::InvalidModel("component lists differ in length".into()));
        }
        let n = means[0].len();
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(LpvError::InvalidModel("weights must be positive and sum to 1".into()));
        }
        let mut precisions = Vec::with_capacity(k);
        let mut log_norm = Vec::with_capacity(k);
        for (m, c) in means.iter().zip(&covs) {
            if m.len() != n || c.nrows() != n || c.ncols() != n {
                return Err(LpvError::InvalidModel("component dimensions differ".into()));
            }
            if (c - c.transpose()).abs().max() > 1e-12 * c.abs().max().max(1.0) {
                return Err(LpvError::InvalidModel("covariance is not symmetric".into()));
            }
            let chol = c
                .clone()
                .cholesky()
                .ok_or_else(|| LpvError::InvalidModel("covariance is not positive definite".into()))?;
            let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            precisions.push(chol.inverse());
            log_norm.push(-0.5 * (n as f64 * LN_2PI + logdet));
        }
        Ok(Self {
            weights,
            means,
            covs,
            precisions,
            log_norm,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vector] {
        &self.means
    }

    pub fn covariances(&self) -> &[Matrix] {
        &self.covs
    }

    /// log(π_k N(x; μ_k, Σ_k)) for every component.
    fn log_joint(&self, x: &Vector) -> Vec<f64> {
        (0..self.k())
            .map(|k| {
                let d = x - &self.means[k];
                let q = (&self.precisions[k] * &d).dot(&d);
                self.weights[k].ln() + self.log_norm[k] - 0.5 * q
            })
            .collect()
    }

    /// Posterior responsibilities γ_k(x).
    pub fn responsibilities(&self, x: &Vector) -> Vec<f64> {
        softmax(&self.log_joint(x))
    }

    /// Responsibilities and their gradients with respect to x.
    pub fn responsibilities_with_grad(&self, x: &Vector) -> (Vec<f64>, Vec<Vector>) {
        let g = self.responsibilities(x);
        let dlog: Vec<Vector> = (0..self.k())
            .map(|k| -(&self.precisions[k] * (x - &self.means[k])))
            .collect();
        let mut avg = Vector::zeros(x.len());
        for k in 0..self.k() {
            avg += &dlog[k] * g[k];
        }
        let grads = (0..self.k()).map(|k| (&dlog[k] - &avg) * g[k]).collect();
        (g, grads)
    }

    pub fn log_likelihood(&self, xs: &[Vector]) -> f64 {
        xs.iter().map(|x| log_sum_exp(&self.log_joint(x))).sum()
    }

    pub fn bic(&self, xs: &[Vector]) -> f64 {
        let n = self.dim() as f64;
        let k = self.k() as f64;
        let params = (k - 1.0) + k * n + k * n * (n + 1.0) / 2.0;
        -2.0 * self.log_likelihood(xs) + params * (xs.len() as f64).ln()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    pub tol: f64,
    /// Added to every covariance diagonal, relative to the data variance.
    pub reg: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-8,
            reg: 1e-4,
        }
    }
}

fn data_cov(xs: &[Vector]) -> (Vector, Matrix) {
    let n = xs[0].len();
    let mut mean = Vector::zeros(n);
    for x in xs {
        mean += x;
    }
    mean /= xs.len() as f64;
    let mut cov = Matrix::zeros(n, n);
    for x in xs {
        let d = x - &mean;
        cov += &d * d.transpose();
    }
    cov /= xs.len() as f64;
    (mean, cov)
}

/// k-means++ seeding.
fn seed_means(xs: &[Vector], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vector> {
    let mut means = vec![xs[rng.random_range(0..xs.len())].clone()];
    while means.len() < k {
        let d2: Vec<f64> = xs
            .iter()
            .map(|x| means.iter().map(|m| (x - m).norm_squared()).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            means.push(xs[rng.random_range(0..xs.len())].clone());
            continue;
        }
        let mut r = rng.random::<f64>() * total;
        let mut pick = xs.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if r < *d {
                pick = i;
                break;
            }
            r -= d;
        }
        means.push(xs[pick].clone());
    }
    means
}

/// Fits a K-component mixture by EM.
pub fn fit_em(xs: &[Vector], k: usize, cfg: &EmConfig, seed: u64) -> Result<Gmm, LpvError> {
    let n = xs[0].len();
    let (_, cov) = data_cov(xs);
    let scale = (cov.trace() / n as f64).max(1e-12);
    let ridge = Matrix::identity(n, n) * (cfg.reg * scale);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = seed_means(xs, k, &mut rng);
    let init_cov = &cov / (k as f64) + &ridge;
    let mut gmm = Gmm::new(vec![1.0 / k as f64; k], means, vec![init_cov; k])?;
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..cfg.max_iters {
        // E step
        let resp: Vec<Vec<f64>> = xs.iter().map(|x| gmm.responsibilities(x)).collect();
        // M step
        let mut weights = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        for j in 0..k {
            let nk: f64 = resp.iter().map(|r| r[j]).sum::<f64>().max(1e-10);
            let mut mu = Vector::zeros(n);
            for (x, r) in xs.iter().zip(&resp) {
                mu += x * r[j];
            }
            mu /= nk;
            let mut c = Matrix::zeros(n, n);
            for (x, r) in xs.iter().zip(&resp) {
                let d = x - &mu;
                c += (&d * d.transpose()) * r[j];
            }
            c /= nk;
            c = (&c + c.transpose()) * 0.5 + &ridge;
            weights.push(nk / xs.len() as f64);
            means.push(mu);
            covs.push(c);
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w = (*w / total).max(1e-12);
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        gmm = Gmm::new(weights, means, covs)?;
        let ll = gmm.log_likelihood(xs);
        if (ll - prev).abs() <= cfg.tol * ll.abs().max(1.0) {
            break;
        }
        prev = ll;
    }
    Ok(gmm)
}

/// Tries K = 1..=k_max and keeps the lowest BIC (ties: fewer components).
pub fn fit_bic(xs: &[Vector], k_max: usize, cfg: &EmConfig, seed: u64) -> Result<Gmm, LpvError> {
    let mut best: Option<(f64, Gmm)> = None;
    // more components than samples cannot be estimated
    let k_max = k_max.max(1).min(xs.len());
    for k in 1..=k_max {
        let g = fit_em(xs, k, cfg, seed.wrapping_add(k as u64))?;
        let b = g.bic(xs);
        if best.as_ref().is_none_or(|(bb, _)| b < *bb) {
            best = Some((b, g));
        }
    }
    Ok(best.expect("k_max >= 1").1)
}
