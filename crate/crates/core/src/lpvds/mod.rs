//! Linear-parameter-varying dynamical systems with a quadratic Lyapunov
//! certificate: ẋ = Σ γ_k(x) (A_k x + b_k), b_k = −A_k x*, A_k + A_kᵀ ⪯ −ε I.

pub mod gmm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gmm::{fit_bic, fit_em, EmConfig, Gmm};

use crate::optim::Adam;
use crate::types::{serde_matrices, serde_vector, Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpvError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("all training states coincide")]
    DegenerateData,
    #[error("need at least {need} samples, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
}

/// Anything that maps a state to a velocity.
pub trait VelocityField: Send + Sync {
    fn velocity(&self, x: &Vector) -> Vector;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelData", into = "ModelData")]
pub struct LpvDsModel {
    gmm: Gmm,
    a: Vec<Matrix>,
    b: Vec<Vector>,
    x_star: Vector,
    epsilon_stab: f64,
    train_rmse: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelData {
    gmm: Gmm,
    #[serde(with = "serde_matrices")]
    a: Vec<Matrix>,
    #[serde(with = "serde_vector")]
    x_star: Vector,
    epsilon_stab: f64,
    train_rmse: f64,
}

impl TryFrom<ModelData> for LpvDsModel {
    type Error = LpvError;
    fn try_from(d: ModelData) -> Result<Self, LpvError> {
        let mut m = LpvDsModel::new(d.gmm, d.a, d.x_star, d.epsilon_stab)?;
        m.train_rmse = d.train_rmse;
        Ok(m)
    }
}

impl From<LpvDsModel> for ModelData {
    fn from(m: LpvDsModel) -> Self {
        ModelData {
            gmm: m.gmm,
            a: m.a,
            x_star: m.x_star,
            epsilon_stab: m.epsilon_stab,
            train_rmse: m.train_rmse,
        }
    }
}

/// Largest eigenvalue of the symmetric matrix S.
fn max_sym_eig(s: &Matrix) -> f64 {
    s.clone().symmetric_eigen().eigenvalues.max()
}

impl LpvDsModel {
    /// Builds a model, deriving b_k = −A_k x* and checking the stability
    /// margin of every component.
    pub fn new(gmm: Gmm, a: Vec<Matrix>, x_star: Vector, epsilon_stab: f64) -> Result<Self, LpvError> {
        let n = x_star.len();
        if a.len() != gmm.k() {
            return Err(LpvError::InvalidModel("one matrix per mixture component required".into()));
        }
        if gmm.dim() != n {
            return Err(LpvError::DimensionMismatch { expected: n, got: gmm.dim() });
        }
        if !(epsilon_stab > 0.0) {
            return Err(LpvError::InvalidModel("stability margin must be positive".into()));
        }
        if x_star.iter().any(|v| !v.is_finite()) {
            return Err(LpvError::InvalidModel("attractor is not finite".into()));
        }
        for ak in &a {
            if ak.nrows() != n || ak.ncols() != n {
                return Err(LpvError::DimensionMismatch { expected: n, got: ak.nrows() });
            }
            let top = max_sym_eig(&(ak + ak.transpose()));
            if top > -epsilon_stab + 1e-9 {
                return Err(LpvError::InvalidModel(format!(
                    "component violates the stability margin: max eig {top}"
                )));
            }
        }
        let b = a.iter().map(|ak| -(ak * &x_star)).collect();
        Ok(Self {
            gmm,
            a,
            b,
            x_star,
            epsilon_stab,
            train_rmse: f64::NAN,
        })
    }

    pub fn k(&self) -> usize {
        self.a.len()
    }

    pub fn dim(&self) -> usize {
        self.x_star.len()
    }

    pub fn x_star(&self) -> &Vector {
        &self.x_star
    }

    pub fn a(&self) -> &[Matrix] {
        &self.a
    }

    pub fn b(&self) -> &[Vector] {
        &self.b
    }

    pub fn gmm(&self) -> &Gmm {
        &self.gmm
    }

    pub fn epsilon_stab(&self) -> f64 {
        self.epsilon_stab
    }

    pub fn train_rmse(&self) -> f64 {
        self.train_rmse
    }

    pub fn mixing(&self, x: &Vector) -> Vec<f64> {
        self.gmm.responsibilities(x)
    }

    pub fn velocity(&self, x: &Vector) -> Vector {
        let g = self.mixing(x);
        let mut v = Vector::zeros(x.len());
        for k in 0..self.k() {
            v += (&self.a[k] * x + &self.b[k]) * g[k];
        }
        v
    }

    /// Analytic Jacobian Σ [γ_k A_k + (A_k x + b_k) ∇γ_kᵀ].
    pub fn jacobian(&self, x: &Vector) -> Matrix {
        let (g, dg) = self.gmm.responsibilities_with_grad(x);
        let n = x.len();
        let mut j = Matrix::zeros(n, n);
        for k in 0..self.k() {
            j += &self.a[k] * g[k];
            j += (&self.a[k] * x + &self.b[k]) * dg[k].transpose();
        }
        j
    }

    /// V(x) = ‖x − x*‖² (P = I).
    pub fn lyapunov_value(&self, x: &Vector) -> f64 {
        (x - &self.x_star).norm_squared()
    }

    /// ∇V(x) · f(x).
    pub fn lyapunov_rate(&self, x: &Vector) -> f64 {
        2.0 * (x - &self.x_star).dot(&self.velocity(x))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

impl VelocityField for LpvDsModel {
    fn velocity(&self, x: &Vector) -> Vector {
        LpvDsModel::velocity(self, x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub epsilon_stab: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Frobenius penalty on each A_k; keeps directions the data does not
    /// excite from becoming arbitrarily stiff.
    pub ridge: f64,
    pub k_max: usize,
    /// Fixed component count; BIC selection when unset.
    pub k: Option<usize>,
    pub seed: u64,
    pub em: EmConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epsilon_stab: 1e-2,
            iterations: 3000,
            learning_rate: 1e-2,
            ridge: 1e-6,
            k_max: 6,
            k: None,
            seed: 0,
            em: EmConfig::default(),
        }
    }
}

/// Closest matrix with A + Aᵀ ⪯ −2ε' I, where ε' ≥ ε/2, keeping the skew part.
fn project_stable(a: &Matrix, eps: f64) -> (Matrix, Matrix) {
    let n = a.nrows();
    let skew = (a - a.transpose()) * 0.5;
    let sym = (a + a.transpose()) * 0.5;
    let e = sym.symmetric_eigen();
    // A = W − Wᵀ − L Lᵀ − εI: the symmetric part is −LLᵀ − εI, so LLᵀ = −S − εI ⪰ 0
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        let lam = e.eigenvalues[i].min(-eps);
        d[(i, i)] = (-lam - eps).max(0.0).sqrt();
    }
    let l = &e.eigenvectors * d;
    let w = skew * 0.5;
    (w, l)
}

fn assemble(w: &Matrix, l: &Matrix, eps: f64) -> Matrix {
    let n = w.nrows();
    w - w.transpose() - l * l.transpose() - Matrix::identity(n, n) * eps
}

struct Problem {
    d: Vec<Vector>,
    xdot: Vec<Vector>,
    gamma: Vec<Vec<f64>>,
    k: usize,
    n: usize,
    ridge: f64,
}

impl Problem {
    fn unpack(&self, p: &[f64], eps: f64) -> Vec<(Matrix, Matrix, Matrix)> {
        let nn = self.n * self.n;
        (0..self.k)
            .map(|k| {
                let w = Matrix::from_column_slice(self.n, self.n, &p[2 * k * nn..(2 * k + 1) * nn]);
                let l = Matrix::from_column_slice(self.n, self.n, &p[(2 * k + 1) * nn..(2 * k + 2) * nn]);
                let a = assemble(&w, &l, eps);
                (w, l, a)
            })
            .collect()
    }

    /// Mean squared velocity error plus the ridge term, and its gradient in
    /// the flat parameters.
    fn loss_grad(&self, p: &[f64], eps: f64) -> (f64, Vec<f64>) {
        let parts = self.unpack(p, eps);
        let n = self.n;
        let big_n = self.d.len() as f64;
        let mut g_a = vec![Matrix::zeros(n, n); self.k];
        let mut loss = 0.0;
        for i in 0..self.d.len() {
            let mut r = -self.xdot[i].clone();
            for k in 0..self.k {
                r += (&parts[k].2 * &self.d[i]) * self.gamma[i][k];
            }
            loss += r.norm_squared();
            let rd = &r * self.d[i].transpose();
            for k in 0..self.k {
                g_a[k] += &rd * (2.0 * self.gamma[i][k] / big_n);
            }
        }
        let mut penalty = 0.0;
        for k in 0..self.k {
            penalty += self.ridge * parts[k].2.norm_squared();
            g_a[k] += &parts[k].2 * (2.0 * self.ridge);
        }
        let nn = n * n;
        let mut grad = vec![0.0; p.len()];
        for k in 0..self.k {
            let gw = &g_a[k] - g_a[k].transpose();
            let gl = -(&g_a[k] + g_a[k].transpose()) * &parts[k].1;
            grad[2 * k * nn..(2 * k + 1) * nn].copy_from_slice(gw.as_slice());
            grad[(2 * k + 1) * nn..(2 * k + 2) * nn].copy_from_slice(gl.as_slice());
        }
        (loss / big_n + penalty, grad)
    }

    /// Unconstrained least squares for all A_k jointly (features γ_k d).
    fn least_squares(&self) -> Vec<Matrix> {
        let n = self.n;
        let f = self.k * n;
        let mut phi = Matrix::zeros(self.d.len(), f);
        for i in 0..self.d.len() {
            for k in 0..self.k {
                for c in 0..n {
                    phi[(i, k * n + c)] = self.gamma[i][k] * self.d[i][c];
                }
            }
        }
        let mut out = vec![Matrix::zeros(n, n); self.k];
        let gram = phi.transpose() * &phi;
        let ridge = (self.ridge * self.d.len() as f64).max(1e-9 * gram.trace().max(1e-12) / f as f64);
        let gram = gram + Matrix::identity(f, f) * ridge;
        let Some(chol) = gram.cholesky() else { return out };
        for r in 0..n {
            let y = Vector::from_iterator(self.d.len(), self.xdot.iter().map(|v| v[r]));
            let theta = chol.solve(&(phi.transpose() * y));
            for k in 0..self.k {
                for c in 0..n {
                    out[k][(r, c)] = theta[k * n + c];
                }
            }
        }
        out
    }
}

/// Fits an LPV-DS to (x, ẋ) pairs with a fixed attractor.
pub fn fit(pairs: &[(Vector, Vector)], x_star: &Vector, cfg: &FitConfig) -> Result<LpvDsModel, LpvError> {
    let n = x_star.len();
    if pairs.len() < n + 1 {
        return Err(LpvError::InsufficientData { need: n + 1, got: pairs.len() });
    }
    for (x, v) in pairs {
        if x.len() != n || v.len() != n {
            return Err(LpvError::DimensionMismatch { expected: n, got: x.len() });
        }
    }
    if x_star.iter().any(|v| !v.is_finite()) {
        return Err(LpvError::InvalidModel("attractor is not finite".into()));
    }
    let xs: Vec<Vector> = pairs.iter().map(|(x, _)| x.clone()).collect();
    if xs.iter().all(|x| x == &xs[0]) {
        return Err(LpvError::DegenerateData);
    }
    let gmm = match cfg.k {
        Some(k) => fit_em(&xs, k.max(1), &cfg.em, cfg.seed)?,
        None => fit_bic(&xs, cfg.k_max, &cfg.em, cfg.seed)?,
    };
    let k = gmm.k();
    let eps = cfg.epsilon_stab;
    let prob = Problem {
        d: xs.iter().map(|x| x - x_star).collect(),
        xdot: pairs.iter().map(|(_, v)| v.clone()).collect(),
        gamma: xs.iter().map(|x| gmm.responsibilities(x)).collect(),
        k,
        n,
        ridge: cfg.ridge.max(0.0),
    };

    // start from the unconstrained solution projected onto the feasible set
    let nn = n * n;
    let mut params = vec![0.0; 2 * k * nn];
    for (kk, a) in prob.least_squares().iter().enumerate() {
        let (w, l) = project_stable(a, eps);
        params[2 * kk * nn..(2 * kk + 1) * nn].copy_from_slice(w.as_slice());
        params[(2 * kk + 1) * nn..(2 * kk + 2) * nn].copy_from_slice(l.as_slice());
    }
    let mut opt = Adam::new(params.len(), cfg.learning_rate);
    let (mut best_loss, mut grad) = prob.loss_grad(&params, eps);
    let mut best = params.clone();
    for _ in 0..cfg.iterations {
        opt.step(&mut params, &grad);
        let (loss, g) = prob.loss_grad(&params, eps);
        if loss < best_loss {
            best_loss = loss;
            best.copy_from_slice(&params);
        }
        grad = g;
    }
    let a: Vec<Matrix> = prob.unpack(&best, eps).into_iter().map(|(_, _, a)| a).collect();
    let mut model = LpvDsModel::new(gmm, a, x_star.clone(), eps)?;
    model.train_rmse = rmse(&model, pairs);
    Ok(model)
}

/// Root-mean-square velocity error (per-sample Euclidean norm).
pub fn rmse(field: &dyn VelocityField, pairs: &[(Vector, Vector)]) -> f64 {
    let s: f64 = pairs.iter().map(|(x, v)| (field.velocity(x) - v).norm_squared()).sum();
    (s / pairs.len() as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub dt: f64,
    pub max_steps: usize,
    pub stop_radius: f64,
    pub speed_cap: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            max_steps: 10_000,
            stop_radius: 1e-3,
            speed_cap: 50.0,
        }
    }
}

/// Clips the velocity norm to `cap`.
pub fn cap_speed(v: Vector, cap: f64) -> Vector {
    let s = v.norm();
    if s > cap {
        v * (cap / s)
    } else {
        v
    }
}

/// Forward-Euler integration until within `stop_radius` of `target` or the
/// step budget runs out. The first point is `x0`.
pub fn rollout_field(
    field: &dyn VelocityField,
    target: &Vector,
    x0: &Vector,
    cfg: &RolloutConfig,
) -> Result<Vec<Vector>, LpvError> {
    if !(cfg.dt > 0.0) {
        return Err(LpvError::BadStep(cfg.dt));
    }
    let mut x = x0.clone();
    let mut out = vec![x.clone()];
    for _ in 0..cfg.max_steps {
        if (&x - target).norm() <= cfg.stop_radius {
            break;
        }
        let v = cap_speed(field.velocity(&x), cfg.speed_cap);
        x += v * cfg.dt;
        out.push(x.clone());
    }
    Ok(out)
}

pub fn rollout(model: &LpvDsModel, x0: &Vector, cfg: &RolloutConfig) -> Result<Vec<Vector>, LpvError> {
    rollout_field(model, model.x_star(), x0, cfg)
}
