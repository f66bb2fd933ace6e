//! Online mode-boundary estimation from invariance failures: each failure adds
//! a half-space cut, and Γ measures how far a state sits relative to the cuts.

use std::f64::consts::{PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{serde_vector, ModeId, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundaryError {
    #[error("no unit normal satisfies the cut constraints")]
    InfeasibleCut,
    #[error("cut plane passes through the reference point")]
    DegenerateCut,
    #[error("failure state is already outside the estimated boundary (gamma = {0})")]
    RedundantFailure(f64),
    #[error("failure state coincides with the last in-mode state")]
    DegenerateFailure,
    #[error("last in-mode state is outside the current estimate (gamma = {0})")]
    LastOutside(f64),
    #[error("entry state is outside the current estimate (gamma = {0})")]
    EntryOutside(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    /// Unit normal pointing out of the mode.
    #[serde(with = "serde_vector")]
    pub w: Vector,
    /// Point on the plane (a last in-mode state).
    #[serde(with = "serde_vector")]
    pub p: Vector,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutConfig {
    /// Required separation of the failure state, relative to its distance.
    pub eps_sep: f64,
    /// Required clearance of the plane from the attractor, relative to the
    /// distance between the attractor and the last in-mode state.
    pub eps_clear: f64,
    pub seed: u64,
}

impl Default for CutConfig {
    fn default() -> Self {
        Self {
            eps_sep: 1e-2,
            eps_clear: 1e-2,
            seed: 0,
        }
    }
}

/// Inputs of one cut problem.
#[derive(Clone, Debug)]
pub struct CutProblem<'a> {
    pub x_star: &'a Vector,
    pub x_entry: &'a Vector,
    pub x_last: &'a Vector,
    pub x_fail: &'a Vector,
    /// Further states that must stay inside (earlier last states and entries).
    pub protected: &'a [Vector],
}

impl CutProblem<'_> {
    /// Directions d with the requirement w·d ≤ 0.
    fn inside_dirs(&self) -> Vec<Vector> {
        let p = self.x_last;
        let mut out = vec![self.x_entry - p];
        out.extend(self.protected.iter().map(|q| q - p));
        out
    }

    pub fn objective(&self, w: &Vector) -> f64 {
        w.dot(&(self.x_star - self.x_last)).powi(2)
    }

    pub fn separation(&self, w: &Vector) -> f64 {
        w.dot(&(self.x_fail - self.x_last))
    }

    /// Largest constraint violation (≤ 0 when feasible), unit norm excluded.
    pub fn violation(&self, w: &Vector, cfg: &CutConfig) -> f64 {
        let p = self.x_last;
        let u_fail = self.x_fail - p;
        let u_star = self.x_star - p;
        let mut worst = cfg.eps_sep * u_fail.norm() - w.dot(&u_fail);
        worst = worst.max(w.dot(&u_star) + cfg.eps_clear * u_star.norm());
        for d in self.inside_dirs() {
            worst = worst.max(w.dot(&d));
        }
        worst
    }
}

/// Fits the cut through `x_last`: minimize (w·(x* − x_last))² over unit w
/// keeping x*, the entry state and all protected states inside, the failure
/// state outside by a margin, and the attractor off the plane. Ties go to the
/// larger separation, then the lexicographically largest w.
pub fn fit_cut(problem: &CutProblem, cfg: &CutConfig) -> Result<Cut, BoundaryError> {
    let n = problem.x_last.len();
    for v in [problem.x_star, problem.x_entry, problem.x_fail] {
        if v.len() != n {
            return Err(BoundaryError::DimensionMismatch { expected: n, got: v.len() });
        }
    }
    if (problem.x_fail - problem.x_last).norm() == 0.0 {
        return Err(BoundaryError::DegenerateFailure);
    }
    let w = if n == 2 { solve_2d(problem, cfg) } else { solve_sphere(problem, cfg) }
        .ok_or(BoundaryError::InfeasibleCut)?;
    Ok(Cut {
        w,
        p: problem.x_last.clone(),
    })
}

/// Arc of the unit circle: start angle and counterclockwise width.
#[derive(Clone, Copy, Debug)]
struct Arc {
    start: f64,
    width: f64,
}

fn wrap(a: f64) -> f64 {
    a.rem_euclid(TAU)
}

impl Arc {
    /// {θ : w(θ)·d ≥ c‖d‖}, c ∈ [−1, 1].
    fn at_least(d: &Vector, c: f64) -> Option<Arc> {
        let half = c.clamp(-1.0, 1.0).acos();
        if half == 0.0 && c > 1.0 {
            return None;
        }
        let center = d[1].atan2(d[0]);
        Some(Arc {
            start: wrap(center - half),
            width: 2.0 * half,
        })
    }

    fn intersect(&self, other: &Arc) -> Option<Arc> {
        let d = wrap(other.start - self.start);
        let mut best: Option<Arc> = None;
        let mut take = |a: Arc| {
            if a.width >= 0.0 && best.is_none_or(|b| a.width > b.width) {
                best = Some(a);
            }
        };
        if d <= self.width {
            take(Arc {
                start: other.start,
                width: (self.width - d).min(other.width),
            });
        }
        let wrapped = d + other.width - TAU;
        if wrapped >= 0.0 {
            take(Arc {
                start: self.start,
                width: wrapped.min(self.width),
            });
        }
        best
    }

    fn end(&self) -> f64 {
        wrap(self.start + self.width)
    }
}

fn unit(theta: f64) -> Vector {
    Vector::from_vec(vec![theta.cos(), theta.sin()])
}

/// Better candidate under the objective and tie-break order.
fn prefer(problem: &CutProblem, a: &Vector, b: &Vector) -> bool {
    let (oa, ob) = (problem.objective(a), problem.objective(b));
    if (oa - ob).abs() > 1e-14 {
        return oa < ob;
    }
    let (sa, sb) = (problem.separation(a), problem.separation(b));
    if (sa - sb).abs() > 1e-14 {
        return sa > sb;
    }
    a.iter().zip(b.iter()).find(|(x, y)| x != y).is_some_and(|(x, y)| x > y)
}

fn solve_2d(problem: &CutProblem, cfg: &CutConfig) -> Option<Vector> {
    let p = problem.x_last;
    let u_fail = problem.x_fail - p;
    let u_star = problem.x_star - p;
    let mut arc = Arc::at_least(&u_fail, cfg.eps_sep)?;
    if u_star.norm() > 0.0 {
        arc = arc.intersect(&Arc::at_least(&(-&u_star), cfg.eps_clear)?)?;
    }
    for d in problem.inside_dirs() {
        if d.norm() == 0.0 {
            continue;
        }
        arc = arc.intersect(&Arc::at_least(&(-d), 0.0)?)?;
    }
    // w·(x* − p) ≤ 0 on the whole arc, so |w·u*| is smallest at an end,
    // unless the arc touches a direction orthogonal to u*
    let mut candidates = vec![arc.start, arc.end()];
    if u_star.norm() > 0.0 {
        let base = u_star[1].atan2(u_star[0]);
        for off in [PI / 2.0, -PI / 2.0] {
            let t = wrap(base + off);
            if wrap(t - arc.start) <= arc.width {
                candidates.push(t);
            }
        }
    }
    let mut best: Option<Vector> = None;
    for t in candidates {
        let w = unit(t);
        if problem.violation(&w, cfg) > 1e-10 {
            continue;
        }
        if best.as_ref().is_none_or(|b| prefer(problem, &w, b)) {
            best = Some(w);
        }
    }
    best
}

/// Penalized projected gradient on the sphere with seeded restarts.
fn solve_sphere(problem: &CutProblem, cfg: &CutConfig) -> Option<Vector> {
    let n = problem.x_last.len();
    let p = problem.x_last;
    let u_fail = problem.x_fail - p;
    let u_star = problem.x_star - p;
    let dirs = problem.inside_dirs();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<Vector> = None;
    for start in 0..8 {
        let mut w = if start == 0 {
            u_fail.normalize()
        } else {
            Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)).normalize()
        };
        let mut mu = 10.0;
        // constraints are tightened slightly so the penalized optimum is feasible
        let margin = 1e-5;
        for _ in 0..6 {
            for _ in 0..2000 {
                let mut g = &u_star * (2.0 * w.dot(&u_star));
                let sep = cfg.eps_sep * u_fail.norm() - w.dot(&u_fail) + margin;
                if sep > 0.0 {
                    g -= &u_fail * (2.0 * mu * sep);
                }
                let clear = w.dot(&u_star) + cfg.eps_clear * u_star.norm() + margin;
                if clear > 0.0 {
                    g += &u_star * (2.0 * mu * clear);
                }
                for d in &dirs {
                    let v = w.dot(d) + margin;
                    if v > 0.0 {
                        g += d * (2.0 * mu * v);
                    }
                }
                // tangent projection then retraction
                let tangent = &g - &w * w.dot(&g);
                let step = 0.5 / (1.0 + mu);
                w = (&w - tangent * step).normalize();
            }
            mu *= 10.0;
        }
        if problem.violation(&w, cfg) > 1e-9 {
            continue;
        }
        if best.as_ref().is_none_or(|b| prefer(problem, &w, b)) {
            best = Some(w);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    #[serde(with = "serde_vector")]
    pub entry: Vector,
    #[serde(with = "serde_vector")]
    pub last: Vector,
    #[serde(with = "serde_vector")]
    pub fail: Vector,
    /// The exit was caused by an external displacement, not by the policy.
    pub perturbed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEstimate {
    pub mode: ModeId,
    cuts: Vec<Cut>,
    #[serde(with = "serde_vector")]
    x_r: Vector,
    history: Vec<FailureRecord>,
    /// Entry states observed without a failure; kept inside future cuts.
    #[serde(default, with = "crate::types::serde_vectors")]
    entries: Vec<Vector>,
    pub config: CutConfig,
}

impl BoundaryEstimate {
    pub fn new(mode: ModeId, x_r: Vector, config: CutConfig) -> Self {
        Self {
            mode,
            cuts: Vec::new(),
            x_r,
            history: Vec::new(),
            entries: Vec::new(),
            config,
        }
    }

    pub fn cuts(&self) -> &[Cut] {
        &self.cuts
    }

    pub fn x_r(&self) -> &Vector {
        &self.x_r
    }

    pub fn history(&self) -> &[FailureRecord] {
        &self.history
    }

    pub fn entries(&self) -> &[Vector] {
        &self.entries
    }

    /// Keeps only the first `count` cuts.
    pub fn truncated(&self, count: usize) -> Self {
        let mut out = self.clone();
        out.cuts.truncate(count);
        out.history.truncate(count);
        out
    }

    /// Adds a cut, rejecting planes through the reference point.
    pub fn push_cut(&mut self, cut: Cut) -> Result<(), BoundaryError> {
        if cut.w.dot(&(&cut.p - &self.x_r)) < 1e-9 {
            return Err(BoundaryError::DegenerateCut);
        }
        self.cuts.push(cut);
        Ok(())
    }

    /// Remembers a mode entry that later cuts must keep inside.
    pub fn observe_entry(&mut self, x: &Vector) {
        if !self.entries.iter().any(|e| e == x) {
            self.entries.push(x.clone());
        }
    }

    fn gamma_of(&self, f: usize, x: &Vector) -> f64 {
        let c = &self.cuts[f];
        let num = c.w.dot(&(x - &self.x_r));
        let den = c.w.dot(&(&c.p - &self.x_r));
        (num / den).max(0.0)
    }

    /// Γ(x) = max over cuts of the clamped projection ratio; 0 without cuts.
    pub fn gamma(&self, x: &Vector) -> f64 {
        (0..self.cuts.len()).map(|f| self.gamma_of(f, x)).fold(0.0, f64::max)
    }

    /// Index of the cut attaining Γ(x); lowest index on ties.
    pub fn active_cut(&self, x: &Vector) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for f in 0..self.cuts.len() {
            let g = self.gamma_of(f, x);
            if best.is_none_or(|(_, b)| g > b) {
                best = Some((f, g));
            }
        }
        best.map(|(f, _)| f)
    }

    /// Adds the cut separating `x_fail` from the attractor, the entry, and all
    /// previously recorded states.
    pub fn record_failure(
        &self,
        x_entry: &Vector,
        x_last: &Vector,
        x_fail: &Vector,
        perturbed: bool,
    ) -> Result<Self, BoundaryError> {
        if x_fail == x_last {
            return Err(BoundaryError::DegenerateFailure);
        }
        if !self.cuts.is_empty() {
            let gf = self.gamma(x_fail);
            if gf >= 1.0 {
                return Err(BoundaryError::RedundantFailure(gf));
            }
            let gl = self.gamma(x_last);
            if gl >= 1.0 {
                return Err(BoundaryError::LastOutside(gl));
            }
            let ge = self.gamma(x_entry);
            if ge > 1.0 {
                return Err(BoundaryError::EntryOutside(ge));
            }
        }
        let mut protected: Vec<Vector> = Vec::new();
        for h in &self.history {
            protected.push(h.last.clone());
            protected.push(h.entry.clone());
        }
        protected.extend(self.entries.iter().cloned());
        let problem = CutProblem {
            x_star: &self.x_r,
            x_entry,
            x_last,
            x_fail,
            protected: &protected,
        };
        let cut = fit_cut(&problem, &self.config)?;
        let mut out = self.clone();
        out.push_cut(cut)?;
        out.history.push(FailureRecord {
            entry: x_entry.clone(),
            last: x_last.clone(),
            fail: x_fail.clone(),
            perturbed,
        });
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(a: f64, b: f64) -> Vector {
        Vector::from_vec(vec![a, b])
    }

    fn single_cut() -> BoundaryEstimate {
        let mut e = BoundaryEstimate::new(ModeId::new(0, "a"), v(0.0, 0.0), CutConfig::default());
        e.push_cut(Cut { w: v(0.0, 1.0), p: v(0.0, 1.0) }).unwrap();
        e
    }

    #[test]
    fn gamma_examples() {
        let e = single_cut();
        assert_eq!(e.gamma(&v(0.0, 0.0)), 0.0);
        assert_eq!(e.gamma(&v(0.7, 1.0)), 1.0);
        assert_eq!(e.gamma(&v(0.0, 2.0)), 2.0);
        assert_eq!(e.gamma(&v(0.0, 0.5)), 0.5);
        assert_eq!(e.gamma(&v(0.0, -3.0)), 0.0);
        assert_eq!(e.active_cut(&v(0.0, 0.5)), Some(0));
    }

    #[test]
    fn plane_through_reference_is_rejected() {
        let mut e = BoundaryEstimate::new(ModeId::new(0, "a"), v(0.0, 0.0), CutConfig::default());
        let bad = Cut { w: v(1.0, 0.0), p: v(0.0, 1.0) };
        assert_eq!(e.push_cut(bad), Err(BoundaryError::DegenerateCut));
    }

    #[test]
    fn active_cut_prefers_lowest_index_on_ties() {
        let mut e = single_cut();
        e.push_cut(Cut { w: v(1.0, 0.0), p: v(1.0, 0.0) }).unwrap();
        assert_eq!(e.active_cut(&v(1.0, 1.0)), Some(0));
        assert_eq!(e.active_cut(&v(2.0, 1.0)), Some(1));
    }

    #[test]
    fn arc_intersection_wraps() {
        let a = Arc { start: 5.5, width: 1.5 };
        let b = Arc { start: 0.2, width: 1.0 };
        let c = a.intersect(&b).unwrap();
        assert!((c.start - 0.2).abs() < 1e-12);
        assert!((c.width - (5.5 + 1.5 - TAU - 0.2)).abs() < 1e-12);
        assert!(a.intersect(&Arc { start: 2.0, width: 1.0 }).is_none());
    }

    #[test]
    fn sphere_solver_handles_three_dimensions() {
        let x_star = Vector::from_vec(vec![0.0, 0.0, 0.0]);
        let entry = Vector::from_vec(vec![0.0, 0.0, -1.0]);
        let last = Vector::from_vec(vec![0.0, 0.0, 1.0]);
        let fail = Vector::from_vec(vec![0.0, 0.0, 2.0]);
        let problem = CutProblem { x_star: &x_star, x_entry: &entry, x_last: &last, x_fail: &fail, protected: &[] };
        let cfg = CutConfig::default();
        let cut = fit_cut(&problem, &cfg).unwrap();
        assert!(problem.violation(&cut.w, &cfg) <= 1e-9);
        // the optimum has w_z at the separation bound 0.01
        assert!((cut.w[2] - 0.01).abs() < 1e-3, "{:?}", cut.w);
    }
}
