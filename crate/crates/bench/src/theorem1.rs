//! Property suite for the modulated field: decrease of ‖x − x*‖² inside the
//! cuts, no outward flow on an active cut plane, and the raw field beyond.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tli_core::boundary::{BoundaryEstimate, CutConfig};
use tli_core::executor::{learn_library, Policy, PolicyKind};
use tli_core::lpvds::FitConfig;
use tli_core::modulation::{tangent_basis, ModulationContext};
use tli_core::sim::{single_mode_scene, Polygon};
use tli_core::types::{ModeId, Vector};

use crate::single_mode::{setup_mode, SingleModeConfig};
use crate::BenchError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem1Config {
    pub models: usize,
    pub states: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for Theorem1Config {
    fn default() -> Self {
        Self { models: 10, states: 100_000, seed: 0, tolerance: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheck {
    pub model: usize,
    pub cuts: usize,
    /// States with Γ ≤ 1 checked for decrease (off the attractor).
    pub inside: usize,
    /// Largest d/dt ‖x − x*‖² / ‖x − x*‖² over those states.
    pub max_rate: f64,
    pub plane_states: usize,
    /// Largest w · ẋ on the active cut plane.
    pub max_outward: f64,
    pub outside: usize,
    /// States with Γ > 1 whose modulated velocity differs from the raw one.
    pub identity_mismatches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub config: Theorem1Config,
    pub models: Vec<ModelCheck>,
}

impl Theorem1Report {
    pub fn passed(&self) -> bool {
        let tol = self.config.tolerance;
        !self.models.is_empty()
            && self.models.iter().all(|m| {
                m.cuts > 0
                    && m.inside >= self.config.states
                    && m.plane_states > 0
                    && m.max_rate < tol
                    && m.max_outward <= tol
                    && m.identity_mismatches == 0
            })
    }
}

/// Cuts from synthetic invariance failures across each edge of the mode,
/// entered from the demonstration starts.
pub fn edge_cuts(policy: &Policy, poly: &Polygon, entries: &[Vector]) -> BoundaryEstimate {
    let mut est = BoundaryEstimate::new(ModeId::new(0, "m"), policy.x_star().clone(), CutConfig::default());
    for e in entries {
        est.observe_entry(e);
    }
    let c = poly.centroid();
    for (i, (a, b)) in poly.edges().enumerate() {
        let mid = Vector::from_vec(vec![(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]);
        let inward = (&c - &mid).normalize();
        let last = &mid + &inward * 1e-3;
        let fail = &mid - &inward * 1e-3;
        let entry = &entries[i % entries.len()];
        if let Ok(next) = est.record_failure(entry, &last, &fail, false) {
            est = next;
        }
    }
    est
}

fn check_model(index: usize, cfg: &Theorem1Config) -> Result<ModelCheck, BenchError> {
    let sm = SingleModeConfig { seed: cfg.seed, ..Default::default() };
    let setup = setup_mode(index, &sm)?;
    let scene = single_mode_scene(setup.poly.clone(), None);
    let kind = PolicyKind::Ds(FitConfig { seed: cfg.seed.wrapping_add(index as u64), ..Default::default() });
    let lib = learn_library(&scene, &setup.demos, &kind).map_err(|e| BenchError::Setup(e.to_string()))?;
    let policy = lib.policies.into_values().next().ok_or_else(|| BenchError::Setup("no policy fitted".into()))?;
    let entries: Vec<Vector> = setup.demos.iter().map(|d| d.samples[0].x.clone()).collect();
    let est = edge_cuts(&policy, &setup.poly, &entries);
    let ctx = ModulationContext::new(&est);
    let field = policy.field();
    let x_star = policy.x_star();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (index as u64).wrapping_mul(0x9e37_79b9));
    let mut out = ModelCheck {
        model: index,
        cuts: est.cuts().len(),
        inside: 0,
        max_rate: f64::NEG_INFINITY,
        plane_states: 0,
        max_outward: f64::NEG_INFINITY,
        outside: 0,
        identity_mismatches: 0,
    };
    if est.cuts().is_empty() {
        return Ok(out);
    }
    // the cut region is unbounded; states come from a box around the mode
    let (lo, hi) = setup.poly.bbox();
    let pad = 0.25;
    let sample_box = |rng: &mut ChaCha8Rng| {
        Vector::from_vec(vec![
            rng.random_range(lo[0] - pad..hi[0] + pad),
            rng.random_range(lo[1] - pad..hi[1] + pad),
        ])
    };
    // rejection sampling until `states` points with Γ ≤ 1 were checked
    let mut tries = 0usize;
    while out.inside < cfg.states && tries < cfg.states.saturating_mul(200) {
        tries += 1;
        let x = sample_box(&mut rng);
        let raw = field.velocity(&x);
        let v = ctx.modulate(&x, &raw);
        if est.gamma(&x) > 1.0 {
            out.outside += 1;
            if v != raw {
                out.identity_mismatches += 1;
            }
            continue;
        }
        let d = &x - x_star;
        let r2 = d.norm_squared();
        if r2 < 1e-12 {
            continue;
        }
        out.inside += 1;
        out.max_rate = out.max_rate.max(2.0 * d.dot(&v) / r2);
    }
    // states on each cut plane where that cut is the active one; rounding
    // puts some just past the plane, where the raw field applies
    let per_cut = cfg.states / est.cuts().len();
    for (f, cut) in est.cuts().iter().enumerate() {
        let t = &tangent_basis(&cut.w)[0];
        for _ in 0..per_cut {
            let x = &cut.p + t * rng.random_range(-1.0..1.0);
            let g = est.gamma(&x);
            if est.active_cut(&x) != Some(f) || !(1.0 - 1e-12..=1.0).contains(&g) {
                continue;
            }
            let v = ctx.modulate(&x, &field.velocity(&x));
            out.plane_states += 1;
            out.max_outward = out.max_outward.max(cut.w.dot(&v));
        }
    }
    Ok(out)
}

pub fn run_theorem1(cfg: &Theorem1Config) -> Result<Theorem1Report, BenchError> {
    if cfg.models == 0 || cfg.states == 0 {
        return Err(BenchError::Config("models and states must be positive".into()));
    }
    let models = (0..cfg.models)
        .into_par_iter()
        .map(|i| check_model(i, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Theorem1Report { config: cfg.clone(), models })
}
