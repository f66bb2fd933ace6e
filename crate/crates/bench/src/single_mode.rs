//! Single-mode reaching study: success rates per policy variant and noise
//! level, and success as a function of the number of cuts.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tli_core::boundary::{BoundaryEstimate, CutConfig};
use tli_core::executor::{learn_library, Policy};
use tli_core::lpvds::cap_speed;
use tli_core::modulation::ModulationContext;
use tli_core::sim::{generate_demos_from, random_convex_mode, sample_initial_states, single_mode_scene, DemoConfig, Polygon};
use tli_core::types::{Demonstration, ModeId, Vector};

use crate::tasks::Variant;
use crate::BenchError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleModeConfig {
    pub modes: usize,
    pub starts: usize,
    /// Percent of the workspace size.
    pub noise: Vec<f64>,
    pub variants: Vec<Variant>,
    pub demos_per_mode: usize,
    pub seed: u64,
    pub dt: f64,
    pub max_steps: usize,
    /// A rollout succeeds once this close to the attractor.
    pub goal_radius: f64,
    /// Upper bound on cutting passes over the starts.
    pub max_passes: usize,
    pub max_cuts: usize,
    /// Largest cut budget on the curve.
    pub curve_max_cuts: usize,
    pub bc_epochs: usize,
}

impl Default for SingleModeConfig {
    fn default() -> Self {
        Self {
            modes: 20,
            starts: 100,
            noise: vec![0.0, 5.0, 30.0],
            variants: Variant::ALL.to_vec(),
            demos_per_mode: 3,
            seed: 0,
            dt: 1e-2,
            max_steps: 4000,
            goal_radius: 1e-2,
            max_passes: 20,
            max_cuts: 40,
            curve_max_cuts: 8,
            bc_epochs: 5000,
        }
    }
}

impl SingleModeConfig {
    pub fn paper_scale() -> Self {
        Self { modes: 50, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.variants.is_empty() {
            return Err(BenchError::Config("at least one variant is required".into()));
        }
        if self.starts == 0 || self.demos_per_mode == 0 || self.max_steps == 0 || !(self.dt > 0.0) {
            return Err(BenchError::Config("counts and dt must be positive".into()));
        }
        if self.noise.iter().any(|n| !(*n >= 0.0)) {
            return Err(BenchError::Config("noise levels must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Rollout {
    Reached,
    Exited { last: Vector, fail: Vector },
    TimedOut,
}

/// Integrates `policy`, optionally modulated, from `x0` until it leaves the
/// polygon, reaches the goal ball, or the step budget runs out.
pub fn roll(policy: &Policy, est: Option<&BoundaryEstimate>, poly: &Polygon, x0: &Vector, cfg: &SingleModeConfig) -> Rollout {
    let mut x = x0.clone();
    let field = policy.field();
    let ctx = est.map(ModulationContext::new);
    let mut anchor = x.clone();
    for step in 0..cfg.max_steps {
        // a trajectory that has stopped away from the goal never arrives
        if step % 200 == 199 {
            if (&x - &anchor).norm() < 1e-7 {
                return Rollout::TimedOut;
            }
            anchor = x.clone();
        }
        if (&x - policy.x_star()).norm() <= cfg.goal_radius {
            return Rollout::Reached;
        }
        let raw = field.velocity(&x);
        let v = match &ctx {
            Some(c) => c.modulate(&x, &raw),
            None => raw,
        };
        let next = &x + cap_speed(v, 50.0) * cfg.dt;
        if !poly.contains(&next) {
            return Rollout::Exited { last: x, fail: next };
        }
        x = next;
    }
    Rollout::TimedOut
}

fn success_rate(policy: &Policy, est: Option<&BoundaryEstimate>, poly: &Polygon, starts: &[Vector], cfg: &SingleModeConfig) -> f64 {
    let ok = starts
        .iter()
        .filter(|x| roll(policy, est, poly, x, cfg) == Rollout::Reached)
        .count();
    100.0 * ok as f64 / starts.len() as f64
}

/// Adds cuts pass after pass until a pass meets no correctable failure.
pub fn cut_until_clean(
    policy: &Policy,
    poly: &Polygon,
    starts: &[Vector],
    cfg: &SingleModeConfig,
) -> BoundaryEstimate {
    let mut est = BoundaryEstimate::new(ModeId::new(0, "m"), policy.x_star().clone(), CutConfig::default());
    for x in starts {
        est.observe_entry(x);
    }
    for _ in 0..cfg.max_passes {
        let mut added = false;
        for x0 in starts {
            if est.cuts().len() >= cfg.max_cuts {
                return est;
            }
            if let Rollout::Exited { last, fail } = roll(policy, Some(&est), poly, x0, cfg) {
                if let Ok(next) = est.record_failure(x0, &last, &fail, false) {
                    est = next;
                    added = true;
                }
            }
        }
        if !added {
            break;
        }
    }
    est
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: usize,
    pub vertices: usize,
    pub variant: Variant,
    pub noise: f64,
    pub success: f64,
    pub cuts: usize,
    /// Success with at most c cuts, c = 0..=curve_max_cuts; empty for
    /// unmodulated variants.
    pub curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub variant: Variant,
    /// (noise, mean success %) in config order.
    pub success: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub cuts: usize,
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub variant: Variant,
    pub noise: f64,
    pub points: Vec<CurvePoint>,
    /// Per mode: fewest cuts reaching 100%, if any budget does.
    pub cuts_to_full: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleModeReport {
    pub config: SingleModeConfig,
    pub results: Vec<ModeResult>,
    pub table: Vec<TableRow>,
    pub curves: Vec<CurveSeries>,
}

/// Reference success rates (%) for noise 0/5/30 from the original study;
/// reported next to ours, never compared against.
pub fn reference_table() -> Vec<(Variant, [f64; 3])> {
    vec![
        (Variant::Bc, [88.9, 72.4, 58.6]),
        (Variant::BcMod, [91.9, 83.6, 76.0]),
        (Variant::Ds, [100.0, 97.0, 86.9]),
        (Variant::DsMod, [100.0, 100.0, 100.0]),
    ]
}

pub struct ModeSetup {
    pub poly: Polygon,
    pub demos: Vec<Demonstration>,
}

pub fn setup_mode(index: usize, cfg: &SingleModeConfig) -> Result<ModeSetup, BenchError> {
    let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(index as u64);
    let vertex_count = 3 + index % 6;
    let poly = random_convex_mode(seed, vertex_count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // goal somewhere in the inner half of the mode
    let c = poly.centroid();
    let anchor = &c + (poly.sample(&mut rng) - &c) * rng.random_range(0.0..0.5);
    let scene = single_mode_scene(poly.clone(), Some([anchor[0], anchor[1]]));
    // demos start near distinct vertices so the goal is approached from
    // several sides
    let verts = poly.vertices();
    let offset = rng.random_range(0..verts.len());
    let starts: Vec<Vector> = (0..cfg.demos_per_mode)
        .map(|k| {
            let v = verts[(offset + k * verts.len() / cfg.demos_per_mode.min(verts.len())) % verts.len()];
            &c + (Vector::from_vec(v.to_vec()) - &c) * rng.random_range(0.6..0.8)
        })
        .collect();
    let demos = generate_demos_from(&scene, &["m"], &starts, seed, &DemoConfig::default())
        .map_err(|e| BenchError::Setup(format!("mode {index}: {e}")))?;
    Ok(ModeSetup { poly, demos })
}

/// Start states inside the mode: demo states plus Gaussian noise, resampled
/// until inside.
pub fn starts_inside(poly: &Polygon, demos: &[Demonstration], noise: f64, count: usize, seed: u64) -> Vec<Vector> {
    let ws = tli_core::types::Workspace::unit(2);
    let mut out = Vec::with_capacity(count);
    let mut round = 0;
    while out.len() < count {
        let batch = sample_initial_states(demos, noise, count * 2, seed.wrapping_add(round), &ws);
        out.extend(batch.into_iter().filter(|x| poly.contains(x)).take(count - out.len()));
        round += 1;
    }
    out
}

fn run_mode(index: usize, cfg: &SingleModeConfig) -> Result<Vec<ModeResult>, BenchError> {
    let setup = setup_mode(index, cfg)?;
    let scene = single_mode_scene(setup.poly.clone(), None);
    let mut policies: BTreeMap<bool, Policy> = BTreeMap::new();
    for ds in [true, false] {
        if !cfg.variants.iter().any(|v| v.is_ds() == ds) {
            continue;
        }
        let variant = if ds { Variant::Ds } else { Variant::Bc };
        let mut kind = variant.policy_kind(cfg.seed.wrapping_add(index as u64));
        if let tli_core::executor::PolicyKind::Bc(b) = &mut kind {
            b.epochs = cfg.bc_epochs;
        }
        let lib = learn_library(&scene, &setup.demos, &kind).map_err(|e| BenchError::Setup(e.to_string()))?;
        let policy = lib.policies.into_values().next().ok_or_else(|| BenchError::Setup("no policy fitted".into()))?;
        policies.insert(ds, policy);
    }
    let mut out = Vec::new();
    for (k, &noise) in cfg.noise.iter().enumerate() {
        let starts = starts_inside(&setup.poly, &setup.demos, noise, cfg.starts, cfg.seed ^ ((index * 31 + k) as u64));
        for &variant in &cfg.variants {
            let policy = &policies[&variant.is_ds()];
            let (success, cuts, curve) = if variant.modulated() {
                let est = cut_until_clean(policy, &setup.poly, &starts, cfg);
                let full = success_rate(policy, Some(&est), &setup.poly, &starts, cfg);
                // budgets beyond the cuts actually added repeat the final rate
                let curve: Vec<f64> = (0..=cfg.curve_max_cuts)
                    .map(|c| {
                        if c >= est.cuts().len() {
                            full
                        } else {
                            success_rate(policy, Some(&est.truncated(c)), &setup.poly, &starts, cfg)
                        }
                    })
                    .collect();
                (full, est.cuts().len(), curve)
            } else {
                (success_rate(policy, None, &setup.poly, &starts, cfg), 0, vec![])
            };
            out.push(ModeResult {
                mode: index,
                vertices: setup.poly.vertices().len(),
                variant,
                noise,
                success,
                cuts,
                curve,
            });
        }
    }
    Ok(out)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn run_single_mode(cfg: &SingleModeConfig) -> Result<SingleModeReport, BenchError> {
    cfg.validate()?;
    let per_mode: Vec<Vec<ModeResult>> = (0..cfg.modes)
        .into_par_iter()
        .map(|i| run_mode(i, cfg))
        .collect::<Result<_, _>>()?;
    let results: Vec<ModeResult> = per_mode.into_iter().flatten().collect();
    let mut table = Vec::new();
    let mut curves = Vec::new();
    if cfg.modes > 0 {
        for &variant in &cfg.variants {
            let success = cfg
                .noise
                .iter()
                .map(|&n| {
                    let xs: Vec<f64> = results
                        .iter()
                        .filter(|r| r.variant == variant && r.noise == n)
                        .map(|r| r.success)
                        .collect();
                    (n, xs.iter().sum::<f64>() / xs.len() as f64)
                })
                .collect();
            table.push(TableRow { variant, success });
            if !variant.modulated() {
                continue;
            }
            for &n in &cfg.noise {
                let rows: Vec<&ModeResult> = results.iter().filter(|r| r.variant == variant && r.noise == n).collect();
                let points = (0..=cfg.curve_max_cuts)
                    .map(|c| {
                        let mut xs: Vec<f64> = rows.iter().map(|r| r.curve[c]).collect();
                        xs.sort_by(f64::total_cmp);
                        CurvePoint {
                            cuts: c,
                            mean: xs.iter().sum::<f64>() / xs.len() as f64,
                            median: quantile(&xs, 0.5),
                            q25: quantile(&xs, 0.25),
                            q75: quantile(&xs, 0.75),
                        }
                    })
                    .collect();
                let cuts_to_full = rows.iter().map(|r| r.curve.iter().position(|s| *s >= 100.0)).collect();
                curves.push(CurveSeries { variant, noise: n, points, cuts_to_full });
            }
        }
    }
    Ok(SingleModeReport { config: cfg.clone(), results, table, curves })
}

impl SingleModeReport {
    pub fn success(&self, variant: Variant, noise: f64) -> Option<f64> {
        self.table
            .iter()
            .find(|r| r.variant == variant)?
            .success
            .iter()
            .find(|(n, _)| *n == noise)
            .map(|(_, s)| *s)
    }

    pub fn curve(&self, variant: Variant, noise: f64) -> Option<&CurveSeries> {
        self.curves.iter().find(|c| c.variant == variant && c.noise == noise)
    }
}
