//! Multi-mode studies on the shipped scenes: looping with and without
//! modulation, policy reuse across cooking automata, color re-entry, and a
//! randomized perturbation campaign.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tli_core::executor::{
    run, BoundarySet, EntryAdversary, ExecutorConfig, NoPerturbations, PerturbationSource, PolicyLibrary, RunOutcome,
    StepView, Verdict,
};
use tli_core::ltl::TraceVerdict;
use tli_core::sim::Scene;
use tli_core::types::Vector;

use crate::tasks::{build_task, load_spec, Task, Variant};
use crate::BenchError;

/// Teleports at fixed steps into a uniformly drawn mode the spec allows next
/// (an automaton successor of the current mode, or the mode itself). Modes
/// whose commanded transition has no learned policy are skipped. Targets are
/// uniform in the mode's region, or drawn from a pool of states when given.
#[derive(Clone, Debug)]
pub struct AdmissibleTeleports {
    steps: Vec<usize>,
    rng: ChaCha8Rng,
    library: Arc<PolicyLibrary>,
    pool: Vec<Vector>,
    pub applied: usize,
}

impl AdmissibleTeleports {
    pub fn new(mut steps: Vec<usize>, seed: u64, library: Arc<PolicyLibrary>) -> Self {
        steps.sort_unstable();
        steps.dedup();
        Self { steps, rng: ChaCha8Rng::seed_from_u64(seed), library, pool: Vec::new(), applied: 0 }
    }

    pub fn with_pool(mut self, pool: Vec<Vector>) -> Self {
        self.pool = pool;
        self
    }

    /// Between 1 and `max_count` teleports at steps below `horizon`.
    pub fn random(seed: u64, max_count: usize, horizon: usize, library: Arc<PolicyLibrary>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = rng.random_range(1..=max_count.max(1));
        let steps = (0..count).map(|_| rng.random_range(0..horizon.max(1))).collect();
        Self::new(steps, rng.random(), library)
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }
}

impl PerturbationSource for AdmissibleTeleports {
    fn poll(&mut self, view: &StepView) -> Option<Vector> {
        self.steps.binary_search(&view.step).ok()?;
        let a = view.automaton;
        let mut modes: Vec<usize> = a.successors(view.mode.id).collect();
        modes.push(view.mode.id);
        modes.retain(|&m| {
            let next = a.strategy[m];
            a.is_absorbing_goal(m) || (next != m && self.library.has(&a.modes[m].name, &a.modes[next].name))
        });
        if modes.is_empty() {
            return None;
        }
        let m = modes[self.rng.random_range(0..modes.len())];
        let region = view.scene.policy_region(&a.modes[m].name).to_string();
        let inside: Vec<&Vector> = self.pool.iter().filter(|x| view.scene.region_at(x) == region).collect();
        let x = if inside.is_empty() {
            view.scene.sample_in(&region, &mut self.rng).ok()?
        } else {
            inside[self.rng.random_range(0..inside.len())].clone()
        };
        self.applied += 1;
        Some(x)
    }
}

/// Start state of the (b, c) policy that flows back into a: the deepest
/// such point of b on a grid.
pub fn find_pocket(scene: &Scene, library: &PolicyLibrary, dt: f64) -> Option<Vector> {
    let (_, policy) = library.select("b", Some("c"))?;
    let poly = &scene.region("b")?.vertices;
    let (lo, hi) = poly.bbox();
    let (nx, ny) = (20, 40);
    let mut best: Option<(f64, Vector)> = None;
    for i in 0..nx {
        for j in 0..ny {
            let x0 = Vector::from_vec(vec![
                lo[0] + (hi[0] - lo[0]) * (i as f64 + 0.5) / nx as f64,
                lo[1] + (hi[1] - lo[1]) * (j as f64 + 0.5) / ny as f64,
            ]);
            if !poly.contains(&x0) {
                continue;
            }
            let mut x = x0.clone();
            for _ in 0..5000 {
                x = scene.workspace.clip(&(&x + policy.field().velocity(&x) * dt));
                let r = scene.region_at(&x);
                if r != "b" {
                    let depth = poly.depth(&x0);
                    if r == "a" && best.as_ref().is_none_or(|(d, _)| depth > *d) {
                        best = Some((depth, x0.clone()));
                    }
                    break;
                }
            }
        }
    }
    best.map(|(_, x)| x)
}

/// Largest number of invariance failures starting inside one cut's region
/// after that cut was added.
pub fn failures_after_cut(outcome: &RunOutcome, boundaries: &BoundarySet) -> usize {
    let mut worst = 0;
    for (key, est) in &boundaries.estimates {
        let attempts: Vec<_> = outcome.cut_attempts.iter().filter(|a| &a.key == key).collect();
        let added: Vec<usize> = attempts.iter().filter(|a| a.error.is_none()).map(|a| a.step).collect();
        for (cut, step) in est.cuts().iter().zip(&added) {
            let den = cut.w.dot(&(&cut.p - est.x_r()));
            let inside = |x: &Vector| cut.w.dot(&(x - est.x_r())) / den <= 1.0;
            let n = attempts.iter().filter(|a| a.step > *step && inside(&a.entry)).count();
            worst = worst.max(n);
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub verdict: Verdict,
    pub trace_verdict: TraceVerdict,
    pub steps: usize,
    pub replans: usize,
    pub cuts: usize,
    pub modes: Vec<String>,
}

impl RunSummary {
    fn new(outcome: &RunOutcome, boundaries: &BoundarySet) -> Self {
        Self {
            verdict: outcome.verdict,
            trace_verdict: outcome.spec_verdict.clone(),
            steps: outcome.trace.len(),
            replans: outcome.replans,
            cuts: boundaries.cut_count(),
            modes: outcome.trace.mode_names(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopingReport {
    #[serde(with = "tli_core::types::serde_vector")]
    pub pocket: Vector,
    pub unperturbed: RunSummary,
    pub without_modulation: RunSummary,
    pub with_modulation: RunSummary,
    pub failures_after_cut: usize,
}

impl LoopingReport {
    pub fn passed(&self) -> bool {
        self.without_modulation.verdict == Verdict::Looping
            && self.with_modulation.verdict == Verdict::Success
            && self.with_modulation.trace_verdict.is_satisfied()
            && self.failures_after_cut <= 1
    }
}

/// Scooping with an adversary that sends the state into the pocket each
/// time b is entered, once with and once without modulation.
pub fn run_looping(seed: u64) -> Result<LoopingReport, BenchError> {
    let task = build_task("scooping", "scooping_full", Variant::DsMod, seed)?;
    let base = ExecutorConfig::default();
    let pocket = find_pocket(&task.scene, &task.library, base.dt)
        .ok_or_else(|| BenchError::Setup("no pocket in b for the (b, c) policy".into()))?;
    let go = |cfg: &ExecutorConfig, source: &mut dyn PerturbationSource| {
        run(&task.scene, &task.spec, task.library.clone(), BoundarySet::default(), task.start(), source, cfg)
            .map_err(|e| BenchError::Setup(e.to_string()))
    };
    let (out, b) = go(&base, &mut NoPerturbations)?;
    let unperturbed = RunSummary::new(&out, &b);
    let off = ExecutorConfig { modulation_enabled: false, ..base.clone() };
    let (out, b) = go(&off, &mut EntryAdversary::new("b", pocket.clone(), None))?;
    let without_modulation = RunSummary::new(&out, &b);
    let (out, b) = go(&base, &mut EntryAdversary::new("b", pocket.clone(), None))?;
    let with_modulation = RunSummary::new(&out, &b);
    let failures_after_cut = failures_after_cut(&out, &b);
    Ok(LoopingReport { pocket, unperturbed, without_modulation, with_modulation, failures_after_cut })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationCase {
    pub spec: String,
    pub unperturbed: RunSummary,
    pub perturbed: RunSummary,
    pub teleports: usize,
    /// The goal behavior of this automaton was observed in both runs.
    pub behaved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    /// Practice rounds over the demonstrated tasks until no invariance
    /// failure remained.
    pub practice_rounds: usize,
    pub practice_cuts: usize,
    pub cases: Vec<GeneralizationCase>,
    #[serde(skip)]
    pub boundaries: BoundarySet,
}

impl GeneralizationReport {
    pub fn passed(&self) -> bool {
        self.cases.len() == 4
            && self.cases.iter().all(|c| {
                c.behaved && c.unperturbed.trace_verdict.is_safe() && c.perturbed.trace_verdict.is_safe()
            })
    }
}

/// Region order with consecutive repeats removed.
fn regions(scene: &Scene, modes: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for m in modes {
        let r = scene.policy_region(m).to_string();
        if out.last() != Some(&r) {
            out.push(r);
        }
    }
    out
}

fn cooking_behaved(spec: &str, scene: &Scene, s: &RunSummary, exact: bool) -> bool {
    let r = regions(scene, &s.modes);
    let strs: Vec<&str> = r.iter().map(String::as_str).collect();
    let first = |a: &str, b: &str| match (strs.iter().position(|x| *x == a), strs.iter().position(|x| *x == b)) {
        (Some(i), Some(j)) => i < j,
        _ => false,
    };
    let success = s.verdict == Verdict::Success && s.trace_verdict.is_satisfied();
    match spec {
        "cooking_cb" if exact => success && strs == ["w", "y", "d", "w", "g", "d"],
        "cooking_bc" if exact => success && strs == ["w", "g", "d", "w", "y", "d"],
        "cooking_cb" => success && first("y", "g"),
        "cooking_bc" => success && first("g", "y"),
        "cooking_c" => success && !strs.contains(&"g") && strs.last() == Some(&"d"),
        "cooking_cc" => {
            let visits = strs.iter().filter(|x| **x == "d").count();
            s.verdict == Verdict::StepBudgetExhausted && !strs.contains(&"g") && visits >= 3
        }
        _ => false,
    }
}

pub const COOKING_SPECS: [&str; 4] = ["cooking_cb", "cooking_bc", "cooking_c", "cooking_cc"];

/// Demonstrated cooking tasks, replayed to learn cuts before reuse.
pub const PRACTICE_SPECS: [&str; 2] = ["cooking_cb", "cooking_bc"];
pub const PRACTICE_ROUNDS: usize = 10;

/// Runs the demonstrated tasks unperturbed with shared boundaries until a
/// round passes without an invariance failure.
pub fn practice(task: &Task, specs: &[&str], max_rounds: usize) -> Result<(BoundarySet, usize), BenchError> {
    let cfg = ExecutorConfig::default();
    let mut boundaries = BoundarySet::default();
    for round in 1..=max_rounds {
        let mut clean = true;
        for name in specs {
            let spec = load_spec(name)?;
            let (out, b) = run(&task.scene, &spec, task.library.clone(), boundaries, task.start(), &mut NoPerturbations, &cfg)
                .map_err(|e| BenchError::Setup(e.to_string()))?;
            boundaries = b;
            clean &= out.replans == 0 && out.verdict == Verdict::Success;
        }
        if clean {
            return Ok((boundaries, round));
        }
    }
    Ok((boundaries, max_rounds))
}

/// Drives the four cooking automata with one library and the cuts learned
/// while practicing the demonstrated tasks, unperturbed and under a fixed
/// set of admissible teleports to demonstrated states.
pub fn run_generalization(seed: u64) -> Result<GeneralizationReport, BenchError> {
    let task = build_task("cooking", "cooking_cb", Variant::DsMod, seed)?;
    let library = task.library.clone();
    let (boundaries, practice_rounds) = practice(&task, &PRACTICE_SPECS, PRACTICE_ROUNDS)?;
    // scripted jumps go back to demonstrated states
    let pool: Vec<Vector> = task.demos.iter().flat_map(|d| d.samples.iter().step_by(10).map(|s| s.x.clone())).collect();
    let mut cases = Vec::new();
    for (i, name) in COOKING_SPECS.into_iter().enumerate() {
        let spec = load_spec(name)?;
        let cfg = if name == "cooking_cc" {
            ExecutorConfig { max_steps: 4000, ..Default::default() }
        } else {
            ExecutorConfig::default()
        };
        let t = Task { spec, ..task.clone() };
        let go = |source: &mut dyn PerturbationSource| {
            run(&t.scene, &t.spec, library.clone(), boundaries.clone(), t.start(), source, &cfg)
                .map_err(|e| BenchError::Setup(e.to_string()))
        };
        let (out, b) = go(&mut NoPerturbations)?;
        let unperturbed = RunSummary::new(&out, &b);
        let mut teleports = AdmissibleTeleports::new(vec![30, 120, 260], seed.wrapping_add(100 + i as u64), library.clone())
            .with_pool(pool.clone());
        let (out, b) = go(&mut teleports)?;
        let perturbed = RunSummary::new(&out, &b);
        let behaved = cooking_behaved(name, &t.scene, &unperturbed, true)
            && cooking_behaved(name, &t.scene, &perturbed, false);
        cases.push(GeneralizationCase { spec: name.to_string(), unperturbed, perturbed, teleports: teleports.applied, behaved });
    }
    let practice_cuts = boundaries.cut_count();
    Ok(GeneralizationReport { practice_rounds, practice_cuts, cases, boundaries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReentryCase {
    pub spec: String,
    /// Tile whose entry triggers a jump into the dark background.
    pub trigger: String,
    pub expected: String,
    pub observed: Option<String>,
    pub run: RunSummary,
}

impl ReentryCase {
    pub fn passed(&self) -> bool {
        self.observed.as_deref() == Some(self.expected.as_str())
            && self.run.verdict == Verdict::Success
            && self.run.trace_verdict.is_satisfied()
    }
}

/// Point above the tile row where the dark background is entered.
pub const DARK_DROP: [f64; 2] = [0.5, 0.8];

/// Color tracing: entering `trigger` throws the state into the dark; the run
/// must come back at the tile its automaton names.
pub fn run_color(seed: u64) -> Result<Vec<ReentryCase>, BenchError> {
    let task = build_task("color", "color_a", Variant::DsMod, seed)?;
    let cases = [
        ("color_a", "green", "yellow"),
        ("color_b", "green", "blue"),
        ("color_c", "blue", "pink"),
        ("color_c", "green", "yellow"),
    ];
    let cfg = ExecutorConfig::default();
    cases
        .into_iter()
        .map(|(spec, trigger, expected)| {
            let spec_v = load_spec(spec)?;
            let mut adv = EntryAdversary::new(trigger, Vector::from_row_slice(&DARK_DROP), Some(1));
            let (out, b) =
                run(&task.scene, &spec_v, task.library.clone(), BoundarySet::default(), task.start(), &mut adv, &cfg)
                    .map_err(|e| BenchError::Setup(e.to_string()))?;
            let summary = RunSummary::new(&out, &b);
            let r = regions(&task.scene, &summary.modes);
            let observed = r.iter().position(|x| x == "dark").and_then(|i| r.get(i + 1)).cloned();
            Ok(ReentryCase {
                spec: spec.to_string(),
                trigger: trigger.to_string(),
                expected: expected.to_string(),
                observed,
                run: summary,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub runs: usize,
    pub max_perturbations: usize,
    /// Perturbations fall on steps below this.
    pub horizon: usize,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self { runs: 500, max_perturbations: 10, horizon: 120, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub verdicts: BTreeMap<String, usize>,
    pub successes: usize,
    pub satisfied: usize,
    pub perturbations: usize,
    pub replans: usize,
    pub cuts: usize,
    /// Seeds of runs that failed either check.
    pub failed_runs: Vec<u64>,
}

impl CampaignReport {
    pub fn passed(&self) -> bool {
        self.config.runs > 0 && self.successes == self.config.runs && self.satisfied == self.config.runs
    }
}

/// Independent scooping runs, each with its own random admissible
/// perturbation schedule and fresh boundaries.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignReport, BenchError> {
    if cfg.max_perturbations == 0 || cfg.horizon == 0 {
        return Err(BenchError::Config("campaign needs perturbations and a horizon".into()));
    }
    let task = build_task("scooping", "scooping_full", Variant::DsMod, cfg.seed)?;
    let library: Arc<PolicyLibrary> = task.library.clone();
    let exec = ExecutorConfig::default();
    let runs: Vec<(u64, RunOutcome, usize, usize)> = (0..cfg.runs as u64)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(r);
            let mut src = AdmissibleTeleports::random(seed, cfg.max_perturbations, cfg.horizon, library.clone());
            let (out, b) =
                run(&task.scene, &task.spec, library.clone(), BoundarySet::default(), task.start(), &mut src, &exec)
                    .map_err(|e| BenchError::Setup(e.to_string()))?;
            Ok((r, out, src.applied, b.cut_count()))
        })
        .collect::<Result<_, BenchError>>()?;
    let mut report = CampaignReport {
        config: cfg.clone(),
        verdicts: BTreeMap::new(),
        successes: 0,
        satisfied: 0,
        perturbations: 0,
        replans: 0,
        cuts: 0,
        failed_runs: Vec::new(),
    };
    for (r, out, applied, cuts) in runs {
        *report.verdicts.entry(format!("{:?}", out.verdict)).or_default() += 1;
        let ok = out.verdict == Verdict::Success;
        let sat = out.spec_verdict.is_satisfied();
        report.successes += ok as usize;
        report.satisfied += sat as usize;
        report.perturbations += applied;
        report.replans += out.replans;
        report.cuts += cuts;
        if !(ok && sat) {
            report.failed_runs.push(r);
        }
    }
    Ok(report)
}
