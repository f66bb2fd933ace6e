//! Closed-loop runtime: runs the commanded mode's policy, detects mode
//! changes, learns cuts from invariance failures and replans.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::bc::{self, BcConfig, MlpPolicy};
use crate::boundary::{BoundaryError, BoundaryEstimate, CutConfig};
use crate::lpvds::{self, cap_speed, FitConfig, LpvDsModel, VelocityField};
use crate::ltl::{check_trace, extend_with_transition, synthesize, Gr1Spec, LtlError, ModeAutomaton, TraceVerdict};
use crate::modulation::ModulationContext;
use crate::segmentation::{attractors, nudge_past_guard, segment, shift_to_attractors};
use crate::sim::{PerturbationSchedule, Scene};
use crate::types::{serde_vector, CoreError, Demonstration, ModeId, Trace, TraceEvent, TraceStep, Vector};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("no policy for mode {0}")]
    MissingPolicy(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Ltl(#[from] LtlError),
    #[error("fitting {key}: {msg}")]
    Fit { key: String, msg: String },
}

/// (region, next region) after alias resolution; `None` ends a task.
pub type PolicyKey = (String, Option<String>);

fn key_name(k: &PolicyKey) -> String {
    match &k.1 {
        Some(n) => format!("{}->{}", k.0, n),
        None => format!("{}->end", k.0),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Ds(LpvDsModel),
    Bc {
        net: MlpPolicy,
        #[serde(with = "serde_vector")]
        x_star: Vector,
    },
}

impl Policy {
    pub fn x_star(&self) -> &Vector {
        match self {
            Policy::Ds(m) => m.x_star(),
            Policy::Bc { x_star, .. } => x_star,
        }
    }

    pub fn field(&self) -> &dyn VelocityField {
        match self {
            Policy::Ds(m) => m,
            Policy::Bc { net, .. } => net,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyLibrary {
    #[serde(with = "keyed")]
    pub policies: BTreeMap<PolicyKey, Policy>,
    /// Automaton mode name to the region whose policies it uses.
    pub aliases: BTreeMap<String, String>,
}

mod keyed {
    use super::{Policy, PolicyKey};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        mode: String,
        next: Option<String>,
        policy: Policy,
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<PolicyKey, Policy>, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Entry> = m
            .iter()
            .map(|((mode, next), p)| Entry { mode: mode.clone(), next: next.clone(), policy: p.clone() })
            .collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<PolicyKey, Policy>, D::Error> {
        let v = Vec::<Entry>::deserialize(d)?;
        Ok(v.into_iter().map(|e| ((e.mode, e.next), e.policy)).collect())
    }
}

impl PolicyLibrary {
    pub fn resolve<'a>(&'a self, mode: &'a str) -> &'a str {
        self.aliases.get(mode).map_or(mode, String::as_str)
    }

    pub fn key(&self, mode: &str, next: Option<&str>) -> PolicyKey {
        (self.resolve(mode).to_string(), next.map(|n| self.resolve(n).to_string()))
    }

    /// Policy for the commanded transition, else any policy of the mode.
    pub fn select(&self, mode: &str, next: Option<&str>) -> Option<(PolicyKey, &Policy)> {
        let key = self.key(mode, next);
        if let Some(p) = self.policies.get(&key) {
            return Some((key, p));
        }
        self.policies
            .iter()
            .find(|((m, _), _)| *m == key.0)
            .map(|(k, p)| (k.clone(), p))
    }

    /// Exact (non-fallback) coverage of a transition.
    pub fn has(&self, mode: &str, next: &str) -> bool {
        self.policies.contains_key(&self.key(mode, Some(next)))
    }

    /// Edges of the automaton's commanded plan that have no policy.
    pub fn missing(&self, automaton: &ModeAutomaton) -> Vec<String> {
        let mut out = Vec::new();
        for (i, m) in automaton.modes.iter().enumerate() {
            if automaton.is_absorbing_goal(i) && automaton.modes.len() > 1 {
                continue;
            }
            let next = automaton.strategy[i];
            let next = (next != i).then(|| automaton.modes[next].name.as_str());
            if self.select(&m.name, next).is_none() {
                out.push(m.name.clone());
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    Ds(FitConfig),
    Bc(BcConfig),
}

/// Distance the attractor of a transition is pushed past its guard, so that
/// converging to it forces the mode change.
pub const GUARD_NUDGE: f64 = 1e-2;

/// Segments demonstrations by the scene's sensors and fits one policy per
/// observed (mode, next mode) pair.
pub fn learn_library(scene: &Scene, demos: &[Demonstration], kind: &PolicyKind) -> Result<PolicyLibrary, ExecError> {
    let labels = scene.label_map();
    let segs = segment(demos, &labels)?;
    let mut set = attractors(&segs);
    for a in &mut set.entries {
        let Some(next) = &a.next_mode else { continue };
        let mut dir = Vector::zeros(a.x_star.len());
        for s in segs.iter().filter(|s| s.mode == a.mode && s.next_mode.as_ref() == Some(next)) {
            for sample in s.samples.iter().rev().take(3) {
                dir += &sample.xdot;
            }
        }
        match nudge_past_guard(&a.x_star, &dir, |x| scene.in_region(&next.name, x), GUARD_NUDGE, 0.2) {
            Some(x) => a.x_star = x,
            None => warn!(mode = %a.mode.name, next = %next.name, "attractor could not be moved past the guard"),
        }
    }
    let shifted = shift_to_attractors(&segs, &set);
    let mut library = PolicyLibrary {
        policies: BTreeMap::new(),
        aliases: scene.aliases.iter().map(|a| (a.mode.clone(), a.shares_policy_of.clone())).collect(),
    };
    for (idx, a) in set.entries.iter().enumerate() {
        let key: PolicyKey = (a.mode.name.clone(), a.next_mode.as_ref().map(|m| m.name.clone()));
        let pairs: Vec<(Vector, Vector)> = shifted
            .iter()
            .filter(|s| s.mode == a.mode && s.next_mode == a.next_mode)
            .flat_map(|s| s.samples.iter().map(|x| (x.x.clone(), x.xdot.clone())))
            .collect();
        let err = |msg: String| ExecError::Fit { key: key_name(&key), msg };
        let policy = match kind {
            PolicyKind::Ds(cfg) => {
                let cfg = FitConfig { seed: cfg.seed.wrapping_add(idx as u64), ..cfg.clone() };
                Policy::Ds(lpvds::fit(&pairs, &a.x_star, &cfg).map_err(|e| err(e.to_string()))?)
            }
            PolicyKind::Bc(cfg) => {
                let cfg = BcConfig { seed: cfg.seed.wrapping_add(idx as u64), ..cfg.clone() };
                Policy::Bc {
                    net: bc::train(&pairs, &cfg).map_err(|e| err(e.to_string()))?,
                    x_star: a.x_star.clone(),
                }
            }
        };
        library.policies.insert(key, policy);
    }
    Ok(library)
}

/// Cut estimates keyed by the policy they protect.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundarySet {
    #[serde(with = "keyed_boundaries")]
    pub estimates: BTreeMap<PolicyKey, BoundaryEstimate>,
}

mod keyed_boundaries {
    use super::PolicyKey;
    use crate::boundary::BoundaryEstimate;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        mode: String,
        next: Option<String>,
        estimate: BoundaryEstimate,
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<PolicyKey, BoundaryEstimate>, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Entry> = m
            .iter()
            .map(|((mode, next), e)| Entry { mode: mode.clone(), next: next.clone(), estimate: e.clone() })
            .collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<PolicyKey, BoundaryEstimate>, D::Error> {
        let v = Vec::<Entry>::deserialize(d)?;
        Ok(v.into_iter().map(|e| ((e.mode, e.next), e.estimate)).collect())
    }
}

impl BoundarySet {
    pub fn get(&self, key: &PolicyKey) -> Option<&BoundaryEstimate> {
        self.estimates.get(key)
    }

    pub fn entry(&mut self, key: &PolicyKey, mode: &ModeId, x_r: &Vector, config: &CutConfig) -> &mut BoundaryEstimate {
        self.estimates
            .entry(key.clone())
            .or_insert_with(|| BoundaryEstimate::new(mode.clone(), x_r.clone(), *config))
    }

    pub fn cut_count(&self) -> usize {
        self.estimates.values().map(|e| e.cuts().len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutorConfig {
    pub dt: f64,
    pub max_steps: usize,
    /// Unexpected exits tolerated before the run is declared looping.
    pub loop_budget: usize,
    pub modulation_enabled: bool,
    pub online_cutting_enabled: bool,
    /// Grow the spec from unexpected transitions when it is not complete.
    pub online_extension_enabled: bool,
    pub stop_radius: f64,
    pub speed_cap: f64,
    pub cut: CutConfig,
    pub seed: u64,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            max_steps: 20_000,
            loop_budget: 50,
            modulation_enabled: true,
            online_cutting_enabled: true,
            online_extension_enabled: true,
            stop_radius: 1e-3,
            speed_cap: 50.0,
            cut: CutConfig::default(),
            seed: 0,
        }
    }
}

impl ExecutorConfig {
    pub fn validate(&self) -> Result<(), ExecError> {
        if !(self.dt > 0.0) || !(self.stop_radius > 0.0) || !(self.speed_cap > 0.0) {
            return Err(ExecError::Config("dt, stop_radius and speed_cap must be positive".into()));
        }
        if self.max_steps == 0 || self.loop_budget == 0 {
            return Err(ExecError::Config("max_steps and loop_budget must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Success,
    Looping,
    StepBudgetExhausted,
    AssumptionViolation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutAttempt {
    pub key: PolicyKey,
    pub step: usize,
    /// Where the failing run of the policy started.
    #[serde(with = "serde_vector")]
    pub entry: Vector,
    /// `None` when a cut was added.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub verdict: Verdict,
    pub trace: Trace,
    /// Cuts added during this run, per policy.
    pub cuts_added: BTreeMap<String, usize>,
    pub cut_attempts: Vec<CutAttempt>,
    pub replans: usize,
    /// Check of the trace against the spec in force at the end of the run.
    pub spec_verdict: TraceVerdict,
    /// True when the run extended the spec online.
    pub spec_extended: bool,
}

/// What a perturbation source sees after each integration step.
pub struct StepView<'a> {
    pub step: usize,
    pub x: &'a Vector,
    pub mode: &'a ModeId,
    /// The current mode was entered on this step.
    pub entered: bool,
    pub automaton: &'a ModeAutomaton,
    pub scene: &'a Scene,
}

pub trait PerturbationSource {
    /// New state to jump to after this step, if any.
    fn poll(&mut self, view: &StepView) -> Option<Vector>;
}

pub struct NoPerturbations;

impl PerturbationSource for NoPerturbations {
    fn poll(&mut self, _: &StepView) -> Option<Vector> {
        None
    }
}

impl PerturbationSource for PerturbationSchedule {
    fn poll(&mut self, view: &StepView) -> Option<Vector> {
        let mut x = view.x.clone();
        let mut hit = false;
        for p in self.at(view.step) {
            x = p.apply(&x);
            hit = true;
        }
        hit.then_some(x)
    }
}

/// Teleports to `target` every time `region` is entered, up to `times`
/// occurrences (unbounded when `None`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryAdversary {
    pub region: String,
    #[serde(with = "serde_vector")]
    pub target: Vector,
    pub times: Option<usize>,
    pub fired: usize,
}

impl EntryAdversary {
    pub fn new(region: impl Into<String>, target: Vector, times: Option<usize>) -> Self {
        Self { region: region.into(), target, times, fired: 0 }
    }
}

impl PerturbationSource for EntryAdversary {
    fn poll(&mut self, view: &StepView) -> Option<Vector> {
        if !view.entered || view.scene.region_at(view.x) != self.region {
            return None;
        }
        if self.times.is_some_and(|t| self.fired >= t) {
            return None;
        }
        self.fired += 1;
        Some(self.target.clone())
    }
}

/// Thread-safe queue of absolute targets; one is applied per step boundary,
/// in arrival order.
#[derive(Clone, Debug, Default)]
pub struct PerturbationQueue {
    inner: Arc<Mutex<VecDeque<Vector>>>,
}

impl PerturbationQueue {
    pub fn push(&self, target: Vector) {
        self.inner.lock().expect("queue lock").push_back(target);
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("queue lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PerturbationSource for PerturbationQueue {
    fn poll(&mut self, _: &StepView) -> Option<Vector> {
        self.inner.lock().expect("queue lock").pop_front()
    }
}

impl<T: PerturbationSource + ?Sized> PerturbationSource for &mut T {
    fn poll(&mut self, view: &StepView) -> Option<Vector> {
        (**self).poll(view)
    }
}

/// Mutable state of one run. Owned so that a session can hold it between
/// ticks.
#[derive(Clone, Debug)]
pub struct Executor {
    pub scene: Scene,
    pub spec: Gr1Spec,
    base: ModeAutomaton,
    automaton: ModeAutomaton,
    library: Arc<PolicyLibrary>,
    pub boundaries: BoundarySet,
    pub config: ExecutorConfig,
    x: Vector,
    x_last: Option<Vector>,
    x_entry: Vector,
    mode: ModeId,
    entered: bool,
    perturbed: bool,
    step: usize,
    trace: Trace,
    replans: usize,
    cuts_added: BTreeMap<String, usize>,
    cut_attempts: Vec<CutAttempt>,
    spec_extended: bool,
    verdict: Option<Verdict>,
}

impl Executor {
    pub fn new(
        scene: Scene,
        spec: Gr1Spec,
        library: Arc<PolicyLibrary>,
        boundaries: BoundarySet,
        x0: Vector,
        config: ExecutorConfig,
    ) -> Result<Self, ExecError> {
        config.validate()?;
        if x0.len() != scene.n {
            return Err(ExecError::Config(format!("start state has dimension {}", x0.len())));
        }
        let base = synthesize(&spec)?;
        let automaton = restrict(&base, &library);
        let missing = library.missing(&automaton);
        if let Some(m) = missing.first() {
            return Err(ExecError::MissingPolicy(m.clone()));
        }
        let alpha = scene.sense(&x0);
        let mode = automaton
            .label_map
            .candidates(&alpha)
            .into_iter()
            .min_by_key(|m| (Some(m.id) != automaton.init, m.id))
            .cloned()
            .ok_or_else(|| ExecError::Core(CoreError::UnknownSensorState(alpha.to_string())))?;
        let mut ex = Self {
            scene,
            spec,
            base,
            automaton,
            library,
            boundaries,
            config,
            x_entry: x0.clone(),
            x: x0,
            x_last: None,
            mode,
            entered: true,
            perturbed: false,
            step: 0,
            trace: Trace::default(),
            replans: 0,
            cuts_added: BTreeMap::new(),
            cut_attempts: Vec::new(),
            spec_extended: false,
            verdict: None,
        };
        ex.observe_entry();
        Ok(ex)
    }

    pub fn x(&self) -> &Vector {
        &self.x
    }

    pub fn mode(&self) -> &ModeId {
        &self.mode
    }

    pub fn automaton(&self) -> &ModeAutomaton {
        &self.automaton
    }

    pub fn library(&self) -> &PolicyLibrary {
        &self.library
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn replans(&self) -> usize {
        self.replans
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn verdict(&self) -> Option<Verdict> {
        self.verdict
    }

    pub fn commanded(&self) -> &ModeId {
        &self.automaton.modes[self.automaton.strategy[self.mode.id]]
    }

    /// Policy key and policy driving the current mode.
    pub fn active_policy(&self) -> Option<(PolicyKey, &Policy)> {
        let next = self.commanded();
        let next = (next.id != self.mode.id).then_some(next.name.as_str());
        self.library.select(&self.mode.name, next)
    }

    /// Raw and executed velocity at `x` under the current mode's policy.
    pub fn velocities(&self, x: &Vector) -> Option<(Vector, Vector)> {
        let (key, policy) = self.active_policy()?;
        let raw = policy.field().velocity(x);
        let out = match (self.config.modulation_enabled, self.boundaries.get(&key)) {
            (true, Some(est)) => ModulationContext::new(est).modulate(x, &raw),
            _ => raw.clone(),
        };
        Some((raw, cap_speed(out, self.config.speed_cap)))
    }

    /// Moves the state between steps, as a perturbation.
    pub fn displace_to(&mut self, x: Vector) {
        self.x = self.scene.workspace.clip(&x);
        self.perturbed = true;
    }

    fn observe_entry(&mut self) {
        if !self.config.online_cutting_enabled {
            return;
        }
        let mode = self.scene.label_map().label_mode(&self.scene.sense(&self.x)).expect("scene labels are total");
        if let Some((key, policy)) = self.active_policy() {
            let x_r = policy.x_star().clone();
            let cut = self.config.cut;
            let x = self.x.clone();
            self.boundaries.entry(&key, &mode, &x_r, &cut).observe_entry(&x);
        }
    }

    /// Automaton mode for a sensed valuation: the commanded next mode, then
    /// the current one, then a successor, then the lowest id.
    fn resolve(&self, alpha: &crate::types::SensorState) -> Option<ModeId> {
        let cands = self.automaton.label_map.candidates(alpha);
        let commanded = self.commanded().id;
        let pick = |pred: &dyn Fn(&ModeId) -> bool| cands.iter().find(|m| pred(m)).map(|m| (*m).clone());
        pick(&|m| m.id == commanded)
            .or_else(|| pick(&|m| m.id == self.mode.id))
            .or_else(|| pick(&|m| self.automaton.has_edge(self.mode.id, m.id)))
            .or_else(|| cands.first().map(|m| (*m).clone()))
    }

    fn is_done(&self) -> bool {
        let id = self.mode.id;
        if !self.automaton.is_absorbing_goal(id) {
            return false;
        }
        if self.automaton.modes.len() > 1 {
            return true;
        }
        match self.active_policy() {
            Some((_, p)) => (&self.x - p.x_star()).norm() <= self.config.stop_radius,
            None => true,
        }
    }

    fn record_failure(&mut self, prev: &ModeId, prev_next: &ModeId) {
        let next = (prev_next.id != prev.id).then_some(prev_next.name.as_str());
        let Some((key, policy)) = self.library.select(&prev.name, next) else { return };
        let Some(x_last) = self.x_last.clone() else { return };
        let region_mode = self
            .scene
            .label_map()
            .label_mode(&self.scene.sense(&x_last))
            .expect("scene labels are total");
        let x_r = policy.x_star().clone();
        let cut = self.config.cut;
        let est = self.boundaries.entry(&key, &region_mode, &x_r, &cut);
        let result = est.record_failure(&self.x_entry, &x_last, &self.x, false);
        let error = match result {
            Ok(next) => {
                *est = next;
                *self.cuts_added.entry(key_name(&key)).or_default() += 1;
                debug!(policy = %key_name(&key), step = self.step, "cut added");
                None
            }
            Err(e) => {
                if !matches!(e, BoundaryError::RedundantFailure(_)) {
                    warn!(policy = %key_name(&key), error = %e, "no cut from invariance failure");
                }
                Some(e.to_string())
            }
        };
        let entry = self.x_entry.clone();
        self.cut_attempts.push(CutAttempt { key, step: self.step, entry, error });
    }

    fn finish(&mut self, v: Verdict) -> Verdict {
        self.verdict = Some(v);
        v
    }

    /// Advances one step; returns the verdict once the run has ended.
    pub fn step(&mut self, source: &mut dyn PerturbationSource) -> Option<Verdict> {
        if let Some(v) = self.verdict {
            return Some(v);
        }
        if self.step >= self.config.max_steps {
            return Some(self.finish(Verdict::StepBudgetExhausted));
        }
        let alpha = self.scene.sense(&self.x);
        let Some(sensed) = self.resolve(&alpha) else {
            warn!(alpha = %alpha, "sensor valuation outside the spec");
            return Some(self.finish(Verdict::AssumptionViolation));
        };
        let mut event = if self.perturbed { TraceEvent::Perturbation } else { TraceEvent::None };
        let mut transition = false;
        if sensed != self.mode {
            let prev = self.mode.clone();
            let prev_next = self.commanded().clone();
            transition = true;
            if sensed == prev_next {
                event = TraceEvent::PlannedTransition;
            } else {
                event = TraceEvent::UnexpectedExit;
                self.replans += 1;
                // a displacement is not an invariance failure of the policy
                if self.config.online_cutting_enabled && !self.perturbed {
                    self.record_failure(&prev, &prev_next);
                }
                if !self.automaton.has_edge(prev.id, sensed.id) && self.config.online_extension_enabled {
                    match extend_with_transition(&self.spec, &self.base, &prev, &sensed) {
                        Ok(Some((spec, base))) => {
                            self.spec = spec;
                            self.automaton = restrict(&base, &self.library);
                            self.base = base;
                            self.spec_extended = true;
                        }
                        Ok(None) => {}
                        Err(e) => warn!(error = %e, "could not extend the spec"),
                    }
                }
            }
            self.mode = sensed;
            self.x_entry = self.x.clone();
            self.observe_entry();
        } else if self.perturbed {
            // a displacement within the mode starts a new entry
            self.x_entry = self.x.clone();
            self.observe_entry();
        }
        self.entered = transition;
        let commanded = self.commanded().clone();
        self.trace.push(TraceStep {
            x: self.x.clone(),
            alpha,
            mode: self.mode.clone(),
            commanded_transition: Some((self.mode.clone(), commanded)),
            event,
            perturbed: self.perturbed,
        });
        self.perturbed = false;
        if self.is_done() {
            return Some(self.finish(Verdict::Success));
        }
        if self.replans > self.config.loop_budget {
            return Some(self.finish(Verdict::Looping));
        }
        let Some((_, v)) = self.velocities(&self.x) else {
            return Some(self.finish(Verdict::AssumptionViolation));
        };
        self.x_last = Some(self.x.clone());
        self.x = self.scene.workspace.clip(&(&self.x + v * self.config.dt));
        self.step += 1;
        let view = StepView {
            step: self.step - 1,
            x: &self.x,
            mode: &self.mode,
            entered: self.entered,
            automaton: &self.automaton,
            scene: &self.scene,
        };
        if let Some(target) = source.poll(&view) {
            self.displace_to(target);
        }
        None
    }

    /// Runs to completion.
    pub fn run(mut self, source: &mut dyn PerturbationSource) -> (RunOutcome, BoundarySet) {
        let verdict = loop {
            if let Some(v) = self.step(source) {
                break v;
            }
        };
        let spec_verdict = check_trace(&self.spec, &self.trace);
        let outcome = RunOutcome {
            verdict,
            trace: self.trace,
            cuts_added: self.cuts_added,
            cut_attempts: self.cut_attempts,
            replans: self.replans,
            spec_verdict,
            spec_extended: self.spec_extended,
        };
        (outcome, self.boundaries)
    }
}

fn restrict(automaton: &ModeAutomaton, library: &PolicyLibrary) -> ModeAutomaton {
    automaton.restrict_strategy(|a, b| library.has(&automaton.modes[a].name, &automaton.modes[b].name))
}

/// Convenience wrapper: one run from `x0`.
pub fn run(
    scene: &Scene,
    spec: &Gr1Spec,
    library: Arc<PolicyLibrary>,
    boundaries: BoundarySet,
    x0: Vector,
    source: &mut dyn PerturbationSource,
    config: &ExecutorConfig,
) -> Result<(RunOutcome, BoundarySet), ExecError> {
    let ex = Executor::new(scene.clone(), spec.clone(), library, boundaries, x0, config.clone())?;
    Ok(ex.run(source))
}
