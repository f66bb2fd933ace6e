//! One steerable rollout: an executor advanced in ticks, with commands
//! applied at tick boundaries.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tli_bench::tasks::{scene_demos, Variant};
use tli_core::assets;
use tli_core::executor::{learn_library, BoundarySet, Executor, ExecutorConfig, NoPerturbations, PolicyLibrary};
use tli_core::ltl::Gr1Spec;
use tli_core::modulation::ModulationContext;
use tli_core::sim::Scene;
use tli_core::types::Vector;

use crate::protocol::{
    AssetListing, AutomatonView, Command, CutGroup, CutView, ErrorCode, FieldGrid, Perturb, Probe, Snapshot, SpecEntry,
    TrajectoryPoint,
};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown asset {0:?}")]
    UnknownAsset(String),
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error("setup failed: {0}")]
    Setup(String),
}

impl SessionError {
    pub fn code(&self) -> ErrorCode {
        match self {
            Self::UnknownAsset(_) => ErrorCode::UnknownAsset,
            Self::UnknownSession(_) => ErrorCode::UnknownSession,
            Self::InvalidCommand(_) => ErrorCode::InvalidCommand,
            Self::Setup(_) => ErrorCode::Setup,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Seeds demonstrations, fitting and the start state.
    pub seed: u64,
    pub tick_hz: f64,
    /// Simulation steps batched into one tick.
    pub steps_per_tick: usize,
    /// Velocity grid resolution per axis; 0 leaves the grid out.
    pub grid: usize,
    /// Trajectory points kept in snapshots.
    pub window: usize,
    pub dt: f64,
    pub max_steps: usize,
    pub cutting: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let exec = ExecutorConfig::default();
        Self {
            seed: 0,
            tick_hz: 30.0,
            steps_per_tick: 2,
            grid: 15,
            window: 300,
            dt: exec.dt,
            max_steps: exec.max_steps,
            cutting: true,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: &str| Err(SessionError::Setup(m.to_string()));
        if !(self.tick_hz > 0.0 && self.tick_hz <= 1000.0) {
            return bad("tick_hz must be in (0, 1000]");
        }
        if self.steps_per_tick == 0 || self.window == 0 {
            return bad("steps_per_tick and window must be positive");
        }
        if self.grid > 100 {
            return bad("grid must be at most 100");
        }
        Ok(())
    }
}

/// Bundled assets, optionally overridden by `scenes/<name>.json` and
/// `specs/<name>.ltl` files under a directory.
#[derive(Clone, Debug, Default)]
pub struct Assets {
    dir: Option<PathBuf>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl Assets {
    pub fn bundled() -> Self {
        Self { dir: None }
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    fn file(&self, sub: &str, name: &str, ext: &str) -> Option<String> {
        let path = self.dir.as_ref()?.join(sub).join(format!("{name}.{ext}"));
        fs::read_to_string(path).ok()
    }

    fn names(&self, sub: &str, ext: &str, bundled: &[&str]) -> Vec<String> {
        let mut out: Vec<String> = bundled.iter().map(|s| s.to_string()).collect();
        if let Some(dir) = &self.dir {
            if let Ok(entries) = fs::read_dir(dir.join(sub)) {
                for e in entries.flatten() {
                    let p = e.path();
                    if p.extension().is_some_and(|x| x == ext) {
                        if let Some(stem) = p.file_stem().and_then(|s| s.to_str()).filter(|s| valid_name(s)) {
                            out.push(stem.to_string());
                        }
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    pub fn scene(&self, name: &str) -> Result<Scene, SessionError> {
        if !valid_name(name) {
            return Err(SessionError::UnknownAsset(name.to_string()));
        }
        let text = match self.file("scenes", name, "json") {
            Some(t) => t,
            None => assets::scene_text(name).ok_or_else(|| SessionError::UnknownAsset(name.to_string()))?.to_string(),
        };
        Scene::from_json(&text).map_err(|e| SessionError::Setup(format!("scene {name}: {e}")))
    }

    pub fn spec(&self, name: &str) -> Result<Gr1Spec, SessionError> {
        if !valid_name(name) {
            return Err(SessionError::UnknownAsset(name.to_string()));
        }
        let text = match self.file("specs", name, "ltl") {
            Some(t) => t,
            None => assets::spec_text(name).ok_or_else(|| SessionError::UnknownAsset(name.to_string()))?.to_string(),
        };
        Gr1Spec::parse(&text).map_err(|e| SessionError::Setup(format!("spec {name}: {e}")))
    }

    pub fn listing(&self) -> AssetListing {
        let scenes = self.names("scenes", "json", &assets::SCENE_NAMES);
        let specs = self
            .names("specs", "ltl", &assets::SPEC_NAMES)
            .into_iter()
            .map(|name| {
                let scene = scenes.iter().filter(|s| name.starts_with(s.as_str())).max_by_key(|s| s.len()).cloned();
                SpecEntry { name, scene }
            })
            .collect();
        AssetListing { scenes, specs, variants: Variant::ALL.iter().map(|v| v.label().to_string()).collect() }
    }
}

type LibraryKey = (String, Variant, u64);

/// Learned libraries shared between sessions, keyed by scene, variant and
/// seed.
#[derive(Clone, Debug, Default)]
pub struct LibraryCache {
    inner: Arc<Mutex<HashMap<LibraryKey, Arc<PolicyLibrary>>>>,
}

impl LibraryCache {
    pub fn get_or_learn(&self, scene: &Scene, variant: Variant, seed: u64) -> Result<Arc<PolicyLibrary>, SessionError> {
        let key = (scene.name.clone(), variant, seed);
        if let Some(lib) = self.inner.lock().expect("cache lock").get(&key) {
            return Ok(lib.clone());
        }
        let demos = scene_demos(scene, seed).map_err(|e| SessionError::Setup(e.to_string()))?;
        let lib = learn_library(scene, &demos, &variant.policy_kind(seed)).map_err(|e| SessionError::Setup(e.to_string()))?;
        let lib = Arc::new(lib);
        self.inner.lock().expect("cache lock").insert(key, lib.clone());
        Ok(lib)
    }
}

/// What a session is created from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRequest {
    pub scene: String,
    pub spec: String,
    pub variant: String,
    #[serde(default)]
    pub config: SessionConfig,
}

pub struct Session {
    pub id: u64,
    pub request: SessionRequest,
    variant: Variant,
    scene: Scene,
    spec: Gr1Spec,
    library: Arc<PolicyLibrary>,
    executor: Executor,
    pending: VecDeque<Command>,
    paused: bool,
    tick: u64,
}

/// Rejects perturbations of the wrong dimension or with non-finite entries.
pub fn check_command(cmd: &Command, n: usize) -> Result<(), SessionError> {
    if let Command::Perturb(Perturb::Delta(v) | Perturb::Target(v)) = cmd {
        if v.len() != n || v.iter().any(|c| !c.is_finite()) {
            return Err(SessionError::InvalidCommand(format!("perturbation needs {n} finite components")));
        }
    }
    Ok(())
}

/// Uniform sample from the scene's start disc, or its first region's
/// centroid when the scene names none.
fn sample_start(scene: &Scene, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match &scene.start {
        Some(s) => {
            let r = s.radius * rng.random::<f64>().sqrt();
            let t = std::f64::consts::TAU * rng.random::<f64>();
            Vector::from_vec(vec![s.center[0] + r * t.cos(), s.center[1] + r * t.sin()])
        }
        None => scene.regions[0].vertices.centroid(),
    }
}

impl Session {
    /// A paused session at a sampled start state.
    pub fn create(id: u64, request: SessionRequest, assets: &Assets, cache: &LibraryCache) -> Result<Self, SessionError> {
        request.config.validate()?;
        let scene = assets.scene(&request.scene)?;
        let spec = assets.spec(&request.spec)?;
        let variant = Variant::parse(&request.variant).ok_or_else(|| SessionError::UnknownAsset(request.variant.clone()))?;
        if scene.n != 2 {
            return Err(SessionError::Setup("sessions need a planar scene".into()));
        }
        scene.validate_against(&spec).map_err(|e| SessionError::Setup(e.to_string()))?;
        let library = cache.get_or_learn(&scene, variant, request.config.seed)?;
        let executor = Self::new_executor(&scene, &spec, &library, variant, &request.config, BoundarySet::default(), request.config.seed)?;
        Ok(Self { id, request, variant, scene, spec, library, executor, pending: VecDeque::new(), paused: true, tick: 0 })
    }

    fn new_executor(
        scene: &Scene,
        spec: &Gr1Spec,
        library: &Arc<PolicyLibrary>,
        variant: Variant,
        cfg: &SessionConfig,
        boundaries: BoundarySet,
        seed: u64,
    ) -> Result<Executor, SessionError> {
        let config = ExecutorConfig {
            dt: cfg.dt,
            max_steps: cfg.max_steps,
            modulation_enabled: variant.modulated(),
            online_cutting_enabled: cfg.cutting,
            seed,
            ..Default::default()
        };
        let x0 = sample_start(scene, seed);
        Executor::new(scene.clone(), spec.clone(), library.clone(), boundaries, x0, config)
            .map_err(|e| SessionError::Setup(e.to_string()))
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn executor(&self) -> &Executor {
        &self.executor
    }

    pub fn dim(&self) -> usize {
        self.scene.n
    }

    /// Queues a command for the next tick.
    pub fn enqueue(&mut self, cmd: Command) -> Result<(), SessionError> {
        check_command(&cmd, self.scene.n)?;
        self.pending.push_back(cmd);
        Ok(())
    }

    fn apply(&mut self, cmd: Command) -> Result<(), SessionError> {
        match cmd {
            Command::Perturb(p) => {
                if self.executor.verdict().is_none() {
                    let x = match p {
                        Perturb::Delta(d) => self.executor.x() + Vector::from_vec(d),
                        Perturb::Target(t) => Vector::from_vec(t),
                    };
                    self.executor.displace_to(x);
                }
            }
            Command::Pause => self.paused = true,
            Command::Resume => self.paused = false,
            Command::Reset(args) => {
                let boundaries = if args.forget { BoundarySet::default() } else { self.executor.boundaries.clone() };
                let mut cfg = self.request.config.clone();
                cfg.cutting = self.executor.config.online_cutting_enabled;
                let modulation = self.executor.config.modulation_enabled;
                let seed = args.seed.unwrap_or(self.request.config.seed);
                let mut ex = Self::new_executor(&self.scene, &self.spec, &self.library, self.variant, &cfg, boundaries, seed)?;
                ex.config.modulation_enabled = modulation;
                self.executor = ex;
            }
            Command::ToggleModulation => self.executor.config.modulation_enabled ^= true,
            Command::ToggleCutting => self.executor.config.online_cutting_enabled ^= true,
        }
        Ok(())
    }

    /// Applies queued commands in arrival order, then advances the run by
    /// one batch of steps unless paused.
    pub fn tick(&mut self) -> Result<(), SessionError> {
        let mut result = Ok(());
        while let Some(cmd) = self.pending.pop_front() {
            if let Err(e) = self.apply(cmd) {
                result = Err(e);
            }
        }
        if !self.paused {
            for _ in 0..self.request.config.steps_per_tick {
                if self.executor.step(&mut NoPerturbations).is_some() {
                    break;
                }
            }
        }
        self.tick += 1;
        result
    }

    pub fn snapshot(&self) -> Snapshot {
        let ex = &self.executor;
        let automaton = ex.automaton();
        let x = ex.x();
        let window = self.request.config.window;
        let steps = &ex.trace().steps;
        let mut trajectory: Vec<TrajectoryPoint> = steps[steps.len().saturating_sub(window - 1)..]
            .iter()
            .map(|s| TrajectoryPoint { x: s.x.iter().copied().collect(), perturbed: s.perturbed })
            .collect();
        // the current state, unless the run has come to rest on the last sample
        if steps.last().is_none_or(|s| s.x != *x) {
            trajectory.push(TrajectoryPoint { x: x.iter().copied().collect(), perturbed: false });
        }
        if trajectory.len() > window {
            trajectory.drain(..trajectory.len() - window);
        }
        let cuts = ex
            .boundaries
            .estimates
            .iter()
            .filter(|(_, e)| !e.cuts().is_empty())
            .map(|((mode, next), e)| CutGroup {
                mode: mode.clone(),
                next: next.clone(),
                cuts: e.cuts().iter().map(|c| CutView { w: c.w.iter().copied().collect(), p: c.p.iter().copied().collect() }).collect(),
            })
            .collect();
        Snapshot {
            session: self.id,
            tick: self.tick,
            step: ex.steps_taken(),
            x: x.iter().copied().collect(),
            alpha: self.scene.sense(x).to_string(),
            mode: ex.mode().clone(),
            commanded: ex.commanded().clone(),
            automaton: AutomatonView {
                modes: automaton.modes.clone(),
                edges: automaton.edges.iter().copied().collect(),
                goals: automaton.goals.iter().copied().collect(),
                active: ex.mode().id,
            },
            cuts,
            trajectory,
            field: self.field(),
            verdict: ex.verdict(),
            replans: ex.replans(),
            paused: self.paused,
            modulation: ex.config.modulation_enabled,
            cutting: ex.config.online_cutting_enabled,
        }
    }

    fn field(&self) -> Option<FieldGrid> {
        let size = self.request.config.grid;
        if size == 0 {
            return None;
        }
        let ex = &self.executor;
        let (key, policy) = ex.active_policy()?;
        let ctx = ex.boundaries.get(&key).map(ModulationContext::new);
        let pair = |p: [f64; 2]| {
            let x = Vector::from_vec(p.to_vec());
            let raw = policy.field().velocity(&x);
            let m = match &ctx {
                Some(c) => c.modulate(&x, &raw),
                None => raw.clone(),
            };
            ([raw[0], raw[1]], [m[0], m[1]])
        };
        let ws = &self.scene.workspace;
        let mut grid = FieldGrid {
            size,
            lo: [ws.lo[0], ws.lo[1]],
            hi: [ws.hi[0], ws.hi[1]],
            raw: Vec::with_capacity(size * size),
            modulated: Vec::with_capacity(size * size),
            probes: vec![],
        };
        for i in 0..size {
            for j in 0..size {
                let (r, m) = pair(grid.point(i, j));
                grid.raw.push(r);
                grid.modulated.push(m);
            }
        }
        if let Some(c) = &ctx {
            for cut in c.estimate.cuts() {
                let p = [cut.p[0], cut.p[1]];
                let (raw, modulated) = pair(p);
                grid.probes.push(Probe { x: p, w: [cut.w[0], cut.w[1]], raw, modulated });
            }
        }
        Some(grid)
    }
}
