//! Planar polygon scenes, the sensor model, synthetic demonstrations and
//! initial-state sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ltl::Gr1Spec;
use crate::types::{CoreError, Demonstration, LabelMap, ModeId, Sample, SensorState, Vector, Workspace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("unknown region {0:?}")]
    UnknownRegion(String),
    #[error("demonstration generation failed: {0}")]
    GenerationFailed(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Convex polygon with counterclockwise vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
}

impl TryFrom<Vec<[f64; 2]>> for Polygon {
    type Error = SimError;
    fn try_from(v: Vec<[f64; 2]>) -> Result<Self, SimError> {
        Polygon::new(v)
    }
}

impl From<Polygon> for Vec<[f64; 2]> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self, SimError> {
        let n = vertices.len();
        if n < 3 {
            return Err(SimError::InvalidScene("polygon needs at least 3 vertices".into()));
        }
        for i in 0..n {
            let c = cross(vertices[i], vertices[(i + 1) % n], vertices[(i + 2) % n]);
            if !(c > 0.0) {
                return Err(SimError::InvalidScene(
                    "polygon must be strictly convex and counterclockwise".into(),
                ));
            }
        }
        Ok(Self { vertices })
    }

    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]).expect("valid rectangle")
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Closed containment by half-plane tests.
    pub fn contains(&self, x: &Vector) -> bool {
        let p = [x[0], x[1]];
        self.edges().all(|(a, b)| cross(a, b, p) >= 0.0)
    }

    /// Signed distance to the boundary, positive inside.
    pub fn depth(&self, x: &Vector) -> f64 {
        let p = [x[0], x[1]];
        self.edges()
            .map(|(a, b)| {
                let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                cross(a, b, p) / len
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn area(&self) -> f64 {
        let o = self.vertices[0];
        self.vertices
            .windows(2)
            .map(|w| cross(o, w[0], w[1]))
            .sum::<f64>()
            / 2.0
    }

    pub fn centroid(&self) -> Vector {
        let o = self.vertices[0];
        let (mut cx, mut cy, mut a) = (0.0, 0.0, 0.0);
        for w in self.vertices.windows(2) {
            let t = cross(o, w[0], w[1]);
            cx += t * (o[0] + w[0][0] + w[1][0]) / 3.0;
            cy += t * (o[1] + w[0][1] + w[1][1]) / 3.0;
            a += t;
        }
        Vector::from_vec(vec![cx / a, cy / a])
    }

    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Uniform interior sample by rejection from the bounding box.
    pub fn sample(&self, rng: &mut impl Rng) -> Vector {
        let (lo, hi) = self.bbox();
        loop {
            let x = Vector::from_vec(vec![rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])]);
            if self.contains(&x) {
                return x;
            }
        }
    }

    /// Interiors overlap, by the separating axis test over edge normals.
    pub fn overlaps(&self, other: &Polygon) -> bool {
        let axes = self.edges().chain(other.edges()).map(|(a, b)| [b[1] - a[1], a[0] - b[0]]);
        for ax in axes {
            let proj = |p: &Polygon| {
                p.vertices
                    .iter()
                    .map(|v| v[0] * ax[0] + v[1] * ax[1])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), s| (l.min(s), h.max(s)))
            };
            let (l1, h1) = proj(self);
            let (l2, h2) = proj(other);
            if h1 <= l2 + 1e-12 || h2 <= l1 + 1e-12 {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub name: String,
    pub vertices: Polygon,
    pub valuation: SensorState,
    /// Where demonstrations that end in this region come to rest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alias {
    pub mode: String,
    pub shares_policy_of: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRegion {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub name: String,
    pub n: usize,
    pub workspace: Workspace,
    pub aps_env: Vec<String>,
    pub regions: Vec<Region>,
    pub background_name: String,
    pub background_valuation: SensorState,
    #[serde(default)]
    pub aliases: Vec<Alias>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<StartRegion>,
}

impl Scene {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: Scene = serde_json::from_str(text).map_err(|e| SimError::InvalidScene(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScene(m));
        if self.n != 2 || self.workspace.dim() != 2 {
            return bad("only planar scenes are supported".into());
        }
        let m = self.aps_env.len();
        if m == 0 {
            return bad("at least one sensor proposition is required".into());
        }
        let mut names = vec![self.background_name.as_str()];
        let mut vals = vec![&self.background_valuation];
        for r in &self.regions {
            if r.valuation.len() != m {
                return bad(format!("region {} has a valuation of the wrong length", r.name));
            }
            if names.contains(&r.name.as_str()) {
                return bad(format!("duplicate region name {}", r.name));
            }
            if vals.contains(&&r.valuation) {
                return bad(format!("region {} repeats a sensor valuation", r.name));
            }
            for v in r.vertices.vertices() {
                if !self.workspace.contains(&Vector::from_vec(v.to_vec())) {
                    return bad(format!("region {} leaves the workspace", r.name));
                }
            }
            names.push(&r.name);
            vals.push(&r.valuation);
        }
        if self.background_valuation.len() != m {
            return bad("background valuation has the wrong length".into());
        }
        for (i, a) in self.regions.iter().enumerate() {
            for b in &self.regions[i + 1..] {
                if a.vertices.overlaps(&b.vertices) {
                    return bad(format!("regions {} and {} overlap", a.name, b.name));
                }
            }
        }
        for al in &self.aliases {
            if !names.contains(&al.shares_policy_of.as_str()) {
                return bad(format!("alias {} points at unknown region", al.mode));
            }
        }
        Ok(())
    }

    /// Region names with the background last; ids follow this order.
    pub fn region_names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.regions.iter().map(|r| r.name.as_str()).collect();
        v.push(&self.background_name);
        v
    }

    pub fn region(&self, name: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.name == name)
    }

    pub fn is_region(&self, name: &str) -> bool {
        name == self.background_name || self.region(name).is_some()
    }

    /// Index of the first region containing `x`, or `None` for background.
    pub fn locate(&self, x: &Vector) -> Option<usize> {
        self.regions.iter().position(|r| r.vertices.contains(x))
    }

    pub fn region_at(&self, x: &Vector) -> &str {
        match self.locate(x) {
            Some(i) => &self.regions[i].name,
            None => &self.background_name,
        }
    }

    /// Sensor valuation at `x`; shared edges resolve to the lower index.
    pub fn sense(&self, x: &Vector) -> SensorState {
        match self.locate(x) {
            Some(i) => self.regions[i].valuation.clone(),
            None => self.background_valuation.clone(),
        }
    }

    pub fn in_region(&self, name: &str, x: &Vector) -> bool {
        self.region_at(x) == name
    }

    /// Scene-level labels: one mode per region, background last.
    pub fn label_map(&self) -> LabelMap {
        let mut entries: Vec<(ModeId, SensorState)> = self
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| (ModeId::new(i, r.name.clone()), r.valuation.clone()))
            .collect();
        entries.push((
            ModeId::new(self.regions.len(), self.background_name.clone()),
            self.background_valuation.clone(),
        ));
        LabelMap::new(self.aps_env.clone(), entries).expect("validated scene")
    }

    /// Region whose policies an automaton mode uses.
    pub fn policy_region<'a>(&'a self, mode: &'a str) -> &'a str {
        self.aliases
            .iter()
            .find(|a| a.mode == mode)
            .map_or(mode, |a| a.shares_policy_of.as_str())
    }

    /// Checks that every spec mode resolves to a region with the same
    /// sensor valuation.
    pub fn validate_against(&self, spec: &Gr1Spec) -> Result<(), SimError> {
        if spec.ap_env != self.aps_env {
            return Err(SimError::InvalidScene("sensor propositions differ from the spec".into()));
        }
        let labels = spec.label_map().map_err(|e| SimError::InvalidScene(e.to_string()))?;
        for m in spec.modes() {
            let region = self.policy_region(&m.name);
            let val = if region == self.background_name {
                &self.background_valuation
            } else {
                &self
                    .region(region)
                    .ok_or_else(|| SimError::UnknownRegion(region.to_string()))?
                    .valuation
            };
            if labels.valuation_of(&m.name) != Some(val) {
                return Err(SimError::InvalidScene(format!(
                    "mode {} is bound to a different valuation than region {region}",
                    m.name
                )));
            }
        }
        Ok(())
    }

    /// Uniform sample in a region (background by rejection).
    pub fn sample_in(&self, name: &str, rng: &mut impl Rng) -> Result<Vector, SimError> {
        if let Some(r) = self.region(name) {
            return Ok(r.vertices.sample(rng));
        }
        if name != self.background_name {
            return Err(SimError::UnknownRegion(name.to_string()));
        }
        for _ in 0..100_000 {
            let x = uniform_in(&self.workspace, rng);
            if self.locate(&x).is_none() {
                return Ok(x);
            }
        }
        Err(SimError::InvalidScene("background is empty".into()))
    }

    /// Rest point for demonstrations ending in a region.
    pub fn anchor(&self, name: &str) -> Option<Vector> {
        let r = self.region(name)?;
        Some(match r.anchor {
            Some(a) => Vector::from_vec(a.to_vec()),
            None => r.vertices.centroid(),
        })
    }
}

fn uniform_in(ws: &Workspace, rng: &mut impl Rng) -> Vector {
    Vector::from_iterator(ws.dim(), ws.lo.iter().zip(&ws.hi).map(|(l, h)| rng.random_range(*l..*h)))
}

/// Convex polygon through `vertex_count` points on a random ellipse inside
/// the unit box, with area at least 5% of the box.
pub fn random_convex_mode(seed: u64, vertex_count: usize) -> Polygon {
    assert!(vertex_count >= 3, "a polygon needs at least 3 vertices");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let cx = rng.random_range(0.3..0.7);
        let cy = rng.random_range(0.3..0.7);
        let a = rng.random_range(0.15..0.45);
        let b = rng.random_range(0.15..0.45);
        let rot: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let mut angles: Vec<f64> = (0..vertex_count)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        angles.sort_by(f64::total_cmp);
        let verts: Vec<[f64; 2]> = angles
            .iter()
            .map(|t| {
                let (x, y) = (a * t.cos(), b * t.sin());
                [cx + x * rot.cos() - y * rot.sin(), cy + x * rot.sin() + y * rot.cos()]
            })
            .collect();
        let inside = verts.iter().all(|v| (0.0..=1.0).contains(&v[0]) && (0.0..=1.0).contains(&v[1]));
        if !inside {
            continue;
        }
        if let Ok(p) = Polygon::new(verts) {
            if p.area() >= 0.05 {
                return p;
            }
        }
    }
}

/// A scene with one convex mode inside a background.
pub fn single_mode_scene(polygon: Polygon, anchor: Option<[f64; 2]>) -> Scene {
    Scene {
        name: "single".into(),
        n: 2,
        workspace: Workspace::unit(2),
        aps_env: vec!["in".into()],
        regions: vec![Region {
            name: "m".into(),
            vertices: polygon,
            valuation: SensorState::new(vec![true]),
            anchor,
        }],
        background_name: "out".into(),
        background_valuation: SensorState::new(vec![false]),
        aliases: vec![],
        start: None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub dt: f64,
    pub speed: f64,
    /// Amplitude of the smooth velocity noise relative to `speed`.
    pub noise: f64,
    /// How far past a guard the crossing target sits.
    pub guard_offset: f64,
    /// How far before a guard the via-point sits.
    pub via_offset: f64,
    /// Guard points are drawn among those within this extra distance of the
    /// closest one.
    pub guard_spread: f64,
    pub stop_radius: f64,
    pub max_steps: usize,
    pub retries: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            speed: 0.5,
            noise: 0.05,
            guard_offset: 0.03,
            via_offset: 0.06,
            guard_spread: 0.25,
            stop_radius: 1e-3,
            max_steps: 5000,
            retries: 50,
        }
    }
}

/// Points where a trajectory can cross from region `from` into `to`:
/// (point before the guard, point past the guard).
pub fn guard_candidates(scene: &Scene, from: &str, to: &str, cfg: &DemoConfig) -> Vec<(Vector, Vector)> {
    let (poly, sign) = match (scene.region(to), scene.region(from)) {
        (Some(r), _) => (&r.vertices, 1.0),
        (None, Some(r)) => (&r.vertices, -1.0),
        (None, None) => return vec![],
    };
    let mut out = Vec::new();
    for (a, b) in poly.edges() {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        // inward normal of a counterclockwise edge; `sign` flips it to point into `to`
        let n = Vector::from_vec(vec![-(b[1] - a[1]) / len, (b[0] - a[0]) / len]) * sign;
        for k in 1..40 {
            let t = k as f64 / 40.0;
            let q = Vector::from_vec(vec![a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            let before = &q - &n * cfg.via_offset;
            let past = &q + &n * cfg.guard_offset;
            if !scene.workspace.contains(&before) || !scene.workspace.contains(&past) {
                continue;
            }
            if scene.in_region(from, &before) && scene.in_region(to, &past) {
                // the straight hop must not touch a third region
                let clean = (0..=10).all(|s| {
                    let x = &before + (&past - &before) * (s as f64 / 10.0);
                    let r = scene.region_at(&x);
                    r == from || r == to
                });
                if clean {
                    out.push((before, past));
                }
            }
        }
    }
    out
}

struct Noise {
    state: Vector,
    rho: f64,
    sigma: f64,
    normal: Normal<f64>,
}

impl Noise {
    fn new(sigma: f64) -> Self {
        Self {
            state: Vector::zeros(2),
            rho: 0.95,
            sigma,
            normal: Normal::new(0.0, 1.0).expect("unit normal"),
        }
    }

    fn next(&mut self, rng: &mut impl Rng) -> Vector {
        let k = (1.0 - self.rho * self.rho).sqrt() * self.sigma;
        for i in 0..2 {
            self.state[i] = self.rho * self.state[i] + k * self.normal.sample(rng);
        }
        self.state.clone()
    }
}

fn start_point(scene: &Scene, first: &str, rng: &mut impl Rng) -> Result<Vector, SimError> {
    if let Some(s) = scene.start.as_ref().filter(|s| scene.in_region(first, &Vector::from_vec(s.center.to_vec()))) {
        for _ in 0..1000 {
            let r = s.radius * rng.random::<f64>().sqrt();
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let x = Vector::from_vec(vec![s.center[0] + r * a.cos(), s.center[1] + r * a.sin()]);
            if scene.in_region(first, &x) {
                return Ok(x);
            }
        }
        return Err(SimError::GenerationFailed("start region misses the first mode".into()));
    }
    match scene.region(first) {
        // start between the centroid and a random vertex
        Some(r) => {
            let c = r.vertices.centroid();
            let vs = r.vertices.vertices();
            let v = vs[rng.random_range(0..vs.len())];
            let t = rng.random_range(0.55..0.8);
            Ok(&c + (Vector::from_vec(v.to_vec()) - &c) * t)
        }
        None => scene.sample_in(first, rng),
    }
}

fn one_demo(
    scene: &Scene,
    sequence: &[&str],
    start: Option<&Vector>,
    cfg: &DemoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Demonstration, SimError> {
    let mut x = match start {
        Some(x) => x.clone(),
        None => start_point(scene, sequence[0], rng)?,
    };
    let mut noise = Noise::new(cfg.noise * cfg.speed);
    let mut samples: Vec<Sample> = Vec::new();
    let record = |x: &Vector, v: &Vector| Sample {
        x: x.clone(),
        xdot: v.clone(),
        alpha: scene.sense(x),
    };
    let mut steps = 0;
    for (i, pair) in sequence.windows(2).enumerate() {
        let (from, to) = (pair[0], pair[1]);
        let cands = guard_candidates(scene, from, to, cfg);
        if cands.is_empty() {
            return Err(SimError::GenerationFailed(format!("no guard from {from} to {to}")));
        }
        let dist = |c: &(Vector, Vector)| (&c.0 - &x).norm();
        let best = cands.iter().map(dist).fold(f64::INFINITY, f64::min);
        let near: Vec<&(Vector, Vector)> = cands.iter().filter(|c| dist(c) <= best + cfg.guard_spread).collect();
        let (via, past) = near[rng.random_range(0..near.len())].clone();
        // head for the via-point, then through the guard
        let mut target = via;
        let mut through = false;
        loop {
            steps += 1;
            if steps > cfg.max_steps {
                return Err(SimError::GenerationFailed("step budget exhausted".into()));
            }
            let d = &target - &x;
            if !through && d.norm() < 0.02 {
                target = past.clone();
                through = true;
                continue;
            }
            let mut v = d.normalize() * cfg.speed + noise.next(rng);
            if i == 0 && samples.is_empty() {
                v = d.normalize() * cfg.speed;
            }
            samples.push(record(&x, &v));
            x += &v * cfg.dt;
            if through && scene.in_region(to, &x) {
                break;
            }
            if scene.region_at(&x) != from {
                return Err(SimError::GenerationFailed(format!("left {from} early")));
            }
        }
    }
    let last = *sequence.last().expect("nonempty sequence");
    let goal = match scene.anchor(last) {
        Some(g) => g,
        None => {
            // background goal: stay a little past the last guard
            x.clone()
        }
    };
    let gain = cfg.speed / 0.1;
    loop {
        steps += 1;
        if steps > cfg.max_steps {
            return Err(SimError::GenerationFailed("step budget exhausted".into()));
        }
        let d = &goal - &x;
        if d.norm() <= cfg.stop_radius {
            samples.push(record(&x, &Vector::zeros(2)));
            break;
        }
        let mut v = &d * gain;
        if v.norm() > cfg.speed {
            v *= cfg.speed / v.norm();
        }
        // noise fades near the goal so the demo comes to rest
        v += noise.next(rng) * (d.norm() / 0.1).min(1.0);
        samples.push(record(&x, &v));
        x += &v * cfg.dt;
        if scene.region_at(&x) != last {
            return Err(SimError::GenerationFailed(format!("left {last} while settling")));
        }
    }
    Ok(Demonstration::new(samples, cfg.dt)?)
}

/// Synthetic demonstrations visiting the regions of `sequence` in order.
/// Every returned demo senses exactly that region sequence.
pub fn generate_demos(
    scene: &Scene,
    sequence: &[&str],
    count: usize,
    seed: u64,
    cfg: &DemoConfig,
) -> Result<Vec<Demonstration>, SimError> {
    generate(scene, sequence, &vec![None; count], seed, cfg)
}

/// As [`generate_demos`], one demonstration per given start state.
pub fn generate_demos_from(
    scene: &Scene,
    sequence: &[&str],
    starts: &[Vector],
    seed: u64,
    cfg: &DemoConfig,
) -> Result<Vec<Demonstration>, SimError> {
    for x in starts {
        if !scene.in_region(sequence.first().copied().unwrap_or_default(), x) {
            return Err(SimError::GenerationFailed("start state is not in the first region".into()));
        }
    }
    let starts: Vec<Option<&Vector>> = starts.iter().map(Some).collect();
    generate(scene, sequence, &starts, seed, cfg)
}

fn generate(
    scene: &Scene,
    sequence: &[&str],
    starts: &[Option<&Vector>],
    seed: u64,
    cfg: &DemoConfig,
) -> Result<Vec<Demonstration>, SimError> {
    if sequence.is_empty() {
        return Err(SimError::GenerationFailed("empty mode sequence".into()));
    }
    for s in sequence {
        if !scene.is_region(s) {
            return Err(SimError::UnknownRegion(s.to_string()));
        }
    }
    let labels = scene.label_map();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(starts.len());
    let mut last_err = None;
    for start in starts {
        let mut done = false;
        for _ in 0..cfg.retries {
            match one_demo(scene, sequence, *start, cfg, &mut rng) {
                Ok(d) => {
                    let visited = region_sequence(&d, &labels)?;
                    if visited == sequence {
                        out.push(d);
                        done = true;
                        break;
                    }
                    last_err = Some(SimError::GenerationFailed(format!("visited {visited:?}")));
                }
                Err(e @ SimError::GenerationFailed(_)) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        if !done {
            return Err(last_err.unwrap_or_else(|| SimError::GenerationFailed("no attempt succeeded".into())));
        }
    }
    Ok(out)
}

/// Collapsed sequence of region names sensed along a demo.
pub fn region_sequence(demo: &Demonstration, labels: &LabelMap) -> Result<Vec<String>, CoreError> {
    let mut out: Vec<String> = Vec::new();
    for s in &demo.samples {
        let m = labels.label_mode(&s.alpha)?;
        if out.last() != Some(&m.name) {
            out.push(m.name);
        }
    }
    Ok(out)
}

/// Picks demo states uniformly and displaces them with isotropic Gaussian
/// noise of σ = noise_pct% of the workspace size, clipped to the workspace.
pub fn sample_initial_states(
    demos: &[Demonstration],
    noise_pct: f64,
    count: usize,
    seed: u64,
    workspace: &Workspace,
) -> Vec<Vector> {
    assert!(noise_pct >= 0.0, "noise must be nonnegative");
    let states: Vec<&Vector> = demos.iter().flat_map(|d| d.samples.iter().map(|s| &s.x)).collect();
    if states.is_empty() || count == 0 {
        return vec![];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = noise_pct / 100.0 * workspace.size();
    (0..count)
        .map(|_| {
            let x = states[rng.random_range(0..states.len())].clone();
            if sigma == 0.0 {
                return x;
            }
            let normal = Normal::new(0.0, sigma).expect("positive sigma");
            let d = Vector::from_fn(x.len(), |_, _| normal.sample(&mut rng));
            workspace.clip(&(x + d))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbationKind {
    /// Adds the vector to the state.
    Displace,
    /// Moves the state to the vector.
    Teleport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub step: usize,
    pub kind: PerturbationKind,
    pub vector: Vec<f64>,
}

impl Perturbation {
    pub fn apply(&self, x: &Vector) -> Vector {
        let v = Vector::from_column_slice(&self.vector);
        match self.kind {
            PerturbationKind::Displace => x + v,
            PerturbationKind::Teleport => v,
        }
    }
}

/// Finite list of perturbations applied after the integration step with the
/// matching index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PerturbationSchedule {
    pub items: Vec<Perturbation>,
}

impl PerturbationSchedule {
    pub fn new(mut items: Vec<Perturbation>) -> Self {
        items.sort_by_key(|p| p.step);
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn at(&self, step: usize) -> impl Iterator<Item = &Perturbation> {
        self.items.iter().filter(move |p| p.step == step)
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: Self = serde_json::from_str(text).map_err(|e| SimError::InvalidScene(e.to_string()))?;
        Ok(Self::new(s.items))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(a: f64, b: f64) -> Vector {
        Vector::from_vec(vec![a, b])
    }

    #[test]
    fn polygon_basics() {
        let p = Polygon::rect(0.0, 0.0, 2.0, 1.0);
        assert_eq!(p.area(), 2.0);
        assert_eq!(p.centroid(), v(1.0, 0.5));
        assert!(p.contains(&v(2.0, 0.5)));
        assert!(!p.contains(&v(2.01, 0.5)));
        assert!((p.depth(&v(1.0, 0.25)) - 0.25).abs() < 1e-12);
        assert!(Polygon::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).is_err());
    }

    #[test]
    fn overlap_test() {
        let a = Polygon::rect(0.0, 0.0, 1.0, 1.0);
        assert!(!a.overlaps(&Polygon::rect(1.0, 0.0, 2.0, 1.0)));
        assert!(a.overlaps(&Polygon::rect(0.5, 0.5, 2.0, 2.0)));
    }

    #[test]
    fn random_modes_are_seeded_and_valid() {
        let a = random_convex_mode(1, 8);
        assert_eq!(a, random_convex_mode(1, 8));
        assert_eq!(a.vertices().len(), 8);
        assert_eq!(random_convex_mode(4, 3).vertices().len(), 3);
        assert_ne!(a, random_convex_mode(2, 8));
        for s in 0..50 {
            let p = random_convex_mode(s, 6);
            assert!(p.area() >= 0.05);
        }
    }

    #[test]
    fn zero_count_and_zero_noise() {
        let demo = Demonstration::new(
            vec![Sample { x: v(0.2, 0.3), xdot: v(0.0, 0.0), alpha: SensorState::new(vec![true]) }],
            0.1,
        )
        .unwrap();
        let ws = Workspace::unit(2);
        assert!(sample_initial_states(std::slice::from_ref(&demo), 5.0, 0, 1, &ws).is_empty());
        let xs = sample_initial_states(&[demo], 0.0, 5, 1, &ws);
        assert!(xs.iter().all(|x| *x == v(0.2, 0.3)));
    }
}
