//! Scenes, demonstrations and policy libraries for the shipped tasks.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tli_core::assets;
use tli_core::bc::BcConfig;
use tli_core::executor::{learn_library, PolicyKind, PolicyLibrary};
use tli_core::lpvds::FitConfig;
use tli_core::ltl::Gr1Spec;
use tli_core::sim::{generate_demos, generate_demos_from, DemoConfig, Scene};
use tli_core::types::{Demonstration, Vector};

use crate::BenchError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "BC")]
    Bc,
    #[serde(rename = "BC+mod")]
    BcMod,
    #[serde(rename = "DS")]
    Ds,
    #[serde(rename = "DS+mod")]
    DsMod,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Bc, Variant::BcMod, Variant::Ds, Variant::DsMod];

    pub fn modulated(self) -> bool {
        matches!(self, Variant::BcMod | Variant::DsMod)
    }

    pub fn is_ds(self) -> bool {
        matches!(self, Variant::Ds | Variant::DsMod)
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Bc => "BC",
            Variant::BcMod => "BC+mod",
            Variant::Ds => "DS",
            Variant::DsMod => "DS+mod",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.label().eq_ignore_ascii_case(s))
    }

    pub fn policy_kind(self, seed: u64) -> PolicyKind {
        if self.is_ds() {
            PolicyKind::Ds(FitConfig { seed, ..Default::default() })
        } else {
            PolicyKind::Bc(BcConfig { seed, ..Default::default() })
        }
    }
}

/// Everything needed to execute one of the shipped tasks.
#[derive(Clone, Debug)]
pub struct Task {
    pub scene: Scene,
    pub spec: Gr1Spec,
    pub demos: Vec<Demonstration>,
    pub library: Arc<PolicyLibrary>,
}

impl Task {
    pub fn start(&self) -> Vector {
        self.demos[0].samples[0].x.clone()
    }
}

pub fn load_scene(name: &str) -> Result<Scene, BenchError> {
    assets::scene(name)
        .ok_or_else(|| BenchError::UnknownAsset(name.to_string()))?
        .map_err(|e| BenchError::Setup(e.to_string()))
}

pub fn load_spec(name: &str) -> Result<Gr1Spec, BenchError> {
    assets::spec(name)
        .ok_or_else(|| BenchError::UnknownAsset(name.to_string()))?
        .map_err(|e| BenchError::Setup(e.to_string()))
}

/// Demonstrations for a scene: scooping a,b,c,d; cooking the two orders of
/// chicken and broccoli; color the tile row plus re-entries from above.
pub fn scene_demos(scene: &Scene, seed: u64) -> Result<Vec<Demonstration>, BenchError> {
    let cfg = DemoConfig::default();
    let err = |e: tli_core::sim::SimError| BenchError::Setup(e.to_string());
    let demos = match scene.name.as_str() {
        "scooping" => generate_demos(scene, &["a", "b", "c", "d"], 4, seed, &cfg).map_err(err)?,
        "cooking" => {
            // the pot is always left through the nearest gap, as a person would
            let cfg = DemoConfig { guard_spread: 0.05, ..cfg };
            let mut d = generate_demos(scene, &["w", "y", "d", "w", "g", "d"], 2, seed, &cfg).map_err(err)?;
            d.extend(generate_demos(scene, &["w", "g", "d", "w", "y", "d"], 2, seed + 1, &cfg).map_err(err)?);
            d
        }
        "color" => {
            let tiles = ["yellow", "blue", "green", "orange", "pink", "red"];
            let mut d = generate_demos(scene, &tiles, 2, seed, &cfg).map_err(err)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (k, tile) in ["yellow", "blue", "pink"].into_iter().enumerate() {
                let starts: Vec<Vector> = (0..2)
                    .map(|_| Vector::from_vec(vec![rng.random_range(0.05..0.95), rng.random_range(0.72..0.9)]))
                    .collect();
                d.extend(generate_demos_from(scene, &["dark", tile], &starts, seed + 10 + k as u64, &cfg).map_err(err)?);
            }
            d
        }
        other => return Err(BenchError::UnknownAsset(other.to_string())),
    };
    Ok(demos)
}

/// Loads a task and learns its policy library.
pub fn build_task(scene_name: &str, spec_name: &str, variant: Variant, seed: u64) -> Result<Task, BenchError> {
    let scene = load_scene(scene_name)?;
    let spec = load_spec(spec_name)?;
    scene.validate_against(&spec).map_err(|e| BenchError::Setup(e.to_string()))?;
    let demos = scene_demos(&scene, seed)?;
    let library = learn_library(&scene, &demos, &variant.policy_kind(seed)).map_err(|e| BenchError::Setup(e.to_string()))?;
    Ok(Task { scene, spec, demos, library: Arc::new(library) })
}

/// The scene a bundled spec runs in.
pub fn scene_for_spec(spec_name: &str) -> Result<&'static str, BenchError> {
    assets::scene_for_spec(spec_name).ok_or_else(|| BenchError::UnknownAsset(spec_name.to_string()))
}
