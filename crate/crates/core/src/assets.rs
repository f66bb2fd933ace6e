//! Task scenes and specifications shipped with the crate.

use crate::ltl::{Gr1Spec, LtlError};
use crate::sim::{Scene, SimError};

pub const SPEC_NAMES: [&str; 9] = [
    "scooping_full",
    "scooping_partial",
    "cooking_cb",
    "cooking_bc",
    "cooking_c",
    "cooking_cc",
    "color_a",
    "color_b",
    "color_c",
];

pub fn spec_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "scooping_full" => include_str!("../assets/specs/scooping_full.ltl"),
        "scooping_partial" => include_str!("../assets/specs/scooping_partial.ltl"),
        "cooking_cb" => include_str!("../assets/specs/cooking_cb.ltl"),
        "cooking_bc" => include_str!("../assets/specs/cooking_bc.ltl"),
        "cooking_c" => include_str!("../assets/specs/cooking_c.ltl"),
        "cooking_cc" => include_str!("../assets/specs/cooking_cc.ltl"),
        "color_a" => include_str!("../assets/specs/color_a.ltl"),
        "color_b" => include_str!("../assets/specs/color_b.ltl"),
        "color_c" => include_str!("../assets/specs/color_c.ltl"),
        _ => return None,
    })
}

/// Parses a bundled spec. Panics only if a bundled file is malformed, which
/// the test suite rules out.
pub fn spec(name: &str) -> Option<Result<Gr1Spec, LtlError>> {
    spec_text(name).map(Gr1Spec::parse)
}

pub const SCENE_NAMES: [&str; 3] = ["scooping", "cooking", "color"];

pub fn scene_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "scooping" => include_str!("../assets/scenes/scooping.json"),
        "cooking" => include_str!("../assets/scenes/cooking.json"),
        "color" => include_str!("../assets/scenes/color.json"),
        _ => return None,
    })
}

pub fn scene(name: &str) -> Option<Result<Scene, SimError>> {
    scene_text(name).map(Scene::from_json)
}

/// Scene a bundled spec runs in.
pub fn scene_for_spec(spec_name: &str) -> Option<&'static str> {
    SCENE_NAMES.into_iter().find(|s| spec_name.starts_with(s))
}
