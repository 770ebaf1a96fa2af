//! Scenario files shipped with the crate.

use super::spec::ScenarioSpec;

/// `(name, json)` for every bundled scenario.
pub const BUNDLED: [(&str, &str); 4] = [
    ("d1", include_str!("../../scenarios/d1_storytelling.json")),
    ("d2", include_str!("../../scenarios/d2_image_scaling.json")),
    ("d3", include_str!("../../scenarios/d3_furniture.json")),
    ("d4", include_str!("../../scenarios/d4_touch.json")),
];

/// Looks a bundled scenario up by short name (`d1`) or full id.
pub fn bundled(name: &str) -> Option<ScenarioSpec> {
    BUNDLED.iter().find_map(|(short, text)| {
        let spec = ScenarioSpec::from_json(text).expect("bundled scenario is valid");
        (*short == name || spec.id == name).then_some(spec)
    })
}

/// `(name, id, description)` of each bundled scenario.
pub fn list_scenarios() -> Vec<(String, String, String)> {
    BUNDLED
        .iter()
        .map(|(short, text)| {
            let spec = ScenarioSpec::from_json(text).expect("bundled scenario is valid");
            (short.to_string(), spec.id, spec.description)
        })
        .collect()
}
