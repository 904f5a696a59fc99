//! Scenario files shipped with the crate.

use super::config::{parse_config, ConfigError, ScenarioConfig};

pub const BUNDLED: &[(&str, &str)] = &[
    ("honest_10", include_str!("../../scenarios/honest_10.scn")),
    ("alice_538", include_str!("../../scenarios/alice_538.scn")),
    ("trending_trump", include_str!("../../scenarios/trending_trump.scn")),
    ("dropout_3_of_10", include_str!("../../scenarios/dropout_3_of_10.scn")),
    ("corroboration", include_str!("../../scenarios/corroboration.scn")),
    ("tampered_glimmer", include_str!("../../scenarios/tampered_glimmer.scn")),
    ("replay", include_str!("../../scenarios/replay.scn")),
    ("remote_hosts", include_str!("../../scenarios/remote_hosts.scn")),
    ("confidential_bots", include_str!("../../scenarios/confidential_bots.scn")),
    ("public_bypass", include_str!("../../scenarios/public_bypass.scn")),
];

pub fn bundled_source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn bundled(name: &str) -> Option<Result<ScenarioConfig, ConfigError>> {
    bundled_source(name).map(parse_config)
}

/// The first line of a scenario's leading comment block.
pub fn summary(source: &str) -> String {
    source
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim())
        .collect::<Vec<_>>()
        .join(" ")
}
