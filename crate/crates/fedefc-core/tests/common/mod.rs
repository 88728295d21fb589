//! Shared helpers for the integration suites.

use fedefc_core::config::ExperimentConfig;

/// Parses a config from `method=...` plus extra `key=value` lines.
pub fn config_with(method: &str, extra: &[&str]) -> ExperimentConfig {
    let mut text = format!("method={method}\n");
    for line in extra {
        text.push_str(line);
        text.push('\n');
    }
    ExperimentConfig::parse_str(&text).unwrap()
}

/// A reduced-scale config that keeps full-pipeline tests under a second.
/// Lines in `extra` override the base values for the same key.
pub fn small_config(method: &str, extra: &[&str]) -> ExperimentConfig {
    let base = [
        "per_class=80",
        "test_per_class=40",
        "num_clients=6",
        "rounds=12",
        "warmup_rounds=2",
        "client_fraction=0.5",
        "local_epochs=2",
        "seed=9",
    ];
    let key_of = |line: &str| line.split('=').next().unwrap().trim().to_string();
    let overridden: Vec<String> = extra.iter().map(|l| key_of(l)).collect();
    let mut lines: Vec<&str> = base
        .iter()
        .filter(|l| !overridden.contains(&key_of(l)))
        .copied()
        .collect();
    lines.extend_from_slice(extra);
    config_with(method, &lines)
}
