#![allow(dead_code)]

use std::path::Path;

use collusion_runner::results::RunRecord;
use collusion_runner::{ExperimentConfig, ResolvedConfig};

/// A small grid and short runs: a sweep point finishes in well under a second.
pub fn tiny_config(sweep: &str, runs: usize, out: &Path) -> String {
    format!(
        r#"{{
    "schema_version": 1,
    "preset": "desk",
    "market": {{"beta": [1, 1], "u0": [-2, -2], "delta": 0.05, "phi": [0, 0, 0, 0]}},
    "learning": {{"m": 4, "t_steps": 30000, "tail_window": 400}},
    "analysis": {{"window": 400}},
    "sweep": {sweep},
    "runs_per_point": {runs},
    "seed": 11,
    "output": {{"dir": {out:?}}}
}}"#
    )
}

pub fn resolve(text: &str) -> ResolvedConfig {
    ExperimentConfig::from_json(text).unwrap().resolve().unwrap()
}

/// Records with the timing field cleared.
pub fn untimed(records: &[RunRecord]) -> Vec<RunRecord> {
    records
        .iter()
        .map(|r| RunRecord {
            wall_time_secs: 0.0,
            ..r.clone()
        })
        .collect()
}

/// `records.jsonl` with the timing field removed from every line.
pub fn untimed_jsonl(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| {
            let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
            v.as_object_mut().unwrap().remove("wall_time_secs");
            serde_json::to_string(&v).unwrap()
        })
        .collect::<Vec<_>>()
        .join("\n")
}
