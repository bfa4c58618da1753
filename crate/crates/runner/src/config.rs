//! Experiment configuration: one JSON document, fail-closed on unknown keys,
//! resolved against a scale preset before anything runs.

use std::path::{Path, PathBuf};

use collusion_core::additive::Entry;
use collusion_core::analysis::AnalysisConfig;
use collusion_core::market::{ExternalityMatrix, MarketParams};
use collusion_core::qlearn::UpdateTarget;
use collusion_core::{LearningConfig64, MarketParams64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, RunnerError};

pub const SCHEMA_VERSION: u32 = 1;
/// Longest run the desk preset accepts.
pub const DESK_MAX_STEPS: u64 = 10_000_000;
/// Largest number of points a single axis may expand to.
pub const MAX_AXIS_POINTS: usize = 100_000;

/// Scale of an experiment. Recorded in every output so desk-scale results
/// are never mistaken for full-scale ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Full scale: 5×10⁸ steps, 100 runs per point.
    Full,
    /// Laptop scale: 2×10⁶ steps, 20 runs per point.
    #[default]
    Desk,
}

impl Preset {
    pub fn t_steps(self) -> u64 {
        match self {
            Preset::Full => 500_000_000,
            Preset::Desk => 2_000_000,
        }
    }

    pub fn runs_per_point(self) -> usize {
        match self {
            Preset::Full => 100,
            Preset::Desk => 20,
        }
    }

    pub fn m(self) -> usize {
        15
    }

    pub fn max_steps(self) -> Option<u64> {
        match self {
            Preset::Full => None,
            Preset::Desk => Some(DESK_MAX_STEPS),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Full => "full",
            Preset::Desk => "desk",
        }
    }
}

fn two() -> usize {
    2
}

/// Static market at the base point; sweeps overwrite one coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketBlock {
    #[serde(default = "two")]
    pub n_platforms: usize,
    /// `[β_b, β_s]`.
    pub beta: [f64; 2],
    /// `[u⁰_b, u⁰_s]`.
    pub u0: [f64; 2],
    pub delta: f64,
    /// `[φ_bb, φ_bs, φ_sb, φ_ss]`.
    pub phi: [f64; 4],
}

impl MarketBlock {
    /// `β = 1`, `u⁰ = −2`, `δ = 0.05`, `Φ = 0`.
    pub fn baseline() -> Self {
        Self {
            n_platforms: 2,
            beta: [1.0, 1.0],
            u0: [-2.0, -2.0],
            delta: 0.05,
            phi: [0.0; 4],
        }
    }

    pub fn params(&self) -> std::result::Result<MarketParams64, collusion_core::market::MarketError> {
        MarketParams::new(
            self.n_platforms,
            self.beta,
            self.u0,
            self.delta,
            ExternalityMatrix::from_array(self.phi),
        )
    }
}

/// Learning overrides; anything absent comes from the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_report: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temp0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temp_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_target: Option<UpdateTarget>,
}

/// Inclusive arithmetic range `start, start + step, …, ≤ stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

/// Values of a swept coordinate: an explicit list or a range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValues {
    List(Vec<f64>),
    Range(RangeSpec),
}

impl AxisValues {
    pub fn expand(&self) -> std::result::Result<Vec<f64>, String> {
        let values = match self {
            AxisValues::List(v) => v.clone(),
            AxisValues::Range(r) => {
                if !(r.start.is_finite() && r.stop.is_finite() && r.step.is_finite()) {
                    return Err("range bounds must be finite".into());
                }
                if r.step <= 0.0 || r.stop < r.start {
                    return Err(format!(
                        "need step > 0 and stop >= start, got start {} stop {} step {}",
                        r.start, r.stop, r.step
                    ));
                }
                // tolerate rounding in (stop − start)/step
                let n = ((r.stop - r.start) / r.step + 1e-9).floor() as usize + 1;
                if n > MAX_AXIS_POINTS {
                    return Err(format!("range expands to {n} points, limit is {MAX_AXIS_POINTS}"));
                }
                (0..n).map(|i| r.start + i as f64 * r.step).collect()
            }
        };
        if values.is_empty() {
            return Err("no values".into());
        }
        if values.len() > MAX_AXIS_POINTS {
            return Err(format!("{} values, limit is {MAX_AXIS_POINTS}", values.len()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(format!("non-finite value {v}"));
        }
        Ok(values)
    }
}

/// The single swept axis of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SweepSpec {
    /// One or two entries of `Φ` over a grid (Cartesian product for two).
    PhiGrid { entries: Vec<Entry>, values: AxisValues },
    /// `Φ` entries drawn i.i.d. from `N(0, 1)`, one draw per point.
    PhiRandom { samples: usize },
    /// `β` of both sides.
    Beta { values: AxisValues },
    /// `u⁰` of both sides.
    U0 { values: AxisValues },
    Delta { values: AxisValues },
    Rho { values: AxisValues },
}

impl SweepSpec {
    pub fn axis_name(&self) -> &'static str {
        match self {
            SweepSpec::PhiGrid { .. } => "phi-grid",
            SweepSpec::PhiRandom { .. } => "phi-random",
            SweepSpec::Beta { .. } => "beta",
            SweepSpec::U0 { .. } => "u0",
            SweepSpec::Delta { .. } => "delta",
            SweepSpec::Rho { .. } => "rho",
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let check = |values: &AxisValues, ok: fn(f64) -> bool, what: &str| -> std::result::Result<(), String> {
            let v = values.expand().map_err(|e| format!("values: {e}"))?;
            match v.iter().find(|x| !ok(**x)) {
                Some(x) => Err(format!("values: {what}, got {x}")),
                None => Ok(()),
            }
        };
        match self {
            SweepSpec::PhiGrid { entries, values } => {
                if entries.is_empty() || entries.len() > 2 {
                    return Err(format!("entries: need one or two entries, got {}", entries.len()));
                }
                if entries.len() == 2 && entries[0] == entries[1] {
                    return Err("entries: the two entries must differ".into());
                }
                check(values, |_| true, "")
            }
            SweepSpec::PhiRandom { samples } => {
                if *samples == 0 || *samples > MAX_AXIS_POINTS {
                    return Err(format!("samples: must lie in 1..={MAX_AXIS_POINTS}, got {samples}"));
                }
                Ok(())
            }
            SweepSpec::Beta { values } => check(values, |x| x > 0.0, "beta must be positive"),
            SweepSpec::U0 { values } => check(values, |_| true, ""),
            SweepSpec::Delta { values } => check(values, |x| x > 0.0 && x < 1.0, "delta must lie in (0, 1)"),
            SweepSpec::Rho { values } => check(values, |x| x >= 0.0, "rho must be non-negative"),
        }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("results")
}

fn yes() -> bool {
    true
}

/// Where and what to write. Not part of the config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Binary dumps of both final Q-tables (about 90 MB per run at M = 15).
    #[serde(default)]
    pub save_qdumps: bool,
    /// Joint-action tails of every run.
    #[serde(default = "yes")]
    pub save_traces: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            save_qdumps: false,
            save_traces: true,
        }
    }
}

/// Confidence band of the per-point mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapBlock {
    pub level: f64,
    pub resamples: usize,
}

impl Default for BootstrapBlock {
    fn default() -> Self {
        Self {
            level: 0.99,
            resamples: 10_000,
        }
    }
}

/// The configuration file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub preset: Preset,
    pub market: MarketBlock,
    #[serde(default)]
    pub learning: LearningBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs_per_point: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub bootstrap: BootstrapBlock,
}

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub update_target: Option<UpdateTarget>,
    pub out: Option<PathBuf>,
}

/// A validated configuration with every default filled in. Its JSON form is
/// hashed to name the results directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub schema_version: u32,
    pub preset: Preset,
    pub market: MarketBlock,
    pub learning: LearningConfig64,
    pub sweep: Option<SweepSpec>,
    pub runs_per_point: usize,
    pub seed: u64,
    pub analysis: AnalysisConfig,
    pub bootstrap: BootstrapBlock,
}

fn config_err(path: &str, msg: impl std::fmt::Display) -> RunnerError {
    RunnerError::Config(format!("{path}: {msg}"))
}

impl ExperimentConfig {
    /// Parses a document; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunnerError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// A complete example for `preset`: a δ sweep over the baseline market.
    pub fn template(preset: Preset) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            preset,
            market: MarketBlock::baseline(),
            learning: LearningBlock::default(),
            sweep: Some(SweepSpec::Delta {
                values: AxisValues::List(vec![0.05, 0.8]),
            }),
            runs_per_point: Some(preset.runs_per_point()),
            seed: 0,
            output: OutputBlock::default(),
            analysis: AnalysisConfig::default(),
            bootstrap: BootstrapBlock::default(),
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(p) = o.preset {
            self.preset = p;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.update_target {
            self.learning.update_target = Some(t);
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        self.market.params().map_err(|e| config_err("market", e))?;

        let preset = self.preset;
        let l = &self.learning;
        let base = LearningConfig64::default();
        let learning = LearningConfig64 {
            alpha: l.alpha.unwrap_or(base.alpha),
            m: l.m.unwrap_or(preset.m()),
            epsilon: l.epsilon.unwrap_or(base.epsilon),
            t_steps: l.t_steps.unwrap_or(preset.t_steps()),
            k_report: l.k_report.unwrap_or(base.k_report),
            tail_window: l.tail_window.unwrap_or(base.tail_window),
            temp0: l.temp0.or(base.temp0),
            lambda: l.lambda.or(base.lambda),
            temp_floor: l.temp_floor.unwrap_or(base.temp_floor),
            rho: l.rho.unwrap_or(base.rho),
            update_target: l.update_target.unwrap_or(base.update_target),
            seed: self.seed,
        };
        learning.validate().map_err(|e| config_err("learning", e))?;
        if let Some(cap) = preset.max_steps() {
            if learning.t_steps > cap {
                return Err(config_err(
                    "learning.t_steps",
                    format!("the {} preset caps t_steps at {cap}, got {}", preset.as_str(), learning.t_steps),
                ));
            }
        }

        let runs_per_point = self.runs_per_point.unwrap_or(preset.runs_per_point());
        if runs_per_point == 0 {
            return Err(config_err("runs_per_point", "must be at least 1"));
        }
        if let Some(s) = &self.sweep {
            s.validate().map_err(|e| config_err("sweep", e))?;
        }
        let b = self.bootstrap;
        if !(b.level > 0.0 && b.level < 1.0) {
            return Err(config_err("bootstrap.level", format!("must lie in (0, 1), got {}", b.level)));
        }
        if b.resamples == 0 {
            return Err(config_err("bootstrap.resamples", "must be at least 1"));
        }
        if self.analysis.window == 0 || self.analysis.window > learning.tail_window {
            return Err(config_err(
                "analysis.window",
                format!(
                    "must lie in 1..={} (learning.tail_window), got {}",
                    learning.tail_window, self.analysis.window
                ),
            ));
        }
        if self.analysis.responder > 1 {
            return Err(config_err("analysis.responder", "must be 0 or 1"));
        }

        Ok(ResolvedConfig {
            schema_version: SCHEMA_VERSION,
            preset,
            market: self.market.clone(),
            learning,
            sweep: self.sweep.clone(),
            runs_per_point,
            seed: self.seed,
            analysis: self.analysis,
            bootstrap: b,
        })
    }
}

impl ResolvedConfig {
    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    /// The same experiment restricted to its base point.
    pub fn without_sweep(&self) -> Self {
        Self {
            sweep: None,
            ..self.clone()
        }
    }
}
