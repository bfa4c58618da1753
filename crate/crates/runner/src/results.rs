//! On-disk layout of a results directory and its record types.
//!
//! ```text
//! <out>/<config-hash>/
//!     config.json      resolved configuration
//!     manifest.json    point and run counts
//!     points.jsonl     one line per sweep point: equilibria, status, mean Δ̃, CI
//!     records.jsonl    one line per (point, run)
//!     summary.csv      point, coordinates, mean, ci_lo, ci_hi, n_ok, n_rejected, status, reason
//!     traces/          joint-action tails, little-endian u32
//!     qdumps/          final Q-tables (optional)
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use collusion_core::qlearn::UpdateTarget;
use collusion_core::{EquilibriumPair64, QTable64};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{Preset, ResolvedConfig};
use crate::error::{Result, RunnerError};

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const POINTS_FILE: &str = "points.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRACES_DIR: &str = "traces";
pub const QDUMPS_DIR: &str = "qdumps";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    /// A run finished; a point has at least one finished run.
    Ok,
    /// A run produced unusable output; a point lost all of its runs.
    Rejected,
    /// The point could not be set up, so its runs never started.
    Skipped,
}

/// One run at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub preset: Preset,
    pub point: usize,
    pub coords: BTreeMap<String, f64>,
    /// `[φ_bb, φ_bs, φ_sb, φ_ss]` at the point.
    pub phi: [f64; 4],
    pub seed: u64,
    pub run_index: u64,
    pub update_target: UpdateTarget,
    pub status: Status,
    pub reason: Option<String>,
    pub delta_tilde: Option<f64>,
    pub platform_means: Option<[f64; 2]>,
    /// Some platform averaged a level above one.
    pub exceeded_one: Option<bool>,
    pub cycle_category: Option<String>,
    pub cycle_period: Option<usize>,
    pub final_temperature: Option<f64>,
    /// Relative to the results directory.
    pub trace: Option<String>,
    pub qdumps: Option<[String; 2]>,
    /// The only field that differs between repeated executions.
    pub wall_time_secs: f64,
}

/// Aggregate of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub point: usize,
    pub coords: BTreeMap<String, f64>,
    pub phi: [f64; 4],
    pub status: Status,
    pub reason: Option<String>,
    pub equilibrium: Option<EquilibriumPair64>,
    /// Whether the competitive benchmark is a global best response to itself.
    pub global_best_response: Option<bool>,
    pub rho: f64,
    pub n_runs: usize,
    pub n_ok: usize,
    pub n_rejected: usize,
    pub mean: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

/// Point and run counts; `points = ok + rejected + skipped`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub points: usize,
    pub ok: usize,
    pub rejected: usize,
    pub skipped: usize,
    pub runs: usize,
    pub runs_ok: usize,
}

impl Manifest {
    pub fn from_points(points: &[PointSummary]) -> Self {
        let count = |s: Status| points.iter().filter(|p| p.status == s).count();
        Self {
            points: points.len(),
            ok: count(Status::Ok),
            rejected: count(Status::Rejected),
            skipped: count(Status::Skipped),
            runs: points.iter().map(|p| p.n_runs).sum(),
            runs_ok: points.iter().map(|p| p.n_ok).sum(),
        }
    }
}

pub fn trace_name(point: usize, run: u64) -> String {
    format!("{TRACES_DIR}/point-{point:05}-run-{run:05}.u32")
}

pub fn qdump_name(point: usize, run: u64, platform: usize) -> String {
    format!("{QDUMPS_DIR}/point-{point:05}-run-{run:05}-p{platform}.qtab")
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(RunnerError::io(path))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(RunnerError::io(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(RunnerError::io(path))?;
    serde_json::from_str(&text).map_err(|e| RunnerError::results(path, e.to_string()))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(RunnerError::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(RunnerError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| RunnerError::results(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_trace(path: &Path, tail: &[u32]) -> Result<()> {
    let bytes: Vec<u8> = tail.iter().flat_map(|a| a.to_le_bytes()).collect();
    write_bytes(path, &bytes)
}

pub fn read_trace(path: &Path) -> Result<Vec<u32>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(RunnerError::io(path))?;
    if bytes.len() % 4 != 0 {
        return Err(RunnerError::results(path, "trace length is not a multiple of 4"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_qdump(path: &Path, q: &QTable64, platform: u32) -> Result<()> {
    let file = File::create(path).map_err(RunnerError::io(path))?;
    let mut w = BufWriter::new(file);
    q.write_dump(&mut w, platform).map_err(RunnerError::io(path))?;
    w.flush().map_err(RunnerError::io(path))
}

pub fn read_qdump(path: &Path) -> Result<(QTable64, u32)> {
    let file = File::open(path).map_err(RunnerError::io(path))?;
    QTable64::read_dump(BufReader::new(file)).map_err(RunnerError::io(path))
}

/// A results directory written by a sweep.
#[derive(Debug, Clone)]
pub struct ResultSet {
    pub dir: PathBuf,
    pub config: ResolvedConfig,
    pub points: Vec<PointSummary>,
    pub records: Vec<RunRecord>,
}

impl ResultSet {
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(RunnerError::Io {
                path: dir.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "results directory not found"),
            });
        }
        let config: ResolvedConfig = read_json(&dir.join(CONFIG_FILE))?;
        let points: Vec<PointSummary> = read_jsonl(&dir.join(POINTS_FILE))?;
        let records: Vec<RunRecord> = read_jsonl(&dir.join(RECORDS_FILE))?;
        let hash = config.hash();
        if let Some(r) = records.iter().find(|r| r.config_hash != hash) {
            return Err(RunnerError::results(
                dir,
                format!("record hash {} does not match config hash {hash}", r.config_hash),
            ));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            points,
            records,
        })
    }

    pub fn records_of(&self, point: usize) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(move |r| r.point == point)
    }
}
