//! Per-run audits and their aggregation into a category × metric table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::audit::{
    deviation_test, equilibrium_indicator, one_step_indicator, q_loss_against_values, q_loss_on_path,
    DeviationMode, NeighborRule, DEFAULT_LOSS_HORIZON, DEFAULT_ROLLOUT,
};
use super::best_response::{BestResponse, DEFAULT_HORIZON};
use super::cycle::{classify_cycle, CycleCategory, CycleRecord, DEFAULT_MAX_PERIOD};
use crate::qlearn::{simulate, Environment, LearningConfig, RunResult};
use crate::scalar::Real;

/// Knobs of the per-run audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Backward-induction horizon `T̂`.
    pub horizon: usize,
    /// Greedy steps after a deviation.
    pub rollout: usize,
    /// Discounted-reward horizon of the on-path loss.
    pub loss_horizon: usize,
    /// Tail steps classified.
    pub window: usize,
    pub max_period: usize,
    pub neighbor: NeighborRule,
    /// Platform whose tables are audited (0-based).
    pub responder: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            rollout: DEFAULT_ROLLOUT,
            loss_horizon: DEFAULT_LOSS_HORIZON,
            window: 5000,
            max_period: DEFAULT_MAX_PERIOD,
            neighbor: NeighborRule::Chebyshev,
            responder: 0,
        }
    }
}

/// Audit results of one run. Path-based entries are absent without a cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAnalysis {
    pub run_index: u64,
    pub cycle: CycleRecord,
    pub delta_tilde: f64,
    pub equilibrium: Option<f64>,
    pub one_step_equilibrium: Option<f64>,
    pub converges_back_one: Option<bool>,
    pub converges_back_both: Option<bool>,
    pub q_loss_on_path: Option<f64>,
    pub q_loss_all: f64,
}

/// Classifies the tail of `run` and audits its final tables.
pub fn analyze_run<F: Real>(run: &RunResult<F>, env: &Environment<F>, cfg: &AnalysisConfig) -> RunAnalysis {
    let shape = env.grid.shape();
    let i = cfg.responder;
    let rival = 1 - i;
    let q = [&run.q_tables[0], &run.q_tables[1]];
    let cycle = classify_cycle(&run.tail_actions, shape, cfg.window, cfg.max_period);
    let br = BestResponse::new(&run.q_tables[rival], &env.profits, i, env.params.delta, cfg.horizon);
    let q_loss_all = q_loss_against_values(&run.q_tables[i], br.values())
        .expect("best response matches table size")
        .to_f64_lossy();

    let mut out = RunAnalysis {
        run_index: run.run_index,
        cycle: cycle.clone(),
        delta_tilde: run.delta_tilde.to_f64_lossy(),
        equilibrium: None,
        one_step_equilibrium: None,
        converges_back_one: None,
        converges_back_both: None,
        q_loss_on_path: None,
        q_loss_all,
    };
    if !cycle.category.is_cycle() {
        return out;
    }
    let states = &cycle.states;
    let q_own = &run.q_tables[i];
    out.equilibrium = equilibrium_indicator(q_own, &br, &env.profits, states, cfg.neighbor).map(|v| v.to_f64_lossy());
    out.one_step_equilibrium =
        one_step_indicator(q_own, &br, &env.profits, states, cfg.neighbor).map(|v| v.to_f64_lossy());
    let last = *run.tail_actions.last().expect("cycle implies a tail") as usize;
    let nash = env.grid.snap(env.eq.p_star);
    out.converges_back_one = Some(deviation_test(q, last, nash, states, DeviationMode::One, cfg.rollout));
    out.converges_back_both = Some(deviation_test(q, last, nash, states, DeviationMode::Both, cfg.rollout));
    let window = &run.tail_actions[run.tail_actions.len().saturating_sub(cfg.window)..];
    out.q_loss_on_path = q_loss_on_path(
        window,
        states.len(),
        q,
        &br,
        &env.profits,
        env.params.delta,
        cfg.loss_horizon,
    )
    .ok()
    .map(|v| v.to_f64_lossy());
    out
}

/// Metric values of one column; `None` marks an empty or undefined cell.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub n_runs: usize,
    pub freq: Option<f64>,
    pub avg_delta: Option<f64>,
    pub sd_delta: Option<f64>,
    pub freq_eq: Option<f64>,
    pub freq_one_step_eq: Option<f64>,
    pub freq_conv_back_one: Option<f64>,
    pub freq_conv_back_both: Option<f64>,
    pub avg_q_loss_path: Option<f64>,
    pub sd_q_loss_path: Option<f64>,
    pub avg_q_loss_all: Option<f64>,
    pub sd_q_loss_all: Option<f64>,
}

/// Row labels of the report, in order.
pub const METRIC_ROWS: [&str; 11] = [
    "Freq.",
    "Avg. Collusive Level",
    "S.D. of Collusive Level",
    "Freq. of Eq.",
    "Freq. of one-step Eq.",
    "Freq. Conv. back (one)",
    "Freq. Conv. back (both)",
    "Avg. Q loss (on path)",
    "S.D. of Q loss (on path)",
    "Avg. Q loss (all)",
    "S.D. of Q loss (all)",
];

impl CategoryStats {
    fn from_runs(runs: &[&RunAnalysis], total: usize) -> Self {
        let n = runs.len();
        let deltas: Vec<f64> = runs.iter().map(|r| r.delta_tilde).collect();
        let pick = |f: &dyn Fn(&RunAnalysis) -> Option<f64>| -> Vec<f64> { runs.iter().filter_map(|r| f(r)).collect() };
        let flag = |b: Option<bool>| b.map(|b| if b { 1.0 } else { 0.0 });
        let path = pick(&|r| r.q_loss_on_path);
        let all: Vec<f64> = runs.iter().map(|r| r.q_loss_all).collect();
        Self {
            n_runs: n,
            freq: (total > 0).then(|| n as f64 / total as f64),
            avg_delta: mean(&deltas),
            sd_delta: sample_sd(&deltas),
            freq_eq: mean(&pick(&|r| r.equilibrium)),
            freq_one_step_eq: mean(&pick(&|r| r.one_step_equilibrium)),
            freq_conv_back_one: mean(&pick(&|r| flag(r.converges_back_one))),
            freq_conv_back_both: mean(&pick(&|r| flag(r.converges_back_both))),
            avg_q_loss_path: mean(&path),
            sd_q_loss_path: sample_sd(&path),
            avg_q_loss_all: mean(&all),
            sd_q_loss_all: sample_sd(&all),
        }
    }

    /// Cells in [`METRIC_ROWS`] order.
    pub fn cells(&self) -> [Option<f64>; 11] {
        [
            self.freq,
            self.avg_delta,
            self.sd_delta,
            self.freq_eq,
            self.freq_one_step_eq,
            self.freq_conv_back_one,
            self.freq_conv_back_both,
            self.avg_q_loss_path,
            self.sd_q_loss_path,
            self.avg_q_loss_all,
            self.sd_q_loss_all,
        ]
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Standard deviation with the `n − 1` denominator; absent below two values.
fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v)?;
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (v.len() - 1) as f64).sqrt())
}

/// One report column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportColumn {
    pub label: String,
    pub stats: CategoryStats,
}

/// Category × metric table over a batch of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub n_requested: usize,
    pub n_analyzed: usize,
    /// Runs that failed, with their reasons.
    pub rejected: Vec<String>,
    /// One column per category, then `All`.
    pub columns: Vec<ReportColumn>,
    pub runs: Vec<RunAnalysis>,
}

impl SensitivityReport {
    pub fn from_runs(runs: Vec<RunAnalysis>, n_requested: usize, rejected: Vec<String>) -> Self {
        let total = runs.len();
        let mut columns = Vec::with_capacity(CycleCategory::ALL.len() + 1);
        for cat in CycleCategory::ALL {
            let members: Vec<&RunAnalysis> = runs.iter().filter(|r| r.cycle.category == cat).collect();
            columns.push(ReportColumn {
                label: cat.label().to_string(),
                stats: CategoryStats::from_runs(&members, total),
            });
        }
        let everyone: Vec<&RunAnalysis> = runs.iter().collect();
        columns.push(ReportColumn {
            label: "All".to_string(),
            stats: CategoryStats::from_runs(&everyone, total),
        });
        Self {
            n_requested,
            n_analyzed: total,
            rejected,
            columns,
            runs,
        }
    }

    pub fn column(&self, label: &str) -> Option<&CategoryStats> {
        self.columns.iter().find(|c| c.label == label).map(|c| &c.stats)
    }

    /// Metric rows × category columns; empty cells are `NA`.
    pub fn to_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["Metric".to_string()];
        header.extend(self.columns.iter().map(|c| c.label.clone()));
        wtr.write_record(&header).expect("in-memory write");
        let cells: Vec<[Option<f64>; 11]> = self.columns.iter().map(|c| c.stats.cells()).collect();
        for (r, label) in METRIC_ROWS.iter().enumerate() {
            let mut row = vec![label.to_string()];
            row.extend(cells.iter().map(|c| match c[r] {
                Some(v) => format!("{v:.6}"),
                None => "NA".to_string(),
            }));
            wtr.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

/// Runs `n_runs` seeded simulations in `env`, audits each as soon as it
/// finishes (its tables are dropped afterwards) and aggregates the table.
pub fn sensitivity_report<F: Real>(
    env: &Environment<F>,
    learning: &LearningConfig<F>,
    n_runs: usize,
    cfg: &AnalysisConfig,
) -> SensitivityReport {
    let outcomes: Vec<Result<RunAnalysis, String>> = (0..n_runs as u64)
        .into_par_iter()
        .map(|k| {
            simulate(env, learning, k)
                .map(|run| analyze_run(&run, env, cfg))
                .map_err(|e| format!("run {k}: {e}"))
        })
        .collect();
    let mut runs = Vec::new();
    let mut rejected = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => runs.push(r),
            Err(e) => rejected.push(e),
        }
    }
    SensitivityReport::from_runs(runs, n_runs, rejected)
}
