//! Post-convergence diagnostics: limit-cycle classification, best-response
//! audits of the final tables, deviation tests and Q-losses.

mod audit;
mod best_response;
mod cycle;
mod report;

use thiserror::Error;

pub use audit::{
    actions_agree, agreement_fraction, deviation_test, equilibrium_frequency, equilibrium_indicator,
    greedy_action, greedy_step, one_step_indicator, q_loss_against_values, q_loss_all_states, q_loss_on_path,
    DeviationMode, NeighborRule, DEFAULT_LOSS_HORIZON, DEFAULT_ROLLOUT,
};
pub use best_response::{best_response_q, one_step_q, BestResponse, DEFAULT_HORIZON};
pub use cycle::{classify_cycle, minimal_period, CycleCategory, CycleRecord, DEFAULT_MAX_PERIOD};
pub use report::{
    analyze_run, sensitivity_report, AnalysisConfig, CategoryStats, ReportColumn, RunAnalysis,
    SensitivityReport, METRIC_ROWS,
};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("tail has {len} steps, need at least {needed}")]
    TailTooShort { len: usize, needed: usize },
    #[error("Q tables have different shapes")]
    ShapeMismatch,
    #[error("no cycle states to evaluate")]
    EmptyPath,
}
