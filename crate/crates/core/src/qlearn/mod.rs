//! Repeated pricing game between two tabular Q-learning platforms.
//!
//! Each platform observes the joint prices of the previous step, samples a
//! price pair from a Boltzmann policy over its Q table, collects the one-shot
//! profit of the static market and updates its table. Profits for every
//! joint profile of the grid are solved once up front.

mod grid;
mod policy;
mod profits;
mod sim;
mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::MarketError;
use crate::scalar::Real;

pub use grid::{build_side, ActionIndex, GridShape, PriceGrid, StateIndex, MIN_GRID_WIDTH};
pub use policy::{
    boltzmann_probabilities, boltzmann_sample, price_penalty, q_update, q_update_penalized,
    temperature, BoltzmannSampler, TemperatureSchedule, UpdateRule, UpdateTarget, REFERENCE_DECAY,
    REFERENCE_STEPS,
};
pub use profits::{grid_solver, init_q, joint_prices, solve_joint_profits, ProfitTable};
pub use sim::{run_rng, run_simulation, simulate, Environment, RunResult};
pub use table::{row_argmax, row_max, QTable, DUMP_HEADER_LEN, DUMP_MAGIC};

/// Smallest `|π^C − π*|` accepted as a collusion denominator.
pub const MIN_PROFIT_GAP: f64 = 1e-8;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum QlearnError {
    #[error("price grid has zero width (|p^C - p*| = {gap:e})")]
    DegenerateGrid { gap: f64 },
    #[error("collusion denominator too small (|pi^C - pi*| = {gap:e})")]
    DegenerateDenominator { gap: f64 },
    #[error("invalid learning configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Market(#[from] MarketError),
}

impl QlearnError {
    /// Stable machine-readable reason.
    pub fn reason(&self) -> &'static str {
        match self {
            QlearnError::DegenerateGrid { .. } => "degenerate-grid",
            QlearnError::DegenerateDenominator { .. } => "degenerate-denominator",
            QlearnError::InvalidConfig(_) => "invalid-config",
            QlearnError::Market(MarketError::NonConvergence { .. }) => "non-convergence",
            QlearnError::Market(MarketError::NoEquilibriumFound(_)) => "no-equilibrium",
            QlearnError::Market(MarketError::InvalidParams(_)) => "invalid-params",
        }
    }
}

/// Settings of one learning run. The discount `δ` comes from the market
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields, default)]
pub struct LearningConfig<F: Real> {
    /// Learning rate `α ∈ (0, 1]`.
    pub alpha: F,
    /// Prices per side `M`.
    pub m: usize,
    /// Grid margin `ε`.
    pub epsilon: F,
    pub t_steps: u64,
    /// Steps averaged into the collusive level.
    pub k_report: usize,
    /// Joint actions kept for cycle analysis.
    pub tail_window: usize,
    /// Initial temperature; `1000/(1−δ)` when absent.
    pub temp0: Option<F>,
    /// Per-step decay; rescaled from the reference schedule when absent.
    pub lambda: Option<F>,
    pub temp_floor: F,
    /// Penalty on prices above the market mean; 0 disables it.
    pub rho: F,
    pub update_target: UpdateTarget,
    pub seed: u64,
}

impl<F: Real> Default for LearningConfig<F> {
    fn default() -> Self {
        Self {
            alpha: F::lit(0.15),
            m: 15,
            epsilon: F::lit(0.1),
            t_steps: 2_000_000,
            k_report: 1000,
            tail_window: 5000,
            temp0: None,
            lambda: None,
            temp_floor: F::lit(1e-6),
            rho: F::zero(),
            update_target: UpdateTarget::NextState,
            seed: 0,
        }
    }
}

impl<F: Real> LearningConfig<F> {
    pub fn validate(&self) -> Result<(), QlearnError> {
        let bad = |msg: String| Err(QlearnError::InvalidConfig(msg));
        if !(self.alpha > F::zero() && self.alpha <= F::one()) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if self.m < 2 {
            return bad(format!("m must be at least 2, got {}", self.m));
        }
        if !(self.epsilon >= F::zero()) {
            return bad(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if self.k_report == 0 || self.t_steps < self.k_report as u64 {
            return bad(format!(
                "need 0 < k_report <= t_steps, got k_report {} and t_steps {}",
                self.k_report, self.t_steps
            ));
        }
        if self.tail_window == 0 {
            return bad("tail_window must be positive".into());
        }
        if let Some(l) = self.lambda {
            if !(l > F::zero() && l <= F::one()) {
                return bad(format!("lambda must lie in (0, 1], got {l}"));
            }
        }
        if let Some(t) = self.temp0 {
            if !(t > F::zero()) {
                return bad(format!("temp0 must be positive, got {t}"));
            }
        }
        if !(self.temp_floor > F::zero()) {
            return bad(format!("temp_floor must be positive, got {}", self.temp_floor));
        }
        if !(self.rho >= F::zero()) {
            return bad(format!("rho must be non-negative, got {}", self.rho));
        }
        Ok(())
    }

    /// Temperature schedule for discount `delta`, filling in defaults.
    pub fn schedule(&self, delta: F) -> TemperatureSchedule<F> {
        TemperatureSchedule::new(
            self.temp0.unwrap_or_else(|| TemperatureSchedule::default_temp0(delta)),
            self.lambda
                .unwrap_or_else(|| TemperatureSchedule::rescaled_lambda(self.t_steps)),
            self.temp_floor,
        )
    }

    pub fn update_rule(&self, delta: F) -> UpdateRule<F> {
        UpdateRule {
            alpha: self.alpha,
            delta,
            target: self.update_target,
        }
    }
}
