//! Simulation laboratory for tacit collusion between Q-learning platforms in
//! two-sided markets with network externalities.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the experiments use.

pub mod additive;
pub mod analysis;
pub mod market;
pub mod metrics;
pub mod qlearn;
pub mod scalar;

pub use scalar::Real;

pub type ExternalityMatrix64 = market::ExternalityMatrix<f64>;
pub type MarketParams64 = market::MarketParams<f64>;
pub type PriceProfile64 = market::PriceProfile<f64>;
pub type EquilibriumPair64 = market::EquilibriumPair<f64>;
pub type EquilibriumConfig64 = market::EquilibriumConfig<f64>;
pub type PriceGrid64 = qlearn::PriceGrid<f64>;
pub type QTable64 = qlearn::QTable<f64>;
pub type ProfitTable64 = qlearn::ProfitTable<f64>;
pub type LearningConfig64 = qlearn::LearningConfig<f64>;
pub type Environment64 = qlearn::Environment<f64>;
pub type RunResult64 = qlearn::RunResult<f64>;
