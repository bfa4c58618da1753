//! Per-step rewards for every joint price profile of the grid, solved once.

use rayon::prelude::*;

use super::grid::{ActionIndex, GridShape, PriceGrid, StateIndex};
use super::table::QTable;
use crate::market::{profit_at, MarketError, MarketParams, PriceProfile, ShareSolver};
use crate::scalar::Real;

/// `(π⁽¹⁾, π⁽²⁾)` for each of the `M⁴` joint actions, indexed like states.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfitTable<F: Real> {
    shape: GridShape,
    profits: Vec<[F; 2]>,
}

/// Share solver used for grid profiles.
pub fn grid_solver<F: Real>() -> ShareSolver<F> {
    ShareSolver::with_tol(F::lit(1e-12))
}

/// Prices of the joint action `s` as a two-platform profile.
pub fn joint_prices<F: Real>(grid: &PriceGrid<F>, s: StateIndex) -> PriceProfile<F> {
    let (a1, a2) = grid.shape().state_actions(s);
    PriceProfile::new(vec![grid.action_prices(a1), grid.action_prices(a2)])
}

/// Both platforms' profits at the joint action `s`, freshly solved.
pub fn solve_joint_profits<F: Real>(
    params: &MarketParams<F>,
    grid: &PriceGrid<F>,
    s: StateIndex,
    solver: &ShareSolver<F>,
) -> Result<[F; 2], MarketError> {
    let prices = joint_prices(grid, s);
    let shares = solver.solve(&prices, params)?;
    Ok([profit_at(&prices, &shares, 0), profit_at(&prices, &shares, 1)])
}

impl<F: Real> ProfitTable<F> {
    /// Solves the share fixed point at every joint profile, in parallel.
    pub fn build(
        params: &MarketParams<F>,
        grid: &PriceGrid<F>,
        solver: &ShareSolver<F>,
    ) -> Result<Self, MarketError> {
        if params.n_platforms != 2 {
            return Err(MarketError::InvalidParams(
                "the learning loop supports exactly two platforms".into(),
            ));
        }
        let shape = grid.shape();
        let profits = (0..shape.n_states())
            .into_par_iter()
            .map(|s| solve_joint_profits(params, grid, s, solver))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { shape, profits })
    }

    /// A table from explicit values, indexed like states.
    pub fn from_values(shape: GridShape, profits: Vec<[F; 2]>) -> Option<Self> {
        (profits.len() == shape.n_states()).then_some(Self { shape, profits })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn get(&self, s: StateIndex) -> [F; 2] {
        self.profits[s]
    }

    pub fn as_slice(&self) -> &[[F; 2]] {
        &self.profits
    }

    /// Profit of `platform` when it plays `own` against `rival`.
    pub fn profit(&self, platform: usize, own: ActionIndex, rival: ActionIndex) -> F {
        self.profits[self.shape.state_for(platform, own, rival)][platform]
    }

    /// `π⁽¹⁾ + π⁽²⁾` at the joint action `s`.
    pub fn total(&self, s: StateIndex) -> F {
        let [a, b] = self.profits[s];
        a + b
    }
}

/// Initial table: playing `a` forever against the rival prices held in `s`,
/// `Q₀(s, a) = π⁽ⁱ⁾(a, p⁽ʲ⁾) / (1 − δ)`.
pub fn init_q<F: Real>(profits: &ProfitTable<F>, platform: usize, delta: F) -> QTable<F> {
    let shape = profits.shape();
    let scale = F::one() - delta;
    QTable::from_fn(shape, |s, a| {
        let (a1, a2) = shape.state_actions(s);
        let rival = if platform == 0 { a2 } else { a1 };
        profits.profit(platform, a, rival) / scale
    })
}
