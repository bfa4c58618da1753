//! Finite-horizon best response to a rival's greedy policy.
//!
//! Against a rival that plays `g(x) = argmax Q_rival(x, ·)`, the responder's
//! `T̂`-step values are
//!
//! ```text
//! Q⁽ᵀ̂⁾(p, x)   = π(p, g(x))
//! Q⁽ᵗ⁻¹⁾(p, x) = π(p, g(x)) + δ·max_p'' Q⁽ᵗ⁾(p'', x'),   x' = (p, g(x)).
//! ```
//!
//! Only the state values `V⁽ᵗ⁾(x) = max_p Q⁽ᵗ⁾(p, x)` are kept between levels,
//! so the recursion costs `O(T̂·M⁶)` time and `O(M⁴)` memory; rows of `Q⁽⁰⁾`
//! are rebuilt on demand from `V⁽¹⁾`.

use rayon::prelude::*;

use crate::qlearn::{ActionIndex, GridShape, ProfitTable, QTable, StateIndex};
use crate::scalar::Real;

/// `T̂` used by the audits.
pub const DEFAULT_HORIZON: usize = 10;

#[derive(Debug, Clone)]
pub struct BestResponse<F: Real> {
    shape: GridShape,
    responder: usize,
    delta: F,
    horizon: usize,
    rival_greedy: Vec<u32>,
    /// `V⁽¹⁾`; empty when `T̂ = 0`.
    v_next: Vec<F>,
    /// `V⁽⁰⁾`.
    v0: Vec<F>,
}

impl<F: Real> BestResponse<F> {
    /// Runs the recursion for `responder` (0 or 1) against `q_rival`.
    pub fn new(q_rival: &QTable<F>, profits: &ProfitTable<F>, responder: usize, delta: F, horizon: usize) -> Self {
        assert!(responder < 2, "responder must be platform 0 or 1");
        let shape = profits.shape();
        assert_eq!(shape, q_rival.shape(), "table sizes differ");
        let rival_greedy = q_rival.greedy_policy();
        let mut br = Self {
            shape,
            responder,
            delta,
            horizon,
            rival_greedy,
            v_next: Vec::new(),
            v0: Vec::new(),
        };
        // V^(T̂)
        let mut v: Vec<F> = (0..shape.n_states())
            .into_par_iter()
            .map(|x| br.seed_row_max(profits, x))
            .collect();
        for _ in 0..horizon {
            let next: Vec<F> = (0..shape.n_states())
                .into_par_iter()
                .map(|x| {
                    (0..shape.n_actions())
                        .map(|p| br.backup(profits, &v, p, x))
                        .fold(F::neg_infinity(), F::max)
                })
                .collect();
            br.v_next = std::mem::replace(&mut v, next);
        }
        br.v0 = v;
        br
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn responder(&self) -> usize {
        self.responder
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Rival's greedy action in state `x`.
    pub fn rival_action(&self, x: StateIndex) -> ActionIndex {
        self.rival_greedy[x] as usize
    }

    /// State after the responder plays `p` in state `x`.
    pub fn successor(&self, p: ActionIndex, x: StateIndex) -> StateIndex {
        self.shape.state_for(self.responder, p, self.rival_action(x))
    }

    /// One-step payoff `π(p, g(x))`, i.e. `Q^(one)(p, x)`.
    pub fn seed(&self, profits: &ProfitTable<F>, p: ActionIndex, x: StateIndex) -> F {
        profits.profit(self.responder, p, self.rival_action(x))
    }

    fn seed_row_max(&self, profits: &ProfitTable<F>, x: StateIndex) -> F {
        (0..self.shape.n_actions())
            .map(|p| self.seed(profits, p, x))
            .fold(F::neg_infinity(), F::max)
    }

    fn backup(&self, profits: &ProfitTable<F>, v: &[F], p: ActionIndex, x: StateIndex) -> F {
        self.seed(profits, p, x) + self.delta * v[self.successor(p, x)]
    }

    /// `Q⁽⁰⁾(p, x)`.
    pub fn q0(&self, profits: &ProfitTable<F>, p: ActionIndex, x: StateIndex) -> F {
        if self.horizon == 0 {
            self.seed(profits, p, x)
        } else {
            self.backup(profits, &self.v_next, p, x)
        }
    }

    /// `Q⁽⁰⁾(·, x)`.
    pub fn row(&self, profits: &ProfitTable<F>, x: StateIndex) -> Vec<F> {
        (0..self.shape.n_actions()).map(|p| self.q0(profits, p, x)).collect()
    }

    /// `Q^(one)(·, x)`.
    pub fn one_step_row(&self, profits: &ProfitTable<F>, x: StateIndex) -> Vec<F> {
        (0..self.shape.n_actions()).map(|p| self.seed(profits, p, x)).collect()
    }

    /// `max_p Q⁽⁰⁾(p, x)` for every state.
    pub fn values(&self) -> &[F] {
        &self.v0
    }

    /// The full `Q⁽⁰⁾` table.
    pub fn to_table(&self, profits: &ProfitTable<F>) -> QTable<F> {
        QTable::from_fn(self.shape, |x, p| self.q0(profits, p, x))
    }

    /// The full `Q^(one)` table.
    pub fn one_step_table(&self, profits: &ProfitTable<F>) -> QTable<F> {
        QTable::from_fn(self.shape, |x, p| self.seed(profits, p, x))
    }
}

/// `Q⁽⁰⁾` of `responder` against the greedy policy of `q_rival`.
pub fn best_response_q<F: Real>(
    q_rival: &QTable<F>,
    profits: &ProfitTable<F>,
    responder: usize,
    delta: F,
    horizon: usize,
) -> QTable<F> {
    BestResponse::new(q_rival, profits, responder, delta, horizon).to_table(profits)
}

/// `Q^(one)(p, x) = π(p, argmax Q_rival(x, ·))`.
pub fn one_step_q<F: Real>(q_rival: &QTable<F>, profits: &ProfitTable<F>, responder: usize) -> QTable<F> {
    BestResponse::new(q_rival, profits, responder, F::zero(), 0).one_step_table(profits)
}
