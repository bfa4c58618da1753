//! Discrete price grids and the flattening of actions and states.

use serde::{Deserialize, Serialize};

use super::QlearnError;
use crate::market::{EquilibriumPair, Side};
use crate::scalar::Real;

/// Flattened index of a price pair `(j_b, j_s)`, in `[0, M²)`.
pub type ActionIndex = usize;
/// Flattened index of the joint prices `(a⁽¹⁾, a⁽²⁾)` of the previous step, in `[0, M⁴)`.
pub type StateIndex = usize;

/// Index arithmetic for a grid with `M` prices per side.
///
/// Actions are buyer-major: `a = j_b·M + j_s`. States are platform-1-major:
/// `s = a⁽¹⁾·M² + a⁽²⁾`. A state is therefore also the joint action that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub m: usize,
}

impl GridShape {
    pub fn new(m: usize) -> Self {
        Self { m }
    }

    pub fn n_actions(self) -> usize {
        self.m * self.m
    }

    pub fn n_states(self) -> usize {
        self.n_actions() * self.n_actions()
    }

    pub fn action(self, j_b: usize, j_s: usize) -> ActionIndex {
        debug_assert!(j_b < self.m && j_s < self.m);
        j_b * self.m + j_s
    }

    /// `(j_b, j_s)` of an action.
    pub fn action_coords(self, a: ActionIndex) -> (usize, usize) {
        (a / self.m, a % self.m)
    }

    pub fn state(self, a1: ActionIndex, a2: ActionIndex) -> StateIndex {
        debug_assert!(a1 < self.n_actions() && a2 < self.n_actions());
        a1 * self.n_actions() + a2
    }

    /// `(a⁽¹⁾, a⁽²⁾)` of a state.
    pub fn state_actions(self, s: StateIndex) -> (ActionIndex, ActionIndex) {
        (s / self.n_actions(), s % self.n_actions())
    }

    /// State seen after `platform` plays `own` and its rival plays `rival`.
    pub fn state_for(self, platform: usize, own: ActionIndex, rival: ActionIndex) -> StateIndex {
        if platform == 0 {
            self.state(own, rival)
        } else {
            self.state(rival, own)
        }
    }

    /// `max(|Δj_b|, |Δj_s|)` between two actions.
    pub fn chebyshev(self, a: ActionIndex, b: ActionIndex) -> usize {
        let (ab, as_) = self.action_coords(a);
        let (bb, bs) = self.action_coords(b);
        ab.abs_diff(bb).max(as_.abs_diff(bs))
    }

    /// `|Δj_b| + |Δj_s|` between two actions.
    pub fn manhattan(self, a: ActionIndex, b: ActionIndex) -> usize {
        let (ab, as_) = self.action_coords(a);
        let (bb, bs) = self.action_coords(b);
        ab.abs_diff(bb) + as_.abs_diff(bs)
    }
}

/// Ascending price sets `𝒫_b`, `𝒫_s` spanning the CNE and CE prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PriceGrid<F: Real> {
    prices: [Vec<F>; 2],
    epsilon: F,
}

/// Smallest `|p^C − p*|` that still spans a usable grid.
pub const MIN_GRID_WIDTH: f64 = 1e-8;

/// `M` equally spaced prices from `p* − ε(p^C − p*)` to `p^C + ε(p^C − p*)`,
/// sorted ascending so that `p^C < p*` is handled too.
pub fn build_side<F: Real>(p_star: F, p_coll: F, epsilon: F, m: usize) -> Result<Vec<F>, QlearnError> {
    if m < 2 {
        return Err(QlearnError::InvalidConfig(format!("grid size must be at least 2, got {m}")));
    }
    if !(epsilon >= F::zero()) {
        return Err(QlearnError::InvalidConfig(format!("grid margin must be non-negative, got {epsilon}")));
    }
    let gap = p_coll - p_star;
    if !(gap.abs() >= F::lit(MIN_GRID_WIDTH)) {
        return Err(QlearnError::DegenerateGrid {
            gap: gap.to_f64_lossy(),
        });
    }
    let last = F::from_usize(m - 1).unwrap();
    let start = p_star - epsilon * gap;
    let end = p_coll + epsilon * gap;
    // endpoints exactly as written, interior points interpolated
    let mut side: Vec<F> = (0..m)
        .map(|j| match j {
            0 => start,
            j if j == m - 1 => end,
            j => start + F::from_usize(j).unwrap() / last * (end - start),
        })
        .collect();
    side.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    Ok(side)
}

impl<F: Real> PriceGrid<F> {
    /// Per-side grids from the CNE prices `p*` and CE prices `p^C`.
    pub fn build(p_star: [F; 2], p_coll: [F; 2], epsilon: F, m: usize) -> Result<Self, QlearnError> {
        let b = build_side(p_star[0], p_coll[0], epsilon, m)?;
        let s = build_side(p_star[1], p_coll[1], epsilon, m)?;
        Ok(Self {
            prices: [b, s],
            epsilon,
        })
    }

    pub fn from_equilibrium(eq: &EquilibriumPair<F>, epsilon: F, m: usize) -> Result<Self, QlearnError> {
        Self::build(eq.p_star, eq.p_coll, epsilon, m)
    }

    /// A grid from explicit strictly increasing price lists of equal length.
    pub fn from_prices(buyer: Vec<F>, seller: Vec<F>) -> Result<Self, QlearnError> {
        if buyer.len() != seller.len() || buyer.len() < 2 {
            return Err(QlearnError::InvalidConfig(
                "price lists must have equal length of at least 2".into(),
            ));
        }
        for side in [&buyer, &seller] {
            if !side.windows(2).all(|w| w[0] < w[1]) {
                return Err(QlearnError::InvalidConfig("price lists must be strictly increasing".into()));
            }
        }
        Ok(Self {
            prices: [buyer, seller],
            epsilon: F::zero(),
        })
    }

    pub fn m(&self) -> usize {
        self.prices[0].len()
    }

    pub fn shape(&self) -> GridShape {
        GridShape::new(self.m())
    }

    pub fn epsilon(&self) -> F {
        self.epsilon
    }

    pub fn side(&self, side: Side) -> &[F] {
        &self.prices[side.index()]
    }

    /// `(p_b, p_s)` of an action.
    pub fn action_prices(&self, a: ActionIndex) -> [F; 2] {
        let (jb, js) = self.shape().action_coords(a);
        [self.prices[0][jb], self.prices[1][js]]
    }

    /// Grid action nearest to a price pair, per side; ties go to the lower index.
    pub fn snap(&self, prices: [F; 2]) -> ActionIndex {
        let j = |side: &[F], p: F| {
            let mut best = 0;
            for (k, q) in side.iter().enumerate() {
                if (*q - p).abs() < (side[best] - p).abs() {
                    best = k;
                }
            }
            best
        };
        self.shape()
            .action(j(&self.prices[0], prices[0]), j(&self.prices[1], prices[1]))
    }
}
