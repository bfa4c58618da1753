//! Equilibrium, deviation and Q-loss audits of converged tables.

use serde::{Deserialize, Serialize};

use super::best_response::BestResponse;
use super::AnalysisError;
use crate::qlearn::{ActionIndex, GridShape, ProfitTable, QTable, StateIndex};
use crate::scalar::Real;

/// Greedy steps after a deviation before checking the state.
pub const DEFAULT_ROLLOUT: usize = 100;
/// Discounted-reward horizon of the on-path loss.
pub const DEFAULT_LOSS_HORIZON: usize = 100;

/// When two greedy actions count as the same choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborRule {
    /// `max(|Δj_b|, |Δj_s|) ≤ 1`.
    #[default]
    Chebyshev,
    /// `|Δj_b| + |Δj_s| ≤ 1`.
    Manhattan,
}

pub fn actions_agree(shape: GridShape, a: ActionIndex, b: ActionIndex, rule: NeighborRule) -> bool {
    let d = match rule {
        NeighborRule::Chebyshev => shape.chebyshev(a, b),
        NeighborRule::Manhattan => shape.manhattan(a, b),
    };
    d <= 1
}

/// First index of the row maximum.
pub fn greedy_action<F: Real>(row: &[F]) -> ActionIndex {
    crate::qlearn::row_argmax(row)
}

/// Fraction of `states` whose greedy action under `q_final` agrees with the
/// greedy action of `reference(x)`; `None` when `states` is empty.
pub fn agreement_fraction<F: Real>(
    q_final: &QTable<F>,
    states: &[u32],
    rule: NeighborRule,
    mut reference: impl FnMut(StateIndex) -> Vec<F>,
) -> Option<F> {
    if states.is_empty() {
        return None;
    }
    let shape = q_final.shape();
    let hits = states
        .iter()
        .filter(|&&x| {
            let x = x as usize;
            actions_agree(shape, q_final.argmax(x), greedy_action(&reference(x)), rule)
        })
        .count();
    Some(F::from_usize(hits).unwrap() / F::from_usize(states.len()).unwrap())
}

/// Per-run `X` average for the `T̂`-step best response.
pub fn equilibrium_indicator<F: Real>(
    q_final: &QTable<F>,
    br: &BestResponse<F>,
    profits: &ProfitTable<F>,
    states: &[u32],
    rule: NeighborRule,
) -> Option<F> {
    agreement_fraction(q_final, states, rule, |x| br.row(profits, x))
}

/// Per-run `X^(one)` average for the one-step best response.
pub fn one_step_indicator<F: Real>(
    q_final: &QTable<F>,
    br: &BestResponse<F>,
    profits: &ProfitTable<F>,
    states: &[u32],
    rule: NeighborRule,
) -> Option<F> {
    agreement_fraction(q_final, states, rule, |x| br.one_step_row(profits, x))
}

/// Mean of per-run values (`Y_k`); `None` for an empty category.
pub fn equilibrium_frequency<F: Real>(per_run: &[F]) -> Option<F> {
    (!per_run.is_empty()).then(|| per_run.iter().copied().sum::<F>() / F::from_usize(per_run.len()).unwrap())
}

/// Joint greedy step.
pub fn greedy_step<F: Real>(q: [&QTable<F>; 2], s: StateIndex) -> StateIndex {
    q[0].shape().state(q[0].argmax(s), q[1].argmax(s))
}

/// Who deviates to the static Nash price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviationMode {
    /// Platform 1 deviates, platform 2 plays greedily.
    One,
    Both,
}

/// Deviates from `last_state` to `nash_action`, follows greedy play for
/// `rollout` steps and reports whether the final state lies in `cycle_states`.
pub fn deviation_test<F: Real>(
    q: [&QTable<F>; 2],
    last_state: StateIndex,
    nash_action: ActionIndex,
    cycle_states: &[u32],
    mode: DeviationMode,
    rollout: usize,
) -> bool {
    let shape = q[0].shape();
    let rival = match mode {
        DeviationMode::One => q[1].argmax(last_state),
        DeviationMode::Both => nash_action,
    };
    let mut s = shape.state(nash_action, rival);
    for _ in 0..rollout {
        s = greedy_step(q, s);
    }
    cycle_states.contains(&(s as u32))
}

/// `(1/|P_s|)·Σ_j |Σ_{τ=0..H} δ^τ π_{t_j+τ} − max_p Q⁽⁰⁾(p, x_{t_j})|` over the
/// first `n_path` steps of the tail, where step `j` (1-based) is taken in
/// state `tail[j−1]` and earns the profit of `tail[j]`. Rewards past the
/// tail come from greedy play of the final tables.
#[allow(clippy::too_many_arguments)]
pub fn q_loss_on_path<F: Real>(
    tail: &[u32],
    n_path: usize,
    q: [&QTable<F>; 2],
    br: &BestResponse<F>,
    profits: &ProfitTable<F>,
    delta: F,
    horizon: usize,
) -> Result<F, AnalysisError> {
    if n_path == 0 {
        return Err(AnalysisError::EmptyPath);
    }
    if tail.len() < 2 {
        return Err(AnalysisError::TailTooShort {
            len: tail.len(),
            needed: 2,
        });
    }
    let needed = n_path + horizon + 1;
    let mut path: Vec<usize> = tail.iter().take(needed).map(|&s| s as usize).collect();
    while path.len() < needed {
        let last = *path.last().unwrap();
        path.push(greedy_step(q, last));
    }
    let i = br.responder();
    let mut total = F::zero();
    for j in 1..=n_path {
        let x = path[j - 1];
        let mut disc = F::zero();
        let mut w = F::one();
        for s in &path[j..=j + horizon] {
            disc = disc + w * profits.get(*s)[i];
            w = w * delta;
        }
        total = total + (disc - br.values()[x]).abs();
    }
    Ok(total / F::from_usize(n_path).unwrap())
}

/// `(1/|𝒮|)·Σ_x |max_p a(p, x) − max_p b(p, x)|`.
pub fn q_loss_all_states<F: Real>(a: &QTable<F>, b: &QTable<F>) -> Result<F, AnalysisError> {
    if a.shape() != b.shape() {
        return Err(AnalysisError::ShapeMismatch);
    }
    let n = a.shape().n_states();
    let total = (0..n).map(|x| (a.max(x) - b.max(x)).abs()).sum::<F>();
    Ok(total / F::from_usize(n).unwrap())
}

/// [`q_loss_all_states`] against precomputed row maxima of the reference.
pub fn q_loss_against_values<F: Real>(a: &QTable<F>, values: &[F]) -> Result<F, AnalysisError> {
    let n = a.shape().n_states();
    if values.len() != n {
        return Err(AnalysisError::ShapeMismatch);
    }
    let total = (0..n).map(|x| (a.max(x) - values[x]).abs()).sum::<F>();
    Ok(total / F::from_usize(n).unwrap())
}
