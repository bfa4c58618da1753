//! Boltzmann exploration, the temperature schedule and the Q update.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{ActionIndex, StateIndex};
use super::table::{row_max, QTable};
use crate::scalar::Real;

/// Steps of the reference schedule whose end temperature short runs reproduce.
pub const REFERENCE_STEPS: f64 = 5e8;
/// Per-step decay of the reference schedule.
pub const REFERENCE_DECAY: f64 = 1.0 - 1e-7;

/// `𝒯_t = max(𝒯₀·λᵗ, floor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TemperatureSchedule<F: Real> {
    pub temp0: F,
    pub lambda: F,
    pub floor: F,
}

impl<F: Real> TemperatureSchedule<F> {
    pub fn new(temp0: F, lambda: F, floor: F) -> Self {
        Self { temp0, lambda, floor }
    }

    /// `𝒯₀ = 1000/(1 − δ)`.
    pub fn default_temp0(delta: F) -> F {
        F::lit(1000.0) / (F::one() - delta)
    }

    /// Decay that takes `steps` steps to cool as far as the reference
    /// schedule cools in [`REFERENCE_STEPS`] steps; equals [`REFERENCE_DECAY`]
    /// when `steps` is the reference length.
    pub fn rescaled_lambda(steps: u64) -> F {
        if steps as f64 == REFERENCE_STEPS {
            return F::lit(REFERENCE_DECAY);
        }
        let log_end = REFERENCE_STEPS * (-1e-7f64).ln_1p();
        F::lit((log_end / steps.max(1) as f64).exp())
    }

    pub fn at(&self, t: u64) -> F {
        temperature(t, self.temp0, self.lambda, self.floor)
    }

    pub fn is_floor(&self, temp: F) -> bool {
        temp <= self.floor
    }
}

/// `max(temp0·λᵗ, floor)`.
pub fn temperature<F: Real>(t: u64, temp0: F, lambda: F, floor: F) -> F {
    let decayed = if lambda == F::one() {
        temp0
    } else {
        temp0 * (lambda.ln() * F::from_u64(t).unwrap()).exp()
    };
    decayed.max(floor)
}

/// Boltzmann probabilities of one table row, max-subtracted.
pub fn boltzmann_probabilities<F: Real>(row: &[F], temperature: F) -> Vec<F> {
    let max = row_max(row);
    let w: Vec<F> = row.iter().map(|q| ((*q - max) / temperature).exp()).collect();
    let total: F = w.iter().copied().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Boltzmann sampler with a reusable weight buffer.
///
/// Every call consumes exactly one uniform draw. Weights whose exponent is
/// below the underflow threshold of `F` are exactly zero and are not
/// evaluated. At or below `floor` the sampler picks uniformly among the
/// maximizing actions.
#[derive(Debug, Clone, Default)]
pub struct BoltzmannSampler<F: Real> {
    weights: Vec<F>,
}

impl<F: Real> BoltzmannSampler<F> {
    pub fn new() -> Self {
        Self { weights: Vec::new() }
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, row: &[F], temperature: F, floor: F, rng: &mut R) -> ActionIndex {
        let u: f64 = rng.random();
        let max = row_max(row);
        if temperature <= floor {
            let ties = row.iter().filter(|q| **q == max).count();
            let pick = ((u * ties as f64) as usize).min(ties - 1);
            return row
                .iter()
                .enumerate()
                .filter(|(_, q)| **q == max)
                .nth(pick)
                .map(|(a, _)| a)
                .expect("row has a maximum");
        }
        let inv = F::one() / temperature;
        let cutoff = F::exp_underflow();
        self.weights.clear();
        let mut total = F::zero();
        for q in row {
            let z = (*q - max) * inv;
            let w = if z < cutoff { F::zero() } else { z.exp() };
            total = total + w;
            self.weights.push(w);
        }
        let target = F::from_f64(u).unwrap() * total;
        let mut acc = F::zero();
        let mut last_positive = 0;
        for (a, w) in self.weights.iter().enumerate() {
            if *w > F::zero() {
                acc = acc + *w;
                last_positive = a;
                if acc > target {
                    return a;
                }
            }
        }
        last_positive
    }
}

/// One Boltzmann draw with a fresh buffer.
pub fn boltzmann_sample<F: Real, R: Rng + ?Sized>(row: &[F], temperature: F, floor: F, rng: &mut R) -> ActionIndex {
    BoltzmannSampler::new().sample(row, temperature, floor, rng)
}

/// Which state's row supplies the continuation value of an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateTarget {
    /// The joint prices just played (standard Q-learning).
    #[default]
    NextState,
    /// The state the action was taken in.
    CurrentState,
}

impl UpdateTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            UpdateTarget::NextState => "next-state",
            UpdateTarget::CurrentState => "current-state",
        }
    }
}

impl std::str::FromStr for UpdateTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "next-state" => Ok(Self::NextState),
            "current-state" => Ok(Self::CurrentState),
            other => Err(format!("unknown update target `{other}` (expected next-state or current-state)")),
        }
    }
}

/// Learning rate, discount and continuation target of the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct UpdateRule<F: Real> {
    pub alpha: F,
    pub delta: F,
    pub target: UpdateTarget,
}

/// `Q(s,a) ← (1−α)Q(s,a) + α(π + δ·max_a' Q(s',a'))`.
pub fn q_update<F: Real>(
    q: &mut QTable<F>,
    s: StateIndex,
    a: ActionIndex,
    reward: F,
    s_next: StateIndex,
    rule: &UpdateRule<F>,
) {
    let cont = q.max(continuation_state(s, s_next, rule.target));
    let old = q.get(s, a);
    q.set(s, a, (F::one() - rule.alpha) * old + rule.alpha * (reward + rule.delta * cont));
}

/// `ρ·((p_b − p̄_b)₊ + (p_s − p̄_s)₊)`.
pub fn price_penalty<F: Real>(own: [F; 2], mean: [F; 2], rho: F) -> F {
    let pos = |x: F| x.max(F::zero());
    rho * (pos(own[0] - mean[0]) + pos(own[1] - mean[1]))
}

/// [`q_update`] with the reward reduced by [`price_penalty`].
#[allow(clippy::too_many_arguments)]
pub fn q_update_penalized<F: Real>(
    q: &mut QTable<F>,
    s: StateIndex,
    a: ActionIndex,
    reward: F,
    s_next: StateIndex,
    own_prices: [F; 2],
    mean_prices: [F; 2],
    rho: F,
    rule: &UpdateRule<F>,
) {
    let penalty = price_penalty(own_prices, mean_prices, rho);
    let cont = q.max(continuation_state(s, s_next, rule.target));
    let old = q.get(s, a);
    q.set(
        s,
        a,
        (F::one() - rule.alpha) * old + rule.alpha * (reward - penalty + rule.delta * cont),
    );
}

fn continuation_state(s: StateIndex, s_next: StateIndex, target: UpdateTarget) -> StateIndex {
    match target {
        UpdateTarget::NextState => s_next,
        UpdateTarget::CurrentState => s,
    }
}
