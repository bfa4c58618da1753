//! Limit-cycle taxonomy of the joint actions at the end of a run.

use serde::{Deserialize, Serialize};

use crate::qlearn::GridShape;

/// Longest period searched for by default.
pub const DEFAULT_MAX_PERIOD: usize = 500;

/// Behavior of a converged run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CycleCategory {
    /// Both platforms repeat the same price pair.
    OneSym,
    /// A repeated joint action with different price pairs.
    OneAsym,
    C2_4,
    C5_8,
    C9Plus,
    /// Not periodic with any period up to the search limit.
    NoCycle,
}

impl CycleCategory {
    pub const ALL: [CycleCategory; 6] = [
        CycleCategory::OneSym,
        CycleCategory::OneAsym,
        CycleCategory::C2_4,
        CycleCategory::C5_8,
        CycleCategory::C9Plus,
        CycleCategory::NoCycle,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CycleCategory::OneSym => "1-Sym",
            CycleCategory::OneAsym => "1-Asy",
            CycleCategory::C2_4 => "C2-4",
            CycleCategory::C5_8 => "C5-8",
            CycleCategory::C9Plus => "C9",
            CycleCategory::NoCycle => "NoCycle",
        }
    }

    /// Category of a cycle of length `period ≥ 1`.
    pub fn from_period(period: usize, symmetric: bool) -> Self {
        match period {
            0 => CycleCategory::NoCycle,
            1 if symmetric => CycleCategory::OneSym,
            1 => CycleCategory::OneAsym,
            2..=4 => CycleCategory::C2_4,
            5..=8 => CycleCategory::C5_8,
            _ => CycleCategory::C9Plus,
        }
    }

    /// Whether the category carries a set of cycle states.
    pub fn is_cycle(self) -> bool {
        self != CycleCategory::NoCycle
    }
}

/// Classified tail of one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub category: CycleCategory,
    /// Minimal period; 0 for [`CycleCategory::NoCycle`].
    pub period: usize,
    /// Distinct states of one cycle in order of appearance (`P_s`).
    pub states: Vec<u32>,
}

impl CycleRecord {
    pub fn contains(&self, state: u32) -> bool {
        self.states.contains(&state)
    }
}

/// Smallest `p ≤ max_period` with `seq[i] = seq[i − p]` throughout, requiring
/// at least two full repetitions.
pub fn minimal_period<T: PartialEq>(seq: &[T], max_period: usize) -> Option<usize> {
    let limit = max_period.min(seq.len() / 2);
    (1..=limit).find(|&p| (p..seq.len()).all(|i| seq[i] == seq[i - p]))
}

/// Classifies the last `window` joint actions of `tail` (state indices on
/// `shape`).
pub fn classify_cycle(tail: &[u32], shape: GridShape, window: usize, max_period: usize) -> CycleRecord {
    let w = &tail[tail.len().saturating_sub(window)..];
    match minimal_period(w, max_period) {
        None => CycleRecord {
            category: CycleCategory::NoCycle,
            period: 0,
            states: Vec::new(),
        },
        Some(period) => {
            let mut states: Vec<u32> = Vec::with_capacity(period);
            for s in &w[w.len() - period..] {
                if !states.contains(s) {
                    states.push(*s);
                }
            }
            let (a1, a2) = shape.state_actions(states[0] as usize);
            CycleRecord {
                category: CycleCategory::from_period(period, a1 == a2),
                period,
                states,
            }
        }
    }
}
