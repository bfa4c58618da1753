//! Collusion metrics: the normalized collusive level, its two-platform
//! average, the grid maximum of the average and bootstrap intervals.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{all_profits, EquilibriumPair, MarketError, MarketParams, PriceProfile, ShareSolver};
use crate::qlearn::{ActionIndex, ProfitTable, RunResult, MIN_PROFIT_GAP};
use crate::scalar::Real;

/// Default number of bootstrap resamples.
pub const DEFAULT_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error("collusion denominator too small (|pi^C - pi*| = {gap:e})")]
    DegenerateDenominator { gap: f64 },
    #[error("empty sample")]
    EmptySample,
    #[error("confidence level must lie in [0, 1), got {0}")]
    InvalidLevel(f64),
    #[error(transparent)]
    Market(#[from] MarketError),
}

fn gap_of<F: Real>(pi_star: F, pi_coll: F) -> Result<F, MetricsError> {
    let gap = pi_coll - pi_star;
    if !(gap.abs() >= F::lit(MIN_PROFIT_GAP)) {
        return Err(MetricsError::DegenerateDenominator {
            gap: gap.to_f64_lossy(),
        });
    }
    Ok(gap)
}

/// `(π_t − π*)/(π^C − π*)`; not clamped to `[0, 1]`.
pub fn collusive_level<F: Real>(pi_t: F, pi_star: F, pi_coll: F) -> Result<F, MetricsError> {
    let gap = gap_of(pi_star, pi_coll)?;
    Ok((pi_t - pi_star) / gap)
}

/// Per-platform collusive levels at an arbitrary price profile.
pub fn platform_levels<F: Real>(
    profile: &PriceProfile<F>,
    eq: &EquilibriumPair<F>,
    params: &MarketParams<F>,
    solver: &ShareSolver<F>,
) -> Result<Vec<F>, MetricsError> {
    let gap = gap_of(eq.pi_star, eq.pi_coll)?;
    Ok(all_profits(profile, params, solver)?
        .into_iter()
        .map(|pi| (pi - eq.pi_star) / gap)
        .collect())
}

/// `(Π_a − N·π*)/(N·(π^C − π*))`, the platform average of the collusive level.
pub fn averaged_delta<F: Real>(
    profile: &PriceProfile<F>,
    eq: &EquilibriumPair<F>,
    params: &MarketParams<F>,
    solver: &ShareSolver<F>,
) -> Result<F, MetricsError> {
    let gap = gap_of(eq.pi_star, eq.pi_coll)?;
    let profits = all_profits(profile, params, solver)?;
    let n = F::from_usize(profits.len()).unwrap();
    let total = profits.into_iter().fold(F::zero(), |a, b| a + b);
    Ok((total - n * eq.pi_star) / (n * gap))
}

/// [`averaged_delta`] at the grid profile `s`, from memoized profits.
pub fn grid_averaged_delta<F: Real>(profits: &ProfitTable<F>, eq: &EquilibriumPair<F>, s: usize) -> F {
    let two = F::lit(2.0);
    (profits.total(s) - two * eq.pi_star) / (two * eq.profit_gap())
}

/// Maximum of the averaged collusive level over the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GridMaximum<F: Real> {
    pub value: F,
    /// `(a⁽¹⁾, a⁽²⁾)` attaining it.
    pub profile: (ActionIndex, ActionIndex),
}

fn better<F: Real>(a: GridMaximum<F>, b: GridMaximum<F>) -> GridMaximum<F> {
    // strict improvement only, so the lexicographically first profile wins ties
    let key = |g: &GridMaximum<F>| g.profile;
    if b.value > a.value || (b.value == a.value && key(&b) < key(&a)) {
        b
    } else {
        a
    }
}

fn scan<F: Real>(
    profits: &ProfitTable<F>,
    eq: &EquilibriumPair<F>,
    rivals: impl Fn(ActionIndex) -> std::ops::Range<ActionIndex> + Sync,
) -> Result<GridMaximum<F>, MetricsError> {
    gap_of(eq.pi_star, eq.pi_coll)?;
    let shape = profits.shape();
    let per_row: Vec<GridMaximum<F>> = (0..shape.n_actions())
        .into_par_iter()
        .map(|a1| {
            rivals(a1)
                .map(|a2| GridMaximum {
                    value: grid_averaged_delta(profits, eq, shape.state(a1, a2)),
                    profile: (a1, a2),
                })
                .fold(
                    GridMaximum {
                        value: F::neg_infinity(),
                        profile: (usize::MAX, usize::MAX),
                    },
                    better,
                )
        })
        .collect();
    Ok(per_row.into_iter().reduce(better).expect("non-empty grid"))
}

/// Brute-force maximum over the joint actions with `a⁽¹⁾ ≤ a⁽²⁾`; swapping
/// the platforms leaves the average unchanged, so this covers the grid.
pub fn max_averaged_delta<F: Real>(profits: &ProfitTable<F>, eq: &EquilibriumPair<F>) -> Result<GridMaximum<F>, MetricsError> {
    let na = profits.shape().n_actions();
    scan(profits, eq, |a1| a1..na)
}

/// Brute-force maximum over every joint action.
pub fn max_averaged_delta_exhaustive<F: Real>(
    profits: &ProfitTable<F>,
    eq: &EquilibriumPair<F>,
) -> Result<GridMaximum<F>, MetricsError> {
    let na = profits.shape().n_actions();
    scan(profits, eq, |_| 0..na)
}

/// Summary of one run's collusive level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CollusionSummary<F: Real> {
    pub delta_tilde: F,
    pub platform_means: [F; 2],
    pub denominator: F,
    pub degenerate: bool,
    /// Some platform averaged above the collusive benchmark.
    pub exceeded_one: bool,
}

impl<F: Real> CollusionSummary<F> {
    pub fn from_run(run: &RunResult<F>, eq: &EquilibriumPair<F>) -> Self {
        let means = run.platform_means();
        let denominator = eq.profit_gap();
        Self {
            delta_tilde: run.delta_tilde,
            platform_means: means,
            denominator,
            degenerate: !(denominator.abs() >= F::lit(MIN_PROFIT_GAP)),
            exceeded_one: means.iter().any(|m| *m > F::one()),
        }
    }
}

/// Type-7 (linear interpolation) quantile of ascending data.
pub fn quantile_sorted<F: Real>(sorted: &[F], q: f64) -> F {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = F::lit(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Mean accumulated relative to the first element, so that constant data
/// give that constant exactly and the mean of a sample lies in its bootstrap
/// interval.
fn mean<F: Real>(v: &[F]) -> F {
    let origin = v[0];
    let acc = v.iter().fold(F::zero(), |acc, x| acc + (*x - origin));
    origin + acc / F::from_usize(v.len()).unwrap()
}

/// Mean of one resample, accumulated relative to the first sample so that
/// constant data give that constant exactly.
fn resampled_mean<F: Real, R: Rng + ?Sized>(samples: &[F], pick: &Uniform<usize>, rng: &mut R) -> F {
    let n = samples.len();
    let origin = samples[0];
    let mut acc = F::zero();
    for _ in 0..n {
        acc = acc + (samples[pick.sample(rng)] - origin);
    }
    origin + acc / F::from_usize(n).unwrap()
}

fn index_sampler(n: usize) -> Uniform<usize> {
    Uniform::new(0, n).expect("non-empty sample")
}

/// Sorted means of `resamples` bootstrap resamples.
pub fn bootstrap_means<F: Real, R: Rng + ?Sized>(samples: &[F], resamples: usize, rng: &mut R) -> Result<Vec<F>, MetricsError> {
    if samples.is_empty() || resamples == 0 {
        return Err(MetricsError::EmptySample);
    }
    let pick = index_sampler(samples.len());
    let mut means: Vec<F> = (0..resamples).map(|_| resampled_mean(samples, &pick, rng)).collect();
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    Ok(means)
}

fn check_level(level: f64) -> Result<(), MetricsError> {
    if !(0.0..1.0).contains(&level) {
        return Err(MetricsError::InvalidLevel(level));
    }
    Ok(())
}

/// Percentile bootstrap interval of the mean: the `(1 ∓ level)/2` quantiles
/// of the resampled means. `level = 0` collapses to their median.
pub fn bootstrap_ci<F: Real, R: Rng + ?Sized>(
    samples: &[F],
    level: f64,
    resamples: usize,
    rng: &mut R,
) -> Result<(F, F), MetricsError> {
    check_level(level)?;
    let means = bootstrap_means(samples, resamples, rng)?;
    Ok((
        quantile_sorted(&means, (1.0 - level) / 2.0),
        quantile_sorted(&means, (1.0 + level) / 2.0),
    ))
}

/// One-sided percentile lower bound for `mean(a) − mean(b)`, resampling the
/// two samples independently.
pub fn bootstrap_diff_lower<F: Real, R: Rng + ?Sized>(
    a: &[F],
    b: &[F],
    level: f64,
    resamples: usize,
    rng: &mut R,
) -> Result<F, MetricsError> {
    check_level(level)?;
    if a.is_empty() || b.is_empty() || resamples == 0 {
        return Err(MetricsError::EmptySample);
    }
    let (pick_a, pick_b) = (index_sampler(a.len()), index_sampler(b.len()));
    let mut diffs: Vec<F> = (0..resamples)
        .map(|_| resampled_mean(a, &pick_a, rng) - resampled_mean(b, &pick_b, rng))
        .collect();
    diffs.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    Ok(quantile_sorted(&diffs, 1.0 - level))
}

/// Sample mean, for reporting next to an interval.
pub fn sample_mean<F: Real>(samples: &[F]) -> Result<F, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    Ok(mean(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn level_endpoints() {
        assert_eq!(collusive_level(1.0f64, 1.0, 2.0).unwrap(), 0.0);
        assert_eq!(collusive_level(2.0f64, 1.0, 2.0).unwrap(), 1.0);
        assert_eq!(collusive_level(1.5f64, 1.0, 2.0).unwrap(), 0.5);
        assert!(matches!(
            collusive_level(1.0f64, 1.0, 1.0 + 1e-9),
            Err(MetricsError::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn type7_quantiles() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&x, 0.0), 1.0);
        assert_eq!(quantile_sorted(&x, 1.0), 4.0);
        assert_eq!(quantile_sorted(&x, 0.5), 2.5);
        assert!((quantile_sorted(&x, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn constant_sample_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (lo, hi) = bootstrap_ci(&[0.25f64; 30], 0.99, 500, &mut rng).unwrap();
        assert_eq!((lo, hi), (0.25, 0.25));
        assert!(bootstrap_ci::<f64, _>(&[], 0.9, 10, &mut rng).is_err());
        assert!(bootstrap_ci(&[1.0f64], 1.0, 10, &mut rng).is_err());
    }
}
