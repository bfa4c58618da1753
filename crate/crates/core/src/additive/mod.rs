//! Additive decomposition of the collusive level over the externality
//! matrix:
//!
//! ```text
//! Δ̃(Φ) ≈ Δ₀ + Σ_j f_j(φ_j) + Σ_{j<k} f_jk(φ_j, φ_k)
//! ```
//!
//! Components are fitted sequentially on residuals with a boosted-tree
//! smoother, once per ordering of the terms, and averaged over orderings.
//! The averaged components are stored as lookup tables over the histogram
//! bins of their predictors. This module works in `f64` only.

mod smoother;
mod tables;

use itertools::Itertools;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::ExternalityMatrix;

pub use smoother::{fit_tree_smoother, Binning, Node, SmootherConfig, Tree, TreeSmoother, MIN_SAMPLES};
pub use tables::{StepTable1D, StepTable2D};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AdditiveError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite predictor or response")]
    NonFinite,
}

/// Four i.i.d. standard normal entries.
pub fn sample_phi<R: Rng + ?Sized>(rng: &mut R) -> ExternalityMatrix<f64> {
    let mut d = || rng.sample::<f64, _>(StandardNormal);
    ExternalityMatrix::new(d(), d(), d(), d())
}

/// An entry of `Φ`; the discriminant is its column in `[φ_bb, φ_bs, φ_sb, φ_ss]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Entry {
    Bb = 0,
    Bs = 1,
    Sb = 2,
    Ss = 3,
}

impl Entry {
    /// Default fitting order of the univariate terms.
    pub const UNIVARIATE: [Entry; 4] = [Entry::Bb, Entry::Ss, Entry::Bs, Entry::Sb];
    /// Default fitting order of the bivariate terms.
    pub const PAIRS: [(Entry, Entry); 6] = [
        (Entry::Bb, Entry::Ss),
        (Entry::Sb, Entry::Bs),
        (Entry::Bb, Entry::Bs),
        (Entry::Bb, Entry::Sb),
        (Entry::Ss, Entry::Bs),
        (Entry::Ss, Entry::Sb),
    ];

    pub fn column(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Entry::Bb => "bb",
            Entry::Bs => "bs",
            Entry::Sb => "sb",
            Entry::Ss => "ss",
        }
    }
}

pub fn pair_name(pair: (Entry, Entry)) -> String {
    format!("{}_{}", pair.0.name(), pair.1.name())
}

/// Training data: `Φ` as `[φ_bb, φ_bs, φ_sb, φ_ss]` rows and the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveData {
    pub phi: Vec<[f64; 4]>,
    pub y: Vec<f64>,
}

impl AdditiveData {
    pub fn new(phi: Vec<[f64; 4]>, y: Vec<f64>) -> Result<Self, AdditiveError> {
        if phi.len() != y.len() {
            return Err(AdditiveError::ShapeMismatch(format!("{} Φ rows, {} responses", phi.len(), y.len())));
        }
        if phi.len() < MIN_SAMPLES {
            return Err(AdditiveError::TooFewSamples {
                got: phi.len(),
                need: MIN_SAMPLES,
            });
        }
        if phi.iter().flatten().chain(&y).any(|v| !v.is_finite()) {
            return Err(AdditiveError::NonFinite);
        }
        Ok(Self { phi, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn column(&self, e: Entry) -> Vec<Vec<f64>> {
        self.phi.iter().map(|r| vec![r[e.column()]]).collect()
    }

    fn columns(&self, (a, b): (Entry, Entry)) -> Vec<Vec<f64>> {
        self.phi.iter().map(|r| vec![r[a.column()], r[b.column()]]).collect()
    }

    /// `(min, max)` of an entry over the sample.
    pub fn range(&self, e: Entry) -> (f64, f64) {
        self.phi.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r[e.column()]), hi.max(r[e.column()]))
        })
    }
}

/// One pass of univariate residual fitting in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateSequence {
    pub order: [Entry; 4],
    /// Fitted components in `order`.
    pub components: Vec<StepTable1D>,
    /// `residuals[0] = y − Δ₀`, `residuals[k+1] = residuals[k] − f_k(x)`.
    pub residuals: Vec<Vec<f64>>,
}

/// Fits `f_{order[0]}` to `y − Δ₀`, the next term to what is left, and so on.
pub fn fit_univariate_sequence(
    data: &AdditiveData,
    delta0: f64,
    order: [Entry; 4],
    cfg: &SmootherConfig,
) -> Result<UnivariateSequence, AdditiveError> {
    let mut r: Vec<f64> = data.y.iter().map(|y| y - delta0).collect();
    let mut residuals = vec![r.clone()];
    let mut components = Vec::with_capacity(4);
    for e in order {
        let x = data.column(e);
        let model = fit_tree_smoother(&x, &r, cfg)?;
        let table = StepTable1D::from_smoother(&model);
        for (ri, xi) in r.iter_mut().zip(&x) {
            *ri -= table.eval(xi[0]);
        }
        residuals.push(r.clone());
        components.push(table);
    }
    Ok(UnivariateSequence {
        order,
        components,
        residuals,
    })
}

/// One pass of bivariate residual fitting in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariateSequence {
    pub order: Vec<(Entry, Entry)>,
    pub components: Vec<StepTable2D>,
    pub residuals: Vec<Vec<f64>>,
}

/// Sequential residual fitting of the pair terms to the response `y1`.
pub fn fit_bivariate_sequence(
    data: &AdditiveData,
    y1: &[f64],
    order: &[(Entry, Entry)],
    cfg: &SmootherConfig,
) -> Result<BivariateSequence, AdditiveError> {
    let mut r = y1.to_vec();
    let mut residuals = vec![r.clone()];
    let mut components = Vec::with_capacity(order.len());
    for &pair in order {
        let x = data.columns(pair);
        let model = fit_tree_smoother(&x, &r, cfg)?;
        let table = StepTable2D::from_smoother(&model);
        for (ri, xi) in r.iter_mut().zip(&x) {
            *ri -= table.eval(xi[0], xi[1]);
        }
        residuals.push(r.clone());
        components.push(table);
    }
    Ok(BivariateSequence {
        order: order.to_vec(),
        components,
        residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdditiveConfig {
    pub univariate: SmootherConfig,
    pub bivariate: SmootherConfig,
    /// Orderings of the univariate terms averaged (at most 24).
    pub n_univariate_perms: usize,
    /// Orderings of the pair terms averaged; all 720 when absent.
    pub n_bivariate_perms: Option<usize>,
    /// Seed of the ordering subsample.
    pub seed: u64,
}

impl Default for AdditiveConfig {
    fn default() -> Self {
        Self {
            univariate: SmootherConfig::with_depth(3),
            bivariate: SmootherConfig::with_depth(4),
            n_univariate_perms: 24,
            n_bivariate_perms: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateComponent {
    pub entry: Entry,
    pub table: StepTable1D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BivariateComponent {
    pub pair: (Entry, Entry),
    pub table: StepTable2D,
}

/// Averaged additive decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveModel {
    pub delta0: f64,
    /// In [`Entry::UNIVARIATE`] order.
    pub univariate: Vec<UnivariateComponent>,
    /// In [`Entry::PAIRS`] order.
    pub bivariate: Vec<BivariateComponent>,
    pub n_samples: usize,
    pub n_univariate_perms: usize,
    pub n_bivariate_perms: usize,
    pub bivariate_subsampled: bool,
    /// Observed `(min, max)` of each entry, in column order.
    pub ranges: [(f64, f64); 4],
    pub config: AdditiveConfig,
}

/// Permutation ranks to average: all of them, or a seeded subsample kept in
/// rank order.
fn chosen_ranks(total: usize, wanted: usize, seed: u64) -> Vec<usize> {
    if wanted >= total {
        return (0..total).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranks = sample(&mut rng, total, wanted).into_vec();
    ranks.sort_unstable();
    ranks
}

/// Orderings processed concurrently between ordered reductions.
const BATCH: usize = 16;

pub fn fit_additive_model(data: &AdditiveData, cfg: &AdditiveConfig) -> Result<AdditiveModel, AdditiveError> {
    let n = data.len();
    let delta0 = shifted_mean(&data.y);

    // univariate stage
    let uni_perms: Vec<Vec<usize>> = (0..4).permutations(4).collect();
    let uni_ranks = chosen_ranks(uni_perms.len(), cfg.n_univariate_perms.max(1), cfg.seed);
    let fits: Vec<UnivariateSequence> = uni_ranks
        .par_iter()
        .map(|&r| {
            let p = &uni_perms[r];
            let order = [
                Entry::UNIVARIATE[p[0]],
                Entry::UNIVARIATE[p[1]],
                Entry::UNIVARIATE[p[2]],
                Entry::UNIVARIATE[p[3]],
            ];
            fit_univariate_sequence(data, delta0, order, &cfg.univariate)
        })
        .collect::<Result<_, _>>()?;
    let mut univariate: Vec<UnivariateComponent> = Entry::UNIVARIATE
        .iter()
        .map(|&entry| {
            let mut acc: Option<StepTable1D> = None;
            for fit in &fits {
                let k = fit.order.iter().position(|e| *e == entry).unwrap();
                match acc.as_mut() {
                    None => acc = Some(fit.components[k].clone()),
                    Some(a) => a.add_assign(&fit.components[k]),
                }
            }
            let mut table = acc.unwrap();
            table.scale(1.0 / fits.len() as f64);
            UnivariateComponent { entry, table }
        })
        .collect();
    drop(fits);

    // bivariate stage on y1 = Δ̃ − (Δ₀ + Σ f̂_j)
    let y1: Vec<f64> = data
        .phi
        .iter()
        .zip(&data.y)
        .map(|(row, y)| {
            let fitted: f64 = univariate.iter().map(|c| c.table.eval(row[c.entry.column()])).sum();
            y - (delta0 + fitted)
        })
        .collect();
    let bi_perms: Vec<Vec<usize>> = (0..6).permutations(6).collect();
    let wanted = cfg.n_bivariate_perms.unwrap_or(bi_perms.len()).max(1);
    let bi_ranks = chosen_ranks(bi_perms.len(), wanted, cfg.seed);
    let mut sums: Vec<Option<StepTable2D>> = vec![None; 6];
    for batch in bi_ranks.chunks(BATCH) {
        let fits: Vec<BivariateSequence> = batch
            .par_iter()
            .map(|&r| {
                let order: Vec<(Entry, Entry)> = bi_perms[r].iter().map(|&k| Entry::PAIRS[k]).collect();
                fit_bivariate_sequence(data, &y1, &order, &cfg.bivariate)
            })
            .collect::<Result<_, _>>()?;
        for fit in &fits {
            for (slot, pair) in sums.iter_mut().zip(Entry::PAIRS) {
                let k = fit.order.iter().position(|p| *p == pair).unwrap();
                match slot.as_mut() {
                    None => *slot = Some(fit.components[k].clone()),
                    Some(a) => a.add_assign(&fit.components[k]),
                }
            }
        }
    }
    let bivariate = sums
        .into_iter()
        .zip(Entry::PAIRS)
        .map(|(t, pair)| {
            let mut table = t.unwrap();
            table.scale(1.0 / bi_ranks.len() as f64);
            BivariateComponent { pair, table }
        })
        .collect();

    univariate.sort_by_key(|c| Entry::UNIVARIATE.iter().position(|e| *e == c.entry));
    Ok(AdditiveModel {
        delta0,
        univariate,
        bivariate,
        n_samples: n,
        n_univariate_perms: uni_ranks.len(),
        n_bivariate_perms: bi_ranks.len(),
        bivariate_subsampled: bi_ranks.len() < bi_perms.len(),
        ranges: [
            data.range(Entry::Bb),
            data.range(Entry::Bs),
            data.range(Entry::Sb),
            data.range(Entry::Ss),
        ],
        config: *cfg,
    })
}

impl AdditiveModel {
    /// `Δ₀ + Σ f_j(φ_j) + Σ f_jk(φ_j, φ_k)`.
    pub fn evaluate(&self, phi: &ExternalityMatrix<f64>) -> f64 {
        self.evaluate_row(&phi.to_array())
    }

    pub fn evaluate_row(&self, row: &[f64; 4]) -> f64 {
        let uni: f64 = self.univariate.iter().map(|c| c.table.eval(row[c.entry.column()])).sum();
        let bi: f64 = self
            .bivariate
            .iter()
            .map(|c| c.table.eval(row[c.pair.0.column()], row[c.pair.1.column()]))
            .sum();
        self.delta0 + uni + bi
    }

    pub fn univariate(&self, e: Entry) -> &StepTable1D {
        &self.univariate.iter().find(|c| c.entry == e).expect("all entries fitted").table
    }

    pub fn bivariate(&self, pair: (Entry, Entry)) -> &StepTable2D {
        &self.bivariate.iter().find(|c| c.pair == pair).expect("all pairs fitted").table
    }

    /// Share of the response variance explained on `data`.
    pub fn r_squared(&self, data: &AdditiveData) -> f64 {
        let mean = data.y.iter().sum::<f64>() / data.len() as f64;
        let ss_tot: f64 = data.y.iter().map(|y| (y - mean).powi(2)).sum();
        let ss_res: f64 = data.phi.iter().zip(&data.y).map(|(r, y)| (y - self.evaluate_row(r)).powi(2)).sum();
        if ss_tot == 0.0 {
            return if ss_res == 0.0 { 1.0 } else { 0.0 };
        }
        1.0 - ss_res / ss_tot
    }

    /// `n` equally spaced points over the observed range of `e`, as `(x, f(x))`.
    pub fn univariate_curve(&self, e: Entry, n: usize) -> Vec<(f64, f64)> {
        let (lo, hi) = self.ranges[e.column()];
        linspace(lo, hi, n).into_iter().map(|x| (x, self.univariate(e).eval(x))).collect()
    }

    /// `n × n` grid over the observed ranges of a pair, as `(x, y, f(x, y))`.
    pub fn bivariate_surface(&self, pair: (Entry, Entry), n: usize) -> Vec<(f64, f64, f64)> {
        let (ax, bx) = self.ranges[pair.0.column()];
        let (ay, by) = self.ranges[pair.1.column()];
        let table = self.bivariate(pair);
        let ys = linspace(ay, by, n);
        linspace(ax, bx, n)
            .into_iter()
            .flat_map(|x| ys.iter().map(move |&y| (x, y, table.eval(x, y))))
            .collect()
    }

    /// Every univariate curve as CSV `entry,x,value`.
    pub fn univariate_csv(&self, n: usize) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["entry", "x", "value"]).expect("in-memory write");
        for e in Entry::UNIVARIATE {
            for (x, v) in self.univariate_curve(e, n) {
                w.write_record([e.name().to_string(), x.to_string(), v.to_string()])
                    .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// Every bivariate surface as CSV `pair,x,y,value`.
    pub fn bivariate_csv(&self, n: usize) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["pair", "x", "y", "value"]).expect("in-memory write");
        for pair in Entry::PAIRS {
            for (x, y, v) in self.bivariate_surface(pair, n) {
                w.write_record([pair_name(pair), x.to_string(), y.to_string(), v.to_string()])
                    .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Mean taken about the first value, so a constant sample returns that
/// constant exactly.
pub(crate) fn shifted_mean(v: &[f64]) -> f64 {
    let pivot = v[0];
    pivot + v.iter().map(|x| x - pivot).sum::<f64>() / v.len() as f64
}
