//! Gradient-boosted least-squares regression trees over one or two
//! predictors, on quantile-binned features.
//!
//! Rows are put into a canonical order before fitting, so the model does not
//! depend on the order of the training data. Trees grow level by level; a
//! split is kept only when it lowers the squared error. Leaves hold
//! `lr·Σr/(n + λ)`.

use serde::{Deserialize, Serialize};

use super::AdditiveError;

/// Fewest rows accepted by [`fit_tree_smoother`].
pub const MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmootherConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Upper bound on histogram bins per feature.
    pub max_bins: usize,
    pub min_samples_leaf: usize,
    /// Leaves also hold at least this fraction of the rows. Each component
    /// is fitted while the other terms act as noise; large leaves keep the
    /// ensemble from chasing it.
    pub min_leaf_fraction: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Recorded with the model; fitting is full-batch and uses no randomness.
    pub seed: u64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            n_trees: 300,
            max_depth: 3,
            learning_rate: 0.1,
            max_bins: 256,
            min_samples_leaf: 1,
            min_leaf_fraction: 0.08,
            lambda: 0.0,
            seed: 0,
        }
    }
}

impl SmootherConfig {
    pub fn with_depth(max_depth: usize) -> Self {
        Self {
            max_depth,
            ..Self::default()
        }
    }
}

/// Split points of one feature: `bin(x) = #{c ∈ cuts : c < x}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub cuts: Vec<f64>,
}

impl Binning {
    /// Midpoints between consecutive distinct values, thinned to quantiles
    /// when there are more than `max_bins` distinct values.
    pub fn from_values(values: &[f64], max_bins: usize) -> Self {
        let mut v: Vec<f64> = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite predictors"));
        v.dedup();
        let n = v.len();
        let max_bins = max_bins.clamp(2, u16::MAX as usize);
        let cuts: Vec<f64> = if n <= max_bins {
            v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
        } else {
            let mut cuts: Vec<f64> = (1..max_bins)
                .map(|k| {
                    let i = (k * n / max_bins).clamp(1, n - 1);
                    0.5 * (v[i - 1] + v[i])
                })
                .collect();
            cuts.dedup();
            cuts
        };
        Self { cuts }
    }

    pub fn n_bins(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn bin(&self, x: f64) -> usize {
        self.cuts.partition_point(|c| *c < x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[feature] ≤ threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        /// Bin-space threshold: `bin ≤ bin_threshold` goes left.
        bin_threshold: usize,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    fn predict_binned(&self, bins: &[usize]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    bin_threshold,
                    left,
                    right,
                    ..
                } => i = if bins[*feature] <= *bin_threshold { *left } else { *right },
            }
        }
    }
}

/// A fitted boosted ensemble: `base + Σ trees`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSmoother {
    pub base: f64,
    pub binnings: Vec<Binning>,
    pub trees: Vec<Tree>,
    pub config: SmootherConfig,
}

impl TreeSmoother {
    pub fn n_features(&self) -> usize {
        self.binnings.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Prediction for a point given its bin indices.
    pub fn predict_bins(&self, bins: &[usize]) -> f64 {
        self.base + self.trees.iter().map(|t| t.predict_binned(bins)).sum::<f64>()
    }

    /// Prediction with only the first `k` trees.
    pub fn predict_partial(&self, x: &[f64], k: usize) -> f64 {
        self.base + self.trees[..k.min(self.trees.len())].iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

struct BestSplit {
    gain: f64,
    feature: usize,
    bin: usize,
}

/// Fits the ensemble to `x` (rows of 1 or 2 predictors) and `y`.
pub fn fit_tree_smoother(x: &[Vec<f64>], y: &[f64], cfg: &SmootherConfig) -> Result<TreeSmoother, AdditiveError> {
    let n = y.len();
    if x.len() != n {
        return Err(AdditiveError::ShapeMismatch(format!("{} rows of predictors, {} responses", x.len(), n)));
    }
    if n < MIN_SAMPLES {
        return Err(AdditiveError::TooFewSamples { got: n, need: MIN_SAMPLES });
    }
    let p = x[0].len();
    if p == 0 || x.iter().any(|r| r.len() != p) {
        return Err(AdditiveError::ShapeMismatch("predictor rows must share a positive width".into()));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(AdditiveError::NonFinite);
    }

    // canonical row order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        x[a].iter()
            .zip(&x[b])
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| y[a].total_cmp(&y[b]))
    });
    let xs: Vec<&[f64]> = order.iter().map(|&i| x[i].as_slice()).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    let binnings: Vec<Binning> = (0..p)
        .map(|f| Binning::from_values(&xs.iter().map(|r| r[f]).collect::<Vec<_>>(), cfg.max_bins))
        .collect();
    // column-major bin codes
    let bins: Vec<Vec<u16>> = (0..p)
        .map(|f| xs.iter().map(|r| binnings[f].bin(r[f]) as u16).collect())
        .collect();

    let base = super::shifted_mean(&ys);
    let min_leaf = cfg
        .min_samples_leaf
        .max((cfg.min_leaf_fraction * n as f64).ceil() as usize)
        .max(1);
    let mut pred = vec![base; n];
    let mut resid = vec![0.0; n];
    let mut node_of = vec![0u32; n];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for _ in 0..cfg.n_trees {
        resid.iter_mut().zip(ys.iter().zip(&pred)).for_each(|(r, (a, b))| *r = a - b);
        node_of.fill(0);
        let tree = grow_tree(&bins, &binnings, &resid, &mut node_of, min_leaf, cfg);
        for (pi, &node) in pred.iter_mut().zip(&node_of) {
            if let Node::Leaf(v) = tree.nodes[node as usize] {
                *pi += v;
            }
        }
        trees.push(tree);
    }
    Ok(TreeSmoother {
        base,
        binnings,
        trees,
        config: *cfg,
    })
}

/// Grows one tree level by level. Each level makes one pass over the rows in
/// canonical order to accumulate per-node histograms and one pass to route
/// rows to children; on return `node_of[i]` is the leaf holding row `i`.
fn grow_tree(
    bins: &[Vec<u16>],
    binnings: &[Binning],
    resid: &[f64],
    node_of: &mut [u32],
    min_leaf: usize,
    cfg: &SmootherConfig,
) -> Tree {
    let p = bins.len();
    let n_bins: Vec<usize> = binnings.iter().map(Binning::n_bins).collect();
    let offsets: Vec<usize> = n_bins
        .iter()
        .scan(0, |acc, nb| {
            let o = *acc;
            *acc += nb;
            Some(o)
        })
        .collect();
    let width: usize = n_bins.iter().sum();

    let mut nodes = vec![Node::Leaf(0.0)];
    let mut active: Vec<usize> = vec![0];
    for depth in 0..=cfg.max_depth {
        let k = active.len();
        let grow = depth < cfg.max_depth;
        let mut slot_of = vec![u32::MAX; nodes.len()];
        for (s, &node) in active.iter().enumerate() {
            slot_of[node] = s as u32;
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        let slot_row: Vec<u32> = node_of.iter().map(|&node| slot_of[node as usize]).collect();
        for (&s, &r) in slot_row.iter().zip(resid) {
            if s != u32::MAX {
                sums[s as usize] += r;
                counts[s as usize] += 1;
            }
        }
        let mut hs = vec![0.0; if grow { k * width } else { 0 }];
        let mut hc = vec![0u32; if grow { k * width } else { 0 }];
        if grow {
            for f in 0..p {
                for ((&s, &r), &b) in slot_row.iter().zip(resid).zip(&bins[f]) {
                    if s != u32::MAX {
                        let at = s as usize * width + offsets[f] + b as usize;
                        hs[at] += r;
                        hc[at] += 1;
                    }
                }
            }
        }

        let mut next = Vec::new();
        let mut routes: Vec<Option<(usize, u16, u32)>> = vec![None; k];
        for (s, &node) in active.iter().enumerate() {
            let split = if grow {
                let h = |f: usize| {
                    let lo = s * width + offsets[f];
                    (&hs[lo..lo + n_bins[f]], &hc[lo..lo + n_bins[f]])
                };
                best_split(p, h, sums[s], counts[s], min_leaf, cfg.lambda)
            } else {
                None
            };
            match split {
                None => nodes[node] = Node::Leaf(cfg.learning_rate * sums[s] / (counts[s] as f64 + cfg.lambda)),
                Some(b) => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    nodes.push(Node::Leaf(0.0));
                    nodes[node] = Node::Split {
                        feature: b.feature,
                        threshold: binnings[b.feature].cuts[b.bin],
                        bin_threshold: b.bin,
                        left,
                        right: left + 1,
                    };
                    routes[s] = Some((b.feature, b.bin as u16, left as u32));
                    next.push(left);
                    next.push(left + 1);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        for ((node, &s), i) in node_of.iter_mut().zip(&slot_row).zip(0..) {
            if s == u32::MAX {
                continue;
            }
            if let Some((f, b, left)) = routes[s as usize] {
                *node = if bins[f][i] <= b { left } else { left + 1 };
            }
        }
        active = next;
    }
    Tree { nodes }
}

fn best_split<'a>(
    p: usize,
    hist: impl Fn(usize) -> (&'a [f64], &'a [u32]),
    sum: f64,
    n: usize,
    min_leaf: usize,
    lambda: f64,
) -> Option<BestSplit> {
    if n < 2 * min_leaf {
        return None;
    }
    let score = |s: f64, c: usize| s * s / (c as f64 + lambda);
    let parent = score(sum, n);
    let mut best: Option<BestSplit> = None;
    for f in 0..p {
        let (hs, hc) = hist(f);
        let (mut sl, mut cl) = (0.0, 0usize);
        for b in 0..hs.len() - 1 {
            sl += hs[b];
            cl += hc[b] as usize;
            let cr = n - cl;
            if hc[b] == 0 || cl < min_leaf || cr < min_leaf {
                continue;
            }
            let gain = score(sl, cl) + score(sum - sl, cr) - parent;
            if gain > best.as_ref().map_or(1e-12 * (1.0 + parent), |b| b.gain) {
                best = Some(BestSplit { gain, feature: f, bin: b });
            }
        }
    }
    best
}
