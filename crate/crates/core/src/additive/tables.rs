//! Fitted components compiled to piecewise-constant lookup tables over the
//! histogram bins of their predictors.

use serde::{Deserialize, Serialize};

use super::smoother::{Binning, Node, TreeSmoother};

/// `f(x) = values[bin(x)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTable1D {
    pub binning: Binning,
    pub values: Vec<f64>,
}

impl StepTable1D {
    pub fn zeros(binning: Binning) -> Self {
        let n = binning.n_bins();
        Self {
            binning,
            values: vec![0.0; n],
        }
    }

    /// Exact tabulation of a one-predictor ensemble.
    pub fn from_smoother(model: &TreeSmoother) -> Self {
        assert_eq!(model.n_features(), 1);
        let binning = model.binnings[0].clone();
        let values = (0..binning.n_bins()).map(|b| model.predict_bins(&[b])).collect();
        Self { binning, values }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.values[self.binning.bin(x)]
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.binning, other.binning, "tables over different bins");
        self.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `f(x, y) = values[bin_x(x)·n_y + bin_y(y)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTable2D {
    pub binning_x: Binning,
    pub binning_y: Binning,
    pub values: Vec<f64>,
}

impl StepTable2D {
    pub fn zeros(binning_x: Binning, binning_y: Binning) -> Self {
        let n = binning_x.n_bins() * binning_y.n_bins();
        Self {
            binning_x,
            binning_y,
            values: vec![0.0; n],
        }
    }

    /// Tabulates a two-predictor ensemble by summing each leaf's value over
    /// its rectangle of bins (2-D difference array, one prefix pass).
    pub fn from_smoother(model: &TreeSmoother) -> Self {
        assert_eq!(model.n_features(), 2);
        let (nx, ny) = (model.binnings[0].n_bins(), model.binnings[1].n_bins());
        let mut diff = vec![0.0; (nx + 1) * (ny + 1)];
        let at = |i: usize, j: usize| i * (ny + 1) + j;
        for tree in &model.trees {
            let mut stack = vec![(0usize, [0usize, 0], [nx - 1, ny - 1])];
            while let Some((node, lo, hi)) = stack.pop() {
                match &tree.nodes[node] {
                    Node::Leaf(v) => {
                        diff[at(lo[0], lo[1])] += v;
                        diff[at(hi[0] + 1, lo[1])] -= v;
                        diff[at(lo[0], hi[1] + 1)] -= v;
                        diff[at(hi[0] + 1, hi[1] + 1)] += v;
                    }
                    Node::Split {
                        feature,
                        bin_threshold,
                        left,
                        right,
                        ..
                    } => {
                        let f = *feature;
                        let t = *bin_threshold;
                        if lo[f] <= t {
                            let mut h = hi;
                            h[f] = h[f].min(t);
                            stack.push((*left, lo, h));
                        }
                        if hi[f] > t {
                            let mut l = lo;
                            l[f] = l[f].max(t + 1);
                            stack.push((*right, l, hi));
                        }
                    }
                }
            }
        }
        let mut values = vec![0.0; nx * ny];
        for i in 0..nx {
            let mut run = 0.0;
            for j in 0..ny {
                run += diff[at(i, j)];
                values[i * ny + j] = run + if i > 0 { values[(i - 1) * ny + j] } else { 0.0 };
            }
        }
        values.iter_mut().for_each(|v| *v += model.base);
        Self {
            binning_x: model.binnings[0].clone(),
            binning_y: model.binnings[1].clone(),
            values,
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.values[self.binning_x.bin(x) * self.binning_y.n_bins() + self.binning_y.bin(y)]
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(
            self.binning_x == other.binning_x && self.binning_y == other.binning_y,
            "tables over different bins"
        );
        self.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }
}
