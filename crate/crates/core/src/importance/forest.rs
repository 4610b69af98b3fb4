//! Regression forest on the estimated effects, scored by depth-weighted
//! split frequencies.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;

use crate::learners::tree::{grow, Binned, Tree, TreeParams};
use crate::math::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub trees: usize,
    /// Share of rows drawn without replacement per tree.
    pub sample_fraction: f64,
    pub min_node: usize,
    /// Split-frequency depths counted by the importance measure.
    pub importance_depth: usize,
    pub decay: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { trees: 500, sample_fraction: 0.5, min_node: 5, importance_depth: 4, decay: 2.0 }
    }
}

/// Candidate columns per split: `min(ceil(sqrt(p) + 20), p)`.
pub fn default_mtry(p: usize) -> usize {
    (((p as f64).sqrt() + 20.0).ceil() as usize).min(p).max(1)
}

pub fn fit_forest(x: &Matrix, y: &[f64], params: &ForestParams, seed: u64) -> Vec<Tree> {
    let n = x.rows();
    let p = x.cols();
    let cols: Vec<usize> = (0..p).collect();
    let rows: Vec<usize> = (0..n).collect();
    let binned = Binned::new(x, &cols, &rows, 64);
    let tp = TreeParams { max_depth: usize::MAX, min_leaf: params.min_node, mtry: Some(default_mtry(p)) };
    let take = ((n as f64 * params.sample_fraction).round() as usize).clamp(1, n);
    let mean_leaf = |s: f64, k: usize| s / k as f64;
    (0..params.trees)
        .map(|b| {
            let mut r = rng::stream(seed, b as u64);
            let mut sample = rows.clone();
            rng::shuffle(&mut r, &mut sample);
            sample.truncate(take);
            grow(&binned, y, sample, &tp, &mut r, &mean_leaf)
        })
        .collect()
}

/// Split counts per depth are normalized to frequencies, then averaged with
/// weights `depth^-decay` (depth 1 at the root).
pub fn split_frequency_importance(trees: &[Tree], p: usize, max_depth: usize, decay: f64) -> Vec<f64> {
    let mut counts = vec![vec![0.0; p]; max_depth];
    for t in trees {
        for (col, depth) in t.splits() {
            if depth < max_depth {
                counts[depth][col] += 1.0;
            }
        }
    }
    let mut out = vec![0.0; p];
    let mut wsum = 0.0;
    for (k, row) in counts.iter().enumerate() {
        let w = ((k + 1) as f64).powf(-decay);
        wsum += w;
        let total: f64 = row.iter().sum::<f64>().max(1.0);
        for j in 0..p {
            out[j] += w * row[j] / total;
        }
    }
    out.iter_mut().for_each(|v| *v /= wsum);
    out
}

pub fn forest_importance(x: &Matrix, y: &[f64], params: &ForestParams, seed: u64) -> Vec<f64> {
    let trees = fit_forest(x, y, params, seed);
    split_frequency_importance(&trees, x.cols(), params.importance_depth, params.decay)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mtry_rule() {
        assert_eq!(default_mtry(10), 10);
        assert_eq!(default_mtry(100), 30);
    }

    #[test]
    fn signal_column_dominates() {
        let n = 600;
        let mut r = rng::stream(9, 0);
        let mut x = Matrix::zeros(n, 4);
        let mut y = vec![0.0; n];
        for i in 0..n {
            for j in 0..4 {
                x.set(i, j, rng::uniform(&mut r));
            }
            y[i] = 3.0 * x.get(i, 2) + 0.01 * rng::normal(&mut r);
        }
        let imp = forest_importance(&x, &y, &ForestParams { trees: 100, ..Default::default() }, 1);
        assert!(imp[2] > 0.9, "{imp:?}");
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
