//! Feature importance for the horizon effect and Kneedle-based selection.

pub mod bart;
pub mod forest;
pub mod kneedle;

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::learners::assign_folds;
use crate::learners::glm::{self, Family, PathOptions};
use crate::math::Matrix;
use crate::rng;

pub use kneedle::{knee_point, Knee, KneeError, Shape};

/// Kneedle sensitivity.
pub const SENSITIVITY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    AdaptiveLasso,
    ElasticNet,
    RegressionForest,
    BayesTrees,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::AdaptiveLasso, Method::ElasticNet, Method::RegressionForest, Method::BayesTrees];

    pub fn name(self) -> &'static str {
        match self {
            Method::AdaptiveLasso => "adaptive_lasso",
            Method::ElasticNet => "elastic_net",
            Method::RegressionForest => "regression_forest",
            Method::BayesTrees => "bayes_tree_ensemble",
        }
    }

    pub fn from_name(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImportanceError {
    #[error("{method}: {reason}")]
    Fit { method: &'static str, reason: &'static str },
    #[error("effects have {got} entries, covariates have {expected} rows")]
    Dimension { expected: usize, got: usize },
}

/// Scorer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOptions {
    pub folds: usize,
    pub forest: forest::ForestParams,
    pub bart: bart::BartParams,
    pub adaptive_weight_cap: f64,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            forest: forest::ForestParams::default(),
            bart: bart::BartParams::default(),
            adaptive_weight_cap: 1e4,
        }
    }
}

/// Scores per feature and their descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceCurve {
    pub method: Method,
    pub scores: Vec<f64>,
    /// Feature indices from highest to lowest score; ties by index.
    pub order: Vec<usize>,
    /// 1-based rank of each feature.
    pub ranks: Vec<usize>,
}

impl ImportanceCurve {
    pub fn new(method: Method, scores: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b)));
        let mut ranks = vec![0; scores.len()];
        for (pos, &j) in order.iter().enumerate() {
            ranks[j] = pos + 1;
        }
        Self { method, scores, order, ranks }
    }

    pub fn sorted_scores(&self) -> Vec<f64> {
        self.order.iter().map(|&j| self.scores[j]).collect()
    }
}

fn linear_scores(psi: &[f64], x: &Matrix, adaptive: bool, opts: &ScoreOptions, seed: u64) -> Vec<f64> {
    let n = x.rows();
    let p = x.cols();
    let rows: Vec<usize> = (0..n).collect();
    let cols: Vec<usize> = (0..p).collect();
    let m = crate::math::mean(psi);
    if crate::math::variance(psi) <= 1e-24 * (1.0 + m * m) {
        return vec![0.0; p];
    }
    let folds = assign_folds(n, opts.folds, seed);
    let path_opts = if adaptive {
        let ridge = glm::fit_single(x, psi, &rows, &cols, Family::Gaussian, 1e-3, &PathOptions {
            alpha: 0.0,
            n_lambda: 1,
            ..PathOptions::default()
        });
        let cap = opts.adaptive_weight_cap;
        let pf = cols
            .iter()
            .map(|c| match ridge.cols.iter().position(|k| k == c) {
                Some(k) if ridge.standardized[k] != 0.0 => (1.0 / ridge.standardized[k].abs()).min(cap),
                _ => cap,
            })
            .collect();
        PathOptions { alpha: 1.0, penalty_factors: Some(pf), ..PathOptions::default() }
    } else {
        PathOptions { alpha: 0.5, ..PathOptions::default() }
    };
    let cv = glm::cv_path(x, psi, &rows, &folds, opts.folds, &cols, Family::Gaussian, &path_opts);
    let mut scores = vec![0.0; p];
    for (k, &c) in cv.model.cols.iter().enumerate() {
        scores[c] = cv.model.standardized[k].abs();
    }
    scores
}

/// Regresses the horizon effect on the covariates and scores each feature.
pub fn score_features(
    psi: &[f64],
    x: &Matrix,
    method: Method,
    opts: &ScoreOptions,
    seed: u64,
) -> Result<ImportanceCurve, ImportanceError> {
    if psi.len() != x.rows() {
        return Err(ImportanceError::Dimension { expected: x.rows(), got: psi.len() });
    }
    if psi.len() < opts.folds.max(3) {
        return Err(ImportanceError::Fit { method: method.name(), reason: "too few subjects" });
    }
    if psi.iter().any(|v| !v.is_finite()) || !x.is_finite() {
        return Err(ImportanceError::Fit { method: method.name(), reason: "non-finite input" });
    }
    let seed = rng::derive_seed(seed, method as u64);
    let scores = match method {
        Method::AdaptiveLasso => linear_scores(psi, x, true, opts, seed),
        Method::ElasticNet => linear_scores(psi, x, false, opts, seed),
        Method::RegressionForest => forest::forest_importance(x, psi, &opts.forest, seed),
        Method::BayesTrees => bart::inclusion_proportions(x, psi, &opts.bart, seed),
    };
    if scores.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(ImportanceError::Fit { method: method.name(), reason: "invalid scores" });
    }
    Ok(ImportanceCurve::new(method, scores))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub method: Method,
    /// Selected feature indices in rank order.
    pub selected: Vec<usize>,
    pub knee: Option<Knee>,
    /// Set when no knee was found; the selection is then empty.
    pub no_knee: bool,
    pub curve: ImportanceCurve,
}

/// Features ranked above the knee of the importance curve.
pub fn select_features(curve: &ImportanceCurve) -> SelectionResult {
    let sorted = curve.sorted_scores();
    let all_zero = sorted.iter().all(|&v| v == 0.0);
    match knee_point(&sorted, SENSITIVITY) {
        Ok(k) if !all_zero => SelectionResult {
            method: curve.method,
            selected: curve.order[..k.cutoff].to_vec(),
            knee: Some(k),
            no_knee: false,
            curve: curve.clone(),
        },
        _ => SelectionResult { method: curve.method, selected: Vec::new(), knee: None, no_knee: true, curve: curve.clone() },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy {
    pub ppv: f64,
    pub tpr: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    /// Selection indicator per feature.
    pub hits: Vec<bool>,
}

/// PPV and TPR against the known contributing features; PPV is 0 for an empty selection.
pub fn ppv_tpr(selected: &[usize], truth: &[usize], d: usize) -> Accuracy {
    let mut hits = vec![false; d];
    for &j in selected {
        if j < d {
            hits[j] = true;
        }
    }
    let tp = selected.iter().filter(|j| truth.contains(j)).count();
    let fp = selected.len() - tp;
    let ppv = if selected.is_empty() { 0.0 } else { tp as f64 / selected.len() as f64 };
    let tpr = if truth.is_empty() { 0.0 } else { tp as f64 / truth.len() as f64 };
    Accuracy { ppv, tpr, true_positives: tp, false_positives: fp, hits }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn signal_data(n: usize, noise: f64) -> (Matrix, Vec<f64>) {
        let mut r = rng::stream(31, 0);
        let mut x = Matrix::zeros(n, 8);
        let mut y = vec![0.0; n];
        for i in 0..n {
            for j in 0..8 {
                x.set(i, j, rng::uniform(&mut r));
            }
            y[i] = 3.0 * x.get(i, 4) + noise * rng::normal(&mut r);
        }
        (x, y)
    }

    #[test]
    fn strong_signal_ranks_first_everywhere() {
        let (x, y) = signal_data(400, 0.01);
        let opts = ScoreOptions {
            forest: forest::ForestParams { trees: 100, ..Default::default() },
            bart: bart::BartParams { trees: 20, burn_in: 100, draws: 100, ..Default::default() },
            ..Default::default()
        };
        for m in Method::ALL {
            let c = score_features(&y, &x, m, &opts, 1).unwrap();
            assert_eq!(c.order[0], 4, "{}: {:?}", m.name(), c.scores);
        }
    }

    #[test]
    fn constant_effect_scores_zero() {
        let (x, _) = signal_data(100, 0.0);
        let y = vec![-0.05; 100];
        let opts = ScoreOptions { forest: forest::ForestParams { trees: 20, ..Default::default() }, ..Default::default() };
        for m in Method::ALL {
            let c = score_features(&y, &x, m, &opts, 1).unwrap();
            assert!(c.scores.iter().all(|&s| s.abs() < 1e-9), "{}: {:?}", m.name(), c.scores);
            assert!(select_features(&c).selected.is_empty(), "{}: {:?}", m.name(), c.scores);
        }
    }

    #[test]
    fn ranks_break_ties_by_index() {
        let c = ImportanceCurve::new(Method::ElasticNet, vec![1.0, 3.0, 1.0, 2.0]);
        assert_eq!(c.order, vec![1, 3, 0, 2]);
        assert_eq!(c.ranks, vec![3, 1, 4, 2]);
    }

    #[test]
    fn selection_examples() {
        let c = ImportanceCurve::new(Method::BayesTrees, vec![1.8, 10.0, 2.0, 9.5, 1.6, 9.0]);
        let s = select_features(&c);
        assert_eq!(s.selected, vec![1, 3, 5]);
        let line = ImportanceCurve::new(Method::BayesTrees, vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        let s = select_features(&line);
        assert!(s.no_knee && s.selected.is_empty());
    }

    #[test]
    fn accuracy_examples() {
        let truth = [0, 1, 2, 3, 4];
        let a = ppv_tpr(&[0, 1, 5], &truth, 10);
        assert_relative_eq!(a.ppv, 2.0 / 3.0);
        assert_relative_eq!(a.tpr, 0.4);
        assert!(a.hits[0] && a.hits[1] && !a.hits[2] && a.hits[5]);
        let e = ppv_tpr(&[], &truth, 10);
        assert_eq!((e.ppv, e.tpr), (0.0, 0.0));
        let f = ppv_tpr(&truth, &truth, 10);
        assert_eq!((f.ppv, f.tpr), (1.0, 1.0));
    }
}
