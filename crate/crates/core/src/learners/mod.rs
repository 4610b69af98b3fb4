//! Binary-outcome learners and their cross-validated stack.
//!
//! Every learner works on a [`Design`]: a dense feature matrix whose columns
//! carry a [`ColumnRole`], so hazard designs can expose the period both as a
//! linear term and as one-hot indicators.

pub mod glm;
pub mod hinge;
pub mod spline;
pub mod stack;
pub mod tree;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::Matrix;
use crate::rng;

pub use stack::{fit_super_learner, StackedModel};

use glm::{Family, LinearPredictor, PathOptions};

/// What a design column represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    Covariate,
    /// Period index as a number.
    TimeLinear,
    /// One-hot period indicator.
    TimeIndicator,
}

#[derive(Debug, Clone)]
pub struct Design {
    pub x: Matrix,
    pub roles: Vec<ColumnRole>,
}

impl Design {
    /// All columns are covariates.
    pub fn covariates(x: Matrix) -> Self {
        let roles = vec![ColumnRole::Covariate; x.cols()];
        Self { x, roles }
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    pub fn cols(&self) -> usize {
        self.x.cols()
    }

    /// Covariates plus the linear period term.
    pub(crate) fn numeric_cols(&self) -> Vec<usize> {
        (0..self.cols()).filter(|&c| self.roles[c] != ColumnRole::TimeIndicator).collect()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LearnerError {
    #[error("{learner} failed to converge: {reason}")]
    Singular { learner: String, reason: String },
    #[error("every base learner failed")]
    AllLearnersFailed,
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid learner spec: {0}")]
    InvalidSpec(String),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("outcomes must be 0 or 1")]
    NonBinaryOutcome,
    #[error("feature matrix has non-finite values")]
    NonFiniteFeatures,
}

/// Base learner and its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnerSpec {
    /// Penalized logistic regression; `alpha` mixes lasso (1) and ridge (0).
    ElasticNet { alpha: f64, n_lambda: usize },
    /// Lasso with penalty factors `1/|b|` from a ridge fit, capped at `weight_cap`.
    AdaptiveLasso { n_lambda: usize, weight_cap: f64 },
    /// Additive natural cubic splines with a ridge penalty.
    Spline { knots: usize, ridge: f64 },
    /// Greedy forward hinge-function basis, then logistic regression on it.
    Hinge { max_terms: usize, knots: usize },
    /// Bagged regression trees averaged on the logit scale.
    TreeEnsemble { trees: usize, depth: usize, min_leaf: usize },
}

impl LearnerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::ElasticNet { .. } => "elastic_net",
            LearnerSpec::AdaptiveLasso { .. } => "adaptive_lasso",
            LearnerSpec::Spline { .. } => "spline",
            LearnerSpec::Hinge { .. } => "hinge",
            LearnerSpec::TreeEnsemble { .. } => "tree_ensemble",
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: &str| Err(LearnerError::InvalidSpec(alloc::format!("{}: {m}", self.name())));
        match *self {
            LearnerSpec::ElasticNet { alpha, n_lambda } => {
                if !(0.0..=1.0).contains(&alpha) {
                    return bad("alpha must lie in [0, 1]");
                }
                if !(1..=200).contains(&n_lambda) {
                    return bad("n_lambda must lie in 1..=200");
                }
            }
            LearnerSpec::AdaptiveLasso { n_lambda, weight_cap } => {
                if !(1..=200).contains(&n_lambda) {
                    return bad("n_lambda must lie in 1..=200");
                }
                if !(weight_cap >= 1.0 && weight_cap.is_finite()) {
                    return bad("weight_cap must be finite and >= 1");
                }
            }
            LearnerSpec::Spline { knots, ridge } => {
                if !(3..=20).contains(&knots) {
                    return bad("knots must lie in 3..=20");
                }
                if !(0.0..=1e3).contains(&ridge) {
                    return bad("ridge must lie in [0, 1000]");
                }
            }
            LearnerSpec::Hinge { max_terms, knots } => {
                if !(1..=50).contains(&max_terms) {
                    return bad("max_terms must lie in 1..=50");
                }
                if !(1..=50).contains(&knots) {
                    return bad("knots must lie in 1..=50");
                }
            }
            LearnerSpec::TreeEnsemble { trees, depth, min_leaf } => {
                if !(1..=2000).contains(&trees) {
                    return bad("trees must lie in 1..=2000");
                }
                if !(1..=20).contains(&depth) {
                    return bad("depth must lie in 1..=20");
                }
                if min_leaf == 0 {
                    return bad("min_leaf must be positive");
                }
            }
        }
        Ok(())
    }

    /// Spline, hinge and elastic-net learners.
    pub fn default_library() -> Vec<LearnerSpec> {
        vec![
            LearnerSpec::ElasticNet { alpha: 0.5, n_lambda: 50 },
            LearnerSpec::Spline { knots: 4, ridge: 1e-4 },
            LearnerSpec::Hinge { max_terms: 10, knots: 8 },
        ]
    }
}

/// A fitted base learner. `predict` returns an unclamped probability.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedLearner {
    Linear(LinearPredictor),
    Spline(spline::SplineModel),
    Hinge(hinge::HingeModel),
    Trees(tree::TreeEnsemble),
    Constant(f64),
}

impl FittedLearner {
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            FittedLearner::Linear(m) => m.predict(row),
            FittedLearner::Spline(m) => m.predict(row),
            FittedLearner::Hinge(m) => m.predict(row),
            FittedLearner::Trees(m) => m.predict(row),
            FittedLearner::Constant(p) => *p,
        }
    }
}

/// Random fold per group (e.g. per subject), balanced in size.
pub fn assign_folds(n_groups: usize, n_folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_groups).collect();
    let mut r = rng::stream(seed, rng::label::FOLDS);
    rng::shuffle(&mut r, &mut order);
    let mut fold = vec![0; n_groups];
    for (pos, &g) in order.iter().enumerate() {
        fold[g] = pos % n_folds.max(1);
    }
    fold
}

pub(crate) fn check_inputs(design: &Design, y: &[f64], min_rows: usize) -> Result<(), LearnerError> {
    if y.len() != design.rows() {
        return Err(LearnerError::Dimension { expected: design.rows(), got: y.len() });
    }
    if y.len() < min_rows {
        return Err(LearnerError::TooFewRows { needed: min_rows, got: y.len() });
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(LearnerError::NonBinaryOutcome);
    }
    if !design.x.is_finite() {
        return Err(LearnerError::NonFiniteFeatures);
    }
    Ok(())
}

fn constant_outcome(y: &[f64], rows: &[usize]) -> Option<f64> {
    let first = y[*rows.first()?];
    rows.iter().all(|&r| y[r] == first).then_some(first)
}

fn en_options(alpha: f64, n_lambda: usize) -> PathOptions {
    PathOptions { alpha, n_lambda, ..PathOptions::default() }
}

/// Penalty factors for the adaptive lasso from a light ridge fit.
fn adaptive_weights(design: &Design, y: &[f64], rows: &[usize], cols: &[usize], cap: f64) -> Vec<f64> {
    let ridge = glm::fit_single(&design.x, y, rows, cols, Family::Binomial, 1e-3, &en_options(0.0, 1));
    cols.iter()
        .map(|c| match ridge.cols.iter().position(|k| k == c) {
            Some(k) => {
                let b = ridge.standardized[k].abs();
                if b > 0.0 {
                    (1.0 / b).min(cap)
                } else {
                    cap
                }
            }
            None => cap,
        })
        .collect()
}

fn check_finite(name: &str, preds: &[f64]) -> Result<(), LearnerError> {
    if preds.iter().all(|p| p.is_finite()) {
        Ok(())
    } else {
        Err(LearnerError::Singular { learner: name.into(), reason: "non-finite predictions".into() })
    }
}

/// Out-of-fold predictions for `rows` (aligned) and the refit on all of them.
///
/// `fold_of[k]` is the fold of `rows[k]`. Penalized learners pick their
/// lambda on the same folds.
pub fn cross_fit(
    spec: &LearnerSpec,
    design: &Design,
    y: &[f64],
    rows: &[usize],
    fold_of: &[usize],
    n_folds: usize,
    seed: u64,
) -> Result<(Vec<f64>, FittedLearner), LearnerError> {
    spec.validate()?;
    if let Some(c) = constant_outcome(y, rows) {
        return Ok((vec![c; rows.len()], FittedLearner::Constant(c)));
    }
    let (oof, model) = match *spec {
        LearnerSpec::ElasticNet { alpha, n_lambda } => {
            let cols = design.numeric_cols();
            let cv = glm::cv_path(&design.x, y, rows, fold_of, n_folds, &cols, Family::Binomial, &en_options(alpha, n_lambda));
            (cv.oof, FittedLearner::Linear(cv.model))
        }
        LearnerSpec::AdaptiveLasso { n_lambda, weight_cap } => {
            let cols = design.numeric_cols();
            let pf = adaptive_weights(design, y, rows, &cols, weight_cap);
            let opts = PathOptions { penalty_factors: Some(pf), ..en_options(1.0, n_lambda) };
            let cv = glm::cv_path(&design.x, y, rows, fold_of, n_folds, &cols, Family::Binomial, &opts);
            (cv.oof, FittedLearner::Linear(cv.model))
        }
        LearnerSpec::Spline { knots, ridge } => {
            let (oof, m) = spline::cross_fit(design, y, rows, fold_of, n_folds, knots, ridge);
            (oof, FittedLearner::Spline(m))
        }
        LearnerSpec::Hinge { max_terms, knots } => {
            let (oof, m) = hinge::cross_fit(design, y, rows, fold_of, n_folds, max_terms, knots);
            (oof, FittedLearner::Hinge(m))
        }
        LearnerSpec::TreeEnsemble { trees, depth, min_leaf } => {
            let params = tree::EnsembleParams { trees, depth, min_leaf, seed };
            let mut oof = vec![0.0; rows.len()];
            for f in 0..n_folds {
                let train: Vec<usize> =
                    rows.iter().zip(fold_of).filter(|(_, &k)| k != f).map(|(&r, _)| r).collect();
                if train.len() == rows.len() {
                    continue;
                }
                let m = tree::fit_ensemble(design, y, &train, &tree::EnsembleParams {
                    seed: rng::derive_seed(seed, f as u64 + 1),
                    ..params
                });
                for (k, &r) in rows.iter().enumerate() {
                    if fold_of[k] == f {
                        oof[k] = m.predict(design.x.row(r));
                    }
                }
            }
            (oof, FittedLearner::Trees(tree::fit_ensemble(design, y, rows, &params)))
        }
    };
    check_finite(spec.name(), &oof)?;
    Ok((oof, model))
}

/// Fits one learner on every row of the design.
pub fn fit_base_learner(spec: &LearnerSpec, design: &Design, y: &[f64], seed: u64) -> Result<FittedLearner, LearnerError> {
    check_inputs(design, y, 10)?;
    let rows: Vec<usize> = (0..design.rows()).collect();
    let folds = assign_folds(rows.len(), 10, seed);
    let (_, model) = cross_fit(spec, design, y, &rows, &folds, 10, seed)?;
    let probe: Vec<f64> = rows.iter().take(64).map(|&r| model.predict(design.x.row(r))).collect();
    check_finite(spec.name(), &probe)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{clamp, mean};

    fn separable(n: usize) -> (Design, Vec<f64>) {
        let mut r = rng::stream(11, 0);
        let mut x = Matrix::zeros(n, 2);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let a = rng::uniform(&mut r) * 2.0 - 1.0;
            x.set(i, 0, a);
            x.set(i, 1, rng::uniform(&mut r));
            y[i] = if a > 0.0 { 1.0 } else { 0.0 };
        }
        (Design::covariates(x), y)
    }

    fn auc(p: &[f64], y: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i] == 1.0 && y[j] == 0.0 {
                    den += 1.0;
                    num += if p[i] > p[j] { 1.0 } else if p[i] == p[j] { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    #[test]
    fn spline_separates_separable_data() {
        let (d, y) = separable(300);
        let m = fit_base_learner(&LearnerSpec::Spline { knots: 4, ridge: 1e-4 }, &d, &y, 1).unwrap();
        let p: Vec<f64> = (0..300).map(|i| m.predict(d.x.row(i))).collect();
        assert!(auc(&p, &y) >= 0.99);
    }

    #[test]
    fn constant_outcome_predicts_near_zero() {
        let (d, _) = separable(100);
        let y = vec![0.0; 100];
        for spec in LearnerSpec::default_library() {
            let m = fit_base_learner(&spec, &d, &y, 1).unwrap();
            for i in 0..100 {
                assert!(clamp(m.predict(d.x.row(i)), 1e-6, 1.0 - 1e-6) <= 0.01);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (d, mut y) = separable(100);
        y[3] = 0.5;
        let spec = LearnerSpec::ElasticNet { alpha: 0.5, n_lambda: 10 };
        assert_eq!(fit_base_learner(&spec, &d, &y, 1), Err(LearnerError::NonBinaryOutcome));
        let small = Design::covariates(Matrix::zeros(5, 1));
        assert!(matches!(fit_base_learner(&spec, &small, &[0.0; 5], 1), Err(LearnerError::TooFewRows { .. })));
        assert!(LearnerSpec::ElasticNet { alpha: 1.5, n_lambda: 10 }.validate().is_err());
        assert!(LearnerSpec::Spline { knots: 2, ridge: 0.0 }.validate().is_err());
    }

    #[test]
    fn every_learner_runs_and_stays_in_range() {
        let (d, y) = separable(200);
        let specs = [
            LearnerSpec::ElasticNet { alpha: 0.5, n_lambda: 20 },
            LearnerSpec::AdaptiveLasso { n_lambda: 20, weight_cap: 1e4 },
            LearnerSpec::Spline { knots: 4, ridge: 1e-4 },
            LearnerSpec::Hinge { max_terms: 6, knots: 5 },
            LearnerSpec::TreeEnsemble { trees: 20, depth: 3, min_leaf: 5 },
        ];
        for spec in &specs {
            let m = fit_base_learner(spec, &d, &y, 3).unwrap();
            let p: Vec<f64> = (0..200).map(|i| m.predict(d.x.row(i))).collect();
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)), "{}", spec.name());
            assert!(auc(&p, &y) > 0.9, "{}", spec.name());
        }
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let f = assign_folds(103, 10, 5);
        assert_eq!(f, assign_folds(103, 10, 5));
        for k in 0..10 {
            let c = f.iter().filter(|&&v| v == k).count();
            assert!(c == 10 || c == 11);
        }
        assert!(mean(&f.iter().map(|&v| v as f64).collect::<Vec<_>>()) > 0.0);
    }
}
