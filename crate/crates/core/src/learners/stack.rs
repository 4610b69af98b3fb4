//! Cross-validated stacking of base learners on the probability simplex.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::{check_inputs, cross_fit, Design, FittedLearner, LearnerError, LearnerSpec};
use crate::math::{clamp, log_loss};
use crate::rng;

pub const PROB_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct StackedModel {
    pub learners: Vec<FittedLearner>,
    pub names: Vec<String>,
    /// On the simplex, one per entry of `learners`.
    pub weights: Vec<f64>,
    /// Held-out log loss per learner.
    pub cv_loss: Vec<f64>,
    /// Held-out log loss of the weighted combination.
    pub ensemble_loss: f64,
    /// Learners that failed, with the reason.
    pub dropped: Vec<(String, String)>,
    pub n_features: usize,
}

impl StackedModel {
    /// Wraps a single fitted learner.
    pub fn single(name: &str, learner: FittedLearner, n_features: usize) -> Self {
        Self {
            learners: vec![learner],
            names: vec![name.to_string()],
            weights: vec![1.0],
            cv_loss: vec![f64::NAN],
            ensemble_loss: f64::NAN,
            dropped: Vec::new(),
            n_features,
        }
    }

    /// `sum_k w_k p_k(x)`, clamped to `[1e-6, 1 - 1e-6]`. No dimension check.
    #[inline]
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut p = 0.0;
        for (m, &w) in self.learners.iter().zip(&self.weights) {
            if w > 0.0 {
                p += w * clamp(m.predict(row), PROB_FLOOR, 1.0 - PROB_FLOOR);
            }
        }
        clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    }

    pub fn predict_probability(&self, row: &[f64]) -> Result<f64, LearnerError> {
        if row.len() != self.n_features {
            return Err(LearnerError::Dimension { expected: self.n_features, got: row.len() });
        }
        Ok(self.predict(row))
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn combo(preds: &[Vec<f64>], w: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (p, &wk) in preds.iter().zip(w) {
        if wk != 0.0 {
            for (o, &pi) in out.iter_mut().zip(p) {
                *o += wk * pi;
            }
        }
    }
}

/// Simplex weights minimizing the log loss of `sum_k w_k preds[k]`.
///
/// Projected gradient with backtracking; the result is never worse than the
/// best single learner.
pub fn optimize_weights(preds: &[Vec<f64>], y: &[f64], tol: f64) -> Vec<f64> {
    let k = preds.len();
    if k == 1 {
        return vec![1.0];
    }
    let n = y.len() as f64;
    let mut w = vec![1.0 / k as f64; k];
    let mut p = vec![0.0; y.len()];
    combo(preds, &w, &mut p);
    let mut loss = log_loss(y, &p);
    let mut step = 1.0;
    for _ in 0..2000 {
        let grad: Vec<f64> = preds
            .iter()
            .map(|pk| {
                -pk.iter()
                    .zip(&p)
                    .zip(y)
                    .map(|((&a, &pi), &yi)| a * (yi / pi - (1.0 - yi) / (1.0 - pi)))
                    .sum::<f64>()
                    / n
            })
            .collect();
        let mut improved = false;
        while step > 1e-12 {
            let cand = project_simplex(&w.iter().zip(&grad).map(|(a, g)| a - step * g).collect::<Vec<_>>());
            combo(preds, &cand, &mut p);
            let l = log_loss(y, &p);
            if l < loss {
                let gain = loss - l;
                w = cand;
                loss = l;
                improved = gain > tol;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    combo(preds, &w, &mut p);
    let loss = log_loss(y, &p);
    let (best_k, best_loss) = preds
        .iter()
        .map(|pk| log_loss(y, pk))
        .enumerate()
        .fold((0, f64::INFINITY), |b, (i, l)| if l < b.1 { (i, l) } else { b });
    if best_loss < loss {
        let mut v = vec![0.0; k];
        v[best_k] = 1.0;
        return v;
    }
    w
}

/// Cross-fits every learner on shared folds, weights them and refits on all rows.
///
/// `fold_of[i]` is the fold of design row `i`; rows of one subject should
/// share a fold.
pub fn fit_super_learner(
    specs: &[LearnerSpec],
    design: &Design,
    y: &[f64],
    fold_of: &[usize],
    n_folds: usize,
    seed: u64,
) -> Result<StackedModel, LearnerError> {
    check_inputs(design, y, n_folds.max(10))?;
    if fold_of.len() != y.len() {
        return Err(LearnerError::Dimension { expected: y.len(), got: fold_of.len() });
    }
    let rows: Vec<usize> = (0..design.rows()).collect();
    let mut learners = Vec::new();
    let mut names = Vec::new();
    let mut preds = Vec::new();
    let mut dropped = Vec::new();
    for (k, spec) in specs.iter().enumerate() {
        match cross_fit(spec, design, y, &rows, fold_of, n_folds, rng::derive_seed(seed, k as u64)) {
            Ok((oof, model)) => {
                preds.push(oof.into_iter().map(|p| clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)).collect::<Vec<_>>());
                learners.push(model);
                names.push(spec.name().to_string());
            }
            Err(e) => {
                log::warn!("dropping learner {}: {e}", spec.name());
                dropped.push((spec.name().to_string(), e.to_string()));
            }
        }
    }
    if learners.is_empty() {
        return Err(LearnerError::AllLearnersFailed);
    }
    let cv_loss: Vec<f64> = preds.iter().map(|p| log_loss(y, p)).collect();
    let weights = optimize_weights(&preds, y, 1e-8);
    let mut p = vec![0.0; y.len()];
    combo(&preds, &weights, &mut p);
    let ensemble_loss = log_loss(y, &p);
    Ok(StackedModel { learners, names, weights, cv_loss, ensemble_loss, dropped, n_features: design.cols() })
}
