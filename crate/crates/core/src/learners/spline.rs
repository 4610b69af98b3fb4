//! Additive natural-cubic-spline logistic regression (GAM analogue).
//!
//! Each continuous covariate is expanded into a natural cubic spline basis
//! with knots at training quantiles; binary covariates and period indicators
//! enter linearly. The coefficients carry a light ridge penalty.

use alloc::vec;
use alloc::vec::Vec;

use super::glm::{self, Family, LinearPredictor, PathOptions};
use super::{ColumnRole, Design};
use crate::math::{quantile_sorted, sort_floats, Matrix};

/// Basis expansion of one source column.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Linear { col: usize },
    /// Natural cubic spline with ascending knots; `knots.len() - 1` functions.
    Spline { col: usize, knots: Vec<f64> },
}

impl Term {
    fn width(&self) -> usize {
        match self {
            Term::Linear { .. } => 1,
            Term::Spline { knots, .. } => knots.len() - 1,
        }
    }

    fn eval_into(&self, row: &[f64], out: &mut [f64]) {
        match self {
            Term::Linear { col } => out[0] = row[*col],
            Term::Spline { col, knots } => natural_spline_basis(row[*col], knots, out),
        }
    }
}

#[inline]
fn cube_pos(v: f64) -> f64 {
    if v > 0.0 {
        v * v * v
    } else {
        0.0
    }
}

/// Truncated-power natural cubic spline basis: `x` followed by `K - 2`
/// functions that are linear beyond the boundary knots.
pub fn natural_spline_basis(x: f64, knots: &[f64], out: &mut [f64]) {
    let k = knots.len();
    out[0] = x;
    let last = knots[k - 1];
    let d = |j: usize| (cube_pos(x - knots[j]) - cube_pos(x - last)) / (last - knots[j]);
    let d_pen = d(k - 2);
    for j in 0..k - 2 {
        out[j + 1] = d(j) - d_pen;
    }
}

fn distinct_count_at_most(values: &[f64], limit: usize) -> bool {
    let mut seen: Vec<f64> = Vec::new();
    for &v in values {
        if !seen.contains(&v) {
            seen.push(v);
            if seen.len() > limit {
                return false;
            }
        }
    }
    true
}

/// Knots at evenly spaced quantiles between the 5th and 95th percentile.
fn quantile_knots(mut values: Vec<f64>, n_knots: usize) -> Vec<f64> {
    sort_floats(&mut values);
    let mut knots: Vec<f64> = (0..n_knots)
        .map(|k| {
            let q = 0.05 + 0.9 * k as f64 / (n_knots - 1) as f64;
            quantile_sorted(&values, q)
        })
        .collect();
    knots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    knots
}

/// Chooses the expansion of every column from the given rows.
pub fn build_terms(design: &Design, rows: &[usize], n_knots: usize) -> Vec<Term> {
    let has_indicators = design.roles.contains(&ColumnRole::TimeIndicator);
    let mut terms = Vec::new();
    for (col, role) in design.roles.iter().enumerate() {
        match role {
            ColumnRole::TimeIndicator => terms.push(Term::Linear { col }),
            ColumnRole::TimeLinear if has_indicators => {}
            ColumnRole::TimeLinear | ColumnRole::Covariate => {
                let values: Vec<f64> = rows.iter().map(|&r| design.x.get(r, col)).collect();
                if distinct_count_at_most(&values, n_knots.max(2)) {
                    terms.push(Term::Linear { col });
                    continue;
                }
                let knots = quantile_knots(values, n_knots);
                if knots.len() >= 3 {
                    terms.push(Term::Spline { col, knots });
                } else {
                    terms.push(Term::Linear { col });
                }
            }
        }
    }
    terms
}

fn expand_row(terms: &[Term], row: &[f64], out: &mut [f64]) {
    let mut at = 0;
    for t in terms {
        let w = t.width();
        t.eval_into(row, &mut out[at..at + w]);
        at += w;
    }
}

/// Basis matrix for every row of the design (rows outside `rows` included).
pub fn expand(terms: &[Term], x: &Matrix) -> Matrix {
    let width: usize = terms.iter().map(Term::width).sum();
    let mut out = Matrix::zeros(x.rows(), width);
    for i in 0..x.rows() {
        expand_row(terms, x.row(i), out.row_mut(i));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineModel {
    pub terms: Vec<Term>,
    pub width: usize,
    pub linear: LinearPredictor,
}

impl SplineModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.width];
        expand_row(&self.terms, row, &mut buf);
        self.linear.predict(&buf)
    }
}

fn ridge_options() -> PathOptions {
    PathOptions { alpha: 0.0, n_lambda: 1, tol: 1e-9, ..PathOptions::default() }
}

/// Fits on `rows` of a pre-expanded basis.
pub(crate) fn fit_expanded(basis: &Matrix, y: &[f64], rows: &[usize], ridge: f64) -> LinearPredictor {
    let cols: Vec<usize> = (0..basis.cols()).collect();
    glm::fit_single(basis, y, rows, &cols, Family::Binomial, ridge, &ridge_options())
}

pub fn fit(design: &Design, y: &[f64], rows: &[usize], n_knots: usize, ridge: f64) -> SplineModel {
    let terms = build_terms(design, rows, n_knots);
    let basis = expand(&terms, &design.x);
    let width = basis.cols();
    let linear = fit_expanded(&basis, y, rows, ridge);
    SplineModel { terms, width, linear }
}

/// Out-of-fold predictions plus the full refit. Knots come from all rows
/// (they do not depend on the outcome).
pub(crate) fn cross_fit(
    design: &Design,
    y: &[f64],
    rows: &[usize],
    fold_of: &[usize],
    n_folds: usize,
    n_knots: usize,
    ridge: f64,
) -> (Vec<f64>, SplineModel) {
    let terms = build_terms(design, rows, n_knots);
    let basis = expand(&terms, &design.x);
    let width = basis.cols();
    let mut oof = vec![0.0; rows.len()];
    for f in 0..n_folds {
        let train: Vec<usize> = rows.iter().zip(fold_of).filter(|(_, &k)| k != f).map(|(&r, _)| r).collect();
        if train.len() == rows.len() {
            continue;
        }
        let m = fit_expanded(&basis, y, &train, ridge);
        for (k, &r) in rows.iter().enumerate() {
            if fold_of[k] == f {
                oof[k] = m.predict(basis.row(r));
            }
        }
    }
    let linear = fit_expanded(&basis, y, rows, ridge);
    (oof, SplineModel { terms, width, linear })
}
