//! Hinge-basis logistic regression (MARS analogue).
//!
//! Terms `max(0, x - c)` and `max(0, c - x)` (plus linear terms) are added
//! greedily by least-squares residual reduction on the 0/1 outcome, using
//! the candidate Gram matrix; a lightly penalized logistic fit on the chosen
//! basis gives the probabilities. Per-fold Grams are accumulated in one
//! pass, so a training Gram is the total minus its held-out fold.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;

use super::glm::{self, Family, LinearPredictor, PathOptions};
use super::Design;
use crate::math::{quantile_sorted, sort_floats, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Basis {
    Linear { col: usize },
    /// `max(0, x - knot)` when `upper`, else `max(0, knot - x)`.
    Hinge { col: usize, knot: f64, upper: bool },
}

impl Basis {
    #[inline]
    pub fn eval(&self, row: &[f64]) -> f64 {
        match *self {
            Basis::Linear { col } => row[col],
            Basis::Hinge { col, knot, upper: true } => (row[col] - knot).max(0.0),
            Basis::Hinge { col, knot, upper: false } => (knot - row[col]).max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HingeModel {
    pub basis: Vec<Basis>,
    pub linear: LinearPredictor,
}

impl HingeModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut e = self.linear.intercept;
        for (&c, &b) in self.linear.cols.iter().zip(&self.linear.coef) {
            e += b * self.basis[c].eval(row);
        }
        crate::math::sigmoid(e)
    }
}

/// Linear term per column plus hinge pairs at interior quantiles.
pub fn candidates(design: &Design, rows: &[usize], knots: usize) -> Vec<Basis> {
    let mut out = Vec::new();
    for col in design.numeric_cols() {
        out.push(Basis::Linear { col });
        let mut v: Vec<f64> = rows.iter().map(|&r| design.x.get(r, col)).collect();
        sort_floats(&mut v);
        let mut distinct = v.clone();
        distinct.dedup();
        if distinct.len() <= 2 {
            continue;
        }
        let mut ks: Vec<f64> = (1..=knots).map(|k| quantile_sorted(&v, k as f64 / (knots + 1) as f64)).collect();
        ks.dedup();
        for knot in ks {
            if knot <= distinct[0] || knot >= distinct[distinct.len() - 1] {
                continue;
            }
            out.push(Basis::Hinge { col, knot, upper: true });
            out.push(Basis::Hinge { col, knot, upper: false });
        }
    }
    out
}

/// Raw sums over a row set: upper-triangular `sum v v'`, `sum v`, `sum v y`.
#[derive(Debug, Clone)]
struct Moments {
    m: usize,
    g: Vec<f64>,
    s: Vec<f64>,
    sy: Vec<f64>,
    syy: f64,
    sum_y: f64,
    n: f64,
}

impl Moments {
    fn zero(m: usize) -> Self {
        Self { m, g: vec![0.0; m * m], s: vec![0.0; m], sy: vec![0.0; m], syy: 0.0, sum_y: 0.0, n: 0.0 }
    }

    fn add_row(&mut self, v: &[f64], y: f64) {
        let m = self.m;
        for a in 0..m {
            let va = v[a];
            if va == 0.0 {
                continue;
            }
            self.s[a] += va;
            self.sy[a] += va * y;
            let ga = &mut self.g[a * m..(a + 1) * m];
            for b in a..m {
                ga[b] += va * v[b];
            }
        }
        self.syy += y * y;
        self.sum_y += y;
        self.n += 1.0;
    }

    fn absorb(&mut self, other: &Moments) {
        let add = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.g, &other.g);
        add(&mut self.s, &other.s);
        add(&mut self.sy, &other.sy);
        self.syy += other.syy;
        self.sum_y += other.sum_y;
        self.n += other.n;
    }

    fn minus(&self, other: &Moments) -> Moments {
        let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();
        Moments {
            m: self.m,
            g: sub(&self.g, &other.g),
            s: sub(&self.s, &other.s),
            sy: sub(&self.sy, &other.sy),
            syy: self.syy - other.syy,
            sum_y: self.sum_y - other.sum_y,
            n: self.n - other.n,
        }
    }

    #[inline]
    fn centered(&self, a: usize, b: usize) -> f64 {
        let (i, j) = if a <= b { (a, b) } else { (b, a) };
        self.g[i * self.m + j] - self.s[i] * self.s[j] / self.n
    }
}

/// Greedy forward selection of up to `max_terms` candidates.
fn select(mo: &Moments, max_terms: usize) -> Vec<usize> {
    let m = mo.m;
    if mo.n < 2.0 {
        return Vec::new();
    }
    let cy: Vec<f64> = (0..m).map(|j| mo.sy[j] - mo.s[j] * mo.sum_y / mo.n).collect();
    let yy = mo.syy - mo.sum_y * mo.sum_y / mo.n;
    if yy <= 0.0 {
        return Vec::new();
    }
    let mut chosen: Vec<usize> = Vec::new();
    // rows of the Cholesky factor of the chosen block, and L^{-1} c_y
    let mut l_rows: Vec<Vec<f64>> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut v = Vec::new();
    while chosen.len() < max_terms {
        let mut best: Option<(f64, usize, Vec<f64>, f64)> = None;
        for j in 0..m {
            if chosen.contains(&j) {
                continue;
            }
            let gjj = mo.centered(j, j);
            if gjj <= 1e-12 * mo.n {
                continue;
            }
            v.clear();
            for (k, row) in l_rows.iter().enumerate() {
                let mut s = mo.centered(chosen[k], j);
                for q in 0..k {
                    s -= row[q] * v[q];
                }
                v.push(s / row[k]);
            }
            let denom = gjj - v.iter().map(|a| a * a).sum::<f64>();
            if denom <= 1e-9 * gjj {
                continue;
            }
            let num = cy[j] - v.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
            let red = num * num / denom;
            if best.as_ref().is_none_or(|b| red > b.0) {
                best = Some((red, j, v.clone(), denom));
            }
        }
        let Some((red, j, vj, denom)) = best else { break };
        if red < 1e-3 * yy {
            break;
        }
        let d = denom.sqrt();
        let num = cy[j] - vj.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        let mut row = vj;
        row.push(d);
        l_rows.push(row);
        u.push(num / d);
        chosen.push(j);
    }
    chosen
}

fn fit_logistic(design: &Design, y: &[f64], rows: &[usize], basis: Vec<Basis>) -> HingeModel {
    let k = basis.len();
    let mut bx = Matrix::zeros(design.rows(), k);
    for &r in rows {
        let src = design.x.row(r);
        let dst = bx.row_mut(r);
        for (d, b) in dst.iter_mut().zip(&basis) {
            *d = b.eval(src);
        }
    }
    let cols: Vec<usize> = (0..k).collect();
    let opts = PathOptions { alpha: 0.0, n_lambda: 1, ..PathOptions::default() };
    let linear = glm::fit_single(&bx, y, rows, &cols, Family::Binomial, 1e-4, &opts);
    HingeModel { basis, linear }
}

pub(crate) fn cross_fit(
    design: &Design,
    y: &[f64],
    rows: &[usize],
    fold_of: &[usize],
    n_folds: usize,
    max_terms: usize,
    knots: usize,
) -> (Vec<f64>, HingeModel) {
    let cand = candidates(design, rows, knots);
    let m = cand.len();
    let mut per_fold = vec![Moments::zero(m); n_folds];
    let mut buf = vec![0.0; m];
    for (k, &r) in rows.iter().enumerate() {
        let row = design.x.row(r);
        for (b, c) in buf.iter_mut().zip(&cand) {
            *b = c.eval(row);
        }
        per_fold[fold_of[k]].add_row(&buf, y[r]);
    }
    let mut total = Moments::zero(m);
    for f in &per_fold {
        total.absorb(f);
    }
    let mut oof = vec![0.0; rows.len()];
    for (f, fold) in per_fold.iter().enumerate() {
        if fold.n == 0.0 || fold.n == total.n {
            continue;
        }
        let train_mo = total.minus(fold);
        let chosen = select(&train_mo, max_terms);
        let train: Vec<usize> = rows.iter().zip(fold_of).filter(|(_, &k)| k != f).map(|(&r, _)| r).collect();
        let model = fit_logistic(design, y, &train, chosen.iter().map(|&j| cand[j]).collect());
        for (k, &r) in rows.iter().enumerate() {
            if fold_of[k] == f {
                oof[k] = model.predict(design.x.row(r));
            }
        }
    }
    let chosen = select(&total, max_terms);
    let model = fit_logistic(design, y, rows, chosen.iter().map(|&j| cand[j]).collect());
    (oof, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn picks_the_kink_column() {
        // y = 1 exactly when x0 > 0.6; x1 is noise
        let n = 400;
        let mut r = rng::stream(3, 0);
        let mut x = Matrix::zeros(n, 2);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let a = rng::uniform(&mut r);
            x.set(i, 0, a);
            x.set(i, 1, rng::uniform(&mut r));
            y[i] = if a > 0.6 { 1.0 } else { 0.0 };
        }
        let d = Design::covariates(x);
        let rows: Vec<usize> = (0..n).collect();
        let folds = vec![0; n];
        let (_, m) = cross_fit(&d, &y, &rows, &folds, 1, 3, 9);
        let first = m.basis[0];
        assert!(matches!(first, Basis::Hinge { col: 0, .. } | Basis::Linear { col: 0 }));
        assert!(m.predict(&[0.9, 0.5]) > 0.9);
        assert!(m.predict(&[0.2, 0.5]) < 0.1);
    }

    #[test]
    fn selection_matches_direct_regression() {
        // with a single candidate the reduction equals the simple-regression SS
        let mut mo = Moments::zero(1);
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [0.0, 0.0, 1.0, 1.0];
        for (x, y) in xs.iter().zip(&ys) {
            mo.add_row(&[*x], *y);
        }
        assert_eq!(select(&mo, 5), vec![0]);
    }
}
