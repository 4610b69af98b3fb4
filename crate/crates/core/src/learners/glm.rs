//! Elastic-net penalized generalized linear models.
//!
//! Both families are solved the same way: the (working) least-squares
//! problem is reduced to its weighted Gram matrix over standardized columns,
//! and coordinate descent runs on that `p x p` system. For the logistic
//! family the Gram is rebuilt once per IRLS step. Penalized objective, per
//! row:
//!
//! ```text
//! -loglik / N + lambda * sum_j pf_j (alpha |b_j| + (1 - alpha) / 2 b_j^2)
//! ```

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;

use crate::math::{clamp, log_loss, sigmoid, solve_spd, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Binomial,
    Gaussian,
}

/// Linear predictor on the original feature scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    /// Columns of the design the coefficients refer to.
    pub cols: Vec<usize>,
    pub coef: Vec<f64>,
    pub intercept: f64,
    /// Coefficients on the standardized scale (unit-variance columns).
    pub standardized: Vec<f64>,
    pub family: Family,
}

impl LinearPredictor {
    pub fn intercept_only(value: f64, family: Family) -> Self {
        Self { cols: Vec::new(), coef: Vec::new(), intercept: value, standardized: Vec::new(), family }
    }

    #[inline]
    pub fn eta(&self, row: &[f64]) -> f64 {
        let mut e = self.intercept;
        for (&c, &b) in self.cols.iter().zip(&self.coef) {
            e += b * row[c];
        }
        e
    }

    /// Mean response: probability for the binomial family.
    #[inline]
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self.family {
            Family::Binomial => sigmoid(self.eta(row)),
            Family::Gaussian => self.eta(row),
        }
    }
}

/// Column means and scales over the training rows.
#[derive(Debug, Clone)]
pub(crate) struct Standardizer {
    pub cols: Vec<usize>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Drops constant columns.
    pub fn fit(x: &Matrix, cols: &[usize], rows: &[usize]) -> Self {
        let n = rows.len().max(1) as f64;
        let mut kept = Vec::new();
        let mut mean = Vec::new();
        let mut scale = Vec::new();
        for &c in cols {
            let m = rows.iter().map(|&r| x.get(r, c)).sum::<f64>() / n;
            let v = rows.iter().map(|&r| (x.get(r, c) - m).powi(2)).sum::<f64>() / n;
            if v > 1e-14 * (1.0 + m * m) {
                kept.push(c);
                mean.push(m);
                scale.push(v.sqrt());
            }
        }
        Self { cols: kept, mean, scale }
    }

    pub fn p(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn row_into(&self, x: &Matrix, r: usize, out: &mut [f64]) {
        let row = x.row(r);
        for k in 0..self.cols.len() {
            out[k] = (row[self.cols[k]] - self.mean[k]) / self.scale[k];
        }
    }

    pub fn to_predictor(&self, beta: &[f64], b0: f64, family: Family) -> LinearPredictor {
        let mut intercept = b0;
        let mut coef = Vec::with_capacity(beta.len());
        for k in 0..beta.len() {
            let c = beta[k] / self.scale[k];
            intercept -= c * self.mean[k];
            coef.push(c);
        }
        LinearPredictor { cols: self.cols.clone(), coef, intercept, standardized: beta.to_vec(), family }
    }
}

/// Standardized design rows, materialized once per fit.
pub(crate) struct Block {
    pub p: usize,
    pub data: Vec<f64>,
    pub y: Vec<f64>,
}

impl Block {
    pub fn new(x: &Matrix, y: &[f64], rows: &[usize], st: &Standardizer) -> Self {
        let p = st.p();
        let mut data = vec![0.0; rows.len() * p];
        for (i, &r) in rows.iter().enumerate() {
            st.row_into(x, r, &mut data[i * p..(i + 1) * p]);
        }
        Self { p, data, y: rows.iter().map(|&r| y[r]).collect() }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn eta(&self, i: usize, beta: &[f64], b0: f64) -> f64 {
        let mut e = b0;
        for (a, b) in self.row(i).iter().zip(beta) {
            e += a * b;
        }
        e
    }
}

/// Centered weighted normal equations: `g = X'WX - ...`, `c = X'Wz - ...`.
pub(crate) struct Normal {
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub sw: f64,
    pub sx: Vec<f64>,
    pub sz: f64,
}

/// Accumulates the centered Gram for weights `w` and working response `z`.
pub(crate) fn normal_equations(block: &Block, w: &[f64], z: &[f64]) -> Normal {
    let p = block.p;
    let mut g = vec![0.0; p * p];
    let mut sxz = vec![0.0; p];
    let mut sx = vec![0.0; p];
    let mut sw = 0.0;
    let mut sz = 0.0;
    for i in 0..block.n() {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        let xr = block.row(i);
        let wz = wi * z[i];
        sw += wi;
        sz += wz;
        for a in 0..p {
            let wa = wi * xr[a];
            sx[a] += wa;
            sxz[a] += wa * z[i];
            let ga = &mut g[a * p..(a + 1) * p];
            for b in a..p {
                ga[b] += wa * xr[b];
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            let v = g[a * p + b] - sx[a] * sx[b] / sw;
            g[a * p + b] = v;
            g[b * p + a] = v;
        }
    }
    let c = (0..p).map(|a| sxz[a] - sx[a] * sz / sw).collect();
    Normal { g, c, sw, sx, sz }
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Coordinate descent on `1/2 b'Gb - c'b + pen(b)`, warm-started from `beta`.
pub(crate) fn coordinate_descent(
    ne: &Normal,
    p: usize,
    beta: &mut [f64],
    l1: &[f64],
    l2: &[f64],
    tol: f64,
    max_sweeps: usize,
) {
    // gradient part r_j = c_j - sum_k G_jk b_k, maintained incrementally
    let mut grad: Vec<f64> = (0..p)
        .map(|j| ne.c[j] - (0..p).map(|k| ne.g[j * p + k] * beta[k]).sum::<f64>())
        .collect();
    for _ in 0..max_sweeps {
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            let gjj = ne.g[j * p + j];
            if gjj <= 0.0 {
                continue;
            }
            let old = beta[j];
            let rj = grad[j] + gjj * old;
            let new = soft_threshold(rj, l1[j]) / (gjj + l2[j]);
            if new != old {
                let d = new - old;
                beta[j] = new;
                let row = &ne.g[j * p..(j + 1) * p];
                for k in 0..p {
                    grad[k] -= row[k] * d;
                }
                max_delta = max_delta.max(d.abs() * gjj.sqrt());
            }
        }
        if max_delta < tol {
            break;
        }
    }
}

#[derive(Debug, Clone)]
pub struct PathOptions {
    pub alpha: f64,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    /// Penalty factors aligned with the `cols` passed to the fit; rescaled to sum to `p`.
    pub penalty_factors: Option<Vec<f64>>,
    pub max_irls: usize,
    pub tol: f64,
    /// Stop the path when the relative deviance improvement falls below this value.
    pub early_stop: f64,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            n_lambda: 50,
            lambda_min_ratio: 1e-4,
            penalty_factors: None,
            max_irls: 25,
            tol: 1e-7,
            early_stop: 1e-5,
        }
    }
}

/// One fitted solution along a path.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub lambda: f64,
    pub beta: Vec<f64>,
    pub b0: f64,
}

fn normalized_penalties(pf: Option<&Vec<f64>>, p: usize) -> Vec<f64> {
    match pf {
        Some(v) => {
            let s: f64 = v.iter().sum();
            if s > 0.0 {
                v.iter().map(|x| x * p as f64 / s).collect()
            } else {
                vec![1.0; p]
            }
        }
        None => vec![1.0; p],
    }
}

/// Smallest lambda at which every penalized coefficient is zero.
pub(crate) fn lambda_max(block: &Block, alpha: f64, pf: &[f64]) -> f64 {
    let n = block.n() as f64;
    let ybar = block.y.iter().sum::<f64>() / n;
    let p = block.p;
    let mut grad = vec![0.0; p];
    for i in 0..block.n() {
        let r = block.y[i] - ybar;
        for (g, x) in grad.iter_mut().zip(block.row(i)) {
            *g += x * r;
        }
    }
    let a = alpha.max(1e-3);
    grad.iter()
        .zip(pf)
        .filter(|(_, &f)| f > 0.0)
        .map(|(g, f)| g.abs() / (n * a * f))
        .fold(0.0, f64::max)
}

pub(crate) fn lambda_sequence(lmax: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n == 1 || lmax <= 0.0 {
        return vec![lmax.max(0.0)];
    }
    (0..n).map(|k| lmax * ratio.powf(k as f64 / (n - 1) as f64)).collect()
}

/// Deviance per row (log loss for binomial, squared error for gaussian).
pub(crate) fn mean_deviance(block: &Block, beta: &[f64], b0: f64, family: Family) -> f64 {
    let n = block.n();
    if n == 0 {
        return 0.0;
    }
    match family {
        Family::Binomial => {
            let p: Vec<f64> = (0..n).map(|i| sigmoid(block.eta(i, beta, b0))).collect();
            log_loss(&block.y, &p)
        }
        Family::Gaussian => (0..n).map(|i| (block.y[i] - block.eta(i, beta, b0)).powi(2)).sum::<f64>() / n as f64,
    }
}

/// Solves at one lambda, warm-starting from `beta`, `b0`.
pub(crate) fn solve_at(
    block: &Block,
    family: Family,
    lambda: f64,
    alpha: f64,
    pf: &[f64],
    beta: &mut Vec<f64>,
    b0: &mut f64,
    opts: &PathOptions,
    gaussian_ne: Option<&Normal>,
) {
    let n = block.n() as f64;
    let p = block.p;
    let l1: Vec<f64> = pf.iter().map(|f| n * lambda * alpha * f).collect();
    let l2: Vec<f64> = pf.iter().map(|f| n * lambda * (1.0 - alpha) * f).collect();
    // pure ridge is solved directly; spline bases are too collinear for coordinate descent
    let step = |ne: &Normal, beta: &mut Vec<f64>| {
        if alpha == 0.0 {
            let mut a = ne.g.clone();
            for j in 0..p {
                a[j * p + j] += l2[j];
            }
            if let Some(sol) = solve_spd(&a, p, &ne.c) {
                *beta = sol;
                return;
            }
        }
        coordinate_descent(ne, p, beta, &l1, &l2, opts.tol, 10_000);
    };
    match family {
        Family::Gaussian => {
            let ne = gaussian_ne.expect("gaussian path needs its normal equations");
            step(ne, beta);
            let sxb: f64 = ne.sx.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            *b0 = (ne.sz - sxb) / ne.sw;
        }
        Family::Binomial => {
            let m = block.n();
            let mut w = vec![0.0; m];
            let mut z = vec![0.0; m];
            for _ in 0..opts.max_irls {
                for i in 0..m {
                    let eta = block.eta(i, beta, *b0);
                    let pi = sigmoid(eta);
                    let wi = (pi * (1.0 - pi)).max(1e-5);
                    w[i] = wi;
                    z[i] = eta + (block.y[i] - pi) / wi;
                }
                let ne = normal_equations(block, &w, &z);
                let before = beta.clone();
                let b0_before = *b0;
                step(&ne, beta);
                let sxb: f64 = ne.sx.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
                *b0 = (ne.sz - sxb) / ne.sw;
                let change = before
                    .iter()
                    .zip(beta.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold((b0_before - *b0).abs(), f64::max);
                if change < 1e-6 {
                    break;
                }
            }
        }
    }
}

fn intercept_start(block: &Block, family: Family) -> f64 {
    let n = block.n().max(1) as f64;
    let ybar = block.y.iter().sum::<f64>() / n;
    match family {
        Family::Binomial => crate::math::logit(clamp(ybar, 1e-9, 1.0 - 1e-9)),
        Family::Gaussian => ybar,
    }
}

/// Fits the regularization path on `lambdas` (descending). Returns one point per
/// lambda actually visited; early stopping may truncate the sequence.
pub(crate) fn fit_path(block: &Block, family: Family, lambdas: &[f64], opts: &PathOptions) -> Vec<PathPoint> {
    let p = block.p;
    let pf = normalized_penalties(opts.penalty_factors.as_ref(), p);
    let gaussian_ne = match family {
        Family::Gaussian => {
            let w = vec![1.0; block.n()];
            Some(normal_equations(block, &w, &block.y))
        }
        Family::Binomial => None,
    };
    let mut beta = vec![0.0; p];
    let mut b0 = intercept_start(block, family);
    let mut out = Vec::with_capacity(lambdas.len());
    let null_dev = mean_deviance(block, &vec![0.0; p], b0, family).max(1e-300);
    let mut prev_dev = null_dev;
    for (k, &lambda) in lambdas.iter().enumerate() {
        solve_at(block, family, lambda, opts.alpha, &pf, &mut beta, &mut b0, opts, gaussian_ne.as_ref());
        out.push(PathPoint { lambda, beta: beta.clone(), b0 });
        let dev = mean_deviance(block, &beta, b0, family);
        if k >= 5 && (prev_dev - dev) / null_dev < opts.early_stop {
            break;
        }
        if dev / null_dev < 1e-3 {
            break;
        }
        prev_dev = dev;
    }
    out
}

/// Fits a single lambda from a cold start (intercept at the mean).
pub fn fit_single(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    cols: &[usize],
    family: Family,
    lambda: f64,
    opts: &PathOptions,
) -> LinearPredictor {
    let st = Standardizer::fit(x, cols, rows);
    let block = Block::new(x, y, rows, &st);
    let o = PathOptions { penalty_factors: opts.penalty_factors_for(&st, cols), ..opts.clone() };
    let path = fit_path(&block, family, &[lambda], &o);
    let pt = &path[0];
    st.to_predictor(&pt.beta, pt.b0, family)
}

/// Result of lambda selection by cross-validation.
#[derive(Debug, Clone)]
pub struct CvPath {
    pub lambdas: Vec<f64>,
    /// Mean held-out deviance per lambda.
    pub cv_loss: Vec<f64>,
    pub best: usize,
    /// Held-out predictions at the selected lambda, aligned with the input rows.
    pub oof: Vec<f64>,
    /// Refit on all rows at the selected lambda.
    pub model: LinearPredictor,
}

/// Elastic-net path with lambda chosen by K-fold cross-validation.
///
/// `fold_of[k]` is the fold of `rows[k]`. Folds share the lambda sequence
/// computed on all rows.
pub fn cv_path(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    fold_of: &[usize],
    n_folds: usize,
    cols: &[usize],
    family: Family,
    opts: &PathOptions,
) -> CvPath {
    let st_all = Standardizer::fit(x, cols, rows);
    let block_all = Block::new(x, y, rows, &st_all);
    let pf_all = normalized_penalties(opts.penalty_factors_for(&st_all, cols).as_ref(), st_all.p());
    let opts_all = PathOptions { penalty_factors: Some(pf_all.clone()), ..opts.clone() };
    let lmax = lambda_max(&block_all, opts.alpha, &pf_all);
    let lambdas = lambda_sequence(lmax, opts.n_lambda, opts.lambda_min_ratio);
    let nl = lambdas.len();
    let mut loss = vec![0.0; nl];
    let mut oof_all = vec![vec![0.0; rows.len()]; nl];
    for f in 0..n_folds {
        let train: Vec<usize> = rows.iter().zip(fold_of).filter(|(_, &k)| k != f).map(|(&r, _)| r).collect();
        let test_pos: Vec<usize> = (0..rows.len()).filter(|&k| fold_of[k] == f).collect();
        if test_pos.is_empty() || train.is_empty() {
            continue;
        }
        let st = Standardizer::fit(x, cols, &train);
        let block = Block::new(x, y, &train, &st);
        let pf = normalized_penalties(opts.penalty_factors_for(&st, cols).as_ref(), st.p());
        let o = PathOptions { penalty_factors: Some(pf), ..opts.clone() };
        let path = fit_path(&block, family, &lambdas, &o);
        for (li, slot) in oof_all.iter_mut().enumerate() {
            let pt = &path[li.min(path.len() - 1)];
            let model = st.to_predictor(&pt.beta, pt.b0, family);
            for &k in &test_pos {
                let row = x.row(rows[k]);
                slot[k] = model.predict(row);
            }
        }
    }
    for (li, preds) in oof_all.iter().enumerate() {
        loss[li] = match family {
            Family::Binomial => {
                let ys: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
                log_loss(&ys, preds)
            }
            Family::Gaussian => {
                rows.iter().zip(preds).map(|(&r, p)| (y[r] - p).powi(2)).sum::<f64>() / rows.len().max(1) as f64
            }
        };
    }
    let best = (0..nl).fold(0, |b, k| if loss[k] < loss[b] - 1e-15 { k } else { b });
    let full_path = fit_path(&block_all, family, &lambdas[..=best], &opts_all);
    let pt = full_path.last().expect("non-empty path");
    let model = st_all.to_predictor(&pt.beta, pt.b0, family);
    CvPath { lambdas, cv_loss: loss, best, oof: oof_all.swap_remove(best), model }
}

impl PathOptions {
    /// Penalty factors restricted to the columns kept by standardization.
    fn penalty_factors_for(&self, st: &Standardizer, cols: &[usize]) -> Option<Vec<f64>> {
        self.penalty_factors.as_ref().map(|pf| {
            st.cols.iter().map(|c| pf[cols.iter().position(|x| x == c).expect("kept column")]).collect()
        })
    }
}
