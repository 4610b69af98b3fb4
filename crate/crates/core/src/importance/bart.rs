//! Bayesian sum-of-trees regression (BART) by backfitting MCMC, reporting
//! variable inclusion proportions.
//!
//! Standard priors: split probability `alpha (1 + depth)^-beta`, leaf values
//! `N(0, (0.5 / (k sqrt(m)))^2)` on the response rescaled to `[-0.5, 0.5]`,
//! and a scaled inverse chi-square on the noise variance calibrated so that
//! the least-squares residual variance sits at quantile `q`.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;

use crate::math::{probit, quantile_sorted, solve_spd, sort_floats, Matrix};
use crate::rng::{self, below, gamma, normal, uniform, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BartParams {
    pub trees: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
    pub nu: f64,
    pub q: f64,
    pub burn_in: usize,
    pub draws: usize,
    /// Cutpoints per variable (quantile grid).
    pub cutpoints: usize,
}

impl Default for BartParams {
    fn default() -> Self {
        Self { trees: 200, alpha: 0.95, beta: 2.0, k: 2.0, nu: 3.0, q: 0.9, burn_in: 200, draws: 800, cutpoints: 100 }
    }
}

#[derive(Debug, Clone, Copy)]
enum BNode {
    Leaf { mu: f64 },
    Split { var: usize, cut: usize, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct BTree {
    nodes: Vec<BNode>,
    parent: Vec<usize>,
    depth: Vec<usize>,
    alive: Vec<bool>,
}

impl BTree {
    fn stump() -> Self {
        Self { nodes: vec![BNode::Leaf { mu: 0.0 }], parent: vec![usize::MAX], depth: vec![0], alive: vec![true] }
    }

    fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.alive[i] && matches!(self.nodes[i], BNode::Leaf { .. })).collect()
    }

    /// Internal nodes whose children are both leaves.
    fn nogs(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| {
                self.alive[i]
                    && match self.nodes[i] {
                        BNode::Split { left, right, .. } => {
                            matches!(self.nodes[left], BNode::Leaf { .. }) && matches!(self.nodes[right], BNode::Leaf { .. })
                        }
                        BNode::Leaf { .. } => false,
                    }
            })
            .collect()
    }
}

/// Rows as quantile-grid codes: code `c` means the value lies at or below cutpoint `c`.
struct Grid {
    codes: Vec<u8>,
    p: usize,
    ncut: Vec<usize>,
}

impl Grid {
    fn new(x: &Matrix, cutpoints: usize) -> Self {
        let (n, p) = (x.rows(), x.cols());
        let mut cuts = Vec::with_capacity(p);
        for j in 0..p {
            let mut v = x.column(j);
            sort_floats(&mut v);
            let mut distinct = v.clone();
            distinct.dedup();
            let mut c: Vec<f64> = if distinct.len() <= cutpoints + 1 {
                distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                (1..=cutpoints).map(|k| quantile_sorted(&v, k as f64 / (cutpoints + 1) as f64)).collect()
            };
            c.dedup();
            cuts.push(c);
        }
        let mut codes = vec![0u8; n * p];
        for i in 0..n {
            for j in 0..p {
                let xv = x.get(i, j);
                codes[i * p + j] = cuts[j].partition_point(|&e| e < xv).min(255) as u8;
            }
        }
        Self { codes, p, ncut: cuts.iter().map(Vec::len).collect() }
    }

    fn row(&self, i: usize) -> &[u8] {
        &self.codes[i * self.p..(i + 1) * self.p]
    }
}

/// Log marginal likelihood of one leaf, up to terms shared by all proposals.
#[inline]
fn leaf_ml(n: f64, s: f64, sigma2: f64, tau2: f64) -> f64 {
    let d = sigma2 + n * tau2;
    0.5 * (sigma2 / d).ln() + tau2 * s * s / (2.0 * sigma2 * d)
}

#[inline]
fn p_split(alpha: f64, beta: f64, depth: usize) -> f64 {
    alpha * (1.0 + depth as f64).powf(-beta)
}

/// 10% quantile of chi-square with 3 degrees of freedom.
const CHI2_3_Q10: f64 = 0.584_375_4;

fn lower_chi2_quantile(nu: f64, q: f64) -> f64 {
    if (nu - 3.0).abs() < 1e-12 && (q - 0.9).abs() < 1e-12 {
        return CHI2_3_Q10;
    }
    // Wilson-Hilferty approximation for other settings
    let z = -probit(q);
    let a = 2.0 / (9.0 * nu);
    nu * (1.0 - a + z * a.sqrt()).powi(3)
}

/// Residual variance of a least-squares fit, or the sample variance when `p >= n`.
fn ols_residual_variance(x: &Matrix, y: &[f64]) -> f64 {
    let (n, p) = (x.rows(), x.cols());
    let ybar = y.iter().sum::<f64>() / n as f64;
    let var_y = y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
    if p + 1 >= n {
        return var_y;
    }
    let k = p + 1;
    let mut g = vec![0.0; k * k];
    let mut c = vec![0.0; k];
    let mut row = vec![1.0; k];
    for i in 0..n {
        row[1..].copy_from_slice(x.row(i));
        for a in 0..k {
            c[a] += row[a] * y[i];
            for b in 0..k {
                g[a * k + b] += row[a] * row[b];
            }
        }
    }
    match solve_spd(&g, k, &c) {
        Some(beta) => {
            let rss: f64 = (0..n)
                .map(|i| {
                    let f = beta[0] + x.row(i).iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
                    (y[i] - f).powi(2)
                })
                .sum();
            (rss / (n - k) as f64).max(1e-12 * var_y.max(1e-300))
        }
        None => var_y,
    }
}

/// Posterior mean share of splitting rules that use each variable.
pub fn inclusion_proportions(x: &Matrix, y: &[f64], params: &BartParams, seed: u64) -> Vec<f64> {
    let (n, p) = (x.rows(), x.cols());
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if n < 2 || p == 0 || !(hi - lo > 1e-12 * (1.0 + hi.abs())) {
        return vec![0.0; p];
    }
    let ys: Vec<f64> = y.iter().map(|v| (v - lo) / (hi - lo) - 0.5).collect();
    let grid = Grid::new(x, params.cutpoints);
    let splittable: Vec<usize> = (0..p).filter(|&j| grid.ncut[j] > 0).collect();
    if splittable.is_empty() {
        return vec![0.0; p];
    }
    let m = params.trees;
    let tau = 0.5 / (params.k * (m as f64).sqrt());
    let tau2 = tau * tau;
    let sigma2_hat = ols_residual_variance(x, &ys);
    let lambda = sigma2_hat * lower_chi2_quantile(params.nu, params.q) / params.nu;
    let mut sigma2 = sigma2_hat;
    let mut r = rng::stream(seed, 0);

    let mut trees: Vec<BTree> = (0..m).map(|_| BTree::stump()).collect();
    let mut leaf_of: Vec<Vec<usize>> = vec![vec![0; n]; m];
    let mut fit = vec![0.0; n];
    let mut resid = vec![0.0; n];
    let mut counts = vec![0.0; p];
    let mut kept = 0usize;

    for iter in 0..params.burn_in + params.draws {
        for t in 0..m {
            // partial residual without tree t
            for i in 0..n {
                let own = match trees[t].nodes[leaf_of[t][i]] {
                    BNode::Leaf { mu } => mu,
                    BNode::Split { .. } => 0.0,
                };
                resid[i] = ys[i] - (fit[i] - own);
            }
            let old: Vec<f64> = (0..n)
                .map(|i| match trees[t].nodes[leaf_of[t][i]] {
                    BNode::Leaf { mu } => mu,
                    BNode::Split { .. } => 0.0,
                })
                .collect();
            mh_step(&mut trees[t], &mut leaf_of[t], &grid, &splittable, &resid, sigma2, tau2, params, &mut r);
            draw_leaves(&mut trees[t], &leaf_of[t], &resid, sigma2, tau2, &mut r);
            for i in 0..n {
                let new = match trees[t].nodes[leaf_of[t][i]] {
                    BNode::Leaf { mu } => mu,
                    BNode::Split { .. } => 0.0,
                };
                fit[i] += new - old[i];
            }
        }
        let sse: f64 = (0..n).map(|i| (ys[i] - fit[i]).powi(2)).sum();
        let shape = 0.5 * (params.nu + n as f64);
        let chi = 2.0 * gamma(&mut r, shape);
        sigma2 = (params.nu * lambda + sse) / chi;
        if iter >= params.burn_in {
            let mut c = vec![0.0; p];
            let mut total = 0.0;
            for tr in &trees {
                for (i, node) in tr.nodes.iter().enumerate() {
                    if let BNode::Split { var, .. } = node {
                        if tr.alive[i] {
                            c[*var] += 1.0;
                            total += 1.0;
                        }
                    }
                }
            }
            if total > 0.0 {
                for j in 0..p {
                    counts[j] += c[j] / total;
                }
                kept += 1;
            }
        }
    }
    if kept > 0 {
        counts.iter_mut().for_each(|v| *v /= kept as f64);
    }
    counts
}

#[allow(clippy::too_many_arguments)]
fn mh_step(
    tree: &mut BTree,
    leaf_of: &mut [usize],
    grid: &Grid,
    splittable: &[usize],
    resid: &[f64],
    sigma2: f64,
    tau2: f64,
    params: &BartParams,
    r: &mut StreamRng,
) {
    let leaves = tree.leaves();
    let nogs = tree.nogs();
    let grow = leaves.len() == 1 || uniform(r) < 0.5;
    let p_grow_here = if leaves.len() == 1 { 1.0 } else { 0.5 };
    if grow {
        let node = leaves[below(r, leaves.len())];
        let var = splittable[below(r, splittable.len())];
        let cut = below(r, grid.ncut[var]);
        let (mut nl, mut sl, mut nr, mut sr) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..resid.len() {
            if leaf_of[i] == node {
                if (grid.row(i)[var] as usize) <= cut {
                    nl += 1.0;
                    sl += resid[i];
                } else {
                    nr += 1.0;
                    sr += resid[i];
                }
            }
        }
        if nl < 1.0 || nr < 1.0 {
            return;
        }
        let d = tree.depth[node];
        let ps = p_split(params.alpha, params.beta, d);
        let pc = p_split(params.alpha, params.beta, d + 1);
        let log_prior = ps.ln() + 2.0 * (1.0 - pc).ln() - (1.0 - ps).ln();
        let log_lik = leaf_ml(nl, sl, sigma2, tau2) + leaf_ml(nr, sr, sigma2, tau2) - leaf_ml(nl + nr, sl + sr, sigma2, tau2);
        // nog count after growing: the new node is a nog; its parent stops being one
        let parent = tree.parent[node];
        let parent_was_nog = parent != usize::MAX && nogs.contains(&parent);
        let nogs_after = nogs.len() + 1 - usize::from(parent_was_nog);
        // the rule prior 1/(p ncut) cancels the rule proposal
        let log_prop = (0.5f64).ln() - (nogs_after as f64).ln() - (p_grow_here.ln() - (leaves.len() as f64).ln());
        if uniform(r).ln() < log_prior + log_lik + log_prop {
            let li = tree.nodes.len();
            for _ in 0..2 {
                tree.nodes.push(BNode::Leaf { mu: 0.0 });
                tree.parent.push(node);
                tree.depth.push(d + 1);
                tree.alive.push(true);
            }
            tree.nodes[node] = BNode::Split { var, cut, left: li, right: li + 1 };
            for i in 0..resid.len() {
                if leaf_of[i] == node {
                    leaf_of[i] = if (grid.row(i)[var] as usize) <= cut { li } else { li + 1 };
                }
            }
        }
    } else {
        if nogs.is_empty() {
            return;
        }
        let node = nogs[below(r, nogs.len())];
        let BNode::Split { left, right, .. } = tree.nodes[node] else { return };
        let (mut nl, mut sl, mut nr, mut sr) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..resid.len() {
            if leaf_of[i] == left {
                nl += 1.0;
                sl += resid[i];
            } else if leaf_of[i] == right {
                nr += 1.0;
                sr += resid[i];
            }
        }
        let d = tree.depth[node];
        let ps = p_split(params.alpha, params.beta, d);
        let pc = p_split(params.alpha, params.beta, d + 1);
        let log_prior = -(ps.ln() + 2.0 * (1.0 - pc).ln() - (1.0 - ps).ln());
        let log_lik = leaf_ml(nl + nr, sl + sr, sigma2, tau2) - leaf_ml(nl, sl, sigma2, tau2) - leaf_ml(nr, sr, sigma2, tau2);
        let leaves_after = leaves.len() - 1;
        let p_grow_after = if leaves_after == 1 { 1.0 } else { 0.5 };
        let log_prop = (p_grow_after.ln() - (leaves_after as f64).ln()) - ((0.5f64).ln() - (nogs.len() as f64).ln());
        if uniform(r).ln() < log_prior + log_lik + log_prop {
            tree.nodes[node] = BNode::Leaf { mu: 0.0 };
            tree.alive[left] = false;
            tree.alive[right] = false;
            for v in leaf_of.iter_mut() {
                if *v == left || *v == right {
                    *v = node;
                }
            }
            compact(tree, leaf_of);
        }
    }
}

/// Drops dead nodes once they pile up so node scans stay short.
fn compact(tree: &mut BTree, leaf_of: &mut [usize]) {
    let dead = tree.alive.iter().filter(|a| !**a).count();
    if dead < 64 {
        return;
    }
    let mut remap = vec![usize::MAX; tree.nodes.len()];
    let mut k = 0;
    for i in 0..tree.nodes.len() {
        if tree.alive[i] {
            remap[i] = k;
            k += 1;
        }
    }
    let mut nodes = Vec::with_capacity(k);
    let mut parent = Vec::with_capacity(k);
    let mut depth = Vec::with_capacity(k);
    for i in 0..tree.nodes.len() {
        if !tree.alive[i] {
            continue;
        }
        nodes.push(match tree.nodes[i] {
            BNode::Split { var, cut, left, right } => BNode::Split { var, cut, left: remap[left], right: remap[right] },
            leaf => leaf,
        });
        parent.push(if tree.parent[i] == usize::MAX { usize::MAX } else { remap[tree.parent[i]] });
        depth.push(tree.depth[i]);
    }
    tree.alive = vec![true; k];
    tree.nodes = nodes;
    tree.parent = parent;
    tree.depth = depth;
    for v in leaf_of.iter_mut() {
        *v = remap[*v];
    }
}

fn draw_leaves(tree: &mut BTree, leaf_of: &[usize], resid: &[f64], sigma2: f64, tau2: f64, r: &mut StreamRng) {
    let len = tree.nodes.len();
    let mut n = vec![0.0; len];
    let mut s = vec![0.0; len];
    for (i, &l) in leaf_of.iter().enumerate() {
        n[l] += 1.0;
        s[l] += resid[i];
    }
    for l in 0..len {
        if let BNode::Leaf { mu } = &mut tree.nodes[l] {
            if !tree.alive[l] {
                continue;
            }
            let prec = n[l] / sigma2 + 1.0 / tau2;
            let mean = s[l] / sigma2 / prec;
            *mu = mean + normal(r) / prec.sqrt();
        }
    }
}
