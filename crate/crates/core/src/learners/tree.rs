//! Histogram regression trees and the bagged logistic tree ensemble.

use alloc::vec;
use alloc::vec::Vec;

use super::Design;
use crate::math::{clamp, logit, quantile_sorted, sigmoid, sort_floats, Matrix};
use crate::rng::{self, StreamRng};

/// Per-column split thresholds; a value's bin is the number of thresholds below it.
#[derive(Debug, Clone)]
pub struct Binned {
    pub cols: Vec<usize>,
    pub edges: Vec<Vec<f64>>,
    /// Bin codes, row-major over (design row, position in `cols`).
    codes: Vec<u16>,
    stride: usize,
}

impl Binned {
    pub fn new(x: &Matrix, cols: &[usize], rows: &[usize], max_bins: usize) -> Self {
        let mut edges = Vec::with_capacity(cols.len());
        for &c in cols {
            let mut v: Vec<f64> = rows.iter().map(|&r| x.get(r, c)).collect();
            sort_floats(&mut v);
            v.dedup();
            let e: Vec<f64> = if v.len() <= max_bins {
                // midpoints keep the split exact for low-cardinality columns
                v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                let mut e: Vec<f64> =
                    (1..max_bins).map(|k| quantile_sorted(&v, k as f64 / max_bins as f64)).collect();
                e.dedup();
                e
            };
            edges.push(e);
        }
        let stride = cols.len();
        let mut codes = vec![0u16; x.rows() * stride];
        for r in 0..x.rows() {
            for (k, &c) in cols.iter().enumerate() {
                let xv = x.get(r, c);
                codes[r * stride + k] = edges[k].partition_point(|&e| e < xv) as u16;
            }
        }
        Self { cols: cols.to_vec(), edges, codes, stride }
    }

    #[inline]
    fn code(&self, row: usize, k: usize) -> usize {
        self.codes[row * self.stride + k] as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf { value: f64 },
    Split { col: usize, threshold: f64, left: usize, right: usize, depth: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split { col, threshold, left, right, .. } => {
                    at = if row[col] <= threshold { left } else { right };
                }
            }
        }
    }

    /// `(design column, depth)` for every split, depth 0 at the root.
    pub fn splits(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            Node::Split { col, depth, .. } => Some((col, depth)),
            Node::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Columns tried per split; `None` tries all.
    pub mtry: Option<usize>,
}

/// Grows a least-squares tree on `rows`. `leaf` maps (sum, count) of the
/// targets to the leaf value.
pub fn grow(
    binned: &Binned,
    y: &[f64],
    rows: Vec<usize>,
    params: &TreeParams,
    rng: &mut StreamRng,
    leaf: &dyn Fn(f64, usize) -> f64,
) -> Tree {
    let p = binned.cols.len();
    let mut nodes = Vec::new();
    // (node slot, rows, depth)
    let mut stack = vec![(0usize, rows, 0usize)];
    nodes.push(Node::Leaf { value: 0.0 });
    let mut candidates: Vec<usize> = (0..p).collect();
    let max_bins = binned.edges.iter().map(|e| e.len() + 1).max().unwrap_or(1);
    let mut hist_s = vec![0.0; max_bins];
    let mut hist_n = vec![0usize; max_bins];
    while let Some((slot, idx, depth)) = stack.pop() {
        let n = idx.len();
        let total: f64 = idx.iter().map(|&r| y[r]).sum();
        if depth >= params.max_depth || n < 2 * params.min_leaf {
            nodes[slot] = Node::Leaf { value: leaf(total, n) };
            continue;
        }
        let tries = match params.mtry {
            Some(m) if m < p => {
                // partial Fisher-Yates picks the first m
                for i in 0..m {
                    let j = i + rng::below(rng, p - i);
                    candidates.swap(i, j);
                }
                m
            }
            _ => p,
        };
        let base = total * total / n as f64;
        let mut best: Option<(f64, usize, usize)> = None;
        for &k in &candidates[..tries] {
            let nb = binned.edges[k].len() + 1;
            if nb < 2 {
                continue;
            }
            hist_s[..nb].iter_mut().for_each(|v| *v = 0.0);
            hist_n[..nb].iter_mut().for_each(|v| *v = 0);
            for &r in &idx {
                let b = binned.code(r, k);
                hist_s[b] += y[r];
                hist_n[b] += 1;
            }
            let (mut sl, mut nl) = (0.0, 0usize);
            for b in 0..nb - 1 {
                sl += hist_s[b];
                nl += hist_n[b];
                let nr = n - nl;
                if nl < params.min_leaf {
                    continue;
                }
                if nr < params.min_leaf {
                    break;
                }
                let sr = total - sl;
                let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - base;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, k, b));
                }
            }
        }
        match best {
            None => nodes[slot] = Node::Leaf { value: leaf(total, n) },
            Some((_, k, b)) => {
                let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&row| binned.code(row, k) <= b);
                let li = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[slot] = Node::Split {
                    col: binned.cols[k],
                    threshold: binned.edges[k][b],
                    left: li,
                    right: li + 1,
                    depth,
                };
                stack.push((li + 1, r, depth + 1));
                stack.push((li, l, depth + 1));
            }
        }
    }
    Tree { nodes }
}

#[derive(Debug, Clone, Copy)]
pub struct EnsembleParams {
    pub trees: usize,
    pub depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

/// Average of tree logits; each leaf is the smoothed event share of its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub trees: Vec<Tree>,
}

impl TreeEnsemble {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        sigmoid(s / self.trees.len() as f64)
    }
}

/// Pseudo-count pulling leaf shares toward the overall share.
const LEAF_PRIOR: f64 = 2.0;

pub fn fit_ensemble(design: &Design, y: &[f64], rows: &[usize], params: &EnsembleParams) -> TreeEnsemble {
    let cols = design.numeric_cols();
    let binned = Binned::new(&design.x, &cols, rows, 32);
    let pbar = clamp(rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64, 1e-6, 1.0 - 1e-6);
    let leaf = move |s: f64, n: usize| logit(clamp((s + LEAF_PRIOR * pbar) / (n as f64 + LEAF_PRIOR), 1e-6, 1.0 - 1e-6));
    let tp = TreeParams { max_depth: params.depth, min_leaf: params.min_leaf, mtry: None };
    let half = (rows.len() / 2).max(1);
    let mut trees = Vec::with_capacity(params.trees);
    for b in 0..params.trees {
        let mut r = rng::stream(params.seed, b as u64);
        let mut sample = rows.to_vec();
        rng::shuffle(&mut r, &mut sample);
        sample.truncate(half);
        trees.push(grow(&binned, y, sample, &tp, &mut r, &leaf));
    }
    TreeEnsemble { trees }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_split_recovers_step() {
        let n = 200;
        let mut x = Matrix::zeros(n, 1);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let v = i as f64 / n as f64;
            x.set(i, 0, v);
            y[i] = if v > 0.3 { 5.0 } else { 1.0 };
        }
        let rows: Vec<usize> = (0..n).collect();
        let b = Binned::new(&x, &[0], &rows, 256);
        let mut r = rng::stream(1, 0);
        let t = grow(&b, &y, rows, &TreeParams { max_depth: 1, min_leaf: 1, mtry: None }, &mut r, &|s, n| {
            s / n as f64
        });
        assert_eq!(t.nodes.len(), 3);
        assert!((t.predict(&[0.1]) - 1.0).abs() < 1e-12);
        assert!((t.predict(&[0.9]) - 5.0).abs() < 1e-12);
        if let Node::Split { threshold, .. } = t.nodes[0] {
            assert!((0.28..=0.32).contains(&threshold));
        } else {
            panic!("root should split");
        }
    }

    #[test]
    fn binary_column_splits_between_levels() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![0.0], vec![1.0]]);
        let b = Binned::new(&x, &[0], &[0, 1, 2, 3], 32);
        assert_eq!(b.edges[0], vec![0.5]);
    }
}
