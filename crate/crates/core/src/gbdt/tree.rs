use std::collections::VecDeque;

use rayon::prelude::*;

use super::binning::{BinnedMatrix, BinningScheme};
use super::Hyperparams;

/// Sentinel feature index marking a leaf.
pub const LEAF: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeNode {
    /// Split feature, or [`LEAF`].
    pub feature: u32,
    /// Rows with bin `<= bin` go left.
    pub bin: u8,
    /// Raw-value form of the same test: rows with `value < threshold` go left.
    pub threshold: f32,
    pub left: u32,
    pub right: u32,
    /// `-G / (H + lambda)` over the rows reaching this node (unscaled by the learning rate).
    pub weight: f64,
}

impl TreeNode {
    pub fn leaf(weight: f64) -> Self {
        Self {
            feature: LEAF,
            bin: 0,
            threshold: 0.0,
            left: 0,
            right: 0,
            weight,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionTree {
    pub(crate) nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            let n = &nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + walk(nodes, n.left as usize).max(walk(nodes, n.right as usize))
            }
        }
        walk(&self.nodes, 0)
    }

    #[inline]
    pub fn leaf_index(&self, row: &[f32]) -> usize {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return i;
            }
            i = if row[n.feature as usize] < n.threshold {
                n.left
            } else {
                n.right
            } as usize;
        }
    }

    #[inline]
    pub fn predict(&self, row: &[f32]) -> f64 {
        self.nodes[self.leaf_index(row)].weight
    }
}

/// Per-feature, per-bin gradient and hessian sums for one node.
#[derive(Clone, Debug)]
pub struct Histogram {
    grad: Vec<Vec<f64>>,
    hess: Vec<Vec<f64>>,
}

impl Histogram {
    /// Accumulates rows in the given order, one feature per task, so the sums do
    /// not depend on how features are scheduled.
    pub fn build(
        binned: &BinnedMatrix,
        scheme: &BinningScheme,
        rows: &[u32],
        grad: &[f64],
        hess: &[f64],
    ) -> Self {
        let (grad_bins, hess_bins) = (0..scheme.num_features())
            .into_par_iter()
            .map(|f| {
                let nb = scheme.num_bins(f);
                let col = &binned.columns[f];
                let mut g = vec![0.0; nb];
                let mut h = vec![0.0; nb];
                for &r in rows {
                    let r = r as usize;
                    let b = col[r] as usize;
                    g[b] += grad[r];
                    h[b] += hess[r];
                }
                (g, h)
            })
            .unzip();
        Self {
            grad: grad_bins,
            hess: hess_bins,
        }
    }

    fn minus(&self, other: &Histogram) -> Self {
        let sub = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.iter().zip(y).map(|(x, y)| x - y).collect())
                .collect()
        };
        Self {
            grad: sub(&self.grad, &other.grad),
            hess: sub(&self.hess, &other.hess),
        }
    }

    pub fn num_features(&self) -> usize {
        self.grad.len()
    }

    pub fn feature(&self, f: usize) -> (&[f64], &[f64]) {
        (&self.grad[f], &self.hess[f])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub bin: u8,
    pub gain: f64,
}

/// `0.5 * [GL^2/(HL+l) + GR^2/(HR+l) - (GL+GR)^2/(HL+HR+l)] - gamma`.
#[inline]
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

fn best_for_feature(hist: &Histogram, f: usize, hyper: &Hyperparams) -> Option<SplitCandidate> {
    let (g, h) = hist.feature(f);
    let total_g: f64 = g.iter().sum();
    let total_h: f64 = h.iter().sum();
    let mut best: Option<SplitCandidate> = None;
    let (mut gl, mut hl) = (0.0, 0.0);
    for t in 0..g.len().saturating_sub(1) {
        gl += g[t];
        hl += h[t];
        let (gr, hr) = (total_g - gl, total_h - hl);
        if hl < hyper.min_child_weight || hr < hyper.min_child_weight {
            continue;
        }
        let gain = split_gain(gl, hl, gr, hr, hyper.lambda, hyper.gamma);
        if best.is_none_or(|b| gain > b.gain) {
            best = Some(SplitCandidate {
                feature: f,
                bin: t as u8,
                gain,
            });
        }
    }
    best
}

/// Highest-gain admissible split; equal gains resolve to the lowest feature, then lowest bin.
///
/// Candidates where either side's hessian sum falls below `min_child_weight` are
/// skipped. The returned gain may be non-positive; callers decide whether to split.
pub fn find_best_split(hist: &Histogram, hyper: &Hyperparams) -> Option<SplitCandidate> {
    let per_feature: Vec<Option<SplitCandidate>> = (0..hist.num_features())
        .into_par_iter()
        .map(|f| best_for_feature(hist, f, hyper))
        .collect();
    per_feature
        .into_iter()
        .flatten()
        .fold(None, |best: Option<SplitCandidate>, c| match best {
            Some(b) if c.gain <= b.gain => Some(b),
            _ => Some(c),
        })
}

struct Pending {
    node: usize,
    depth: usize,
    rows: Vec<u32>,
    hist: Histogram,
}

/// Grows one tree level by level. Returns the tree and, per training row, the
/// index of the leaf it ended in.
pub fn grow_tree(
    binned: &BinnedMatrix,
    scheme: &BinningScheme,
    grad: &[f64],
    hess: &[f64],
    hyper: &Hyperparams,
) -> (RegressionTree, Vec<u32>) {
    let n = binned.num_rows;
    let mut leaf_of_row = vec![0u32; n];
    let mut nodes = vec![TreeNode::leaf(0.0)];
    let root_rows: Vec<u32> = (0..n as u32).collect();
    let root_hist = Histogram::build(binned, scheme, &root_rows, grad, hess);
    let mut queue = VecDeque::from([Pending {
        node: 0,
        depth: 0,
        rows: root_rows,
        hist: root_hist,
    }]);

    while let Some(task) = queue.pop_front() {
        let g: f64 = task.rows.iter().map(|&r| grad[r as usize]).sum();
        let h: f64 = task.rows.iter().map(|&r| hess[r as usize]).sum();
        nodes[task.node].weight = -g / (h + hyper.lambda);

        let split = if task.depth < hyper.max_depth {
            find_best_split(&task.hist, hyper).filter(|s| s.gain > 0.0)
        } else {
            None
        };
        let Some(split) = split else {
            for &r in &task.rows {
                leaf_of_row[r as usize] = task.node as u32;
            }
            continue;
        };

        let col = &binned.columns[split.feature];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = task
            .rows
            .iter()
            .partition(|&&r| col[r as usize] <= split.bin);
        let (left_hist, right_hist) = if left_rows.len() <= right_rows.len() {
            let small = Histogram::build(binned, scheme, &left_rows, grad, hess);
            let large = task.hist.minus(&small);
            (small, large)
        } else {
            let small = Histogram::build(binned, scheme, &right_rows, grad, hess);
            let large = task.hist.minus(&small);
            (large, small)
        };

        let left = nodes.len();
        nodes.push(TreeNode::leaf(0.0));
        nodes.push(TreeNode::leaf(0.0));
        let node = &mut nodes[task.node];
        node.feature = split.feature as u32;
        node.bin = split.bin;
        node.threshold = scheme.boundaries(split.feature)[split.bin as usize];
        node.left = left as u32;
        node.right = left as u32 + 1;

        queue.push_back(Pending {
            node: left,
            depth: task.depth + 1,
            rows: left_rows,
            hist: left_hist,
        });
        queue.push_back(Pending {
            node: left + 1,
            depth: task.depth + 1,
            rows: right_rows,
            hist: right_hist,
        });
    }
    (RegressionTree { nodes }, leaf_of_row)
}
