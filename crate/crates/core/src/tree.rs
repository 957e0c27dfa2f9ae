//! Regression trees used as boosting base learners.
//!
//! Splits are found by an exact scan over midpoints of consecutive distinct
//! feature values, maximizing the squared-error reduction. Rows route left
//! when `x[feature] < threshold`. Every node keeps its training cover, which
//! the SHAP code uses to weight unobserved branches.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Growth limits for a single tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 3,
            min_samples_leaf: 1,
        }
    }
}

/// One node in portable form. Leaves have `feature`, `threshold`, `left`
/// and `right` all unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: Option<usize>,
    pub threshold: Option<f64>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub cover: usize,
    pub value: f64,
}

impl TreeNode {
    fn leaf(value: f64, cover: usize) -> Self {
        Self {
            feature: None,
            threshold: None,
            left: None,
            right: None,
            cover,
            value,
        }
    }

    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.left.is_none()
    }

    /// `(feature, threshold, left, right)` for internal nodes.
    #[inline]
    pub fn split(&self) -> Option<(usize, f64, usize, usize)> {
        match (self.feature, self.threshold, self.left, self.right) {
            (Some(f), Some(t), Some(l), Some(r)) => Some((f, t, l, r)),
            _ => None,
        }
    }
}

/// A fitted regression tree. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
    pub max_depth: usize,
    pub n_features: usize,
}

/// Row indices of a feature matrix sorted by each column (ties by row index).
///
/// Boosting fits many trees against the same design matrix, so the sort is
/// done once and shared.
#[derive(Debug, Clone)]
pub struct SortedColumns {
    order: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub fn new(x: ArrayView2<'_, f64>) -> Self {
        let order = (0..x.ncols())
            .map(|f| {
                let col = x.column(f);
                let mut idx: Vec<u32> = (0..x.nrows() as u32).collect();
                idx.sort_by(|&a, &b| {
                    col[a as usize]
                        .total_cmp(&col[b as usize])
                        .then(a.cmp(&b))
                });
                idx
            })
            .collect();
        Self { order }
    }
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    targets: &'a [f64],
    params: TreeParams,
    nodes: Vec<TreeNode>,
    go_left: Vec<bool>,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Fits a tree to `targets` by exact greedy search.
pub fn fit_tree(
    x: ArrayView2<'_, f64>,
    targets: &[f64],
    params: TreeParams,
) -> Result<RegressionTree> {
    let sorted = SortedColumns::new(x);
    fit_tree_presorted(x, &sorted, targets, params)
}

/// Same as [`fit_tree`] with column orderings computed by the caller.
pub fn fit_tree_presorted(
    x: ArrayView2<'_, f64>,
    sorted: &SortedColumns,
    targets: &[f64],
    params: TreeParams,
) -> Result<RegressionTree> {
    let m = x.nrows();
    if targets.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: targets.len(),
        });
    }
    if sorted.order.len() != x.ncols() {
        return Err(Error::Dimension {
            expected: x.ncols(),
            got: sorted.order.len(),
        });
    }
    let msl = params.min_samples_leaf.max(1);
    if m < 2 * msl {
        return Err(Error::Data(format!(
            "{m} rows cannot satisfy min_samples_leaf = {msl}"
        )));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numerical("non-finite tree target".into()));
    }
    let mut builder = Builder {
        x,
        targets,
        params: TreeParams {
            max_depth: params.max_depth,
            min_samples_leaf: msl,
        },
        nodes: Vec::new(),
        go_left: vec![false; m],
    };
    builder.grow(sorted.order.clone(), 0);
    Ok(RegressionTree {
        nodes: builder.nodes,
        max_depth: params.max_depth,
        n_features: x.ncols(),
    })
}

impl Builder<'_> {
    /// Grows the subtree for the rows in `lists` (one sorted list per
    /// feature, all holding the same rows) and returns its node index.
    fn grow(&mut self, lists: Vec<Vec<u32>>, depth: usize) -> usize {
        let rows: &[u32] = match lists.first() {
            Some(l) => l,
            None => &[],
        };
        let n = rows.len();
        let mean = if n == 0 {
            0.0
        } else {
            rows.iter().map(|&r| self.targets[r as usize]).sum::<f64>() / n as f64
        };
        let id = self.nodes.len();
        self.nodes.push(TreeNode::leaf(mean, n));

        // A tree over a zero-column matrix is a single leaf.
        if lists.is_empty() || depth >= self.params.max_depth || n < 2 * self.params.min_samples_leaf
        {
            return id;
        }
        let split = match self.best_split(&lists, mean) {
            Some(s) => s,
            None => return id,
        };

        let col = self.x.column(split.feature);
        for &r in &lists[0] {
            self.go_left[r as usize] = col[r as usize] < split.threshold;
        }
        let mut left_lists = Vec::with_capacity(lists.len());
        let mut right_lists = Vec::with_capacity(lists.len());
        for list in &lists {
            let (l, r): (Vec<u32>, Vec<u32>) =
                list.iter().partition(|&&row| self.go_left[row as usize]);
            left_lists.push(l);
            right_lists.push(r);
        }
        drop(lists);

        let left = self.grow(left_lists, depth + 1);
        let right = self.grow(right_lists, depth + 1);
        let node = &mut self.nodes[id];
        node.feature = Some(split.feature);
        node.threshold = Some(split.threshold);
        node.left = Some(left);
        node.right = Some(right);
        id
    }

    fn best_split(&self, lists: &[Vec<u32>], mean: f64) -> Option<Split> {
        let n = lists[0].len();
        let msl = self.params.min_samples_leaf;
        let sse: f64 = lists[0]
            .iter()
            .map(|&r| {
                let d = self.targets[r as usize] - mean;
                d * d
            })
            .sum();
        if !(sse > 0.0) {
            return None;
        }
        let min_gain = 1e-12 * sse;
        let mut best: Option<Split> = None;

        for (feature, list) in lists.iter().enumerate() {
            let col = self.x.column(feature);
            // Targets are centered, so the parent term sum²/n vanishes.
            let total: f64 = list
                .iter()
                .map(|&r| self.targets[r as usize] - mean)
                .sum();
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                let r = list[i] as usize;
                left_sum += self.targets[r] - mean;
                let n_left = i + 1;
                let n_right = n - n_left;
                if n_left < msl {
                    continue;
                }
                if n_right < msl {
                    break;
                }
                let v = col[r];
                let v_next = col[list[i + 1] as usize];
                if !(v < v_next) {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64
                    - total * total / n as f64;
                if gain > min_gain && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = 0.5 * (v + v_next);
                    if !(threshold > v) {
                        threshold = v_next;
                    }
                    best = Some(Split {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

impl RegressionTree {
    /// A tree consisting of a single leaf.
    pub fn constant(value: f64, cover: usize, n_features: usize) -> Self {
        Self {
            nodes: vec![TreeNode::leaf(value, cover)],
            max_depth: 0,
            n_features,
        }
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    /// Index of the leaf `x` is routed to.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        while let Some((f, t, l, r)) = self.nodes[i].split() {
            i = if x[f] < t { l } else { r };
        }
        i
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_index(x)].value
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &RegressionTree, i: usize) -> usize {
            match t.nodes[i].split() {
                Some((_, _, l, r)) => 1 + walk(t, l).max(walk(t, r)),
                None => 0,
            }
        }
        walk(self, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    /// Distinct features split on, ascending.
    pub fn features_used(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self.nodes.iter().filter_map(|n| n.feature).collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    /// Checks structural invariants; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Data("tree has no nodes".into()));
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, depth)) = stack.pop() {
            if seen[i] {
                return Err(Error::Data(format!("node {i} reached twice")));
            }
            seen[i] = true;
            let node = &self.nodes[i];
            if !node.value.is_finite() {
                return Err(Error::Data(format!("node {i} has a non-finite value")));
            }
            if node.is_leaf() {
                if node.feature.is_some() || node.right.is_some() {
                    return Err(Error::Data(format!("leaf {i} is half-split")));
                }
                continue;
            }
            let (f, t, l, r) = node
                .split()
                .ok_or_else(|| Error::Data(format!("node {i} is incomplete")))?;
            if f >= self.n_features {
                return Err(Error::Data(format!("node {i} splits on feature {f}")));
            }
            if !t.is_finite() {
                return Err(Error::Data(format!("node {i} has a non-finite threshold")));
            }
            if l >= self.nodes.len() || r >= self.nodes.len() {
                return Err(Error::Data(format!("node {i} has a dangling child")));
            }
            if self.nodes[l].cover + self.nodes[r].cover != node.cover {
                return Err(Error::Data(format!("cover mismatch below node {i}")));
            }
            if depth + 1 > self.max_depth {
                return Err(Error::Data("tree deeper than max_depth".into()));
            }
            stack.push((l, depth + 1));
            stack.push((r, depth + 1));
        }
        Ok(())
    }
}
