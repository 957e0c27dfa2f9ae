//! Exact SHAP values and SHAP interaction values for boosted ensembles.
//!
//! Each head (location or log scale) of an [`NgbModel`] is an additive
//! function `theta0 - lr * sum_n rho_n * tree_n(x)`, so attributions are
//! computed per tree and summed with weights `-lr * rho_n`. The value of a
//! feature subset `S` is the tree-path-dependent conditional expectation:
//! at a split on a feature outside `S` both children are averaged by their
//! training covers.
//!
//! [`shap_values`] and [`shap_interactions`] use the polynomial path
//! algorithm. [`shap_brute_force`] and [`shap_interactions_brute_force`]
//! enumerate every subset and serve as the reference.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ngboost::{Head, NgbModel};
use crate::tree::RegressionTree;

/// Largest feature count the subset enumeration accepts.
pub const BRUTE_FORCE_MAX_FEATURES: usize = 20;

/// Additive attribution of one head's output at one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// Head value with no feature observed.
    pub base_value: f64,
    pub phi: Vec<f64>,
    pub head: Head,
    pub x: Vec<f64>,
}

impl Explanation {
    /// `base_value + sum(phi)`.
    pub fn output(&self) -> f64 {
        self.base_value + self.phi.iter().sum::<f64>()
    }
}

/// Pairwise attribution matrix. Off-diagonal entries hold half of each
/// pair's interaction; row sums equal the SHAP values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionMatrix {
    pub base_value: f64,
    pub phi: Vec<Vec<f64>>,
    pub head: Head,
    pub x: Vec<f64>,
}

impl InteractionMatrix {
    pub fn row_sums(&self) -> Vec<f64> {
        self.phi.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Expected tree output given only the features flagged in `known`.
pub fn conditional_expectation(tree: &RegressionTree, x: &[f64], known: &[bool]) -> f64 {
    fn walk(tree: &RegressionTree, i: usize, x: &[f64], known: &[bool]) -> f64 {
        let node = &tree.nodes[i];
        match node.split() {
            None => node.value,
            Some((f, t, l, r)) => {
                if known[f] {
                    walk(tree, if x[f] < t { l } else { r }, x, known)
                } else {
                    let (cl, cr) = (tree.nodes[l].cover as f64, tree.nodes[r].cover as f64);
                    (cl * walk(tree, l, x, known) + cr * walk(tree, r, x, known)) / (cl + cr)
                }
            }
        }
    }
    walk(tree, 0, x, known)
}

#[derive(Debug, Clone, Copy, Default)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Condition {
    Free,
    /// Feature always observed; excluded from the player set.
    On(usize),
    /// Feature never observed; excluded from the player set.
    Off(usize),
}

impl Condition {
    fn feature(self) -> Option<usize> {
        match self {
            Condition::Free => None,
            Condition::On(f) | Condition::Off(f) => Some(f),
        }
    }
}

fn extend_path(path: &mut [PathElement], depth: usize, zero: f64, one: f64, feature: Option<usize>) {
    path[depth] = PathElement {
        feature,
        zero_fraction: zero,
        one_fraction: one,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    };
    let n = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / n;
        path[i].weight = zero * path[i].weight * (depth - i) as f64 / n;
    }
}

fn unwind_path(path: &mut [PathElement], depth: usize, index: usize) {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let n = (depth + 1) as f64;
    let mut next_one = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next_one * n / ((i + 1) as f64 * one);
            next_one = tmp - path[i].weight * zero * (depth - i) as f64 / n;
        } else {
            path[i].weight = path[i].weight * n / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

/// Total permutation weight of the path with element `index` removed.
fn unwound_path_sum(path: &[PathElement], depth: usize, index: usize) -> f64 {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let n = (depth + 1) as f64;
    let mut next_one = path[depth].weight;
    let mut total = 0.0;
    if one != 0.0 {
        for i in (0..depth).rev() {
            let tmp = next_one * n / ((i + 1) as f64 * one);
            total += tmp;
            next_one = path[i].weight - tmp * zero * (depth - i) as f64 / n;
        }
    } else {
        for i in (0..depth).rev() {
            total += path[i].weight / zero * n / (depth - i) as f64;
        }
    }
    total
}

struct PathWalker<'a> {
    tree: &'a RegressionTree,
    x: &'a [f64],
    condition: Condition,
    buf: Vec<PathElement>,
    phi: &'a mut [f64],
}

impl PathWalker<'_> {
    /// `depth` is the index of the last valid element of this node's path,
    /// which starts at `parent_offset + depth + 1` in the buffer.
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &mut self,
        node: usize,
        parent_offset: usize,
        depth: usize,
        parent_zero: f64,
        parent_one: f64,
        parent_feature: Option<usize>,
        condition_fraction: f64,
    ) {
        if condition_fraction == 0.0 {
            return;
        }
        let offset = parent_offset + depth + 1;
        self.buf
            .copy_within(parent_offset..parent_offset + depth + 1, offset);
        let cond_feature = self.condition.feature();
        if cond_feature.is_none() || parent_feature != cond_feature {
            extend_path(
                &mut self.buf[offset..],
                depth,
                parent_zero,
                parent_one,
                parent_feature,
            );
        }
        let tree = self.tree;
        let n = &tree.nodes[node];
        let Some((f, t, l, r)) = n.split() else {
            let path = &self.buf[offset..];
            for i in 1..=depth {
                let el = path[i];
                let w = unwound_path_sum(path, depth, i);
                if let Some(fi) = el.feature {
                    self.phi[fi] +=
                        w * (el.one_fraction - el.zero_fraction) * n.value * condition_fraction;
                }
            }
            return;
        };

        let (hot, cold) = if self.x[f] < t { (l, r) } else { (r, l) };
        let cover = n.cover as f64;
        let hot_zero = tree.nodes[hot].cover as f64 / cover;
        let cold_zero = tree.nodes[cold].cover as f64 / cover;
        let mut incoming_zero = 1.0;
        let mut incoming_one = 1.0;

        // Undo an earlier split on the same feature so it is counted once.
        let mut depth = depth as isize;
        if let Some(k) = (0..=depth as usize).find(|&k| self.buf[offset + k].feature == Some(f)) {
            incoming_zero = self.buf[offset + k].zero_fraction;
            incoming_one = self.buf[offset + k].one_fraction;
            unwind_path(&mut self.buf[offset..], depth as usize, k);
            depth -= 1;
        }

        let mut hot_fraction = condition_fraction;
        let mut cold_fraction = condition_fraction;
        match self.condition {
            Condition::On(c) if c == f => {
                cold_fraction = 0.0;
                depth -= 1;
            }
            Condition::Off(c) if c == f => {
                hot_fraction *= hot_zero;
                cold_fraction *= cold_zero;
                depth -= 1;
            }
            _ => {}
        }
        let child_depth = (depth + 1) as usize;
        self.recurse(
            hot,
            offset,
            child_depth,
            hot_zero * incoming_zero,
            incoming_one,
            Some(f),
            hot_fraction,
        );
        self.recurse(
            cold,
            offset,
            child_depth,
            cold_zero * incoming_zero,
            0.0,
            Some(f),
            cold_fraction,
        );
    }
}

/// Adds `weight` times the SHAP values of `tree` at `x` into `phi`.
fn tree_shap_into(
    tree: &RegressionTree,
    x: &[f64],
    condition: Condition,
    weight: f64,
    phi: &mut [f64],
    scratch: &mut Vec<f64>,
) {
    if tree.root().is_leaf() {
        return;
    }
    scratch.clear();
    scratch.resize(phi.len(), 0.0);
    let d = tree.depth() + 2;
    let mut walker = PathWalker {
        tree,
        x,
        condition,
        buf: vec![PathElement::default(); d * (d + 2)],
        phi: scratch,
    };
    walker.recurse(0, 0, 0, 1.0, 1.0, None, 1.0);
    for (p, s) in phi.iter_mut().zip(scratch.iter()) {
        *p += weight * s;
    }
}

/// SHAP values of a single tree.
pub fn tree_shap(tree: &RegressionTree, x: &[f64]) -> Vec<f64> {
    let mut phi = vec![0.0; tree.n_features];
    let mut scratch = Vec::new();
    tree_shap_into(tree, x, Condition::Free, 1.0, &mut phi, &mut scratch);
    phi
}

fn check_dim(model: &NgbModel, x: &[f64]) -> Result<()> {
    if x.len() != model.n_features() {
        return Err(Error::Dimension {
            expected: model.n_features(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Ensemble trees of one head with their additive weights.
fn weighted_trees(model: &NgbModel, head: Head) -> impl Iterator<Item = (&RegressionTree, f64)> {
    let lr = model.config.learning_rate;
    model
        .stages
        .iter()
        .map(move |s| (s.tree(head), -lr * s.rho))
}

/// Head value with no feature observed.
pub fn base_value(model: &NgbModel, head: Head) -> f64 {
    let none = vec![false; model.n_features()];
    let origin = vec![0.0; model.n_features()];
    head.of(&model.theta0)
        + weighted_trees(model, head)
            .map(|(t, w)| w * conditional_expectation(t, &origin, &none))
            .sum::<f64>()
}

/// Exact SHAP values of one head at `x`.
pub fn shap_values(model: &NgbModel, x: &[f64], head: Head) -> Result<Explanation> {
    check_dim(model, x)?;
    let mut phi = vec![0.0; model.n_features()];
    let mut scratch = Vec::new();
    for (tree, w) in weighted_trees(model, head) {
        tree_shap_into(tree, x, Condition::Free, w, &mut phi, &mut scratch);
    }
    Ok(Explanation {
        base_value: base_value(model, head),
        phi,
        head,
        x: x.to_vec(),
    })
}

/// Exact SHAP interaction values of one head at `x`.
pub fn shap_interactions(model: &NgbModel, x: &[f64], head: Head) -> Result<InteractionMatrix> {
    check_dim(model, x)?;
    let d = model.n_features();
    let mut phi = vec![0.0; d];
    // raw[i][j]: half the change in phi_i between j observed and j unobserved
    let mut raw = vec![vec![0.0; d]; d];
    let mut on = vec![0.0; d];
    let mut off = vec![0.0; d];
    let mut scratch = Vec::new();
    for (tree, w) in weighted_trees(model, head) {
        tree_shap_into(tree, x, Condition::Free, w, &mut phi, &mut scratch);
        for j in tree.features_used() {
            on.iter_mut().for_each(|v| *v = 0.0);
            off.iter_mut().for_each(|v| *v = 0.0);
            tree_shap_into(tree, x, Condition::On(j), w, &mut on, &mut scratch);
            tree_shap_into(tree, x, Condition::Off(j), w, &mut off, &mut scratch);
            for i in 0..d {
                if i != j {
                    raw[i][j] += 0.5 * (on[i] - off[i]);
                }
            }
        }
    }
    Ok(InteractionMatrix {
        base_value: base_value(model, head),
        phi: assemble_interactions(&phi, &raw),
        head,
        x: x.to_vec(),
    })
}

/// Symmetrizes the off-diagonal part and sets the diagonal so that each
/// row sums to the corresponding SHAP value.
fn assemble_interactions(phi: &[f64], raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = phi.len();
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (raw[i][j] + raw[j][i]);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    for i in 0..d {
        let off: f64 = (0..d).filter(|&j| j != i).map(|j| out[i][j]).sum();
        out[i][i] = phi[i] - off;
    }
    out
}

/// Head value for every feature subset, indexed by bitmask.
fn subset_values(model: &NgbModel, x: &[f64], head: Head) -> Result<Vec<f64>> {
    check_dim(model, x)?;
    let d = model.n_features();
    if d > BRUTE_FORCE_MAX_FEATURES {
        return Err(Error::Domain(format!(
            "subset enumeration limited to {BRUTE_FORCE_MAX_FEATURES} features, model has {d}"
        )));
    }
    let theta = head.of(&model.theta0);
    let trees: Vec<(&RegressionTree, f64)> = weighted_trees(model, head).collect();
    Ok((0..1usize << d)
        .into_par_iter()
        .map(|mask| {
            let known: Vec<bool> = (0..d).map(|k| mask >> k & 1 == 1).collect();
            theta
                + trees
                    .iter()
                    .map(|(t, w)| w * conditional_expectation(t, x, &known))
                    .sum::<f64>()
        })
        .collect())
}

fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for k in 1..=n {
        f[k] = f[k - 1] * k as f64;
    }
    f
}

/// SHAP values by enumerating all `2^D` subsets with the Shapley weights
/// `|S|! (D - |S| - 1)! / D!`.
pub fn shap_brute_force(model: &NgbModel, x: &[f64], head: Head) -> Result<Explanation> {
    let values = subset_values(model, x, head)?;
    let d = model.n_features();
    let fact = factorials(d);
    let mut phi = vec![0.0; d];
    for (k, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << k;
        for mask in 0..1usize << d {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = fact[s] * fact[d - s - 1] / fact[d];
            *p += w * (values[mask | bit] - values[mask]);
        }
    }
    Ok(Explanation {
        base_value: values[0],
        phi,
        head,
        x: x.to_vec(),
    })
}

/// Interaction values by enumerating subsets with weights
/// `|S|! (D - |S| - 2)! / (2 (D - 1)!)`.
pub fn shap_interactions_brute_force(
    model: &NgbModel,
    x: &[f64],
    head: Head,
) -> Result<InteractionMatrix> {
    let values = subset_values(model, x, head)?;
    let d = model.n_features();
    let fact = factorials(d);
    let phi = shap_brute_force(model, x, head)?.phi;
    let mut raw = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in 0..d {
            if a == b {
                continue;
            }
            let (ba, bb) = (1usize << a, 1usize << b);
            let mut total = 0.0;
            for mask in 0..1usize << d {
                if mask & (ba | bb) != 0 {
                    continue;
                }
                let s = mask.count_ones() as usize;
                let w = fact[s] * fact[d - s - 2] / (2.0 * fact[d - 1]);
                let delta = values[mask | ba | bb] + values[mask]
                    - values[mask | ba]
                    - values[mask | bb];
                total += w * delta;
            }
            raw[a][b] = total;
        }
    }
    Ok(InteractionMatrix {
        base_value: values[0],
        phi: assemble_interactions(&phi, &raw),
        head,
        x: x.to_vec(),
    })
}

/// Explains every row of `data`.
pub fn explain_dataset(model: &NgbModel, data: &Dataset, head: Head) -> Result<Vec<Explanation>> {
    (0..data.n_rows())
        .into_par_iter()
        .map(|i| shap_values(model, &data.row(i), head))
        .collect()
}

/// Interaction matrices for every row of `data`.
pub fn interactions_dataset(
    model: &NgbModel,
    data: &Dataset,
    head: Head,
) -> Result<Vec<InteractionMatrix>> {
    (0..data.n_rows())
        .into_par_iter()
        .map(|i| shap_interactions(model, &data.row(i), head))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: usize,
    pub name: String,
    pub mean_abs_phi: f64,
}

/// Mean absolute attribution per feature, largest first; ties keep feature order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub head: Head,
    pub entries: Vec<ImportanceEntry>,
}

impl GlobalImportance {
    pub fn from_explanations(head: Head, names: &[String], explanations: &[Explanation]) -> Self {
        let d = names.len();
        let mut sums = vec![0.0; d];
        for e in explanations {
            for (s, p) in sums.iter_mut().zip(&e.phi) {
                *s += p.abs();
            }
        }
        let n = explanations.len().max(1) as f64;
        let mut entries: Vec<ImportanceEntry> = sums
            .into_iter()
            .enumerate()
            .map(|(feature, s)| ImportanceEntry {
                feature,
                name: names[feature].clone(),
                mean_abs_phi: s / n,
            })
            .collect();
        entries.sort_by(|a, b| {
            b.mean_abs_phi
                .total_cmp(&a.mean_abs_phi)
                .then(a.feature.cmp(&b.feature))
        });
        Self { head, entries }
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.mean_abs_phi).sum()
    }

    /// Importance of a feature by index.
    pub fn of(&self, feature: usize) -> f64 {
        self.entries
            .iter()
            .find(|e| e.feature == feature)
            .map_or(0.0, |e| e.mean_abs_phi)
    }

    /// Feature indices ordered by importance.
    pub fn ranking(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.feature).collect()
    }
}

/// Global importance plus the per-sample explanations behind it.
#[derive(Debug, Clone)]
pub struct Summary {
    pub importance: GlobalImportance,
    pub explanations: Vec<Explanation>,
}

impl Summary {
    /// `(feature value, phi)` pairs of one feature across samples.
    pub fn dependence(&self, feature: usize) -> Vec<(f64, f64)> {
        self.explanations
            .iter()
            .map(|e| (e.x[feature], e.phi[feature]))
            .collect()
    }
}

pub fn summarize(model: &NgbModel, data: &Dataset, head: Head) -> Result<Summary> {
    if data.n_rows() == 0 {
        return Err(Error::Data("cannot summarize an empty dataset".into()));
    }
    let explanations = explain_dataset(model, data, head)?;
    let importance =
        GlobalImportance::from_explanations(head, &model.feature_names, &explanations);
    Ok(Summary {
        importance,
        explanations,
    })
}

/// `(value of feature_a, interaction of a with b)` across samples.
pub fn interaction_dependence(
    matrices: &[InteractionMatrix],
    feature_a: usize,
    feature_b: usize,
) -> Vec<(f64, f64)> {
    matrices
        .iter()
        .map(|m| (m.x[feature_a], m.phi[feature_a][feature_b]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceEntry {
    pub feature: usize,
    pub name: String,
    pub value: f64,
    pub phi: f64,
    /// Running sum of `phi` up to and including this entry.
    pub cumulative: f64,
    pub displayed: bool,
}

/// Contributions ordered by magnitude, walking from the base value to the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceRecord {
    pub head: Head,
    pub base_value: f64,
    pub output: f64,
    pub entries: Vec<ForceEntry>,
}

impl ForceRecord {
    pub fn displayed(&self) -> impl Iterator<Item = &ForceEntry> {
        self.entries.iter().filter(|e| e.displayed)
    }
}

/// Orders contributions by `|phi|`. Entries below `1e-6 * |output - base|`
/// are marked as not displayed.
pub fn force_record(explanation: &Explanation, names: &[String]) -> ForceRecord {
    let mut order: Vec<usize> = (0..explanation.phi.len()).collect();
    order.sort_by(|&a, &b| {
        explanation.phi[b]
            .abs()
            .total_cmp(&explanation.phi[a].abs())
            .then(a.cmp(&b))
    });
    let span = explanation.phi.iter().sum::<f64>().abs();
    let cutoff = 1e-6 * span;
    let mut running = 0.0;
    let entries: Vec<ForceEntry> = order
        .into_iter()
        .map(|k| {
            let phi = explanation.phi[k];
            running += phi;
            ForceEntry {
                feature: k,
                name: names.get(k).cloned().unwrap_or_else(|| format!("f{k}")),
                value: explanation.x[k],
                phi,
                cumulative: running,
                displayed: phi != 0.0 && phi.abs() >= cutoff,
            }
        })
        .collect();
    ForceRecord {
        head: explanation.head,
        base_value: explanation.base_value,
        output: explanation.base_value + running,
        entries,
    }
}

/// Long-form SHAP export: `sample_id,head,feature,feature_value,phi`.
pub fn write_explanations_csv<W: Write>(
    writer: W,
    names: &[String],
    explanations: &[(usize, Explanation)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sample_id", "head", "feature", "feature_value", "phi"])?;
    for (id, e) in explanations {
        for (k, name) in names.iter().enumerate() {
            w.write_record([
                id.to_string(),
                e.head.to_string(),
                name.clone(),
                e.x[k].to_string(),
                e.phi[k].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Long-form interaction export: `sample_id,head,feature_a,feature_b,phi_ab`.
pub fn write_interactions_csv<W: Write>(
    writer: W,
    names: &[String],
    matrices: &[(usize, InteractionMatrix)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sample_id", "head", "feature_a", "feature_b", "phi_ab"])?;
    for (id, m) in matrices {
        for (a, na) in names.iter().enumerate() {
            for (b, nb) in names.iter().enumerate() {
                w.write_record([
                    id.to_string(),
                    m.head.to_string(),
                    na.clone(),
                    nb.clone(),
                    m.phi[a][b].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::{DistParams, Family};
    use crate::ngboost::{NgbConfig, Stage};
    use crate::tree::TreeNode;

    fn leaf(value: f64, cover: usize) -> TreeNode {
        TreeNode {
            feature: None,
            threshold: None,
            left: None,
            right: None,
            cover,
            value,
        }
    }

    fn split(feature: usize, threshold: f64, left: usize, right: usize, cover: usize) -> TreeNode {
        TreeNode {
            feature: Some(feature),
            threshold: Some(threshold),
            left: Some(left),
            right: Some(right),
            cover,
            value: 0.0,
        }
    }

    fn stump(feature: usize, d: usize) -> RegressionTree {
        RegressionTree {
            nodes: vec![split(feature, 0.5, 1, 2, 100), leaf(1.0, 30), leaf(2.0, 70)],
            max_depth: 1,
            n_features: d,
        }
    }

    /// XOR on features 0 and 1 with unequal covers.
    fn xor_tree(d: usize) -> RegressionTree {
        RegressionTree {
            nodes: vec![
                split(0, 0.5, 1, 4, 10),
                split(1, 0.5, 2, 3, 4),
                leaf(0.0, 1),
                leaf(1.0, 3),
                split(1, 0.5, 5, 6, 6),
                leaf(1.0, 4),
                leaf(0.0, 2),
            ],
            max_depth: 2,
            n_features: d,
        }
    }

    fn model_from(trees: Vec<RegressionTree>, d: usize) -> NgbModel {
        let stages = trees
            .into_iter()
            .map(|t| Stage {
                mu_tree: t,
                scale_tree: RegressionTree::constant(0.0, 1, d),
                rho: 1.0,
            })
            .collect();
        NgbModel {
            theta0: DistParams::new(Family::Normal, 0.25, 0.0),
            stages,
            config: NgbConfig {
                learning_rate: 1.0,
                ..NgbConfig::default()
            },
            feature_names: (0..d).map(|k| format!("f{k}")).collect(),
            layout: None,
        }
    }

    #[test]
    fn conditional_expectation_examples() {
        let t = stump(0, 1);
        assert_eq!(conditional_expectation(&t, &[0.0], &[true]), 1.0);
        assert_eq!(conditional_expectation(&t, &[0.0], &[false]), 1.7);
        let single = RegressionTree::constant(3.5, 10, 2);
        assert_eq!(conditional_expectation(&single, &[1.0, 2.0], &[false, true]), 3.5);
    }

    #[test]
    fn zero_stage_model_has_zero_attributions() {
        let m = model_from(vec![], 3);
        let e = shap_values(&m, &[1.0, 2.0, 3.0], Head::Mu).unwrap();
        assert_eq!(e.phi, vec![0.0; 3]);
        assert_eq!(e.base_value, 0.25);
    }

    #[test]
    fn stump_attributes_only_split_feature() {
        let m = model_from(vec![stump(0, 3)], 3);
        let e = shap_values(&m, &[0.0, 9.0, 9.0], Head::Mu).unwrap();
        // lr = rho = 1 so the head subtracts the tree.
        assert!((e.phi[0] - 0.7).abs() < 1e-15);
        assert_eq!(e.phi[1], 0.0);
        assert_eq!(e.phi[2], 0.0);
        assert!((e.base_value - (0.25 - 1.7)).abs() < 1e-15);
        assert!((e.output() - m.head_value(&[0.0, 9.0, 9.0], Head::Mu)).abs() < 1e-15);
    }

    #[test]
    fn single_feature_two_term_shapley() {
        let m = model_from(vec![stump(0, 1)], 1);
        for x in [0.0, 1.0] {
            let e = shap_brute_force(&m, &[x], Head::Mu).unwrap();
            let t = &m.stages[0].mu_tree;
            let expect = -(conditional_expectation(t, &[x], &[true])
                - conditional_expectation(t, &[x], &[false]));
            assert!((e.phi[0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn xor_tree_matches_hand_enumeration() {
        // x = (0, 1) reaches the cover-3 leaf with value 1.
        let t = xor_tree(2);
        let x = [0.0, 1.0];
        let f = |a: bool, b: bool| conditional_expectation(&t, &x, &[a, b]);
        // f(∅) = (0*1 + 1*3 + 1*4 + 0*2)/10 = 0.7
        assert!((f(false, false) - 0.7).abs() < 1e-15);
        // f({0}) = left subtree: (0*1 + 1*3)/4 = 0.75
        assert!((f(true, false) - 0.75).abs() < 1e-15);
        // f({1}) = (4/10)*1 + (6/10)*0 = 0.4
        assert!((f(false, true) - 0.4).abs() < 1e-15);
        assert_eq!(f(true, true), 1.0);
        let phi0 = 0.5 * (0.75 - 0.7) + 0.5 * (1.0 - 0.4);
        let phi1 = 0.5 * (0.4 - 0.7) + 0.5 * (1.0 - 0.75);
        let expected = [phi0, phi1];
        let fast = tree_shap(&t, &x);
        let m = model_from(vec![t], 2);
        let brute = shap_brute_force(&m, &x, Head::Mu).unwrap();
        for k in 0..2 {
            assert!((fast[k] - expected[k]).abs() < 1e-15);
            assert!((brute.phi[k] + expected[k]).abs() < 1e-15);
        }
        // Interaction with D = 2: (f11 + f00 - f10 - f01) / 2
        let inter = shap_interactions(&m, &x, Head::Mu).unwrap();
        let hand = -0.5 * (1.0 + 0.7 - 0.75 - 0.4);
        assert!((inter.phi[0][1] - hand).abs() < 1e-15);
        assert!(inter.phi[0][1] != 0.0);
        let brute_i = shap_interactions_brute_force(&m, &x, Head::Mu).unwrap();
        assert!((brute_i.phi[0][1] - hand).abs() < 1e-15);
    }

    #[test]
    fn additive_model_has_no_interactions() {
        let m = model_from(vec![stump(0, 3), stump(1, 3), stump(2, 3), stump(1, 3)], 3);
        let x = [0.0, 1.0, 0.0];
        let inter = shap_interactions(&m, &x, Head::Mu).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    assert_eq!(inter.phi[a][b], 0.0);
                }
            }
        }
        let phi = shap_values(&m, &x, Head::Mu).unwrap().phi;
        for (r, p) in inter.row_sums().iter().zip(&phi) {
            assert!((r - p).abs() < 1e-15);
        }
    }

    #[test]
    fn repeated_feature_on_path_matches_brute_force() {
        // Splits on feature 0 twice along one path.
        let t = RegressionTree {
            nodes: vec![
                split(0, 0.5, 1, 2, 20),
                leaf(-1.0, 8),
                split(1, 0.5, 3, 4, 12),
                split(0, 1.5, 5, 6, 7),
                leaf(4.0, 5),
                leaf(2.0, 3),
                leaf(3.0, 4),
            ],
            max_depth: 3,
            n_features: 3,
        };
        let m = model_from(vec![t], 3);
        for x in [[1.0, 0.0, 0.0], [2.0, 0.0, 5.0], [0.0, 1.0, 0.0], [1.0, 1.0, 1.0]] {
            let fast = shap_values(&m, &x, Head::Mu).unwrap();
            let brute = shap_brute_force(&m, &x, Head::Mu).unwrap();
            for k in 0..3 {
                assert!((fast.phi[k] - brute.phi[k]).abs() < 1e-13);
            }
            let fi = shap_interactions(&m, &x, Head::Mu).unwrap();
            let bi = shap_interactions_brute_force(&m, &x, Head::Mu).unwrap();
            for a in 0..3 {
                for b in 0..3 {
                    assert!((fi.phi[a][b] - bi.phi[a][b]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn scale_head_ignores_mu_trees() {
        let mut m = model_from(vec![stump(0, 2)], 2);
        let e = shap_values(&m, &[0.0, 0.0], Head::Scale).unwrap();
        assert_eq!(e.phi, vec![0.0, 0.0]);
        m.stages[0].scale_tree = stump(1, 2);
        let mu = shap_values(&m, &[0.0, 0.0], Head::Mu).unwrap();
        assert_eq!(mu.phi[1], 0.0);
        let sc = shap_values(&m, &[0.0, 0.0], Head::Scale).unwrap();
        assert_eq!(sc.phi[0], 0.0);
        assert!(sc.phi[1] != 0.0);
    }

    #[test]
    fn brute_force_refuses_wide_models() {
        let m = model_from(vec![], 21);
        assert!(shap_brute_force(&m, &vec![0.0; 21], Head::Mu).is_err());
    }

    #[test]
    fn force_record_properties() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let e = Explanation {
            base_value: 1.0,
            phi: vec![0.1, -0.5, 0.0],
            head: Head::Mu,
            x: vec![1.0, 2.0, 3.0],
        };
        let r = force_record(&e, &names);
        let order: Vec<usize> = r.entries.iter().map(|e| e.feature).collect();
        assert_eq!(order, vec![1, 0, 2]);
        assert_eq!(r.displayed().count(), 2);
        assert_eq!(r.entries.last().unwrap().cumulative, r.output - r.base_value);

        let zero = Explanation {
            phi: vec![0.0; 3],
            ..e
        };
        let r = force_record(&zero, &names);
        assert_eq!(r.displayed().count(), 0);
        assert_eq!(r.output, 1.0);
    }

    #[test]
    fn importance_sorting_and_ties() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let ex = |phi: Vec<f64>| Explanation {
            base_value: 0.0,
            phi,
            head: Head::Mu,
            x: vec![0.0; 3],
        };
        let g = GlobalImportance::from_explanations(
            Head::Mu,
            &names,
            &[ex(vec![1.0, -2.0, 2.0]), ex(vec![-1.0, 2.0, -2.0])],
        );
        assert_eq!(g.ranking(), vec![1, 2, 0]);
        assert_eq!(g.of(0), 1.0);
        assert_eq!(g.total(), 5.0);
    }

    #[test]
    fn csv_exports_have_expected_shape() {
        let names: Vec<String> = vec!["a".into(), "b".into()];
        let m = model_from(vec![xor_tree(2)], 2);
        let e = shap_values(&m, &[0.0, 1.0], Head::Mu).unwrap();
        let mut buf = Vec::new();
        write_explanations_csv(&mut buf, &names, &[(7, e)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sample_id,head,feature,feature_value,phi");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("7,mu,a,0,"));

        let i = shap_interactions(&m, &[0.0, 1.0], Head::Mu).unwrap();
        let mut buf = Vec::new();
        write_interactions_csv(&mut buf, &names, &[(0, i)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("sample_id,head,feature_a,feature_b,phi_ab"));
    }
}
