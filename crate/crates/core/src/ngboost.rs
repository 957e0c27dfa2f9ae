//! Natural gradient boosting.
//!
//! Training starts from one marginal fit `theta0` shared by every row. Each
//! stage computes per-row natural gradients of the scoring rule and fits
//! one regression tree per distribution parameter to them. It then finds a
//! common step `rho` by line search and moves every row's parameters by
//! `-learning_rate * rho * tree(x)`.

use std::path::Path;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureLayout};
use crate::dists::{DistParams, Family, ScoreRule};
use crate::error::{Error, Result};
use crate::optim::{coordinate_descent_2d, golden_section};
use crate::tree::{fit_tree_presorted, RegressionTree, SortedColumns, TreeParams};

/// Lower bound on the fitted initial scale.
pub const SCALE_FLOOR: f64 = 1e-6;

const SUM_CHUNK: usize = 4096;

/// Which distribution parameter a tree ensemble predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Location.
    Mu,
    /// Log scale.
    Scale,
}

impl Head {
    pub const ALL: [Head; 2] = [Head::Mu, Head::Scale];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Head::Mu => 0,
            Head::Scale => 1,
        }
    }

    pub fn of(self, p: &DistParams) -> f64 {
        match self {
            Head::Mu => p.loc,
            Head::Scale => p.log_scale,
        }
    }
}

impl std::fmt::Display for Head {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Head::Mu => f.write_str("mu"),
            Head::Scale => f.write_str("scale"),
        }
    }
}

impl std::str::FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(Head::Mu),
            "scale" => Ok(Head::Scale),
            _ => Err(Error::Domain(format!("unknown head {s:?}"))),
        }
    }
}

/// Step-size search along the stage direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineSearch {
    pub max_doublings: usize,
    /// Relative bracket width at which golden-section refinement stops.
    pub rel_tol: f64,
    /// Halving stops (and the stage is discarded) below this step.
    pub min_step: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            max_doublings: 10,
            rel_tol: 1e-3,
            min_step: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NgbConfig {
    pub n_stages: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub family: Family,
    pub score: ScoreRule,
    pub line_search: LineSearch,
}

impl Default for NgbConfig {
    fn default() -> Self {
        Self {
            n_stages: 500,
            learning_rate: 0.01,
            max_depth: 3,
            min_samples_leaf: 1,
            family: Family::Normal,
            score: ScoreRule::LogScore,
            line_search: LineSearch::default(),
        }
    }
}

impl NgbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stages == 0 {
            return Err(Error::Domain("n_stages must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Domain(format!(
                "learning rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Domain("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
        }
    }
}

/// One boosting stage: a tree per parameter and the line-searched step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub mu_tree: RegressionTree,
    pub scale_tree: RegressionTree,
    pub rho: f64,
}

impl Stage {
    pub fn tree(&self, head: Head) -> &RegressionTree {
        match head {
            Head::Mu => &self.mu_tree,
            Head::Scale => &self.scale_tree,
        }
    }
}

/// A fitted ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgbModel {
    pub theta0: DistParams,
    pub stages: Vec<Stage>,
    pub config: NgbConfig,
    pub feature_names: Vec<String>,
    /// Feature assembly and power scaling of the training data, when it came
    /// from a power series.
    #[serde(default)]
    pub layout: Option<FeatureLayout>,
}

/// Result of the marginal fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta0 {
    pub params: DistParams,
    /// Set when the scale hit [`SCALE_FLOOR`].
    pub floored: bool,
}

/// Minimizes the summed score over a single shared distribution.
pub fn fit_theta0(y: &[f64], family: Family, rule: ScoreRule) -> Result<Theta0> {
    if y.len() < 2 {
        return Err(Error::Data("fitting theta0 needs at least two targets".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite target".into()));
    }
    let m = y.len() as f64;
    let (loc, scale) = match (family, rule) {
        (Family::Normal, ScoreRule::LogScore) => {
            let mean = y.iter().sum::<f64>() / m;
            let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            (mean, var.sqrt())
        }
        (Family::Laplace, ScoreRule::LogScore) => {
            let med = median(y);
            (med, y.iter().map(|v| (v - med).abs()).sum::<f64>() / m)
        }
        (_, ScoreRule::Crps) => {
            let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo <= 0.0 {
                (lo, 0.0)
            } else {
                let mean = y.iter().sum::<f64>() / m;
                let sd = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m).sqrt();
                let objective = |mu: f64, ls: f64| {
                    let d = DistParams::new(family, mu, ls);
                    y.iter().map(|&v| d.crps(v)).sum::<f64>()
                };
                let range = hi - lo;
                let (mu, ls) = coordinate_descent_2d(
                    objective,
                    (mean, sd.max(SCALE_FLOOR).ln()),
                    (lo, hi),
                    (SCALE_FLOOR.ln(), (2.0 * range).ln()),
                    1e-10 * range.max(1.0),
                    200,
                );
                (mu, ls.exp())
            }
        }
    };
    let floored = !(scale >= SCALE_FLOOR);
    let scale = if floored { SCALE_FLOOR } else { scale };
    if floored {
        log::warn!("targets have (near) zero spread; initial scale floored at {SCALE_FLOOR}");
    }
    Ok(Theta0 {
        params: DistParams::new(family, loc, scale.ln()),
        floored,
    })
}

fn median(y: &[f64]) -> f64 {
    let mut v = y.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Deterministic parallel sum: fixed chunks, summed in order.
fn chunked_sum<F: Fn(usize) -> f64 + Sync>(n: usize, f: F) -> f64 {
    let partial: Vec<f64> = (0..n.div_ceil(SUM_CHUNK))
        .into_par_iter()
        .map(|c| {
            let end = ((c + 1) * SUM_CHUNK).min(n);
            (c * SUM_CHUNK..end).map(&f).sum::<f64>()
        })
        .collect();
    partial.iter().sum()
}

fn total_score(family: Family, rule: ScoreRule, theta: &[[f64; 2]], y: &[f64]) -> f64 {
    chunked_sum(y.len(), |i| {
        DistParams::new(family, theta[i][0], theta[i][1]).score(rule, y[i])
    })
}

fn total_score_at(
    family: Family,
    rule: ScoreRule,
    theta: &[[f64; 2]],
    step: &[[f64; 2]],
    scale: f64,
    y: &[f64],
) -> f64 {
    chunked_sum(y.len(), |i| {
        DistParams::new(
            family,
            theta[i][0] - scale * step[i][0],
            theta[i][1] - scale * step[i][1],
        )
        .score(rule, y[i])
    })
}

/// Finds `rho > 0` with `loss(rho) < loss(0)`: starts at 1, doubles while
/// improving, halves while not, then golden-section refines the bracket.
/// Returns `None` when no improving step above `min_step` exists.
fn line_search<F: Fn(f64) -> f64>(loss: F, base: f64, ls: &LineSearch) -> Option<(f64, f64)> {
    let mut cur = 1.0;
    let mut cur_loss = loss(cur);
    let (lo, hi);
    if cur_loss < base {
        let mut below = 0.0;
        let mut above = None;
        for _ in 0..ls.max_doublings {
            let next = 2.0 * cur;
            let next_loss = loss(next);
            if next_loss < cur_loss {
                below = cur;
                cur = next;
                cur_loss = next_loss;
            } else {
                above = Some(next);
                break;
            }
        }
        match above {
            Some(a) => {
                lo = below;
                hi = a;
            }
            None => return Some((cur, cur_loss)),
        }
    } else {
        loop {
            cur *= 0.5;
            if cur < ls.min_step {
                return None;
            }
            cur_loss = loss(cur);
            if cur_loss < base {
                break;
            }
        }
        lo = 0.0;
        hi = 2.0 * cur;
    }
    let tol = ls.rel_tol * cur;
    let (rho, rho_loss) = golden_section(&loss, lo, hi, tol, 200);
    if rho > 0.0 && rho_loss <= cur_loss {
        Some((rho, rho_loss))
    } else {
        Some((cur, cur_loss))
    }
}

/// Training output with the mean training score after each stage
/// (entry 0 is `theta0`).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NgbModel,
    pub mean_scores: Vec<f64>,
    pub theta0_floored: bool,
    /// Set when a stage failed to improve and training stopped early.
    pub stopped_early: bool,
}

/// Trains on a dataset.
pub fn train(data: &Dataset, config: &NgbConfig) -> Result<NgbModel> {
    Ok(train_detailed(data, config)?.model)
}

pub fn train_detailed(data: &Dataset, config: &NgbConfig) -> Result<TrainOutcome> {
    let mut out = train_matrix(data.x(), data.y(), data.feature_names(), config)?;
    out.model.layout = Some(data.layout().clone());
    Ok(out)
}

/// Trains on a bare feature matrix.
pub fn train_matrix(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    feature_names: Vec<String>,
    config: &NgbConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let m = x.nrows();
    if y.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: y.len(),
        });
    }
    if feature_names.len() != x.ncols() {
        return Err(Error::Dimension {
            expected: x.ncols(),
            got: feature_names.len(),
        });
    }
    let theta0 = fit_theta0(y, config.family, config.score)?;
    let (family, rule) = (config.family, config.score);
    let lr = config.learning_rate;

    let mut theta: Vec<[f64; 2]> = vec![[theta0.params.loc, theta0.params.log_scale]; m];
    let mut current = total_score(family, rule, &theta, y);
    if !current.is_finite() {
        return Err(Error::NonFiniteScore { stage: 0 });
    }
    let mut mean_scores = vec![current / m as f64];
    let sorted = SortedColumns::new(x);
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let tree_params = config.tree_params();
    let mut stages = Vec::with_capacity(config.n_stages);
    let mut stopped_early = false;

    for stage in 1..=config.n_stages {
        let grads: Vec<[f64; 2]> = theta
            .par_iter()
            .zip(y.par_iter())
            .map(|(t, &yi)| DistParams::new(family, t[0], t[1]).natural_grad(rule, yi))
            .collect();
        if grads.iter().any(|g| !g[0].is_finite() || !g[1].is_finite()) {
            return Err(Error::NonFiniteScore { stage });
        }
        let g_mu: Vec<f64> = grads.iter().map(|g| g[0]).collect();
        let g_scale: Vec<f64> = grads.iter().map(|g| g[1]).collect();
        let (mu_tree, scale_tree) = rayon::join(
            || fit_tree_presorted(x, &sorted, &g_mu, tree_params),
            || fit_tree_presorted(x, &sorted, &g_scale, tree_params),
        );
        let (mu_tree, scale_tree) = (mu_tree?, scale_tree?);
        let step: Vec<[f64; 2]> = rows
            .par_iter()
            .map(|r| [mu_tree.predict(r), scale_tree.predict(r)])
            .collect();

        let loss = |rho: f64| total_score_at(family, rule, &theta, &step, rho, y);
        let Some((mut rho, _)) = line_search(loss, current, &config.line_search) else {
            log::info!("stage {stage}: no improving step, stopping");
            stopped_early = true;
            break;
        };

        // The damped update must not raise the training score either.
        let mut next = total_score_at(family, rule, &theta, &step, lr * rho, y);
        while !(next <= current) && rho >= config.line_search.min_step {
            rho *= 0.5;
            next = total_score_at(family, rule, &theta, &step, lr * rho, y);
        }
        if !next.is_finite() {
            return Err(Error::NonFiniteScore { stage });
        }
        if !(next <= current) {
            log::info!("stage {stage}: damped step does not improve, stopping");
            stopped_early = true;
            break;
        }
        for (t, s) in theta.iter_mut().zip(&step) {
            t[0] -= lr * rho * s[0];
            t[1] -= lr * rho * s[1];
        }
        current = total_score(family, rule, &theta, y);
        if !current.is_finite() {
            return Err(Error::NonFiniteScore { stage });
        }
        mean_scores.push(current / m as f64);
        stages.push(Stage {
            mu_tree,
            scale_tree,
            rho,
        });
    }

    Ok(TrainOutcome {
        model: NgbModel {
            theta0: theta0.params,
            stages,
            config: *config,
            feature_names,
            layout: None,
        },
        mean_scores,
        theta0_floored: theta0.floored,
        stopped_early,
    })
}

impl NgbModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Raw `(loc, log_scale)` at `x` without a dimension check.
    pub fn predict_raw(&self, x: &[f64]) -> [f64; 2] {
        let lr = self.config.learning_rate;
        let mut t = [self.theta0.loc, self.theta0.log_scale];
        for s in &self.stages {
            t[0] -= lr * s.rho * s.mu_tree.predict(x);
            t[1] -= lr * s.rho * s.scale_tree.predict(x);
        }
        t
    }

    /// Predictive distribution at `x`.
    pub fn predict_dist(&self, x: &[f64]) -> Result<DistParams> {
        if x.len() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        let t = self.predict_raw(x);
        Ok(DistParams::new(self.theta0.family, t[0], t[1]))
    }

    /// Predictions for every row of a dataset.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<DistParams>> {
        if data.n_features() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: data.n_features(),
            });
        }
        let x = data.x();
        Ok((0..data.n_rows())
            .into_par_iter()
            .map(|i| {
                let r = x.row(i).to_vec();
                let t = self.predict_raw(&r);
                DistParams::new(self.theta0.family, t[0], t[1])
            })
            .collect())
    }

    /// Additive output of one head at `x`.
    pub fn head_value(&self, x: &[f64], head: Head) -> f64 {
        self.predict_raw(x)[head.index()]
    }

    /// Copy keeping only the first `n` stages.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            stages: self.stages[..n.min(self.stages.len())].to_vec(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let d = self.n_features();
        for (i, s) in self.stages.iter().enumerate() {
            if !(s.rho >= 0.0) {
                return Err(Error::Data(format!("stage {i} has negative rho")));
            }
            for t in [&s.mu_tree, &s.scale_tree] {
                t.validate()?;
                if t.n_features != d {
                    return Err(Error::Dimension {
                        expected: d,
                        got: t.n_features,
                    });
                }
            }
        }
        if let Some(l) = &self.layout {
            if l.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: l.len(),
                });
            }
        }
        Ok(())
    }
}

/// Mean score on `data` after 0, 1, ..., N stages.
pub fn staged_scores(model: &NgbModel, data: &Dataset) -> Result<Vec<f64>> {
    staged_scores_matrix(model, data.x(), data.y())
}

pub fn staged_scores_matrix(model: &NgbModel, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<Vec<f64>> {
    if x.ncols() != model.n_features() {
        return Err(Error::Dimension {
            expected: model.n_features(),
            got: x.ncols(),
        });
    }
    let m = y.len();
    let family = model.theta0.family;
    let rule = model.config.score;
    let lr = model.config.learning_rate;
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut theta = vec![[model.theta0.loc, model.theta0.log_scale]; m];
    let mut out = vec![total_score(family, rule, &theta, y) / m as f64];
    for s in &model.stages {
        theta.par_iter_mut().zip(rows.par_iter()).for_each(|(t, r)| {
            t[0] -= lr * s.rho * s.mu_tree.predict(r);
            t[1] -= lr * s.rho * s.scale_tree.predict(r);
        });
        out.push(total_score(family, rule, &theta, y) / m as f64);
    }
    Ok(out)
}
