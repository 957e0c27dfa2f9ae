//! Exhaustive hyperparameter search over every configured split.
//!
//! Each (cell, split) pair is an independent task seeded from the run seed
//! and its own indices, so results do not depend on execution order.
//! Failing tasks are recorded, not fatal.

use rayon::prelude::*;
use serde::Serialize;
use solarprob::baselines::{cwc, CostMode};
use solarprob::dataset::{Dataset, RawSeries, SplitSpec};
use solarprob::metrics::EvalReport;
use solarprob::ngboost::NgbConfig;
use solarprob::{Error, Result};

use crate::config::{GpSection, LubeSection, ModelKind, RunConfig};
use crate::pipeline::{derive_seed, evaluate_window, train_model, train_rows, ModelSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub label: String,
    pub spec: ModelSpec,
}

/// All hyperparameter combinations for the configured model kind.
pub fn grid_cells(cfg: &RunConfig) -> Result<Vec<Cell>> {
    let g = &cfg.grid;
    let mut specs: Vec<(String, ModelSpec)> = Vec::new();
    match cfg.model {
        ModelKind::Ngboost => {
            for &max_depth in &g.depths {
                for &learning_rate in &g.learning_rates {
                    for &n_stages in &g.n_stages {
                        for &family in &g.families {
                            for &score in &g.scores {
                                let c = NgbConfig {
                                    max_depth,
                                    learning_rate,
                                    n_stages,
                                    family,
                                    score,
                                    ..cfg.ngboost
                                };
                                c.validate()?;
                                specs.push((
                                    format!("depth={max_depth};lr={learning_rate};stages={n_stages};family={family};score={score}"),
                                    ModelSpec::Ngboost(c),
                                ));
                            }
                        }
                    }
                }
            }
        }
        ModelKind::Lube => {
            for &width in &g.lube_widths {
                for &eta in &g.lube_etas {
                    specs.push((
                        format!("width={width};eta={eta}"),
                        ModelSpec::Lube(LubeSection {
                            width,
                            eta,
                            ..cfg.lube.clone()
                        }),
                    ));
                }
            }
        }
        ModelKind::Gp => {
            for &kernel in &g.gp_kernels {
                specs.push((
                    format!("kernel={kernel}"),
                    ModelSpec::Gp(GpSection {
                        kernel,
                        ..cfg.gp.clone()
                    }),
                ));
            }
        }
        ModelKind::Persistence => specs.push(("persistence".into(), ModelSpec::Persistence)),
    }
    if specs.is_empty() {
        return Err(Error::Domain("the grid is empty".into()));
    }
    Ok(specs
        .into_iter()
        .enumerate()
        .map(|(index, (label, spec))| Cell { index, label, spec })
        .collect())
}

/// Outcome of one cell on one split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitOutcome {
    pub split: String,
    pub seed: u64,
    pub report: Option<EvalReport>,
    /// LUBE only: evaluation-mode CWC.
    pub cwc: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub index: usize,
    pub label: String,
    pub splits: Vec<SplitOutcome>,
    pub mean_mae: Option<f64>,
    pub mean_crps: Option<f64>,
    pub mean_cwc: Option<f64>,
    #[serde(skip)]
    pub mean_train_seconds: f64,
}

impl CellResult {
    /// The ranking metric: mean CWC for LUBE, mean CRPS for distributional
    /// models, mean MAE otherwise. `None` if any split failed.
    pub fn rank_metric(&self, kind: ModelKind) -> Option<f64> {
        match kind {
            ModelKind::Lube => self.mean_cwc,
            ModelKind::Ngboost | ModelKind::Gp => self.mean_crps,
            ModelKind::Persistence => self.mean_mae,
        }
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn run_task(
    cfg: &RunConfig,
    cell: &Cell,
    data: &Dataset,
    series: &RawSeries,
    split: &SplitSpec,
    seed: u64,
) -> Result<(EvalReport, Option<f64>, f64)> {
    let train = train_rows(data, split)?;
    let trained = train_model(&cell.spec, &train, seed)?;
    let ev = evaluate_window(&trained.model, cfg, series, split.test_start, split.test_end)?;
    let report = ev
        .report
        .ok_or_else(|| Error::Data("no realized values in the test window".into()))?;
    let cwc_eval = match &cell.spec {
        ModelSpec::Lube(l) => {
            let c = &report.coverage[0];
            Some(cwc(c.picp, c.pinaw, l.confidence, l.eta, CostMode::Evaluation))
        }
        _ => None,
    };
    Ok((report, cwc_eval, trained.seconds))
}

/// Trains and evaluates every cell on every split.
pub fn grid_search(cfg: &RunConfig, cells: &[Cell], data: &Dataset, series: &RawSeries) -> Result<Vec<CellResult>> {
    let seed = cfg.seed()?;
    let splits = cfg.split_specs()?;
    let labels: Vec<String> = cfg.splits.iter().map(|s| s.label()).collect();
    let n_splits = splits.len();
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..n_splits).map(move |s| (c, s)))
        .collect();
    let outcomes: Vec<SplitOutcome> = tasks
        .par_iter()
        .map(|&(c, s)| {
            let task_seed = derive_seed(seed, (cells[c].index * n_splits + s) as u64);
            match run_task(cfg, &cells[c], data, series, &splits[s], task_seed) {
                Ok((report, cwc, secs)) => SplitOutcome {
                    split: labels[s].clone(),
                    seed: task_seed,
                    report: Some(report),
                    cwc,
                    error: None,
                    train_seconds: secs,
                },
                Err(e) => {
                    log::warn!("cell {} on split {}: {e}", cells[c].label, labels[s]);
                    SplitOutcome {
                        split: labels[s].clone(),
                        seed: task_seed,
                        report: None,
                        cwc: None,
                        error: Some(e.to_string()),
                        train_seconds: 0.0,
                    }
                }
            }
        })
        .collect();
    let mut it = outcomes.into_iter();
    Ok(cells
        .iter()
        .map(|cell| {
            let splits: Vec<SplitOutcome> = it.by_ref().take(n_splits).collect();
            let field = |f: fn(&EvalReport) -> Option<f64>| mean_of(splits.iter().map(|s| s.report.as_ref().and_then(f)));
            CellResult {
                index: cell.index,
                label: cell.label.clone(),
                mean_mae: field(|r| r.mae),
                mean_crps: field(|r| r.mean_crps),
                mean_cwc: mean_of(splits.iter().map(|s| s.cwc)),
                mean_train_seconds: splits.iter().map(|s| s.train_seconds).sum::<f64>() / n_splits as f64,
                splits,
            }
        })
        .collect())
}

/// Cells ordered best first. Cells with a failed split come last; ties are
/// broken by shorter training time, then by cell index.
pub fn leaderboard(results: &[CellResult], kind: ModelKind) -> Vec<&CellResult> {
    let mut order: Vec<&CellResult> = results.iter().collect();
    order.sort_by(|a, b| {
        let key = |r: &CellResult| r.rank_metric(kind).unwrap_or(f64::INFINITY);
        key(a)
            .total_cmp(&key(b))
            .then(a.mean_train_seconds.total_cmp(&b.mean_train_seconds))
            .then(a.index.cmp(&b.index))
    });
    order
}
