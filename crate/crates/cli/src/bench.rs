//! Benchmark: persistence, NGBoost, GP and LUBE trained and evaluated with
//! day-ahead forecasts on every configured split.

use serde::Serialize;
use solarprob::baselines::{cwc, CostMode};
use solarprob::dataset::{Dataset, RawSeries};
use solarprob::metrics::EvalReport;
use solarprob::{Error, Result};

use crate::config::{ModelKind, RunConfig};
use crate::pipeline::{derive_seed, evaluate_window, train_model, train_rows, ModelSpec};

pub const BENCH_MODELS: [ModelKind; 4] = [
    ModelKind::Persistence,
    ModelKind::Ngboost,
    ModelKind::Gp,
    ModelKind::Lube,
];

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub split: String,
    pub model: ModelKind,
    pub seed: u64,
    pub report: EvalReport,
    /// LUBE only: evaluation-mode CWC.
    pub cwc: Option<f64>,
    #[serde(skip)]
    pub train_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelMeans {
    pub model: ModelKind,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub crps: Option<f64>,
    /// PICP at the first configured coverage (LUBE: its own level).
    pub picp: Option<f64>,
    pub pinaw: Option<f64>,
    #[serde(skip)]
    pub train_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectionCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchOutcome {
    pub rows: Vec<BenchRow>,
    pub means: Vec<ModelMeans>,
    pub checks: Vec<DirectionCheck>,
}

fn spec_for(kind: ModelKind, cfg: &RunConfig) -> ModelSpec {
    match kind {
        ModelKind::Ngboost => ModelSpec::Ngboost(cfg.ngboost),
        ModelKind::Gp => ModelSpec::Gp(cfg.gp.clone()),
        ModelKind::Lube => ModelSpec::Lube(cfg.lube.clone()),
        ModelKind::Persistence => ModelSpec::Persistence,
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs all models on all splits. Any failure aborts the benchmark.
pub fn run_bench(cfg: &RunConfig, data: &Dataset, series: &RawSeries) -> Result<BenchOutcome> {
    let seed = cfg.seed()?;
    let mut rows = Vec::new();
    for (s, (split, sc)) in cfg.split_specs()?.iter().zip(&cfg.splits).enumerate() {
        let train = train_rows(data, split)?;
        for (m, &kind) in BENCH_MODELS.iter().enumerate() {
            let task_seed = derive_seed(seed, (s * BENCH_MODELS.len() + m) as u64);
            let spec = spec_for(kind, cfg);
            let trained = train_model(&spec, &train, task_seed)?;
            let ev = evaluate_window(&trained.model, cfg, series, split.test_start, split.test_end)?;
            let report = ev
                .report
                .ok_or_else(|| Error::Data(format!("split {} has no realized values", sc.label())))?;
            let cwc = match &spec {
                ModelSpec::Lube(l) => {
                    let c = &report.coverage[0];
                    Some(cwc(c.picp, c.pinaw, l.confidence, l.eta, CostMode::Evaluation))
                }
                _ => None,
            };
            log::info!("{} {}: mae={:?} crps={:?}", sc.label(), kind, report.mae, report.mean_crps);
            rows.push(BenchRow {
                split: sc.label(),
                model: kind,
                seed: task_seed,
                report,
                cwc,
                train_seconds: trained.seconds,
            });
        }
    }
    let means: Vec<ModelMeans> = BENCH_MODELS
        .iter()
        .map(|&kind| {
            let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.model == kind).collect();
            let collect = |f: &dyn Fn(&EvalReport) -> Option<f64>| -> Option<f64> {
                let v: Option<Vec<f64>> = sel.iter().map(|r| f(&r.report)).collect();
                v.and_then(|v| mean(&v))
            };
            ModelMeans {
                model: kind,
                mae: collect(&|r| r.mae),
                rmse: collect(&|r| r.rmse),
                crps: collect(&|r| r.mean_crps),
                picp: collect(&|r| r.coverage.first().map(|c| c.picp)),
                pinaw: collect(&|r| r.coverage.first().map(|c| c.pinaw)),
                train_seconds: mean(&sel.iter().map(|r| r.train_seconds).collect::<Vec<_>>()).unwrap_or(0.0),
            }
        })
        .collect();
    let get = |kind: ModelKind, f: fn(&ModelMeans) -> Option<f64>| {
        means.iter().find(|m| m.model == kind).and_then(f).unwrap_or(f64::NAN)
    };
    let check = |name: &str, lhs: f64, rhs: f64| DirectionCheck {
        name: name.into(),
        lhs,
        rhs,
        passed: lhs < rhs,
    };
    let checks = vec![
        check(
            "ngboost_mae_below_persistence",
            get(ModelKind::Ngboost, |m| m.mae),
            get(ModelKind::Persistence, |m| m.mae),
        ),
        check(
            "ngboost_crps_below_gp",
            get(ModelKind::Ngboost, |m| m.crps),
            get(ModelKind::Gp, |m| m.crps),
        ),
    ];
    Ok(BenchOutcome { rows, means, checks })
}
