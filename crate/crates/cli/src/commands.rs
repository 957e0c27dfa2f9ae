//! Subcommand implementations. Each one resolves its inputs from the run
//! configuration, does its work and writes its artifacts through a
//! [`Reporter`].

use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};
use solarprob::dataset::{parse_timestamp, pearson_matrix, Dataset, SplitSpec};
use solarprob::explain::{
    explain_dataset, force_record, interactions_dataset, write_explanations_csv, write_interactions_csv,
    ForceRecord, GlobalImportance,
};
use solarprob::metrics::EvalReport;
use solarprob::ngboost::{Head, NgbModel};
use solarprob::{Error, Result};

use crate::bench::{run_bench, BenchOutcome};
use crate::config::{ModelKind, RunConfig};
use crate::forecast::{recursive_forecast, Forecaster, ModelFile};
use crate::grid::{grid_cells, grid_search, leaderboard, CellResult};
use crate::pipeline::{build_dataset, evaluate_window, load_source, train_model, train_rows, ModelSpec, Source};
use crate::prune::{prune_and_retrain, spaced_rows, PruneOutcome};
use crate::report::{write_table, Reporter};

/// Process exit status for an error: 1 for invalid arguments or
/// configuration, 2 for data and I/O problems, 3 for numerical failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Domain(_) => 1,
        Error::Data(_) | Error::Dimension { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 2,
        Error::Numerical(_) | Error::NonFiniteScore { .. } => 3,
    }
}

/// Payload of a model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub split: String,
    pub model: ModelFile,
}

#[derive(Debug, Clone, Deserialize)]
struct StampedModel {
    model: ModelFile,
}

pub fn load_model(path: &Path) -> Result<Forecaster> {
    let text = std::fs::read_to_string(path)?;
    let file: StampedModel = serde_json::from_str(&text)?;
    Forecaster::from_file(file.model)
}

fn save_model(rep: &Reporter, name: &str, model: &Forecaster, split: &str) -> Result<PathBuf> {
    rep.json(
        name,
        &ModelArtifact {
            split: split.to_string(),
            model: model.to_file(),
        },
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Loaded inputs shared by most commands.
pub struct Context {
    pub cfg: RunConfig,
    pub source: Source,
    pub data: Dataset,
    pub rep: Reporter,
}

impl Context {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let source = load_source(cfg)?;
        let data = build_dataset(&source, &cfg.lags)?;
        let rep = Reporter::new(&cfg.out_dir, cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            source,
            data,
            rep,
        })
    }

    pub fn split(&self, index: usize) -> Result<(String, SplitSpec)> {
        let sc = self
            .cfg
            .splits
            .get(index)
            .ok_or_else(|| Error::Domain(format!("no split {index}; {} configured", self.cfg.splits.len())))?;
        Ok((sc.label(), sc.spec()?))
    }

    fn write_eval(&self, prefix: &str, report: &EvalReport) -> Result<()> {
        self.rep.json(&format!("{prefix}.json"), report)?;
        self.rep.csv(&format!("{prefix}.csv"), |w| report.write_csv(w))?;
        if let Some(pit) = &report.pit {
            self.rep.csv(&format!("{prefix}_pit.csv"), |w| pit.write_csv(w))?;
        }
        Ok(())
    }
}

/// `generate`: writes the input series and its correlation matrix.
pub fn generate(cfg: &RunConfig) -> Result<()> {
    let ctx = Context::new(cfg)?;
    ctx.rep.csv("series.csv", |w| ctx.source.series.write_csv(w))?;
    let p = pearson_matrix(&ctx.data)?;
    let mut header = vec!["feature"];
    header.extend(p.names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = p
        .names
        .iter()
        .zip(&p.values)
        .map(|(n, row)| std::iter::once(n.clone()).chain(row.iter().map(|v| v.to_string())).collect())
        .collect();
    ctx.rep.csv("pearson.csv", |w| write_table(w, &header, &rows))?;
    Ok(())
}

/// `train`: fits the configured model on the training window of a split.
pub fn train(cfg: &RunConfig, split: usize) -> Result<PathBuf> {
    let ctx = Context::new(cfg)?;
    let (label, spec) = ctx.split(split)?;
    let train = train_rows(&ctx.data, &spec)?;
    let trained = train_model(&ModelSpec::from_config(cfg), &train, cfg.seed()?)?;
    let rows: Vec<Vec<String>> = trained
        .trace
        .iter()
        .enumerate()
        .map(|(i, v)| vec![i.to_string(), v.to_string()])
        .collect();
    ctx.rep.csv("train_trace.csv", |w| write_table(w, &["step", "objective"], &rows))?;
    ctx.rep.csv("training_time.csv", |w| {
        write_table(
            w,
            &["model", "split", "seconds"],
            &[vec![cfg.model.to_string(), label.clone(), trained.seconds.to_string()]],
        )
    })?;
    save_model(&ctx.rep, "model.json", &trained.model, &label)
}

fn require_model(path: Option<&Path>) -> Result<Forecaster> {
    let path = path.ok_or_else(|| Error::Domain("--model <path> is required".into()))?;
    load_model(path)
}

/// Default forecast origin: `origin_hour` on the day before the split's test window.
pub fn default_origin(cfg: &RunConfig, spec: &SplitSpec) -> Result<NaiveDateTime> {
    let t = NaiveTime::from_hms_opt(cfg.forecast.origin_hour, 0, 0)
        .ok_or_else(|| Error::Domain("invalid origin hour".into()))?;
    Ok((spec.test_start.date() - Duration::days(1)).and_time(t))
}

/// `forecast`: one recursive forecast from an origin.
pub fn forecast(cfg: &RunConfig, model: Option<&Path>, split: usize, origin: Option<&str>) -> Result<()> {
    let ctx = Context::new(cfg)?;
    let model = require_model(model)?;
    let origin = match origin {
        Some(s) => parse_timestamp(s)?,
        None => default_origin(cfg, &ctx.split(split)?.1)?,
    };
    let f = recursive_forecast(
        &model,
        &ctx.source.series,
        origin,
        i64::from(cfg.forecast.horizon_hours) * 60,
        &cfg.coverages(),
    )?;
    ctx.rep.csv("forecast.csv", |w| f.write_csv(w))?;
    if let Some(report) = f.evaluate(model.kind(), cfg.pit_bins)? {
        ctx.write_eval("forecast_eval", &report)?;
    }
    Ok(())
}

/// `evaluate`: rolling day-ahead forecasts over a split's test window.
pub fn evaluate(cfg: &RunConfig, model: Option<&Path>, split: usize) -> Result<Option<EvalReport>> {
    let ctx = Context::new(cfg)?;
    let model = require_model(model)?;
    let (_, spec) = ctx.split(split)?;
    let ev = evaluate_window(&model, cfg, &ctx.source.series, spec.test_start, spec.test_end)?;
    ctx.rep.csv("forecasts.csv", |w| ev.forecast.write_csv(w))?;
    if let Some(r) = &ev.report {
        ctx.write_eval("eval", r)?;
    }
    Ok(ev.report)
}

#[derive(Serialize)]
struct ExplainSummary {
    heads: Vec<HeadSummary>,
}

#[derive(Serialize)]
struct HeadSummary {
    head: Head,
    base_value: f64,
    importance: GlobalImportance,
    force: Vec<ForceRecord>,
}

fn ngboost_of(model: Forecaster) -> Result<NgbModel> {
    match model {
        Forecaster::Ngboost(m) => Ok(m),
        other => Err(Error::Domain(format!("explanations need an ngboost model, got {}", other.kind()))),
    }
}

/// `explain`: SHAP values, importances, force records and interactions on
/// rows of a split's test window.
pub fn explain(cfg: &RunConfig, model: Option<&Path>, split: usize) -> Result<()> {
    let ctx = Context::new(cfg)?;
    let model = ngboost_of(require_model(model)?)?;
    let (_, spec) = ctx.split(split)?;
    let test = ctx.data.between(&spec.test_start, &spec.test_end);
    if test.n_rows() == 0 {
        return Err(Error::Data("the test window has no rows".into()));
    }
    let layout = model.layout.clone().ok_or_else(|| Error::Data("model has no layout".into()))?;
    let cols: Vec<usize> = layout
        .names()
        .iter()
        .map(|n| {
            test.feature_names()
                .iter()
                .position(|k| k == n)
                .ok_or_else(|| Error::Data(format!("feature {n} is not in the data")))
        })
        .collect::<Result<_>>()?;
    let rows = spaced_rows(&test.select_features(&cols)?, cfg.explain.max_rows);
    let names = model.feature_names.clone();
    let mut heads = Vec::new();
    for head in Head::ALL {
        let expl = explain_dataset(&model, &rows, head)?;
        let indexed: Vec<_> = expl.iter().cloned().enumerate().collect();
        ctx.rep
            .csv(&format!("shap_{head}.csv"), |w| write_explanations_csv(w, &names, &indexed))?;
        let importance = GlobalImportance::from_explanations(head, &names, &expl);
        let imp_rows: Vec<Vec<String>> = importance
            .entries
            .iter()
            .map(|e| vec![e.name.clone(), e.mean_abs_phi.to_string()])
            .collect();
        ctx.rep
            .csv(&format!("importance_{head}.csv"), |w| write_table(w, &["feature", "mean_abs_phi"], &imp_rows))?;
        let k = cfg.explain.interaction_rows.min(rows.n_rows());
        let inter_rows = spaced_rows(&rows, k);
        let matrices: Vec<_> = interactions_dataset(&model, &inter_rows, head)?.into_iter().enumerate().collect();
        ctx.rep
            .csv(&format!("interactions_{head}.csv"), |w| write_interactions_csv(w, &names, &matrices))?;
        heads.push(HeadSummary {
            head,
            base_value: expl.first().map_or(0.0, |e| e.base_value),
            force: expl.iter().take(10).map(|e| force_record(e, &names)).collect(),
            importance,
        });
    }
    ctx.rep.json("explain.json", &ExplainSummary { heads })?;
    Ok(())
}

#[derive(Serialize)]
struct GridDocument<'a> {
    model: ModelKind,
    leaderboard: Vec<&'a CellResult>,
}

/// `grid`: every hyperparameter combination on every split.
pub fn grid(cfg: &RunConfig) -> Result<Vec<CellResult>> {
    let ctx = Context::new(cfg)?;
    let cells = grid_cells(cfg)?;
    let results = grid_search(cfg, &cells, &ctx.data, &ctx.source.series)?;
    let board = leaderboard(&results, cfg.model);
    let rows: Vec<Vec<String>> = board
        .iter()
        .enumerate()
        .map(|(rank, c)| {
            vec![
                (rank + 1).to_string(),
                c.index.to_string(),
                c.label.clone(),
                fmt_opt(c.rank_metric(cfg.model)),
                fmt_opt(c.mean_mae),
                fmt_opt(c.mean_crps),
                fmt_opt(c.mean_cwc),
                c.splits.iter().filter(|s| s.error.is_some()).count().to_string(),
            ]
        })
        .collect();
    ctx.rep.csv("leaderboard.csv", |w| {
        write_table(
            w,
            &["rank", "cell", "params", "rank_metric", "mean_mae", "mean_crps", "mean_cwc", "failed_splits"],
            &rows,
        )
    })?;
    let mut cell_rows = Vec::new();
    let mut time_rows = Vec::new();
    for c in &results {
        for s in &c.splits {
            let r = s.report.as_ref();
            cell_rows.push(vec![
                c.index.to_string(),
                c.label.clone(),
                s.split.clone(),
                s.seed.to_string(),
                fmt_opt(r.and_then(|r| r.mae)),
                fmt_opt(r.and_then(|r| r.rmse)),
                fmt_opt(r.and_then(|r| r.mbe)),
                fmt_opt(r.and_then(|r| r.mean_crps)),
                fmt_opt(s.cwc),
                s.error.clone().unwrap_or_default(),
            ]);
            time_rows.push(vec![c.index.to_string(), s.split.clone(), s.train_seconds.to_string()]);
        }
    }
    ctx.rep.csv("grid_cells.csv", |w| {
        write_table(
            w,
            &["cell", "params", "split", "seed", "mae", "rmse", "mbe", "crps", "cwc", "error"],
            &cell_rows,
        )
    })?;
    // Wall-clock times live in their own file so the other outputs are reproducible.
    ctx.rep
        .csv("training_time.csv", |w| write_table(w, &["cell", "split", "seconds"], &time_rows))?;
    ctx.rep.json(
        "grid.json",
        &GridDocument {
            model: cfg.model,
            leaderboard: board.clone(),
        },
    )?;
    Ok(results)
}

/// `prune`: SHAP-based feature pruning with retraining on one split.
pub fn prune(cfg: &RunConfig, model: Option<&Path>, split: usize) -> Result<PruneOutcome> {
    let ctx = Context::new(cfg)?;
    let (label, spec) = ctx.split(split)?;
    let train = train_rows(&ctx.data, &spec)?;
    let base = match model {
        Some(p) => ngboost_of(load_model(p)?)?,
        None => ngboost_of(train_model(&ModelSpec::Ngboost(cfg.ngboost), &train, cfg.seed()?)?.model)?,
    };
    if base.feature_names != train.feature_names() {
        return Err(Error::Data("model features differ from the configured feature set".into()));
    }
    let explain_rows = spaced_rows(&train, cfg.prune.max_explain_rows);
    let series = &ctx.source.series;
    let out = prune_and_retrain(&base, &train, &explain_rows, cfg.prune.threshold, |m| {
        let f = Forecaster::ngboost(m.clone())?;
        evaluate_window(&f, cfg, series, spec.test_start, spec.test_end)?
            .report
            .ok_or_else(|| Error::Data("no realized values in the test window".into()))
    })?;
    ctx.rep.csv("prune.csv", |w| write_table(w, &["metric", "all_features", "pruned"], &out.table()))?;
    let share_rows: Vec<Vec<String>> = out
        .shares
        .iter()
        .map(|s| vec![s.feature.clone(), s.share.to_string(), (s.kept as u8).to_string()])
        .collect();
    ctx.rep
        .csv("prune_features.csv", |w| write_table(w, &["feature", "share", "kept"], &share_rows))?;
    ctx.rep.json("prune.json", &out)?;
    save_model(&ctx.rep, "model_pruned.json", &Forecaster::ngboost(out.model.clone())?, &label)?;
    Ok(out)
}

/// `bench`: all models on all splits plus the direction checks.
pub fn bench(cfg: &RunConfig) -> Result<BenchOutcome> {
    let ctx = Context::new(cfg)?;
    let out = run_bench(cfg, &ctx.data, &ctx.source.series)?;
    let mut rows = Vec::new();
    let mut times = Vec::new();
    for r in &out.rows {
        let lead = vec![
            r.split.clone(),
            r.model.to_string(),
            r.seed.to_string(),
            fmt_opt(r.report.mae),
            fmt_opt(r.report.rmse),
            fmt_opt(r.report.mbe),
            fmt_opt(r.report.mean_crps),
            fmt_opt(r.cwc),
        ];
        if r.report.coverage.is_empty() {
            rows.push(lead.iter().cloned().chain(["".into(), "".into(), "".into()]).collect());
        }
        for c in &r.report.coverage {
            rows.push(
                lead.iter()
                    .cloned()
                    .chain([c.nominal.to_string(), c.picp.to_string(), c.pinaw.to_string()])
                    .collect(),
            );
        }
        times.push(vec![r.split.clone(), r.model.to_string(), r.train_seconds.to_string()]);
    }
    ctx.rep.csv("bench.csv", |w| {
        write_table(
            w,
            &["split", "model", "seed", "mae", "rmse", "mbe", "crps", "cwc", "nominal", "picp", "pinaw"],
            &rows,
        )
    })?;
    let means: Vec<Vec<String>> = out
        .means
        .iter()
        .map(|m| {
            vec![
                m.model.to_string(),
                fmt_opt(m.mae),
                fmt_opt(m.rmse),
                fmt_opt(m.crps),
                fmt_opt(m.picp),
                fmt_opt(m.pinaw),
            ]
        })
        .collect();
    ctx.rep.csv("bench_summary.csv", |w| {
        write_table(w, &["model", "mae", "rmse", "crps", "picp", "pinaw"], &means)
    })?;
    let checks: Vec<Vec<String>> = out
        .checks
        .iter()
        .map(|c| vec![c.name.clone(), c.lhs.to_string(), c.rhs.to_string(), c.passed.to_string()])
        .collect();
    ctx.rep
        .csv("bench_checks.csv", |w| write_table(w, &["check", "lhs", "rhs", "passed"], &checks))?;
    let time_means: Vec<Vec<String>> = out
        .means
        .iter()
        .map(|m| vec!["mean".into(), m.model.to_string(), m.train_seconds.to_string()])
        .collect();
    times.extend(time_means);
    ctx.rep
        .csv("training_time.csv", |w| write_table(w, &["split", "model", "seconds"], &times))?;
    ctx.rep.json("bench.json", &out)?;
    Ok(out)
}
