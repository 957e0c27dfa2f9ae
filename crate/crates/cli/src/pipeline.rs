//! Shared steps of every command: loading the series, building the feature
//! matrix, splitting and training.

use std::time::Instant;

use chrono::NaiveDateTime;
use solarprob::baselines::{gp_fit, lube_train, KernelSpec};
use solarprob::dataset::{build_lagged, is_day_time, Dataset, RawSeries, SplitSpec};
use solarprob::metrics::EvalReport;
use solarprob::ngboost::{train_detailed, NgbConfig};
use solarprob::{Error, Result};

use crate::config::{ModelKind, RunConfig};
use crate::forecast::{day_ahead, DayAheadSpec, ForecastSeries, Forecaster};
use crate::synthetic::generate_synthetic;

/// Series plus the nominal power used to scale it.
#[derive(Debug, Clone)]
pub struct Source {
    pub series: RawSeries,
    pub nominal_power: f64,
}

pub fn load_source(cfg: &RunConfig) -> Result<Source> {
    let (series, default_nominal) = match &cfg.data.path {
        Some(path) => {
            let s = RawSeries::read_csv_path(path)?;
            let max = s.power().iter().copied().filter(|p| p.is_finite()).fold(0.0, f64::max);
            (s, max)
        }
        None => {
            // All randomness of a run derives from the run seed.
            let mut spec = cfg.data.synthetic.clone();
            spec.seed = cfg.seed()?;
            (generate_synthetic(&spec)?, spec.nominal_power)
        }
    };
    let nominal_power = cfg.data.nominal_power.unwrap_or(default_nominal);
    if !(nominal_power > 0.0) {
        return Err(Error::Data("nominal power must be positive".into()));
    }
    Ok(Source { series, nominal_power })
}

/// Scaled feature matrix over day-time rows. Lags are built on the full
/// series first, so early-morning rows see the (zero) night values.
pub fn build_dataset(source: &Source, lags: &[usize]) -> Result<Dataset> {
    let full = build_lagged(&source.series, lags)?.with_nominal_power(source.nominal_power)?;
    let day: Vec<usize> = (0..full.n_rows()).filter(|&i| is_day_time(&full.timestamps()[i])).collect();
    if day.is_empty() {
        return Err(Error::Data("no day-time rows".into()));
    }
    full.select_rows(&day).scaled()
}

/// Timing and diagnostics of one training run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Forecaster,
    pub seconds: f64,
    /// NGBoost: mean training score per stage; GP: NLML trace; LUBE: best CWC trace.
    pub trace: Vec<f64>,
}

/// Model hyperparameters independent of the data, as used by one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Ngboost(NgbConfig),
    Gp(crate::config::GpSection),
    Lube(crate::config::LubeSection),
    Persistence,
}

impl ModelSpec {
    pub fn from_config(cfg: &RunConfig) -> Self {
        match cfg.model {
            ModelKind::Ngboost => ModelSpec::Ngboost(cfg.ngboost),
            ModelKind::Gp => ModelSpec::Gp(cfg.gp.clone()),
            ModelKind::Lube => ModelSpec::Lube(cfg.lube.clone()),
            ModelKind::Persistence => ModelSpec::Persistence,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Ngboost(_) => ModelKind::Ngboost,
            ModelSpec::Gp(_) => ModelKind::Gp,
            ModelSpec::Lube(_) => ModelKind::Lube,
            ModelSpec::Persistence => ModelKind::Persistence,
        }
    }
}

/// The last `n` rows (all if fewer).
fn most_recent(data: &Dataset, n: usize) -> Dataset {
    let start = data.n_rows().saturating_sub(n);
    data.select_rows(&(start..data.n_rows()).collect::<Vec<_>>())
}

pub fn train_model(spec: &ModelSpec, train: &Dataset, seed: u64) -> Result<Trained> {
    let clock = Instant::now();
    let layout = train.layout().clone();
    let (model, trace) = match spec {
        ModelSpec::Ngboost(c) => {
            let out = train_detailed(train, c)?;
            (Forecaster::ngboost(out.model)?, out.mean_scores)
        }
        ModelSpec::Gp(g) => {
            let init = KernelSpec::default_for(g.kernel, train.n_features());
            let out = gp_fit(train.x(), train.y(), &init, &g.settings())?;
            (
                Forecaster::Gp {
                    layout,
                    model: out.model,
                },
                out.nlml_trace,
            )
        }
        ModelSpec::Lube(l) => {
            let sub = most_recent(train, l.max_rows);
            let out = lube_train(sub.x(), sub.y(), &l.settings(seed))?;
            (Forecaster::Lube { layout, net: out.net }, out.best_trace)
        }
        ModelSpec::Persistence => (Forecaster::Persistence { layout }, Vec::new()),
    };
    Ok(Trained {
        model,
        seconds: clock.elapsed().as_secs_f64(),
        trace,
    })
}

/// Day-ahead forecasts over a test window and their metrics.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub forecast: ForecastSeries,
    pub report: Option<EvalReport>,
}

pub fn evaluate_window(
    model: &Forecaster,
    cfg: &RunConfig,
    series: &RawSeries,
    start: NaiveDateTime,
    end: NaiveDateTime,
) -> Result<Evaluated> {
    let spec = DayAheadSpec {
        origin_hour: cfg.forecast.origin_hour,
        horizon_hours: cfg.forecast.horizon_hours,
    };
    let forecast = day_ahead(model, series, start, end, spec, &cfg.coverages())?;
    let report = forecast.evaluate(model.kind(), cfg.pit_bins)?;
    Ok(Evaluated { forecast, report })
}

/// Training rows of a split.
pub fn train_rows(data: &Dataset, split: &SplitSpec) -> Result<Dataset> {
    let d = data.between(&split.train_start, &split.train_end);
    if d.n_rows() == 0 {
        return Err(Error::Data("split has no training rows".into()));
    }
    Ok(d)
}

/// Seed for the `index`-th independent task of a run.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // SplitMix64 finalizer: decorrelates consecutive indices.
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
