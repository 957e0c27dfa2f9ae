//! Trained forecasters, recursive multi-step forecasting and rolling
//! day-ahead evaluation.
//!
//! All values handled here are in model units: fractions of the nominal
//! power when the training data was scaled, MW otherwise.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDateTime, NaiveTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use solarprob::baselines::{gp_predict, persistence_forecast_known, GpModel, GpModelFile, LubeNet};
use solarprob::dataset::{format_timestamp, is_day_time, FeatureLayout, RawSeries, STEP_MINUTES};
use solarprob::dists::DistParams;
use solarprob::metrics::EvalReport;
use solarprob::ngboost::NgbModel;
use solarprob::{Error, Result};

use crate::config::ModelKind;

/// One model output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    Dist(DistParams),
    Interval { lower: f64, upper: f64 },
    Point(f64),
}

impl Prediction {
    /// Location for distributions, midpoint for intervals.
    pub fn point(&self) -> f64 {
        match *self {
            Prediction::Dist(d) => d.loc,
            Prediction::Interval { lower, upper } => 0.5 * (lower + upper),
            Prediction::Point(p) => p,
        }
    }
}

/// A trained model ready to forecast.
#[derive(Debug, Clone)]
pub enum Forecaster {
    Ngboost(NgbModel),
    Gp { layout: FeatureLayout, model: GpModel },
    Lube { layout: FeatureLayout, net: LubeNet },
    /// Same time of day on the latest fully observed earlier day.
    Persistence { layout: FeatureLayout },
}

/// Serialized form of a [`Forecaster`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelFile {
    Ngboost { model: NgbModel },
    Gp { layout: FeatureLayout, gp: GpModelFile },
    Lube { layout: FeatureLayout, net: LubeNet },
    Persistence { layout: FeatureLayout },
}

impl Forecaster {
    pub fn kind(&self) -> ModelKind {
        match self {
            Forecaster::Ngboost(_) => ModelKind::Ngboost,
            Forecaster::Gp { .. } => ModelKind::Gp,
            Forecaster::Lube { .. } => ModelKind::Lube,
            Forecaster::Persistence { .. } => ModelKind::Persistence,
        }
    }

    pub fn layout(&self) -> &FeatureLayout {
        match self {
            Forecaster::Ngboost(m) => m.layout.as_ref().expect("checked on construction"),
            Forecaster::Gp { layout, .. } | Forecaster::Lube { layout, .. } | Forecaster::Persistence { layout } => {
                layout
            }
        }
    }

    /// Wraps a boosted model; it must carry the layout of its training data.
    pub fn ngboost(model: NgbModel) -> Result<Self> {
        if model.layout.is_none() {
            return Err(Error::Data("model has no feature layout; it was not trained on a power series".into()));
        }
        Ok(Forecaster::Ngboost(model))
    }

    /// Nominal coverages of the intervals this model produces, given the
    /// levels requested for distributional models.
    pub fn coverages(&self, requested: &[f64]) -> Vec<f64> {
        match self {
            Forecaster::Ngboost(_) | Forecaster::Gp { .. } => requested.to_vec(),
            Forecaster::Lube { net, .. } => vec![net.confidence],
            Forecaster::Persistence { .. } => Vec::new(),
        }
    }

    /// Prediction from an assembled feature row. Persistence has no
    /// feature-based prediction and is handled by the forecasting loop.
    pub fn predict_row(&self, x: &[f64]) -> Result<Prediction> {
        match self {
            Forecaster::Ngboost(m) => Ok(Prediction::Dist(m.predict_dist(x)?)),
            Forecaster::Gp { model, .. } => Ok(Prediction::Dist(gp_predict(model, x)?)),
            Forecaster::Lube { net, .. } => {
                if x.len() != net.n_inputs {
                    return Err(Error::Dimension {
                        expected: net.n_inputs,
                        got: x.len(),
                    });
                }
                let (lower, upper) = net.predict(x);
                Ok(Prediction::Interval { lower, upper })
            }
            Forecaster::Persistence { .. } => Err(Error::Domain("persistence does not use feature rows".into())),
        }
    }

    pub fn to_file(&self) -> ModelFile {
        match self {
            Forecaster::Ngboost(m) => ModelFile::Ngboost { model: m.clone() },
            Forecaster::Gp { layout, model } => ModelFile::Gp {
                layout: layout.clone(),
                gp: model.to_file(),
            },
            Forecaster::Lube { layout, net } => ModelFile::Lube {
                layout: layout.clone(),
                net: net.clone(),
            },
            Forecaster::Persistence { layout } => ModelFile::Persistence { layout: layout.clone() },
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        Ok(match file {
            ModelFile::Ngboost { model } => {
                model.validate()?;
                Forecaster::ngboost(model)?
            }
            ModelFile::Gp { layout, gp } => Forecaster::Gp {
                layout,
                model: GpModel::from_file(gp)?,
            },
            ModelFile::Lube { layout, net } => Forecaster::Lube { layout, net },
            ModelFile::Persistence { layout } => Forecaster::Persistence { layout },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_file(file)
    }
}

/// One forecast slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRow {
    pub timestamp: NaiveDateTime,
    /// False for night slots, which are zero by rule.
    pub modeled: bool,
    pub point: f64,
    /// Interval per coverage level of the owning series.
    pub bounds: Vec<(f64, f64)>,
    pub dist: Option<DistParams>,
    pub actual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSeries {
    /// Nominal coverages of `bounds`, as fractions.
    pub coverages: Vec<f64>,
    pub rows: Vec<ForecastRow>,
}

impl ForecastSeries {
    /// Modeled slots with a realized value.
    pub fn scored_rows(&self) -> impl Iterator<Item = &ForecastRow> {
        self.rows.iter().filter(|r| r.modeled && r.actual.is_some())
    }

    /// Metrics over the modeled slots with realized values; `None` when
    /// there are none. PINAW uses the largest realized value as range.
    pub fn evaluate(&self, kind: ModelKind, pit_bins: usize) -> Result<Option<EvalReport>> {
        let rows: Vec<&ForecastRow> = self.scored_rows().collect();
        if rows.is_empty() {
            return Ok(None);
        }
        let actual: Vec<f64> = rows.iter().map(|r| r.actual.unwrap_or(f64::NAN)).collect();
        let range = actual.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(range > 0.0) {
            return Err(Error::Data("realized power is never positive in the evaluation window".into()));
        }
        let report = match kind {
            ModelKind::Ngboost | ModelKind::Gp => {
                let dists: Vec<DistParams> = rows
                    .iter()
                    .map(|r| r.dist.ok_or_else(|| Error::Data("distributional forecast expected".into())))
                    .collect::<Result<_>>()?;
                EvalReport::for_distributions(&dists, &actual, range, &self.coverages, pit_bins)?
            }
            ModelKind::Lube => {
                let (lo, hi): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| r.bounds[0]).unzip();
                EvalReport::for_intervals(&lo, &hi, &actual, range, self.coverages[0])?
            }
            ModelKind::Persistence => {
                let pred: Vec<f64> = rows.iter().map(|r| r.point).collect();
                EvalReport::for_points(&pred, &actual)?
            }
        };
        Ok(Some(report))
    }

    /// Plot-ready CSV: `timestamp,modeled,point,lower_<c>,upper_<c>…,actual`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string(), "modeled".into(), "point".into()];
        for c in &self.coverages {
            header.push(format!("lower_{:.2}", 100.0 * c));
            header.push(format!("upper_{:.2}", 100.0 * c));
        }
        header.push("actual".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                format_timestamp(&r.timestamp),
                (r.modeled as u8).to_string(),
                r.point.to_string(),
            ];
            for (lo, hi) in &r.bounds {
                rec.push(lo.to_string());
                rec.push(hi.to_string());
            }
            rec.push(r.actual.map(|a| a.to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn step() -> Duration {
    Duration::minutes(STEP_MINUTES)
}

/// Forecasts the `horizon_minutes` after `origin` one step at a time.
///
/// Weather inputs are read from `series` at each target time. Lag inputs at
/// or before the origin are realized power (missing night values count as
/// zero); later lags are the model's own earlier point forecasts. Night
/// slots are zero with degenerate intervals, and their zeros feed later
/// lags. Realized power after the origin is only used for the `actual`
/// column.
pub fn recursive_forecast(
    model: &Forecaster,
    series: &RawSeries,
    origin: NaiveDateTime,
    horizon_minutes: i64,
    coverages: &[f64],
) -> Result<ForecastSeries> {
    let layout = model.layout();
    let coverages = model.coverages(coverages);
    if let Forecaster::Persistence { .. } = model {
        let unit = layout.power_unit();
        return recursive_forecast_with(layout, series, origin, horizon_minutes, &coverages, |t, _| {
            Ok(Prediction::Point(persistence_forecast_known(series, t, &origin)? / unit))
        });
    }
    recursive_forecast_with(layout, series, origin, horizon_minutes, &coverages, |_, row| {
        model.predict_row(row?)
    })
}

/// Recursive forecasting with an arbitrary predictor. `predict` receives the
/// target time and the assembled feature row, or the error explaining why
/// the row could not be assembled.
pub fn recursive_forecast_with<F>(
    layout: &FeatureLayout,
    series: &RawSeries,
    origin: NaiveDateTime,
    horizon_minutes: i64,
    coverages: &[f64],
    mut predict: F,
) -> Result<ForecastSeries>
where
    F: FnMut(&NaiveDateTime, Result<&[f64]>) -> Result<Prediction>,
{
    if horizon_minutes <= 0 || horizon_minutes % STEP_MINUTES != 0 {
        return Err(Error::Domain(format!(
            "horizon of {horizon_minutes} minutes is not a positive multiple of {STEP_MINUTES}"
        )));
    }
    let unit = layout.power_unit();
    let steps = (horizon_minutes / STEP_MINUTES) as usize;
    let mut predicted: HashMap<NaiveDateTime, f64> = HashMap::with_capacity(steps);
    let mut rows = Vec::with_capacity(steps);

    for k in 1..=steps {
        let t = origin + step() * k as i32;
        let actual = series.power_at(&t).filter(|p| p.is_finite()).map(|p| p / unit);
        if !is_day_time(&t) {
            predicted.insert(t, 0.0);
            rows.push(ForecastRow {
                timestamp: t,
                modeled: false,
                point: 0.0,
                bounds: vec![(0.0, 0.0); coverages.len()],
                dist: None,
                actual,
            });
            continue;
        }
        let idx = series.index_of(&t);
        let x = layout
            .row(
                &t,
                |name| idx.and_then(|i| series.weather_column(name).map(|c| c[i])),
                |lag| {
                    let src = t - step() * lag as i32;
                    if src > origin {
                        predicted.get(&src).copied()
                    } else {
                        match series.power_at(&src).filter(|p| p.is_finite()) {
                            Some(p) => Some(p / unit),
                            None if !is_day_time(&src) => Some(0.0),
                            None => None,
                        }
                    }
                },
            )
            .ok_or_else(|| Error::Data(format!("missing weather or lag input for {}", format_timestamp(&t))));
        let (point, bounds, dist) = match predict(&t, x.as_deref().map_err(clone_error))? {
            Prediction::Dist(d) => {
                let b = coverages
                    .iter()
                    .map(|&c| d.interval_for_coverage(c))
                    .collect::<Result<Vec<_>>>()?;
                (d.loc, b, Some(d))
            }
            p @ Prediction::Interval { lower, upper } => (p.point(), vec![(lower, upper)], None),
            Prediction::Point(p) => (p, Vec::new(), None),
        };
        if !point.is_finite() {
            return Err(Error::Numerical(format!("non-finite forecast at {}", format_timestamp(&t))));
        }
        predicted.insert(t, point);
        rows.push(ForecastRow {
            timestamp: t,
            modeled: true,
            point,
            bounds,
            dist,
            actual,
        });
    }
    Ok(ForecastSeries {
        coverages: coverages.to_vec(),
        rows,
    })
}

fn clone_error(e: &Error) -> Error {
    Error::Data(match e {
        Error::Data(m) => m.clone(),
        other => other.to_string(),
    })
}

/// When and how far ahead each day-ahead forecast is issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayAheadSpec {
    pub origin_hour: u32,
    pub horizon_hours: u32,
}

/// Issues one forecast per day in `[start, end)` from `origin_hour` on the
/// previous day and keeps the slots of the target day. Days whose inputs are
/// incomplete are skipped with a warning.
pub fn day_ahead(
    model: &Forecaster,
    series: &RawSeries,
    start: NaiveDateTime,
    end: NaiveDateTime,
    spec: DayAheadSpec,
    coverages: &[f64],
) -> Result<ForecastSeries> {
    let origin_time = NaiveTime::from_hms_opt(spec.origin_hour, 0, 0)
        .ok_or_else(|| Error::Domain(format!("invalid origin hour {}", spec.origin_hour)))?;
    let first = start.date();
    let n_days = (end.date() - first).num_days() + i64::from(end.time() > NaiveTime::MIN);
    let days: Vec<_> = (0..n_days).map(|k| first + Duration::days(k)).collect();
    let per_day: Vec<Option<Vec<ForecastRow>>> = days
        .par_iter()
        .map(|day| {
            let origin = (*day - Duration::days(1)).and_time(origin_time);
            match recursive_forecast(model, series, origin, i64::from(spec.horizon_hours) * 60, coverages) {
                Ok(f) => Ok(Some(
                    f.rows
                        .into_iter()
                        .filter(|r| r.timestamp.date() == *day && r.timestamp >= start && r.timestamp < end)
                        .collect(),
                )),
                Err(Error::Data(msg)) => {
                    log::debug!("skipping {day}: {msg}");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let skipped: Vec<_> = days.iter().zip(&per_day).filter(|(_, r)| r.is_none()).map(|(d, _)| *d).collect();
    if let (Some(first), Some(last)) = (skipped.first(), skipped.last()) {
        log::warn!(
            "skipped {} of {} days between {first} and {last}: inputs incomplete (RUST_LOG=debug for details)",
            skipped.len(),
            days.len()
        );
    }
    let rows: Vec<ForecastRow> = per_day.into_iter().flatten().flatten().collect();
    if rows.is_empty() {
        return Err(Error::Data("no day in the window could be forecast".into()));
    }
    Ok(ForecastSeries {
        coverages: model.coverages(coverages),
        rows,
    })
}
