//! Raw power/weather series and model-ready feature matrices.
//!
//! A [`RawSeries`] holds timestamped power plus named weather columns.
//! [`build_lagged`] turns it into a [`Dataset`] with weather, time-of-day,
//! cyclical month and lagged power features. Lag sources are located by
//! timestamp, so rows whose lags fall into gaps or filtered night hours are
//! dropped instead of imputed.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling step of the series, in minutes.
pub const STEP_MINUTES: i64 = 15;

/// Timestamp format used in every CSV file.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

/// Weather columns of the input CSV, in header order.
pub const WEATHER_COLUMNS: [&str; 5] = [
    "temperature",
    "humidity",
    "precipitation",
    "wind_speed",
    "radiation",
];

/// First kept and first dropped hour of the day.
pub const DAY_START_HOUR: u32 = 6;
pub const DAY_END_HOUR: u32 = 22;

/// Headroom above nominal power tolerated in scaled targets.
pub const SCALE_HEADROOM: f64 = 0.05;

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s.trim(), TIMESTAMP_FORMAT)
        .map_err(|e| Error::Data(format!("bad timestamp {s:?}: {e}")))
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

/// Whether a wall-clock time falls in the kept window `[06:00, 22:00)`.
pub fn is_day_time(t: &NaiveDateTime) -> bool {
    (DAY_START_HOUR..DAY_END_HOUR).contains(&t.hour())
}

/// Fractional hour of day, e.g. 10:45 -> 10.75.
pub fn fractional_hour(t: &NaiveDateTime) -> f64 {
    t.hour() as f64 + t.minute() as f64 / 60.0
}

/// Maps a month onto the unit circle as `(sin, cos)` of `2π·month/12`.
pub fn encode_month(month: u32) -> Result<(f64, f64)> {
    if !(1..=12).contains(&month) {
        return Err(Error::Domain(format!("month must be in 1..=12, got {month}")));
    }
    let angle = 2.0 * PI * month as f64 / 12.0;
    Ok((angle.sin(), angle.cos()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherColumn {
    pub name: String,
    pub values: Vec<f64>,
}

/// Timestamped power with aligned weather columns. Missing cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    timestamps: Vec<NaiveDateTime>,
    power: Vec<f64>,
    weather: Vec<WeatherColumn>,
}

impl RawSeries {
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        power: Vec<f64>,
        weather: Vec<WeatherColumn>,
    ) -> Result<Self> {
        if power.len() != timestamps.len() {
            return Err(Error::Data(format!(
                "power has {} values for {} timestamps",
                power.len(),
                timestamps.len()
            )));
        }
        for col in &weather {
            if col.values.len() != timestamps.len() {
                return Err(Error::Data(format!(
                    "weather column {} has {} values for {} timestamps",
                    col.name,
                    col.values.len(),
                    timestamps.len()
                )));
            }
        }
        for w in timestamps.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Data(format!(
                    "timestamps not strictly increasing at {}",
                    format_timestamp(&w[1])
                )));
            }
        }
        if let Some(p) = power.iter().find(|p| **p < 0.0) {
            return Err(Error::Data(format!("negative power value {p}")));
        }
        Ok(Self {
            timestamps,
            power,
            weather,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn weather(&self) -> &[WeatherColumn] {
        &self.weather
    }

    pub fn weather_column(&self, name: &str) -> Option<&[f64]> {
        self.weather
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    /// Row index of an exact timestamp.
    pub fn index_of(&self, t: &NaiveDateTime) -> Option<usize> {
        self.timestamps.binary_search(t).ok()
    }

    pub fn power_at(&self, t: &NaiveDateTime) -> Option<f64> {
        self.index_of(t).map(|i| self.power[i])
    }

    /// Keeps the rows selected by `keep`, preserving order.
    pub fn filter_rows<F: Fn(usize) -> bool>(&self, keep: F) -> RawSeries {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        RawSeries {
            timestamps: idx.iter().map(|&i| self.timestamps[i]).collect(),
            power: idx.iter().map(|&i| self.power[i]).collect(),
            weather: self
                .weather
                .iter()
                .map(|c| WeatherColumn {
                    name: c.name.clone(),
                    values: idx.iter().map(|&i| c.values[i]).collect(),
                })
                .collect(),
        }
    }

    /// Reads the fixed-schema CSV
    /// (`timestamp,power,temperature,humidity,precipitation,wind_speed,radiation`).
    /// Empty cells become NaN; lines starting with `#` are ignored.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected: Vec<&str> = ["timestamp", "power"]
            .into_iter()
            .chain(WEATHER_COLUMNS)
            .collect();
        let got: Vec<&str> = headers.iter().map(str::trim).collect();
        if got != expected {
            return Err(Error::Data(format!(
                "unexpected CSV header {got:?}, expected {expected:?}"
            )));
        }
        let mut timestamps = Vec::new();
        let mut power = Vec::new();
        let mut weather: Vec<Vec<f64>> = vec![Vec::new(); WEATHER_COLUMNS.len()];
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != expected.len() {
                return Err(Error::Data(format!(
                    "row {} has {} fields",
                    line + 2,
                    record.len()
                )));
            }
            timestamps.push(parse_timestamp(&record[0])?);
            power.push(parse_cell(&record[1], line + 2)?);
            for (k, col) in weather.iter_mut().enumerate() {
                col.push(parse_cell(&record[k + 2], line + 2)?);
            }
        }
        let weather = WEATHER_COLUMNS
            .iter()
            .zip(weather)
            .map(|(name, values)| WeatherColumn {
                name: name.to_string(),
                values,
            })
            .collect();
        Self::new(timestamps, power, weather)
    }

    pub fn read_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Writes the fixed-schema CSV. Columns missing from the series are left empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp", "power"];
        header.extend(WEATHER_COLUMNS);
        w.write_record(&header)?;
        let cols: Vec<Option<&[f64]>> = WEATHER_COLUMNS
            .iter()
            .map(|n| self.weather_column(n))
            .collect();
        for i in 0..self.len() {
            let mut rec = vec![format_timestamp(&self.timestamps[i]), format_cell(self.power[i])];
            for c in &cols {
                rec.push(c.map(|v| format_cell(v[i])).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_cell(s: &str, line: usize) -> Result<f64> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    s.parse::<f64>()
        .map_err(|_| Error::Data(format!("line {line}: cannot parse {s:?} as a number")))
}

fn format_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// Drops rows outside the `[06:00, 22:00)` window.
pub fn filter_night_hours(series: &RawSeries) -> RawSeries {
    series.filter_rows(|i| is_day_time(&series.timestamps[i]))
}

/// One model input column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "arg", rename_all = "snake_case")]
pub enum FeatureColumn {
    Weather(String),
    Hour,
    MonthSin,
    MonthCos,
    /// Power `steps` quarter hours before the target time.
    Lag(usize),
}

impl FeatureColumn {
    pub fn name(&self) -> String {
        match self {
            FeatureColumn::Weather(n) => n.clone(),
            FeatureColumn::Hour => "hour".into(),
            FeatureColumn::MonthSin => "month_sin".into(),
            FeatureColumn::MonthCos => "month_cos".into(),
            FeatureColumn::Lag(k) => format!("t-{}", *k as i64 * STEP_MINUTES),
        }
    }
}

/// How feature rows are assembled from a series, plus the power scaling in effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub columns: Vec<FeatureColumn>,
    /// Nominal power in MW.
    pub nominal_power: f64,
    /// Whether target and lag columns are divided by `nominal_power`.
    pub scaled: bool,
}

impl FeatureLayout {
    /// Weather columns of `series`, hour, month sin/cos, then the lags.
    pub fn standard(series: &RawSeries, lags: &[usize]) -> Self {
        let mut columns: Vec<FeatureColumn> = series
            .weather
            .iter()
            .map(|c| FeatureColumn::Weather(c.name.clone()))
            .collect();
        columns.extend([
            FeatureColumn::Hour,
            FeatureColumn::MonthSin,
            FeatureColumn::MonthCos,
        ]);
        columns.extend(lags.iter().map(|&k| FeatureColumn::Lag(k)));
        let max_power = series.power.iter().copied().filter(|p| p.is_finite()).fold(0.0, f64::max);
        Self {
            columns,
            nominal_power: if max_power > 0.0 { max_power } else { 1.0 },
            scaled: false,
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(FeatureColumn::name).collect()
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Divisor converting MW into model units.
    pub fn power_unit(&self) -> f64 {
        if self.scaled {
            self.nominal_power
        } else {
            1.0
        }
    }

    pub fn lags(&self) -> Vec<usize> {
        self.columns
            .iter()
            .filter_map(|c| match c {
                FeatureColumn::Lag(k) => Some(*k),
                _ => None,
            })
            .collect()
    }

    pub fn max_lag(&self) -> usize {
        self.lags().into_iter().max().unwrap_or(0)
    }

    /// Assembles one feature row for time `t`. `weather` looks up a weather
    /// value by column name; `lag` returns the power `k` steps earlier in
    /// model units. Returns `None` if any input is missing or NaN.
    pub fn row<W, L>(&self, t: &NaiveDateTime, weather: W, lag: L) -> Option<Vec<f64>>
    where
        W: Fn(&str) -> Option<f64>,
        L: Fn(usize) -> Option<f64>,
    {
        let (msin, mcos) = encode_month(t.month()).ok()?;
        let mut out = Vec::with_capacity(self.columns.len());
        for c in &self.columns {
            let v = match c {
                FeatureColumn::Weather(n) => weather(n)?,
                FeatureColumn::Hour => fractional_hour(t),
                FeatureColumn::MonthSin => msin,
                FeatureColumn::MonthCos => mcos,
                FeatureColumn::Lag(k) => lag(*k)?,
            };
            if !v.is_finite() {
                return None;
            }
            out.push(v);
        }
        Some(out)
    }

    /// Keeps only the listed column indices, in the given order.
    pub fn select(&self, keep: &[usize]) -> Result<Self> {
        let mut columns = Vec::with_capacity(keep.len());
        for &k in keep {
            columns.push(
                self.columns
                    .get(k)
                    .cloned()
                    .ok_or_else(|| Error::Domain(format!("no feature column {k}")))?,
            );
        }
        Ok(Self {
            columns,
            nominal_power: self.nominal_power,
            scaled: self.scaled,
        })
    }
}

/// Model-ready feature matrix and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Vec<f64>,
    layout: FeatureLayout,
    timestamps: Vec<NaiveDateTime>,
}

impl Dataset {
    pub fn new(
        x: Array2<f64>,
        y: Vec<f64>,
        layout: FeatureLayout,
        timestamps: Vec<NaiveDateTime>,
    ) -> Result<Self> {
        if x.nrows() != y.len() || timestamps.len() != y.len() {
            return Err(Error::Data(format!(
                "{} feature rows, {} targets, {} timestamps",
                x.nrows(),
                y.len(),
                timestamps.len()
            )));
        }
        if x.ncols() != layout.len() {
            return Err(Error::Dimension {
                expected: layout.len(),
                got: x.ncols(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset contains NaN or infinite values".into()));
        }
        if !(layout.nominal_power > 0.0) {
            return Err(Error::Data("nominal power must be positive".into()));
        }
        if layout.scaled {
            check_scaled(&y)?;
        }
        Ok(Self {
            x,
            y,
            layout,
            timestamps,
        })
    }

    /// Builds a dataset from plain rows with generic feature names; used
    /// for synthetic regression problems that are not power series.
    pub fn from_rows(x: Array2<f64>, y: Vec<f64>, names: &[&str]) -> Result<Self> {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .expect("valid date");
        let timestamps = (0..y.len())
            .map(|i| start + Duration::minutes(STEP_MINUTES * i as i64))
            .collect();
        let layout = FeatureLayout {
            columns: names
                .iter()
                .map(|n| FeatureColumn::Weather(n.to_string()))
                .collect(),
            nominal_power: 1.0,
            scaled: false,
        };
        Self::new(x, y, layout, timestamps)
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.layout.names()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn nominal_power(&self) -> f64 {
        self.layout.nominal_power
    }

    pub fn is_scaled(&self) -> bool {
        self.layout.scaled
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).to_vec()
    }

    /// Replaces the nominal power used for scaling. Only valid while unscaled.
    pub fn with_nominal_power(mut self, nominal: f64) -> Result<Self> {
        if self.layout.scaled {
            return Err(Error::Domain("cannot change nominal power of a scaled dataset".into()));
        }
        if !(nominal > 0.0) {
            return Err(Error::Domain(format!("nominal power must be positive, got {nominal}")));
        }
        self.layout.nominal_power = nominal;
        Ok(self)
    }

    fn lag_columns(&self) -> Vec<usize> {
        self.layout
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| matches!(c, FeatureColumn::Lag(_)))
            .map(|(i, _)| i)
            .collect()
    }

    fn rescale(&self, factor: f64, scaled: bool) -> Result<Self> {
        let mut x = self.x.clone();
        for j in self.lag_columns() {
            x.column_mut(j).mapv_inplace(|v| v * factor);
        }
        let y = self.y.iter().map(|v| v * factor).collect();
        let layout = FeatureLayout {
            scaled,
            ..self.layout.clone()
        };
        Self::new(x, y, layout, self.timestamps.clone())
    }

    /// Divides the target and lagged power columns by the nominal power.
    pub fn scaled(&self) -> Result<Self> {
        if self.layout.scaled {
            return Ok(self.clone());
        }
        self.rescale(1.0 / self.layout.nominal_power, true)
    }

    /// Inverse of [`Dataset::scaled`].
    pub fn unscaled(&self) -> Result<Self> {
        if !self.layout.scaled {
            return Ok(self.clone());
        }
        self.rescale(self.layout.nominal_power, false)
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let x = self.x.select(Axis(0), rows);
        Self {
            x,
            y: rows.iter().map(|&i| self.y[i]).collect(),
            layout: self.layout.clone(),
            timestamps: rows.iter().map(|&i| self.timestamps[i]).collect(),
        }
    }

    /// Subset of feature columns, in the given order.
    pub fn select_features(&self, cols: &[usize]) -> Result<Self> {
        let layout = self.layout.select(cols)?;
        let x = self.x.select(Axis(1), cols);
        Self::new(x, self.y.clone(), layout, self.timestamps.clone())
    }

    /// Rows with timestamps in `[start, end)`.
    pub fn between(&self, start: &NaiveDateTime, end: &NaiveDateTime) -> Self {
        let rows: Vec<usize> = (0..self.n_rows())
            .filter(|&i| self.timestamps[i] >= *start && self.timestamps[i] < *end)
            .collect();
        self.select_rows(&rows)
    }

    /// Exports `timestamp`, each feature and `target`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.feature_names());
        header.push("target".into());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![format_timestamp(&self.timestamps[i])];
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_scaled(y: &[f64]) -> Result<()> {
    if let Some(v) = y.iter().find(|v| !(**v >= 0.0 && **v <= 1.0 + SCALE_HEADROOM)) {
        return Err(Error::Data(format!(
            "scaled target {v} outside [0, {}]",
            1.0 + SCALE_HEADROOM
        )));
    }
    Ok(())
}

/// Builds the standard feature set with the given lag steps.
pub fn build_lagged(series: &RawSeries, lags: &[usize]) -> Result<Dataset> {
    if lags.is_empty() || lags.contains(&0) {
        return Err(Error::Domain("lags must be a non-empty list of positive steps".into()));
    }
    build_with_layout(series, &FeatureLayout::standard(series, lags))
}

/// Builds one row per timestamp whose inputs are all present. Lag `k`
/// reads the power recorded exactly `15·k` minutes earlier; if that
/// timestamp is absent or its power is missing, the row is dropped.
pub fn build_with_layout(series: &RawSeries, layout: &FeatureLayout) -> Result<Dataset> {
    let unit = layout.power_unit();
    let d = layout.len();
    let mut data = Vec::new();
    let mut y = Vec::new();
    let mut stamps = Vec::new();
    for (i, t) in series.timestamps.iter().enumerate() {
        let target = series.power[i];
        if !target.is_finite() {
            continue;
        }
        let row = layout.row(
            t,
            |name| series.weather_column(name).map(|c| c[i]),
            |k| {
                let src = *t - Duration::minutes(STEP_MINUTES * k as i64);
                series.power_at(&src).map(|p| p / unit)
            },
        );
        if let Some(row) = row {
            data.extend(row);
            y.push(target / unit);
            stamps.push(*t);
        }
    }
    if y.is_empty() {
        return Err(Error::Data("no complete rows after lag construction".into()));
    }
    let x = Array2::from_shape_vec((y.len(), d), data)
        .map_err(|e| Error::Data(format!("feature matrix shape: {e}")))?;
    Dataset::new(x, y, layout.clone(), stamps)
}

/// Pairwise Pearson correlations of all features and the target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PearsonMatrix {
    /// Feature names followed by `target`.
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Indices of constant columns; their off-diagonal correlations are 0.
    pub constant: Vec<usize>,
}

/// Pearson correlation matrix over features and target.
///
/// Rows are put in a canonical order before summation so the result does not
/// depend on row order.
pub fn pearson_matrix(data: &Dataset) -> Result<PearsonMatrix> {
    let m = data.n_rows();
    if m < 2 {
        return Err(Error::Data("correlation needs at least two rows".into()));
    }
    let d = data.n_features() + 1;
    let mut rows: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut r = data.row(i);
            r.push(data.y[i]);
            r
        })
        .collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let means: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m as f64)
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in &rows {
        for a in 0..d {
            let da = r[a] - means[a];
            for b in a..d {
                cov[a][b] += da * (r[b] - means[b]);
            }
        }
    }
    let constant: Vec<usize> = (0..d).filter(|&j| !(cov[j][j] > 0.0)).collect();
    let mut values = vec![vec![0.0; d]; d];
    for a in 0..d {
        values[a][a] = 1.0;
        for b in a + 1..d {
            let r = if constant.contains(&a) || constant.contains(&b) {
                0.0
            } else {
                (cov[a][b] / (cov[a][a].sqrt() * cov[b][b].sqrt())).clamp(-1.0, 1.0)
            };
            values[a][b] = r;
            values[b][a] = r;
        }
    }
    let mut names = data.feature_names();
    names.push("target".into());
    Ok(PearsonMatrix {
        names,
        values,
        constant,
    })
}

/// Training and test windows, both half-open `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_start: NaiveDateTime,
    pub train_end: NaiveDateTime,
    pub test_start: NaiveDateTime,
    pub test_end: NaiveDateTime,
}

impl SplitSpec {
    pub fn new(
        train_start: NaiveDateTime,
        train_end: NaiveDateTime,
        test_start: NaiveDateTime,
        test_end: NaiveDateTime,
    ) -> Result<Self> {
        let spec = Self {
            train_start,
            train_end,
            test_start,
            test_end,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Tests on one calendar month and trains on the `train_months` months before it.
    pub fn month_after(test_year: i32, test_month: u32, train_months: u32) -> Result<Self> {
        let test_start = month_start(test_year, test_month)?;
        let (ny, nm) = if test_month == 12 {
            (test_year + 1, 1)
        } else {
            (test_year, test_month + 1)
        };
        let test_end = month_start(ny, nm)?;
        let total = test_year * 12 + test_month as i32 - 1 - train_months as i32;
        let train_start = month_start(total.div_euclid(12), total.rem_euclid(12) as u32 + 1)?;
        Self::new(train_start, test_start, test_start, test_end)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_start < self.train_end && self.test_start < self.test_end) {
            return Err(Error::Domain("split ranges must be non-empty".into()));
        }
        if self.train_end > self.test_start {
            return Err(Error::Domain("training range overlaps the test range".into()));
        }
        Ok(())
    }
}

fn month_start(year: i32, month: u32) -> Result<NaiveDateTime> {
    NaiveDate::from_ymd_opt(year, month, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .ok_or_else(|| Error::Domain(format!("invalid month {year}-{month}")))
}

/// Partitions `data` by timestamp for each split.
pub fn sliding_splits(data: &Dataset, specs: &[SplitSpec]) -> Result<Vec<(Dataset, Dataset)>> {
    specs
        .iter()
        .map(|s| {
            s.validate()?;
            let train = data.between(&s.train_start, &s.train_end);
            let test = data.between(&s.test_start, &s.test_end);
            if train.n_rows() == 0 || test.n_rows() == 0 {
                return Err(Error::Data(format!(
                    "split {} .. {} has an empty side ({} train, {} test rows)",
                    format_timestamp(&s.train_start),
                    format_timestamp(&s.test_end),
                    train.n_rows(),
                    test.n_rows()
                )));
            }
            Ok((train, test))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    fn quarter_hours(start: &str, n: usize) -> Vec<NaiveDateTime> {
        let t0 = ts(start);
        (0..n)
            .map(|i| t0 + Duration::minutes(STEP_MINUTES * i as i64))
            .collect()
    }

    #[test]
    fn month_encoding_examples() {
        let (s, c) = encode_month(12).unwrap();
        assert!(s.abs() < 1e-15 && (c - 1.0).abs() < 1e-15);
        let (s, c) = encode_month(3).unwrap();
        assert!((s - 1.0).abs() < 1e-15 && c.abs() < 1e-15);
        let (s, c) = encode_month(7).unwrap();
        assert!((s + 0.5).abs() < 1e-15);
        assert!((c + 0.866_025_403_784_438_6).abs() < 1e-15);
        assert!(encode_month(0).is_err());
        assert!(encode_month(13).is_err());
    }

    #[test]
    fn month_encoding_is_injective_and_on_circle() {
        let pts: Vec<(f64, f64)> = (1..=12).map(|m| encode_month(m).unwrap()).collect();
        for (i, a) in pts.iter().enumerate() {
            assert!((a.0 * a.0 + a.1 * a.1 - 1.0).abs() < 1e-15);
            for b in &pts[i + 1..] {
                assert!((a.0 - b.0).abs() + (a.1 - b.1).abs() > 1e-3);
            }
        }
    }

    #[test]
    fn night_filter_keeps_half_open_window() {
        let t = quarter_hours("2019-06-01T00:00", 96);
        let s = RawSeries::new(t, vec![0.0; 96], vec![]).unwrap();
        let f = filter_night_hours(&s);
        assert_eq!(f.len(), 64);
        assert_eq!(f.timestamps()[0], ts("2019-06-01T06:00"));
        assert_eq!(*f.timestamps().last().unwrap(), ts("2019-06-01T21:45"));
        assert!(f.index_of(&ts("2019-06-01T05:45")).is_none());
        assert!(f.index_of(&ts("2019-06-01T22:00")).is_none());
    }

    #[test]
    fn single_lag_shifts_by_one() {
        let s = RawSeries::new(
            quarter_hours("2019-06-01T10:00", 4),
            vec![1.0, 2.0, 3.0, 4.0],
            vec![],
        )
        .unwrap();
        let d = build_lagged(&s, &[1]).unwrap();
        assert_eq!(d.n_rows(), 3);
        let lag_col = d.feature_names().iter().position(|n| n == "t-15").unwrap();
        assert_eq!(d.x().column(lag_col).to_vec(), vec![1.0, 2.0, 3.0]);
        assert_eq!(d.y(), &[2.0, 3.0, 4.0]);
    }

    #[test]
    fn three_lags_truncate_three_rows() {
        let s = RawSeries::new(quarter_hours("2019-06-01T10:00", 10), vec![1.0; 10], vec![])
            .unwrap();
        let d = build_lagged(&s, &[1, 2, 3]).unwrap();
        assert_eq!(d.n_rows(), 7);
        assert_eq!(
            d.feature_names()[3..].to_vec(),
            vec!["t-15", "t-30", "t-45"]
        );
    }

    #[test]
    fn rows_after_gap_dropped() {
        // 10:00, 10:15, then a 45 minute gap to 11:00, 11:15
        let t = vec![
            ts("2019-06-01T10:00"),
            ts("2019-06-01T10:15"),
            ts("2019-06-01T11:00"),
            ts("2019-06-01T11:15"),
        ];
        let s = RawSeries::new(t, vec![1.0, 2.0, 3.0, 4.0], vec![]).unwrap();
        let d = build_lagged(&s, &[1]).unwrap();
        assert_eq!(
            d.timestamps(),
            &[ts("2019-06-01T10:15"), ts("2019-06-01T11:15")]
        );
    }

    #[test]
    fn night_boundary_rows_dropped_not_imputed() {
        let t = quarter_hours("2019-06-01T00:00", 96 * 2);
        let s = RawSeries::new(t, vec![1.0; 192], vec![]).unwrap();
        let d = build_lagged(&filter_night_hours(&s), &[1, 2, 3]).unwrap();
        assert_eq!(d.n_rows(), 2 * 61);
        assert!(d.timestamps().iter().all(|t| fractional_hour(t) >= 6.75));
    }

    #[test]
    fn missing_weather_or_power_drops_row() {
        let t = quarter_hours("2019-06-01T10:00", 5);
        let w = WeatherColumn {
            name: "radiation".into(),
            values: vec![1.0, 2.0, f64::NAN, 4.0, 5.0],
        };
        let s = RawSeries::new(t, vec![1.0, 2.0, 3.0, f64::NAN, 5.0], vec![w]).unwrap();
        let d = build_lagged(&s, &[1]).unwrap();
        // row 2 has NaN radiation, row 3 NaN power, row 4's lag is NaN
        assert_eq!(d.n_rows(), 1);
        assert_eq!(d.timestamps()[0], ts("2019-06-01T10:15"));
    }

    #[test]
    fn no_valid_rows_is_an_error() {
        let s = RawSeries::new(quarter_hours("2019-06-01T10:00", 2), vec![1.0, 1.0], vec![])
            .unwrap();
        assert!(build_lagged(&s, &[3]).is_err());
        assert!(build_lagged(&s, &[]).is_err());
    }

    #[test]
    fn raw_series_invariants() {
        let t = vec![ts("2019-06-01T10:00"), ts("2019-06-01T10:00")];
        assert!(RawSeries::new(t, vec![0.0, 0.0], vec![]).is_err());
        let t = quarter_hours("2019-06-01T10:00", 2);
        let w = WeatherColumn {
            name: "temperature".into(),
            values: vec![1.0],
        };
        assert!(RawSeries::new(t.clone(), vec![0.0, 0.0], vec![w]).is_err());
        assert!(RawSeries::new(t, vec![0.0, -1.0], vec![]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let text = "timestamp,power,temperature,humidity,precipitation,wind_speed,radiation\n\
                    2019-06-01T10:00,1.5,20,50,0,3.2,700\n\
                    2019-06-01T10:15,1.6,,51,0,3.1,710\n";
        let s = RawSeries::read_csv(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.weather_column("temperature").unwrap()[1].is_nan());
        let mut out = Vec::new();
        s.write_csv(&mut out).unwrap();
        let back = RawSeries::read_csv(out.as_slice()).unwrap();
        assert_eq!(back.power(), s.power());
        assert_eq!(back.timestamps(), s.timestamps());
    }

    #[test]
    fn csv_rejects_wrong_header_and_bad_cells() {
        assert!(RawSeries::read_csv("time,power\n".as_bytes()).is_err());
        let text = "timestamp,power,temperature,humidity,precipitation,wind_speed,radiation\n\
                    2019-06-01 10:00,1,1,1,1,1,1\n";
        assert!(RawSeries::read_csv(text.as_bytes()).is_err());
        let text = "timestamp,power,temperature,humidity,precipitation,wind_speed,radiation\n\
                    2019-06-01T10:00,abc,1,1,1,1,1\n";
        assert!(RawSeries::read_csv(text.as_bytes()).is_err());
    }

    fn toy_dataset() -> Dataset {
        let x = Array2::from_shape_vec((4, 2), vec![1.0, 1.0, 2.0, 3.0, 3.0, 2.0, 4.0, 4.0])
            .unwrap();
        Dataset::from_rows(x, vec![5.0, 7.0, 9.0, 11.0], &["x", "z"]).unwrap()
    }

    #[test]
    fn pearson_examples() {
        let p = pearson_matrix(&toy_dataset()).unwrap();
        assert_eq!(p.names, vec!["x", "z", "target"]);
        assert_eq!(p.values[0][0], 1.0);
        // target = 2x + 3
        assert!((p.values[0][2] - 1.0).abs() < 1e-15);
        assert!((p.values[0][1] - 0.8).abs() < 1e-15);
        assert_eq!(p.values[0][1], p.values[1][0]);
        assert!(p.constant.is_empty());
    }

    #[test]
    fn pearson_constant_column_flagged() {
        let x = Array2::from_shape_vec((3, 2), vec![1.0, 7.0, 2.0, 7.0, 3.0, 7.0]).unwrap();
        let d = Dataset::from_rows(x, vec![1.0, 0.0, 2.0], &["a", "c"]).unwrap();
        let p = pearson_matrix(&d).unwrap();
        assert_eq!(p.constant, vec![1]);
        assert_eq!(p.values[1][0], 0.0);
        assert_eq!(p.values[1][1], 1.0);
    }

    #[test]
    fn scaling_round_trip_and_bounds() {
        let t = quarter_hours("2019-06-01T10:00", 6);
        let s = RawSeries::new(t, vec![0.0, 1.0, 2.5, 3.0, 3.1, 2.0], vec![]).unwrap();
        let d = build_lagged(&s, &[1, 2]).unwrap().with_nominal_power(3.0).unwrap();
        let sc = d.scaled().unwrap();
        assert!(sc.is_scaled());
        assert!(sc.y().iter().all(|v| (0.0..=1.05).contains(v)));
        let back = sc.unscaled().unwrap();
        for (a, b) in back.y().iter().zip(d.y()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
        // 3.1 / 2.0 = 1.55 exceeds the headroom
        let bad = build_lagged(&s, &[1]).unwrap().with_nominal_power(2.0).unwrap();
        assert!(bad.scaled().is_err());
    }

    #[test]
    fn splits_partition_by_timestamp() {
        let t = quarter_hours("2019-01-01T00:00", 96 * 70);
        let n = t.len();
        let s = RawSeries::new(t, vec![1.0; n], vec![]).unwrap();
        let d = build_lagged(&filter_night_hours(&s), &[1]).unwrap();
        let spec = SplitSpec::new(
            ts("2019-01-01T00:00"),
            ts("2019-02-01T00:00"),
            ts("2019-02-01T00:00"),
            ts("2019-03-01T00:00"),
        )
        .unwrap();
        let parts = sliding_splits(&d, &[spec]).unwrap();
        let (train, test) = &parts[0];
        assert_eq!(train.n_rows() + test.n_rows(), d.between(&spec.train_start, &spec.test_end).n_rows());
        assert!(train.timestamps().last().unwrap() < test.timestamps().first().unwrap());
    }

    #[test]
    fn overlapping_or_empty_splits_rejected() {
        assert!(SplitSpec::new(
            ts("2019-01-01T00:00"),
            ts("2019-02-15T00:00"),
            ts("2019-02-01T00:00"),
            ts("2019-03-01T00:00"),
        )
        .is_err());
        let d = toy_dataset();
        let spec = SplitSpec::month_after(2030, 1, 12).unwrap();
        assert!(sliding_splits(&d, &[spec]).is_err());
    }

    #[test]
    fn month_after_spans_previous_year() {
        let s = SplitSpec::month_after(2019, 1, 12).unwrap();
        assert_eq!(s.train_start, ts("2018-01-01T00:00"));
        assert_eq!(s.train_end, ts("2019-01-01T00:00"));
        assert_eq!(s.test_end, ts("2019-02-01T00:00"));
        let s = SplitSpec::month_after(2019, 12, 12).unwrap();
        assert_eq!(s.test_end, ts("2020-01-01T00:00"));
        assert_eq!(s.train_start, ts("2018-12-01T00:00"));
    }
}
