//! Point, interval and distributional forecast metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dists::{sigma_coverage, std_normal_quantile, DistParams};
use crate::error::{Error, Result};

/// Default number of PIT histogram bins.
pub const DEFAULT_PIT_BINS: usize = 20;

/// Nominal coverages of the 1σ, 2σ and 3σ intervals of a Normal.
pub fn default_coverages() -> Vec<f64> {
    [1.0, 2.0, 3.0].into_iter().map(sigma_coverage).collect()
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            expected: a,
            got: b,
        });
    }
    if a == 0 {
        return Err(Error::Data("metrics need at least one sample".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub mbe: f64,
}

/// MAE, RMSE and mean bias (prediction minus actual).
pub fn point_metrics(pred: &[f64], actual: &[f64]) -> Result<PointMetrics> {
    check_lengths(pred.len(), actual.len())?;
    let n = pred.len() as f64;
    let (mut abs, mut sq, mut bias) = (0.0, 0.0, 0.0);
    for (p, a) in pred.iter().zip(actual) {
        let e = p - a;
        abs += e.abs();
        sq += e * e;
        bias += e;
    }
    let mae = abs / n;
    // Guard against the last-ulp rounding that could put rmse below mae.
    let rmse = (sq / n).sqrt().max(mae);
    Ok(PointMetrics {
        mae,
        rmse,
        mbe: bias / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub picp: f64,
    pub pinaw: f64,
}

/// Coverage probability (closed intervals) and mean width normalized by `range`.
pub fn interval_metrics(
    lower: &[f64],
    upper: &[f64],
    actual: &[f64],
    range: f64,
) -> Result<IntervalMetrics> {
    check_lengths(lower.len(), upper.len())?;
    check_lengths(lower.len(), actual.len())?;
    if !(range > 0.0) {
        return Err(Error::Domain(format!("normalizing range must be > 0, got {range}")));
    }
    let n = actual.len() as f64;
    let mut covered = 0usize;
    let mut width = 0.0;
    for ((&l, &u), &y) in lower.iter().zip(upper).zip(actual) {
        if u < l {
            return Err(Error::Domain(format!("upper bound {u} below lower bound {l}")));
        }
        if l <= y && y <= u {
            covered += 1;
        }
        width += u - l;
    }
    Ok(IntervalMetrics {
        picp: covered as f64 / n,
        pinaw: width / n / range,
    })
}

/// Mean closed-form CRPS.
pub fn crps_mean(dists: &[DistParams], actual: &[f64]) -> Result<f64> {
    check_lengths(dists.len(), actual.len())?;
    Ok(dists.iter().zip(actual).map(|(d, &y)| d.crps(y)).sum::<f64>() / actual.len() as f64)
}

/// Probability integral transform values `F_i(y_i)`.
pub fn pit_values(dists: &[DistParams], actual: &[f64]) -> Result<Vec<f64>> {
    check_lengths(dists.len(), actual.len())?;
    Ok(dists
        .iter()
        .zip(actual)
        .map(|(d, &y)| d.cdf(y).clamp(0.0, 1.0))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitHistogram {
    /// `bins + 1` equally spaced edges on [0, 1].
    pub edges: Vec<f64>,
    /// Fraction of samples per bin; sums to 1.
    pub density: Vec<f64>,
}

impl PitHistogram {
    pub fn from_values(pit: &[f64], bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Domain(format!("PIT histogram needs >= 2 bins, got {bins}")));
        }
        if pit.is_empty() {
            return Err(Error::Data("PIT histogram of no samples".into()));
        }
        let mut counts = vec![0usize; bins];
        for &p in pit {
            let k = ((p * bins as f64).floor() as usize).min(bins - 1);
            counts[k] += 1;
        }
        let n = pit.len() as f64;
        Ok(Self {
            edges: (0..=bins).map(|k| k as f64 / bins as f64).collect(),
            density: counts.into_iter().map(|c| c as f64 / n).collect(),
        })
    }

    pub fn bins(&self) -> usize {
        self.density.len()
    }

    /// Largest absolute gap between a bin and the uniform share.
    pub fn max_deviation_from_uniform(&self) -> f64 {
        let u = 1.0 / self.bins() as f64;
        self.density.iter().map(|d| (d - u).abs()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin_left", "bin_right", "density"])?;
        for (k, d) in self.density.iter().enumerate() {
            w.write_record([
                self.edges[k].to_string(),
                self.edges[k + 1].to_string(),
                d.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn pit_histogram(dists: &[DistParams], actual: &[f64], bins: usize) -> Result<PitHistogram> {
    PitHistogram::from_values(&pit_values(dists, actual)?, bins)
}

/// Coverage and width at one nominal level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    /// Nominal coverage in (0, 1).
    pub nominal: f64,
    /// Half-width of the equivalent Normal interval in standard deviations;
    /// absent for interval-only models.
    pub k_sigma: Option<f64>,
    pub picp: f64,
    pub pinaw: f64,
}

/// All metrics for one model on one evaluation split. Interval-only models
/// leave the point and distributional fields empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub mbe: Option<f64>,
    pub coverage: Vec<CoverageResult>,
    pub mean_crps: Option<f64>,
    pub pit: Option<PitHistogram>,
}

impl EvalReport {
    /// Full report for a distributional forecast. Point forecasts use the
    /// location; intervals are central intervals at each nominal coverage.
    pub fn for_distributions(
        dists: &[DistParams],
        actual: &[f64],
        range: f64,
        coverages: &[f64],
        pit_bins: usize,
    ) -> Result<Self> {
        let loc: Vec<f64> = dists.iter().map(|d| d.loc).collect();
        let pm = point_metrics(&loc, actual)?;
        let mut coverage = Vec::with_capacity(coverages.len());
        for &c in coverages {
            let (lo, hi): (Vec<f64>, Vec<f64>) = dists
                .iter()
                .map(|d| d.interval_for_coverage(c))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            let im = interval_metrics(&lo, &hi, actual, range)?;
            coverage.push(CoverageResult {
                nominal: c,
                k_sigma: Some(std_normal_quantile(0.5 + 0.5 * c)),
                picp: im.picp,
                pinaw: im.pinaw,
            });
        }
        Ok(Self {
            n_samples: actual.len(),
            mae: Some(pm.mae),
            rmse: Some(pm.rmse),
            mbe: Some(pm.mbe),
            coverage,
            mean_crps: Some(crps_mean(dists, actual)?),
            pit: Some(pit_histogram(dists, actual, pit_bins)?),
        })
    }

    /// Report for a model that only produces intervals at one nominal level.
    pub fn for_intervals(
        lower: &[f64],
        upper: &[f64],
        actual: &[f64],
        range: f64,
        nominal: f64,
    ) -> Result<Self> {
        let im = interval_metrics(lower, upper, actual, range)?;
        Ok(Self {
            n_samples: actual.len(),
            mae: None,
            rmse: None,
            mbe: None,
            coverage: vec![CoverageResult {
                nominal,
                k_sigma: None,
                picp: im.picp,
                pinaw: im.pinaw,
            }],
            mean_crps: None,
            pit: None,
        })
    }

    /// Report for a point-only forecast.
    pub fn for_points(pred: &[f64], actual: &[f64]) -> Result<Self> {
        let pm = point_metrics(pred, actual)?;
        Ok(Self {
            n_samples: actual.len(),
            mae: Some(pm.mae),
            rmse: Some(pm.rmse),
            mbe: Some(pm.mbe),
            coverage: Vec::new(),
            mean_crps: None,
            pit: None,
        })
    }

    /// Coverage result whose nominal level is within 1e-9 of `nominal`.
    pub fn coverage_at(&self, nominal: f64) -> Option<&CoverageResult> {
        self.coverage.iter().find(|c| (c.nominal - nominal).abs() < 1e-9)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Flat `metric,value` table; missing metrics are left empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["metric", "value"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record(["n_samples".to_string(), self.n_samples.to_string()])?;
        w.write_record(["mae".to_string(), opt(self.mae)])?;
        w.write_record(["rmse".to_string(), opt(self.rmse)])?;
        w.write_record(["mbe".to_string(), opt(self.mbe)])?;
        w.write_record(["crps".to_string(), opt(self.mean_crps)])?;
        for c in &self.coverage {
            let tag = format!("{:.4}", c.nominal);
            w.write_record([format!("picp@{tag}"), c.picp.to_string()])?;
            w.write_record([format!("pinaw@{tag}"), c.pinaw.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
