//! Run configuration, read from TOML.
//!
//! Every section has defaults, so an empty file is a valid configuration
//! apart from the seed, which must be given either in the file or on the
//! command line. The resolved configuration (after command-line overrides)
//! is hashed and the hash is stamped on every output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use solarprob::baselines::{AnnealSchedule, GpSettings, KernelKind, LubeSettings};
use solarprob::dataset::SplitSpec;
use solarprob::dists::{sigma_coverage, Family, ScoreRule};
use solarprob::ngboost::NgbConfig;
use solarprob::{Error, Result};

use crate::synthetic::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ngboost,
    Gp,
    Lube,
    Persistence,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Ngboost => "ngboost",
            ModelKind::Gp => "gp",
            ModelKind::Lube => "lube",
            ModelKind::Persistence => "persistence",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Input CSV; when absent the synthetic generator is used.
    pub path: Option<PathBuf>,
    /// Nominal plant power in MW used for scaling; defaults to the
    /// generator's rating or the maximum observed power.
    pub nominal_power: Option<f64>,
    /// Generator settings; its `seed` is replaced by the run seed.
    pub synthetic: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpSection {
    pub kernel: KernelKind,
    pub steps: usize,
    pub learning_rate: f64,
    pub max_rows: usize,
}

impl Default for GpSection {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Rq,
            steps: 60,
            learning_rate: 0.05,
            max_rows: 400,
        }
    }
}

impl GpSection {
    pub fn settings(&self) -> GpSettings {
        GpSettings {
            steps: self.steps,
            learning_rate: self.learning_rate,
            max_rows: self.max_rows,
            ..GpSettings::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LubeSection {
    pub width: usize,
    pub eta: f64,
    /// Nominal coverage in (0, 1).
    pub confidence: f64,
    pub cooling: f64,
    pub iterations_per_temperature: usize,
    pub step_size: f64,
    pub stop_ratio: f64,
    /// Training uses at most this many of the most recent rows.
    pub max_rows: usize,
}

impl Default for LubeSection {
    fn default() -> Self {
        Self {
            width: 20,
            eta: 50.0,
            confidence: 0.95,
            cooling: 0.9,
            iterations_per_temperature: 50,
            step_size: 0.05,
            stop_ratio: 1e-4,
            max_rows: 1000,
        }
    }
}

impl LubeSection {
    pub fn settings(&self, seed: u64) -> LubeSettings {
        LubeSettings {
            width: self.width,
            confidence: self.confidence,
            eta: self.eta,
            schedule: AnnealSchedule {
                initial_temperature: None,
                cooling: self.cooling,
                iterations_per_temperature: self.iterations_per_temperature,
                step_size: self.step_size,
                stop_ratio: self.stop_ratio,
                max_proposals: None,
                seed,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub test_year: i32,
    pub test_month: u32,
    #[serde(default = "default_train_months")]
    pub train_months: u32,
}

fn default_train_months() -> u32 {
    12
}

impl SplitConfig {
    pub fn spec(&self) -> Result<SplitSpec> {
        SplitSpec::month_after(self.test_year, self.test_month, self.train_months)
    }

    pub fn label(&self) -> String {
        format!("{}-{:02}", self.test_year, self.test_month)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    /// Hour of the day at which each day-ahead forecast is issued.
    pub origin_hour: u32,
    pub horizon_hours: u32,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self {
            origin_hour: 12,
            horizon_hours: 36,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSection {
    /// Features whose share of total mean |φ| (both heads) is below this are dropped.
    pub threshold: f64,
    /// Explanations use at most this many evenly spaced training rows.
    pub max_explain_rows: usize,
}

impl Default for PruneSection {
    fn default() -> Self {
        Self {
            threshold: 0.02,
            max_explain_rows: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    /// Rows of the test split explained (evenly spaced).
    pub max_rows: usize,
    /// Rows for which full interaction matrices are exported.
    pub interaction_rows: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            max_rows: 500,
            interaction_rows: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub depths: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub n_stages: Vec<usize>,
    pub families: Vec<Family>,
    pub scores: Vec<ScoreRule>,
    pub lube_widths: Vec<usize>,
    pub lube_etas: Vec<f64>,
    pub gp_kernels: Vec<KernelKind>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            depths: vec![3, 4, 5],
            learning_rates: vec![0.01, 0.05, 0.1],
            n_stages: vec![100, 500, 1000],
            families: vec![Family::Normal, Family::Laplace],
            scores: vec![ScoreRule::LogScore, ScoreRule::Crps],
            lube_widths: (1..=10).map(|k| 10 * k).collect(),
            lube_etas: (1..=9).map(|k| 10.0 * k as f64).collect(),
            gp_kernels: KernelKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub model: ModelKind,
    pub out_dir: PathBuf,
    pub data: DataSection,
    /// Lag steps (15 minutes each).
    pub lags: Vec<usize>,
    pub splits: Vec<SplitConfig>,
    /// Interval coverages in percent.
    pub coverage: Vec<f64>,
    pub pit_bins: usize,
    pub ngboost: NgbConfig,
    pub gp: GpSection,
    pub lube: LubeSection,
    pub forecast: ForecastSection,
    pub explain: ExplainSection,
    pub prune: PruneSection,
    pub grid: GridSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            model: ModelKind::Ngboost,
            out_dir: PathBuf::from("out"),
            data: DataSection::default(),
            lags: vec![1, 2, 3],
            splits: [1, 4, 7, 10]
                .into_iter()
                .map(|m| SplitConfig {
                    test_year: 2021,
                    test_month: m,
                    train_months: 12,
                })
                .collect(),
            coverage: [1.0, 2.0, 3.0]
                .into_iter()
                .map(|k| (sigma_coverage(k) * 1e4).round() / 100.0)
                .collect(),
            pit_bins: solarprob::metrics::DEFAULT_PIT_BINS,
            ngboost: NgbConfig::default(),
            gp: GpSection::default(),
            lube: LubeSection::default(),
            forecast: ForecastSection::default(),
            explain: ExplainSection::default(),
            prune: PruneSection::default(),
            grid: GridSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Domain(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Domain(format!("config not serializable: {e}")))
    }

    /// The run seed; configurations without one are rejected.
    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Domain("a seed is required (config `seed` or --seed)".into()))
    }

    /// Nominal coverages as fractions.
    pub fn coverages(&self) -> Vec<f64> {
        self.coverage.iter().map(|c| c / 100.0).collect()
    }

    pub fn split_specs(&self) -> Result<Vec<SplitSpec>> {
        self.splits.iter().map(SplitConfig::spec).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.ngboost.validate()?;
        self.data.synthetic.validate()?;
        if self.lags.is_empty() || self.lags.contains(&0) {
            return Err(Error::Domain("lags must be positive step counts".into()));
        }
        if self.splits.is_empty() {
            return Err(Error::Domain("at least one split is required".into()));
        }
        self.split_specs()?;
        if self.coverage.is_empty() || self.coverage.iter().any(|c| !(*c > 0.0 && *c < 100.0)) {
            return Err(Error::Domain("coverage levels must lie in (0, 100)".into()));
        }
        if self.pit_bins < 2 {
            return Err(Error::Domain("pit_bins must be at least 2".into()));
        }
        if self.forecast.horizon_hours == 0 || self.forecast.origin_hour > 23 {
            return Err(Error::Domain("invalid forecast origin or horizon".into()));
        }
        if !(0.0..1.0).contains(&self.prune.threshold) {
            return Err(Error::Domain("prune threshold must lie in [0, 1)".into()));
        }
        if !(self.lube.confidence > 0.0 && self.lube.confidence < 1.0) {
            return Err(Error::Domain("lube confidence must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form (first 16 characters).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_needs_only_a_seed() {
        let c = RunConfig::from_toml("").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::from_toml("seed = 7").unwrap();
        c.validate().unwrap();
        assert_eq!(c.coverage, vec![68.27, 95.45, 99.73]);
        assert_eq!(c.splits.len(), 4);
    }

    #[test]
    fn round_trip_and_hash() {
        let mut c = RunConfig::from_toml("seed = 1\nmodel = \"gp\"\n[gp]\nkernel = \"sum\"\n").unwrap();
        assert_eq!(c.gp.kernel, KernelKind::Sum);
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        let h = c.hash();
        assert_eq!(h.len(), 16);
        c.seed = Some(2);
        assert_ne!(c.hash(), h);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("seed = 1\nbogus = 3").is_err());
    }

    #[test]
    fn default_grid_sizes() {
        let g = GridSection::default();
        let ngb = g.depths.len() * g.learning_rates.len() * g.n_stages.len() * g.families.len() * g.scores.len();
        assert_eq!(ngb, 108);
        assert_eq!(g.lube_widths.len() * g.lube_etas.len(), 90);
        assert_eq!(g.gp_kernels.len(), 5);
    }
}
