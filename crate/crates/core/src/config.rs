//! TOML run configuration.
//!
//! ```toml
//! [data]
//! panel = "data/wili.csv"
//!
//! [sampler]
//! mode = "production"
//! seed = 20151
//!
//! [plan]
//! seasons = [2015]
//! vintage = "final"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backtest::{BacktestPlan, VintagePolicy};
use crate::data::fetch::FetchConfig;
use crate::data::panel::{ParseOptions, Units, PANDEMIC_SEASONS};
use crate::data::SEASON_WEEKS;
use crate::error::{Error, Result};
use crate::forecast::{BASELINE, FIRST_FIT_WEEK, LAST_FIT_WEEK};
use crate::mcmc::{SamplerConfig, SamplerMode};
use crate::model::DataModelConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataSection,
    pub model: DataModelConfig,
    pub sampler: SamplerSection,
    pub plan: PlanSection,
    pub paths: PathsSection,
    pub fetch: FetchSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Panel file; may carry an `issue` column.
    pub panel: Option<PathBuf>,
    /// `auto`, `proportion` or `percent`.
    pub units: String,
    pub exclude_seasons: Vec<i32>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { panel: None, units: "auto".into(), exclude_seasons: PANDEMIC_SEASONS.to_vec() }
    }
}

/// A preset mode, optionally overridden field by field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub mode: SamplerMode,
    pub seed: u64,
    pub n_chains: Option<usize>,
    pub n_iter: Option<usize>,
    pub burn_in_fraction: Option<f64>,
    pub thin: Option<usize>,
    pub adapt_window: Option<usize>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            mode: SamplerMode::Production,
            seed: 1,
            n_chains: None,
            n_iter: None,
            burn_in_fraction: None,
            thin: None,
            adapt_window: None,
        }
    }
}

impl SamplerSection {
    pub fn resolve(&self) -> SamplerConfig {
        let base = SamplerConfig::for_mode(self.mode, self.seed);
        SamplerConfig {
            n_chains: self.n_chains.unwrap_or(base.n_chains),
            n_iter: self.n_iter.unwrap_or(base.n_iter),
            burn_in_fraction: self.burn_in_fraction.unwrap_or(base.burn_in_fraction),
            thin: self.thin.unwrap_or(base.thin),
            adapt_window: self.adapt_window.unwrap_or(base.adapt_window),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub seasons: Vec<i32>,
    pub first_week: usize,
    pub last_week: usize,
    pub vintage: VintagePolicy,
    pub level: f64,
    pub baseline: f64,
    pub floor: Option<f64>,
    pub workers: usize,
    /// Fixed prior file; refit per season when absent.
    pub prior: Option<PathBuf>,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            seasons: Vec::new(),
            first_week: FIRST_FIT_WEEK,
            last_week: LAST_FIT_WEEK,
            vintage: VintagePolicy::Final,
            level: 0.95,
            baseline: BASELINE,
            floor: None,
            workers: 1,
            prior: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub out: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self { out: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FetchSection {
    pub endpoint: Option<String>,
    pub timeout_secs: Option<u64>,
    pub cache_dir: PathBuf,
    pub region: String,
}

impl Default for FetchSection {
    fn default() -> Self {
        Self { endpoint: None, timeout_secs: None, cache_dir: PathBuf::from("cache"), region: "nat".into() }
    }
}

impl Config {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.weeks != SEASON_WEEKS {
            return Err(Error::Config(format!("model.weeks must be {SEASON_WEEKS}")));
        }
        self.units()?;
        self.sampler.resolve().validate()?;
        self.plan(self.sampler.resolve()).validate()
    }

    pub fn units(&self) -> Result<Units> {
        match self.data.units.to_ascii_lowercase().as_str() {
            "auto" => Ok(Units::Auto),
            "proportion" => Ok(Units::Proportion),
            "percent" => Ok(Units::Percent),
            other => Err(Error::Config(format!("unknown units {other:?}"))),
        }
    }

    pub fn parse_options(&self) -> Result<ParseOptions> {
        Ok(ParseOptions { weeks: self.model.weeks, units: self.units()?, exclude_seasons: self.data.exclude_seasons.clone() })
    }

    pub fn plan(&self, sampler: SamplerConfig) -> BacktestPlan {
        let p = &self.plan;
        BacktestPlan {
            seasons: p.seasons.clone(),
            first_week: p.first_week,
            last_week: p.last_week,
            sampler,
            model: self.model.clone(),
            vintage: p.vintage,
            level: p.level,
            baseline: p.baseline,
            floor: p.floor,
            workers: p.workers,
        }
    }

    /// Fetch settings: config values, then environment overrides.
    pub fn fetch_config(&self) -> FetchConfig {
        let mut f = FetchConfig { cache_dir: self.fetch.cache_dir.clone(), ..FetchConfig::default() };
        if let Some(e) = &self.fetch.endpoint {
            f.endpoint = e.clone();
        }
        if let Some(t) = self.fetch.timeout_secs {
            f.timeout_secs = t;
        }
        f.with_env()
    }
}
