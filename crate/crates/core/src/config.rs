//! Run configuration: every pipeline threshold in one place, loadable from a
//! TOML file. Defaults mirror the production values (400 m blocking radius,
//! 25% / 50,000 euro price gates, 0.5 duplicate threshold, 5/6 cluster edge
//! fraction, 14-day minimum listing duration, [0.5, 1.5] hedonic ratio band).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::LevelSchemes;
use crate::normalize::EmbeddingProvider;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub blocking: BlockingConfig,
    pub classifier: ClassifierConfig,
    pub cluster: ClusterConfig,
    pub filters: FilterConfig,
    pub embedding: EmbeddingProvider,
    pub schemes: LevelSchemes,
    /// Worker threads for the parallel stages; `None` = number of cores.
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("blocking.max_distance_m", self.blocking.max_distance_m),
            ("blocking.max_rel_price_gap", self.blocking.max_rel_price_gap),
            ("blocking.max_abs_price_gap", self.blocking.max_abs_price_gap),
            ("filters.hedonic_low", self.filters.hedonic_low),
            ("filters.hedonic_high", self.filters.hedonic_high),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(ConfigError::NotPositive { name, value });
            }
        }
        if !(self.classifier.threshold > 0.0 && self.classifier.threshold < 1.0) {
            return Err(ConfigError::NotPositive {
                name: "classifier.threshold",
                value: self.classifier.threshold,
            });
        }
        if self.cluster.min_edge_num == 0 || self.cluster.min_edge_den == 0 {
            return Err(ConfigError::NotPositive { name: "cluster.min_edge_fraction", value: 0.0 });
        }
        if self.filters.hedonic_low >= self.filters.hedonic_high {
            return Err(ConfigError::BadRange {
                name: "filters.hedonic",
                low: self.filters.hedonic_low,
                high: self.filters.hedonic_high,
            });
        }
        self.schemes.validate().map_err(ConfigError::Scheme)?;
        Ok(())
    }
}

/// Candidate-pair generation gates. A pair is kept when the geographic
/// distance is strictly below the radius and either price gate passes
/// strictly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockingConfig {
    pub max_distance_m: f64,
    /// Relative gap: |p1 - p2| / min(p1, p2).
    pub max_rel_price_gap: f64,
    /// Absolute gap in euro.
    pub max_abs_price_gap: f64,
}

impl Default for BlockingConfig {
    fn default() -> Self {
        BlockingConfig {
            max_distance_m: 400.0,
            max_rel_price_gap: 0.25,
            max_abs_price_gap: 50_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub min_leaf: usize,
    pub max_depth: usize,
    /// 0 disables boosting.
    pub boost_rounds: usize,
    pub prune: bool,
    pub pruning_confidence: f64,
    /// Pairs with duplicate probability strictly above this are duplicates.
    pub threshold: f64,
    /// Training pairs are subsampled to this many per model (0 = no cap).
    pub train_sample_cap: usize,
    /// Monte Carlo evaluation repetitions.
    pub eval_repetitions: usize,
    /// Training share of each Monte Carlo split.
    pub eval_train_fraction: f64,
    /// Evaluation pairs are subsampled to this many (0 = no cap).
    pub eval_sample_cap: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            min_leaf: 5,
            max_depth: 12,
            boost_rounds: 0,
            prune: true,
            pruning_confidence: 0.25,
            threshold: 0.5,
            train_sample_cap: 200_000,
            eval_repetitions: 100,
            eval_train_fraction: 0.9,
            eval_sample_cap: 20_000,
            seed: 17,
        }
    }
}

/// Internal-similarity condition: a cluster of N nodes is accepted when its
/// edge count reaches `num/den` of N(N-1)/2. Compared exactly in integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub min_edge_num: u64,
    pub min_edge_den: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { min_edge_num: 5, min_edge_den: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Drop exited units observed for fewer than this many days.
    pub min_duration_days: i64,
    /// Toggle for the hedonic price-consistency filter.
    pub hedonic: bool,
    pub hedonic_low: f64,
    pub hedonic_high: f64,
    /// Cities with fewer units than this keep all their units (no fit).
    pub hedonic_min_units_per_city: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_duration_days: 14,
            hedonic: true,
            hedonic_low: 0.5,
            hedonic_high: 1.5,
            hedonic_min_units_per_city: 50,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{name} must be positive, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("{name}: low {low} must be below high {high}")]
    BadRange { name: &'static str, low: f64, high: f64 },
    #[error(transparent)]
    Scheme(crate::model::SchemeError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let config = RunConfig::from_toml("").unwrap();
        assert_eq!(config, RunConfig::default());
        assert_eq!(config.blocking.max_distance_m, 400.0);
        assert_eq!(config.cluster.min_edge_num, 5);
        assert_eq!(config.cluster.min_edge_den, 6);
        assert_eq!(config.filters.min_duration_days, 14);
    }

    #[test]
    fn overrides_apply() {
        let config = RunConfig::from_toml(
            "[blocking]\nmax_distance_m = 250.0\n\n[classifier]\nthreshold = 0.6\n",
        )
        .unwrap();
        assert_eq!(config.blocking.max_distance_m, 250.0);
        assert_eq!(config.classifier.threshold, 0.6);
        assert_eq!(config.blocking.max_rel_price_gap, 0.25);
    }

    #[test]
    fn scheme_override_applies() {
        let config = RunConfig::from_toml(
            "[schemes.maintenance]\ntrait_name = \"maintenance\"\nlabels = [\"bad\", \"ok\", \"great\"]\n",
        )
        .unwrap();
        assert_eq!(config.schemes.maintenance.levels(), 3);
        assert_eq!(config.schemes.maintenance.level_of("great"), Some(3));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[blocking]\nmax_distance_m = -1.0\n").is_err());
        assert!(RunConfig::from_toml("[classifier]\nthreshold = 1.5\n").is_err());
        assert!(RunConfig::from_toml("[filters]\nhedonic_low = 2.0\n").is_err());
        assert!(RunConfig::from_toml("not toml at all [").is_err());
    }
}
