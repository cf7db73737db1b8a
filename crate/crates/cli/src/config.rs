//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use vidcast_core::data::{self, DEFAULT_LAG, DEFAULT_VAL_FRACTION};
use vidcast_core::evaluation::{ZeroPolicy, DEFAULT_LAMBDAS};
use vidcast_core::imaging::{DEFAULT_IMAGE_SIZE, DEFAULT_SHUFFLE_CANDIDATES, REFERENCE_ARRANGEMENT};
use vidcast_core::model::{ModelConfig, PredictMode, TrainConfig};

use crate::CliError;

pub const ALL_METHODS: [&str; 8] = [
    "video_full",
    "video_ind",
    "video_shuffled",
    "video_scatter",
    "vector",
    "ar",
    "persistence",
    "naive_up",
];

pub const LAYOUT_VARIANTS: [&str; 5] = ["grid", "single", "shuffled", "scatter", "vector"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub data: DataSection,
    pub layout: LayoutSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub benchmark: BenchmarkSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Close prices from `path`.
    Csv,
    /// Nine tickers from a three-factor price model.
    SyntheticMarket,
    /// Nine tickers coupled around a ring, generated directly as changes.
    SyntheticRing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    pub assets: Vec<String>,
    pub lag: usize,
    pub min_rows: usize,
    pub train_val_end: NaiveDate,
    pub test_start: NaiveDate,
    pub val_fraction: f64,
    /// Row-count split instead of dates: the trailing fraction becomes test.
    pub test_fraction: Option<f64>,
    pub window_stride: usize,
    pub length: usize,
    pub coupling: f64,
    pub noise_std: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Csv,
            path: None,
            assets: REFERENCE_ARRANGEMENT.iter().flatten().map(|s| s.to_string()).collect(),
            lag: DEFAULT_LAG,
            min_rows: 30,
            train_val_end: data::default_train_val_end(),
            test_start: data::default_test_start(),
            val_fraction: DEFAULT_VAL_FRACTION,
            test_fraction: None,
            window_stride: 1,
            length: 2400,
            coupling: 0.7,
            noise_std: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutSection {
    pub image_size: (usize, usize),
    pub shuffle_candidates: usize,
    /// Variants written by `render`.
    pub variants: Vec<String>,
}

impl Default for LayoutSection {
    fn default() -> Self {
        Self {
            image_size: DEFAULT_IMAGE_SIZE,
            shuffle_candidates: DEFAULT_SHUFFLE_CANDIDATES,
            variants: vec!["grid".into(), "scatter".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Method fitted by `train`.
    pub method: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            method: "video_full".into(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub methods: Vec<String>,
    pub lambdas: Vec<f64>,
    pub zero_policy: ZeroPolicy,
    pub ar_max_order: usize,
    pub predict_mode: PredictMode,
    pub n_samples: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            methods: ALL_METHODS.iter().map(|s| s.to_string()).collect(),
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            zero_policy: ZeroPolicy::default(),
            ar_max_order: vidcast_core::baselines::DEFAULT_MAX_ORDER,
            predict_mode: PredictMode::Mean,
            n_samples: 16,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Config::from_toml(&text)
    }

    /// Canonical text of the effective configuration; hashed into manifests.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        for m in self.benchmark.methods.iter().chain(std::iter::once(&self.train.method)) {
            if !ALL_METHODS.contains(&m.as_str()) {
                return usage(format!("unknown method `{m}`; expected one of {ALL_METHODS:?}"));
            }
        }
        for v in &self.layout.variants {
            if !LAYOUT_VARIANTS.contains(&v.as_str()) {
                return usage(format!("unknown layout variant `{v}`; expected one of {LAYOUT_VARIANTS:?}"));
            }
        }
        if self.benchmark.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return usage("lambdas must be >= 0".into());
        }
        if self.data.source == DataSource::Csv && self.data.path.is_none() {
            return usage("data.path is required for the csv source".into());
        }
        if self.data.window_stride == 0 {
            return usage("data.window_stride must be positive".into());
        }
        let model = ModelConfig {
            image_size: self.layout.image_size,
            ..self.model.clone()
        };
        model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.train
            .to_train_config()
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    /// Model config with the image size taken from `[layout]`.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            image_size: self.layout.image_size,
            ..self.model.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = Config {
            data: DataSection {
                source: DataSource::SyntheticRing,
                ..DataSection::default()
            },
            ..Config::default()
        };
        let back = Config::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.model.d_y, 50);
        assert_eq!(back.benchmark.lambdas, vec![0.5, 10.0]);
    }

    #[test]
    fn unknown_keys_and_methods_are_usage_errors() {
        assert!(matches!(Config::from_toml("bogus = 1"), Err(CliError::Usage(_))));
        let text = "[data]\nsource = \"synthetic_ring\"\n[benchmark]\nmethods = [\"prophet\"]\n";
        assert!(matches!(Config::from_toml(text), Err(CliError::Usage(_))));
        assert!(matches!(Config::from_toml(""), Err(CliError::Usage(_))));
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for name in ["synthetic_ring.toml", "market.toml"] {
            Config::load(&dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}
