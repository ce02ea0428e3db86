//! Service configuration, read from a single TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorBackend {
    Rules,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierBackend {
    Baseline,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    pub backend: ExtractorBackend,
    pub beam_width: u32,
    pub max_tokens: u32,
    pub min_confidence: f64,
    pub max_confidence: f64,
    pub max_in_flight: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            backend: ExtractorBackend::Rules,
            beam_width: 4,
            max_tokens: 64,
            min_confidence: 0.5,
            max_confidence: 1.0,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub backend: ClassifierBackend,
    pub seed: u64,
    /// Temperature applied to remote logits.
    pub remote_temperature: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            backend: ClassifierBackend::Baseline,
            seed: 7,
            remote_temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryConfig {
    pub attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay_ms: 250,
            max_delay_ms: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data_dir: PathBuf,
    /// Directory holding `corpus/event.csv`, `corpus/stats.csv` and the
    /// optional dictionary, lexicon and gazetteer overrides.
    pub fixtures_dir: PathBuf,
    pub bind: String,
    pub api_token: Option<String>,
    pub trigger_magnitude: f64,
    pub cadence_minutes: u32,
    pub auto_approve: bool,
    pub independence_window: usize,
    /// Run batches for live events on the cadence while serving.
    pub schedule: bool,
    pub classifier: ClassifierConfig,
    pub extractor: ExtractorConfig,
    pub retry: RetryConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            fixtures_dir: PathBuf::from("fixtures"),
            bind: "127.0.0.1:8080".into(),
            api_token: None,
            trigger_magnitude: 5.5,
            cadence_minutes: 30,
            auto_approve: false,
            independence_window: 1000,
            schedule: false,
            classifier: ClassifierConfig::default(),
            extractor: ExtractorConfig::default(),
            retry: RetryConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        let config: Config =
            toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`; relative directories in the file resolve against the
    /// file's own directory.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            for dir in [&mut config.data_dir, &mut config.fixtures_dir] {
                if dir.is_relative() {
                    *dir = base.join(&*dir);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.cadence_minutes == 0 {
            return Err(ServiceError::Config("cadence_minutes must be positive".into()));
        }
        let (lo, hi) = (self.extractor.min_confidence, self.extractor.max_confidence);
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(ServiceError::Config(format!(
                "confidence range [{lo}, {hi}] must lie in [0, 1]"
            )));
        }
        if self.extractor.beam_width == 0 {
            return Err(ServiceError::Config("beam_width must be at least 1".into()));
        }
        Ok(())
    }

    pub fn cadence(&self) -> chrono::TimeDelta {
        chrono::TimeDelta::minutes(self.cadence_minutes as i64)
    }
}
