//! Run configuration: a TOML file whose values command-line flags override.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use udcg_core::trainer::TrainerConfig;
use udcg_core::utility::provider::{ApiFlavor, HttpProviderConfig};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub k: Option<usize>,
    pub gamma: Option<f64>,
    pub theta: Option<PathBuf>,
    pub metrics: Option<Vec<String>>,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub provider: ProviderSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub simulate: SimulateSettings,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub questions: Option<PathBuf>,
    pub passages: Option<PathBuf>,
    pub judgments: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub contexts: Option<PathBuf>,
    pub rankings: Option<PathBuf>,
    pub held_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    /// `constant:<p>`, `table:<path>` or `http`.
    pub spec: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub flavor: ApiFlavor,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub concurrency: usize,
    pub max_attempts: usize,
    pub backoff_ms: u64,
    pub top_logprobs: usize,
    pub samples: Option<usize>,
    pub temperature: f64,
    pub timeout_secs: u64,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        ProviderSettings {
            spec: None,
            endpoint: None,
            model: None,
            flavor: ApiFlavor::default(),
            api_key_env: None,
            cache_dir: None,
            concurrency: 1,
            max_attempts: 3,
            backoff_ms: 500,
            top_logprobs: 20,
            samples: None,
            temperature: 0.0,
            timeout_secs: 60,
        }
    }
}

impl ProviderSettings {
    pub fn http_config(&self) -> Result<HttpProviderConfig> {
        let Some(endpoint) = self.endpoint.clone() else {
            bail!("http provider needs provider.endpoint in the config file");
        };
        Ok(HttpProviderConfig {
            endpoint,
            model: self.model.clone().unwrap_or_default(),
            flavor: self.flavor,
            top_logprobs: self.top_logprobs,
            samples: self.samples,
            temperature: self.temperature,
            timeout_secs: self.timeout_secs,
        })
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub regularization_c: Option<f64>,
    pub max_epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub tolerance: Option<f64>,
    pub batch_size: Option<usize>,
}

impl TrainSettings {
    pub fn trainer_config(&self, seed: u64) -> TrainerConfig {
        let d = TrainerConfig::default();
        TrainerConfig {
            regularization_c: self.regularization_c.unwrap_or(d.regularization_c),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            seed,
            tolerance: self.tolerance.unwrap_or(d.tolerance),
            margin: d.margin,
            batch_size: self.batch_size.unwrap_or(d.batch_size),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub questions: usize,
    pub contexts: usize,
    pub k_values: Vec<usize>,
    pub attention: Option<Vec<f64>>,
    pub distraction_gain: f64,
    pub relevant_utility: f64,
    pub distractor_utility: f64,
    pub weak_utility: f64,
    pub hard_utility: f64,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings {
            questions: 300,
            contexts: 10,
            k_values: (1..=10).collect(),
            attention: None,
            distraction_gain: udcg_core::harness::simulator::DEFAULT_DISTRACTION_GAIN,
            relevant_utility: 0.9,
            distractor_utility: -0.5,
            weak_utility: -0.1,
            hard_utility: -0.9,
        }
    }
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_file() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 3
            k = 4
            metrics = ["ndcg", "udcg"]
            [data]
            contexts = "c.jsonl"
            [provider]
            spec = "constant:0.5"
            concurrency = 4
            [train]
            max_epochs = 10
            [simulate]
            questions = 20
            k_values = [1, 2]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.provider.concurrency, 4);
        assert_eq!(cfg.provider.max_attempts, 3);
        assert_eq!(cfg.simulate.contexts, 10);
        assert_eq!(cfg.train.trainer_config(1).max_epochs, 10);
        assert_eq!(cfg.simulate.k_values, vec![1, 2]);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(toml::from_str::<RunConfig>("sede = 3").is_err());
    }
}
