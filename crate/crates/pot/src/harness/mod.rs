//! Experiment harness: dataset loading, resumable runs, judging, and
//! run-to-run comparison.

mod compare;
mod dataset;
mod experiment;

pub use compare::{compare_runs, read_scores, CategoryComparison, ComparisonReport};
pub use dataset::{load_dataset, DatasetSchema};
pub use experiment::{
    judge_run, replay_experiment, run_experiment, stats_for_run, ResultRecord, RunOutcome,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregate::AggregateError;
use crate::baselines::{BaselineError, TotConfig};
use crate::domain::SamplingParams;
use crate::eval::EvalError;
use crate::llm::{
    Backend, CachedBackend, ContextLimited, HttpBackendConfig, LiveHttpBackend, LlmError,
    OfflineBackend, ResponseCache, Retrying, RetryPolicy, DEFAULT_CONTEXT_LIMIT,
};
use crate::pathway::{PathwayError, PotConfig};
use crate::prompts::PromptError;

/// Which system answers the questions of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pot,
    NoPersonalization,
    InContext,
    InContextCot,
    BestOfK,
    Tot,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Pot => "pot",
            Method::NoPersonalization => "no_personalization",
            Method::InContext => "in_context",
            Method::InContextCot => "in_context_cot",
            Method::BestOfK => "best_of_k",
            Method::Tot => "tot",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace('-', "_").as_str() {
            "pot" => Ok(Method::Pot),
            "no_personalization" => Ok(Method::NoPersonalization),
            "in_context" => Ok(Method::InContext),
            "in_context_cot" => Ok(Method::InContextCot),
            "best_of_k" => Ok(Method::BestOfK),
            "tot" => Ok(Method::Tot),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

/// Where completions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// HTTP endpoint behind cache, context check, and retries.
    Live,
    /// Cache only; any miss is an error.
    Replay,
}

/// Backend stack settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSettings {
    pub kind: BackendKind,
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub context_limit: usize,
    pub retry_max: u32,
    /// Response cache file; `<output_dir>/cache.jsonl` when unset.
    pub cache_path: Option<PathBuf>,
}

impl Default for BackendSettings {
    fn default() -> Self {
        let http = HttpBackendConfig::default();
        BackendSettings {
            kind: BackendKind::Live,
            base_url: http.base_url,
            model: http.model,
            api_key_env: http.api_key_env,
            timeout_secs: http.timeout_secs,
            context_limit: DEFAULT_CONTEXT_LIMIT,
            retry_max: 5,
            cache_path: None,
        }
    }
}

/// Judge decoding and retry settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeSettings {
    pub sampling: SamplingParams,
    pub retry_max: u32,
}

impl Default for JudgeSettings {
    fn default() -> Self {
        JudgeSettings {
            sampling: SamplingParams {
                temperature: 0.0,
                max_output_tokens: 64,
                ..SamplingParams::default()
            },
            retry_max: 3,
        }
    }
}

/// Everything one experiment needs, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub dataset_path: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub pot: PotConfig,
    #[serde(default)]
    pub tot: TotConfig,
    /// Sample count for the Best-of-K baseline.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Whether Best-of-K samples use the reason-then-answer prompt.
    #[serde(default = "default_true")]
    pub best_of_k_cot: bool,
    /// Worker threads for questions and pathways (1 = sequential).
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Keep only the most recent entries of each profile.
    #[serde(default = "default_profile_limit")]
    pub profile_limit: usize,
    #[serde(default)]
    pub backend: BackendSettings,
    #[serde(default)]
    pub judge: JudgeSettings,
    /// Optional JSON file remapping dataset field names.
    #[serde(default)]
    pub schema_path: Option<PathBuf>,
}

fn default_k() -> usize {
    32
}

fn default_true() -> bool {
    true
}

fn default_parallelism() -> usize {
    1
}

fn default_profile_limit() -> usize {
    10
}

impl ExperimentConfig {
    pub fn new(method: Method, dataset_path: PathBuf, output_dir: PathBuf) -> Self {
        ExperimentConfig {
            method,
            dataset_path,
            output_dir,
            pot: PotConfig::default(),
            tot: TotConfig::default(),
            k: default_k(),
            best_of_k_cot: default_true(),
            parallelism: default_parallelism(),
            profile_limit: default_profile_limit(),
            backend: BackendSettings::default(),
            judge: JudgeSettings::default(),
            schema_path: None,
        }
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, HarnessError> {
        let raw = std::fs::read_to_string(path)?;
        toml::from_str(&raw).map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.profile_limit == 0 {
            return Err(HarnessError::InvalidConfig("profile_limit must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(HarnessError::InvalidConfig("parallelism must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(HarnessError::InvalidConfig("k must be at least 1".into()));
        }
        self.pot
            .validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    /// The effective response-cache path.
    pub fn cache_path(&self) -> PathBuf {
        self.backend
            .cache_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache.jsonl"))
    }
}

/// Builds the configured backend stack: a live stack is
/// cache(context-check(retry(http))), a replay stack serves the cache only.
pub fn build_backend(config: &ExperimentConfig) -> Result<Box<dyn Backend>, HarnessError> {
    let cache = ResponseCache::open(&config.cache_path())?;
    let settings = &config.backend;
    match settings.kind {
        BackendKind::Live => {
            let http = LiveHttpBackend::new(HttpBackendConfig {
                base_url: settings.base_url.clone(),
                model: settings.model.clone(),
                api_key_env: settings.api_key_env.clone(),
                timeout_secs: settings.timeout_secs,
            })?;
            let retrying = Retrying::new(
                http,
                RetryPolicy {
                    max_attempts: settings.retry_max,
                    ..RetryPolicy::default()
                },
            );
            let limited = ContextLimited::new(retrying, settings.context_limit);
            Ok(Box::new(CachedBackend::new(limited, cache)))
        }
        BackendKind::Replay => Ok(Box::new(CachedBackend::new(OfflineBackend, cache))),
    }
}

/// Record of one completed run: everything needed to replay it from cache.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub method: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub template_hashes: BTreeMap<String, String>,
    pub cache_path: PathBuf,
    pub started_at: String,
    pub finished_at: String,
    /// Question ids with a written result, sorted.
    pub completed: Vec<String>,
    /// Question id to error message for questions that failed.
    pub failed: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("dataset not found: {0}")]
    DatasetNotFound(PathBuf),
    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("runs cover different questions: {0}")]
    QuestionSetMismatch(String),
    #[error("run directory is missing {0}")]
    MissingRunArtifact(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Pathway(#[from] PathwayError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_method_names_roundtrip() {
        for method in [
            Method::Pot,
            Method::NoPersonalization,
            Method::InContext,
            Method::InContextCot,
            Method::BestOfK,
            Method::Tot,
        ] {
            assert_eq!(Method::from_str(method.name()).unwrap(), method);
        }
        assert_eq!(Method::from_str("in-context-cot").unwrap(), Method::InContextCot);
        assert!(Method::from_str("telepathy").is_err());
    }

    #[test]
    fn test_config_toml_roundtrip_with_defaults() {
        let raw = r#"
            method = "pot"
            dataset_path = "data/questions.jsonl"
            output_dir = "runs/demo"

            [pot]
            pathways = 4
            max_actions = 6
            seed = 11

            [backend]
            kind = "replay"
        "#;
        let config: ExperimentConfig = toml::from_str(raw).unwrap();
        assert_eq!(config.method, Method::Pot);
        assert_eq!(config.pot.pathways, 4);
        assert_eq!(config.pot.max_actions, 6);
        assert_eq!(config.pot.tau, 0.9, "unset fields keep defaults");
        assert_eq!(config.k, 32);
        assert_eq!(config.profile_limit, 10);
        assert_eq!(config.backend.kind, BackendKind::Replay);
        assert_eq!(config.backend.retry_max, 5);
        assert_eq!(config.judge.retry_max, 3);
        assert_eq!(config.judge.sampling.temperature, 0.0);

        let serialized = toml::to_string(&config).unwrap();
        let back: ExperimentConfig = toml::from_str(&serialized).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn test_config_validation() {
        let mut config = ExperimentConfig::new(
            Method::Pot,
            PathBuf::from("data.jsonl"),
            PathBuf::from("out"),
        );
        assert!(config.validate().is_ok());
        config.profile_limit = 0;
        assert!(config.validate().is_err());
        config.profile_limit = 10;
        config.pot.pathways = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn test_cache_path_defaults_into_output_dir() {
        let config = ExperimentConfig::new(
            Method::Pot,
            PathBuf::from("data.jsonl"),
            PathBuf::from("runs/a"),
        );
        assert_eq!(config.cache_path(), PathBuf::from("runs/a/cache.jsonl"));
        let mut custom = config.clone();
        custom.backend.cache_path = Some(PathBuf::from("/tmp/shared.jsonl"));
        assert_eq!(custom.cache_path(), PathBuf::from("/tmp/shared.jsonl"));
    }
}
