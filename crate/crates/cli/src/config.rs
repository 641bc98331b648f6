//! Run configuration: built from flags, then overridden by an optional
//! TOML or JSON file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use survey_sim::cohorts::SamplingStrategy;
use survey_sim::experiment::{Method, PersonalityStrategy};
use survey_sim::gateway::{GenerationConfig, DEFAULT_API_KEY_ENV};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub retries: u32,
    pub parallelism: usize,
    pub timeout_secs: u64,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    /// Send stage context as `tool` messages; when false it is folded into
    /// the preceding user message (for endpoints that reject bare tool turns).
    pub tool_role: bool,
    /// Embedding model for opinion retrieval; token overlap when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_model: Option<String>,
    /// Replay replies from this script instead of calling an endpoint.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        let g = GenerationConfig::default();
        BackendConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: g.model_name,
            temperature: g.temperature,
            max_tokens: g.max_tokens,
            retries: g.retries,
            parallelism: g.parallelism,
            timeout_secs: g.request_timeout_secs,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            tool_role: g.tool_role,
            embedding_model: None,
            mock_script: None,
        }
    }
}

impl BackendConfig {
    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            model_name: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            retries: self.retries,
            parallelism: self.parallelism.max(1),
            request_timeout_secs: self.timeout_secs,
            tool_role: self.tool_role,
            backoff_ms: if self.mock_script.is_some() { 0 } else { GenerationConfig::default().backoff_ms },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Subjects to simulate (usually the sampled representatives).
    pub respondents: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    /// Whole population, for the global evaluation setting.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub k_min: usize,
    pub k_max: usize,
    /// Skip the silhouette scan.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub sampling: SamplingStrategy,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            k_min: 2,
            k_max: 30,
            k: None,
            sampling: SamplingStrategy::RandomN(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendConfig,
    pub paths: PathsConfig,
    pub method: Method,
    pub personality_strategy: PersonalityStrategy,
    pub locale: String,
    pub seed: u64,
    pub negative_threshold: f64,
    pub clustering: ClusteringConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: BackendConfig::default(),
            paths: PathsConfig::default(),
            method: Method::Mark,
            personality_strategy: PersonalityStrategy::Predicted,
            locale: "en".into(),
            seed: 0,
            negative_threshold: 70.0,
            clustering: ClusteringConfig::default(),
        }
    }
}

/// Recursively overlays `top` onto `base`; objects merge key by key,
/// anything else is replaced.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    // a tagged enum is replaced whole so stale variant fields do not linger
                    Some(slot) if slot.is_object() && v.is_object() && v.get("kind").is_none() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

pub fn read_config_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str::<Value>(&text).with_context(|| format!("parsing {}", path.display()))?,
        Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        _ => bail!("config file {} must end in .toml or .json", path.display()),
    };
    Ok(value)
}

impl RunConfig {
    /// `flags` already holds the command-line values; the file wins.
    pub fn resolve(flags: RunConfig, file: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = file else { return Ok(flags) };
        let mut merged = serde_json::to_value(&flags)?;
        merge(&mut merged, read_config_file(path)?);
        let config: RunConfig =
            serde_json::from_value(merged).with_context(|| format!("invalid configuration in {}", path.display()))?;
        Ok(config)
    }

    pub fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        match path {
            Some(p) => Ok(p),
            None => bail!("no {what} path given (flag or config file)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn file_overrides_flags_field_by_field() {
        let mut flags = RunConfig {
            seed: 1,
            method: Method::Ablation {
                stage: survey_sim::dynamics::ProcessStage::Dominant,
            },
            ..RunConfig::default()
        };
        flags.backend.model = "flag-model".into();
        let mut merged = serde_json::to_value(&flags).unwrap();
        merge(
            &mut merged,
            json!({"seed": 7, "backend": {"temperature": 0.0}, "method": {"kind": "mark"}}),
        );
        let cfg: RunConfig = serde_json::from_value(merged).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.backend.model, "flag-model");
        assert_eq!(cfg.backend.temperature, 0.0);
        assert_eq!(cfg.method, Method::Mark);
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
seed = 3
personality_strategy = { kind = "random" }

[method]
kind = "baseline"
spec = { name = "nation_only_a", nation = "Japan" }

[backend]
model = "m"
"#;
        let file: Value = toml::from_str(text).unwrap();
        let mut merged = serde_json::to_value(RunConfig::default()).unwrap();
        merge(&mut merged, file);
        let cfg: RunConfig = serde_json::from_value(merged).unwrap();
        assert_eq!(cfg.method.label(), "baseline_nation_only_a");
        assert_eq!(cfg.personality_strategy, PersonalityStrategy::Random { seed: None });
        assert_eq!(cfg.backend.generation().model_name, "m");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut merged = serde_json::to_value(RunConfig::default()).unwrap();
        merge(&mut merged, json!({"sede": 3}));
        assert!(serde_json::from_value::<RunConfig>(merged).is_err());
    }

    #[test]
    fn readme_example_parses() {
        let readme = include_str!("../../../README.md");
        let block = readme
            .split("```toml\n")
            .nth(1)
            .and_then(|rest| rest.split("```").next())
            .expect("toml block");
        let mut merged = serde_json::to_value(RunConfig::default()).unwrap();
        merge(&mut merged, toml::from_str(block).unwrap());
        let cfg: RunConfig = serde_json::from_value(merged).unwrap();
        assert_eq!(cfg.method.label(), "baseline_demo_ideo_opinion");
        assert_eq!(cfg.backend.parallelism, 8);
    }
}
