//! Application configuration.
//!
//! Values resolve per field: command-line override, then environment
//! variable `FINRAG_<SECTION>_<KEY>`, then config file, then default.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::agent::{AgentConfig, RouterMode};
use crate::corpus::ChunkConfig;
use crate::embed::EmbeddingProviderConfig;
use crate::index::HybridConfig;
use crate::llm::{BackendSpec, ChatConfig, CostModel};
use crate::mining::ContrastiveConfig;
use crate::reason::sandbox::DEFAULT_TIMEOUT_MS;
use crate::reason::{ExecLimits, PotConfig};
use crate::router::RouterModel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown config key {0}")]
    UnknownKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub max_iterations: usize,
    pub confidence_threshold: f64,
    pub beta: f64,
    pub buffer_capacity: usize,
    pub turn_prune_size: usize,
}

impl Default for AgentSection {
    fn default() -> Self {
        let a = AgentConfig::default();
        AgentSection {
            max_iterations: a.max_iterations,
            confidence_threshold: a.confidence_threshold,
            beta: a.beta,
            buffer_capacity: a.buffer_capacity,
            turn_prune_size: a.turn_prune_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub chunk_size_tokens: usize,
    pub overlap_tokens: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let c = ChunkConfig::default();
        CorpusSection { chunk_size_tokens: c.chunk_size_tokens, overlap_tokens: c.overlap_tokens }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningSection {
    pub tau: f64,
}

impl Default for MiningSection {
    fn default() -> Self {
        MiningSection { tau: ContrastiveConfig::default().tau }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReasonSection {
    pub max_repairs: u32,
    pub exec_timeout_ms: u64,
}

impl Default for ReasonSection {
    fn default() -> Self {
        ReasonSection { max_repairs: 2, exec_timeout_ms: DEFAULT_TIMEOUT_MS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouterSection {
    /// off, heuristic, model or force_simple.
    pub mode: String,
    /// Trained model file; required when mode is `model`.
    pub model_path: String,
}

impl Default for RouterSection {
    fn default() -> Self {
        RouterSection { mode: "heuristic".into(), model_path: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    /// `http` or `scripted:<rules file>`.
    pub backend: String,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

impl Default for LlmSection {
    fn default() -> Self {
        let c = ChatConfig::default();
        let m = CostModel::default();
        LlmSection {
            backend: "http".into(),
            endpoint: c.endpoint,
            model: c.model,
            api_key_env: c.api_key_env,
            timeout_secs: c.timeout_secs,
            input_per_1k: m.input_per_1k,
            output_per_1k: m.output_per_1k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub corpus: String,
    pub index: String,
    pub calibration: String,
    /// Replacement financial-term lexicon; empty means the built-in one.
    pub lexicon: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub workers: usize,
    pub seed: u64,
    pub n_boot: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { workers: 1, seed: 42, n_boot: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub agent: AgentSection,
    pub retrieval: HybridConfig,
    pub corpus: CorpusSection,
    pub mining: MiningSection,
    pub reason: ReasonSection,
    pub router: RouterSection,
    pub llm: LlmSection,
    pub embedding: EmbeddingProviderConfig,
    pub paths: PathsSection,
    pub eval: EvalSection,
}

/// Where a field's value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub config: AppConfig,
    /// Keyed `section.key`, for every field set by a non-default layer.
    pub sources: BTreeMap<String, Source>,
}

impl ResolvedConfig {
    pub fn source(&self, key: &str) -> Source {
        self.sources.get(key).copied().unwrap_or(Source::Default)
    }
}

/// Optional fields, absent from the serialized defaults.
const OPTIONAL_KEYS: [(&str, &str); 4] =
    [("embedding", "endpoint"), ("embedding", "model"), ("embedding", "auth_env"), ("embedding", "cache_path")];

pub fn env_var_name(section: &str, key: &str) -> String {
    format!("FINRAG_{}_{}", section.to_uppercase(), key.to_uppercase())
}

fn defaults_table() -> Table {
    Table::try_from(AppConfig::default()).expect("defaults serialize")
}

/// Every `(section, key)` the config accepts.
pub fn known_keys() -> Vec<(String, String)> {
    let mut keys: Vec<(String, String)> = defaults_table()
        .iter()
        .flat_map(|(s, v)| v.as_table().into_iter().flat_map(move |t| t.keys().map(move |k| (s.clone(), k.clone()))))
        .collect();
    keys.extend(OPTIONAL_KEYS.iter().map(|(s, k)| (s.to_string(), k.to_string())));
    keys.sort();
    keys.dedup();
    keys
}

/// A scalar given as text: TOML literal if it parses, string otherwise,
/// coerced toward the type of the default.
fn parse_scalar(raw: &str, default: Option<&Value>) -> Value {
    if matches!(default, Some(Value::String(_)) | None) {
        return Value::String(raw.to_string());
    }
    let parsed = toml::from_str::<Table>(&format!("v = {raw}")).ok().and_then(|mut t| t.remove("v"));
    match (parsed, default) {
        (Some(Value::Integer(i)), Some(Value::Float(_))) => Value::Float(i as f64),
        (Some(v), _) => v,
        (None, _) => Value::String(raw.to_string()),
    }
}

fn set(table: &mut Table, section: &str, key: &str, v: Value) {
    let sec = table.entry(section.to_string()).or_insert_with(|| Value::Table(Table::new()));
    if let Value::Table(t) = sec {
        t.insert(key.to_string(), v);
    }
}

fn default_at<'a>(defaults: &'a Table, section: &str, key: &str) -> Option<&'a Value> {
    defaults.get(section)?.as_table()?.get(key)
}

impl AppConfig {
    /// Resolve all layers. `overrides` are `section.key = value` pairs from
    /// the command line; `env` looks up environment variables.
    pub fn resolve(
        file: Option<&str>,
        env: &dyn Fn(&str) -> Option<String>,
        overrides: &[(String, String)],
    ) -> Result<ResolvedConfig, ConfigError> {
        let defaults = defaults_table();
        let mut merged = defaults.clone();
        let mut sources = BTreeMap::new();
        let known = known_keys();

        if let Some(text) = file {
            let t: Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
            for (section, v) in t {
                let Value::Table(fields) = v else {
                    return Err(ConfigError::UnknownKey(section));
                };
                for (key, value) in fields {
                    if !known.iter().any(|(s, k)| *s == section && *k == key) {
                        return Err(ConfigError::UnknownKey(format!("{section}.{key}")));
                    }
                    let value = match (value, default_at(&defaults, &section, &key)) {
                        (Value::Integer(i), Some(Value::Float(_))) => Value::Float(i as f64),
                        (v, _) => v,
                    };
                    set(&mut merged, &section, &key, value);
                    sources.insert(format!("{section}.{key}"), Source::File);
                }
            }
        }
        for (section, key) in &known {
            if let Some(raw) = env(&env_var_name(section, key)) {
                set(&mut merged, section, key, parse_scalar(&raw, default_at(&defaults, section, key)));
                sources.insert(format!("{section}.{key}"), Source::Env);
            }
        }
        for (path, raw) in overrides {
            let (section, key) =
                path.split_once('.').ok_or_else(|| ConfigError::UnknownKey(path.clone()))?;
            if !known.iter().any(|(s, k)| s == section && k == key) {
                return Err(ConfigError::UnknownKey(path.clone()));
            }
            set(&mut merged, section, key, parse_scalar(raw, default_at(&defaults, section, key)));
            sources.insert(path.clone(), Source::Flag);
        }

        let config: AppConfig = Value::Table(merged).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(ResolvedConfig { config, sources })
    }

    pub fn load(
        path: Option<&Path>,
        env: &dyn Fn(&str) -> Option<String>,
        overrides: &[(String, String)],
    ) -> Result<ResolvedConfig, ConfigError> {
        let text = match path {
            Some(p) => Some(
                std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::Read { path: p.display().to_string(), message: e.to_string() })?,
            ),
            None => None,
        };
        Self::resolve(text.as_deref(), env, overrides)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = ConfigError::Invalid;
        self.agent_config(None).validate().map_err(|e| inv(e.to_string()))?;
        self.chunk_config().validate().map_err(|e| inv(e.to_string()))?;
        if self.mining.tau.is_nan() || self.mining.tau <= 0.0 {
            return Err(inv(format!("mining.tau must be > 0, got {}", self.mining.tau)));
        }
        self.embedding.validate().map_err(inv)?;
        self.backend_spec()?;
        match self.router.mode.as_str() {
            "off" | "heuristic" | "force_simple" => {}
            "model" if !self.router.model_path.is_empty() => {}
            "model" => return Err(inv("router.mode = model needs router.model_path".into())),
            other => return Err(inv(format!("router.mode {other:?} is not off, heuristic, model or force_simple"))),
        }
        if self.eval.workers == 0 {
            return Err(inv("eval.workers must be >= 1".into()));
        }
        if self.reason.exec_timeout_ms == 0 {
            return Err(inv("reason.exec_timeout_ms must be > 0".into()));
        }
        Ok(())
    }

    pub fn chunk_config(&self) -> ChunkConfig {
        ChunkConfig { chunk_size_tokens: self.corpus.chunk_size_tokens, overlap_tokens: self.corpus.overlap_tokens }
    }

    pub fn chat_config(&self) -> ChatConfig {
        ChatConfig {
            endpoint: self.llm.endpoint.clone(),
            model: self.llm.model.clone(),
            api_key_env: self.llm.api_key_env.clone(),
            timeout_secs: self.llm.timeout_secs,
        }
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel { input_per_1k: self.llm.input_per_1k, output_per_1k: self.llm.output_per_1k }
    }

    pub fn backend_spec(&self) -> Result<BackendSpec, ConfigError> {
        self.llm.backend.parse().map_err(ConfigError::Invalid)
    }

    /// `model` mode falls back to the heuristic when no model is supplied.
    pub fn router_mode(&self, model: Option<RouterModel>) -> RouterMode {
        match (self.router.mode.as_str(), model) {
            ("off", _) => RouterMode::Off,
            ("force_simple", _) => RouterMode::ForceSimple,
            ("model", Some(m)) => RouterMode::Model(m),
            _ => RouterMode::Heuristic,
        }
    }

    pub fn agent_config(&self, model: Option<RouterModel>) -> AgentConfig {
        AgentConfig {
            max_iterations: self.agent.max_iterations,
            confidence_threshold: self.agent.confidence_threshold,
            beta: self.agent.beta,
            buffer_capacity: self.agent.buffer_capacity,
            turn_prune_size: self.agent.turn_prune_size,
            retrieval: self.retrieval,
            router_mode: self.router_mode(model),
            pot: PotConfig { max_repairs: self.reason.max_repairs, limits: ExecLimits::with_timeout(self.reason.exec_timeout_ms) },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn env_of(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let m: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| m.get(k).cloned()
    }

    #[test]
    fn defaults_are_valid() {
        let r = AppConfig::resolve(None, &|_| None, &[]).unwrap();
        assert_eq!(r.config, AppConfig::default());
        assert_eq!(r.config.agent.max_iterations, 3);
        assert_eq!(r.config.retrieval.alpha, 0.3);
        assert_eq!(r.source("agent.beta"), Source::Default);
    }

    #[test]
    fn precedence_per_field() {
        let file = "[agent]\nconfidence_threshold = 0.7\nmax_iterations = 4\nbeta = 1\n[retrieval]\ntop_k = 8\n";
        let env = env_of(&[("FINRAG_AGENT_CONFIDENCE_THRESHOLD", "0.6"), ("FINRAG_RETRIEVAL_TOP_K", "9")]);
        let flags = vec![("agent.confidence_threshold".to_string(), "0.5".to_string())];
        let r = AppConfig::resolve(Some(file), &env, &flags).unwrap();
        assert_eq!(r.config.agent.confidence_threshold, 0.5);
        assert_eq!(r.source("agent.confidence_threshold"), Source::Flag);
        assert_eq!(r.config.retrieval.top_k, 9);
        assert_eq!(r.source("retrieval.top_k"), Source::Env);
        assert_eq!(r.config.agent.max_iterations, 4);
        assert_eq!(r.source("agent.max_iterations"), Source::File);
        assert_eq!(r.config.agent.beta, 1.0);
        assert_eq!(r.config.agent.buffer_capacity, 15);
    }

    #[test]
    fn rejects_bad_values_and_keys() {
        assert!(matches!(AppConfig::resolve(Some("[agent]\nmax_iterations = 0"), &|_| None, &[]), Err(ConfigError::Invalid(_))));
        assert!(matches!(AppConfig::resolve(Some("[agent]\nbogus = 1"), &|_| None, &[]), Err(ConfigError::UnknownKey(_))));
        let flags = vec![("retrieval.alpha".to_string(), "1.5".to_string())];
        assert!(AppConfig::resolve(None, &|_| None, &flags).is_err());
        let flags = vec![("router.mode".to_string(), "model".to_string())];
        assert!(AppConfig::resolve(None, &|_| None, &flags).is_err());
    }

    #[test]
    fn string_and_optional_fields() {
        let env = env_of(&[("FINRAG_LLM_BACKEND", "scripted:rules.toml"), ("FINRAG_EMBEDDING_CACHE_PATH", "cache.json")]);
        let r = AppConfig::resolve(None, &env, &[]).unwrap();
        assert_eq!(r.config.backend_spec().unwrap(), BackendSpec::Scripted("rules.toml".into()));
        assert_eq!(r.config.embedding.cache_path.as_deref(), Some(Path::new("cache.json")));
    }

    #[test]
    fn round_trips_through_toml() {
        let c = AppConfig::default();
        let r = AppConfig::resolve(Some(&c.to_toml()), &|_| None, &[]).unwrap();
        assert_eq!(r.config, c);
    }
}
