//! Configuration layering and construction of the shared run resources.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use finrag::config::Source;
use finrag::corpus::{parse_document_json, passages_from_jsonl};
use finrag::embed::build_provider;
use finrag::llm::{build_backend, default_transport, BackendSpec};
use finrag::{
    build_corpus, AgentConfig, AppConfig, CalibrationModel, Document, EmbeddingProvider, Index, Lexicon, LlmClient,
    Passage, ResolvedConfig, Resources, RouterModel, UsageLedger,
};

use crate::{config_err, runtime, CliError, GlobalArgs, SourceArgs};

pub struct Settings {
    pub resolved: ResolvedConfig,
    pub config_dir: Option<PathBuf>,
}

fn parse_set(s: &str) -> Result<(String, String), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects SECTION.KEY=VALUE, got {s:?}")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Flags beat environment variables, which beat the file, which beats the
/// built-in defaults.
pub fn resolve_config(g: &GlobalArgs, env: &dyn Fn(&str) -> Option<String>) -> Result<Settings, CliError> {
    let mut overrides = g.set.iter().map(|s| parse_set(s)).collect::<Result<Vec<_>, _>>()?;
    if let Some(b) = &g.backend {
        overrides.push(("llm.backend".into(), b.clone()));
    }
    if let Some(k) = g.k {
        overrides.push(("retrieval.top_k".into(), k.to_string()));
    }
    if let Some(a) = g.alpha {
        overrides.push(("retrieval.alpha".into(), a.to_string()));
    }
    if let Some(r) = &g.router {
        match r.as_str() {
            "off" | "heuristic" | "force_simple" => overrides.push(("router.mode".into(), r.clone())),
            path => {
                overrides.push(("router.mode".into(), "model".into()));
                overrides.push(("router.model_path".into(), path.into()));
            }
        }
    }
    let resolved = AppConfig::load(g.config.as_deref(), env, &overrides).map_err(config_err)?;
    let config_dir = g.config.as_ref().map(|p| p.parent().map(Path::to_path_buf).unwrap_or_default());
    Ok(Settings { resolved, config_dir })
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Documents or passages, told apart by the first record.
pub fn load_corpus(path: &Path, chunk: &finrag::ChunkConfig) -> Result<(Vec<Passage>, Vec<Document>), CliError> {
    let text = read(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("{}");
    let is_docs = serde_json::from_str::<serde_json::Value>(first).map(|v| v.get("segments").is_some()).unwrap_or(false);
    if is_docs {
        let docs = load_documents_text(&text, path)?;
        let passages = build_corpus(&docs, chunk).map_err(runtime)?;
        Ok((passages, docs))
    } else {
        let passages = passages_from_jsonl(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        Ok((passages, Vec::new()))
    }
}

pub fn load_documents(path: &Path) -> Result<Vec<Document>, CliError> {
    load_documents_text(&read(path)?, path)
}

fn load_documents_text(text: &str, path: &Path) -> Result<Vec<Document>, CliError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_document_json(l).map_err(|e| runtime(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn companies_of(docs: &[Document]) -> Vec<String> {
    let mut c: Vec<String> = docs.iter().filter_map(|d| d.company().map(str::to_string)).collect();
    c.sort();
    c.dedup();
    c
}

/// Everything a run reads but never changes.
pub struct World {
    pub index: Index,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub lexicon: Option<Lexicon>,
    pub calibration: Option<CalibrationModel>,
    pub companies: Vec<String>,
}

impl World {
    pub fn lexicon(&self) -> &Lexicon {
        self.lexicon.as_ref().unwrap_or_else(|| Lexicon::builtin())
    }

    pub fn resources(&self) -> Resources<'_> {
        Resources {
            index: &self.index,
            embedder: self.embedder.as_ref(),
            lexicon: self.lexicon(),
            calibration: self.calibration.as_ref(),
            companies: &self.companies,
        }
    }
}

impl Settings {
    pub fn config(&self) -> &AppConfig {
        &self.resolved.config
    }

    /// A configured path, anchored at the config file's directory when it
    /// came from the file. Empty means unset.
    pub fn path(&self, key: &str, raw: &str) -> Option<PathBuf> {
        if raw.is_empty() {
            return None;
        }
        let p = PathBuf::from(raw);
        match (&self.config_dir, self.resolved.source(key)) {
            (Some(dir), Source::File) if p.is_relative() => Some(dir.join(p)),
            _ => Some(p),
        }
    }

    pub fn backend(&self) -> Result<BackendSpec, CliError> {
        match self.config().backend_spec().map_err(config_err)? {
            BackendSpec::Scripted(p) => {
                let resolved = self.path("llm.backend", &p.to_string_lossy()).unwrap_or(p);
                Ok(BackendSpec::Scripted(resolved))
            }
            other => Ok(other),
        }
    }

    pub fn client(&self, env: &dyn Fn(&str) -> Option<String>) -> Result<LlmClient, CliError> {
        let cfg = self.config();
        let transport = default_transport(Duration::from_secs(cfg.llm.timeout_secs));
        let backend = build_backend(&self.backend()?, &cfg.chat_config(), transport, env).map_err(config_err)?;
        Ok(LlmClient::new(backend, Arc::new(UsageLedger::new(cfg.cost_model()))))
    }

    pub fn router_model(&self) -> Result<Option<RouterModel>, CliError> {
        if self.config().router.mode != "model" {
            return Ok(None);
        }
        let path = self.path("router.model_path", &self.config().router.model_path).expect("validated");
        RouterModel::load(&path).map(Some).map_err(config_err)
    }

    pub fn agent_config(&self) -> Result<AgentConfig, CliError> {
        Ok(self.config().agent_config(self.router_model()?))
    }

    pub fn calibration(&self) -> Result<Option<CalibrationModel>, CliError> {
        match self.path("paths.calibration", &self.config().paths.calibration) {
            None => Ok(None),
            Some(p) => CalibrationModel::from_json(&read(&p)?)
                .map(Some)
                .map_err(|e| config_err(format!("{}: {e}", p.display()))),
        }
    }

    pub fn lexicon(&self) -> Result<Option<Lexicon>, CliError> {
        match self.path("paths.lexicon", &self.config().paths.lexicon) {
            None => Ok(None),
            Some(p) => Lexicon::parse(&read(&p)?).map(Some).map_err(|e| config_err(format!("{}: {e}", p.display()))),
        }
    }

    pub fn embedder(&self) -> Result<Arc<dyn EmbeddingProvider>, CliError> {
        let mut cfg = self.config().embedding.clone();
        if let Some(c) = &cfg.cache_path {
            cfg.cache_path = self.path("embedding.cache_path", &c.to_string_lossy());
        }
        let transport = default_transport(Duration::from_secs(self.config().llm.timeout_secs));
        build_provider(&cfg, transport).map_err(config_err)
    }

    fn world(&self, index: Index, companies: Vec<String>, embedder: Arc<dyn EmbeddingProvider>) -> Result<World, CliError> {
        Ok(World { index, embedder, lexicon: self.lexicon()?, calibration: self.calibration()?, companies })
    }

    pub fn world_from_docs(&self, docs: &[Document]) -> Result<World, CliError> {
        let embedder = self.embedder()?;
        let passages = build_corpus(docs, &self.config().chunk_config()).map_err(runtime)?;
        let index = Index::build(passages, embedder.as_ref()).map_err(runtime)?;
        self.world(index, companies_of(docs), embedder)
    }

    /// An index file when one is given, otherwise a fresh build of the corpus.
    pub fn world_from_source(&self, src: &SourceArgs) -> Result<World, CliError> {
        let embedder = self.embedder()?;
        let index_path = src.index.clone().or_else(|| self.path("paths.index", &self.config().paths.index));
        let corpus_path = src.corpus.clone().or_else(|| self.path("paths.corpus", &self.config().paths.corpus));
        let corpus = match &corpus_path {
            Some(p) if index_path.is_none() || p.exists() => Some(load_corpus(p, &self.config().chunk_config())?),
            _ => None,
        };
        let companies = corpus.as_ref().map(|(_, d)| companies_of(d)).unwrap_or_default();
        let index = match (index_path, corpus) {
            (Some(p), _) => Index::load(&p).map_err(runtime)?,
            (None, Some((passages, _))) => Index::build(passages, embedder.as_ref()).map_err(runtime)?,
            (None, None) => return Err(CliError::Config("no corpus: pass --corpus or --index, or set paths.corpus".into())),
        };
        self.world(index, companies, embedder)
    }
}
