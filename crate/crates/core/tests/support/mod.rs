#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use finrag::corpus::{build_corpus, parse_document_json, ChunkConfig, Document};
use finrag::llm::{CallTag, ScriptRule, ScriptedBackend};
use finrag::{CalibrationModel, HashEmbedder, Index, Lexicon, LlmClient, UsageLedger};

pub mod learning;
pub mod mining;
pub mod oracle;
pub mod sandbox;
pub mod synthetic;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn case1_docs() -> Vec<Document> {
    let text = std::fs::read_to_string(fixtures().join("case1/docs.jsonl")).unwrap();
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| parse_document_json(l).unwrap()).collect()
}

pub struct World {
    pub index: Index,
    pub embedder: HashEmbedder,
    pub companies: Vec<String>,
    pub calibration: CalibrationModel,
}

impl World {
    pub fn from_docs(docs: &[Document]) -> World {
        let embedder = HashEmbedder::default();
        let passages = build_corpus(docs, &ChunkConfig::default()).unwrap();
        let index = Index::build(passages, &embedder).unwrap();
        let mut companies: Vec<String> = docs.iter().filter_map(|d| d.company().map(str::to_string)).collect();
        companies.sort();
        companies.dedup();
        let calibration =
            CalibrationModel::from_json(&std::fs::read_to_string(fixtures().join("calibration.json")).unwrap()).unwrap();
        World { index, embedder, companies, calibration }
    }

    pub fn case1() -> World {
        World::from_docs(&case1_docs())
    }

    pub fn resources(&self, calibrated: bool) -> finrag::Resources<'_> {
        finrag::Resources {
            index: &self.index,
            embedder: &self.embedder,
            lexicon: Lexicon::builtin(),
            calibration: calibrated.then_some(&self.calibration),
            companies: &self.companies,
        }
    }
}

pub fn client_from_file(name: &str) -> LlmClient {
    let backend = ScriptedBackend::from_file(&fixtures().join(name)).unwrap();
    LlmClient::new(Arc::new(backend), Arc::new(UsageLedger::default()))
}

pub fn client_from_rules(rules: Vec<ScriptRule>) -> LlmClient {
    LlmClient::new(Arc::new(ScriptedBackend::new(rules).unwrap()), Arc::new(UsageLedger::default()))
}

pub fn rule(tag: CallTag, response: &str) -> ScriptRule {
    ScriptRule { tag: Some(tag), contains: None, pattern: None, nth: None, response: response.into() }
}

pub fn rule_if(tag: CallTag, contains: &str, response: &str) -> ScriptRule {
    ScriptRule { contains: Some(contains.into()), ..rule(tag, response) }
}
