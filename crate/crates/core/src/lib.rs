//! Retrieval-augmented question answering over financial filings.
//!
//! The crate covers the whole pipeline: corpus construction, hybrid
//! retrieval, hard-negative mining, an LLM client with scripted and HTTP
//! backends, CoT/PoT reasoning over a sandboxed arithmetic language,
//! routing, self-verification, the iterative agent loop and evaluation.

pub mod agent;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod eval;
pub mod http;
pub mod index;
pub mod llm;
pub mod mining;
pub mod reason;
pub mod router;
pub mod text;
pub mod verify;

pub use agent::{
    run_conversation, run_question, AgentConfig, AgentTrace, Conversation, EvidenceBuffer, Resources, RouterMode,
    Termination,
};
pub use config::{AppConfig, ConfigError, ResolvedConfig, Source};
pub use corpus::{build_corpus, ChunkConfig, Document, Passage, PassageKind, RawDocument, Table};
pub use embed::{EmbeddingProvider, HashEmbedder};
pub use eval::{exe_accuracy, load_dataset, DatasetFormat, MetricReport, QAExample};
pub use index::{HybridConfig, Index, RetrievalResult};
pub use llm::{CallTag, LlmBackend, LlmClient, LlmError, ScriptedBackend, UsageLedger, UsageSnapshot};
pub use mining::{Lexicon, NegativeType};
pub use reason::{AnswerValue, CalibrationModel, Mode, ReasoningOutcome, SubQuestion, SubTag};
pub use router::{Route, RouterFeatures, RouterModel};
pub use verify::{Decision, Verdict};
