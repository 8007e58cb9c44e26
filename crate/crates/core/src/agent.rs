//! The iterative answer loop: decompose, retrieve, reason, verify, refine.
//! Also the evidence buffer it carries, and multi-turn conversations.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Passage;
use crate::embed::EmbeddingProvider;
use crate::index::{HybridConfig, Index, IndexError, RetrievalResult};
use crate::llm::{LlmClient, UsageSnapshot};
use crate::mining::Lexicon;
use crate::reason::decompose::fallback_decomposition;
use crate::reason::{
    cot_reason, decompose, pot_reason, AnswerValue, CalibrationModel, Mode, PotConfig, ReasoningOutcome, SubQuestion,
    SubTag,
};
use crate::router::{extract_features, route, Route, RouteDecision, RouterFeatures, RouterModel};
use crate::text::{normalize_whitespace, sha256_hex};
use crate::verify::{refine_queries, verify_answer, Verdict};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error(transparent)]
    Index(#[from] IndexError),
}

// ---------------------------------------------------------------- buffer

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub passage_id: String,
    pub text: String,
    pub retrieval_score: f64,
    pub iteration_added: usize,
    pub priority: f64,
    key: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AddOutcome {
    Added,
    Duplicate,
    /// Added, and the named entry was evicted to make room.
    Evicted(String),
    /// The new entry had the lowest priority and was dropped at once.
    Rejected,
}

pub fn buffer_priority(score: f64, iteration: usize, beta: f64, max_iterations: usize) -> f64 {
    score + beta * iteration as f64 / max_iterations as f64
}

/// Capacity-bounded, deduplicated passage set ranked by relevance plus
/// recency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBuffer {
    pub capacity: usize,
    pub beta: f64,
    pub max_iterations: usize,
    entries: Vec<BufferEntry>,
}

fn dedup_key(text: &str) -> String {
    sha256_hex(&normalize_whitespace(text))
}

impl EvidenceBuffer {
    pub fn new(capacity: usize, beta: f64, max_iterations: usize) -> Self {
        EvidenceBuffer { capacity, beta, max_iterations: max_iterations.max(1), entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn ids(&self) -> HashSet<String> {
        self.entries.iter().map(|e| e.passage_id.clone()).collect()
    }

    pub fn contains(&self, passage_id: &str) -> bool {
        self.entries.iter().any(|e| e.passage_id == passage_id)
    }

    pub fn add(&mut self, passage: &Passage, score: f64, iteration: usize) -> AddOutcome {
        let key = dedup_key(&passage.text);
        if self.entries.iter().any(|e| e.key == key || e.passage_id == passage.id) {
            return AddOutcome::Duplicate;
        }
        self.entries.push(BufferEntry {
            passage_id: passage.id.clone(),
            text: passage.text.clone(),
            retrieval_score: score,
            iteration_added: iteration,
            priority: buffer_priority(score, iteration, self.beta, self.max_iterations),
            key,
        });
        if self.entries.len() <= self.capacity {
            return AddOutcome::Added;
        }
        let victim = self.lowest();
        let removed = self.entries.remove(victim);
        if removed.passage_id == passage.id {
            AddOutcome::Rejected
        } else {
            AddOutcome::Evicted(removed.passage_id)
        }
    }

    /// Entry evicted first: lowest priority, then the larger passage id.
    fn lowest(&self) -> usize {
        let mut best = 0;
        for (i, e) in self.entries.iter().enumerate().skip(1) {
            let b = &self.entries[best];
            if e.priority < b.priority || (e.priority == b.priority && e.passage_id > b.passage_id) {
                best = i;
            }
        }
        best
    }

    /// Keep the `n` highest-priority entries.
    pub fn prune_to(&mut self, n: usize) {
        self.sort_by_priority();
        self.entries.truncate(n);
    }

    fn sort_by_priority(&mut self) {
        self.entries
            .sort_by(|a, b| b.priority.total_cmp(&a.priority).then_with(|| a.passage_id.cmp(&b.passage_id)));
    }

    /// Passage texts, highest priority first.
    pub fn evidence(&self) -> Vec<String> {
        let mut sorted = self.clone();
        sorted.sort_by_priority();
        sorted.entries.into_iter().map(|e| e.text).collect()
    }
}

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, PartialEq)]
pub enum RouterMode {
    /// Every question takes the full loop.
    Off,
    Heuristic,
    Model(RouterModel),
    /// Every question takes the single pass.
    ForceSimple,
}

#[derive(Clone)]
pub struct AgentConfig {
    pub max_iterations: usize,
    pub confidence_threshold: f64,
    pub beta: f64,
    pub buffer_capacity: usize,
    pub turn_prune_size: usize,
    pub retrieval: HybridConfig,
    pub router_mode: RouterMode,
    pub pot: PotConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            max_iterations: 3,
            confidence_threshold: 0.8,
            beta: 0.2,
            buffer_capacity: 15,
            turn_prune_size: 10,
            retrieval: HybridConfig::default(),
            router_mode: RouterMode::Heuristic,
            pot: PotConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_iterations < 1 {
            return Err(AgentError::Config("max_iterations must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(AgentError::Config(format!("confidence_threshold must lie in [0, 1], got {}", self.confidence_threshold)));
        }
        if self.buffer_capacity == 0 {
            return Err(AgentError::Config("buffer_capacity must be >= 1".into()));
        }
        if self.beta < 0.0 {
            return Err(AgentError::Config("beta must be >= 0".into()));
        }
        self.retrieval.validate().map_err(AgentError::Config)
    }
}

/// Shared, read-only inputs of a run.
#[derive(Clone, Copy)]
pub struct Resources<'a> {
    pub index: &'a Index,
    pub embedder: &'a dyn EmbeddingProvider,
    pub lexicon: &'a Lexicon,
    pub calibration: Option<&'a CalibrationModel>,
    pub companies: &'a [String],
}

// ---------------------------------------------------------------- trace

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    VerifierAccept,
    Confidence,
    MaxIterations,
    /// Routed simple: one retrieval pass, no verification.
    SinglePass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRetrieval {
    pub query: String,
    pub results: Vec<RetrievalResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub sub_questions: Vec<SubQuestion>,
    /// Buffered ids at the start of the iteration, barred from its results.
    pub excluded: Vec<String>,
    pub retrievals: Vec<QueryRetrieval>,
    pub mode: Option<Mode>,
    pub outcome: Option<ReasoningOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pot_failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub verdict: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement_fallback: Option<bool>,
    pub usage: UsageSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteTrace {
    pub mode: String,
    pub decision: Option<RouteDecision>,
    pub features: Option<RouterFeatures>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrace {
    pub schema_version: u32,
    pub question_id: String,
    pub question: String,
    pub history: Vec<String>,
    pub decomposition_fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition_error: Option<String>,
    pub route: RouteTrace,
    pub iterations: Vec<IterationRecord>,
    pub final_answer: Option<AnswerValue>,
    pub final_confidence: Option<f64>,
    pub termination: Termination,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub totals: UsageSnapshot,
}

impl AgentTrace {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    /// The route actually taken.
    pub fn complex(&self) -> bool {
        self.termination != Termination::SinglePass
    }
}

pub fn traces_to_jsonl(traces: &[AgentTrace]) -> String {
    let mut s = String::new();
    for t in traces {
        s.push_str(&t.to_json_line());
        s.push('\n');
    }
    s
}

pub fn traces_from_jsonl(text: &str) -> Result<Vec<AgentTrace>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

// ---------------------------------------------------------------- loop

fn router_label(mode: &RouterMode) -> &'static str {
    match mode {
        RouterMode::Off => "off",
        RouterMode::Heuristic => "heuristic",
        RouterMode::Model(_) => "model",
        RouterMode::ForceSimple => "force_simple",
    }
}

fn retrieval_queries(question: &str, subs: &[SubQuestion]) -> Vec<String> {
    let qs: Vec<String> = subs.iter().filter(|s| s.tag == SubTag::Retrieval).map(|s| s.text.clone()).collect();
    if qs.is_empty() {
        vec![question.to_string()]
    } else {
        qs
    }
}

struct Reasoned {
    mode: Option<Mode>,
    outcome: Option<ReasoningOutcome>,
    pot_failure: Option<String>,
    error: Option<String>,
}

/// PoT first when asked for, falling back to CoT in the same iteration.
fn reason(
    question: &str,
    evidence: &[String],
    history: &[String],
    prefer_pot: bool,
    client: &LlmClient,
    res: &Resources,
    cfg: &AgentConfig,
) -> Reasoned {
    let mut pot_failure = None;
    if prefer_pot {
        match pot_reason(question, evidence, history, client, res.calibration, &cfg.pot) {
            Ok(o) => return Reasoned { mode: Some(Mode::Pot), outcome: Some(o), pot_failure: None, error: None },
            Err(f) => pot_failure = Some(f.to_string()),
        }
    }
    match cot_reason(question, evidence, history, client, res.calibration) {
        Ok(o) => Reasoned { mode: Some(Mode::Cot), outcome: Some(o), pot_failure, error: None },
        Err(e) => Reasoned { mode: None, outcome: None, pot_failure, error: Some(e.to_string()) },
    }
}

fn retrieve_into(
    buffer: &mut EvidenceBuffer,
    queries: &[String],
    iteration: usize,
    res: &Resources,
    cfg: &AgentConfig,
) -> Result<(Vec<String>, Vec<QueryRetrieval>), IndexError> {
    let exclude = buffer.ids();
    let mut excluded: Vec<String> = exclude.iter().cloned().collect();
    excluded.sort();
    let mut retrievals = Vec::new();
    for q in queries {
        let results = res.index.retrieve(q, res.embedder, &cfg.retrieval, &exclude)?;
        for r in &results {
            if let Some(pos) = res.index.position_of(&r.passage_id) {
                buffer.add(res.index.passage(pos), r.hybrid_score, iteration);
            }
        }
        retrievals.push(QueryRetrieval { query: q.clone(), results });
    }
    Ok((excluded, retrievals))
}

/// Answer one question, reusing `buffer` as the evidence store. `history`
/// alternates earlier questions and answers.
pub fn answer_with_buffer(
    question_id: &str,
    question: &str,
    history: &[String],
    buffer: &mut EvidenceBuffer,
    client: &LlmClient,
    res: &Resources,
    cfg: &AgentConfig,
) -> AgentTrace {
    let ledger = client.ledger().clone();
    let cost = *ledger.cost_model();
    let start = ledger.snapshot();
    let mut mark = start.clone();

    let (decomposition, decomposition_error) = match decompose(question, history, client) {
        Ok(d) => (d, None),
        Err(e) => (fallback_decomposition(question), Some(e.to_string())),
    };

    // features are recorded on every path so traces can train a router
    let features = extract_features(question, &decomposition, res.lexicon, res.companies);
    let decision = match &cfg.router_mode {
        RouterMode::Off | RouterMode::ForceSimple => None,
        RouterMode::Heuristic => Some(route(&features, &RouterModel::Heuristic)),
        RouterMode::Model(model) => Some(route(&features, model)),
    };
    let complex = match (&cfg.router_mode, &decision) {
        (RouterMode::ForceSimple, _) => false,
        (_, Some(d)) => d.route == Route::Complex,
        (_, None) => true,
    };
    let route_trace = RouteTrace { mode: router_label(&cfg.router_mode).into(), decision, features: Some(features) };

    let mut trace = AgentTrace {
        schema_version: TRACE_SCHEMA_VERSION,
        question_id: question_id.to_string(),
        question: question.to_string(),
        history: history.to_vec(),
        decomposition_fallback: decomposition.fallback,
        decomposition_error,
        route: route_trace,
        iterations: Vec::new(),
        final_answer: None,
        final_confidence: None,
        termination: if complex { Termination::MaxIterations } else { Termination::SinglePass },
        error: None,
        totals: UsageSnapshot::default(),
    };

    let k_max = if complex { cfg.max_iterations } else { 1 };
    let mut subs = decomposition.sub_questions.clone();
    let mut last_ok: Option<ReasoningOutcome> = None;

    for k in 1..=k_max {
        let queries = retrieval_queries(question, &subs);
        let mut record = IterationRecord {
            iteration: k,
            sub_questions: subs.clone(),
            excluded: Vec::new(),
            retrievals: Vec::new(),
            mode: None,
            outcome: None,
            pot_failure: None,
            error: None,
            verdict: None,
            refinement_fallback: None,
            usage: UsageSnapshot::default(),
        };
        match retrieve_into(buffer, &queries, k, res, cfg) {
            Ok((excluded, retrievals)) => {
                record.excluded = excluded;
                record.retrievals = retrievals;
            }
            Err(e) => record.error = Some(format!("retrieval failed: {e}")),
        }
        let evidence = buffer.evidence();

        let mut stop = None;
        if record.error.is_none() {
            let prefer_pot = !complex || subs.iter().any(|s| s.tag == SubTag::Computation);
            let r = reason(question, &evidence, history, prefer_pot, client, res, cfg);
            record.mode = r.mode;
            record.pot_failure = r.pot_failure;
            record.error = r.error;
            record.outcome = r.outcome.clone();
            if let Some(outcome) = r.outcome {
                last_ok = Some(outcome.clone());
                if !complex {
                    stop = Some(Termination::SinglePass);
                } else {
                    let verdict = verify_answer(question, &outcome, &evidence, history, client);
                    if verdict.accepted() {
                        stop = Some(Termination::VerifierAccept);
                    } else if outcome.confidence() > cfg.confidence_threshold {
                        stop = Some(Termination::Confidence);
                    } else if k < k_max {
                        let refined = refine_queries(question, &outcome, &verdict, &evidence, &subs, history, client);
                        record.refinement_fallback = Some(refined.fallback);
                        subs = refined.sub_questions;
                    }
                    record.verdict = Some(verdict);
                }
            }
        }

        let now = ledger.snapshot();
        record.usage = now.since(&mark, &cost);
        mark = now;
        trace.iterations.push(record);
        if let Some(t) = stop {
            trace.termination = t;
            break;
        }
    }

    // a_K: the final iteration's answer, or the last one that was produced
    let final_outcome = trace.iterations.last().and_then(|r| r.outcome.clone()).or(last_ok);
    match final_outcome {
        Some(o) => {
            trace.final_confidence = Some(o.confidence());
            trace.final_answer = Some(o.answer);
        }
        None => {
            trace.error = Some(
                trace
                    .iterations
                    .iter()
                    .rev()
                    .find_map(|r| r.error.clone())
                    .unwrap_or_else(|| "no answer produced".into()),
            );
        }
    }
    trace.totals = ledger.snapshot().since(&start, &cost);
    trace
}

fn new_buffer(cfg: &AgentConfig) -> EvidenceBuffer {
    EvidenceBuffer::new(cfg.buffer_capacity, cfg.beta, cfg.max_iterations)
}

/// One question in its own backend session.
pub fn run_question(
    question_id: &str,
    question: &str,
    client: &LlmClient,
    res: &Resources,
    cfg: &AgentConfig,
) -> (Option<AnswerValue>, AgentTrace) {
    let session = client.session();
    let mut buffer = new_buffer(cfg);
    let trace = answer_with_buffer(question_id, question, &[], &mut buffer, &session, res, cfg);
    (trace.final_answer.clone(), trace)
}

/// How an answer, or its absence, appears in later turns' history.
pub fn history_entry(trace: &AgentTrace) -> String {
    match (&trace.final_answer, &trace.error) {
        (Some(a), _) => a.to_string(),
        (None, Some(e)) => format!("[error: {e}]"),
        (None, None) => "[error]".into(),
    }
}

/// Multi-turn state: the evidence buffer and the question/answer history.
pub struct Conversation {
    pub buffer: EvidenceBuffer,
    pub history: Vec<String>,
    pub traces: Vec<AgentTrace>,
    client: LlmClient,
}

impl Conversation {
    pub fn new(client: &LlmClient, cfg: &AgentConfig) -> Self {
        Conversation { buffer: new_buffer(cfg), history: Vec::new(), traces: Vec::new(), client: client.session() }
    }

    pub fn ask(&mut self, question_id: &str, question: &str, res: &Resources, cfg: &AgentConfig) -> &AgentTrace {
        if !self.traces.is_empty() {
            self.buffer.prune_to(cfg.turn_prune_size);
        }
        let trace = answer_with_buffer(question_id, question, &self.history, &mut self.buffer, &self.client, res, cfg);
        self.history.push(question.to_string());
        self.history.push(history_entry(&trace));
        self.traces.push(trace);
        self.traces.last().unwrap()
    }

    pub fn reset(&mut self, cfg: &AgentConfig) {
        self.buffer = new_buffer(cfg);
        self.history.clear();
        self.traces.clear();
    }
}

pub fn run_conversation(
    turns: &[(String, String)],
    client: &LlmClient,
    res: &Resources,
    cfg: &AgentConfig,
) -> Vec<(Option<AnswerValue>, AgentTrace)> {
    let mut conv = Conversation::new(client, cfg);
    for (id, q) in turns {
        conv.ask(id, q, res, cfg);
    }
    conv.traces.into_iter().map(|t| (t.final_answer.clone(), t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PassageKind;

    fn passage(id: &str, text: &str) -> Passage {
        Passage { id: id.into(), text: text.into(), kind: PassageKind::TextChunk, doc_id: "d".into(), position: 0, token_count: 1 }
    }

    #[test]
    fn priority_formula() {
        assert!((buffer_priority(0.5, 3, 0.2, 3) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn dedup_by_normalized_text() {
        let mut b = EvidenceBuffer::new(15, 0.2, 3);
        assert_eq!(b.add(&passage("a", "Revenue  was 142"), 0.5, 1), AddOutcome::Added);
        assert_eq!(b.add(&passage("b", "Revenue was 142 "), 0.9, 1), AddOutcome::Duplicate);
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn capacity_eviction() {
        let mut b = EvidenceBuffer::new(15, 0.2, 3);
        for i in 0..15 {
            b.add(&passage(&format!("p{i:02}"), &format!("text {i}")), 0.1 + i as f64 * 0.01, 1);
        }
        assert_eq!(b.add(&passage("new", "fresh"), 0.9, 2), AddOutcome::Evicted("p00".into()));
        assert_eq!(b.len(), 15);
        assert_eq!(b.add(&passage("low", "weak"), 0.0, 1), AddOutcome::Rejected);
        assert_eq!(b.len(), 15);
    }

    #[test]
    fn ties_evict_larger_id() {
        let mut b = EvidenceBuffer::new(2, 0.2, 3);
        b.add(&passage("a", "x"), 0.5, 1);
        b.add(&passage("c", "y"), 0.5, 1);
        assert_eq!(b.add(&passage("b", "z"), 0.5, 1), AddOutcome::Evicted("c".into()));
    }

    #[test]
    fn prune_keeps_top_priorities() {
        let mut b = EvidenceBuffer::new(15, 0.2, 3);
        for i in 0..15 {
            b.add(&passage(&format!("p{i:02}"), &format!("text {i}")), ((i * 7) % 15) as f64 / 15.0, 1);
        }
        let mut expected: Vec<(f64, String)> = b.entries().iter().map(|e| (e.priority, e.passage_id.clone())).collect();
        expected.sort_by(|x, y| y.0.total_cmp(&x.0));
        b.prune_to(10);
        let kept: HashSet<String> = b.ids();
        let want: HashSet<String> = expected.into_iter().take(10).map(|x| x.1).collect();
        assert_eq!(kept, want);
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        let bad = AgentConfig { max_iterations: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AgentConfig { confidence_threshold: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
