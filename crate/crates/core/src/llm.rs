//! Chat-completion access: prompt templates, a usage ledger, an HTTP backend
//! and a deterministic scripted backend for tests and offline runs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{is_retryable_status, thread_sleeper, HttpTransport, RetryPolicy, Sleeper, TransportError};
use crate::text::word_count;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("unscripted call (tag {tag}): {excerpt}")]
    Unscripted { tag: CallTag, excerpt: String },
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("malformed completion response: {0}")]
    Decode(String),
    #[error("script error: {0}")]
    Script(String),
    #[error("missing prompt slot `{0}`")]
    MissingSlot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallTag {
    Decompose,
    Cot,
    Pot,
    Repair,
    VerifySuff,
    VerifyCross,
    Refine,
}

impl CallTag {
    pub const ALL: [CallTag; 7] = [
        CallTag::Decompose,
        CallTag::Cot,
        CallTag::Pot,
        CallTag::Repair,
        CallTag::VerifySuff,
        CallTag::VerifyCross,
        CallTag::Refine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CallTag::Decompose => "decompose",
            CallTag::Cot => "cot",
            CallTag::Pot => "pot",
            CallTag::Repair => "repair",
            CallTag::VerifySuff => "verify_suff",
            CallTag::VerifyCross => "verify_cross",
            CallTag::Refine => "refine",
        }
    }

    pub fn parse(s: &str) -> Option<CallTag> {
        CallTag::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl std::fmt::Display for CallTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub tag: CallTag,
}

impl LlmRequest {
    pub fn new(tag: CallTag, prompt: impl Into<String>) -> Self {
        LlmRequest { prompt: prompt.into(), temperature: 0.0, max_tokens: 1024, tag }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError>;

    /// A backend handle with fresh per-session state. Stateless backends
    /// return themselves.
    fn new_session(self: Arc<Self>) -> Arc<dyn LlmBackend>;
}

// ---------------------------------------------------------------- usage

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        // roughly $0.003 for a 1.5K-token prompt with a short reply
        CostModel { input_per_1k: 0.0015, output_per_1k: 0.006 }
    }
}

impl CostModel {
    pub fn cost(&self, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        prompt_tokens as f64 / 1000.0 * self.input_per_1k + completion_tokens as f64 / 1000.0 * self.output_per_1k
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TagUsage {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

impl TagUsage {
    fn add(&mut self, r: &LlmResponse) {
        self.calls += 1;
        self.prompt_tokens += r.prompt_tokens;
        self.completion_tokens += r.completion_tokens;
        self.latency_ms += r.latency_ms;
    }

    fn merge(&mut self, o: &TagUsage) {
        self.calls += o.calls;
        self.prompt_tokens += o.prompt_tokens;
        self.completion_tokens += o.completion_tokens;
        self.latency_ms += o.latency_ms;
    }
}

/// Point-in-time copy of a ledger. Totals are always derived from the
/// per-tag entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub per_tag: BTreeMap<CallTag, TagUsage>,
    pub total_calls: u64,
    pub total_tokens: u64,
    pub latency_ms: u64,
    pub cost: f64,
}

impl UsageSnapshot {
    fn from_tags(per_tag: BTreeMap<CallTag, TagUsage>, cost: &CostModel) -> Self {
        let mut s = UsageSnapshot { per_tag, ..Default::default() };
        for u in s.per_tag.values() {
            s.total_calls += u.calls;
            s.total_tokens += u.prompt_tokens + u.completion_tokens;
            s.latency_ms += u.latency_ms;
            s.cost += cost.cost(u.prompt_tokens, u.completion_tokens);
        }
        s
    }

    pub fn calls(&self, tag: CallTag) -> u64 {
        self.per_tag.get(&tag).map_or(0, |u| u.calls)
    }

    /// `self - earlier`, for per-question deltas of a shared ledger.
    pub fn since(&self, earlier: &UsageSnapshot, cost: &CostModel) -> UsageSnapshot {
        let mut tags = BTreeMap::new();
        for (t, u) in &self.per_tag {
            let e = earlier.per_tag.get(t).copied().unwrap_or_default();
            let d = TagUsage {
                calls: u.calls - e.calls,
                prompt_tokens: u.prompt_tokens - e.prompt_tokens,
                completion_tokens: u.completion_tokens - e.completion_tokens,
                latency_ms: u.latency_ms - e.latency_ms,
            };
            if d.calls > 0 {
                tags.insert(*t, d);
            }
        }
        UsageSnapshot::from_tags(tags, cost)
    }

    pub fn merged(&self, other: &UsageSnapshot, cost: &CostModel) -> UsageSnapshot {
        let mut tags = self.per_tag.clone();
        for (t, u) in &other.per_tag {
            tags.entry(*t).or_default().merge(u);
        }
        UsageSnapshot::from_tags(tags, cost)
    }
}

/// Thread-safe accumulation of call usage. A ledger may forward every entry
/// to a parent so that session and global totals stay in step.
#[derive(Debug, Default)]
pub struct UsageLedger {
    per_tag: Mutex<BTreeMap<CallTag, TagUsage>>,
    cost: CostModel,
    parent: Option<Arc<UsageLedger>>,
}

impl UsageLedger {
    pub fn new(cost: CostModel) -> Self {
        UsageLedger { per_tag: Mutex::new(BTreeMap::new()), cost, parent: None }
    }

    pub fn child(parent: &Arc<UsageLedger>) -> Self {
        UsageLedger { per_tag: Mutex::new(BTreeMap::new()), cost: parent.cost, parent: Some(parent.clone()) }
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    pub fn record(&self, tag: CallTag, resp: &LlmResponse) {
        self.per_tag.lock().unwrap().entry(tag).or_default().add(resp);
        if let Some(p) = &self.parent {
            p.record(tag, resp);
        }
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        let tags = self.per_tag.lock().unwrap().clone();
        UsageSnapshot::from_tags(tags, &self.cost)
    }

    pub fn reset(&self) {
        self.per_tag.lock().unwrap().clear();
    }
}

/// Backend plus ledger. Every successful completion is recorded.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn LlmBackend>,
    ledger: Arc<UsageLedger>,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn LlmBackend>, ledger: Arc<UsageLedger>) -> Self {
        LlmClient { backend, ledger }
    }

    pub fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let resp = self.backend.complete(req)?;
        self.ledger.record(req.tag, &resp);
        Ok(resp)
    }

    pub fn call(&self, tag: CallTag, prompt: String) -> Result<String, LlmError> {
        self.complete(&LlmRequest::new(tag, prompt)).map(|r| r.text)
    }

    pub fn ledger(&self) -> &Arc<UsageLedger> {
        &self.ledger
    }

    /// Fresh backend session with a child ledger reporting into this one.
    pub fn session(&self) -> LlmClient {
        LlmClient { backend: self.backend.clone().new_session(), ledger: Arc::new(UsageLedger::child(&self.ledger)) }
    }
}

// ---------------------------------------------------------------- scripted

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub tag: Option<CallTag>,
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default)]
    pub pattern: Option<String>,
    /// 1-based: fire only on the nth call that satisfies tag and match.
    #[serde(default)]
    pub nth: Option<usize>,
    pub response: String,
}

#[derive(Debug, Deserialize)]
struct ScriptFile {
    #[serde(default)]
    rule: Vec<ScriptRule>,
}

#[derive(Debug)]
struct CompiledRule {
    rule: ScriptRule,
    regex: Option<Regex>,
}

impl CompiledRule {
    fn condition(&self, req: &LlmRequest) -> bool {
        if self.rule.tag.is_some_and(|t| t != req.tag) {
            return false;
        }
        if let Some(s) = &self.rule.contains {
            if !req.prompt.contains(s.as_str()) {
                return false;
            }
        }
        if let Some(re) = &self.regex {
            if !re.is_match(&req.prompt) {
                return false;
            }
        }
        true
    }
}

/// Ordered rules, first match wins. Counters for `nth` live in the session.
#[derive(Debug)]
pub struct ScriptedBackend {
    rules: Arc<Vec<CompiledRule>>,
    counters: Mutex<Vec<usize>>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Result<Self, LlmError> {
        let compiled = rules
            .into_iter()
            .map(|rule| {
                let regex = match &rule.pattern {
                    Some(p) => Some(Regex::new(p).map_err(|e| LlmError::Script(format!("bad pattern {p:?}: {e}")))?),
                    None => None,
                };
                if rule.nth == Some(0) {
                    return Err(LlmError::Script("nth is 1-based".into()));
                }
                Ok(CompiledRule { rule, regex })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let n = compiled.len();
        Ok(ScriptedBackend { rules: Arc::new(compiled), counters: Mutex::new(vec![0; n]) })
    }

    pub fn from_toml(text: &str) -> Result<Self, LlmError> {
        let f: ScriptFile = toml::from_str(text).map_err(|e| LlmError::Script(e.to_string()))?;
        Self::new(f.rule)
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Script(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn resolve(&self, req: &LlmRequest) -> Option<String> {
        let mut counters = self.counters.lock().unwrap();
        let mut hit = None;
        for (i, r) in self.rules.iter().enumerate() {
            if !r.condition(req) {
                continue;
            }
            counters[i] += 1;
            if hit.is_none() && r.rule.nth.is_none_or(|n| n == counters[i]) {
                hit = Some(i);
            }
        }
        hit.map(|i| self.rules[i].rule.response.clone())
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        match self.resolve(req) {
            Some(text) => Ok(LlmResponse {
                prompt_tokens: word_count(&req.prompt) as u64,
                completion_tokens: word_count(&text) as u64,
                text,
                latency_ms: 0,
            }),
            None => {
                let q = section(&req.prompt, "Question").unwrap_or(&req.prompt);
                Err(LlmError::Unscripted { tag: req.tag, excerpt: q.chars().take(160).collect() })
            }
        }
    }

    fn new_session(self: Arc<Self>) -> Arc<dyn LlmBackend> {
        let n = self.rules.len();
        Arc::new(ScriptedBackend { rules: self.rules.clone(), counters: Mutex::new(vec![0; n]) })
    }
}

// ---------------------------------------------------------------- http

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for ChatConfig {
    fn default() -> Self {
        ChatConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: "FINRAG_LLM_API_KEY".into(),
            timeout_secs: 60,
        }
    }
}

pub struct HttpChatBackend {
    cfg: ChatConfig,
    token: Option<String>,
    transport: Arc<dyn HttpTransport>,
    retry: RetryPolicy,
    sleeper: Arc<Sleeper>,
}

impl HttpChatBackend {
    pub fn new(cfg: ChatConfig, token: Option<String>, transport: Arc<dyn HttpTransport>) -> Self {
        HttpChatBackend { cfg, token, transport, retry: RetryPolicy::default(), sleeper: Arc::from(thread_sleeper()) }
    }

    pub fn with_retry(mut self, retry: RetryPolicy, sleeper: Box<Sleeper>) -> Self {
        self.retry = retry;
        self.sleeper = Arc::from(sleeper);
        self
    }

    fn decode(body: &str) -> Result<(String, Option<(u64, u64)>), LlmError> {
        let v: serde_json::Value = serde_json::from_str(body).map_err(|e| LlmError::Decode(e.to_string()))?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .ok_or_else(|| LlmError::Decode("no choices[0].message.content".into()))?
            .to_string();
        let usage = match (v.pointer("/usage/prompt_tokens"), v.pointer("/usage/completion_tokens")) {
            (Some(p), Some(c)) => Some((p.as_u64().unwrap_or(0), c.as_u64().unwrap_or(0))),
            _ => None,
        };
        Ok((text, usage))
    }
}

impl LlmBackend for HttpChatBackend {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let body = serde_json::json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
        if let Some(t) = &self.token {
            headers.push(("Authorization".to_string(), format!("Bearer {t}")));
        }
        let start = Instant::now();
        let mut attempt = 0;
        loop {
            let (err, retryable) = match self.transport.post_json(&self.cfg.endpoint, &headers, &body) {
                Ok(r) if r.status == 200 => {
                    let (text, usage) = Self::decode(&r.body)?;
                    let (p, c) = usage.unwrap_or((word_count(&req.prompt) as u64, word_count(&text) as u64));
                    return Ok(LlmResponse {
                        text,
                        prompt_tokens: p,
                        completion_tokens: c,
                        latency_ms: start.elapsed().as_millis() as u64,
                    });
                }
                Ok(r) => (
                    LlmError::Http { status: r.status, message: r.body.chars().take(200).collect() },
                    is_retryable_status(r.status),
                ),
                Err(e) => (LlmError::Transport(e.clone()), e == TransportError::Timeout),
            };
            attempt += 1;
            if !retryable || attempt >= self.retry.max_attempts {
                return Err(err);
            }
            (self.sleeper)(self.retry.delay_before_retry(attempt - 1));
        }
    }

    fn new_session(self: Arc<Self>) -> Arc<dyn LlmBackend> {
        self
    }
}

/// `scripted:<path>` or `http`.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Scripted(std::path::PathBuf),
    Http,
}

impl std::str::FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(p) = s.strip_prefix("scripted:") {
            if p.is_empty() {
                return Err("scripted backend needs a rules file path".into());
            }
            Ok(BackendSpec::Scripted(p.into()))
        } else if s == "http" {
            Ok(BackendSpec::Http)
        } else {
            Err(format!("unknown backend {s:?}; expected `http` or `scripted:<path>`"))
        }
    }
}

pub fn build_backend(
    spec: &BackendSpec,
    chat: &ChatConfig,
    transport: Arc<dyn HttpTransport>,
    env: &dyn Fn(&str) -> Option<String>,
) -> Result<Arc<dyn LlmBackend>, LlmError> {
    match spec {
        BackendSpec::Scripted(p) => Ok(Arc::new(ScriptedBackend::from_file(p)?)),
        BackendSpec::Http => Ok(Arc::new(HttpChatBackend::new(chat.clone(), env(&chat.api_key_env), transport))),
    }
}

pub fn default_transport(timeout: Duration) -> Arc<dyn HttpTransport> {
    Arc::new(crate::http::UreqTransport::new(timeout))
}

// ---------------------------------------------------------------- prompts

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateId {
    Decompose,
    Cot,
    Pot,
    Repair,
    VerifySufficiency,
    VerifyCross,
    Refine,
}

impl TemplateId {
    pub fn tag(self) -> CallTag {
        match self {
            TemplateId::Decompose => CallTag::Decompose,
            TemplateId::Cot => CallTag::Cot,
            TemplateId::Pot => CallTag::Pot,
            TemplateId::Repair => CallTag::Repair,
            TemplateId::VerifySufficiency => CallTag::VerifySuff,
            TemplateId::VerifyCross => CallTag::VerifyCross,
            TemplateId::Refine => CallTag::Refine,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Slot {
    Text(String),
    List(Vec<String>),
}

pub type Slots = BTreeMap<&'static str, Slot>;

pub fn text_slot(s: impl Into<String>) -> Slot {
    Slot::Text(s.into())
}

const SYSTEM_ROLE: &str = "You are a financial analyst assistant. You answer questions about company filings \
using only the evidence provided, and you are careful with units, fiscal periods and line items.";

const VERIFY_CHECKS: [&str; 3] = [
    "Evidence sufficiency: the evidence contains every data point the answer needs.",
    "Numerical consistency: each calculation in the reasoning is arithmetically correct.",
    "Cross-evidence validation: the values used agree across passages and refer to the same line item and period.",
];

struct Template {
    required: &'static [&'static str],
    instructions: Vec<String>,
    output_format: String,
    extra: &'static [(&'static str, &'static str)],
}

fn template(id: TemplateId) -> Template {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    match id {
        TemplateId::Decompose => Template {
            required: &["question"],
            instructions: s(&[
                "Identify every data point that must be looked up and every calculation step.",
                "Split comparisons by time period or entity so that each lookup names one value.",
                "Resolve references such as \"this metric\" or \"that year\" using the conversation history.",
                "Label the question with one pattern: temporal_comparison, ratio, multi_entity_aggregation, conditional_filtering, derived_metric or lookup.",
            ]),
            output_format: "First line `PATTERN: <label>`. Then one sub-question per line, prefixed `R:` for a \
retrieval step or `C:` for a computation step."
                .into(),
            extra: &[],
        },
        TemplateId::Cot => Template {
            required: &["question", "evidence"],
            instructions: s(&[
                "Identify the relevant values in the evidence and cite their passage numbers.",
                "Check that each value matches the line item and fiscal period asked about.",
                "Write out every calculation as `expression = value`.",
                "Double-check the arithmetic.",
                "State the final answer with appropriate units.",
            ]),
            output_format: "End with exactly one line `ANSWER: <value> | CONFIDENCE: <number between 0 and 1>`.".into(),
            extra: &[],
        },
        TemplateId::Pot => Template {
            required: &["question", "evidence"],
            instructions: s(&[
                "Extract the needed values from the evidence into named variables.",
                "Use only numbers, variables, + - * / **, parentheses and the functions round, abs, min, max.",
                "Write one assignment per line; tuple assignment `a, b = 1, 2` is allowed.",
                "Express percentages in percentage points.",
            ]),
            output_format: "Return only the program. The final value must be assigned to a `result` variable.".into(),
            extra: &[],
        },
        TemplateId::Repair => Template {
            required: &["question", "evidence", "program", "error"],
            instructions: s(&[
                "Read the previous program and the error it produced.",
                "Fix the problem while keeping the same restricted language.",
                "Use only numbers, variables, + - * / **, parentheses and the functions round, abs, min, max.",
            ]),
            output_format: "Return only the corrected program. The final value must be assigned to a `result` variable."
                .into(),
            extra: &[("Previous Program", "program"), ("Error", "error")],
        },
        TemplateId::VerifySufficiency | TemplateId::VerifyCross => {
            let focus = if id == TemplateId::VerifySufficiency { 1 } else { 3 };
            let mut ins: Vec<String> = VERIFY_CHECKS
                .iter()
                .enumerate()
                .map(|(i, c)| if i + 1 == focus { format!("{c} This is the check to report.") } else { c.to_string() })
                .collect();
            ins.push("Report only the check marked above.".into());
            Template {
                required: &["question", "evidence", "answer", "reasoning"],
                instructions: ins,
                output_format: "One line: `PASS`, or `FAIL: <short reason>`.".into(),
                extra: &[("Candidate Answer", "answer"), ("Reasoning", "reasoning")],
            }
        }
        TemplateId::Refine => Template {
            required: &["question", "evidence", "answer", "failures", "sub_questions"],
            instructions: s(&[
                "Read the verification failures and their explanations.",
                "If evidence was insufficient, first ask for the missing data points.",
                "If values were inconsistent, name the authoritative source or statement to retrieve from.",
                "Keep sub-questions that were already answered correctly.",
            ]),
            output_format: "One sub-question per line, prefixed `R:` for retrieval or `C:` for computation.".into(),
            extra: &[
                ("Candidate Answer", "answer"),
                ("Previous Sub-questions", "sub_questions"),
                ("Verification Failures", "failures"),
            ],
        },
    }
}

fn slot_text(slots: &Slots, name: &str) -> Result<String, LlmError> {
    match slots.get(name) {
        Some(Slot::Text(t)) => Ok(t.clone()),
        Some(Slot::List(items)) => Ok(items.join("\n")),
        None => Err(LlmError::MissingSlot(name.to_string())),
    }
}

/// Render a template. Sections appear in the order System Role, Evidence,
/// Question, Instructions, Output Format, with any template-specific blocks
/// between Question and Instructions. `history` is optional everywhere.
pub fn render_prompt(id: TemplateId, slots: &Slots) -> Result<String, LlmError> {
    let t = template(id);
    for r in t.required {
        if !slots.contains_key(r) {
            return Err(LlmError::MissingSlot(r.to_string()));
        }
    }
    let mut out = String::new();
    out.push_str("## System Role\n");
    out.push_str(SYSTEM_ROLE);
    out.push_str("\n\n## Evidence\n");
    match slots.get("evidence") {
        Some(Slot::List(items)) if !items.is_empty() => {
            for (i, p) in items.iter().enumerate() {
                out.push_str(&format!("[{}] {}\n", i + 1, p));
            }
        }
        Some(Slot::Text(t)) if !t.trim().is_empty() => {
            out.push_str(&format!("[1] {t}\n"));
        }
        _ => out.push_str("(no evidence)\n"),
    }
    out.push_str("\n## Question\n");
    if let Some(h) = slots.get("history") {
        let h = match h {
            Slot::Text(t) => t.clone(),
            Slot::List(items) => items.join("\n"),
        };
        if !h.trim().is_empty() {
            out.push_str("Conversation so far:\n");
            out.push_str(&h);
            out.push_str("\nCurrent question: ");
        }
    }
    out.push_str(&slot_text(slots, "question")?);
    out.push('\n');
    for (title, slot) in t.extra {
        out.push_str(&format!("\n## {title}\n{}\n", slot_text(slots, slot)?));
    }
    out.push_str("\n## Instructions\n");
    for (i, line) in t.instructions.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, line));
    }
    out.push_str("\n## Output Format\n");
    out.push_str(&t.output_format);
    out.push('\n');
    Ok(out)
}

/// Body of a `## <name>` section in a rendered prompt.
pub fn section<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
    let head = format!("## {name}\n");
    let start = prompt.find(&head)? + head.len();
    let rest = &prompt[start..];
    let end = rest.find("\n## ").unwrap_or(rest.len());
    Some(rest[..end].trim())
}
