//! Dataset adapters, answer and retrieval metrics, significance tests,
//! cost accounting and the batch runner behind `eval` and `sweep`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::agent::{run_question, AgentConfig, AgentTrace, Conversation, Resources};
use crate::corpus::{parse_document, passage_id, Document, RawDocument, Segment, Table};
use crate::llm::LlmClient;
use crate::reason::program::{parse_program, BinOp, Expr, Program};
use crate::reason::{AnswerValue, Mode};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error("dataset has no valid records ({skipped} skipped)")]
    Empty { skipped: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("bad grid {0:?}: {1}")]
    Grid(String, String),
}

// ---------------------------------------------------------------- datasets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub question: String,
    pub gold_answer: AnswerValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_program: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_passage_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversation_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Native,
    Finqa,
    Convfinqa,
    Tatqa,
}

impl FromStr for DatasetFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "native" => Ok(DatasetFormat::Native),
            "finqa" => Ok(DatasetFormat::Finqa),
            "convfinqa" => Ok(DatasetFormat::Convfinqa),
            "tatqa" | "tat-qa" => Ok(DatasetFormat::Tatqa),
            other => Err(format!("unknown dataset format {other:?} (native, finqa, convfinqa, tatqa)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub format: DatasetFormat,
    pub examples: Vec<QAExample>,
    pub documents: Vec<Document>,
    pub skipped: usize,
}

impl Dataset {
    pub fn companies(&self) -> Vec<String> {
        let mut c: Vec<String> = self.documents.iter().filter_map(|d| d.company().map(str::to_string)).collect();
        c.sort();
        c.dedup();
        c
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
    parse_dataset(&text, format)
}

pub fn parse_dataset(text: &str, format: DatasetFormat) -> Result<Dataset, EvalError> {
    let root: Value = serde_json::from_str(text).map_err(|e| EvalError::Format(e.to_string()))?;
    let mut ds = Dataset { format, examples: Vec::new(), documents: Vec::new(), skipped: 0 };
    match format {
        DatasetFormat::Native => load_native(&root, &mut ds)?,
        DatasetFormat::Finqa => each_record(&root, &mut ds, finqa_record)?,
        DatasetFormat::Convfinqa => each_record(&root, &mut ds, convfinqa_record)?,
        DatasetFormat::Tatqa => each_record(&root, &mut ds, tatqa_record)?,
    }
    if ds.examples.is_empty() {
        return Err(EvalError::Empty { skipped: ds.skipped });
    }
    Ok(ds)
}

fn answer_from_value(v: &Value) -> Option<AnswerValue> {
    match v {
        Value::Number(n) => n.as_f64().map(AnswerValue::number),
        Value::Bool(b) => Some(AnswerValue::Boolean { value: *b }),
        Value::String(s) if !s.trim().is_empty() => Some(AnswerValue::parse(s)),
        Value::Array(items) if !items.is_empty() => {
            let parts: Vec<String> = items
                .iter()
                .map(|i| match i {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect();
            Some(if parts.len() == 1 { AnswerValue::parse(&parts[0]) } else { AnswerValue::Text { value: parts.join(", ") } })
        }
        Value::Object(_) => serde_json::from_value(v.clone()).ok(),
        _ => None,
    }
}

fn str_field<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Value::as_str).map(str::trim).filter(|s| !s.is_empty())
}

fn load_native(root: &Value, ds: &mut Dataset) -> Result<(), EvalError> {
    let examples = root
        .get("examples")
        .and_then(Value::as_array)
        .ok_or_else(|| EvalError::Format("native dataset needs an `examples` array".into()))?;
    if let Some(docs) = root.get("documents").and_then(Value::as_array) {
        for d in docs {
            match serde_json::from_value::<RawDocument>(d.clone()).ok().and_then(|r| parse_document(&r).ok()) {
                Some(doc) => ds.documents.push(doc),
                None => ds.skipped += 1,
            }
        }
    }
    for (i, e) in examples.iter().enumerate() {
        let (Some(question), Some(answer)) = (str_field(e, "question"), e.get("answer").and_then(answer_from_value)) else {
            ds.skipped += 1;
            continue;
        };
        let ids = e.get("gold_passage_ids").and_then(Value::as_array).map(|a| {
            a.iter().filter_map(Value::as_str).map(str::to_string).collect::<Vec<_>>()
        });
        ds.examples.push(QAExample {
            id: str_field(e, "id").map_or_else(|| format!("q{i}"), str::to_string),
            question: question.to_string(),
            gold_answer: answer,
            gold_program: str_field(e, "program").map(str::to_string),
            gold_passage_ids: ids,
            conversation_id: str_field(e, "conversation_id").map(str::to_string),
            turn_index: e.get("turn_index").and_then(Value::as_u64).map(|t| t as usize),
        });
    }
    Ok(())
}

type RecordFn = fn(usize, &Value) -> Option<(Document, Vec<QAExample>)>;

fn each_record(root: &Value, ds: &mut Dataset, f: RecordFn) -> Result<(), EvalError> {
    let records = root.as_array().ok_or_else(|| EvalError::Format("expected a top-level array of records".into()))?;
    for (i, r) in records.iter().enumerate() {
        match f(i, r) {
            Some((doc, ex)) if !ex.is_empty() => {
                ds.documents.push(doc);
                ds.examples.extend(ex);
            }
            _ => ds.skipped += 1,
        }
    }
    Ok(())
}

fn string_list(v: Option<&Value>) -> Vec<String> {
    v.and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
        .unwrap_or_default()
}

/// First row as headers; short rows padded and long rows truncated.
fn grid_table(v: Option<&Value>) -> Option<Table> {
    let rows: Vec<Vec<String>> = v?
        .as_array()?
        .iter()
        .map(|r| {
            r.as_array()
                .map(|cells| cells.iter().map(|c| c.as_str().map_or_else(|| c.to_string(), str::to_string)).collect())
                .unwrap_or_default()
        })
        .collect();
    let (head, body) = rows.split_first()?;
    if head.is_empty() {
        return None;
    }
    let width = head.len();
    let headers: Vec<String> =
        head.iter().enumerate().map(|(i, h)| if h.trim().is_empty() { format!("col{i}") } else { h.clone() }).collect();
    let rows = body
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.resize(width, String::new());
            r
        })
        .collect();
    Some(Table { headers, rows, caption: None })
}

/// pre_text sentences, the table, then post_text sentences, one segment each,
/// so FinQA's `text_i` / `table_i` evidence keys map onto passage ids.
struct FinqaLayout {
    doc: Document,
    n_pre: usize,
    has_table: bool,
}

fn finqa_document(id: &str, r: &Value) -> FinqaLayout {
    let pre = string_list(r.get("pre_text"));
    let post = string_list(r.get("post_text"));
    let table = grid_table(r.get("table"));
    let mut segments: Vec<Segment> = pre.iter().cloned().map(Segment::Text).collect();
    let has_table = table.is_some();
    if let Some(t) = table {
        segments.push(Segment::Table(t));
    }
    segments.extend(post.into_iter().map(Segment::Text));
    let mut meta = BTreeMap::new();
    if let Some(f) = str_field(r, "filename") {
        meta.insert("filing".to_string(), f.to_string());
        if let Some(ticker) = f.split('/').next() {
            meta.insert("company".to_string(), ticker.to_string());
        }
    }
    FinqaLayout { doc: Document { id: id.to_string(), segments, source_meta: meta }, n_pre: pre.len(), has_table }
}

fn finqa_gold_ids(layout: &FinqaLayout, qa: &Value) -> Option<Vec<String>> {
    let inds = qa.get("gold_inds")?.as_object()?;
    let mut out: Vec<String> = inds
        .keys()
        .filter_map(|k| {
            let (kind, n) = k.rsplit_once('_')?;
            let n: usize = n.parse().ok()?;
            match kind {
                "text" => {
                    let seg = if n < layout.n_pre || !layout.has_table { n } else { n + 1 };
                    Some(passage_id(&layout.doc.id, seg, 0))
                }
                // row 0 is the header row
                "table" if layout.has_table && n >= 1 => Some(passage_id(&layout.doc.id, layout.n_pre, n - 1)),
                _ => None,
            }
        })
        .collect();
    out.sort();
    (!out.is_empty()).then_some(out)
}

fn finqa_answer(qa: &Value) -> Option<AnswerValue> {
    qa.get("exe_ans").and_then(answer_from_value).or_else(|| qa.get("answer").and_then(answer_from_value))
}

fn finqa_record(i: usize, r: &Value) -> Option<(Document, Vec<QAExample>)> {
    let id = str_field(r, "id").map_or_else(|| format!("finqa-{i}"), str::to_string);
    let qa = r.get("qa")?;
    let question = str_field(qa, "question")?;
    let answer = finqa_answer(qa)?;
    let layout = finqa_document(&id, r);
    let ex = QAExample {
        id: id.clone(),
        question: question.to_string(),
        gold_answer: answer,
        gold_program: str_field(qa, "program").map(str::to_string),
        gold_passage_ids: finqa_gold_ids(&layout, qa),
        conversation_id: None,
        turn_index: None,
    };
    Some((layout.doc, vec![ex]))
}

fn convfinqa_record(i: usize, r: &Value) -> Option<(Document, Vec<QAExample>)> {
    let id = str_field(r, "id").map_or_else(|| format!("convfinqa-{i}"), str::to_string);
    let ann = r.get("annotation")?;
    let questions = string_list(ann.get("dialogue_break"));
    let answers = ann.get("exe_ans_list").and_then(Value::as_array)?;
    let programs = string_list(ann.get("turn_program"));
    if questions.is_empty() || answers.len() != questions.len() {
        return None;
    }
    let layout = finqa_document(&id, r);
    let mut out = Vec::new();
    for (t, (q, a)) in questions.iter().zip(answers).enumerate() {
        let answer = answer_from_value(a)?;
        out.push(QAExample {
            id: format!("{id}-t{t}"),
            question: q.clone(),
            gold_answer: answer,
            gold_program: programs.get(t).cloned(),
            gold_passage_ids: None,
            conversation_id: Some(id.clone()),
            turn_index: Some(t),
        });
    }
    Some((layout.doc, out))
}

fn tatqa_record(i: usize, r: &Value) -> Option<(Document, Vec<QAExample>)> {
    let table_v = r.get("table")?;
    let id = str_field(table_v, "uid").map_or_else(|| format!("tatqa-{i}"), str::to_string);
    let mut segments = Vec::new();
    if let Some(t) = grid_table(table_v.get("table")) {
        segments.push(Segment::Table(t));
    }
    let mut paras: Vec<(u64, String)> = r
        .get("paragraphs")
        .and_then(Value::as_array)
        .map(|a| {
            a.iter()
                .filter_map(|p| Some((p.get("order").and_then(Value::as_u64).unwrap_or(0), str_field(p, "text")?.to_string())))
                .collect()
        })
        .unwrap_or_default();
    paras.sort_by_key(|p| p.0);
    let para_base = segments.len();
    let order_to_seg: HashMap<u64, usize> = paras.iter().enumerate().map(|(k, p)| (p.0, para_base + k)).collect();
    segments.extend(paras.into_iter().map(|p| Segment::Text(p.1)));
    let doc = Document { id: id.clone(), segments, source_meta: BTreeMap::new() };

    let mut out = Vec::new();
    for (j, q) in r.get("questions").and_then(Value::as_array)?.iter().enumerate() {
        let (Some(question), Some(mut answer)) = (str_field(q, "question"), q.get("answer").and_then(answer_from_value)) else {
            continue;
        };
        if str_field(q, "scale") == Some("percent") {
            if let AnswerValue::Number { value, .. } = answer {
                answer = AnswerValue::Percent { value };
            }
        }
        let gold = q.get("rel_paragraphs").and_then(Value::as_array).map(|a| {
            a.iter()
                .filter_map(|o| o.as_str().and_then(|s| s.parse().ok()).or_else(|| o.as_u64()))
                .filter_map(|o| order_to_seg.get(&o).map(|&seg| passage_id(&id, seg, 0)))
                .collect::<Vec<_>>()
        });
        out.push(QAExample {
            id: str_field(q, "uid").map_or_else(|| format!("{id}-q{j}"), str::to_string),
            question: question.to_string(),
            gold_answer: answer,
            gold_program: None,
            gold_passage_ids: gold.filter(|g| !g.is_empty()),
            conversation_id: None,
            turn_index: None,
        });
    }
    Some((doc, out))
}

// ---------------------------------------------------------------- answers

pub const ANSWER_TOLERANCE: f64 = 0.01;
pub const ZERO_GOLD_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-12;

fn numeric_match(pred: f64, gold: f64) -> bool {
    if gold == 0.0 {
        return pred.abs() <= ZERO_GOLD_TOLERANCE;
    }
    (pred - gold).abs() / gold.abs().max(EPS) <= ANSWER_TOLERANCE
}

fn normalize_text(s: &str) -> String {
    s.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Execution accuracy under the 1% relative rule. A percentage and a plain
/// number also match when one is 100 times the other.
pub fn exe_accuracy(pred: &AnswerValue, gold: &AnswerValue) -> bool {
    use AnswerValue::*;
    match (pred, gold) {
        (Boolean { value: p }, Boolean { value: g }) => p == g,
        (Text { value: p }, Text { value: g }) => normalize_text(p) == normalize_text(g),
        (Text { .. }, _) | (_, Text { .. }) | (Boolean { .. }, _) | (_, Boolean { .. }) => false,
        _ => {
            let (p, g) = (pred.numeric().unwrap(), gold.numeric().unwrap());
            if numeric_match(p, g) {
                return true;
            }
            match (pred.is_percent(), gold.is_percent()) {
                (true, false) => numeric_match(p / 100.0, g),
                (false, true) => numeric_match(p, g / 100.0),
                _ => false,
            }
        }
    }
}

fn f1_tokens(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Bag-of-tokens F1, case-folded. Two empty answers score 1.
pub fn answer_f1(pred: &str, gold: &str) -> f64 {
    let p = f1_tokens(pred);
    let g = f1_tokens(gold);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

// ---------------------------------------------------------------- programs

/// Operation tree shared by generated programs and gold op sequences.
#[derive(Debug, Clone, PartialEq)]
pub enum OpTree {
    Num(f64),
    Op(String, Vec<OpTree>),
}

fn canon_num(v: f64) -> String {
    let r: f64 = format!("{v:.9e}").parse().unwrap_or(v);
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r}")
}

impl OpTree {
    /// Postfix form; operands of add and multiply are ordered canonically.
    pub fn canonical(&self) -> String {
        match self {
            OpTree::Num(v) => canon_num(*v),
            OpTree::Op(name, args) => {
                let mut parts: Vec<String> = args.iter().map(OpTree::canonical).collect();
                if matches!(name.as_str(), "add" | "multiply" | "min" | "max") {
                    parts.sort();
                }
                parts.push(name.clone());
                parts.join(" ")
            }
        }
    }
}

fn expr_tree(e: &Expr, env: &HashMap<String, OpTree>) -> Option<OpTree> {
    Some(match e {
        Expr::Num(v) => OpTree::Num(*v),
        Expr::Var(name, _) => env.get(name)?.clone(),
        Expr::Neg(inner) => match expr_tree(inner, env)? {
            OpTree::Num(v) => OpTree::Num(-v),
            t => OpTree::Op("multiply".into(), vec![OpTree::Num(-1.0), t]),
        },
        Expr::Bin(op, l, r) => {
            let name = match op {
                BinOp::Add => "add",
                BinOp::Sub => "subtract",
                BinOp::Mul => "multiply",
                BinOp::Div => "divide",
                BinOp::Pow => "exp",
            };
            OpTree::Op(name.into(), vec![expr_tree(l, env)?, expr_tree(r, env)?])
        }
        // rounding is presentation, not a reasoning step
        Expr::Call { name, args, .. } if name == "round" => expr_tree(args.first()?, env)?,
        Expr::Call { name, args, .. } => {
            OpTree::Op(name.clone(), args.iter().map(|a| expr_tree(a, env)).collect::<Option<Vec<_>>>()?)
        }
    })
}

/// The `result` binding of a program with every variable inlined.
pub fn program_tree(p: &Program) -> Option<OpTree> {
    let mut env: HashMap<String, OpTree> = HashMap::new();
    for s in &p.statements {
        let values: Vec<OpTree> = s.exprs.iter().map(|e| expr_tree(e, &env)).collect::<Option<_>>()?;
        for (t, v) in s.targets.iter().zip(values) {
            env.insert(t.clone(), v);
        }
    }
    env.remove("result")
}

const GOLD_OPS: [&str; 6] = ["add", "subtract", "multiply", "divide", "exp", "greater"];

fn gold_operand(s: &str, steps: &[OpTree]) -> Option<OpTree> {
    let s = s.trim();
    if let Some(i) = s.strip_prefix('#') {
        return steps.get(i.parse::<usize>().ok()?).cloned();
    }
    if let Some(c) = s.strip_prefix("const_") {
        let (neg, digits) = match c.strip_prefix('m') {
            Some(d) => (true, d),
            None => (false, c),
        };
        let v: f64 = digits.parse().ok()?;
        return Some(OpTree::Num(if neg { -v } else { v }));
    }
    let cleaned: String = s.chars().filter(|c| !matches!(c, '$' | ',' | '%')).collect();
    cleaned.parse().ok().map(OpTree::Num)
}

/// Parse `subtract(142, 135), divide(#0, 135)`; `#i` is the i-th step.
pub fn parse_gold_program(s: &str) -> Option<OpTree> {
    let mut steps: Vec<OpTree> = Vec::new();
    let mut rest = s.trim();
    while !rest.is_empty() {
        let open = rest.find('(')?;
        let close = open + rest[open..].find(')')?;
        let name = rest[..open].trim().trim_start_matches(',').trim().to_lowercase();
        if !GOLD_OPS.contains(&name.as_str()) {
            return None;
        }
        let args = rest[open + 1..close].split(',').map(|a| gold_operand(a, &steps)).collect::<Option<Vec<_>>>()?;
        if args.len() != 2 {
            return None;
        }
        steps.push(OpTree::Op(name, args));
        rest = rest[close + 1..].trim().trim_start_matches(',').trim();
        if rest.eq_ignore_ascii_case("eof") {
            break;
        }
    }
    steps.pop()
}

/// None when the gold program cannot be canonicalized (the example is then
/// left out of the program-accuracy denominator).
pub fn prog_accuracy(pred: &Program, gold: &str) -> Option<bool> {
    let g = parse_gold_program(gold)?;
    Some(program_tree(pred).is_some_and(|p| p.canonical() == g.canonical()))
}

// ---------------------------------------------------------------- retrieval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub n_queries: usize,
}

/// Queries without gold ids are left out.
pub fn recall_metrics(retrieved: &[Vec<String>], gold: &[Vec<String>], ks: &[usize]) -> Result<RecallReport, EvalError> {
    if retrieved.len() != gold.len() {
        return Err(EvalError::LengthMismatch(retrieved.len(), gold.len()));
    }
    let mut sums: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut rr = 0.0;
    let mut n = 0;
    for (ranked, g) in retrieved.iter().zip(gold) {
        if g.is_empty() {
            continue;
        }
        n += 1;
        let gset: HashSet<&str> = g.iter().map(String::as_str).collect();
        for (&k, s) in sums.iter_mut() {
            let hits = ranked.iter().take(k).filter(|id| gset.contains(id.as_str())).collect::<HashSet<_>>().len();
            *s += hits as f64 / gset.len() as f64;
        }
        if let Some(pos) = ranked.iter().position(|id| gset.contains(id.as_str())) {
            rr += 1.0 / (pos + 1) as f64;
        }
    }
    let denom = n.max(1) as f64;
    Ok(RecallReport { recall_at: sums.into_iter().map(|(k, s)| (k, s / denom)).collect(), mrr: rr / denom, n_queries: n })
}

// ---------------------------------------------------------------- significance

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub acc_a: f64,
    pub acc_b: f64,
    pub ci_a: (f64, f64),
    pub ci_b: (f64, f64),
    /// A right, B wrong.
    pub b: usize,
    /// A wrong, B right.
    pub c: usize,
    pub mcnemar_chi2: f64,
    pub mcnemar_p: f64,
}

fn accuracy(v: &[bool]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().filter(|x| **x).count() as f64 / v.len() as f64
    }
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Paired bootstrap accuracies: each resample draws the same indices for
/// every vector.
pub fn bootstrap_accuracies(vectors: &[&[bool]], n_boot: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = vectors.first().map_or(0, |v| v.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::with_capacity(n_boot); vectors.len()];
    let mut hits = vec![0usize; vectors.len()];
    for _ in 0..n_boot {
        hits.iter_mut().for_each(|h| *h = 0);
        for _ in 0..n {
            let i = rng.random_range(0..n);
            for (h, v) in hits.iter_mut().zip(vectors) {
                *h += v[i] as usize;
            }
        }
        for (o, h) in out.iter_mut().zip(&hits) {
            o.push(*h as f64 / n.max(1) as f64);
        }
    }
    out
}

pub fn bootstrap_ci(correct: &[bool], n_boot: usize, seed: u64) -> (f64, f64) {
    let mut accs = bootstrap_accuracies(&[correct], n_boot, seed).remove(0);
    accs.sort_by(f64::total_cmp);
    if accs.is_empty() {
        return (0.0, 0.0);
    }
    (percentile(&accs, 0.025), percentile(&accs, 0.975))
}

pub fn mcnemar(b: usize, c: usize) -> (f64, f64) {
    if b + c == 0 {
        return (0.0, 1.0);
    }
    let d = b as f64 - c as f64;
    let chi2 = d * d / (b + c) as f64;
    let p = 1.0 - ChiSquared::new(1.0).expect("one degree of freedom").cdf(chi2);
    (chi2, p)
}

pub fn significance(a: &[bool], b_vec: &[bool], n_boot: usize, seed: u64) -> Result<Significance, EvalError> {
    if a.len() != b_vec.len() {
        return Err(EvalError::LengthMismatch(a.len(), b_vec.len()));
    }
    let mut boots = bootstrap_accuracies(&[a, b_vec], n_boot, seed);
    let ci = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        if v.is_empty() {
            (0.0, 0.0)
        } else {
            (percentile(v, 0.025), percentile(v, 0.975))
        }
    };
    let ci_a = ci(&mut boots[0]);
    let ci_b = ci(&mut boots[1]);
    let b = a.iter().zip(b_vec).filter(|(x, y)| **x && !**y).count();
    let c = a.iter().zip(b_vec).filter(|(x, y)| !**x && **y).count();
    let (mcnemar_chi2, mcnemar_p) = mcnemar(b, c);
    Ok(Significance { acc_a: accuracy(a), acc_b: accuracy(b_vec), ci_a, ci_b, b, c, mcnemar_chi2, mcnemar_p })
}

// ---------------------------------------------------------------- cost

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub label: String,
    pub n: usize,
    pub mean_calls: f64,
    pub mean_latency_ms: f64,
    pub mean_cost: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
}

pub struct CostGroup<'a> {
    pub label: &'a str,
    pub traces: &'a [AgentTrace],
    pub correct: Option<&'a [bool]>,
}

pub fn mean_calls(traces: &[AgentTrace]) -> f64 {
    traces.iter().map(|t| t.totals.total_calls as f64).sum::<f64>() / traces.len().max(1) as f64
}

/// One row per non-empty group.
pub fn cost_report(groups: &[CostGroup]) -> CostReport {
    let rows = groups
        .iter()
        .filter(|g| !g.traces.is_empty() && !g.label.is_empty())
        .map(|g| {
            let n = g.traces.len() as f64;
            CostRow {
                label: g.label.to_string(),
                n: g.traces.len(),
                mean_calls: mean_calls(g.traces),
                mean_latency_ms: g.traces.iter().map(|t| t.totals.latency_ms as f64).sum::<f64>() / n,
                mean_cost: g.traces.iter().map(|t| t.totals.cost).sum::<f64>() / n,
                accuracy: g.correct.map(accuracy),
            }
        })
        .collect();
    CostReport { rows }
}

impl CostReport {
    pub fn row(&self, label: &str) -> Option<&CostRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// `1 - mean_calls(on) / mean_calls(off)`.
    pub fn call_reduction(&self, on: &str, off: &str) -> Option<f64> {
        let (a, b) = (self.row(on)?, self.row(off)?);
        (b.mean_calls > 0.0).then(|| 1.0 - a.mean_calls / b.mean_calls)
    }

    pub fn render_table(&self) -> String {
        let mut s = format!("{:<16} {:>5} {:>9} {:>10} {:>10} {:>8}\n", "config", "n", "api", "lat(s)", "cost($)", "acc(%)");
        for r in &self.rows {
            let acc = r.accuracy.map_or("-".to_string(), |a| format!("{:.2}", a * 100.0));
            let _ = writeln!(
                s,
                "{:<16} {:>5} {:>9.2} {:>10.3} {:>10.4} {:>8}",
                r.label,
                r.n,
                r.mean_calls,
                r.mean_latency_ms / 1000.0,
                r.mean_cost,
                acc
            );
        }
        s
    }
}

// ---------------------------------------------------------------- reports

pub const RECALL_KS: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub exe_acc: f64,
    pub prog_acc: Option<f64>,
    pub prog_n: usize,
    pub turn_acc: Option<f64>,
    pub conversation_acc: Option<f64>,
    pub f1: f64,
    pub recall_at_k: BTreeMap<usize, f64>,
    pub mrr: Option<f64>,
    pub avg_api_calls: f64,
    pub avg_latency_ms: f64,
    pub est_cost: f64,
    pub unanswered: usize,
    pub verification: VerificationStats,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Verifier behaviour against gold: how often a REJECT was right to reject.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VerificationStats {
    pub verdicts: usize,
    pub rejects: usize,
    /// Share of rejects whose answer was wrong.
    pub reject_precision: Option<f64>,
    /// Share of wrong answers that were rejected.
    pub reject_recall: Option<f64>,
    pub failure_share: BTreeMap<String, f64>,
}

pub fn verification_stats(examples: &[QAExample], traces: &[AgentTrace]) -> VerificationStats {
    let gold: HashMap<&str, &AnswerValue> = examples.iter().map(|e| (e.id.as_str(), &e.gold_answer)).collect();
    let mut stats = VerificationStats::default();
    let (mut true_rejects, mut wrong) = (0usize, 0usize);
    let mut cats: BTreeMap<String, usize> = BTreeMap::new();
    for t in traces {
        let Some(g) = gold.get(t.question_id.as_str()) else { continue };
        for it in &t.iterations {
            let (Some(v), Some(o)) = (&it.verdict, &it.outcome) else { continue };
            stats.verdicts += 1;
            let is_wrong = !exe_accuracy(&o.answer, g);
            wrong += is_wrong as usize;
            if !v.accepted() {
                stats.rejects += 1;
                true_rejects += is_wrong as usize;
                for c in &v.failure_categories {
                    *cats.entry(serde_json::to_value(c).unwrap().as_str().unwrap().to_string()).or_default() += 1;
                }
            }
        }
    }
    stats.reject_precision = (stats.rejects > 0).then(|| true_rejects as f64 / stats.rejects as f64);
    stats.reject_recall = (wrong > 0).then(|| true_rejects as f64 / wrong as f64);
    let total: usize = cats.values().sum();
    stats.failure_share = cats.into_iter().map(|(k, v)| (k, v as f64 / total as f64)).collect();
    stats
}

/// Passage ids in first-retrieved order across every iteration.
pub fn retrieved_ids(trace: &AgentTrace) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for it in &trace.iterations {
        for q in &it.retrievals {
            for r in &q.results {
                if seen.insert(r.passage_id.clone()) {
                    out.push(r.passage_id.clone());
                }
            }
        }
    }
    out
}

/// Program text of the final answer when it came from PoT.
pub fn final_program(trace: &AgentTrace) -> Option<&str> {
    let o = trace.iterations.iter().rev().find_map(|i| i.outcome.as_ref())?;
    (o.mode == Mode::Pot).then_some(o.chain_or_program.as_str())
}

pub fn correctness(examples: &[QAExample], traces: &[AgentTrace]) -> Vec<bool> {
    examples
        .iter()
        .zip(traces)
        .map(|(e, t)| t.final_answer.as_ref().is_some_and(|a| exe_accuracy(a, &e.gold_answer)))
        .collect()
}

/// Traces must be in example order.
pub fn evaluate(examples: &[QAExample], traces: &[AgentTrace], format: Option<DatasetFormat>) -> Result<MetricReport, EvalError> {
    if examples.len() != traces.len() {
        return Err(EvalError::LengthMismatch(examples.len(), traces.len()));
    }
    if examples.is_empty() {
        return Err(EvalError::Empty { skipped: 0 });
    }
    let n = examples.len();
    let correct = correctness(examples, traces);
    let f1 = examples
        .iter()
        .zip(traces)
        .map(|(e, t)| answer_f1(&t.final_answer.as_ref().map(ToString::to_string).unwrap_or_default(), &e.gold_answer.to_string()))
        .sum::<f64>()
        / n as f64;

    let mut prog = Vec::new();
    for (e, t) in examples.iter().zip(traces) {
        let Some(gold) = &e.gold_program else { continue };
        if parse_gold_program(gold).is_none() {
            continue;
        }
        let ok = final_program(t).and_then(|p| parse_program(p).ok()).and_then(|p| prog_accuracy(&p, gold)).unwrap_or(false);
        prog.push(ok);
    }

    let turn_idx: Vec<usize> = (0..n).filter(|&i| examples[i].conversation_id.is_some()).collect();
    let turn_acc = (!turn_idx.is_empty()).then(|| turn_idx.iter().filter(|&&i| correct[i]).count() as f64 / turn_idx.len() as f64);
    let mut convs: BTreeMap<&str, bool> = BTreeMap::new();
    for &i in &turn_idx {
        let all = convs.entry(examples[i].conversation_id.as_deref().unwrap()).or_insert(true);
        *all &= correct[i];
    }
    let conversation_acc =
        (!convs.is_empty()).then(|| convs.values().filter(|v| **v).count() as f64 / convs.len() as f64);

    let (ranked, gold): (Vec<Vec<String>>, Vec<Vec<String>>) =
        examples.iter().zip(traces).map(|(e, t)| (retrieved_ids(t), e.gold_passage_ids.clone().unwrap_or_default())).unzip();
    let recall = recall_metrics(&ranked, &gold, &RECALL_KS)?;

    let mut notes = Vec::new();
    if format == Some(DatasetFormat::Tatqa) {
        notes.push("TAT-QA scored with execution accuracy and token F1 only; official type-specific rules are approximated".into());
    }
    Ok(MetricReport {
        n,
        exe_acc: accuracy(&correct),
        prog_acc: (!prog.is_empty()).then(|| accuracy(&prog)),
        prog_n: prog.len(),
        turn_acc,
        conversation_acc,
        f1,
        recall_at_k: if recall.n_queries > 0 { recall.recall_at } else { BTreeMap::new() },
        mrr: (recall.n_queries > 0).then_some(recall.mrr),
        avg_api_calls: mean_calls(traces),
        avg_latency_ms: traces.iter().map(|t| t.totals.latency_ms as f64).sum::<f64>() / n as f64,
        est_cost: traces.iter().map(|t| t.totals.cost).sum::<f64>() / n as f64,
        unanswered: traces.iter().filter(|t| t.final_answer.is_none()).count(),
        verification: verification_stats(examples, traces),
        notes,
    })
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_table(&self) -> String {
        let pct = |v: f64| format!("{:.2}", v * 100.0);
        let opt = |v: Option<f64>| v.map_or("-".to_string(), pct);
        let mut s = String::new();
        let _ = writeln!(s, "examples           {}", self.n);
        let _ = writeln!(s, "exe_acc (%)        {}", pct(self.exe_acc));
        let _ = writeln!(s, "prog_acc (%)       {} (n={})", opt(self.prog_acc), self.prog_n);
        let _ = writeln!(s, "turn_acc (%)       {}", opt(self.turn_acc));
        let _ = writeln!(s, "conversation (%)   {}", opt(self.conversation_acc));
        let _ = writeln!(s, "f1 (%)             {}", pct(self.f1));
        for (k, v) in &self.recall_at_k {
            let _ = writeln!(s, "recall@{k:<11} {}", pct(*v));
        }
        let _ = writeln!(s, "mrr                {}", self.mrr.map_or("-".into(), |m| format!("{m:.4}")));
        let _ = writeln!(s, "avg api calls      {:.2}", self.avg_api_calls);
        let _ = writeln!(s, "avg latency (s)    {:.3}", self.avg_latency_ms / 1000.0);
        let _ = writeln!(s, "est cost ($)       {:.4}", self.est_cost);
        let _ = writeln!(s, "unanswered         {}", self.unanswered);
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

// ---------------------------------------------------------------- runner

pub struct EvalRun {
    pub traces: Vec<AgentTrace>,
    pub correct: Vec<bool>,
    pub report: MetricReport,
}

enum Unit {
    Single(usize),
    Conversation(Vec<usize>),
}

fn work_units(examples: &[QAExample]) -> Vec<Unit> {
    let mut convs: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut order: Vec<Result<usize, &str>> = Vec::new();
    for (i, e) in examples.iter().enumerate() {
        match &e.conversation_id {
            Some(c) => {
                let v = convs.entry(c.as_str()).or_default();
                if v.is_empty() {
                    order.push(Err(c.as_str()));
                }
                v.push(i);
            }
            None => order.push(Ok(i)),
        }
    }
    order
        .into_iter()
        .map(|o| match o {
            Ok(i) => Unit::Single(i),
            Err(c) => {
                let mut idx = convs.remove(c).unwrap();
                idx.sort_by_key(|&i| (examples[i].turn_index.unwrap_or(usize::MAX), i));
                Unit::Conversation(idx)
            }
        })
        .collect()
}

/// Run every example through the agent on `workers` threads. Each question
/// or conversation gets its own backend session, and results are stored by
/// position, so output is independent of scheduling.
pub fn run_examples(examples: &[QAExample], client: &LlmClient, res: &Resources, cfg: &AgentConfig, workers: usize) -> Vec<AgentTrace> {
    let units = work_units(examples);
    let slots: Mutex<Vec<Option<AgentTrace>>> = Mutex::new(vec![None; examples.len()]);
    let next = AtomicUsize::new(0);
    let work = || loop {
        let u = next.fetch_add(1, Ordering::SeqCst);
        let Some(unit) = units.get(u) else { break };
        let done: Vec<(usize, AgentTrace)> = match unit {
            Unit::Single(i) => {
                let e = &examples[*i];
                vec![(*i, run_question(&e.id, &e.question, client, res, cfg).1)]
            }
            Unit::Conversation(idx) => {
                let mut conv = Conversation::new(client, cfg);
                idx.iter()
                    .map(|&i| {
                        let e = &examples[i];
                        (i, conv.ask(&e.id, &e.question, res, cfg).clone())
                    })
                    .collect()
            }
        };
        let mut s = slots.lock().unwrap();
        for (i, t) in done {
            s[i] = Some(t);
        }
    };
    std::thread::scope(|scope| {
        for _ in 1..workers.max(1) {
            scope.spawn(work);
        }
        work();
    });
    slots.into_inner().unwrap().into_iter().map(|t| t.expect("every example ran")).collect()
}

pub fn run_eval(
    examples: &[QAExample],
    format: Option<DatasetFormat>,
    client: &LlmClient,
    res: &Resources,
    cfg: &AgentConfig,
    workers: usize,
) -> Result<EvalRun, EvalError> {
    let traces = run_examples(examples, client, res, cfg, workers);
    let report = evaluate(examples, &traces, format)?;
    let correct = correctness(examples, &traces);
    Ok(EvalRun { traces, correct, report })
}

// ---------------------------------------------------------------- sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Theta,
    TopK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub exe_acc: f64,
    pub avg_api_calls: f64,
    pub avg_iterations: f64,
    pub est_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
}

fn round10(v: f64) -> f64 {
    format!("{v:.10}").parse().unwrap_or(v)
}

/// `start..end:step` (end inclusive) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, EvalError> {
    let err = |m: &str| EvalError::Grid(spec.to_string(), m.to_string());
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| err(&format!("{s:?} is not a number")));
    if let Some((range, step)) = spec.split_once(':') {
        let (a, b) = range.split_once("..").ok_or_else(|| err("expected start..end:step"))?;
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if step <= 0.0 || b < a {
            return Err(err("need step > 0 and end >= start"));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| round10(a + i as f64 * step)).collect());
    }
    let v: Vec<f64> = spec.split(',').map(num).collect::<Result<_, _>>()?;
    if v.is_empty() {
        return Err(err("empty grid"));
    }
    Ok(v)
}

pub fn run_sweep(
    examples: &[QAExample],
    client: &LlmClient,
    res: &Resources,
    base: &AgentConfig,
    param: SweepParam,
    values: &[f64],
    workers: usize,
) -> Result<SweepReport, EvalError> {
    let mut rows = Vec::new();
    for &value in values {
        let mut cfg = base.clone();
        match param {
            SweepParam::Theta => cfg.confidence_threshold = value,
            SweepParam::TopK => cfg.retrieval.top_k = value.round().max(1.0) as usize,
        }
        let traces = run_examples(examples, client, res, &cfg, workers);
        let report = evaluate(examples, &traces, None)?;
        rows.push(SweepRow {
            value,
            exe_acc: report.exe_acc,
            avg_api_calls: report.avg_api_calls,
            avg_iterations: traces.iter().map(|t| t.iterations.len() as f64).sum::<f64>() / traces.len() as f64,
            est_cost: report.est_cost,
        });
    }
    Ok(SweepReport { param, rows })
}

impl SweepReport {
    pub fn render_table(&self) -> String {
        let name = match self.param {
            SweepParam::Theta => "theta",
            SweepParam::TopK => "top_k",
        };
        let mut s = format!("{name:>6} {:>8} {:>9} {:>7} {:>10}\n", "acc(%)", "api", "iters", "cost($)");
        for r in &self.rows {
            let value = match self.param {
                SweepParam::Theta => format!("{:.2}", r.value),
                SweepParam::TopK => format!("{}", r.value),
            };
            let _ = writeln!(
                s,
                "{:>6} {:>8.2} {:>9.2} {:>7.2} {:>10.4}",
                value,
                r.exe_acc * 100.0,
                r.avg_api_calls,
                r.avg_iterations,
                r.est_cost
            );
        }
        s
    }
}
