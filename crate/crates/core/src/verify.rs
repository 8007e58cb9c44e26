//! Self-verification of a candidate answer and verifier-driven refinement.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::llm::{render_prompt, text_slot, LlmClient, Slot, Slots, TemplateId};
use crate::reason::decompose::{history_slot, parse_sub_questions};
use crate::reason::program::{parse_expression, parse_program, Expr};
use crate::reason::sandbox::{eval_expr, execute_with, ExecLimits};
use crate::reason::{Mode, ReasoningOutcome, SubQuestion, SubTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Sufficiency,
    Numeric,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub sufficiency: bool,
    pub numeric: bool,
    pub cross: bool,
    pub decision: Decision,
    pub failure_categories: Vec<Check>,
    pub explanations: BTreeMap<Check, String>,
}

impl Verdict {
    pub fn from_checks(sufficiency: (bool, String), numeric: (bool, String), cross: (bool, String)) -> Verdict {
        let mut failure_categories = Vec::new();
        let mut explanations = BTreeMap::new();
        for (check, (ok, why)) in [(Check::Sufficiency, &sufficiency), (Check::Numeric, &numeric), (Check::Cross, &cross)] {
            if !ok {
                failure_categories.push(check);
            }
            if !why.is_empty() {
                explanations.insert(check, why.clone());
            }
        }
        let decision = if sufficiency.0 && numeric.0 && cross.0 { Decision::Accept } else { Decision::Reject };
        Verdict { sufficiency: sufficiency.0, numeric: numeric.0, cross: cross.0, decision, failure_categories, explanations }
    }

    pub fn accepted(&self) -> bool {
        self.decision == Decision::Accept
    }
}

pub const NUMERIC_TOLERANCE: f64 = 0.01;
pub const REEXECUTION_TOLERANCE: f64 = 1e-9;

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// An arithmetic claim `expression = value` found in a reasoning chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ArithmeticClaim {
    pub expression: String,
    pub claimed: f64,
    pub claimed_percent: bool,
}

fn rhs_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*\$?\s*(-?\d[\d,]*(?:\.\d+)?|-?\.\d+)\s*(%|percent\b|million\b|billion\b|thousand\b|bn\b|mn\b|[MBK]\b)?")
            .unwrap()
    })
}

fn lhs_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:[\s\d.,$()+\-*/×÷^%]|\b(?:million|billion|thousand|[MBK])\b)+$").unwrap())
}

fn suffix_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(\d)\s*(million|billion|thousand|[MBK])\b").unwrap())
}

fn scale(s: Option<&str>) -> f64 {
    match s {
        Some("million" | "mn" | "M") => 1e6,
        Some("billion" | "bn" | "B") => 1e9,
        Some("thousand" | "K") => 1e3,
        _ => 1.0,
    }
}

fn normalize_lhs(s: &str) -> String {
    let s = s.replace('×', "*").replace('÷', "/").replace('^', "**").replace(['$', '%'], "");
    // thousands separators only; a comma between spaces is list punctuation
    let digits_comma = Regex::new(r"(\d),(\d{3})").unwrap();
    let mut s = s;
    while digits_comma.is_match(&s) {
        s = digits_comma.replace_all(&s, "$1$2").into_owned();
    }
    suffix_re()
        .replace_all(&s, |c: &regex::Captures| format!("{}*{}", &c[1], scale(Some(&c[2]))))
        .into_owned()
}

fn has_operator(e: &Expr) -> bool {
    matches!(e, Expr::Bin(..)) || matches!(e, Expr::Call { .. }) || matches!(e, Expr::Neg(inner) if has_operator(inner))
}

/// Parse what is left of an `=`, dropping unmatched leading parentheses.
fn parse_lhs(raw: &str) -> Option<Expr> {
    let mut s = raw.trim().trim_start_matches([',', '.']).trim().to_string();
    for _ in 0..4 {
        if s.is_empty() {
            return None;
        }
        if let Ok(e) = parse_expression(&s) {
            return has_operator(&e).then_some(e);
        }
        let opens = s.matches('(').count();
        let closes = s.matches(')').count();
        if opens > closes && s.starts_with('(') {
            s = s[1..].trim().to_string();
        } else if closes > opens && s.ends_with(')') {
            s.pop();
        } else {
            return None;
        }
    }
    None
}

pub fn extract_claims(chain: &str) -> Vec<(Expr, ArithmeticClaim)> {
    let mut out = Vec::new();
    for line in chain.lines() {
        let bytes: Vec<(usize, char)> = line.char_indices().collect();
        for (k, &(i, c)) in bytes.iter().enumerate() {
            if c != '=' {
                continue;
            }
            let prev = if k > 0 { bytes[k - 1].1 } else { ' ' };
            let next = bytes.get(k + 1).map_or(' ', |x| x.1);
            if prev == '=' || next == '=' || prev == '<' || prev == '>' || prev == '!' {
                continue;
            }
            let Some(rc) = rhs_re().captures(&line[i + 1..]) else { continue };
            let Ok(mut claimed) = rc[1].replace(',', "").parse::<f64>() else { continue };
            let suffix = rc.get(2).map(|m| m.as_str());
            let claimed_percent = matches!(suffix, Some("%" | "percent"));
            claimed *= scale(suffix);
            let Some(lm) = lhs_re().find(&line[..i]) else { continue };
            let expression = normalize_lhs(lm.as_str());
            if let Some(e) = parse_lhs(&expression) {
                out.push((e, ArithmeticClaim { expression: expression.trim().to_string(), claimed, claimed_percent }));
            }
        }
    }
    out
}

/// Re-run the arithmetic behind an outcome. PoT outcomes re-execute the
/// stored program; CoT chains have each `expression = value` re-evaluated.
/// A chain with no extractable arithmetic passes.
pub fn check_numeric(outcome: &ReasoningOutcome) -> (bool, String) {
    match outcome.mode {
        Mode::Pot => {
            let Some(expected) = outcome.execution_value else {
                return (false, "program outcome has no execution value".into());
            };
            let rerun = parse_program(&outcome.chain_or_program)
                .map_err(|e| e.to_string())
                .and_then(|p| execute_with(&p, &ExecLimits::default()).map_err(|e| e.to_string()));
            match rerun {
                Ok(v) if rel_close(v, expected, REEXECUTION_TOLERANCE) => (true, String::new()),
                Ok(v) => (false, format!("re-execution gave {v}, recorded {expected}")),
                Err(e) => (false, format!("re-execution failed: {e}")),
            }
        }
        Mode::Cot => {
            for (expr, claim) in extract_claims(&outcome.chain_or_program) {
                let Ok(v) = eval_expr(&expr) else {
                    return (false, format!("{} cannot be evaluated", claim.expression));
                };
                let ok = rel_close(v, claim.claimed, NUMERIC_TOLERANCE)
                    || (claim.claimed_percent && rel_close(v, claim.claimed / 100.0, NUMERIC_TOLERANCE));
                if !ok {
                    let shown = if claim.claimed_percent { format!("{:.2}%", v * 100.0) } else { format!("{v}") };
                    return (false, format!("{} evaluates to {shown}, not {}", claim.expression, claim.claimed));
                }
            }
            (true, String::new())
        }
    }
}

fn verdict_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*\**\s*(PASS|FAIL)\b\**\s*[:\-]?\s*(.*)$").unwrap())
}

/// PASS, or FAIL with a reason. Anything else is treated as a failure.
pub fn parse_check_reply(reply: &str) -> (bool, String) {
    for line in reply.lines() {
        if let Some(c) = verdict_line_re().captures(line) {
            return if c[1].eq_ignore_ascii_case("pass") {
                (true, String::new())
            } else {
                let why = c[2].trim();
                (false, if why.is_empty() { "check failed".into() } else { why.to_string() })
            };
        }
    }
    (false, "unparseable verifier reply".into())
}

fn llm_check(id: TemplateId, slots: &Slots, client: &LlmClient) -> (bool, String) {
    match render_prompt(id, slots).and_then(|p| client.call(id.tag(), p)) {
        Ok(reply) => parse_check_reply(&reply),
        Err(_) => (false, "verifier unavailable".into()),
    }
}

/// Three checks run in a fixed order (sufficiency, numeric, cross), so
/// scripted backends see a deterministic call sequence.
pub fn verify_answer(
    question: &str,
    outcome: &ReasoningOutcome,
    evidence: &[String],
    history: &[String],
    client: &LlmClient,
) -> Verdict {
    let mut slots = Slots::new();
    slots.insert("question", text_slot(question));
    slots.insert("evidence", Slot::List(evidence.to_vec()));
    slots.insert("answer", text_slot(outcome.answer.to_string()));
    slots.insert("reasoning", text_slot(outcome.chain_or_program.clone()));
    slots.insert("history", history_slot(history));
    let suff = llm_check(TemplateId::VerifySufficiency, &slots, client);
    let num = check_numeric(outcome);
    let cross = llm_check(TemplateId::VerifyCross, &slots, client);
    Verdict::from_checks(suff, num, cross)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub sub_questions: Vec<SubQuestion>,
    pub fallback: bool,
}

fn failure_lines(verdict: &Verdict) -> Vec<String> {
    // sufficiency first: missing evidence is the most common failure
    let mut cats = verdict.failure_categories.clone();
    cats.sort();
    cats.iter()
        .map(|c| {
            let name = match c {
                Check::Sufficiency => "evidence sufficiency",
                Check::Numeric => "numerical consistency",
                Check::Cross => "cross-evidence validation",
            };
            match verdict.explanations.get(c) {
                Some(why) => format!("{name}: {why}"),
                None => name.to_string(),
            }
        })
        .collect()
}

/// Retrieval sub-questions qualified with the verifier's explanation.
pub fn fallback_refinement(question: &str, previous: &[SubQuestion], verdict: &Verdict) -> Vec<SubQuestion> {
    let qualifier = failure_lines(verdict).join("; ");
    let mut base: Vec<SubQuestion> = previous.to_vec();
    if !base.iter().any(|s| s.tag == SubTag::Retrieval) {
        base.insert(
            0,
            SubQuestion {
                text: question.to_string(),
                tag: SubTag::Retrieval,
                pattern: previous.first().map_or(crate::reason::Pattern::Lookup, |s| s.pattern),
                order: 0,
            },
        );
    }
    base.into_iter()
        .enumerate()
        .map(|(order, mut s)| {
            if s.tag == SubTag::Retrieval && !qualifier.is_empty() {
                s.text = format!("{} ({qualifier})", s.text);
            }
            s.order = order;
            s
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn refine_queries(
    question: &str,
    outcome: &ReasoningOutcome,
    verdict: &Verdict,
    evidence: &[String],
    previous: &[SubQuestion],
    history: &[String],
    client: &LlmClient,
) -> Refinement {
    let mut slots = Slots::new();
    slots.insert("question", text_slot(question));
    slots.insert("evidence", Slot::List(evidence.to_vec()));
    slots.insert("answer", text_slot(outcome.answer.to_string()));
    slots.insert("failures", Slot::List(failure_lines(verdict)));
    slots.insert(
        "sub_questions",
        Slot::List(
            previous
                .iter()
                .map(|s| format!("{}: {}", if s.tag == SubTag::Retrieval { "R" } else { "C" }, s.text))
                .collect(),
        ),
    );
    slots.insert("history", history_slot(history));
    let parsed = render_prompt(TemplateId::Refine, &slots)
        .and_then(|p| client.call(TemplateId::Refine.tag(), p))
        .ok()
        .and_then(|reply| parse_sub_questions(&reply));
    match parsed {
        Some(sub_questions) => Refinement { sub_questions, fallback: false },
        None => Refinement { sub_questions: fallback_refinement(question, previous, verdict), fallback: true },
    }
}
