//! Query decomposition into tagged sub-questions.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::llm::{render_prompt, text_slot, LlmClient, LlmError, Slot, Slots, TemplateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubTag {
    Retrieval,
    Computation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    TemporalComparison,
    Ratio,
    MultiEntityAggregation,
    ConditionalFiltering,
    DerivedMetric,
    Lookup,
}

impl Pattern {
    pub fn parse(s: &str) -> Option<Pattern> {
        let norm = s.trim().to_lowercase().replace([' ', '-'], "_");
        Some(match norm.as_str() {
            "temporal_comparison" | "temporal" => Pattern::TemporalComparison,
            "ratio" => Pattern::Ratio,
            "multi_entity_aggregation" | "aggregation" => Pattern::MultiEntityAggregation,
            "conditional_filtering" | "filtering" => Pattern::ConditionalFiltering,
            "derived_metric" | "derived" => Pattern::DerivedMetric,
            "lookup" => Pattern::Lookup,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubQuestion {
    pub text: String,
    pub tag: SubTag,
    pub pattern: Pattern,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub sub_questions: Vec<SubQuestion>,
    /// True when the reply could not be parsed and the question was used as is.
    pub fallback: bool,
}

impl Decomposition {
    pub fn retrieval(&self) -> impl Iterator<Item = &SubQuestion> {
        self.sub_questions.iter().filter(|s| s.tag == SubTag::Retrieval)
    }

    pub fn has_computation(&self) -> bool {
        self.sub_questions.iter().any(|s| s.tag == SubTag::Computation)
    }
}

pub fn fallback_decomposition(question: &str) -> Decomposition {
    Decomposition {
        sub_questions: vec![SubQuestion {
            text: question.trim().to_string(),
            tag: SubTag::Retrieval,
            pattern: Pattern::Lookup,
            order: 0,
        }],
        fallback: true,
    }
}

fn line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:[-*]\s*|\(?\d+[.):]\s*)?(R|C|retrieval|computation|retrieve|compute)\s*[:\]]\s*(.+?)\s*(?:\[([a-z_ -]+)\])?\s*$")
            .unwrap()
    })
}

fn pattern_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*PATTERN\s*:\s*([a-z_ -]+?)\s*$").unwrap())
}

/// Parse `R:` / `C:` lines. Returns None when no sub-question line is found.
pub fn parse_sub_questions(reply: &str) -> Option<Vec<SubQuestion>> {
    let mut default_pattern = None;
    let mut raw: Vec<(SubTag, String, Option<Pattern>)> = Vec::new();
    for line in reply.lines() {
        if let Some(c) = pattern_re().captures(line) {
            default_pattern = Pattern::parse(&c[1]).or(default_pattern);
            continue;
        }
        if let Some(c) = line_re().captures(line) {
            let tag = if c[1].to_lowercase().starts_with('r') { SubTag::Retrieval } else { SubTag::Computation };
            let text = c[2].trim().to_string();
            if text.is_empty() {
                continue;
            }
            raw.push((tag, text, c.get(3).and_then(|m| Pattern::parse(m.as_str()))));
        }
    }
    if raw.is_empty() {
        return None;
    }
    let default_pattern = default_pattern.unwrap_or(Pattern::Lookup);
    Some(
        raw.into_iter()
            .enumerate()
            .map(|(order, (tag, text, p))| SubQuestion { text, tag, pattern: p.unwrap_or(default_pattern), order })
            .collect(),
    )
}

pub fn parse_decomposition(question: &str, reply: &str) -> Decomposition {
    match parse_sub_questions(reply) {
        Some(sub_questions) => Decomposition { sub_questions, fallback: false },
        None => fallback_decomposition(question),
    }
}

pub fn history_slot(history: &[String]) -> Slot {
    let lines: Vec<String> = history
        .chunks(2)
        .flat_map(|pair| {
            let mut v = vec![format!("Q: {}", pair[0])];
            if let Some(a) = pair.get(1) {
                v.push(format!("A: {a}"));
            }
            v
        })
        .collect();
    Slot::List(lines)
}

/// `history` alternates earlier questions and answers.
pub fn decompose(question: &str, history: &[String], client: &LlmClient) -> Result<Decomposition, LlmError> {
    let mut slots = Slots::new();
    slots.insert("question", text_slot(question));
    slots.insert("history", history_slot(history));
    let prompt = render_prompt(TemplateId::Decompose, &slots)?;
    let reply = client.call(TemplateId::Decompose.tag(), prompt)?;
    Ok(parse_decomposition(question, &reply))
}
