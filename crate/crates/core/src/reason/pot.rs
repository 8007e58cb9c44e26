//! Program-of-thought: generate, check, execute, verify, repair.

use serde::{Deserialize, Serialize};

use super::decompose::history_slot;
use super::program::{parse_program, static_check, DEFAULT_ALLOWLIST};
use super::sandbox::{execute_with, ExecLimits};
use super::{expects_percent, AnswerValue, CalibrationModel, Mode, ReasoningOutcome};
use crate::llm::{render_prompt, text_slot, LlmClient, LlmError, Slot, Slots, TemplateId};
use crate::text::numeric_literals;

#[derive(Clone)]
pub struct PotConfig {
    pub max_repairs: u32,
    pub limits: ExecLimits,
}

impl Default for PotConfig {
    fn default() -> Self {
        PotConfig { max_repairs: 2, limits: ExecLimits::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotAttempt {
    pub program: String,
    pub error: Option<String>,
}

/// Every attempt failed, or the model could not be reached. The caller is
/// expected to fall back to chain-of-thought.
#[derive(Debug, Clone, PartialEq)]
pub struct PotFailure {
    pub attempts: Vec<PotAttempt>,
    pub llm_error: Option<LlmError>,
}

impl std::fmt::Display for PotFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.llm_error, self.attempts.last()) {
            (Some(e), _) => write!(f, "program generation failed: {e}"),
            (None, Some(a)) => {
                write!(f, "{} program attempts failed; last: {}", self.attempts.len(), a.error.as_deref().unwrap_or("?"))
            }
            (None, None) => f.write_str("no program attempts"),
        }
    }
}

pub fn raw_confidence_for(repairs: u32) -> f64 {
    match repairs {
        0 => 0.9,
        1 => 0.7,
        _ => 0.5,
    }
}

/// Largest magnitude a result may plausibly take for this evidence.
pub fn range_bound(evidence: &[String]) -> f64 {
    let max_lit = evidence.iter().flat_map(|e| numeric_literals(e)).map(f64::abs).fold(0.0, f64::max);
    (1e6 * max_lit).max(1e6)
}

/// Program text from a reply, dropping Markdown code fences.
pub fn strip_fences(reply: &str) -> String {
    let t = reply.trim();
    if let Some(start) = t.find("```") {
        let after = &t[start + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        let end = body.find("```").unwrap_or(body.len());
        return body[..end].trim().to_string();
    }
    t.to_string()
}

/// Parse, check, run and range-verify one candidate program.
pub fn evaluate_candidate(text: &str, bound: f64, limits: &ExecLimits) -> Result<f64, String> {
    let p = parse_program(text).map_err(|e| e.to_string())?;
    if let Err(v) = static_check(&p, DEFAULT_ALLOWLIST) {
        return Err(v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "));
    }
    let v = execute_with(&p, limits).map_err(|e| e.to_string())?;
    if !v.is_finite() {
        return Err("result is not a finite real number".into());
    }
    if v.abs() > bound {
        return Err(format!("result {v} is outside the plausible range of +/-{bound}"));
    }
    Ok(v)
}

pub fn pot_reason(
    question: &str,
    evidence: &[String],
    history: &[String],
    client: &LlmClient,
    calibration: Option<&CalibrationModel>,
    cfg: &PotConfig,
) -> Result<ReasoningOutcome, PotFailure> {
    let bound = range_bound(evidence);
    let mut attempts: Vec<PotAttempt> = Vec::new();
    let mut slots = Slots::new();
    slots.insert("question", text_slot(question));
    slots.insert("evidence", Slot::List(evidence.to_vec()));
    slots.insert("history", history_slot(history));

    for attempt in 0..=cfg.max_repairs {
        let template = if attempt == 0 { TemplateId::Pot } else { TemplateId::Repair };
        if attempt > 0 {
            let last = attempts.last().unwrap();
            slots.insert("program", text_slot(last.program.clone()));
            slots.insert("error", text_slot(last.error.clone().unwrap_or_default()));
        }
        let reply = render_prompt(template, &slots)
            .and_then(|p| client.call(template.tag(), p))
            .map_err(|e| PotFailure { attempts: attempts.clone(), llm_error: Some(e) })?;
        let program = strip_fences(&reply);
        match evaluate_candidate(&program, bound, &cfg.limits) {
            Ok(v) => {
                let raw = raw_confidence_for(attempt);
                let answer = if expects_percent(question) { AnswerValue::Percent { value: v } } else { AnswerValue::number(v) };
                return Ok(ReasoningOutcome {
                    answer,
                    raw_confidence: raw,
                    calibrated_confidence: calibration.map(|m| m.apply(raw)),
                    mode: Mode::Pot,
                    chain_or_program: program,
                    execution_value: Some(v),
                    repairs: attempt,
                });
            }
            Err(e) => attempts.push(PotAttempt { program, error: Some(e) }),
        }
    }
    Err(PotFailure { attempts, llm_error: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{CallTag, ScriptRule, ScriptedBackend, UsageLedger};
    use std::sync::Arc;

    fn rule(tag: CallTag, response: &str) -> ScriptRule {
        ScriptRule { tag: Some(tag), contains: None, pattern: None, nth: None, response: response.into() }
    }

    fn client(rules: Vec<ScriptRule>) -> LlmClient {
        LlmClient::new(Arc::new(ScriptedBackend::new(rules).unwrap()), Arc::new(UsageLedger::default()))
    }

    const CAGR: &str = "v_begin, v_end, n = 2847, 3214, 2\ncagr = (v_end / v_begin) ** (1/n) - 1\nresult = round(cagr * 100, 2)";

    #[test]
    fn clean_first_pass() {
        let c = client(vec![rule(CallTag::Pot, &format!("```python\n{CAGR}\n```"))]);
        let ev = vec!["Operating expenses: $2,847M (2018), $3,214M (2020)".to_string()];
        let o = pot_reason("What was the CAGR of operating expenses?", &ev, &[], &c, None, &PotConfig::default()).unwrap();
        assert_eq!(o.mode, Mode::Pot);
        assert_eq!(o.execution_value, Some(6.25));
        assert_eq!(o.raw_confidence, 0.9);
        assert!(o.answer.is_percent());
        assert_eq!(o.calibrated_confidence, None);
    }

    #[test]
    fn one_repair() {
        let c = client(vec![rule(CallTag::Pot, "result = (142 - 135 / 135"), rule(CallTag::Repair, "result = round((142-135)/135*100, 2)")]);
        let o = pot_reason("percentage change?", &[], &[], &c, None, &PotConfig::default()).unwrap();
        assert_eq!(o.repairs, 1);
        assert_eq!(o.raw_confidence, 0.7);
        assert_eq!(o.execution_value, Some(5.19));
        assert_eq!(c.ledger().snapshot().calls(CallTag::Repair), 1);
    }

    #[test]
    fn repair_prompt_carries_error() {
        let c = client(vec![
            rule(CallTag::Pot, "x = 1"),
            ScriptRule {
                tag: Some(CallTag::Repair),
                contains: Some("must assign `result`".into()),
                pattern: None,
                nth: None,
                response: "result = 1".into(),
            },
        ]);
        assert!(pot_reason("q", &[], &[], &c, None, &PotConfig::default()).is_ok());
    }

    #[test]
    fn three_failures() {
        let c = client(vec![rule(CallTag::Pot, "result = 1/0"), rule(CallTag::Repair, "result = = 2")]);
        let f = pot_reason("q", &[], &[], &c, None, &PotConfig::default()).unwrap_err();
        assert_eq!(f.attempts.len(), 3);
        assert!(f.llm_error.is_none());
        assert_eq!(f.attempts[0].error.as_deref(), Some("division by zero"));
    }

    #[test]
    fn range_bound_rejects_implausible_values() {
        assert_eq!(range_bound(&[]), 1e6);
        assert_eq!(range_bound(&["value 2,000".into()]), 2e9);
        assert!(evaluate_candidate("result = 3e9", 2e9, &ExecLimits::default()).is_err());
        assert!(evaluate_candidate("result = 3e8", 2e9, &ExecLimits::default()).is_ok());
    }

    #[test]
    fn calibrated_when_model_present() {
        let m = CalibrationModel { pairs: vec![(0.5, 0.2), (0.9, 0.6)] };
        let c = client(vec![rule(CallTag::Pot, "result = 2")]);
        let o = pot_reason("q", &[], &[], &c, Some(&m), &PotConfig::default()).unwrap();
        assert_eq!(o.calibrated_confidence, Some(0.6));
        assert_eq!(o.confidence(), 0.6);
    }
}
