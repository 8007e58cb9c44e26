use std::sync::OnceLock;

use regex::Regex;

use super::decompose::history_slot;
use super::{AnswerValue, CalibrationModel, Mode, ReasonError, ReasoningOutcome};
use crate::llm::{render_prompt, text_slot, LlmClient, Slot, Slots, TemplateId};

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)ANSWER\s*:\s*(.*?)\s*(?:\|\s*CONFIDENCE\s*:\s*(\S*)\s*)?$").unwrap())
}

/// Answer and raw confidence from the last `ANSWER:` line. Confidence that
/// is missing or not a number in [0, 1] reads as 0.
pub fn parse_cot_reply(reply: &str) -> Result<(AnswerValue, f64), ReasonError> {
    let line = reply.lines().rev().find(|l| l.to_uppercase().contains("ANSWER:")).ok_or(ReasonError::NoAnswer)?;
    let c = answer_re().captures(line).ok_or(ReasonError::NoAnswer)?;
    let answer = AnswerValue::parse(&c[1]);
    let conf = c
        .get(2)
        .and_then(|m| m.as_str().trim_end_matches(['.', ',']).parse::<f64>().ok())
        .filter(|v| (0.0..=1.0).contains(v))
        .unwrap_or(0.0);
    Ok((answer, conf))
}

pub fn cot_reason(
    question: &str,
    evidence: &[String],
    history: &[String],
    client: &LlmClient,
    calibration: Option<&CalibrationModel>,
) -> Result<ReasoningOutcome, ReasonError> {
    let mut slots = Slots::new();
    slots.insert("question", text_slot(question));
    slots.insert("evidence", Slot::List(evidence.to_vec()));
    slots.insert("history", history_slot(history));
    let prompt = render_prompt(TemplateId::Cot, &slots)?;
    let reply = client.call(TemplateId::Cot.tag(), prompt)?;
    let (answer, raw) = parse_cot_reply(&reply)?;
    Ok(ReasoningOutcome {
        answer,
        raw_confidence: raw,
        calibrated_confidence: calibration.map(|m| m.apply(raw)),
        mode: Mode::Cot,
        chain_or_program: reply,
        execution_value: None,
        repairs: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_line_contract() {
        let (a, c) = parse_cot_reply("step 1\nstep 2\nANSWER: 5.19% | CONFIDENCE: 0.9").unwrap();
        assert_eq!(a, AnswerValue::Percent { value: 5.19 });
        assert_eq!(c, 0.9);
    }

    #[test]
    fn missing_confidence_reads_zero() {
        let (a, c) = parse_cot_reply("ANSWER: 142").unwrap();
        assert_eq!(a.numeric(), Some(142.0));
        assert_eq!(c, 0.0);
        let (_, c) = parse_cot_reply("ANSWER: 142 | CONFIDENCE: high").unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn boolean_answer() {
        let (a, c) = parse_cot_reply("ANSWER: yes | CONFIDENCE: 0.8").unwrap();
        assert_eq!(a, AnswerValue::Boolean { value: true });
        assert_eq!(c, 0.8);
    }

    #[test]
    fn last_answer_line_wins_and_absence_is_an_error() {
        let (a, _) = parse_cot_reply("ANSWER: 1 | CONFIDENCE: 0.1\nrevised\nANSWER: 2 | CONFIDENCE: 0.2").unwrap();
        assert_eq!(a.numeric(), Some(2.0));
        assert_eq!(parse_cot_reply("no final line").unwrap_err(), ReasonError::NoAnswer);
    }
}
