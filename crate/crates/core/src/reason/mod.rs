//! Reasoning: decomposition, chain-of-thought with calibrated confidence,
//! and program-of-thought over a sandboxed arithmetic language.

pub mod answer;
pub mod calibration;
pub mod cot;
pub mod decompose;
pub mod pot;
pub mod program;
pub mod sandbox;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use answer::AnswerValue;
pub use calibration::{fit_calibration, CalibrationModel};
pub use cot::cot_reason;
pub use decompose::{decompose, Decomposition, Pattern, SubQuestion, SubTag};
pub use pot::{pot_reason, PotAttempt, PotConfig, PotFailure};
pub use program::{parse_program, static_check, Program, ProgramError};
pub use sandbox::{execute_program, ExecError, ExecLimits};

use crate::llm::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Cot,
    Pot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningOutcome {
    pub answer: AnswerValue,
    pub raw_confidence: f64,
    /// Present whenever a calibration model was supplied.
    pub calibrated_confidence: Option<f64>,
    pub mode: Mode,
    pub chain_or_program: String,
    pub execution_value: Option<f64>,
    #[serde(default)]
    pub repairs: u32,
}

impl ReasoningOutcome {
    /// Calibrated confidence if available, raw otherwise.
    pub fn confidence(&self) -> f64 {
        self.calibrated_confidence.unwrap_or(self.raw_confidence)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReasonError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("reply has no `ANSWER:` line")]
    NoAnswer,
}

/// Phrases that signal an answer expressed in percentage points.
pub fn expects_percent(question: &str) -> bool {
    let q = question.to_lowercase();
    ["percent", "percentage", "%", "cagr", "growth rate", "compound annual", "rate of change", "yield"]
        .iter()
        .any(|k| q.contains(k))
}
