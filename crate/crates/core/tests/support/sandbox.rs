//! Staged classification of hostile programs.

use std::sync::atomic::{AtomicU64, Ordering};

use finrag::reason::pot::{evaluate_candidate, range_bound};
use finrag::reason::program::DEFAULT_ALLOWLIST;
use finrag::reason::sandbox::{execute_with, Clock, ExecLimits};
use finrag::reason::{parse_program, static_check, ExecError, ProgramError};

pub const CAGR: &str = "v_begin, v_end, n = 2847, 3214, 2\ncagr = (v_end / v_begin) ** (1/n) - 1\nresult = round(cagr * 100, 2)";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Syntax,
    ReadBeforeAssign,
    MissingResult,
    Disallowed,
    Arity,
    DivZero,
    Domain,
    Timeout,
    Range,
}

/// Advances a full second on every reading.
pub struct Runaway(pub AtomicU64);

impl Clock for Runaway {
    fn now_ms(&self) -> u64 {
        self.0.fetch_add(1000, Ordering::SeqCst)
    }
}

pub const EVIDENCE: &str = "Total revenue was 142 in 2019 and 135 in 2018.";

pub fn classify(src: &str, limits: &ExecLimits) -> Result<f64, Stage> {
    let p = parse_program(src).map_err(|e| match e {
        ProgramError::Syntax { .. } | ProgramError::Empty => Stage::Syntax,
        ProgramError::UndefinedVariable { .. } => Stage::ReadBeforeAssign,
        ProgramError::MissingResult => Stage::MissingResult,
    })?;
    if let Err(v) = static_check(&p, DEFAULT_ALLOWLIST) {
        return Err(if v[0].message.starts_with("disallowed") { Stage::Disallowed } else { Stage::Arity });
    }
    let v = execute_with(&p, limits).map_err(|e| match e {
        ExecError::DivisionByZero => Stage::DivZero,
        ExecError::Domain(_) => Stage::Domain,
        ExecError::Timeout(_) => Stage::Timeout,
        ExecError::Rejected(_) => Stage::Disallowed,
    })?;
    let bound = range_bound(&[EVIDENCE.to_string()]);
    if evaluate_candidate(src, bound, limits).is_err() {
        return Err(Stage::Range);
    }
    Ok(v)
}

pub fn corpus() -> Vec<(&'static str, Stage)> {
    use Stage::*;
    vec![
        ("import os\nresult = 1", Syntax),
        ("result = __import__('os')", Syntax),
        ("result = open.read", Syntax),
        ("result = [1, 2][0]", Syntax),
        ("result = lambda: 1", Syntax),
        ("while 1:\n    result = 1", Syntax),
        ("result = 1 +", Syntax),
        ("x = y + 1\nresult = x", ReadBeforeAssign),
        ("result = revenue_2019 - 135", ReadBeforeAssign),
        ("a, b = 1, a\nresult = b", ReadBeforeAssign),
        ("x = 1", MissingResult),
        ("result = 1\nx = result", MissingResult),
        ("result = eval(1)", Disallowed),
        ("result = exec(2)", Disallowed),
        ("result = pow(2, 3)", Disallowed),
        ("x = 4\nresult = sqrt(x)", Disallowed),
        ("result = abs(1, 2)", Arity),
        ("result = round(1, 2, 3)", Arity),
        ("result = (142 - 135) / 0", DivZero),
        ("base = 135 - 135\nresult = 7 / base", DivZero),
        ("result = 0 ** -1", DivZero),
        ("result = (-8) ** 0.5", Domain),
        ("result = 10 ** 400", Domain),
        ("result = round(1.5, 0.5)", Domain),
        ("result = 142 * 1e9", Range),
    ]
}

