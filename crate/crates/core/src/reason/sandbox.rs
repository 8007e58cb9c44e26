//! Sandboxed execution of checked programs.
//!
//! Programs compile to a flat postfix instruction list evaluated on a value
//! stack. The interpreter has no access to anything but its own registers;
//! the only capability it receives is a [`Clock`] used to enforce the time
//! budget.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use super::program::{static_check, BinOp, Expr, Program, DEFAULT_ALLOWLIST};

pub const DEFAULT_TIMEOUT_MS: u64 = 5000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("math domain error: {0}")]
    Domain(String),
    #[error("execution exceeded {0} ms")]
    Timeout(u64),
    #[error("program failed static check: {0}")]
    Rejected(String),
}

/// Milliseconds since an arbitrary origin.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct MonotonicClock(Instant);

impl Default for MonotonicClock {
    fn default() -> Self {
        MonotonicClock(Instant::now())
    }
}

impl Clock for MonotonicClock {
    fn now_ms(&self) -> u64 {
        self.0.elapsed().as_millis() as u64
    }
}

#[derive(Clone)]
pub struct ExecLimits {
    pub timeout_ms: u64,
    pub clock: Arc<dyn Clock>,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits { timeout_ms: DEFAULT_TIMEOUT_MS, clock: Arc::new(MonotonicClock::default()) }
    }
}

impl ExecLimits {
    pub fn with_timeout(timeout_ms: u64) -> Self {
        ExecLimits { timeout_ms, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Round,
    Abs,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Push(f64),
    Load(usize),
    Neg,
    Bin(BinOp),
    Call(Func, usize),
    Store(usize),
}

/// A program lowered to postfix form with variables resolved to registers.
#[derive(Debug, Clone)]
pub struct Compiled {
    ops: Vec<Op>,
    registers: usize,
    result: usize,
}

fn lower(e: &Expr, slots: &HashMap<String, usize>, out: &mut Vec<Op>) -> Result<(), ExecError> {
    match e {
        Expr::Num(v) => out.push(Op::Push(*v)),
        Expr::Var(name, _) => {
            let r = slots.get(name).ok_or_else(|| ExecError::Rejected(format!("unbound variable {name}")))?;
            out.push(Op::Load(*r));
        }
        Expr::Neg(inner) => {
            lower(inner, slots, out)?;
            out.push(Op::Neg);
        }
        Expr::Bin(op, l, r) => {
            lower(l, slots, out)?;
            lower(r, slots, out)?;
            out.push(Op::Bin(*op));
        }
        Expr::Call { name, args, .. } => {
            let f = match name.as_str() {
                "round" => Func::Round,
                "abs" => Func::Abs,
                "min" => Func::Min,
                "max" => Func::Max,
                other => return Err(ExecError::Rejected(format!("disallowed call: {other}"))),
            };
            for a in args {
                lower(a, slots, out)?;
            }
            out.push(Op::Call(f, args.len()));
        }
    }
    Ok(())
}

pub fn compile(p: &Program) -> Result<Compiled, ExecError> {
    if let Err(v) = static_check(p, DEFAULT_ALLOWLIST) {
        let msgs: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        return Err(ExecError::Rejected(msgs.join("; ")));
    }
    let mut slots: HashMap<String, usize> = HashMap::new();
    let mut ops = Vec::new();
    for s in &p.statements {
        // evaluate every right-hand side before binding any target
        for e in &s.exprs {
            lower(e, &slots, &mut ops)?;
        }
        let regs: Vec<usize> = s
            .targets
            .iter()
            .map(|t| {
                let n = slots.len();
                *slots.entry(t.clone()).or_insert(n)
            })
            .collect();
        for r in regs.into_iter().rev() {
            ops.push(Op::Store(r));
        }
    }
    let result = *slots.get("result").ok_or_else(|| ExecError::Rejected("no result binding".into()))?;
    Ok(Compiled { ops, registers: slots.len(), result })
}

pub fn pow(a: f64, b: f64) -> Result<f64, ExecError> {
    if a == 0.0 && b < 0.0 {
        return Err(ExecError::DivisionByZero);
    }
    if a < 0.0 && b.fract() != 0.0 {
        return Err(ExecError::Domain(format!("fractional power {b} of negative base {a}")));
    }
    Ok(a.powf(b))
}

/// Round half to even at `digits` decimal places, on the exact binary value
/// (so 2.675 rounds to 2.67, as its stored value is below the midpoint).
pub fn round_to(x: f64, digits: i32) -> f64 {
    if digits >= 0 {
        let d = digits.min(17) as usize;
        format!("{x:.d$}").parse().unwrap_or(x)
    } else {
        let scale = 10f64.powi(-digits);
        (x / scale).round_ties_even() * scale
    }
}

fn call(f: Func, args: &[f64]) -> Result<f64, ExecError> {
    Ok(match f {
        Func::Abs => args[0].abs(),
        Func::Min => args.iter().copied().fold(f64::INFINITY, f64::min),
        Func::Max => args.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Func::Round => {
            if args.len() == 1 {
                args[0].round_ties_even()
            } else {
                let d = args[1];
                if d.fract() != 0.0 || !d.is_finite() {
                    return Err(ExecError::Domain(format!("round() digits must be an integer, got {d}")));
                }
                round_to(args[0], d as i32)
            }
        }
    })
}

fn binary(op: BinOp, a: f64, b: f64) -> Result<f64, ExecError> {
    match op {
        BinOp::Add => Ok(a + b),
        BinOp::Sub => Ok(a - b),
        BinOp::Mul => Ok(a * b),
        BinOp::Div => {
            if b == 0.0 {
                Err(ExecError::DivisionByZero)
            } else {
                Ok(a / b)
            }
        }
        BinOp::Pow => pow(a, b),
    }
}

impl Compiled {
    pub fn run(&self, limits: &ExecLimits) -> Result<f64, ExecError> {
        let start = limits.clock.now_ms();
        let mut regs = vec![f64::NAN; self.registers];
        let mut stack: Vec<f64> = Vec::with_capacity(16);
        for op in &self.ops {
            if limits.clock.now_ms().saturating_sub(start) > limits.timeout_ms {
                return Err(ExecError::Timeout(limits.timeout_ms));
            }
            match op {
                Op::Push(v) => stack.push(*v),
                Op::Load(r) => stack.push(regs[*r]),
                Op::Neg => {
                    let v = stack.pop().unwrap();
                    stack.push(-v);
                }
                Op::Bin(b) => {
                    let r = stack.pop().unwrap();
                    let l = stack.pop().unwrap();
                    stack.push(binary(*b, l, r)?);
                }
                Op::Call(f, n) => {
                    let at = stack.len() - n;
                    let v = call(*f, &stack[at..])?;
                    stack.truncate(at);
                    stack.push(v);
                }
                Op::Store(r) => regs[*r] = stack.pop().unwrap(),
            }
            if let Some(top) = stack.last() {
                if !top.is_finite() {
                    return Err(ExecError::Domain("result is not a finite real number".into()));
                }
            }
        }
        Ok(regs[self.result])
    }
}

pub fn execute_program(p: &Program, timeout_ms: u64) -> Result<f64, ExecError> {
    execute_with(p, &ExecLimits::with_timeout(timeout_ms))
}

pub fn execute_with(p: &Program, limits: &ExecLimits) -> Result<f64, ExecError> {
    compile(p)?.run(limits)
}

/// Evaluate a variable-free expression.
pub fn eval_expr(e: &Expr) -> Result<f64, ExecError> {
    let mut ops = Vec::new();
    lower(e, &HashMap::new(), &mut ops)?;
    ops.push(Op::Store(0));
    Compiled { ops, registers: 1, result: 0 }.run(&ExecLimits::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reason::program::{parse_expression, parse_program};
    use std::sync::atomic::{AtomicU64, Ordering};

    fn run(src: &str) -> Result<f64, ExecError> {
        execute_program(&parse_program(src).unwrap(), DEFAULT_TIMEOUT_MS)
    }

    #[test]
    fn cagr_evaluates_to_formula() {
        let v = run("v_begin, v_end, n = 2847, 3214, 2\ncagr = (v_end / v_begin) ** (1/n) - 1\nresult = round(cagr * 100, 2)")
            .unwrap();
        // (3214/2847)^(1/2) - 1 = 0.062497...; the printed 6.24 in some
        // write-ups is within the 1% answer tolerance of this
        assert_eq!(v, 6.25);
        assert!((v - 6.24).abs() / 6.24 < 0.01);
    }

    #[test]
    fn percentage_change_case() {
        assert_eq!(run("result = round((142-135)/135*100, 2)").unwrap(), 5.19);
    }

    #[test]
    fn errors() {
        assert_eq!(run("result = 1/0").unwrap_err(), ExecError::DivisionByZero);
        assert_eq!(run("result = 0 ** -1").unwrap_err(), ExecError::DivisionByZero);
        assert!(matches!(run("result = (-8) ** 0.5").unwrap_err(), ExecError::Domain(_)));
        assert!(matches!(run("result = 10 ** 400").unwrap_err(), ExecError::Domain(_)));
        assert_eq!(run("result = (-2) ** 3").unwrap(), -8.0);
        assert!(matches!(run("result = open(1)").unwrap_err(), ExecError::Rejected(_)));
    }

    #[test]
    fn tuple_assignment_uses_old_values() {
        assert_eq!(run("a, b = 1, 2\na, b = b, a\nresult = a * 10 + b").unwrap(), 21.0);
    }

    #[test]
    fn rounding_matches_half_even() {
        assert_eq!(round_to(2.675, 2), 2.67);
        assert_eq!(round_to(0.125, 2), 0.12);
        assert_eq!(round_to(1250.0, -2), 1200.0);
        assert_eq!(run("result = round(2.5)").unwrap(), 2.0);
        assert_eq!(run("result = round(3.5)").unwrap(), 4.0);
        assert_eq!(run("result = max(1, 7, 3) - min(4, 2)").unwrap(), 5.0);
    }

    struct StepClock(AtomicU64);

    impl Clock for StepClock {
        fn now_ms(&self) -> u64 {
            self.0.fetch_add(1000, Ordering::SeqCst)
        }
    }

    #[test]
    fn timeout_is_enforced_through_the_clock() {
        let p = parse_program("a = 1\nb = a + 1\nc = b + 1\nd = c + 1\ne = d + 1\nf = e + 1\nresult = f").unwrap();
        let limits = ExecLimits { timeout_ms: 5000, clock: Arc::new(StepClock(AtomicU64::new(0))) };
        assert_eq!(execute_with(&p, &limits).unwrap_err(), ExecError::Timeout(5000));
        assert_eq!(execute_with(&p, &ExecLimits::default()).unwrap(), 6.0);
    }

    #[test]
    fn expression_evaluation() {
        assert!((eval_expr(&parse_expression("(142-128)/128").unwrap()).unwrap() - 0.109375).abs() < 1e-15);
        assert!(eval_expr(&parse_expression("x + 1").unwrap()).is_err());
    }
}
