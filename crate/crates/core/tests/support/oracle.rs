//! Random in-grammar programs and a reference evaluator written against the
//! language rules directly: Python operator precedence, `**` right
//! associative and binding tighter than unary minus, half-even rounding.

use rand::seq::IndexedRandom;
use rand::Rng;

#[derive(Debug, Clone)]
pub enum Node {
    Lit(f64),
    Var(String),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(&'static str, Vec<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    DivZero,
    Domain,
}

// binding strength of the printed form
fn strength(n: &Node) -> u8 {
    match n {
        Node::Bin('+' | '-', ..) => 1,
        Node::Bin('*' | '/', ..) => 2,
        Node::Neg(_) => 3,
        Node::Bin('^', ..) => 4,
        _ => 5,
    }
}

pub fn render(n: &Node, rng: &mut impl Rng) -> String {
    let wrap = |s: String, need: bool, rng: &mut dyn rand::RngCore| {
        if need || rng.random_bool(0.15) {
            format!("({s})")
        } else {
            s
        }
    };
    match n {
        Node::Lit(v) => format!("{v}"),
        Node::Var(name) => name.clone(),
        Node::Neg(inner) => {
            let need = strength(inner) < 4 || matches!(**inner, Node::Neg(_));
            let s = render(inner, rng);
            format!("-{}", wrap(s, need, rng))
        }
        Node::Bin(op, l, r) => {
            let p = strength(n);
            let (need_l, need_r) = if *op == '^' {
                // `a ** -b` is legal; a unary or power on the left must be wrapped
                (strength(l) <= p, strength(r) < 3)
            } else {
                (strength(l) < p, strength(r) <= p)
            };
            let ls = render(l, rng);
            let rs = render(r, rng);
            let sym = if *op == '^' { "**".to_string() } else { op.to_string() };
            format!("{} {sym} {}", wrap(ls, need_l, rng), wrap(rs, need_r, rng))
        }
        Node::Call(name, args) => {
            let parts: Vec<String> = args.iter().map(|a| render(a, rng)).collect();
            format!("{name}({})", parts.join(", "))
        }
    }
}

fn literal(rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.6) {
        rng.random_range(0..1000) as f64
    } else {
        rng.random_range(0..100_000) as f64 / 100.0
    }
}

pub fn gen_expr(depth: u32, vars: &[String], rng: &mut impl Rng) -> Node {
    if depth == 0 || rng.random_bool(0.25) {
        return if !vars.is_empty() && rng.random_bool(0.5) {
            Node::Var(vars.choose(rng).unwrap().clone())
        } else {
            Node::Lit(literal(rng))
        };
    }
    let d = depth - 1;
    match rng.random_range(0..10) {
        0 => Node::Neg(Box::new(gen_expr(d, vars, rng))),
        1 => {
            let exps = [0.0, 1.0, 2.0, 3.0, 0.5, -1.0];
            let e = *exps.choose(rng).unwrap();
            let rhs = if e < 0.0 { Node::Neg(Box::new(Node::Lit(-e))) } else { Node::Lit(e) };
            Node::Bin('^', Box::new(gen_expr(d, vars, rng)), Box::new(rhs))
        }
        2 => {
            let name = *["abs", "min", "max", "round"].choose(rng).unwrap();
            let args = match name {
                "abs" => vec![gen_expr(d, vars, rng)],
                "round" => {
                    let mut a = vec![gen_expr(d, vars, rng)];
                    if rng.random_bool(0.5) {
                        a.push(Node::Lit(rng.random_range(0..4) as f64));
                    }
                    a
                }
                _ => (0..rng.random_range(2..=3)).map(|_| gen_expr(d, vars, rng)).collect(),
            };
            Node::Call(name, args)
        }
        k => {
            let op = ['+', '-', '*', '/'][k % 4];
            Node::Bin(op, Box::new(gen_expr(d, vars, rng)), Box::new(gen_expr(d, vars, rng)))
        }
    }
}

/// Source text and the statements as (targets, expressions).
pub type Statement = (Vec<String>, Vec<Node>);

pub fn gen_program(rng: &mut impl Rng) -> (String, Vec<Statement>) {
    let mut vars: Vec<String> = Vec::new();
    let mut stmts = Vec::new();
    let n = rng.random_range(0..4);
    for i in 0..n {
        let width = if rng.random_bool(0.25) { 2 } else { 1 };
        let targets: Vec<String> = (0..width).map(|j| format!("v{i}_{j}")).collect();
        let exprs: Vec<Node> = (0..width).map(|_| gen_expr(rng.random_range(1..=4), &vars, rng)).collect();
        vars.extend(targets.iter().cloned());
        stmts.push((targets, exprs));
    }
    stmts.push((vec!["result".to_string()], vec![gen_expr(4, &vars, rng)]));
    let src = stmts
        .iter()
        .map(|(t, e)| format!("{} = {}", t.join(", "), e.iter().map(|x| render(x, rng)).collect::<Vec<_>>().join(", ")))
        .collect::<Vec<_>>()
        .join("\n");
    (src, stmts)
}

fn finite(v: f64) -> Result<f64, Fault> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Fault::Domain)
    }
}

/// Little-endian base-1e9 digits.
fn big_mul_small(n: &mut Vec<u64>, k: u64) {
    let mut carry = 0;
    for d in n.iter_mut() {
        let v = *d * k + carry;
        *d = v % 1_000_000_000;
        carry = v / 1_000_000_000;
    }
    while carry > 0 {
        n.push(carry % 1_000_000_000);
        carry /= 1_000_000_000;
    }
}

fn big_to_string(n: &[u64]) -> String {
    let mut s = format!("{}", n.last().copied().unwrap_or(0));
    for d in n.iter().rev().skip(1) {
        s.push_str(&format!("{d:09}"));
    }
    s
}

/// Exact decimal expansion of |x|: integer digits and fraction digits.
fn exact_decimal(x: f64) -> (String, String) {
    let bits = x.abs().to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1 << 52) - 1);
    let (m, e) = if exp == 0 { (frac, -1074) } else { (frac | (1 << 52), exp - 1075) };
    let mut n = vec![m % 1_000_000_000, m / 1_000_000_000];
    if e >= 0 {
        for _ in 0..e {
            big_mul_small(&mut n, 2);
        }
        return (big_to_string(&n), String::new());
    }
    // m * 2^e = m * 5^k / 10^k
    let k = (-e) as usize;
    for _ in 0..k {
        big_mul_small(&mut n, 5);
    }
    let s = big_to_string(&n);
    let s = if s.len() <= k { format!("{}{s}", "0".repeat(k + 1 - s.len())) } else { s };
    let (i, f) = s.split_at(s.len() - k);
    (i.to_string(), f.trim_end_matches('0').to_string())
}

fn increment(digits: &mut Vec<u8>) {
    for d in digits.iter_mut().rev() {
        if *d == b'9' {
            *d = b'0';
        } else {
            *d += 1;
            return;
        }
    }
    digits.insert(0, b'1');
}

/// Half-even rounding decided on the exact binary value.
fn round_half_even(x: f64, digits: i32) -> f64 {
    let (int, frac) = exact_decimal(x);
    let d = digits as usize;
    if frac.len() <= d {
        return x;
    }
    let mut kept: Vec<u8> = format!("{int}{}", &frac[..d]).into_bytes();
    let rest = &frac.as_bytes()[d..];
    let up = match rest[0] {
        b'6'..=b'9' => true,
        b'5' if rest[1..].iter().any(|c| *c != b'0') => true,
        b'5' => (kept.last().unwrap() - b'0') % 2 == 1,
        _ => false,
    };
    if up {
        increment(&mut kept);
    }
    let s = String::from_utf8(kept).unwrap();
    let (i, f) = s.split_at(s.len() - d);
    let mag: f64 = format!("{i}.{f}0").parse().unwrap();
    if x < 0.0 {
        -mag
    } else {
        mag
    }
}

pub fn eval(n: &Node, env: &std::collections::HashMap<String, f64>) -> Result<f64, Fault> {
    let v = match n {
        Node::Lit(v) => *v,
        Node::Var(name) => env[name],
        Node::Neg(e) => -eval(e, env)?,
        Node::Bin(op, l, r) => {
            let a = eval(l, env)?;
            let b = eval(r, env)?;
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                '/' if b == 0.0 => return Err(Fault::DivZero),
                '/' => a / b,
                _ if a == 0.0 && b < 0.0 => return Err(Fault::DivZero),
                _ if a < 0.0 && b.fract() != 0.0 => return Err(Fault::Domain),
                _ => a.powf(b),
            }
        }
        Node::Call(name, args) => {
            let vals = args.iter().map(|a| eval(a, env)).collect::<Result<Vec<_>, _>>()?;
            match *name {
                "abs" => vals[0].abs(),
                "min" => vals.iter().copied().fold(f64::INFINITY, f64::min),
                "max" => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                _ if vals.len() == 1 => round_half_even(vals[0], 0),
                _ => round_half_even(vals[0], vals[1] as i32),
            }
        }
    };
    finite(v)
}

pub fn eval_program(stmts: &[(Vec<String>, Vec<Node>)]) -> Result<f64, Fault> {
    let mut env = std::collections::HashMap::new();
    for (targets, exprs) in stmts {
        let vals = exprs.iter().map(|e| eval(e, &env)).collect::<Result<Vec<_>, _>>()?;
        for (t, v) in targets.iter().zip(vals) {
            env.insert(t.clone(), v);
        }
    }
    Ok(env["result"])
}
