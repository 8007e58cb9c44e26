//! The restricted arithmetic program language used for program-of-thought
//! reasoning: lexer, recursive-descent parser and static checks.
//!
//! ```text
//! program   := stmt (NEWLINE stmt)*
//! stmt      := ident ("," ident)* "=" expr ("," expr)*
//! expr      := term (("+" | "-") term)*
//! term      := unary (("*" | "/") unary)*
//! unary     := ("-" | "+") unary | power
//! power     := atom ("**" unary)?
//! atom      := number | ident | ident "(" args? ")" | "(" expr ")"
//! ```
//!
//! `**` is right-associative and binds tighter than a unary minus on its
//! left, so `-2 ** 2` is `-(2 ** 2)`. Newlines inside parentheses are ignored.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ALLOWLIST: &[&str] = &["round", "abs", "min", "max"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("variable `{name}` read before assignment (line {line}, column {col})")]
    UndefinedVariable { name: String, line: usize, col: usize },
    #[error("the final statement must assign `result`")]
    MissingResult,
    #[error("empty program")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "**",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Num(f64),
    Var(String, Pos),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call { name: String, args: Vec<Expr>, pos: Pos },
}

impl Expr {
    pub fn bin(op: BinOp, l: Expr, r: Expr) -> Expr {
        Expr::Bin(op, Box::new(l), Box::new(r))
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Neg(e) => e.visit(f),
            Expr::Bin(_, l, r) => {
                l.visit(f);
                r.visit(f);
            }
            Expr::Call { args, .. } => args.iter().for_each(|a| a.visit(f)),
            Expr::Num(_) | Expr::Var(..) => {}
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var(..) => 1,
            Expr::Neg(e) => 1 + e.depth(),
            Expr::Bin(_, l, r) => 1 + l.depth().max(r.depth()),
            Expr::Call { args, .. } => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Expr::Neg(_) => 3,
        Expr::Bin(BinOp::Pow, ..) => 4,
        _ => 5,
    }
}

/// Source form that parses back to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 {
                    write!(f, "({v:?})")
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Var(n, _) => f.write_str(n),
            Expr::Neg(e) => {
                if prec(e) < 3 {
                    write!(f, "-({e})")
                } else {
                    write!(f, "-{e}")
                }
            }
            Expr::Bin(op, l, r) => {
                let p = prec(self);
                // `**` takes an atom on the left and a unary on the right; the
                // other operators are left-associative, so an equal-precedence
                // right operand keeps its parentheses
                let (lp, rp) = if *op == BinOp::Pow { (prec(l) <= p, prec(r) < 3) } else { (prec(l) < p, prec(r) <= p) };
                if lp {
                    write!(f, "({l})")?;
                } else {
                    write!(f, "{l}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if rp {
                    write!(f, "({r})")
                } else {
                    write!(f, "{r}")
                }
            }
            Expr::Call { name, args, .. } => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statement {
    pub targets: Vec<String>,
    pub exprs: Vec<Expr>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub statements: Vec<Statement>,
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.statements {
            let rhs: Vec<String> = s.exprs.iter().map(|e| e.to_string()).collect();
            writeln!(f, "{} = {}", s.targets.join(", "), rhs.join(", "))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Pow,
    LParen,
    RParen,
    Comma,
    Assign,
    Newline,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Newline => "end of line".into(),
            Tok::Eof => "end of input".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Pow => "`**`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Assign => "`=`".into(),
        }
    }
}

fn syntax(pos: Pos, message: impl Into<String>) -> ProgramError {
    ProgramError::Syntax { line: pos.line, col: pos.col, message: message.into() }
}

fn lex(src: &str) -> Result<Vec<(Tok, Pos)>, ProgramError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let mut depth = 0i32;
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        match c {
            '\n' => {
                if depth <= 0 {
                    out.push((Tok::Newline, pos));
                }
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            ' ' | '\t' | '\r' => {}
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '+' => out.push((Tok::Plus, pos)),
            '-' => out.push((Tok::Minus, pos)),
            '*' => {
                if chars.get(i + 1) == Some(&'*') {
                    out.push((Tok::Pow, pos));
                    i += 2;
                    col += 2;
                    continue;
                }
                out.push((Tok::Star, pos));
            }
            '/' => out.push((Tok::Slash, pos)),
            '(' => {
                depth += 1;
                out.push((Tok::LParen, pos));
            }
            ')' => {
                depth -= 1;
                out.push((Tok::RParen, pos));
            }
            ',' => out.push((Tok::Comma, pos)),
            '=' => out.push((Tok::Assign, pos)),
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.' || chars[i] == '_') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().filter(|&&c| c != '_').collect();
                let v: f64 = text.parse().map_err(|_| syntax(pos, format!("malformed number `{text}`")))?;
                out.push((Tok::Num(v), pos));
                col += i - start;
                continue;
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
                col += i - start;
                continue;
            }
            other => return Err(syntax(pos, format!("unexpected character `{other}`"))),
        }
        i += 1;
        col += 1;
    }
    out.push((Tok::Eof, Pos { line, col }));
    Ok(out)
}

// ---------------------------------------------------------------- parser

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<Pos, ProgramError> {
        if *self.peek() == want {
            Ok(self.bump().1)
        } else {
            Err(syntax(self.pos(), format!("expected {what}, found {}", self.peek().describe())))
        }
    }

    fn skip_newlines(&mut self) {
        while *self.peek() == Tok::Newline {
            self.bump();
        }
    }

    fn program(&mut self) -> Result<Vec<Statement>, ProgramError> {
        let mut stmts = Vec::new();
        self.skip_newlines();
        while *self.peek() != Tok::Eof {
            stmts.push(self.statement()?);
            match self.peek() {
                Tok::Newline => self.skip_newlines(),
                Tok::Eof => {}
                other => return Err(syntax(self.pos(), format!("expected end of line, found {}", other.describe()))),
            }
        }
        Ok(stmts)
    }

    fn statement(&mut self) -> Result<Statement, ProgramError> {
        let line = self.pos().line;
        let mut targets = Vec::new();
        loop {
            match self.bump() {
                (Tok::Ident(n), _) => targets.push(n),
                (t, p) => return Err(syntax(p, format!("expected assignment target, found {}", t.describe()))),
            }
            if *self.peek() == Tok::Comma {
                self.bump();
            } else {
                break;
            }
        }
        self.expect(Tok::Assign, "`=`")?;
        let mut exprs = vec![self.expr()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            exprs.push(self.expr()?);
        }
        if exprs.len() != targets.len() {
            return Err(syntax(
                Pos { line, col: 1 },
                format!("{} targets but {} values", targets.len(), exprs.len()),
            ));
        }
        Ok(Statement { targets, exprs, line })
    }

    fn expr(&mut self) -> Result<Expr, ProgramError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::bin(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr, ProgramError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::bin(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, ProgramError> {
        match self.peek() {
            Tok::Minus => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Plus => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ProgramError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Pow {
            self.bump();
            return Ok(Expr::bin(BinOp::Pow, base, self.unary()?));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ProgramError> {
        match self.bump() {
            (Tok::Num(v), _) => Ok(Expr::Num(v)),
            (Tok::Ident(name), pos) => {
                if *self.peek() != Tok::LParen {
                    return Ok(Expr::Var(name, pos));
                }
                self.bump();
                let mut args = Vec::new();
                if *self.peek() != Tok::RParen {
                    args.push(self.expr()?);
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        args.push(self.expr()?);
                    }
                }
                self.expect(Tok::RParen, "`)`")?;
                Ok(Expr::Call { name, args, pos })
            }
            (Tok::LParen, _) => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            (t, p) => Err(syntax(p, format!("expected a value, found {}", t.describe()))),
        }
    }
}

/// Parse and validate a program: syntax, read-before-assign, and a final
/// statement that binds `result`.
pub fn parse_program(text: &str) -> Result<Program, ProgramError> {
    let mut p = Parser { toks: lex(text)?, at: 0 };
    let statements = p.program()?;
    if statements.is_empty() {
        return Err(ProgramError::Empty);
    }
    let mut bound: HashSet<&str> = HashSet::new();
    for s in &statements {
        for e in &s.exprs {
            let mut err = None;
            e.visit(&mut |n| {
                if let Expr::Var(name, pos) = n {
                    if err.is_none() && !bound.contains(name.as_str()) {
                        err = Some(ProgramError::UndefinedVariable { name: name.clone(), line: pos.line, col: pos.col });
                    }
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
        bound.extend(s.targets.iter().map(String::as_str));
    }
    if !statements.last().unwrap().targets.iter().any(|t| t == "result") {
        return Err(ProgramError::MissingResult);
    }
    Ok(Program { statements })
}

/// A single expression, as found in a reasoning chain.
pub fn parse_expression(text: &str) -> Result<Expr, ProgramError> {
    let mut p = Parser { toks: lex(text)?, at: 0 };
    let e = p.expr()?;
    match p.peek() {
        Tok::Eof | Tok::Newline => Ok(e),
        other => Err(syntax(p.pos(), format!("unexpected {} after expression", other.describe()))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.col, self.message)
    }
}

fn arity_ok(name: &str, n: usize) -> bool {
    match name {
        "round" => (1..=2).contains(&n),
        "abs" => n == 1,
        "min" | "max" => n >= 1,
        _ => true,
    }
}

/// Every call must target an allowlisted function with a valid arity.
pub fn static_check(p: &Program, allowlist: &[&str]) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    for s in &p.statements {
        for e in &s.exprs {
            e.visit(&mut |n| {
                if let Expr::Call { name, args, pos } = n {
                    if !allowlist.contains(&name.as_str()) {
                        v.push(Violation { line: pos.line, col: pos.col, message: format!("disallowed call: {name}") });
                    } else if !arity_ok(name, args.len()) {
                        v.push(Violation {
                            line: pos.line,
                            col: pos.col,
                            message: format!("wrong number of arguments to {name}: {}", args.len()),
                        });
                    }
                }
            });
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}
