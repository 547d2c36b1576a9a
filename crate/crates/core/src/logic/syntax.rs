//! Formula trees, the concrete text syntax, and its parser and printer.
//!
//! Concrete syntax:
//!
//! ```text
//! f ::= q | obs | min(f, f) | max(f, f) | 1 - f | f (-) q | f (+) q
//!     | <t> f | int g | (f)
//! g ::= f @ t | min(g, g) | max(g, g) | g (-) q | g (+) q | (g)
//! ```
//!
//! Rationals are written `p/q` or as decimals. Prefix forms (`<t>`, `int`,
//! `1 -`) extend as far right as possible; postfix forms (`(-) q`, `(+) q`,
//! `@ t`) bind tighter and associate to the left, so `<1> obs (-) 1/4` is
//! `<1> (obs (-) 1/4)`.
//!
//! `max`, `(+)` and, inside the trajectory logic, state-level `min` are not
//! primitive. The parser expands them into the core grammar of the logic the
//! formula belongs to.

use std::fmt;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{display, parse_rational, Rational};

/// The two state logics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Logic {
    /// Kernel logic: `q | obs | min | 1 - f | f (-) q | <t> f`.
    Lambda,
    /// Trajectory logic: `q | obs | 1 - f | f (-) q | int g`.
    Sigma,
}

impl fmt::Display for Logic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Logic::Lambda => "lambda",
            Logic::Sigma => "sigma",
        })
    }
}

impl std::str::FromStr for Logic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lambda" | "kernel" => Ok(Logic::Lambda),
            "sigma" | "trajectory" | "path" => Ok(Logic::Sigma),
            _ => Err(Error::InvalidConfig(format!("unknown logic {s:?} (expected lambda or sigma)"))),
        }
    }
}

/// Formula evaluated at a state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StateFormula {
    Const(Rational),
    Obs,
    Min(Box<StateFormula>, Box<StateFormula>),
    /// `1 - f`.
    Neg(Box<StateFormula>),
    /// `max(0, f - q)`.
    MinusQ(Box<StateFormula>, Rational),
    /// `c^t` times the expectation of `f` under `P_t(x)`.
    Diamond(Rational, Box<StateFormula>),
    /// Expectation of a trajectory formula under the path law from `x`.
    Integral(Box<PathFormula>),
}

/// Formula evaluated on a trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PathFormula {
    /// `c^t f(omega(t))`.
    Eval(Box<StateFormula>, Rational),
    Min(Box<PathFormula>, Box<PathFormula>),
    Max(Box<PathFormula>, Box<PathFormula>),
    MinusQ(Box<PathFormula>, Rational),
    /// `min(1, g + q)`.
    PlusQ(Box<PathFormula>, Rational),
}

/// Result of parsing: a state formula or a trajectory formula.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    State(StateFormula),
    Path(PathFormula),
}

fn check_constant(q: Rational) -> Result<Rational> {
    if q < Rational::zero() || q > Rational::one() {
        return Err(Error::ConstantOutOfRange(display(&q).to_string()));
    }
    Ok(q)
}

fn check_time(t: Rational) -> Result<Rational> {
    if t < Rational::zero() {
        return Err(Error::InvalidTime(format!("negative time {}", display(&t))));
    }
    Ok(t)
}

impl StateFormula {
    pub fn constant(q: Rational) -> Result<Self> {
        Ok(StateFormula::Const(check_constant(q)?))
    }

    pub fn min(a: Self, b: Self) -> Self {
        StateFormula::Min(Box::new(a), Box::new(b))
    }

    pub fn neg(a: Self) -> Self {
        StateFormula::Neg(Box::new(a))
    }

    pub fn minus_q(a: Self, q: Rational) -> Result<Self> {
        Ok(StateFormula::MinusQ(Box::new(a), check_constant(q)?))
    }

    pub fn diamond(t: Rational, a: Self) -> Result<Self> {
        Ok(StateFormula::Diamond(check_time(t)?, Box::new(a)))
    }

    pub fn integral(g: PathFormula) -> Self {
        StateFormula::Integral(Box::new(g))
    }

    /// `max(a, b) = 1 - min(1 - a, 1 - b)` in the kernel logic.
    pub fn max_f(a: Self, b: Self) -> Self {
        Self::neg(Self::min(Self::neg(a), Self::neg(b)))
    }

    /// `min(1, a + q) = 1 - ((1 - a) (-) q)` in the kernel logic.
    pub fn plus_q(a: Self, q: Rational) -> Result<Self> {
        Ok(Self::neg(Self::minus_q(Self::neg(a), q)?))
    }

    /// `a (-) q` in the trajectory logic: `int ((a @ 0) (-) q)`.
    pub fn sigma_minus_q(a: Self, q: Rational) -> Result<Self> {
        Ok(Self::integral(PathFormula::minus_q(PathFormula::eval(a, Rational::zero())?, q)?))
    }

    /// `a (+) q` in the trajectory logic: `int ((a @ 0) (+) q)`.
    pub fn sigma_plus_q(a: Self, q: Rational) -> Result<Self> {
        Ok(Self::integral(PathFormula::plus_q(PathFormula::eval(a, Rational::zero())?, q)?))
    }

    /// `min(a, b)` in the trajectory logic: `int min(a @ 0, b @ 0)`.
    pub fn sigma_min(a: Self, b: Self) -> Self {
        let z = Rational::zero();
        Self::integral(PathFormula::min(PathFormula::Eval(Box::new(a), z), PathFormula::Eval(Box::new(b), z)))
    }

    /// `max(a, b)` in the trajectory logic: `int max(a @ 0, b @ 0)`.
    pub fn sigma_max(a: Self, b: Self) -> Self {
        let z = Rational::zero();
        Self::integral(PathFormula::max(PathFormula::Eval(Box::new(a), z), PathFormula::Eval(Box::new(b), z)))
    }

    /// Nesting depth; `q` and `obs` have depth 1 and `@ t` adds none.
    pub fn depth(&self) -> usize {
        match self {
            StateFormula::Const(_) | StateFormula::Obs => 1,
            StateFormula::Min(a, b) => 1 + a.depth().max(b.depth()),
            StateFormula::Neg(a) | StateFormula::MinusQ(a, _) | StateFormula::Diamond(_, a) => 1 + a.depth(),
            StateFormula::Integral(g) => 1 + g.depth(),
        }
    }

    /// The logic this formula belongs to; `None` when it lies in both.
    pub fn logic(&self) -> Result<Option<Logic>> {
        let mut marks = Marks::default();
        marks.state(self);
        marks.resolve(self)
    }

    /// Checks constants, times and grammar membership.
    pub fn validate(&self) -> Result<Option<Logic>> {
        self.check_ranges()?;
        self.logic()
    }

    fn check_ranges(&self) -> Result<()> {
        match self {
            StateFormula::Const(q) => check_constant(*q).map(drop),
            StateFormula::Obs => Ok(()),
            StateFormula::Min(a, b) => {
                a.check_ranges()?;
                b.check_ranges()
            }
            StateFormula::Neg(a) => a.check_ranges(),
            StateFormula::MinusQ(a, q) => {
                check_constant(*q)?;
                a.check_ranges()
            }
            StateFormula::Diamond(t, a) => {
                check_time(*t)?;
                a.check_ranges()
            }
            StateFormula::Integral(g) => g.check_ranges(),
        }
    }

    /// All times mentioned by `<t>` and `@ t`, sorted and deduplicated.
    pub fn times(&self) -> Vec<Rational> {
        let mut out = Vec::new();
        collect_state_times(self, &mut out);
        out.sort();
        out.dedup();
        out
    }

    fn is_postfix_operand(&self) -> bool {
        !matches!(self, StateFormula::Neg(_) | StateFormula::Diamond(..) | StateFormula::Integral(_))
    }
}

impl PathFormula {
    pub fn eval(f: StateFormula, t: Rational) -> Result<Self> {
        Ok(PathFormula::Eval(Box::new(f), check_time(t)?))
    }

    pub fn min(a: Self, b: Self) -> Self {
        PathFormula::Min(Box::new(a), Box::new(b))
    }

    pub fn max(a: Self, b: Self) -> Self {
        PathFormula::Max(Box::new(a), Box::new(b))
    }

    pub fn minus_q(a: Self, q: Rational) -> Result<Self> {
        Ok(PathFormula::MinusQ(Box::new(a), check_constant(q)?))
    }

    pub fn plus_q(a: Self, q: Rational) -> Result<Self> {
        Ok(PathFormula::PlusQ(Box::new(a), check_constant(q)?))
    }

    pub fn depth(&self) -> usize {
        match self {
            PathFormula::Eval(f, _) => f.depth(),
            PathFormula::Min(a, b) | PathFormula::Max(a, b) => 1 + a.depth().max(b.depth()),
            PathFormula::MinusQ(a, _) | PathFormula::PlusQ(a, _) => 1 + a.depth(),
        }
    }

    /// Trajectory formulas always belong to the trajectory logic.
    pub fn validate(&self) -> Result<Logic> {
        self.check_ranges()?;
        let mut marks = Marks::default();
        marks.path(self);
        if marks.lambda {
            return Err(Error::MixedGrammar(format!("trajectory formula {self} contains kernel-logic operators")));
        }
        Ok(Logic::Sigma)
    }

    fn check_ranges(&self) -> Result<()> {
        match self {
            PathFormula::Eval(f, t) => {
                check_time(*t)?;
                f.check_ranges()
            }
            PathFormula::Min(a, b) | PathFormula::Max(a, b) => {
                a.check_ranges()?;
                b.check_ranges()
            }
            PathFormula::MinusQ(a, q) | PathFormula::PlusQ(a, q) => {
                check_constant(*q)?;
                a.check_ranges()
            }
        }
    }

    pub fn times(&self) -> Vec<Rational> {
        let mut out = Vec::new();
        collect_path_times(self, &mut out);
        out.sort();
        out.dedup();
        out
    }
}

impl Formula {
    pub fn logic(&self) -> Result<Option<Logic>> {
        match self {
            Formula::State(f) => f.validate(),
            Formula::Path(g) => g.validate().map(Some),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::State(f) => f.depth(),
            Formula::Path(g) => g.depth(),
        }
    }

    pub fn into_state(self) -> Result<StateFormula> {
        match self {
            Formula::State(f) => Ok(f),
            Formula::Path(g) => Err(Error::Syntax { pos: 0, msg: format!("expected a state formula, found trajectory formula {g}") }),
        }
    }

    pub fn into_path(self) -> Result<PathFormula> {
        match self {
            Formula::Path(g) => Ok(g),
            Formula::State(f) => Err(Error::Syntax { pos: 0, msg: format!("expected a trajectory formula, found state formula {f}") }),
        }
    }
}

fn collect_state_times(f: &StateFormula, out: &mut Vec<Rational>) {
    match f {
        StateFormula::Const(_) | StateFormula::Obs => {}
        StateFormula::Min(a, b) => {
            collect_state_times(a, out);
            collect_state_times(b, out);
        }
        StateFormula::Neg(a) | StateFormula::MinusQ(a, _) => collect_state_times(a, out),
        StateFormula::Diamond(t, a) => {
            out.push(*t);
            collect_state_times(a, out);
        }
        StateFormula::Integral(g) => collect_path_times(g, out),
    }
}

fn collect_path_times(g: &PathFormula, out: &mut Vec<Rational>) {
    match g {
        PathFormula::Eval(f, t) => {
            out.push(*t);
            collect_state_times(f, out);
        }
        PathFormula::Min(a, b) | PathFormula::Max(a, b) => {
            collect_path_times(a, out);
            collect_path_times(b, out);
        }
        PathFormula::MinusQ(a, _) | PathFormula::PlusQ(a, _) => collect_path_times(a, out),
    }
}

/// Operators seen while walking a formula.
#[derive(Default)]
struct Marks {
    lambda: bool,
    sigma: bool,
}

impl Marks {
    fn state(&mut self, f: &StateFormula) {
        match f {
            StateFormula::Const(_) | StateFormula::Obs => {}
            StateFormula::Min(a, b) => {
                self.lambda = true;
                self.state(a);
                self.state(b);
            }
            StateFormula::Neg(a) | StateFormula::MinusQ(a, _) => self.state(a),
            StateFormula::Diamond(_, a) => {
                self.lambda = true;
                self.state(a);
            }
            StateFormula::Integral(g) => {
                self.sigma = true;
                self.path(g);
            }
        }
    }

    fn path(&mut self, g: &PathFormula) {
        self.sigma = true;
        match g {
            PathFormula::Eval(f, _) => self.state(f),
            PathFormula::Min(a, b) | PathFormula::Max(a, b) => {
                self.path(a);
                self.path(b);
            }
            PathFormula::MinusQ(a, _) | PathFormula::PlusQ(a, _) => self.path(a),
        }
    }

    fn resolve(&self, f: &StateFormula) -> Result<Option<Logic>> {
        match (self.lambda, self.sigma) {
            (true, true) => Err(Error::MixedGrammar(f.to_string())),
            (true, false) => Ok(Some(Logic::Lambda)),
            (false, true) => Ok(Some(Logic::Sigma)),
            (false, false) => Ok(None),
        }
    }
}

impl fmt::Display for StateFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateFormula::Const(q) => write!(f, "{}", display(q)),
            StateFormula::Obs => f.write_str("obs"),
            StateFormula::Min(a, b) => write!(f, "min({a}, {b})"),
            StateFormula::Neg(a) => write!(f, "1 - {a}"),
            StateFormula::MinusQ(a, q) => {
                write_postfix_operand(f, a, a.is_postfix_operand())?;
                write!(f, " (-) {}", display(q))
            }
            StateFormula::Diamond(t, a) => write!(f, "<{}> {a}", display(t)),
            StateFormula::Integral(g) => write!(f, "int {g}"),
        }
    }
}

impl fmt::Display for PathFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathFormula::Eval(a, t) => {
                write_postfix_operand(f, a, a.is_postfix_operand())?;
                write!(f, " @ {}", display(t))
            }
            PathFormula::Min(a, b) => write!(f, "min({a}, {b})"),
            PathFormula::Max(a, b) => write!(f, "max({a}, {b})"),
            PathFormula::MinusQ(a, q) => write!(f, "{a} (-) {}", display(q)),
            PathFormula::PlusQ(a, q) => write!(f, "{a} (+) {}", display(q)),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::State(s) => s.fmt(f),
            Formula::Path(g) => g.fmt(f),
        }
    }
}

fn write_postfix_operand(f: &mut fmt::Formatter<'_>, a: &impl fmt::Display, bare: bool) -> fmt::Result {
    if bare {
        write!(f, "{a}")
    } else {
        write!(f, "({a})")
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(Rational),
    Ident(String),
    Lt,
    Gt,
    LParen,
    RParen,
    Comma,
    At,
    Dash,
    MinusOp,
    PlusOp,
}

fn describe(tok: Option<&(usize, Tok)>) -> String {
    match tok {
        None => "end of input".into(),
        Some((_, Tok::Num(q))) => format!("number {}", display(q)),
        Some((_, Tok::Ident(s))) => format!("{s:?}"),
        Some((_, t)) => format!(
            "{:?}",
            match t {
                Tok::Lt => "<",
                Tok::Gt => ">",
                Tok::LParen => "(",
                Tok::RParen => ")",
                Tok::Comma => ",",
                Tok::At => "@",
                Tok::Dash => "-",
                Tok::MinusOp => "(-)",
                Tok::PlusOp => "(+)",
                Tok::Num(_) | Tok::Ident(_) => unreachable!(),
            }
        ),
    }
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i];
        if ch.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match ch {
            b'(' if bytes[i..].starts_with(b"(-)") => {
                i += 3;
                Tok::MinusOp
            }
            b'(' if bytes[i..].starts_with(b"(+)") => {
                i += 3;
                Tok::PlusOp
            }
            b'(' => {
                i += 1;
                Tok::LParen
            }
            b')' => {
                i += 1;
                Tok::RParen
            }
            b'<' => {
                i += 1;
                Tok::Lt
            }
            b'>' => {
                i += 1;
                Tok::Gt
            }
            b',' => {
                i += 1;
                Tok::Comma
            }
            b'@' => {
                i += 1;
                Tok::At
            }
            b'-' => {
                i += 1;
                Tok::Dash
            }
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'/' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let lit = &text[start..i];
                let q = parse_rational(lit)
                    .map_err(|_| Error::Syntax { pos: start, msg: format!("malformed number {lit:?}") })?;
                Tok::Num(q)
            }
            c if c.is_ascii_alphabetic() => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                Tok::Ident(text[start..i].to_ascii_lowercase())
            }
            _ => {
                let c = text[start..].chars().next().unwrap_or('?');
                return Err(Error::Syntax { pos: start, msg: format!("unexpected character {c:?}") });
            }
        };
        out.push((start, tok));
    }
    Ok(out)
}

/// Untyped parse tree; sorts and logic are resolved afterwards.
#[derive(Debug, Clone)]
struct Node {
    pos: usize,
    kind: NodeKind,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Num(Rational),
    Obs,
    Min(Box<Node>, Box<Node>),
    Max(Box<Node>, Box<Node>),
    Neg(Box<Node>),
    MinusQ(Box<Node>, Rational),
    PlusQ(Box<Node>, Rational),
    Diamond(Rational, Box<Node>),
    Int(Box<Node>),
    At(Box<Node>, Rational),
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.len, |(p, _)| *p)
    }

    fn error<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Syntax { pos: self.pos(), msg: msg.into() })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&tok) {
            self.at += 1;
            Ok(())
        } else {
            self.error(format!("expected {what}, found {}", describe(self.toks.get(self.at))))
        }
    }

    fn number(&mut self, what: &str) -> Result<Rational> {
        match self.peek() {
            Some(Tok::Num(q)) => {
                let q = *q;
                self.at += 1;
                Ok(q)
            }
            _ => self.error(format!("expected {what}, found {}", describe(self.toks.get(self.at)))),
        }
    }

    fn constant(&mut self) -> Result<Rational> {
        let pos = self.pos();
        let q = self.number("a rational constant")?;
        check_constant(q).map_err(|_| Error::Syntax {
            pos,
            msg: Error::ConstantOutOfRange(display(&q).to_string()).to_string(),
        })?;
        Ok(q)
    }

    fn prefix(&mut self) -> Result<Node> {
        let pos = self.pos();
        match self.peek() {
            Some(Tok::Lt) => {
                self.at += 1;
                let t = self.number("a time")?;
                self.expect(Tok::Gt, "'>'")?;
                let body = self.prefix()?;
                Ok(Node { pos, kind: NodeKind::Diamond(t, Box::new(body)) })
            }
            Some(Tok::Ident(s)) if s == "int" => {
                self.at += 1;
                let body = self.prefix()?;
                Ok(Node { pos, kind: NodeKind::Int(Box::new(body)) })
            }
            Some(Tok::Num(q)) if q.is_one() && matches!(self.toks.get(self.at + 1), Some((_, Tok::Dash))) => {
                self.at += 2;
                let body = self.prefix()?;
                Ok(Node { pos, kind: NodeKind::Neg(Box::new(body)) })
            }
            _ => self.postfix(),
        }
    }

    fn postfix(&mut self) -> Result<Node> {
        let mut node = self.atom()?;
        loop {
            let pos = self.pos();
            let kind = match self.peek() {
                Some(Tok::MinusOp) => {
                    self.at += 1;
                    NodeKind::MinusQ(Box::new(node), self.constant()?)
                }
                Some(Tok::PlusOp) => {
                    self.at += 1;
                    NodeKind::PlusQ(Box::new(node), self.constant()?)
                }
                Some(Tok::At) => {
                    self.at += 1;
                    NodeKind::At(Box::new(node), self.number("a time")?)
                }
                _ => return Ok(node),
            };
            node = Node { pos, kind };
        }
    }

    fn atom(&mut self) -> Result<Node> {
        let pos = self.pos();
        match self.peek().cloned() {
            Some(Tok::Num(_)) => Ok(Node { pos, kind: NodeKind::Num(self.constant()?) }),
            Some(Tok::Ident(s)) if s == "obs" => {
                self.at += 1;
                Ok(Node { pos, kind: NodeKind::Obs })
            }
            Some(Tok::Ident(s)) if s == "min" || s == "max" => {
                self.at += 1;
                self.expect(Tok::LParen, "'('")?;
                let a = self.prefix()?;
                self.expect(Tok::Comma, "','")?;
                let b = self.prefix()?;
                self.expect(Tok::RParen, "')'")?;
                let kind = if s == "min" {
                    NodeKind::Min(Box::new(a), Box::new(b))
                } else {
                    NodeKind::Max(Box::new(a), Box::new(b))
                };
                Ok(Node { pos, kind })
            }
            Some(Tok::LParen) => {
                self.at += 1;
                let inner = self.prefix()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Some(Tok::Ident(s)) => self.error(format!("unknown identifier {s:?}")),
            _ => self.error(format!("expected a formula, found {}", describe(self.toks.get(self.at)))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sort {
    State,
    Path,
}

fn sort_of(node: &Node) -> Result<Sort> {
    let want = |n: &Node, s: Sort, op: &str| -> Result<()> {
        let got = sort_of(n)?;
        if got != s {
            let (a, b) = match s {
                Sort::State => ("a state formula", "a trajectory formula"),
                Sort::Path => ("a trajectory formula", "a state formula"),
            };
            return Err(Error::Syntax { pos: n.pos, msg: format!("{op} expects {a}, found {b}") });
        }
        Ok(())
    };
    match &node.kind {
        NodeKind::Num(_) | NodeKind::Obs => Ok(Sort::State),
        NodeKind::Neg(a) => want(a, Sort::State, "'1 -'").map(|_| Sort::State),
        NodeKind::Diamond(_, a) => want(a, Sort::State, "'<t>'").map(|_| Sort::State),
        NodeKind::Int(a) => want(a, Sort::Path, "'int'").map(|_| Sort::State),
        NodeKind::At(a, _) => want(a, Sort::State, "'@'").map(|_| Sort::Path),
        NodeKind::MinusQ(a, _) | NodeKind::PlusQ(a, _) => sort_of(a),
        NodeKind::Min(a, b) | NodeKind::Max(a, b) => {
            let s = sort_of(a)?;
            want(b, s, "min/max")?;
            Ok(s)
        }
    }
}

fn surface_marks(node: &Node, diamond: &mut Option<usize>, path: &mut Option<usize>) {
    match &node.kind {
        NodeKind::Num(_) | NodeKind::Obs => {}
        NodeKind::Diamond(_, a) => {
            diamond.get_or_insert(node.pos);
            surface_marks(a, diamond, path);
        }
        NodeKind::Int(a) | NodeKind::At(a, _) => {
            path.get_or_insert(node.pos);
            surface_marks(a, diamond, path);
        }
        NodeKind::Neg(a) | NodeKind::MinusQ(a, _) | NodeKind::PlusQ(a, _) => surface_marks(a, diamond, path),
        NodeKind::Min(a, b) | NodeKind::Max(a, b) => {
            surface_marks(a, diamond, path);
            surface_marks(b, diamond, path);
        }
    }
}

fn lower_state(node: &Node, logic: Logic) -> Result<StateFormula> {
    let z = Rational::zero();
    Ok(match &node.kind {
        NodeKind::Num(q) => StateFormula::Const(*q),
        NodeKind::Obs => StateFormula::Obs,
        NodeKind::Neg(a) => StateFormula::neg(lower_state(a, logic)?),
        NodeKind::MinusQ(a, q) => StateFormula::MinusQ(Box::new(lower_state(a, logic)?), *q),
        NodeKind::Diamond(t, a) => StateFormula::Diamond(*t, Box::new(lower_state(a, logic)?)),
        NodeKind::Int(g) => StateFormula::integral(lower_path(g, logic)?),
        NodeKind::Min(a, b) => {
            let (a, b) = (lower_state(a, logic)?, lower_state(b, logic)?);
            match logic {
                Logic::Lambda => StateFormula::min(a, b),
                Logic::Sigma => StateFormula::sigma_min(a, b),
            }
        }
        NodeKind::Max(a, b) => {
            let (a, b) = (lower_state(a, logic)?, lower_state(b, logic)?);
            match logic {
                Logic::Lambda => StateFormula::max_f(a, b),
                Logic::Sigma => StateFormula::sigma_max(a, b),
            }
        }
        NodeKind::PlusQ(a, q) => {
            let a = lower_state(a, logic)?;
            match logic {
                Logic::Lambda => StateFormula::plus_q(a, *q)?,
                Logic::Sigma => {
                    StateFormula::integral(PathFormula::PlusQ(Box::new(PathFormula::Eval(Box::new(a), z)), *q))
                }
            }
        }
        NodeKind::At(..) => return Err(Error::Syntax { pos: node.pos, msg: "'@' builds a trajectory formula".into() }),
    })
}

fn lower_path(node: &Node, logic: Logic) -> Result<PathFormula> {
    Ok(match &node.kind {
        NodeKind::At(a, t) => PathFormula::Eval(Box::new(lower_state(a, logic)?), *t),
        NodeKind::Min(a, b) => PathFormula::min(lower_path(a, logic)?, lower_path(b, logic)?),
        NodeKind::Max(a, b) => PathFormula::max(lower_path(a, logic)?, lower_path(b, logic)?),
        NodeKind::MinusQ(a, q) => PathFormula::MinusQ(Box::new(lower_path(a, logic)?), *q),
        NodeKind::PlusQ(a, q) => PathFormula::PlusQ(Box::new(lower_path(a, logic)?), *q),
        _ => return Err(Error::Syntax { pos: node.pos, msg: "expected a trajectory formula".into() }),
    })
}

/// Parses a formula, expanding derived operators into the core grammar.
///
/// The logic is inferred: `<t>` selects the kernel logic, `int` and `@`
/// select the trajectory logic, and formulas with neither are read in the
/// kernel logic.
pub fn parse(text: &str) -> Result<Formula> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, at: 0, len: text.len() };
    let node = p.prefix()?;
    if p.at != p.toks.len() {
        return p.error(format!("unexpected {} after formula", describe(p.toks.get(p.at))));
    }
    let sort = sort_of(&node)?;
    let (mut diamond, mut path) = (None, None);
    surface_marks(&node, &mut diamond, &mut path);
    let logic = match (diamond, path) {
        (Some(d), Some(s)) => {
            return Err(Error::MixedGrammar(format!(
                "'<t>' at {d} cannot be combined with trajectory operators ('int' or '@', first at {s}) in {text:?}"
            )))
        }
        (_, Some(_)) => Logic::Sigma,
        _ => Logic::Lambda,
    };
    match sort {
        Sort::State => Ok(Formula::State(lower_state(&node, logic)?)),
        Sort::Path => Ok(Formula::Path(lower_path(&node, logic)?)),
    }
}

/// Parses a state formula.
pub fn parse_state(text: &str) -> Result<StateFormula> {
    parse(text)?.into_state()
}

/// Parses a state formula and requires it to be usable in `logic`.
pub fn parse_in(text: &str, logic: Logic) -> Result<StateFormula> {
    let f = parse_state(text)?;
    match f.logic()? {
        Some(l) if l != logic => Err(Error::MixedGrammar(format!("{text:?} is a {l} formula, expected {logic}"))),
        _ => Ok(f),
    }
}

/// Reads formulas one per line, skipping blank lines and `#` comments.
///
/// Errors carry the 1-based line number.
pub fn parse_lines(text: &str) -> std::result::Result<Vec<(usize, Formula)>, (usize, Error)> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push((k + 1, parse(line).map_err(|e| (k + 1, e))?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    fn state(s: &str) -> StateFormula {
        parse_state(s).unwrap()
    }

    #[test]
    fn parses_constant() {
        assert_eq!(state("0.5"), StateFormula::Const(r(1, 2)));
        assert_eq!(state("3/8"), StateFormula::Const(r(3, 8)));
    }

    #[test]
    fn parses_diamond_of_minus() {
        let f = state("<1/2> (obs (-) 1/4)");
        assert_eq!(f, StateFormula::Diamond(r(1, 2), Box::new(StateFormula::MinusQ(Box::new(StateFormula::Obs), r(1, 4)))));
        assert_eq!(state("<1/2> obs (-) 1/4"), f);
    }

    #[test]
    fn parses_integral_of_min() {
        let f = state("int (min (obs @ 0, obs @ 1))");
        let ev = |t| PathFormula::Eval(Box::new(StateFormula::Obs), r(t, 1));
        assert_eq!(f, StateFormula::Integral(Box::new(PathFormula::Min(Box::new(ev(0)), Box::new(ev(1))))));
    }

    #[test]
    fn negation_and_postfix_precedence() {
        let f = state("1 - obs (-) 1/2");
        assert_eq!(f, StateFormula::neg(StateFormula::MinusQ(Box::new(StateFormula::Obs), r(1, 2))));
        let g = state("(1 - obs) (-) 1/2");
        assert_eq!(g, StateFormula::MinusQ(Box::new(StateFormula::neg(StateFormula::Obs)), r(1, 2)));
        assert_eq!(state("1"), StateFormula::Const(r(1, 1)));
    }

    #[test]
    fn derived_operators_expand_per_logic() {
        assert_eq!(state("max(0.3, 0.6)"), StateFormula::max_f(StateFormula::Const(r(3, 10)), StateFormula::Const(r(3, 5))));
        assert_eq!(state("obs (+) 1/2"), StateFormula::plus_q(StateFormula::Obs, r(1, 2)).unwrap());
        let sig = state("min(obs, int (obs @ 1))");
        assert_eq!(sig.logic().unwrap(), Some(Logic::Sigma));
        match sig {
            StateFormula::Integral(g) => assert!(matches!(*g, PathFormula::Min(..))),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_mixed_grammar() {
        assert!(matches!(parse("<1> int (obs @ 0)"), Err(Error::MixedGrammar(_))));
        assert!(matches!(parse("min(<1> obs, int (obs @ 1))"), Err(Error::MixedGrammar(_))));
        let mixed = StateFormula::integral(PathFormula::eval(StateFormula::diamond(r(1, 1), StateFormula::Obs).unwrap(), r(0, 1)).unwrap());
        assert!(matches!(mixed.logic(), Err(Error::MixedGrammar(_))));
    }

    #[test]
    fn rejects_out_of_range_constant() {
        match parse("obs (-) 3/2") {
            Err(Error::Syntax { pos, msg }) => {
                assert_eq!(pos, 8);
                assert!(msg.contains("outside"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(StateFormula::constant(r(5, 4)), Err(Error::ConstantOutOfRange(_))));
    }

    #[test]
    fn reports_syntax_positions() {
        match parse("min(obs, )") {
            Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 9),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("obs obs"), Err(Error::Syntax { pos: 4, .. })));
        assert!(matches!(parse("int obs"), Err(Error::Syntax { .. })));
        assert!(matches!(parse("<1> (obs @ 1)"), Err(Error::Syntax { .. })));
        assert!(matches!(parse("$"), Err(Error::Syntax { pos: 0, .. })));
    }

    #[test]
    fn printer_round_trips() {
        for s in [
            "0.5",
            "obs",
            "<1/2> (obs (-) 1/4)",
            "1 - min(obs, <1> obs)",
            "(1 - obs) (-) 1/8",
            "(<1> obs) (-) 1/8",
            "max(obs, 1/3)",
            "obs (+) 1/2",
            "int (min (obs @ 0, obs @ 1))",
            "int ((1 - obs) @ 1 (+) 1/4)",
            "max(obs @ 0, (int (obs @ 2)) @ 1)",
            "int max(obs @ 0, obs @ 1) (-) 1/2",
        ] {
            let f = parse(s).unwrap();
            let printed = f.to_string();
            assert_eq!(parse(&printed).unwrap(), f, "{s} printed as {printed}");
        }
    }

    #[test]
    fn depth_counts_leaves_as_one() {
        assert_eq!(state("obs").depth(), 1);
        assert_eq!(state("<1> obs").depth(), 2);
        assert_eq!(state("min(obs, 1 - obs)").depth(), 3);
        assert_eq!(state("int (obs @ 1)").depth(), 2);
        assert_eq!(state("int min(obs @ 0, obs @ 1)").depth(), 3);
    }

    #[test]
    fn reads_formula_files() {
        let text = "# comment\nobs\n\n<1> obs # trailing\n";
        let parsed = parse_lines(text).unwrap();
        assert_eq!(parsed.iter().map(|(l, _)| *l).collect::<Vec<_>>(), vec![2, 4]);
        let err = parse_lines("obs\nmin(obs").unwrap_err();
        assert_eq!(err.0, 2);
    }
}
