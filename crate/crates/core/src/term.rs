//! Operator terms: the AST of a composite operator `Θ(w)` and its text form.
//!
//! Grammar (an equation may omit the leading `w =`):
//!
//! ```text
//! equation := "w" "=" expr ;
//! expr     := term { "+" term } ;
//! term     := factor { "*" factor } ;
//! factor   := base [ "^" INT ] ;
//! base     := "z" | "w" | NUMBER "*"? factor? | "(" expr ")"
//!           | OPNAME [ "[" mset "]" ] "(" expr ")"
//!           | "powsum" "(" NUMBER "," mset "," expr ")"
//!           | "expm1" "(" expr ")" | "poly" "(" NUMBER { "," NUMBER } ")"
//!           | "geom" "(" NUMBER ")" ;
//! OPNAME   := "MSet" | "Cycle" | "DCycle" | "Seq" ;
//! mset     := "all" | "odd" | "even" | "primes" | "ap" "(" INT "," INT ")"
//!           | "{" INT { "," INT } "}" ;
//! ```
//!
//! `MSet_2(w)` is shorthand for `MSet[{2}](w)`, a base may be followed by
//! `@ base` to compose (`(outer)@(inner)` feeds `inner` into the w-slot of
//! `outer`), and `#` starts a comment that runs to the end of the line.

use std::fmt;
use std::ops::{Add, Mul};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::series::Coefficient;
use crate::specset::{Builtin, SpecSet, SpecSetError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum StdKind {
    MSet,
    Cycle,
    DCycle,
    Seq,
}

impl StdKind {
    pub fn name(self) -> &'static str {
        match self {
            StdKind::MSet => "MSet",
            StdKind::Cycle => "Cycle",
            StdKind::DCycle => "DCycle",
            StdKind::Seq => "Seq",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "MSet" => StdKind::MSet,
            "Cycle" => StdKind::Cycle,
            "DCycle" => StdKind::DCycle,
            "Seq" => StdKind::Seq,
            _ => return None,
        })
    }
}

/// Behaviour of a constant series at its radius of convergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum RadiusClass {
    /// Entire (polynomials, `e^z - 1`).
    Infinite,
    /// Finite positive radius and `A(ρ_A) = ∞`.
    FiniteDivergent,
    /// Finite positive radius and `A(ρ_A) < ∞`.
    FiniteConvergent,
    /// Radius zero: not bounded.
    Zero,
}

/// Closed-form constant series `A(z)` with zero constant term.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Generator {
    /// Coefficients of `z^1, z^2, ...`.
    Poly(Vec<Coefficient>),
    /// `Σ_{n≥1} Rⁿ zⁿ`.
    Geometric(Coefficient),
    /// `Σ_{n≥1} zⁿ/n!`.
    ExpM1,
    /// Coefficients of `z^1, z^2, ...` taken literally (zero beyond the list),
    /// with the radius behaviour declared by the caller for classification.
    UserList { coeffs: Vec<Coefficient>, class: RadiusClass },
}

impl Generator {
    pub fn coeff(&self, n: usize) -> BigRational {
        if n == 0 {
            return BigRational::zero();
        }
        match self {
            Generator::Poly(c) | Generator::UserList { coeffs: c, .. } => {
                c.get(n - 1).map(|c| c.value().clone()).unwrap_or_else(BigRational::zero)
            }
            Generator::Geometric(r) => num_traits::pow(r.value().clone(), n),
            Generator::ExpM1 => {
                let fact = (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k));
                BigRational::new(BigInt::one(), fact)
            }
        }
    }

    pub fn radius_class(&self) -> RadiusClass {
        match self {
            Generator::Poly(_) | Generator::ExpM1 => RadiusClass::Infinite,
            Generator::Geometric(_) => RadiusClass::FiniteDivergent,
            Generator::UserList { class, .. } => *class,
        }
    }

    pub fn is_integral(&self) -> bool {
        match self {
            Generator::Poly(c) | Generator::UserList { coeffs: c, .. } => c.iter().all(Coefficient::is_integer),
            Generator::Geometric(r) => r.is_integer(),
            Generator::ExpM1 => false,
        }
    }

    /// Index of the first nonzero coefficient (`None` for the zero series).
    pub fn valuation(&self) -> Option<usize> {
        match self {
            Generator::Poly(c) | Generator::UserList { coeffs: c, .. } => {
                c.iter().position(|c| !c.is_zero()).map(|i| i + 1)
            }
            Generator::Geometric(_) | Generator::ExpM1 => Some(1),
        }
    }

    /// Value and derivative at `x >= 0`; `None` outside the disc of convergence.
    pub fn eval(&self, x: f64) -> Option<(f64, f64)> {
        match self {
            Generator::Poly(c) | Generator::UserList { coeffs: c, .. } => {
                let (mut v, mut d) = (0.0, 0.0);
                for (i, c) in c.iter().enumerate() {
                    let cf = c.to_f64();
                    v += cf * x.powi(i as i32 + 1);
                    d += (i + 1) as f64 * cf * x.powi(i as i32);
                }
                Some((v, d))
            }
            Generator::Geometric(r) => {
                let rx = r.to_f64() * x;
                (rx < 1.0).then(|| (rx / (1.0 - rx), r.to_f64() / ((1.0 - rx) * (1.0 - rx))))
            }
            Generator::ExpM1 => Some((x.exp_m1(), x.exp())),
        }
    }
}

/// A composite operator.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Z,
    W,
    Const(Generator),
    Scale(Coefficient, Box<Term>),
    Add(Box<Term>, Box<Term>),
    Mul(Box<Term>, Box<Term>),
    /// `outer` with its w-slot fed by `inner`.
    ComposeW {
        outer: Box<Term>,
        inner: Box<Term>,
    },
    Std {
        kind: StdKind,
        set: SpecSet,
        arg: Box<Term>,
    },
    /// `Σ_{n∈M} cⁿ argⁿ`.
    PowSum {
        c: Coefficient,
        set: SpecSet,
        arg: Box<Term>,
    },
    /// `Σ_{n≥1} argⁿ/n!`.
    ExpM1(Box<Term>),
}

impl std::ops::Add for Term {
    type Output = Term;

    fn add(self, rhs: Term) -> Term {
        Term::Add(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Mul for Term {
    type Output = Term;

    fn mul(self, rhs: Term) -> Term {
        Term::Mul(Box::new(self), Box::new(rhs))
    }
}

impl Term {
    pub fn scale(c: Coefficient, t: Term) -> Term {
        Term::Scale(c, Box::new(t))
    }

    /// Standard operator; `M = {1}` collapses to the argument.
    pub fn std(kind: StdKind, set: SpecSet, arg: Term) -> Term {
        if set.is_identity() {
            arg
        } else {
            Term::Std { kind, set, arg: Box::new(arg) }
        }
    }

    pub fn powsum(c: Coefficient, set: SpecSet, arg: Term) -> Term {
        Term::PowSum { c, set, arg: Box::new(arg) }
    }

    pub fn expm1(arg: Term) -> Term {
        Term::ExpM1(Box::new(arg))
    }

    pub fn compose(outer: Term, inner: Term) -> Term {
        Term::ComposeW { outer: Box::new(outer), inner: Box::new(inner) }
    }

    pub fn mentions_w(&self) -> bool {
        match self {
            Term::W => true,
            Term::Z | Term::Const(_) => false,
            Term::Scale(_, t) | Term::ExpM1(t) => t.mentions_w(),
            Term::Std { arg, .. } | Term::PowSum { arg, .. } => arg.mentions_w(),
            Term::Add(a, b) | Term::Mul(a, b) => a.mentions_w() || b.mentions_w(),
            Term::ComposeW { outer, inner } => outer.mentions_w() && inner.mentions_w(),
        }
    }

    /// Top-level summands, left to right.
    pub fn summands(&self) -> Vec<&Term> {
        match self {
            Term::Add(a, b) => {
                let mut v = a.summands();
                v.extend(b.summands());
                v
            }
            t => vec![t],
        }
    }

    /// Visits every node, parents before children.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Term)) {
        f(self);
        match self {
            Term::Z | Term::W | Term::Const(_) => {}
            Term::Scale(_, t) | Term::ExpM1(t) => t.visit(f),
            Term::Std { arg, .. } | Term::PowSum { arg, .. } => arg.visit(f),
            Term::Add(a, b) | Term::Mul(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Term::ComposeW { outer, inner } => {
                outer.visit(f);
                inner.visit(f);
            }
        }
    }

    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }
}

fn sum_of(mut terms: Vec<Term>) -> Option<Term> {
    if terms.is_empty() {
        return None;
    }
    let first = terms.remove(0);
    Some(terms.into_iter().fold(first, Term::add))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SplitError {
    #[error("every summand mentions w: there is no constant part A(z)")]
    NoConstantPart,
    #[error("no summand mentions w: the equation is not recursive")]
    NoRecursivePart,
}

/// Splits `Θ = A(z) + Θ₁(w)` into the w-free summands and the rest.
pub fn split_constant_part(t: &Term) -> Result<(Term, Term), SplitError> {
    let (with_w, without): (Vec<&Term>, Vec<&Term>) = t.summands().into_iter().partition(|s| s.mentions_w());
    let a = sum_of(without.into_iter().cloned().collect()).ok_or(SplitError::NoConstantPart)?;
    let theta1 = sum_of(with_w.into_iter().cloned().collect()).ok_or(SplitError::NoRecursivePart)?;
    Ok((a, theta1))
}

// ---------------------------------------------------------------------------
// printing

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum Prec {
    Sum,
    Product,
    Atom,
}

fn write_term(f: &mut fmt::Formatter<'_>, t: &Term, ctx: Prec) -> fmt::Result {
    let own = match t {
        Term::Add(..) => Prec::Sum,
        Term::Mul(..) | Term::Scale(..) => Prec::Product,
        _ => Prec::Atom,
    };
    let paren = own < ctx;
    if paren {
        f.write_str("(")?;
    }
    match t {
        Term::Z => f.write_str("z")?,
        Term::W => f.write_str("w")?,
        Term::Const(g) => write_generator(f, g)?,
        Term::Scale(c, inner) => {
            write!(f, "{c}*")?;
            write_term(f, inner, Prec::Atom)?;
        }
        Term::Add(a, b) => {
            write_term(f, a, Prec::Sum)?;
            f.write_str(" + ")?;
            write_term(f, b, Prec::Product)?;
        }
        Term::Mul(a, b) => {
            write_term(f, a, Prec::Product)?;
            f.write_str("*")?;
            // products associate to the left; a scalar binds to what follows it
            let right = if matches!(**b, Term::Mul(..)) { Prec::Atom } else { Prec::Product };
            write_term(f, b, right)?;
        }
        Term::ComposeW { outer, inner } => {
            f.write_str("(")?;
            write_term(f, outer, Prec::Sum)?;
            f.write_str(")@(")?;
            write_term(f, inner, Prec::Sum)?;
            f.write_str(")")?;
        }
        Term::Std { kind, set, arg } => {
            f.write_str(kind.name())?;
            if set != &SpecSet::all() {
                write!(f, "[{set}]")?;
            }
            f.write_str("(")?;
            write_term(f, arg, Prec::Sum)?;
            f.write_str(")")?;
        }
        Term::PowSum { c, set, arg } => {
            write!(f, "powsum({c}, {set}, ")?;
            write_term(f, arg, Prec::Sum)?;
            f.write_str(")")?;
        }
        Term::ExpM1(arg) => {
            f.write_str("expm1(")?;
            write_term(f, arg, Prec::Sum)?;
            f.write_str(")")?;
        }
    }
    if paren {
        f.write_str(")")?;
    }
    Ok(())
}

fn write_generator(f: &mut fmt::Formatter<'_>, g: &Generator) -> fmt::Result {
    match g {
        Generator::Poly(c) => {
            let items: Vec<String> = c.iter().map(Coefficient::to_string).collect();
            write!(f, "poly({})", items.join(", "))
        }
        Generator::Geometric(r) => write!(f, "geom({r})"),
        // no dedicated syntax; prints as the equal-valued operator form
        Generator::ExpM1 => f.write_str("expm1(z)"),
        Generator::UserList { coeffs, .. } => {
            let items: Vec<String> = coeffs.iter().map(Coefficient::to_string).collect();
            write!(f, "poly({})", items.join(", "))
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_term(f, self, Prec::Sum)
    }
}

pub fn pretty_print(t: &Term) -> String {
    t.to_string()
}

// ---------------------------------------------------------------------------
// parsing

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown builtin {0:?}")]
    UnknownBuiltin(String),
    #[error("scalar must be positive, got {0}")]
    BadScalar(String),
    #[error("bad restriction set: {0}")]
    BadSet(SpecSetError),
    #[error("a product of numbers alone is a constant term, which is not allowed")]
    BareConstant,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Sym(char),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_alphabetic() {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i + 1 < chars.len() && chars[i] == '/' && chars[i + 1].is_ascii_digit() {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            Tok::Number(chars[start..i].iter().collect())
        } else if "+*^()[]{},=@".contains(c) {
            i += 1;
            Tok::Sym(c)
        } else {
            return Err(ParseError {
                line: l0,
                column: c0,
                kind: ParseErrorKind::Syntax(format!("unexpected character {c:?}")),
            });
        };
        col += i - start;
        out.push(Token { tok, line: l0, column: c0 });
    }
    out.push(Token { tok: Tok::Eof, line, column: col });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

/// One factor of a product: either an operator term or a bare scalar.
enum Factor {
    Term(Term),
    Number(Coefficient),
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn err<T>(&self, kind: ParseErrorKind) -> Result<T, ParseError> {
        let t = &self.toks[self.pos];
        Err(ParseError { line: t.line, column: t.column, kind })
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        self.err(ParseErrorKind::Syntax(msg.into()))
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn is_sym(&self, c: char) -> bool {
        self.peek() == &Tok::Sym(c)
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.is_sym(c) {
            self.bump();
            Ok(())
        } else {
            self.syntax(format!("expected {c:?}, found {}", describe(self.peek())))
        }
    }

    fn expr(&mut self) -> Result<Term, ParseError> {
        let mut acc = self.product()?;
        while self.is_sym('+') {
            self.bump();
            let rhs = self.product()?;
            acc = Term::add(acc, rhs);
        }
        Ok(acc)
    }

    fn product(&mut self) -> Result<Term, ParseError> {
        let mut scalar: Option<Coefficient> = None;
        let mut acc: Option<Term> = None;
        loop {
            match self.factor()? {
                Factor::Number(c) => {
                    scalar = Some(match scalar {
                        Some(s) => Coefficient::new(s.value() * c.value()).expect("product of positives"),
                        None => c,
                    })
                }
                Factor::Term(t) => {
                    acc = Some(match acc {
                        Some(a) => Term::mul(a, t),
                        None => t,
                    })
                }
            }
            if !self.is_sym('*') {
                break;
            }
            self.bump();
        }
        match (scalar, acc) {
            (None, Some(t)) => Ok(t),
            (Some(c), Some(t)) => Ok(Term::scale(c, t)),
            (_, None) => self.err(ParseErrorKind::BareConstant),
        }
    }

    fn factor(&mut self) -> Result<Factor, ParseError> {
        let base = self.base()?;
        if !self.is_sym('^') {
            return Ok(base);
        }
        self.bump();
        let k = self.int()?;
        if k == 0 {
            return self.syntax("exponent must be positive");
        }
        match base {
            Factor::Term(t) => {
                let mut acc = t.clone();
                for _ in 1..k {
                    acc = Term::mul(acc, t.clone());
                }
                Ok(Factor::Term(acc))
            }
            Factor::Number(c) => Ok(Factor::Number(
                Coefficient::new(num_traits::pow(c.value().clone(), k as usize)).expect("positive power"),
            )),
        }
    }

    fn number(&mut self) -> Result<Coefficient, ParseError> {
        match self.peek().clone() {
            Tok::Number(s) => {
                let c: Coefficient = s.parse().or_else(|_| self.err(ParseErrorKind::BadScalar(s.clone())))?;
                if c.is_zero() {
                    return self.err(ParseErrorKind::BadScalar(s));
                }
                self.bump();
                Ok(c)
            }
            other => self.syntax(format!("expected a number, found {}", describe(&other))),
        }
    }

    fn int(&mut self) -> Result<u64, ParseError> {
        match self.peek().clone() {
            Tok::Number(s) => match s.parse::<u64>() {
                Ok(v) => {
                    self.bump();
                    Ok(v)
                }
                Err(_) => self.syntax(format!("expected an integer, found {s}")),
            },
            other => self.syntax(format!("expected an integer, found {}", describe(&other))),
        }
    }

    fn base(&mut self) -> Result<Factor, ParseError> {
        let mut lhs = self.primary()?;
        while self.is_sym('@') {
            self.bump();
            let rhs = match self.primary()? {
                Factor::Term(t) => t,
                Factor::Number(_) => return self.syntax("cannot compose with a bare number"),
            };
            lhs = match lhs {
                Factor::Term(t) => Factor::Term(Term::compose(t, rhs)),
                Factor::Number(_) => return self.syntax("cannot compose a bare number"),
            };
        }
        Ok(lhs)
    }

    fn primary(&mut self) -> Result<Factor, ParseError> {
        match self.peek().clone() {
            Tok::Number(_) => {
                let c = self.number()?;
                // a scalar binds to the factor right after it
                let starred = self.is_sym('*') && starts_factor(self.peek_at(1));
                if starred || starts_factor(self.peek()) {
                    if starred {
                        self.bump();
                    }
                    match self.factor()? {
                        Factor::Term(t) => Ok(Factor::Term(Term::scale(c, t))),
                        Factor::Number(d) => {
                            Ok(Factor::Number(Coefficient::new(c.value() * d.value()).expect("product of positives")))
                        }
                    }
                } else {
                    Ok(Factor::Number(c))
                }
            }
            Tok::Sym('(') => {
                self.bump();
                let f = if matches!(self.peek(), Tok::Number(_)) && self.peek_at(1) == &Tok::Sym(')') {
                    Factor::Number(self.number()?)
                } else {
                    Factor::Term(self.expr()?)
                };
                self.expect(')')?;
                Ok(f)
            }
            Tok::Ident(name) => {
                let at = self.pos;
                self.bump();
                self.ident(&name, at).map(Factor::Term)
            }
            other => self.syntax(format!("unexpected {}", describe(&other))),
        }
    }

    fn err_at<T>(&self, at: usize, kind: ParseErrorKind) -> Result<T, ParseError> {
        let t = &self.toks[at];
        Err(ParseError { line: t.line, column: t.column, kind })
    }

    fn ident(&mut self, name: &str, at: usize) -> Result<Term, ParseError> {
        match name {
            "z" => return Ok(Term::Z),
            "w" => return Ok(Term::W),
            "powsum" => {
                self.expect('(')?;
                let c = self.number()?;
                self.expect(',')?;
                let set = self.mset()?;
                self.expect(',')?;
                let arg = self.expr()?;
                self.expect(')')?;
                return Ok(Term::powsum(c, set, arg));
            }
            "expm1" => {
                self.expect('(')?;
                let arg = self.expr()?;
                self.expect(')')?;
                return Ok(Term::expm1(arg));
            }
            "poly" => {
                self.expect('(')?;
                let mut coeffs = vec![self.poly_coeff()?];
                while self.is_sym(',') {
                    self.bump();
                    coeffs.push(self.poly_coeff()?);
                }
                self.expect(')')?;
                if coeffs.iter().all(Coefficient::is_zero) {
                    return self.err(ParseErrorKind::BadScalar("poly() with all-zero coefficients".into()));
                }
                return Ok(Term::Const(Generator::Poly(coeffs)));
            }
            "geom" => {
                self.expect('(')?;
                let r = self.number()?;
                self.expect(')')?;
                return Ok(Term::Const(Generator::Geometric(r)));
            }
            _ => {}
        }
        let (kind, set) = if let Some((op, sub)) = name.split_once('_') {
            let kind = StdKind::from_name(op)
                .map_or_else(|| self.err_at(at, ParseErrorKind::UnknownBuiltin(name.into())), Ok)?;
            let m: u64 = sub.parse().or_else(|_| self.syntax(format!("bad subscript in {name}")))?;
            let set = SpecSet::explicit([m]).or_else(|e| self.err(ParseErrorKind::BadSet(e)))?;
            (kind, set)
        } else {
            let kind = StdKind::from_name(name)
                .map_or_else(|| self.err_at(at, ParseErrorKind::UnknownBuiltin(name.into())), Ok)?;
            let set = if self.is_sym('[') {
                self.bump();
                let s = self.mset()?;
                self.expect(']')?;
                s
            } else {
                SpecSet::all()
            };
            (kind, set)
        };
        self.expect('(')?;
        let arg = self.expr()?;
        self.expect(')')?;
        Ok(Term::std(kind, set, arg))
    }

    fn poly_coeff(&mut self) -> Result<Coefficient, ParseError> {
        // zero is allowed inside poly() to skip powers
        if let Tok::Number(s) = self.peek().clone() {
            if let Ok(c) = s.parse::<Coefficient>() {
                if c.is_zero() {
                    self.bump();
                    return Ok(c);
                }
            }
        }
        self.number()
    }

    fn mset(&mut self) -> Result<SpecSet, ParseError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                match name.as_str() {
                    "all" => Ok(SpecSet::all()),
                    "odd" => Ok(SpecSet::builtin(Builtin::Odd)),
                    "even" => Ok(SpecSet::builtin(Builtin::Even)),
                    "primes" => Ok(SpecSet::builtin(Builtin::Primes)),
                    "ap" => {
                        self.expect('(')?;
                        let first = self.int()?;
                        self.expect(',')?;
                        let step = self.int()?;
                        self.expect(')')?;
                        SpecSet::arith_prog(first, step).or_else(|e| self.err(ParseErrorKind::BadSet(e)))
                    }
                    _ => {
                        self.pos -= 1;
                        self.err(ParseErrorKind::UnknownBuiltin(name))
                    }
                }
            }
            Tok::Sym('{') => {
                self.bump();
                let mut v = Vec::new();
                if !self.is_sym('}') {
                    v.push(self.int()?);
                    while self.is_sym(',') {
                        self.bump();
                        v.push(self.int()?);
                    }
                }
                self.expect('}')?;
                SpecSet::explicit(v).or_else(|e| self.err(ParseErrorKind::BadSet(e)))
            }
            other => self.syntax(format!("expected a restriction set, found {}", describe(&other))),
        }
    }
}

fn starts_factor(t: &Tok) -> bool {
    matches!(t, Tok::Ident(_) | Tok::Number(_) | Tok::Sym('('))
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("{s:?}"),
        Tok::Number(s) => format!("number {s}"),
        Tok::Sym(c) => format!("{c:?}"),
        Tok::Eof => "end of input".into(),
    }
}

/// Parses an operator term, with or without a leading `w =`.
pub fn parse(text: &str) -> Result<Term, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    if p.peek() == &Tok::Ident("w".into()) && p.peek_at(1) == &Tok::Sym('=') {
        p.bump();
        p.bump();
    }
    let t = p.expr()?;
    if p.peek() != &Tok::Eof {
        return p.syntax(format!("unexpected {} after expression", describe(p.peek())));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all() -> SpecSet {
        SpecSet::all()
    }

    fn seq(arg: Term) -> Term {
        Term::std(StdKind::Seq, all(), arg)
    }

    pub(crate) const GOLDEN: &[&str] = &[
        "z + z*w",
        "z + z*Seq(w)",
        "2*z + 2*z*Seq(w)",
        "z + z*expm1(w)",
        "z + z*MSet(w)",
        "z + z*MSet[{2,3}](w)",
        "z + z*Seq[{2}](w)",
        "z + z*MSet[{2}](w)",
        "z + z*w*w",
        "z + z*(w + MSet[{2}](w))",
        "z + z*MSet[{3}](w)",
        "z + z*MSet(Seq(powsum(6, odd, w)))*(powsum(2, even, DCycle[primes](w)) + powsum(1, even, DCycle[primes](w)))",
        "3*z*z*z + z*z*z*z*Cycle(w) + w*w*DCycle(w) + MSet[{2}](w)",
        "1/2*z + 1/2*z*MSet[{2}](w)",
        "z + (z*w*w)@(z + w)",
        "geom(2) + z*Cycle[ap(1,3)](w) + poly(1, 0, 3)*w*w",
    ];

    #[test]
    fn parse_examples() {
        assert_eq!(parse("z + z*Seq(w)").unwrap(), Term::add(Term::Z, Term::mul(Term::Z, seq(Term::W))));
        assert_eq!(
            parse("w = z + z*w^2").unwrap(),
            Term::add(Term::Z, Term::mul(Term::Z, Term::mul(Term::W, Term::W)))
        );
        let mixed = parse(
            "z + z*MSet(Seq(powsum(6, odd, w))) * (powsum(2, even, DCycle[primes](w)) + powsum(1, even, DCycle[primes](w)))",
        )
        .unwrap();
        let dc = Term::std(StdKind::DCycle, SpecSet::builtin(Builtin::Primes), Term::W);
        let even = SpecSet::builtin(Builtin::Even);
        let expected = Term::add(
            Term::Z,
            Term::mul(
                Term::mul(
                    Term::Z,
                    Term::std(
                        StdKind::MSet,
                        all(),
                        seq(Term::powsum(Coefficient::integer(6), SpecSet::builtin(Builtin::Odd), Term::W)),
                    ),
                ),
                Term::add(
                    Term::powsum(Coefficient::integer(2), even.clone(), dc.clone()),
                    Term::powsum(Coefficient::integer(1), even, dc),
                ),
            ),
        );
        assert_eq!(mixed, expected);
    }

    #[test]
    fn parse_sugar() {
        assert_eq!(parse("MSet_2(w)").unwrap(), parse("MSet[{2}](w)").unwrap());
        assert_eq!(parse("MSet[{1}](w)").unwrap(), Term::W);
        assert_eq!(parse("3*z^2").unwrap(), Term::scale(Coefficient::integer(3), Term::mul(Term::Z, Term::Z)));
        assert_eq!(parse("3z").unwrap(), Term::scale(Coefficient::integer(3), Term::Z));
        assert_eq!(parse("(1/2)*z").unwrap(), Term::scale(Coefficient::ratio(1, 2), Term::Z));
        assert_eq!(parse("z*2*w").unwrap(), parse("z*(2*w)").unwrap());
        assert_eq!(parse("0.5*z").unwrap(), Term::scale(Coefficient::ratio(1, 2), Term::Z));
        assert_eq!(parse("# comment\nw = z # trailing\n").unwrap(), Term::Z);
    }

    #[test]
    fn parse_errors() {
        let e = parse("z +\n  z*Foo(w)").unwrap_err();
        assert_eq!((e.line, e.column), (2, 5));
        assert_eq!(e.kind, ParseErrorKind::UnknownBuiltin("Foo".into()));
        assert!(matches!(parse("0*z").unwrap_err().kind, ParseErrorKind::BadScalar(_)));
        assert!(matches!(parse("MSet[{}](w)").unwrap_err().kind, ParseErrorKind::BadSet(SpecSetError::Empty)));
        assert!(matches!(parse("z + 2").unwrap_err().kind, ParseErrorKind::BareConstant));
        assert!(matches!(parse("z + ").unwrap_err().kind, ParseErrorKind::Syntax(_)));
        assert!(matches!(parse("MSet[evens](w)").unwrap_err().kind, ParseErrorKind::UnknownBuiltin(_)));
        assert!(matches!(parse("z $ w").unwrap_err().kind, ParseErrorKind::Syntax(_)));
        assert!(matches!(parse("z^0").unwrap_err().kind, ParseErrorKind::Syntax(_)));
    }

    #[test]
    fn pretty_print_examples() {
        assert_eq!(pretty_print(&Term::add(Term::Z, Term::mul(Term::Z, seq(Term::W)))), "z + z*Seq(w)");
        assert_eq!(pretty_print(&Term::Z), "z");
        assert_eq!(pretty_print(&Term::scale(Coefficient::integer(3), Term::Z)), "3*z");
    }

    #[test]
    fn golden_round_trip() {
        for src in GOLDEN {
            let t = parse(src).unwrap();
            let printed = pretty_print(&t);
            assert_eq!(parse(&printed).unwrap(), t, "{src} -> {printed}");
        }
    }

    #[test]
    fn awkward_shapes_round_trip() {
        let shapes = [
            Term::mul(Term::Z, Term::mul(Term::W, Term::W)),
            Term::add(Term::Z, Term::add(Term::W, Term::Z)),
            Term::scale(Coefficient::integer(2), Term::add(Term::Z, Term::W)),
            Term::mul(Term::scale(Coefficient::integer(2), Term::Z), Term::W),
            Term::mul(Term::W, Term::scale(Coefficient::ratio(3, 2), Term::Z)),
            Term::mul(Term::W, Term::scale(Coefficient::integer(3), Term::mul(Term::Z, Term::W))),
            Term::compose(Term::compose(Term::W, Term::Z), Term::W),
            Term::scale(Coefficient::integer(2), Term::scale(Coefficient::integer(3), Term::Z)),
        ];
        for t in shapes {
            let printed = pretty_print(&t);
            assert_eq!(parse(&printed).unwrap(), t, "{printed}");
        }
    }

    #[test]
    fn split_examples() {
        let (a, th) = split_constant_part(&parse("z + z*w^2").unwrap()).unwrap();
        assert_eq!(a, Term::Z);
        assert_eq!(th, parse("z*w^2").unwrap());
        let (a, th) = split_constant_part(&parse("z + MSet_2(w) + z^2").unwrap()).unwrap();
        assert_eq!(a, parse("z + z*z").unwrap());
        assert_eq!(th, parse("MSet_2(w)").unwrap());
        assert_eq!(split_constant_part(&parse("z*w").unwrap()), Err(SplitError::NoConstantPart));
        assert_eq!(split_constant_part(&parse("z").unwrap()), Err(SplitError::NoRecursivePart));
    }

    #[test]
    fn generator_coefficients() {
        let g = Generator::Geometric(Coefficient::integer(2));
        assert_eq!(g.coeff(3), BigRational::from_integer(8.into()));
        assert_eq!(Generator::ExpM1.coeff(3), BigRational::new(1.into(), 6.into()));
        let p = Generator::Poly(vec![Coefficient::integer(1), Coefficient::zero(), Coefficient::integer(3)]);
        assert_eq!(p.coeff(3), BigRational::from_integer(3.into()));
        assert_eq!(p.coeff(4), BigRational::zero());
        assert_eq!(p.eval(2.0), Some((2.0 + 24.0, 1.0 + 36.0)));
        assert_eq!(g.eval(0.5), None);
        assert!(!Generator::ExpM1.is_integral());
    }
}
