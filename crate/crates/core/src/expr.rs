//! `exprv1`: a small arithmetic language for the right-hand sides `F(s, x, z)`
//! and kernels `H(s, t, y)`.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?            right-associative
//! atom  := number | name | name '[' int ']' | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Precedence, tightest first: `^`, unary `-`, `* /`, `+ -`. So `-x^2` is
//! `-(x^2)` and `2^3^2` is `2^9`.
//!
//! Variables are resolved to slots at parse time against an [`Env`]; evaluation
//! takes positional [`Args`]. The one time-scale-aware builtin, `eominus(a)`,
//! evaluates `e_{⊖a}(s, s0)` through a [`TimeContext`].

use std::fmt;

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{name}` at byte {offset}")]
    UnknownVariable { name: String, offset: usize },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("index {index} out of range for `{name}` of dimension {dim} at byte {offset}")]
    IndexOutOfRange {
        name: String,
        index: usize,
        dim: usize,
        offset: usize,
    },
    #[error("`{name}` takes {expected} argument(s), got {got} at byte {offset}")]
    Arity {
        name: String,
        expected: &'static str,
        got: usize,
        offset: usize,
    },
    #[error("domain error in `{node}`: {message}")]
    Domain { node: String, message: String },
}

type Result<T> = std::result::Result<T, ExprError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

const NEG_PRECEDENCE: u8 = 3;
const ATOM_PRECEDENCE: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Abs,
    Sqrt,
    Min,
    Max,
    /// `e_{⊖a}(s, s0)`; carries the slot of `s`.
    EOminus { s_slot: usize },
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "min" => Func::Min,
            "max" => Func::Max,
            "eominus" => Func::EOminus { s_slot: usize::MAX },
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Min => "min",
            Func::Max => "max",
            Func::EOminus { .. } => "eominus",
        }
    }

    fn variadic(self) -> bool {
        matches!(self, Func::Min | Func::Max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constant {
    Pi,
    E,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Const(Constant),
    Scalar { name: String, slot: usize },
    Index { name: String, slot: usize, index: usize },
    Neg(Box<Expr>),
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Call { func: Func, args: Vec<Expr> },
}

/// Declared variables for one slot of the problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    scalars: Vec<String>,
    vectors: Vec<(String, usize)>,
}

impl Env {
    pub fn new(scalars: &[&str], vectors: &[(&str, usize)]) -> Self {
        Env {
            scalars: scalars.iter().map(|s| s.to_string()).collect(),
            vectors: vectors.iter().map(|(n, d)| (n.to_string(), *d)).collect(),
        }
    }

    /// Environment of `F(s, x, z)` with state dimension `n`.
    pub fn for_f(n: usize) -> Self {
        Self::new(&["s"], &[("x", n), ("z", n)])
    }

    /// Environment of `H(s, t, y)` with state dimension `n`.
    pub fn for_h(n: usize) -> Self {
        Self::new(&["s", "t"], &[("y", n)])
    }

    fn scalar_slot(&self, name: &str) -> Option<usize> {
        self.scalars.iter().position(|s| s == name)
    }

    fn vector_slot(&self, name: &str) -> Option<(usize, usize)> {
        self.vectors
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| (i, self.vectors[i].1))
    }
}

/// Supplies time-scale quantities to the `eominus` builtin.
pub trait TimeContext: Sync {
    /// `e_{⊖alpha}(s, s0)`.
    fn exp_ominus_from_start(&self, alpha: f64, s: f64) -> std::result::Result<f64, String>;
}

/// Positional arguments matching an [`Env`]'s declaration order.
#[derive(Clone, Copy)]
pub struct Args<'a> {
    pub scalars: &'a [f64],
    pub vectors: &'a [&'a [f64]],
    pub context: Option<&'a dyn TimeContext>,
}

impl<'a> Args<'a> {
    pub fn new(scalars: &'a [f64], vectors: &'a [&'a [f64]]) -> Self {
        Args { scalars, vectors, context: None }
    }

    pub fn with_context(mut self, context: &'a dyn TimeContext) -> Self {
        self.context = Some(context);
        self
    }
}

// ---------------------------------------------------------------------------
// lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64, bool),
    Ident(String),
    Sym(char),
    End,
}

struct Lexer<'s> {
    src: &'s str,
    pos: usize,
}

impl<'s> Lexer<'s> {
    fn tokens(src: &'s str) -> Result<Vec<(Tok, usize)>> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let tok = lx.next()?;
            let done = tok.0 == Tok::End;
            out.push(tok);
            if done {
                return Ok(out);
            }
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn next(&mut self) -> Result<(Tok, usize)> {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || (c == b'.' && self.src.as_bytes().get(start + 1).is_some_and(u8::is_ascii_digit)) {
            return self.number(start);
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                self.pos += 1;
            }
            return Ok((Tok::Ident(self.src[start..self.pos].to_string()), start));
        }
        if b"+-*/^()[],".contains(&c) {
            self.pos += 1;
            return Ok((Tok::Sym(c as char), start));
        }
        let ch = self.src[start..].chars().next().unwrap_or('?');
        Err(ExprError::Syntax { offset: start, message: format!("unexpected character `{ch}`") })
    }

    fn number(&mut self, start: usize) -> Result<(Tok, usize)> {
        let digits = |lx: &mut Self| {
            while matches!(lx.peek(), Some(c) if c.is_ascii_digit()) {
                lx.pos += 1;
            }
        };
        digits(self);
        let mut integral = true;
        if self.peek() == Some(b'.') {
            integral = false;
            self.pos += 1;
            digits(self);
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let bytes = self.src.as_bytes();
            let mut look = self.pos + 1;
            if matches!(bytes.get(look), Some(b'+' | b'-')) {
                look += 1;
            }
            if bytes.get(look).is_some_and(u8::is_ascii_digit) {
                integral = false;
                self.pos = look;
                digits(self);
            }
        }
        let text = &self.src[start..self.pos];
        text.parse::<f64>()
            .map(|v| (Tok::Num(v, integral), start))
            .map_err(|_| ExprError::Syntax { offset: start, message: format!("bad number `{text}`") })
    }
}

// ---------------------------------------------------------------------------
// parser

struct Parser<'e> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    env: &'e Env,
}

impl<'e> Parser<'e> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Sym(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("expected `{c}`")))
        }
    }

    fn unexpected(&self, what: &str) -> ExprError {
        let found = match self.peek() {
            Tok::End => "end of input".to_string(),
            Tok::Num(v, _) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Sym(c) => format!("`{c}`"),
        };
        ExprError::Syntax { offset: self.offset(), message: format!("{what}, found {found}") }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^') {
            let exponent = self.unary()?;
            return Ok(Expr::Binary { op: BinOp::Pow, lhs: Box::new(base), rhs: Box::new(exponent) });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let (tok, offset) = self.bump();
        match tok {
            Tok::Num(v, _) => Ok(Expr::Num(v)),
            Tok::Sym('(') => {
                let inner = self.expr()?;
                self.expect(')')?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::Sym('(') {
                    self.bump();
                    return self.call(name, offset);
                }
                if *self.peek() == Tok::Sym('[') {
                    self.bump();
                    let idx_off = self.offset();
                    let index = match self.bump() {
                        (Tok::Num(v, true), _) if v >= 0.0 && v <= u32::MAX as f64 => v as usize,
                        _ => {
                            return Err(ExprError::Syntax {
                                offset: idx_off,
                                message: "expected a nonnegative integer index".into(),
                            })
                        }
                    };
                    self.expect(']')?;
                    let (slot, dim) = self
                        .env
                        .vector_slot(&name)
                        .ok_or(ExprError::UnknownVariable { name: name.clone(), offset })?;
                    if index >= dim {
                        return Err(ExprError::IndexOutOfRange { name, index, dim, offset });
                    }
                    return Ok(Expr::Index { name, slot, index });
                }
                match name.as_str() {
                    "pi" => return Ok(Expr::Const(Constant::Pi)),
                    "e" => return Ok(Expr::Const(Constant::E)),
                    _ => {}
                }
                let slot = self
                    .env
                    .scalar_slot(&name)
                    .ok_or(ExprError::UnknownVariable { name: name.clone(), offset })?;
                Ok(Expr::Scalar { name, slot })
            }
            _ => Err(ExprError::Syntax { offset, message: "expected an operand".into() }),
        }
    }

    fn call(&mut self, name: String, offset: usize) -> Result<Expr> {
        let mut func =
            Func::lookup(&name).ok_or(ExprError::UnknownFunction { name: name.clone(), offset })?;
        let mut args = vec![self.expr()?];
        while self.eat(',') {
            args.push(self.expr()?);
        }
        self.expect(')')?;
        let ok = if func.variadic() { !args.is_empty() } else { args.len() == 1 };
        if !ok {
            return Err(ExprError::Arity {
                name,
                expected: if func.variadic() { "one or more" } else { "exactly one" },
                got: args.len(),
                offset,
            });
        }
        if let Func::EOminus { s_slot } = &mut func {
            *s_slot = self
                .env
                .scalar_slot("s")
                .ok_or(ExprError::UnknownVariable { name: "s".into(), offset })?;
        }
        Ok(Expr::Call { func, args })
    }
}

/// Parses `src` against the variables declared in `env`.
pub fn parse(src: &str, env: &Env) -> Result<Expr> {
    let toks = Lexer::tokens(src)?;
    let mut p = Parser { toks, pos: 0, env };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.unexpected("expected an operator or end of input"));
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// evaluation

impl Expr {
    pub fn eval(&self, args: &Args<'_>) -> Result<f64> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Const(Constant::Pi) => std::f64::consts::PI,
            Expr::Const(Constant::E) => std::f64::consts::E,
            Expr::Scalar { slot, .. } => args.scalars[*slot],
            Expr::Index { slot, index, .. } => args.vectors[*slot][*index],
            Expr::Neg(inner) => -inner.eval(args)?,
            Expr::Binary { op, lhs, rhs } => {
                let a = lhs.eval(args)?;
                let b = rhs.eval(args)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(self.domain("division by zero"));
                        }
                        a / b
                    }
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call { func, args: fargs } => {
                let x = fargs[0].eval(args)?;
                match func {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tan => x.tan(),
                    Func::Exp => x.exp(),
                    Func::Abs => x.abs(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(self.domain(&format!("log of non-positive value {x}")));
                        }
                        x.ln()
                    }
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(self.domain(&format!("sqrt of negative value {x}")));
                        }
                        x.sqrt()
                    }
                    Func::Min | Func::Max => {
                        let mut acc = x;
                        for a in &fargs[1..] {
                            let v = a.eval(args)?;
                            acc = if *func == Func::Min { acc.min(v) } else { acc.max(v) };
                        }
                        acc
                    }
                    Func::EOminus { s_slot } => {
                        let ctx = args
                            .context
                            .ok_or_else(|| self.domain("eominus needs a time-scale context"))?;
                        if !(x > 0.0) {
                            return Err(self.domain(&format!("eominus needs a positive rate, got {x}")));
                        }
                        ctx.exp_ominus_from_start(x, args.scalars[*s_slot])
                            .map_err(|m| self.domain(&m))?
                    }
                }
            }
        };
        if v.is_nan() {
            return Err(self.domain("result is not a number"));
        }
        Ok(v)
    }

    fn domain(&self, message: &str) -> ExprError {
        ExprError::Domain { node: self.to_string(), message: message.to_string() }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Neg(_) => NEG_PRECEDENCE,
            Expr::Binary { op, .. } => op.precedence(),
            _ => ATOM_PRECEDENCE,
        }
    }
}

struct Wrapped<'a>(&'a Expr, bool);

impl fmt::Display for Wrapped<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.1 {
            write!(f, "({})", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Prints with the fewest parentheses that reparse to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Const(Constant::Pi) => f.write_str("pi"),
            Expr::Const(Constant::E) => f.write_str("e"),
            Expr::Scalar { name, .. } => f.write_str(name),
            Expr::Index { name, index, .. } => write!(f, "{name}[{index}]"),
            Expr::Neg(inner) => {
                write!(f, "-{}", Wrapped(inner, inner.precedence() < NEG_PRECEDENCE))
            }
            Expr::Binary { op: BinOp::Pow, lhs, rhs } => write!(
                f,
                "{}^{}",
                Wrapped(lhs, lhs.precedence() < ATOM_PRECEDENCE),
                Wrapped(rhs, rhs.precedence() < NEG_PRECEDENCE)
            ),
            Expr::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                write!(
                    f,
                    "{} {} {}",
                    Wrapped(lhs, lhs.precedence() < p),
                    op.symbol(),
                    Wrapped(rhs, rhs.precedence() <= p)
                )
            }
            Expr::Call { func, args } => {
                write!(f, "{}(", func.name())?;
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

/// One expression per state component.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorExpr {
    components: Vec<Expr>,
}

impl VectorExpr {
    /// Parses every component against the same environment. Errors carry the
    /// component index.
    pub fn parse(srcs: &[impl AsRef<str>], env: &Env) -> std::result::Result<Self, (usize, ExprError)> {
        let components = srcs
            .iter()
            .enumerate()
            .map(|(i, s)| parse(s.as_ref(), env).map_err(|e| (i, e)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(VectorExpr { components })
    }

    pub fn from_components(components: Vec<Expr>) -> Self {
        VectorExpr { components }
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn eval(&self, args: &Args<'_>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.components.len());
        self.eval_into(args, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, args: &Args<'_>, out: &mut DVector<f64>) -> Result<()> {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(args)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_str(src: &str) -> f64 {
        let env = Env::new(&[], &[]);
        parse(src, &env).unwrap().eval(&Args::new(&[], &[])).unwrap()
    }

    #[test]
    fn golden_precedence() {
        assert_eq!(eval_str("2^3^2"), 512.0);
        assert_eq!(eval_str("-2^2"), -4.0);
        assert_eq!(eval_str("2^-1"), 0.5);
        assert_eq!(eval_str("1 - 2 - 3"), -4.0);
        assert_eq!(eval_str("8 / 4 / 2"), 1.0);
        assert_eq!(eval_str("2 + 3 * 4"), 14.0);
        assert_eq!(eval_str("-3 * 2"), -6.0);
        assert_eq!(eval_str("(2 + 3) * 4"), 20.0);
        assert_eq!(eval_str("2 * -3 ^ 2"), -18.0);
        assert_eq!(eval_str("--2"), 2.0);
        assert!(eval_str("sin(pi)").abs() < 1e-15);
        assert_eq!(eval_str("max(1, 5, 3) - min(4, 2)"), 3.0);
        assert_eq!(eval_str("1.5e2 + .5"), 150.5);
    }

    #[test]
    fn model_shapes_parse() {
        let env = Env::for_f(1);
        assert!(parse("sin(x[0]) + z[0]", &env).is_ok());
        assert!(parse("0.1*sin(1/(2+cos(s)+cos(sqrt(2)*s)))*(sin(x[0])+z[0])", &env).is_ok());

        let h = parse("sin(s)*cos(t)+sin(y[0])+cos(y[0])", &Env::for_h(1)).unwrap();
        let y = [0.0];
        let v = h.eval(&Args::new(&[0.0, 0.0], &[&y])).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn parse_errors() {
        let env = Env::for_f(1);
        assert_eq!(
            parse("x[0", &env),
            Err(ExprError::Syntax { offset: 3, message: "expected `]`, found end of input".into() })
        );
        assert!(matches!(parse("q + 1", &env), Err(ExprError::UnknownVariable { offset: 0, .. })));
        assert!(matches!(parse("foo(s)", &env), Err(ExprError::UnknownFunction { .. })));
        assert!(matches!(
            parse("x[1]", &env),
            Err(ExprError::IndexOutOfRange { index: 1, dim: 1, .. })
        ));
        assert!(matches!(parse("t", &env), Err(ExprError::UnknownVariable { .. })));
        assert!(matches!(parse("y[0]", &env), Err(ExprError::UnknownVariable { .. })));
        assert!(matches!(parse("sin(1, 2)", &env), Err(ExprError::Arity { .. })));
        assert!(matches!(parse("1 +", &env), Err(ExprError::Syntax { offset: 3, .. })));
        assert!(matches!(parse("(1", &env), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("1 $ 2", &env), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse("x[0.5]", &env), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("", &env), Err(ExprError::Syntax { offset: 0, .. })));
        assert!(matches!(parse("eominus(1)", &Env::new(&[], &[])), Err(ExprError::UnknownVariable { .. })));
    }

    #[test]
    fn domain_errors_name_the_node() {
        let env = Env::for_f(1);
        let e = parse("1 + log(x[0])", &env).unwrap();
        let x = [-1.0];
        let z = [0.0];
        match e.eval(&Args::new(&[0.0], &[&x, &z])) {
            Err(ExprError::Domain { node, .. }) => assert_eq!(node, "log(x[0])"),
            other => panic!("unexpected {other:?}"),
        }
        let e = parse("1 / (s - s)", &env).unwrap();
        assert!(matches!(e.eval(&Args::new(&[2.0], &[&x, &z])), Err(ExprError::Domain { .. })));
        let e = parse("sqrt(s)", &env).unwrap();
        assert!(matches!(e.eval(&Args::new(&[-2.0], &[&x, &z])), Err(ExprError::Domain { .. })));
        let e = parse("eominus(1)", &env).unwrap();
        assert!(matches!(e.eval(&Args::new(&[0.0], &[&x, &z])), Err(ExprError::Domain { .. })));
    }

    struct Decay;
    impl TimeContext for Decay {
        fn exp_ominus_from_start(&self, alpha: f64, s: f64) -> std::result::Result<f64, String> {
            Ok((-alpha * s).exp())
        }
    }

    #[test]
    fn eominus_uses_context() {
        let e = parse("2 * eominus(0.5)", &Env::for_f(1)).unwrap();
        let (x, z) = ([0.0], [0.0]);
        let v = e.eval(&Args::new(&[2.0], &[&x, &z]).with_context(&Decay)).unwrap();
        assert!((v - 2.0 * (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn printing_is_minimal() {
        let env = Env::for_f(2);
        for (src, printed) in [
            ("(1 + 2) * 3", "(1 + 2) * 3"),
            ("1 - (2 - 3)", "1 - (2 - 3)"),
            ("(1 - 2) - 3", "1 - 2 - 3"),
            ("(2^3)^2", "(2^3)^2"),
            ("2^(3^2)", "2^3^2"),
            ("-(x[1]^2)", "-x[1]^2"),
            ("(-x[1])^2", "(-x[1])^2"),
            ("max(s, z[0] * 2)", "max(s, z[0] * 2)"),
        ] {
            assert_eq!(parse(src, &env).unwrap().to_string(), printed);
        }
    }

    #[test]
    fn vector_expr_reports_component() {
        let env = Env::for_h(2);
        let v = VectorExpr::parse(&["y[0] + t", "y[1] * s"], &env).unwrap();
        let y = [1.0, 2.0];
        let out = v.eval(&Args::new(&[3.0, 4.0], &[&y])).unwrap();
        assert_eq!(out.as_slice(), &[5.0, 6.0]);
        let err = VectorExpr::parse(&["y[0]", "y[2]"], &env).unwrap_err();
        assert_eq!(err.0, 1);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn leaf() -> impl Strategy<Value = Expr> {
            prop_oneof![
                (0u32..1000, 0u32..4).prop_map(|(m, e)| Expr::Num(m as f64 / 10f64.powi(e as i32))),
                Just(Expr::Const(Constant::Pi)),
                Just(Expr::Scalar { name: "s".into(), slot: 0 }),
                (0usize..2).prop_map(|i| Expr::Index { name: "x".into(), slot: 0, index: i }),
                (0usize..2).prop_map(|i| Expr::Index { name: "z".into(), slot: 1, index: i }),
            ]
        }

        fn tree() -> impl Strategy<Value = Expr> {
            leaf().prop_recursive(5, 40, 3, |inner| {
                let op = prop_oneof![
                    Just(BinOp::Add),
                    Just(BinOp::Sub),
                    Just(BinOp::Mul),
                    Just(BinOp::Div),
                    Just(BinOp::Pow)
                ];
                let func = prop_oneof![
                    Just(Func::Sin),
                    Just(Func::Exp),
                    Just(Func::Abs),
                    Just(Func::Sqrt),
                ];
                prop_oneof![
                    inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                    (op, inner.clone(), inner.clone()).prop_map(|(op, l, r)| Expr::Binary {
                        op,
                        lhs: Box::new(l),
                        rhs: Box::new(r)
                    }),
                    (func, inner.clone()).prop_map(|(func, a)| Expr::Call { func, args: vec![a] }),
                    prop::collection::vec(inner, 1..4)
                        .prop_map(|args| Expr::Call { func: Func::Max, args }),
                ]
            })
        }

        #[derive(Debug, Clone, Copy, PartialEq)]
        enum Tk {
            Num(f64),
            Op(char),
            Neg,
            Open,
            Close,
        }

        fn operand(depth: u32) -> BoxedStrategy<Vec<Tk>> {
            let num = (1u32..10).prop_map(|v| vec![Tk::Num(v as f64)]);
            let base = if depth == 0 {
                num.boxed()
            } else {
                prop_oneof![
                    3 => num,
                    1 => flat(depth - 1).prop_map(|mut v| {
                        v.insert(0, Tk::Open);
                        v.push(Tk::Close);
                        v
                    }),
                ]
                .boxed()
            };
            (0usize..3, base)
                .prop_map(|(negs, mut v)| {
                    for _ in 0..negs {
                        v.insert(0, Tk::Neg);
                    }
                    v
                })
                .boxed()
        }

        fn flat(depth: u32) -> BoxedStrategy<Vec<Tk>> {
            let op = prop::sample::select(vec!['+', '-', '*', '/', '^']);
            (operand(depth), prop::collection::vec((op, operand(depth)), 0..5))
                .prop_map(|(first, rest)| {
                    let mut v = first;
                    for (o, mut r) in rest {
                        v.push(Tk::Op(o));
                        v.append(&mut r);
                    }
                    v
                })
                .boxed()
        }

        fn render(toks: &[Tk]) -> String {
            toks.iter()
                .map(|t| match t {
                    Tk::Num(v) => format!("{v}"),
                    Tk::Op(c) => format!(" {c} "),
                    Tk::Neg => "-".into(),
                    Tk::Open => "(".into(),
                    Tk::Close => ")".into(),
                })
                .collect()
        }

        fn prec(t: Tk) -> (u8, bool) {
            match t {
                Tk::Op('+') | Tk::Op('-') => (1, false),
                Tk::Op('*') | Tk::Op('/') => (2, false),
                Tk::Neg => (3, true),
                Tk::Op('^') => (4, true),
                _ => (0, false),
            }
        }

        /// Returns false on a domain event: division by zero or a NaN.
        fn apply(out: &mut Vec<f64>, t: Tk) -> bool {
            if t == Tk::Neg {
                let a = out.pop().unwrap();
                out.push(-a);
                return true;
            }
            let b = out.pop().unwrap();
            let a = out.pop().unwrap();
            if t == Tk::Op('/') && b == 0.0 {
                return false;
            }
            let v = match t {
                Tk::Op('+') => a + b,
                Tk::Op('-') => a - b,
                Tk::Op('*') => a * b,
                Tk::Op('/') => a / b,
                Tk::Op('^') => a.powf(b),
                _ => unreachable!(),
            };
            out.push(v);
            !v.is_nan()
        }

        /// Shunting-yard evaluation, independent of the recursive-descent parser.
        fn reference(toks: &[Tk]) -> Option<f64> {
            let mut out = Vec::new();
            let mut ops: Vec<Tk> = Vec::new();
            for &t in toks {
                match t {
                    Tk::Num(v) => out.push(v),
                    Tk::Neg | Tk::Open => ops.push(t),
                    Tk::Close => {
                        while let Some(top) = ops.pop() {
                            if top == Tk::Open {
                                break;
                            }
                            if !apply(&mut out, top) {
                                return None;
                            }
                        }
                    }
                    Tk::Op(_) => {
                        let (p, right) = prec(t);
                        while let Some(&top) = ops.last() {
                            let (q, _) = prec(top);
                            if top != Tk::Open && (q > p || (q == p && !right)) {
                                if !apply(&mut out, ops.pop().unwrap()) {
                                    return None;
                                }
                            } else {
                                break;
                            }
                        }
                        ops.push(t);
                    }
                }
            }
            while let Some(top) = ops.pop() {
                if !apply(&mut out, top) {
                    return None;
                }
            }
            out.pop()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn printed_trees_reparse_identically(e in tree()) {
                let printed = e.to_string();
                let back = parse(&printed, &Env::for_f(2)).unwrap();
                prop_assert_eq!(back, e, "{}", printed);
            }

            #[test]
            fn flat_strings_match_shunting_yard(toks in flat(2)) {
                let src = render(&toks);
                let want = reference(&toks);
                let got = parse(&src, &Env::new(&[], &[])).unwrap().eval(&Args::new(&[], &[]));
                match (got, want) {
                    (Ok(v), Some(w)) if w.is_finite() => {
                        prop_assert!((v - w).abs() <= 1e-12 * w.abs().max(1.0), "{src}: {v} vs {w}");
                    }
                    (Ok(v), Some(w)) => prop_assert_eq!(v, w, "{}", src),
                    (Err(ExprError::Domain { .. }), None) => {}
                    (got, want) => prop_assert!(false, "{src}: {got:?} vs {want:?}"),
                }
            }
        }
    }
}
