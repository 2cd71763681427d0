//! A small expression language for coefficient entries and problem data.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | number | 'pi' | var | func '(' expr ')' | '(' expr ')'
//! func   := 'sin' | 'cos' | 'exp'
//! ```
//!
//! Which variables are legal depends on the context the expression is parsed
//! in: coefficient entries see the cell variables `y1, y2`, volume data sees
//! `x1, x2`, and boundary data additionally sees the outward normal `n1, n2`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("unexpected character {ch:?} at position {pos}")]
    BadCharacter { pos: usize, ch: char },
    #[error("malformed number {text:?} at position {pos}")]
    BadNumber { pos: usize, text: String },
    #[error("unbalanced parenthesis at position {pos}")]
    UnbalancedParenthesis { pos: usize },
    #[error("unexpected token {found} at position {pos}")]
    UnexpectedToken { pos: usize, found: String },
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unknown identifier {name:?} at position {pos}")]
    UnknownIdentifier { pos: usize, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    Y1,
    Y2,
    X1,
    X2,
    N1,
    N2,
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::Y1 => "y1",
            Var::Y2 => "y2",
            Var::X1 => "x1",
            Var::X2 => "x2",
            Var::N1 => "n1",
            Var::N2 => "n2",
        }
    }

    /// Spatial axis for position variables, `None` for normal components.
    pub fn axis(self) -> Option<usize> {
        match self {
            Var::Y1 | Var::X1 => Some(0),
            Var::Y2 | Var::X2 => Some(1),
            Var::N1 | Var::N2 => None,
        }
    }
}

/// Set of variables an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarSet {
    /// `y1, y2`: periodic cell coordinates.
    Cell,
    /// `x1, x2`: physical coordinates.
    Spatial,
    /// `x1, x2, n1, n2`: physical coordinates plus the outward normal.
    Boundary,
}

impl VarSet {
    fn lookup(self, name: &str) -> Option<Var> {
        let var = match name {
            "y1" => Var::Y1,
            "y2" => Var::Y2,
            "x1" => Var::X1,
            "x2" => Var::X2,
            "n1" => Var::N1,
            "n2" => Var::N2,
            _ => return None,
        };
        let allowed = match self {
            VarSet::Cell => matches!(var, Var::Y1 | Var::Y2),
            VarSet::Spatial => matches!(var, Var::X1 | Var::X2),
            VarSet::Boundary => !matches!(var, Var::Y1 | Var::Y2),
        };
        allowed.then_some(var)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => " + ",
            BinOp::Sub => " - ",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Evaluation point: a position and, for boundary data, the outward normal.
#[derive(Debug, Clone, Copy, Default)]
pub struct Env {
    pub x: [f64; 2],
    pub normal: [f64; 2],
}

impl Env {
    pub fn at(x: [f64; 2]) -> Self {
        Env { x, normal: [0.0; 2] }
    }
}

impl Expr {
    pub fn eval(&self, env: &Env) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(v) => match v {
                Var::Y1 | Var::X1 => env.x[0],
                Var::Y2 | Var::X2 => env.x[1],
                Var::N1 => env.normal[0],
                Var::N2 => env.normal[1],
            },
            Expr::Neg(e) => -e.eval(env),
            Expr::Bin(op, l, r) => {
                let (a, b) = (l.eval(env), r.eval(env));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
            Expr::Call(f, e) => {
                let v = e.eval(env);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                }
            }
        }
    }

    pub fn eval_at(&self, x: [f64; 2]) -> f64 {
        self.eval(&Env::at(x))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            Expr::Pi => Some(std::f64::consts::PI),
            _ => None,
        }
    }

    /// Every denominator appearing in a division node.
    pub fn denominators(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        self.collect_denominators(&mut out);
        out
    }

    fn collect_denominators<'a>(&'a self, out: &mut Vec<&'a Expr>) {
        match self {
            Expr::Num(_) | Expr::Pi | Expr::Var(_) => {}
            Expr::Neg(e) | Expr::Call(_, e) => e.collect_denominators(out),
            Expr::Bin(op, l, r) => {
                if *op == BinOp::Div {
                    out.push(r);
                }
                l.collect_denominators(out);
                r.collect_denominators(out);
            }
        }
    }

    pub fn references(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) | Expr::Pi => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(e) | Expr::Call(_, e) => e.references(var),
            Expr::Bin(_, l, r) => l.references(var) || r.references(var),
        }
    }

    /// Symbolic partial derivative along a spatial axis (0 or 1). Normal
    /// components are treated as constants.
    pub fn derivative(&self, axis: usize) -> Expr {
        match self {
            Expr::Num(_) | Expr::Pi => Expr::Num(0.0),
            Expr::Var(v) => Expr::Num(if v.axis() == Some(axis) { 1.0 } else { 0.0 }),
            Expr::Neg(e) => neg(e.derivative(axis)),
            Expr::Bin(op, l, r) => {
                let (dl, dr) = (l.derivative(axis), r.derivative(axis));
                match op {
                    BinOp::Add => add(dl, dr),
                    BinOp::Sub => sub(dl, dr),
                    BinOp::Mul => add(mul(dl, (**r).clone()), mul((**l).clone(), dr)),
                    BinOp::Div => {
                        // (l/r)' = l'/r - l r' / r^2
                        let first = div(dl, (**r).clone());
                        let second = div(mul((**l).clone(), dr), mul((**r).clone(), (**r).clone()));
                        sub(first, second)
                    }
                }
            }
            Expr::Call(f, e) => {
                let de = e.derivative(axis);
                let outer = match f {
                    Func::Sin => Expr::Call(Func::Cos, e.clone()),
                    Func::Cos => neg(Expr::Call(Func::Sin, e.clone())),
                    Func::Exp => Expr::Call(Func::Exp, e.clone()),
                };
                mul(outer, de)
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(op, _, _) => op.precedence(),
            _ => 3,
        }
    }
}

fn neg(e: Expr) -> Expr {
    match e {
        Expr::Num(v) => Expr::Num(-v),
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if a.is_zero() => b,
        _ if b.is_zero() => a,
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        _ => Expr::Bin(BinOp::Add, Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if b.is_zero() => a,
        _ if a.is_zero() => neg(b),
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        _ => Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if a.is_zero() || b.is_zero() => Expr::Num(0.0),
        (Expr::Num(x), _) if *x == 1.0 => b,
        (_, Expr::Num(y)) if *y == 1.0 => a,
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        _ => Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if a.is_zero() => Expr::Num(0.0),
        (_, Expr::Num(y)) if *y == 1.0 => a,
        _ => Expr::Bin(BinOp::Div, Box::new(a), Box::new(b)),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Pi => f.write_str("pi"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Neg(e) => {
                if e.precedence() < 3 {
                    write!(f, "-({e})")
                } else {
                    write!(f, "-{e}")
                }
            }
            Expr::Bin(op, l, r) => {
                let p = op.precedence();
                if l.precedence() < p {
                    write!(f, "({l})")?;
                } else {
                    write!(f, "{l}")?;
                }
                f.write_str(op.symbol())?;
                // Operators are left associative, so a right operand of equal
                // precedence must keep its parentheses to reparse identically.
                if r.precedence() <= p {
                    write!(f, "({r})")
                } else {
                    write!(f, "{r}")
                }
            }
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Num(v) => write!(f, "number {v}"),
            Token::Ident(s) => write!(f, "identifier {s:?}"),
            Token::Plus => f.write_str("'+'"),
            Token::Minus => f.write_str("'-'"),
            Token::Star => f.write_str("'*'"),
            Token::Slash => f.write_str("'/'"),
            Token::LParen => f.write_str("'('"),
            Token::RParen => f.write_str("')'"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(usize, Token)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((start, Token::Plus)),
            b'-' => out.push((start, Token::Minus)),
            b'*' => out.push((start, Token::Star)),
            b'/' => out.push((start, Token::Slash)),
            b'(' => out.push((start, Token::LParen)),
            b')' => out.push((start, Token::RParen)),
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ExprError::BadNumber {
                    pos: start,
                    text: text.to_string(),
                })?;
                out.push((start, Token::Num(value)));
                continue;
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Token::Ident(src[start..i].to_string())));
                continue;
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('\u{fffd}');
                return Err(ExprError::BadCharacter { pos: start, ch });
            }
        }
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    vars: VarSet,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn next(&mut self) -> Option<(usize, Token)> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    // Binding power loop over the two left-associative binary levels.
    fn expr(&mut self, min_prec: u8) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some(Token::Plus) => BinOp::Add,
                Some(Token::Minus) => BinOp::Sub,
                Some(Token::Star) => BinOp::Mul,
                Some(Token::Slash) => BinOp::Div,
                _ => break,
            };
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.pos += 1;
            let rhs = self.expr(prec + 1)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        let (pos, tok) = self.next().ok_or(ExprError::UnexpectedEnd)?;
        match tok {
            Token::Minus => Ok(Expr::Neg(Box::new(self.factor()?))),
            Token::Num(v) => Ok(Expr::Num(v)),
            Token::LParen => {
                let inner = self.expr(0)?;
                self.close(pos)?;
                Ok(inner)
            }
            Token::Ident(name) => {
                let func = match name.as_str() {
                    "pi" => return Ok(Expr::Pi),
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    other => {
                        return self
                            .vars
                            .lookup(other)
                            .map(Expr::Var)
                            .ok_or(ExprError::UnknownIdentifier { pos, name });
                    }
                };
                match self.next() {
                    Some((open, Token::LParen)) => {
                        let arg = self.expr(0)?;
                        self.close(open)?;
                        Ok(Expr::Call(func, Box::new(arg)))
                    }
                    Some((p, t)) => Err(ExprError::UnexpectedToken { pos: p, found: t.to_string() }),
                    None => Err(ExprError::UnexpectedEnd),
                }
            }
            Token::RParen => Err(ExprError::UnbalancedParenthesis { pos }),
            other => Err(ExprError::UnexpectedToken { pos, found: other.to_string() }),
        }
    }

    fn close(&mut self, open: usize) -> Result<(), ExprError> {
        match self.next() {
            Some((_, Token::RParen)) => Ok(()),
            None => Err(ExprError::UnbalancedParenthesis { pos: open }),
            Some((p, t)) => Err(ExprError::UnexpectedToken { pos: p, found: t.to_string() }),
        }
    }
}

/// Parses a coefficient expression over the cell variables `y1, y2`.
pub fn parse_expr(src: &str) -> Result<Expr, ExprError> {
    parse_expr_in(src, VarSet::Cell)
}

pub fn parse_expr_in(src: &str, vars: VarSet) -> Result<Expr, ExprError> {
    let tokens = lex(src)?;
    let mut parser = Parser { tokens, pos: 0, vars };
    let e = parser.expr(0)?;
    match parser.next() {
        None => Ok(e),
        Some((pos, Token::RParen)) => Err(ExprError::UnbalancedParenthesis { pos }),
        Some((pos, t)) => Err(ExprError::UnexpectedToken { pos, found: t.to_string() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn trig_sum_evaluates_at_origin() {
        let e = parse_expr("2 + sin(2*pi*y1)*sin(2*pi*y2)").unwrap();
        assert!(matches!(e, Expr::Bin(BinOp::Add, _, _)));
        assert_eq!(e.eval_at([0.0, 0.0]), 2.0);
    }

    #[test]
    fn cosine_laminate_at_half() {
        let e = parse_expr("2 + cos(2*pi*y1)").unwrap();
        assert!((e.eval_at([0.5, 0.3]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unclosed_call_is_unbalanced() {
        let err = parse_expr("sin(2*pi*y1").unwrap_err();
        assert_eq!(err, ExprError::UnbalancedParenthesis { pos: 3 });
        assert!(err.to_string().contains("unbalanced parenthesis"));
        assert!(matches!(parse_expr("(1 + 2))"), Err(ExprError::UnbalancedParenthesis { pos: 7 })));
    }

    #[test]
    fn lexer_and_identifier_errors() {
        assert_eq!(parse_expr("1 + $"), Err(ExprError::BadCharacter { pos: 4, ch: '$' }));
        assert!(matches!(parse_expr("tan(y1)"), Err(ExprError::UnknownIdentifier { .. })));
        // physical coordinates are not visible to coefficient entries
        assert!(matches!(parse_expr("x1"), Err(ExprError::UnknownIdentifier { .. })));
        assert!(parse_expr_in("x1 * n2", VarSet::Boundary).is_ok());
        assert!(matches!(parse_expr("1 +"), Err(ExprError::UnexpectedEnd)));
        assert!(matches!(parse_expr("1 2"), Err(ExprError::UnexpectedToken { pos: 2, .. })));
        assert!(matches!(parse_expr("sin 2"), Err(ExprError::UnexpectedToken { .. })));
    }

    #[test]
    fn precedence_and_associativity() {
        let at = |s: &str| parse_expr(s).unwrap().eval_at([0.0, 0.0]);
        assert_eq!(at("8 - 3 - 2"), 3.0);
        assert_eq!(at("8 / 4 / 2"), 1.0);
        assert_eq!(at("2 + 3 * 4"), 14.0);
        assert_eq!(at("-2 * 3"), -6.0);
        assert_eq!(at("--2"), 2.0);
        assert_eq!(at("1.5e1 + .5"), 15.5);
        // unary minus binds tighter than multiplication
        let e = parse_expr("-y1*y2").unwrap();
        assert!(matches!(e, Expr::Bin(BinOp::Mul, ref l, _) if matches!(**l, Expr::Neg(_))));
    }

    #[test]
    fn derivative_of_polynomial() {
        let v = parse_expr_in("x1*x1*x2", VarSet::Spatial).unwrap();
        let dx = v.derivative(0);
        let dxy = dx.derivative(1);
        let dyy = v.derivative(1).derivative(1);
        let p = [0.3, 0.7];
        assert!((dx.eval_at(p) - 2.0 * 0.3 * 0.7).abs() < 1e-15);
        assert!((dxy.eval_at(p) - 0.6).abs() < 1e-15);
        assert_eq!(dyy.eval_at(p), 0.0);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let e = parse_expr("exp(sin(2*pi*y1)) / (2 + cos(2*pi*y2)*y1)").unwrap();
        let p = [0.31, 0.77];
        for axis in 0..2 {
            let h = 1e-6;
            let mut a = p;
            let mut b = p;
            a[axis] += h;
            b[axis] -= h;
            let fd = (e.eval_at(a) - e.eval_at(b)) / (2.0 * h);
            assert!((e.derivative(axis).eval_at(p) - fd).abs() < 1e-7);
        }
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0u32..1000).prop_map(|n| Expr::Num(n as f64 / 8.0)),
            Just(Expr::Pi),
            Just(Expr::Var(Var::Y1)),
            Just(Expr::Var(Var::Y2)),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (inner.clone(), inner.clone(), 0..4u8).prop_map(|(a, b, k)| {
                    let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div][k as usize];
                    Expr::Bin(op, Box::new(a), Box::new(b))
                }),
                (inner, 0..3u8).prop_map(|(e, k)| {
                    Expr::Call([Func::Sin, Func::Cos, Func::Exp][k as usize], Box::new(e))
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_reparses_to_same_tree(e in arb_expr()) {
            let printed = e.to_string();
            let reparsed = parse_expr(&printed).unwrap();
            prop_assert_eq!(&reparsed, &e);
            // idempotence of the round trip
            prop_assert_eq!(parse_expr(&reparsed.to_string()).unwrap(), reparsed);
        }
    }
}
