//! Recursive-descent parser for the potential grammar.
//!
//! Grammar (see docs/grammar.md at the workspace root):
//!
//! ```text
//! expr   := term  (('+'|'-') term)*
//! term   := unary (('*'|'/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?                 right associative
//! atom   := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! name   := 'x'<digits> | 'r2' | 'theta' | 'pi' | function name
//! ```
//!
//! Functions: exp, log, sin, cos, sqrt (unary) and atan2 (binary). `r2`
//! abbreviates sum of xi^2, `theta` is the planar angle atan2(x2, x1) and needs
//! dim = 2. Variable indices are 1-based in the surface syntax and must not
//! exceed the declared dimension.

use super::ast::Expr;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// Byte offset into the source string.
    pub position: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    UnexpectedEnd,
    UnexpectedToken(String),
    UnknownIdentifier(String),
    BadNumber(String),
    /// Function called with the wrong number of arguments.
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
    /// Variable index exceeds the declared dimension.
    VariableOutOfRange { name: String, dim: usize },
    /// `theta` requires dimension 2.
    ThetaRequiresDim2,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at byte {}: ", self.position)?;
        match &self.kind {
            ParseErrorKind::UnexpectedChar(c) => write!(f, "unexpected character '{c}'"),
            ParseErrorKind::UnexpectedEnd => write!(f, "unexpected end of input"),
            ParseErrorKind::UnexpectedToken(t) => write!(f, "unexpected token '{t}'"),
            ParseErrorKind::UnknownIdentifier(n) => write!(f, "unknown identifier '{n}'"),
            ParseErrorKind::BadNumber(n) => write!(f, "malformed number '{n}'"),
            ParseErrorKind::Arity {
                name,
                expected,
                got,
            } => write!(f, "{name} takes {expected} argument(s), got {got}"),
            ParseErrorKind::VariableOutOfRange { name, dim } => {
                write!(f, "variable '{name}' out of range for dimension {dim}")
            }
            ParseErrorKind::ThetaRequiresDim2 => write!(f, "'theta' requires dimension 2"),
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn tokens(mut self) -> Result<Vec<(usize, Tok)>, ParseError> {
        let mut out = Vec::new();
        while self.pos < self.src.len() {
            let c = self.src[self.pos] as char;
            let start = self.pos;
            match c {
                ' ' | '\t' | '\n' | '\r' => {
                    self.pos += 1;
                }
                '+' => {
                    out.push((start, Tok::Plus));
                    self.pos += 1;
                }
                '-' => {
                    out.push((start, Tok::Minus));
                    self.pos += 1;
                }
                '*' => {
                    out.push((start, Tok::Star));
                    self.pos += 1;
                }
                '/' => {
                    out.push((start, Tok::Slash));
                    self.pos += 1;
                }
                '^' => {
                    out.push((start, Tok::Caret));
                    self.pos += 1;
                }
                '(' => {
                    out.push((start, Tok::LParen));
                    self.pos += 1;
                }
                ')' => {
                    out.push((start, Tok::RParen));
                    self.pos += 1;
                }
                ',' => {
                    out.push((start, Tok::Comma));
                    self.pos += 1;
                }
                '0'..='9' | '.' => {
                    let tok = self.lex_number(start)?;
                    out.push((start, tok));
                }
                'a'..='z' | 'A'..='Z' | '_' => {
                    let mut end = self.pos;
                    while end < self.src.len()
                        && matches!(self.src[end] as char,
                            'a'..='z' | 'A'..='Z' | '0'..='9' | '_')
                    {
                        end += 1;
                    }
                    let name = std::str::from_utf8(&self.src[self.pos..end])
                        .unwrap()
                        .to_string();
                    self.pos = end;
                    out.push((start, Tok::Ident(name)));
                }
                other => {
                    return Err(ParseError {
                        position: start,
                        kind: ParseErrorKind::UnexpectedChar(other),
                    })
                }
            }
        }
        Ok(out)
    }

    fn lex_number(&mut self, start: usize) -> Result<Tok, ParseError> {
        let mut end = self.pos;
        while end < self.src.len() && matches!(self.src[end] as char, '0'..='9' | '.') {
            end += 1;
        }
        // Optional exponent part: e or E, optional sign, digits.
        if end < self.src.len() && matches!(self.src[end] as char, 'e' | 'E') {
            let mut probe = end + 1;
            if probe < self.src.len() && matches!(self.src[probe] as char, '+' | '-') {
                probe += 1;
            }
            if probe < self.src.len() && (self.src[probe] as char).is_ascii_digit() {
                end = probe;
                while end < self.src.len() && (self.src[end] as char).is_ascii_digit() {
                    end += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..end]).unwrap();
        self.pos = end;
        text.parse::<f64>().map(Tok::Num).map_err(|_| ParseError {
            position: start,
            kind: ParseErrorKind::BadNumber(text.to_string()),
        })
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    idx: usize,
    dim: usize,
    src_len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks
            .get(self.idx)
            .map(|(p, _)| *p)
            .unwrap_or(self.src_len)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.idx).map(|(_, t)| t.clone());
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        let pos = self.pos();
        match self.next() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(ParseError {
                position: pos,
                kind: ParseErrorKind::UnexpectedToken(describe(&t)),
            }),
            None => Err(ParseError {
                position: pos,
                kind: ParseErrorKind::UnexpectedEnd,
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.idx += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.idx += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.idx += 1;
                    let rhs = self.unary()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Slash) => {
                    self.idx += 1;
                    let rhs = self.unary()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.idx += 1;
            let inner = self.unary()?;
            // Fold a leading minus into the literal so print/parse round-trips
            // are structural.
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::Neg(Box::new(other)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Tok::Caret)) {
            self.idx += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => self.ident(pos, name),
            Some(t) => Err(ParseError {
                position: pos,
                kind: ParseErrorKind::UnexpectedToken(describe(&t)),
            }),
            None => Err(ParseError {
                position: pos,
                kind: ParseErrorKind::UnexpectedEnd,
            }),
        }
    }

    fn ident(&mut self, pos: usize, name: String) -> Result<Expr, ParseError> {
        match name.as_str() {
            "r2" => return Ok(Expr::R2),
            "theta" => {
                if self.dim != 2 {
                    return Err(ParseError {
                        position: pos,
                        kind: ParseErrorKind::ThetaRequiresDim2,
                    });
                }
                return Ok(Expr::Theta);
            }
            "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
            _ => {}
        }
        if let Some(rest) = name.strip_prefix('x') {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                let i: usize = rest.parse().map_err(|_| ParseError {
                    position: pos,
                    kind: ParseErrorKind::UnknownIdentifier(name.clone()),
                })?;
                if i == 0 || i > self.dim {
                    return Err(ParseError {
                        position: pos,
                        kind: ParseErrorKind::VariableOutOfRange {
                            name,
                            dim: self.dim,
                        },
                    });
                }
                return Ok(Expr::Var(i - 1));
            }
        }
        let arity = match name.as_str() {
            "exp" | "log" | "sin" | "cos" | "sqrt" => 1,
            "atan2" => 2,
            _ => {
                return Err(ParseError {
                    position: pos,
                    kind: ParseErrorKind::UnknownIdentifier(name),
                })
            }
        };
        self.expect(Tok::LParen)?;
        let mut args = vec![self.expr()?];
        while matches!(self.peek(), Some(Tok::Comma)) {
            self.idx += 1;
            args.push(self.expr()?);
        }
        self.expect(Tok::RParen)?;
        if args.len() != arity {
            return Err(ParseError {
                position: pos,
                kind: ParseErrorKind::Arity {
                    name,
                    expected: arity,
                    got: args.len(),
                },
            });
        }
        let mut it = args.into_iter();
        Ok(match name.as_str() {
            "exp" => Expr::Exp(Box::new(it.next().unwrap())),
            "log" => Expr::Log(Box::new(it.next().unwrap())),
            "sin" => Expr::Sin(Box::new(it.next().unwrap())),
            "cos" => Expr::Cos(Box::new(it.next().unwrap())),
            "sqrt" => Expr::Sqrt(Box::new(it.next().unwrap())),
            "atan2" => {
                let a = it.next().unwrap();
                let b = it.next().unwrap();
                Expr::Atan2(Box::new(a), Box::new(b))
            }
            _ => unreachable!(),
        })
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("{v}"),
        Tok::Ident(n) => n.clone(),
        Tok::Plus => "+".into(),
        Tok::Minus => "-".into(),
        Tok::Star => "*".into(),
        Tok::Slash => "/".into(),
        Tok::Caret => "^".into(),
        Tok::LParen => "(".into(),
        Tok::RParen => ")".into(),
        Tok::Comma => ",".into(),
    }
}

/// Parse a potential or test-function expression in dimension `dim`.
pub fn parse_expr(src: &str, dim: usize) -> Result<Expr, ParseError> {
    let toks = Lexer::new(src).tokens()?;
    let mut p = Parser {
        toks,
        idx: 0,
        dim,
        src_len: src.len(),
    };
    let e = p.expr()?;
    if p.idx < p.toks.len() {
        let (pos, t) = &p.toks[p.idx];
        return Err(ParseError {
            position: *pos,
            kind: ParseErrorKind::UnexpectedToken(describe(t)),
        });
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_gaussian_potential() {
        let e = parse_expr("x1^2", 1).unwrap();
        assert_eq!(e.eval(&[2.0]), 4.0);
    }

    #[test]
    fn parses_cauchy_style_potential() {
        let e = parse_expr("(1+2)*log(1+x1^2)", 1).unwrap();
        let v = e.eval(&[1.0]);
        assert!((v - 3.0 * (2.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn parses_polar_potential() {
        let e = parse_expr("r2*(2+sin(4*theta))", 2).unwrap();
        let v = e.eval(&[1.0, 0.0]);
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_identifier_has_position() {
        let err = parse_expr("x1 + foo(2)", 1).unwrap_err();
        assert_eq!(err.position, 5);
        assert!(matches!(err.kind, ParseErrorKind::UnknownIdentifier(ref n) if n == "foo"));
    }

    #[test]
    fn variable_out_of_range() {
        let err = parse_expr("x3+1", 2).unwrap_err();
        assert!(matches!(
            err.kind,
            ParseErrorKind::VariableOutOfRange { .. }
        ));
    }

    #[test]
    fn theta_needs_dim_two() {
        let err = parse_expr("theta", 1).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::ThetaRequiresDim2));
    }

    #[test]
    fn arity_checked() {
        let err = parse_expr("atan2(x1)", 1).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::Arity { .. }));
    }

    #[test]
    fn power_is_right_associative() {
        let e = parse_expr("2^3^2", 1).unwrap();
        assert_eq!(e.eval(&[0.0]), 512.0);
    }

    #[test]
    fn unary_minus_binds_below_power() {
        let e = parse_expr("-x1^2", 1).unwrap();
        assert_eq!(e.eval(&[3.0]), -9.0);
    }

    #[test]
    fn trailing_garbage_rejected() {
        let err = parse_expr("x1 x1", 1).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::UnexpectedToken(_)));
    }
}
