//! Recursive-descent parser for the expression grammar:
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = ("-" | "+") unary | power ;
//! power   = primary [ "^" unary ] ;
//! primary = number | ident | call | "(" expr ")" ;
//! call    = ident "(" expr { "," expr } ")" ;
//! number  = digit { digit } [ "." { digit } ] [ ("e" | "E") [ "+" | "-" ] digit { digit } ] ;
//! ident   = ( letter | "_" ) { letter | digit | "_" } ;
//! ```
//!
//! Built-in calls: `sin cos tan arctan exp ln sqrt atan2`, plus
//! `diff(f(args), x, ...)` for declared opaque functions.

use std::collections::BTreeSet;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

use super::{add, div, mul, neg, pow, Expr, Func};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown function `{name}` at offset {pos}")]
    UnknownFunction { pos: usize, name: String },
}

impl ParseError {
    pub fn position(&self) -> usize {
        match self {
            ParseError::Syntax { pos, .. } | ParseError::UnknownFunction { pos, .. } => *pos,
        }
    }
}

/// Names that may be used as opaque (unknown) function symbols.
#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    pub opaque: BTreeSet<String>,
}

impl ParseOptions {
    pub fn with_opaque<I: IntoIterator<Item = S>, S: Into<String>>(names: I) -> Self {
        ParseOptions {
            opaque: names.into_iter().map(Into::into).collect(),
        }
    }
}

pub fn parse(src: &str) -> Result<Expr, ParseError> {
    parse_with(src, &ParseOptions::default())
}

pub fn parse_with(src: &str, opts: &ParseOptions) -> Result<Expr, ParseError> {
    let tokens = lex(src)?;
    let mut p = Parser {
        tokens,
        idx: 0,
        opts,
        end: src.len(),
    };
    let e = p.expr()?;
    if let Some(t) = p.peek() {
        return Err(ParseError::Syntax {
            pos: t.pos,
            msg: format!("unexpected {}", t.kind.describe()),
        });
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(BigRational),
    Ident(String),
    Op(char),
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(n) => format!("number `{}`", n),
            Tok::Ident(s) => format!("identifier `{}`", s),
            Tok::Op(c) => format!("`{}`", c),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: Tok,
    pos: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit()) {
            let start = i;
            let mut int_part = String::new();
            let mut frac_part = String::new();
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                int_part.push(bytes[i] as char);
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    frac_part.push(bytes[i] as char);
                    i += 1;
                }
            }
            let mut exp: i64 = 0;
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                let mut sign = 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    if bytes[j] == b'-' {
                        sign = -1;
                    }
                    j += 1;
                }
                let ds = j;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                if j > ds {
                    exp = sign * src[ds..j].parse::<i64>().map_err(|_| ParseError::Syntax {
                        pos: i,
                        msg: "exponent out of range".into(),
                    })?;
                    i = j;
                }
            }
            let digits = format!("{}{}", int_part, frac_part);
            let mantissa: BigInt = if digits.is_empty() {
                BigInt::zero()
            } else {
                digits.parse().map_err(|_| ParseError::Syntax {
                    pos: start,
                    msg: "malformed number".into(),
                })?
            };
            let scale = exp - frac_part.len() as i64;
            if scale.abs() > 400 {
                return Err(ParseError::Syntax {
                    pos: start,
                    msg: "number exponent out of range".into(),
                });
            }
            let ten = BigRational::from_integer(BigInt::from(10));
            let factor = if scale >= 0 {
                num_traits::pow(ten, scale as usize)
            } else {
                num_traits::pow(ten.recip(), (-scale) as usize)
            };
            out.push(Token {
                kind: Tok::Num(BigRational::from_integer(mantissa) * factor),
                pos: start,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: Tok::Ident(src[start..i].to_string()),
                pos: start,
            });
        } else if "+-*/^(),".contains(c) {
            out.push(Token { kind: Tok::Op(c), pos: i });
            i += 1;
        } else {
            return Err(ParseError::Syntax {
                pos: i,
                msg: format!("unexpected character `{}`", c),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    idx: usize,
    opts: &'a ParseOptions,
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.idx)
    }

    fn peek_op(&self, c: char) -> bool {
        matches!(self.peek(), Some(Token { kind: Tok::Op(o), .. }) if *o == c)
    }

    fn pos(&self) -> usize {
        self.peek().map(|t| t.pos).unwrap_or(self.end)
    }

    fn expect_op(&mut self, c: char) -> Result<(), ParseError> {
        if self.peek_op(c) {
            self.idx += 1;
            Ok(())
        } else {
            Err(self.unexpected(&format!("expected `{}`", c)))
        }
    }

    fn unexpected(&self, what: &str) -> ParseError {
        match self.peek() {
            Some(t) => ParseError::Syntax {
                pos: t.pos,
                msg: format!("{}, found {}", what, t.kind.describe()),
            },
            None => ParseError::Syntax {
                pos: self.end,
                msg: format!("{}, found end of input", what),
            },
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.term()?];
        loop {
            if self.peek_op('+') {
                self.idx += 1;
                terms.push(self.term()?);
            } else if self.peek_op('-') {
                self.idx += 1;
                terms.push(neg(self.term()?));
            } else {
                break;
            }
        }
        Ok(add(terms))
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            if self.peek_op('*') {
                self.idx += 1;
                let rhs = self.unary()?;
                acc = mul(vec![acc, rhs]);
            } else if self.peek_op('/') {
                self.idx += 1;
                let rhs = self.unary()?;
                acc = div(acc, rhs);
            } else {
                break;
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek_op('-') {
            self.idx += 1;
            return Ok(neg(self.unary()?));
        }
        if self.peek_op('+') {
            self.idx += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.peek_op('^') {
            self.idx += 1;
            let ex = self.unary()?;
            return Ok(pow(base, ex));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let tok = match self.peek() {
            Some(t) => t.clone(),
            None => return Err(self.unexpected("expected operand")),
        };
        match tok.kind {
            Tok::Num(n) => {
                self.idx += 1;
                Ok(Expr::Num(n))
            }
            Tok::Op('(') => {
                self.idx += 1;
                let e = self.expr()?;
                self.expect_op(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.idx += 1;
                if self.peek_op('(') {
                    self.call(&name, tok.pos)
                } else {
                    Ok(Expr::Var(Arc::from(name.as_str())))
                }
            }
            _ => Err(self.unexpected("expected operand")),
        }
    }

    fn args(&mut self) -> Result<Vec<Expr>, ParseError> {
        self.expect_op('(')?;
        let mut args = vec![self.expr()?];
        while self.peek_op(',') {
            self.idx += 1;
            args.push(self.expr()?);
        }
        self.expect_op(')')?;
        Ok(args)
    }

    fn arity(&self, name: &str, pos: usize, args: &[Expr], n: usize) -> Result<(), ParseError> {
        if args.len() != n {
            return Err(ParseError::Syntax {
                pos,
                msg: format!("`{}` takes {} argument(s), got {}", name, n, args.len()),
            });
        }
        Ok(())
    }

    fn call(&mut self, name: &str, pos: usize) -> Result<Expr, ParseError> {
        if self.opts.opaque.contains(name) {
            return self.opaque_call(name, pos);
        }
        if name == "diff" {
            return self.diff_call(pos);
        }
        let known = Func::from_name(name).is_some() || name == "sqrt" || name == "atan2";
        if !known {
            return Err(ParseError::UnknownFunction {
                pos,
                name: name.to_string(),
            });
        }
        let args = self.args()?;
        if name == "atan2" {
            self.arity(name, pos, &args, 2)?;
            let mut it = args.into_iter();
            let y = it.next().unwrap();
            let x = it.next().unwrap();
            return Ok(Expr::atan2(y, x));
        }
        self.arity(name, pos, &args, 1)?;
        let a = args.into_iter().next().unwrap();
        if name == "sqrt" {
            return Ok(pow(a, Expr::Num(BigRational::new(BigInt::one(), BigInt::from(2)))));
        }
        Ok(Expr::func(Func::from_name(name).unwrap(), a))
    }

    fn ident_list(&mut self) -> Result<Vec<Arc<str>>, ParseError> {
        let mut out = Vec::new();
        loop {
            match self.peek() {
                Some(Token {
                    kind: Tok::Ident(s), ..
                }) => {
                    out.push(Arc::from(s.as_str()));
                    self.idx += 1;
                }
                _ => return Err(self.unexpected("expected identifier")),
            }
            if self.peek_op(',') {
                self.idx += 1;
            } else {
                return Ok(out);
            }
        }
    }

    fn opaque_call(&mut self, name: &str, _pos: usize) -> Result<Expr, ParseError> {
        self.expect_op('(')?;
        let args = self.ident_list()?;
        self.expect_op(')')?;
        Ok(Expr::Opaque {
            name: Arc::from(name),
            args,
            partials: Vec::new(),
        })
    }

    fn diff_call(&mut self, pos: usize) -> Result<Expr, ParseError> {
        self.expect_op('(')?;
        let fpos = self.pos();
        let fname = match self.peek() {
            Some(Token {
                kind: Tok::Ident(s), ..
            }) if self.opts.opaque.contains(s) => s.clone(),
            _ => {
                return Err(ParseError::Syntax {
                    pos: fpos,
                    msg: "diff expects a declared opaque function as first argument".into(),
                })
            }
        };
        self.idx += 1;
        let mut f = self.opaque_call(&fname, fpos)?;
        self.expect_op(',')?;
        let vars = self.ident_list()?;
        self.expect_op(')')?;
        if let Expr::Opaque { args, partials, .. } = &mut f {
            for v in vars {
                if !args.contains(&v) {
                    return Err(ParseError::Syntax {
                        pos,
                        msg: format!("`{}` is not an argument of `{}`", v, fname),
                    });
                }
                partials.push(v);
            }
            partials.sort();
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_cases() {
        let e = parse("v*cos(theta)").unwrap();
        assert_eq!(e, Expr::Mul(vec![Expr::var("v"), Expr::cos(Expr::var("theta"))]));
        let h = parse("nu_m*b/(b + K_S + K_I*b^2)").unwrap();
        assert_eq!(h.to_string(), "nu_m*b/(b + K_S + K_I*b^2)");
        assert_eq!(parse("-x^2").unwrap().to_string(), "-x^2");
        assert_eq!(parse("2^-1").unwrap(), Expr::rational(1, 2));
        assert_eq!(parse("0.25e1").unwrap(), Expr::rational(5, 2));
    }

    #[test]
    fn malformed_input_reports_offset() {
        let err = parse("x +* y").unwrap_err();
        assert_eq!(err, ParseError::Syntax { pos: 3, msg: "expected operand, found `*`".into() });
        assert_eq!(parse("(x").unwrap_err().position(), 2);
        assert!(matches!(parse("foo(x)"), Err(ParseError::UnknownFunction { pos: 0, .. })));
    }

    #[test]
    fn opaque_functions_and_partials() {
        let opts = ParseOptions::with_opaque(["eta"]);
        let e = parse_with("diff(eta(t, x), x, t) + eta(t, x)", &opts).unwrap();
        assert_eq!(e.to_string(), "diff(eta(t, x), t, x) + eta(t, x)");
        assert!(parse_with("diff(eta(t), x)", &opts).is_err());
    }
}
