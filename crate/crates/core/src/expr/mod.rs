//! Symbolic expressions over named variables.
//!
//! Trees are immutable and built through the smart constructors [`add`],
//! [`mul`] and [`pow`], which flatten nested sums/products and fold numeric
//! constants. The canonical form used for zero testing and display is
//! produced by [`simplify`], which goes through a rational-function
//! representation over algebraically independent atoms (see `poly`).

mod canon;
mod diff;
mod eval;
mod parse;
mod poly;
mod print;
mod zero;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub use canon::{numer_denom, simplify, simplify_within, SimplifyBudget};
pub use diff::{diff_raw, differentiate};
pub use eval::{eval, eval_with, Compiled, EvalError};
pub use parse::{parse, parse_with, ParseError, ParseOptions};
pub use zero::{is_zero, is_zero_with, ZeroPath, ZeroTest, ZeroVerdict};

/// Exact rational constant.
pub type Rational = BigRational;

/// Elementary functions of one argument.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Arctan,
    Exp,
    Ln,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Arctan => "arctan",
            Func::Exp => "exp",
            Func::Ln => "ln",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "arctan" | "atan" => Func::Arctan,
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            _ => return None,
        })
    }
}

/// Expression tree node.
///
/// `Opaque` stands for an unknown function of a fixed list of coordinates
/// (used for ansatz coefficients); `partials` lists the formal partial
/// derivatives applied to it, sorted.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    Num(Rational),
    Var(Arc<str>),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Func(Func, Box<Expr>),
    Atan2(Box<Expr>, Box<Expr>),
    Opaque {
        name: Arc<str>,
        args: Vec<Arc<str>>,
        partials: Vec<Arc<str>>,
    },
}

impl Expr {
    pub fn int(v: i64) -> Expr {
        Expr::Num(BigRational::from_integer(BigInt::from(v)))
    }

    pub fn rational(n: i64, d: i64) -> Expr {
        Expr::Num(BigRational::new(BigInt::from(n), BigInt::from(d)))
    }

    pub fn zero() -> Expr {
        Expr::int(0)
    }

    pub fn one() -> Expr {
        Expr::int(1)
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(Arc::from(name))
    }

    /// Unknown function `name(args...)`.
    pub fn opaque(name: &str, args: &[&str]) -> Expr {
        Expr::Opaque {
            name: Arc::from(name),
            args: args.iter().map(|a| Arc::from(*a)).collect(),
            partials: Vec::new(),
        }
    }

    /// Closest exact rational to `v` with a bounded denominator.
    pub fn from_f64(v: f64) -> Expr {
        Expr::Num(rational_from_f64(v))
    }

    pub fn func(f: Func, arg: Expr) -> Expr {
        Expr::Func(f, Box::new(arg))
    }

    pub fn sin(arg: Expr) -> Expr {
        Expr::func(Func::Sin, arg)
    }

    pub fn cos(arg: Expr) -> Expr {
        Expr::func(Func::Cos, arg)
    }

    pub fn tan(arg: Expr) -> Expr {
        Expr::func(Func::Tan, arg)
    }

    pub fn exp(arg: Expr) -> Expr {
        Expr::func(Func::Exp, arg)
    }

    pub fn ln(arg: Expr) -> Expr {
        Expr::func(Func::Ln, arg)
    }

    pub fn arctan(arg: Expr) -> Expr {
        Expr::func(Func::Arctan, arg)
    }

    pub fn atan2(y: Expr, x: Expr) -> Expr {
        Expr::Atan2(Box::new(y), Box::new(x))
    }

    pub fn sqrt(arg: Expr) -> Expr {
        pow(arg, Expr::rational(1, 2))
    }

    pub fn as_num(&self) -> Option<&Rational> {
        match self {
            Expr::Num(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Expr::Var(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_zero_literal(&self) -> bool {
        matches!(self, Expr::Num(r) if r.is_zero())
    }

    pub fn is_one_literal(&self) -> bool {
        matches!(self, Expr::Num(r) if r.is_one())
    }

    /// Names of all variables occurring in the tree, including the argument
    /// lists of opaque functions.
    pub fn free_symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                out.insert(v.to_string());
            }
            Expr::Add(ts) | Expr::Mul(ts) => ts.iter().for_each(|t| t.collect_symbols(out)),
            Expr::Pow(b, e) | Expr::Atan2(b, e) => {
                b.collect_symbols(out);
                e.collect_symbols(out);
            }
            Expr::Func(_, a) => a.collect_symbols(out),
            Expr::Opaque { args, .. } => {
                out.extend(args.iter().map(|a| a.to_string()));
            }
        }
    }

    pub fn contains_var(&self, name: &str) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => &**v == name,
            Expr::Add(ts) | Expr::Mul(ts) => ts.iter().any(|t| t.contains_var(name)),
            Expr::Pow(b, e) | Expr::Atan2(b, e) => b.contains_var(name) || e.contains_var(name),
            Expr::Func(_, a) => a.contains_var(name),
            Expr::Opaque { args, .. } => args.iter().any(|a| &**a == name),
        }
    }

    /// True if any opaque function occurs in the tree.
    pub fn has_opaque(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Var(_) => false,
            Expr::Add(ts) | Expr::Mul(ts) => ts.iter().any(Expr::has_opaque),
            Expr::Pow(b, e) | Expr::Atan2(b, e) => b.has_opaque() || e.has_opaque(),
            Expr::Func(_, a) => a.has_opaque(),
            Expr::Opaque { .. } => true,
        }
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        1 + match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Opaque { .. } => 0,
            Expr::Add(ts) | Expr::Mul(ts) => ts.iter().map(Expr::size).sum(),
            Expr::Pow(b, e) | Expr::Atan2(b, e) => b.size() + e.size(),
            Expr::Func(_, a) => a.size(),
        }
    }

    /// Simultaneous substitution of variables. Opaque functions are left
    /// untouched.
    pub fn subs(&self, map: &BTreeMap<String, Expr>) -> Expr {
        if map.is_empty() {
            return self.clone();
        }
        match self {
            Expr::Num(_) | Expr::Opaque { .. } => self.clone(),
            Expr::Var(v) => map.get(&**v).cloned().unwrap_or_else(|| self.clone()),
            Expr::Add(ts) => add(ts.iter().map(|t| t.subs(map)).collect()),
            Expr::Mul(ts) => mul(ts.iter().map(|t| t.subs(map)).collect()),
            Expr::Pow(b, e) => pow(b.subs(map), e.subs(map)),
            Expr::Func(f, a) => Expr::func(*f, a.subs(map)),
            Expr::Atan2(y, x) => Expr::atan2(y.subs(map), x.subs(map)),
        }
    }

    /// Replaces every occurrence of the subtree `target`.
    pub fn replace(&self, target: &Expr, with: &Expr) -> Expr {
        if self == target {
            return with.clone();
        }
        match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Opaque { .. } => self.clone(),
            Expr::Add(ts) => add(ts.iter().map(|t| t.replace(target, with)).collect()),
            Expr::Mul(ts) => mul(ts.iter().map(|t| t.replace(target, with)).collect()),
            Expr::Pow(b, e) => pow(b.replace(target, with), e.replace(target, with)),
            Expr::Func(f, a) => Expr::func(*f, a.replace(target, with)),
            Expr::Atan2(y, x) => Expr::atan2(y.replace(target, with), x.replace(target, with)),
        }
    }

    pub fn subs_one(&self, name: &str, value: &Expr) -> Expr {
        let mut m = BTreeMap::new();
        m.insert(name.to_string(), value.clone());
        self.subs(&m)
    }

    /// Renames variables (also inside opaque argument lists).
    pub fn rename(&self, map: &BTreeMap<String, String>) -> Expr {
        match self {
            Expr::Num(_) => self.clone(),
            Expr::Var(v) => match map.get(&**v) {
                Some(n) => Expr::var(n),
                None => self.clone(),
            },
            Expr::Add(ts) => add(ts.iter().map(|t| t.rename(map)).collect()),
            Expr::Mul(ts) => mul(ts.iter().map(|t| t.rename(map)).collect()),
            Expr::Pow(b, e) => pow(b.rename(map), e.rename(map)),
            Expr::Func(f, a) => Expr::func(*f, a.rename(map)),
            Expr::Atan2(y, x) => Expr::atan2(y.rename(map), x.rename(map)),
            Expr::Opaque {
                name,
                args,
                partials,
            } => {
                let r = |a: &Arc<str>| -> Arc<str> {
                    map.get(&**a).map(|n| Arc::from(n.as_str())).unwrap_or_else(|| a.clone())
                };
                let mut partials: Vec<Arc<str>> = partials.iter().map(r).collect();
                partials.sort();
                Expr::Opaque {
                    name: name.clone(),
                    args: args.iter().map(r).collect(),
                    partials,
                }
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        print::write_expr(f, self)
    }
}

impl From<i64> for Expr {
    fn from(v: i64) -> Expr {
        Expr::int(v)
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        add(vec![self, rhs])
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        add(vec![self, neg(rhs)])
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        mul(vec![self, rhs])
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        div(self, rhs)
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        neg(self)
    }
}

/// Sum with flattening and numeric folding. The folded constant is placed
/// last.
pub fn add(terms: Vec<Expr>) -> Expr {
    let mut out = Vec::with_capacity(terms.len());
    let mut acc = BigRational::zero();
    let mut stack: Vec<Expr> = terms.into_iter().rev().collect();
    while let Some(t) = stack.pop() {
        match t {
            Expr::Num(r) => acc += r,
            Expr::Add(inner) => stack.extend(inner.into_iter().rev()),
            other => out.push(other),
        }
    }
    if !acc.is_zero() {
        out.push(Expr::Num(acc));
    }
    match out.len() {
        0 => Expr::zero(),
        1 => out.pop().unwrap(),
        _ => Expr::Add(out),
    }
}

/// Product with flattening and numeric folding. The folded constant is
/// placed first; a zero constant annihilates the product.
pub fn mul(factors: Vec<Expr>) -> Expr {
    let mut out = Vec::with_capacity(factors.len());
    let mut acc = BigRational::one();
    let mut stack: Vec<Expr> = factors.into_iter().rev().collect();
    while let Some(f) = stack.pop() {
        match f {
            Expr::Num(r) => acc *= r,
            Expr::Mul(inner) => stack.extend(inner.into_iter().rev()),
            other => out.push(other),
        }
    }
    if acc.is_zero() {
        return Expr::zero();
    }
    if out.is_empty() {
        return Expr::Num(acc);
    }
    if !acc.is_one() {
        // a constant times a sum stays a product; the printer parenthesizes
        out.insert(0, Expr::Num(acc));
    }
    if out.len() == 1 {
        out.pop().unwrap()
    } else {
        Expr::Mul(out)
    }
}

/// Power with trivial-exponent folding and `(b^m)^n = b^(m n)` for integer
/// `n`.
pub fn pow(base: Expr, exponent: Expr) -> Expr {
    if let Expr::Num(e) = &exponent {
        if e.is_zero() {
            return Expr::one();
        }
        if e.is_one() {
            return base;
        }
        if e.is_integer() {
            if let Expr::Num(b) = &base {
                if let Some(k) = e.to_integer().to_i32() {
                    if b.is_zero() && k < 0 {
                        // keep the singular form; evaluation reports it
                        return Expr::Pow(Box::new(base), Box::new(exponent));
                    }
                    return Expr::Num(rational_powi(b, k));
                }
            }
            if let Expr::Pow(inner_b, inner_e) = base {
                return pow(*inner_b, mul(vec![*inner_e, exponent]));
            }
        }
    }
    if let Expr::Num(b) = &base {
        if b.is_one() {
            return Expr::one();
        }
    }
    Expr::Pow(Box::new(base), Box::new(exponent))
}

pub fn neg(e: Expr) -> Expr {
    mul(vec![Expr::int(-1), e])
}

pub fn div(a: Expr, b: Expr) -> Expr {
    mul(vec![a, pow(b, Expr::int(-1))])
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    add(vec![a, neg(b)])
}

pub(crate) fn rational_powi(b: &Rational, k: i32) -> Rational {
    if k >= 0 {
        num_traits::pow(b.clone(), k as usize)
    } else {
        num_traits::pow(b.recip(), (-k) as usize)
    }
}

/// Continued-fraction approximation with denominator at most 10^9; exact for
/// terminating decimals of moderate length.
pub fn rational_from_f64(v: f64) -> Rational {
    if v == v.trunc() && v.abs() < 1e15 {
        return BigRational::from_integer(BigInt::from(v as i64));
    }
    let max_den: i64 = 1_000_000_000;
    let neg = v < 0.0;
    let mut x = v.abs();
    let (mut p0, mut q0, mut p1, mut q1) = (0i64, 1i64, 1i64, 0i64);
    for _ in 0..64 {
        let a = x.floor();
        if a > 1e15 {
            break;
        }
        let a = a as i64;
        let p2 = a.saturating_mul(p1).saturating_add(p0);
        let q2 = a.saturating_mul(q1).saturating_add(q0);
        if q2 > max_den {
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        let frac = x - a as f64;
        if frac.abs() < 1e-15 {
            break;
        }
        x = 1.0 / frac;
    }
    let r = BigRational::new(BigInt::from(p1), BigInt::from(q1.max(1)));
    if neg {
        -r
    } else {
        r
    }
}

pub(crate) fn rational_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

pub(crate) fn is_negative_num(e: &Expr) -> bool {
    match e {
        Expr::Num(r) => r.is_negative(),
        Expr::Mul(fs) => matches!(fs.first(), Some(Expr::Num(r)) if r.is_negative()),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_flatten_and_fold() {
        let x = Expr::var("x");
        let e = add(vec![Expr::int(2), add(vec![x.clone(), Expr::int(3)])]);
        assert_eq!(e, Expr::Add(vec![x.clone(), Expr::int(5)]));
        let m = mul(vec![Expr::int(2), mul(vec![x.clone(), Expr::int(3)])]);
        assert_eq!(m, Expr::Mul(vec![Expr::int(6), x.clone()]));
        assert_eq!(mul(vec![x.clone(), Expr::zero()]), Expr::zero());
        assert_eq!(pow(pow(x.clone(), Expr::int(2)), Expr::int(-1)), pow(x, Expr::int(-2)));
    }

    #[test]
    fn decimal_to_rational() {
        assert_eq!(rational_from_f64(9.81), BigRational::new(981.into(), 100.into()));
        assert_eq!(rational_from_f64(-0.5), BigRational::new((-1).into(), 2.into()));
    }
}
