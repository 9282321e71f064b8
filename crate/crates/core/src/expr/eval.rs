//! Numeric evaluation in IEEE doubles.

use std::collections::HashMap;

use num_traits::{Signed, ToPrimitive};
use thiserror::Error;

use super::{rational_to_f64, Expr, Func};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound symbol `{0}`")]
    Unbound(String),
    #[error("division by zero in `{0}`")]
    DivisionByZero(Expr),
    #[error("domain error in `{expr}`: {what}")]
    Domain { what: &'static str, expr: Expr },
}

/// Evaluates `e` with variable values taken from `env`.
pub fn eval(e: &Expr, env: &HashMap<String, f64>) -> Result<f64, EvalError> {
    eval_with(e, &|name| env.get(name).copied())
}

/// Evaluates `e` with a lookup closure for variable values.
pub fn eval_with(e: &Expr, env: &dyn Fn(&str) -> Option<f64>) -> Result<f64, EvalError> {
    let v = match e {
        Expr::Num(r) => rational_to_f64(r),
        Expr::Var(name) => env(name).ok_or_else(|| EvalError::Unbound(name.to_string()))?,
        Expr::Opaque { name, .. } => return Err(EvalError::Unbound(name.to_string())),
        Expr::Add(ts) => {
            let mut s = 0.0;
            for t in ts {
                s += eval_with(t, env)?;
            }
            s
        }
        Expr::Mul(fs) => {
            let mut p = 1.0;
            for f in fs {
                p *= eval_with(f, env)?;
            }
            p
        }
        Expr::Pow(b, ex) => {
            let bv = eval_with(b, env)?;
            match &**ex {
                Expr::Num(k) if k.is_integer() => {
                    let k = k.to_integer().to_i32().unwrap_or(i32::MAX);
                    if bv == 0.0 && k < 0 {
                        return Err(EvalError::DivisionByZero(e.clone()));
                    }
                    bv.powi(k)
                }
                _ => {
                    let ev = eval_with(ex, env)?;
                    if bv < 0.0 {
                        return Err(EvalError::Domain {
                            what: "fractional power of a negative number",
                            expr: e.clone(),
                        });
                    }
                    if bv == 0.0 && ev < 0.0 {
                        return Err(EvalError::DivisionByZero(e.clone()));
                    }
                    if let Expr::Num(k) = &**ex {
                        if *k.denom() == 2.into() && !k.is_negative() {
                            let s = bv.sqrt();
                            return Ok(s.powi(k.numer().to_i32().unwrap_or(i32::MAX)));
                        }
                    }
                    bv.powf(ev)
                }
            }
        }
        Expr::Func(f, a) => {
            let x = eval_with(a, env)?;
            match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Tan => x.tan(),
                Func::Arctan => x.atan(),
                Func::Exp => x.exp(),
                Func::Ln => {
                    if x <= 0.0 {
                        return Err(EvalError::Domain {
                            what: "logarithm of a nonpositive number",
                            expr: e.clone(),
                        });
                    }
                    x.ln()
                }
            }
        }
        Expr::Atan2(y, x) => eval_with(y, env)?.atan2(eval_with(x, env)?),
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::Domain {
            what: "non-finite value",
            expr: e.clone(),
        })
    }
}

#[derive(Debug, Clone)]
enum Op {
    Const(f64),
    Load(usize),
    Add(Vec<usize>),
    Mul(Vec<usize>),
    PowI(usize, i32),
    Sqrt(usize),
    Pow(usize, usize),
    Func(Func, usize),
    Atan2(usize, usize),
}

/// Expression flattened into a straight-line program with shared
/// subexpressions, for repeated evaluation in inner loops. Domain
/// violations surface as non-finite results.
#[derive(Debug, Clone)]
pub struct Compiled {
    ops: Vec<Op>,
}

impl Compiled {
    /// Compiles `e`; every variable must appear in `slots`.
    pub fn new(e: &Expr, slots: &[String]) -> Result<Compiled, EvalError> {
        let index: HashMap<&str, usize> = slots.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut b = Builder {
            index,
            ops: Vec::new(),
            seen: HashMap::new(),
        };
        b.emit(e)?;
        Ok(Compiled { ops: b.ops })
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn eval(&self, vals: &[f64]) -> f64 {
        let mut r: Vec<f64> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let v = match op {
                Op::Const(c) => *c,
                Op::Load(i) => vals[*i],
                Op::Add(a) => a.iter().map(|k| r[*k]).sum(),
                Op::Mul(a) => a.iter().map(|k| r[*k]).product(),
                Op::PowI(b, k) => r[*b].powi(*k),
                Op::Sqrt(b) => r[*b].sqrt(),
                Op::Pow(b, e) => {
                    if r[*b] < 0.0 {
                        f64::NAN
                    } else {
                        r[*b].powf(r[*e])
                    }
                }
                Op::Func(f, a) => {
                    let x = r[*a];
                    match f {
                        Func::Sin => x.sin(),
                        Func::Cos => x.cos(),
                        Func::Tan => x.tan(),
                        Func::Arctan => x.atan(),
                        Func::Exp => x.exp(),
                        Func::Ln => {
                            if x <= 0.0 {
                                f64::NAN
                            } else {
                                x.ln()
                            }
                        }
                    }
                }
                Op::Atan2(y, x) => r[*y].atan2(r[*x]),
            };
            r.push(v);
        }
        r.pop().unwrap_or(f64::NAN)
    }
}

struct Builder<'a, 'e> {
    index: HashMap<&'a str, usize>,
    ops: Vec<Op>,
    seen: HashMap<&'e Expr, usize>,
}

impl<'a, 'e> Builder<'a, 'e> {
    fn push(&mut self, op: Op) -> usize {
        self.ops.push(op);
        self.ops.len() - 1
    }

    fn emit(&mut self, e: &'e Expr) -> Result<usize, EvalError> {
        if let Some(&k) = self.seen.get(e) {
            return Ok(k);
        }
        let k = match e {
            Expr::Num(r) => self.push(Op::Const(rational_to_f64(r))),
            Expr::Var(v) => {
                let i = *self.index.get(&**v).ok_or_else(|| EvalError::Unbound(v.to_string()))?;
                self.push(Op::Load(i))
            }
            Expr::Opaque { name, .. } => return Err(EvalError::Unbound(name.to_string())),
            Expr::Add(ts) | Expr::Mul(ts) => {
                let args = ts.iter().map(|t| self.emit(t)).collect::<Result<Vec<_>, _>>()?;
                self.push(if matches!(e, Expr::Add(_)) { Op::Add(args) } else { Op::Mul(args) })
            }
            Expr::Pow(b, ex) => {
                let bi = self.emit(b)?;
                match &**ex {
                    Expr::Num(k) if k.is_integer() => self.push(Op::PowI(bi, k.to_integer().to_i32().unwrap_or(i32::MAX))),
                    Expr::Num(k) if *k.denom() == 2.into() && !k.is_negative() => {
                        let s = self.push(Op::Sqrt(bi));
                        self.push(Op::PowI(s, k.numer().to_i32().unwrap_or(i32::MAX)))
                    }
                    _ => {
                        let ei = self.emit(ex)?;
                        self.push(Op::Pow(bi, ei))
                    }
                }
            }
            Expr::Func(f, a) => {
                let ai = self.emit(a)?;
                self.push(Op::Func(*f, ai))
            }
            Expr::Atan2(y, x) => {
                let yi = self.emit(y)?;
                let xi = self.emit(x)?;
                self.push(Op::Atan2(yi, xi))
            }
        };
        self.seen.insert(e, k);
        Ok(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn env(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn basic_values() {
        assert_eq!(eval(&parse("x^2").unwrap(), &env(&[("x", 3.0)])).unwrap(), 9.0);
        let e = parse("1/x").unwrap();
        assert!(matches!(eval(&e, &env(&[("x", 0.0)])), Err(EvalError::DivisionByZero(_))));
        assert!(matches!(eval(&parse("ln(x)").unwrap(), &env(&[("x", -1.0)])), Err(EvalError::Domain { .. })));
        assert!(matches!(eval(&parse("y").unwrap(), &env(&[])), Err(EvalError::Unbound(_))));
    }

    #[test]
    fn haldane_peak() {
        let e = parse("nu_m*b/(b + K_S + K_I*b^2)").unwrap();
        let v = eval(&e, &env(&[("nu_m", 1.0), ("b", 1.0), ("K_S", 1.0), ("K_I", 1.0)])).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn compiled_matches_tree() {
        let e = parse("sin(x)*y^2/(1 + x^2) + sqrt(y) - atan2(x, y) + exp(-x)*ln(y)").unwrap();
        let slots = vec!["x".to_string(), "y".to_string()];
        let c = Compiled::new(&e, &slots).unwrap();
        let v = eval(&e, &env(&[("x", 0.3), ("y", 1.7)])).unwrap();
        assert!((c.eval(&[0.3, 1.7]) - v).abs() < 1e-14);
    }
}
