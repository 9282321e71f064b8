//! Infix printer. Emits the same grammar the parser accepts, with the
//! minimal parenthesization that reparses to an identical tree.

use std::fmt::{self, Write};

use num_traits::{One, Signed};

use super::{is_negative_num, neg, Expr, Rational};

const ADD: u8 = 1;
const MUL: u8 = 2;
const NEG: u8 = 3;
const POW: u8 = 4;
const ATOM: u8 = 5;

pub(super) fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    let mut s = String::new();
    write_prec(&mut s, e, 0);
    f.write_str(&s)
}

fn half() -> Rational {
    Rational::new(1.into(), 2.into())
}

fn reciprocal_part(e: &Expr) -> Option<Expr> {
    if let Expr::Pow(b, ex) = e {
        if let Expr::Num(r) = &**ex {
            if r.is_negative() {
                let pos = -r.clone();
                return Some(if pos.is_one() {
                    (**b).clone()
                } else {
                    Expr::Pow(b.clone(), Box::new(Expr::Num(pos)))
                });
            }
        }
    }
    None
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Num(r) => {
            if !r.is_integer() {
                MUL
            } else if r.is_negative() {
                NEG
            } else {
                ATOM
            }
        }
        Expr::Var(_) | Expr::Func(..) | Expr::Atan2(..) | Expr::Opaque { .. } => ATOM,
        Expr::Add(_) => ADD,
        Expr::Mul(_) => MUL,
        Expr::Pow(_, ex) => match &**ex {
            Expr::Num(r) if r.is_negative() => MUL,
            Expr::Num(r) if *r == half() => ATOM,
            _ => POW,
        },
    }
}

fn write_prec(out: &mut String, e: &Expr, min: u8) {
    let p = prec(e);
    if p < min {
        out.push('(');
        write_raw(out, e);
        out.push(')');
    } else {
        write_raw(out, e);
    }
}

fn write_num(out: &mut String, r: &Rational) {
    if r.is_integer() {
        let _ = write!(out, "{}", r.numer());
    } else {
        let _ = write!(out, "{}/{}", r.numer(), r.denom());
    }
}

fn write_raw(out: &mut String, e: &Expr) {
    match e {
        Expr::Num(r) => write_num(out, r),
        Expr::Var(v) => out.push_str(v),
        Expr::Func(func, a) => {
            out.push_str(func.name());
            out.push('(');
            write_prec(out, a, 0);
            out.push(')');
        }
        Expr::Atan2(y, x) => {
            out.push_str("atan2(");
            write_prec(out, y, 0);
            out.push_str(", ");
            write_prec(out, x, 0);
            out.push(')');
        }
        Expr::Opaque {
            name,
            args,
            partials,
        } => {
            let call = format!("{}({})", name, args.iter().map(|a| &**a).collect::<Vec<_>>().join(", "));
            if partials.is_empty() {
                out.push_str(&call);
            } else {
                out.push_str("diff(");
                out.push_str(&call);
                for p in partials {
                    out.push_str(", ");
                    out.push_str(p);
                }
                out.push(')');
            }
        }
        Expr::Add(ts) => {
            for (i, t) in ts.iter().enumerate() {
                if i == 0 {
                    write_prec(out, t, ADD);
                } else if is_negative_num(t) {
                    out.push_str(" - ");
                    write_prec(out, &neg(t.clone()), MUL);
                } else {
                    out.push_str(" + ");
                    write_prec(out, t, MUL);
                }
            }
        }
        Expr::Mul(fs) => write_mul(out, fs),
        Expr::Pow(b, ex) => {
            if let Some(den) = reciprocal_part(e) {
                out.push_str("1/");
                write_prec(out, &den, POW);
                return;
            }
            if let Expr::Num(r) = &**ex {
                if *r == half() {
                    out.push_str("sqrt(");
                    write_prec(out, b, 0);
                    out.push(')');
                    return;
                }
            }
            write_prec(out, b, ATOM);
            out.push('^');
            match &**ex {
                Expr::Num(r) if r.is_integer() && !r.is_negative() => write_num(out, r),
                Expr::Var(v) => out.push_str(v),
                other => {
                    out.push('(');
                    write_prec(out, other, 0);
                    out.push(')');
                }
            }
        }
    }
}

fn write_mul(out: &mut String, fs: &[Expr]) {
    let (coef, rest) = match fs.first() {
        Some(Expr::Num(r)) => (r.clone(), &fs[1..]),
        _ => (Rational::one(), fs),
    };
    let mut numer = Vec::new();
    let mut denom = Vec::new();
    for f in rest {
        match reciprocal_part(f) {
            Some(d) => denom.push(d),
            None => numer.push(f),
        }
    }
    if coef.is_negative() {
        out.push('-');
    }
    let abs = coef.abs();
    let mut wrote = false;
    if !abs.is_one() {
        write_num(out, &abs);
        wrote = true;
    }
    for f in numer {
        if wrote {
            out.push('*');
        }
        write_prec(out, f, POW);
        wrote = true;
    }
    if !wrote {
        out.push('1');
    }
    for d in denom {
        out.push('/');
        write_prec(out, &d, POW);
    }
}
