//! Exact symbolic differentiation.

use std::sync::Arc;

use super::{add, div, mul, pow, simplify, Expr, Func};

/// Partial derivative of `e` by the variable `s`, canonicalized.
pub fn differentiate(e: &Expr, s: &str) -> Expr {
    simplify(&diff_raw(e, s))
}

/// Partial derivative without canonicalization (smart constructors only).
pub fn diff_raw(e: &Expr, s: &str) -> Expr {
    if !e.contains_var(s) {
        return Expr::zero();
    }
    match e {
        Expr::Num(_) => Expr::zero(),
        Expr::Var(v) => {
            if &**v == s {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Expr::Add(ts) => add(ts.iter().map(|t| diff_raw(t, s)).collect()),
        Expr::Mul(fs) => {
            let mut terms = Vec::new();
            for i in 0..fs.len() {
                let d = diff_raw(&fs[i], s);
                if d.is_zero_literal() {
                    continue;
                }
                let mut prod: Vec<Expr> = Vec::with_capacity(fs.len());
                for (j, f) in fs.iter().enumerate() {
                    prod.push(if i == j { d.clone() } else { f.clone() });
                }
                terms.push(mul(prod));
            }
            add(terms)
        }
        Expr::Pow(b, ex) => {
            let db = diff_raw(b, s);
            if let Expr::Num(k) = &**ex {
                let km1 = Expr::Num(k - super::Rational::from_integer(1.into()));
                return mul(vec![Expr::Num(k.clone()), pow((**b).clone(), km1), db]);
            }
            let dex = diff_raw(ex, s);
            let lnb = Expr::ln((**b).clone());
            // d(b^x) = b^x (x' ln b + x b'/b)
            mul(vec![
                e.clone(),
                add(vec![
                    mul(vec![dex, lnb]),
                    mul(vec![(**ex).clone(), div(db, (**b).clone())]),
                ]),
            ])
        }
        Expr::Func(f, a) => {
            let da = diff_raw(a, s);
            let a = (**a).clone();
            let outer = match f {
                Func::Sin => Expr::cos(a),
                Func::Cos => mul(vec![Expr::int(-1), Expr::sin(a)]),
                Func::Tan => add(vec![Expr::one(), pow(Expr::tan(a), Expr::int(2))]),
                Func::Arctan => pow(add(vec![Expr::one(), pow(a, Expr::int(2))]), Expr::int(-1)),
                Func::Exp => Expr::exp(a),
                Func::Ln => pow(a, Expr::int(-1)),
            };
            mul(vec![outer, da])
        }
        Expr::Atan2(y, x) => {
            let dy = diff_raw(y, s);
            let dx = diff_raw(x, s);
            let y = (**y).clone();
            let x = (**x).clone();
            let r2 = add(vec![pow(x.clone(), Expr::int(2)), pow(y.clone(), Expr::int(2))]);
            div(add(vec![mul(vec![x, dy]), mul(vec![Expr::int(-1), y, dx])]), r2)
        }
        Expr::Opaque { name, args, partials } => {
            let mut p: Vec<Arc<str>> = partials.clone();
            p.push(Arc::from(s));
            p.sort();
            Expr::Opaque {
                name: name.clone(),
                args: args.clone(),
                partials: p,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{is_zero, parse, parse_with, ParseOptions};

    #[test]
    fn chain_rule() {
        let d = differentiate(&parse("v*cos(theta)").unwrap(), "theta");
        assert_eq!(d.to_string(), "-v*sin(theta)");
        assert_eq!(differentiate(&parse("7").unwrap(), "x"), Expr::zero());
    }

    #[test]
    fn haldane_quotient_rule() {
        let d = differentiate(&parse("nu_m*b/(b + K_S + K_I*b^2)").unwrap(), "b");
        let hand = parse("nu_m*(K_S - K_I*b^2)/(b + K_S + K_I*b^2)^2").unwrap();
        assert!(is_zero(&(d - hand)));
    }

    #[test]
    fn opaque_partials_accumulate() {
        let opts = ParseOptions::with_opaque(["eta"]);
        let e = parse_with("eta(t, x)", &opts).unwrap();
        let d = diff_raw(&diff_raw(&e, "x"), "t");
        assert_eq!(d.to_string(), "diff(eta(t, x), t, x)");
        assert_eq!(diff_raw(&e, "u"), Expr::zero());
    }
}
