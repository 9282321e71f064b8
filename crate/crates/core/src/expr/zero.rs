//! Zero testing: canonical simplification first, random evaluation second.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::canon::{to_ratfun, SimplifyBudget};
use super::eval::eval;
use super::Expr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroPath {
    Symbolic,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroVerdict {
    Zero(ZeroPath),
    NonZero(ZeroPath),
    /// Every sample point was singular.
    Undecidable,
}

impl ZeroVerdict {
    pub fn is_zero(self) -> bool {
        matches!(self, ZeroVerdict::Zero(_))
    }

    pub fn is_nonzero(self) -> bool {
        matches!(self, ZeroVerdict::NonZero(_))
    }

    pub fn path(self) -> Option<ZeroPath> {
        match self {
            ZeroVerdict::Zero(p) | ZeroVerdict::NonZero(p) => Some(p),
            ZeroVerdict::Undecidable => None,
        }
    }
}

/// Parameters of the numeric fallback.
#[derive(Debug, Clone, Copy)]
pub struct ZeroTest {
    pub tol: f64,
    pub samples: usize,
    pub redraws: usize,
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
    pub budget: SimplifyBudget,
}

impl Default for ZeroTest {
    fn default() -> Self {
        ZeroTest {
            tol: 1e-9,
            samples: 32,
            redraws: 16,
            lo: -2.0,
            hi: 2.0,
            seed: 0x5eed_2a11,
            budget: SimplifyBudget::default(),
        }
    }
}

impl ZeroTest {
    pub fn with_tol(tol: f64) -> Self {
        ZeroTest {
            tol,
            ..ZeroTest::default()
        }
    }
}

pub fn is_zero(e: &Expr) -> bool {
    is_zero_with(e, &ZeroTest::default()).is_zero()
}

pub fn is_zero_with(e: &Expr, cfg: &ZeroTest) -> ZeroVerdict {
    if let Some(r) = to_ratfun(e, cfg.budget) {
        if r.is_zero() {
            return ZeroVerdict::Zero(ZeroPath::Symbolic);
        }
        if r.num.0.keys().all(|m| m.0.keys().all(|a| matches!(a, Expr::Var(_) | Expr::Opaque { .. }))) {
            return ZeroVerdict::NonZero(ZeroPath::Symbolic);
        }
        return numeric(&r.num.to_expr(), cfg);
    }
    numeric(e, cfg)
}

/// Replaces each distinct opaque node by a fresh variable so the expression
/// can be sampled as a function of its jet values.
fn generic_opaque(e: &Expr, table: &mut BTreeMap<Expr, String>) -> Expr {
    match e {
        Expr::Opaque { .. } => {
            let n = table.len();
            let name = table.entry(e.clone()).or_insert_with(|| format!("__opaque{n}"));
            Expr::var(name)
        }
        Expr::Num(_) | Expr::Var(_) => e.clone(),
        Expr::Add(ts) => super::add(ts.iter().map(|t| generic_opaque(t, table)).collect()),
        Expr::Mul(ts) => super::mul(ts.iter().map(|t| generic_opaque(t, table)).collect()),
        Expr::Pow(b, x) => super::pow(generic_opaque(b, table), generic_opaque(x, table)),
        Expr::Func(f, a) => Expr::func(*f, generic_opaque(a, table)),
        Expr::Atan2(y, x) => Expr::atan2(generic_opaque(y, table), generic_opaque(x, table)),
    }
}

fn numeric(e: &Expr, cfg: &ZeroTest) -> ZeroVerdict {
    let e = if e.has_opaque() {
        generic_opaque(e, &mut BTreeMap::new())
    } else {
        e.clone()
    };
    let syms: Vec<String> = e.free_symbols().into_iter().collect();
    let terms: Vec<&Expr> = match &e {
        Expr::Add(ts) => ts.iter().collect(),
        _ => vec![&e],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut valid = 0usize;
    for _ in 0..cfg.samples {
        for _ in 0..cfg.redraws {
            let env: HashMap<String, f64> = syms.iter().map(|s| (s.clone(), rng.gen_range(cfg.lo..cfg.hi))).collect();
            let mut scale = 1.0f64;
            let mut sum = 0.0;
            let mut ok = true;
            for t in &terms {
                match eval(t, &env) {
                    Ok(v) => {
                        scale = scale.max(v.abs());
                        sum += v;
                    }
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok || !sum.is_finite() {
                continue;
            }
            valid += 1;
            if sum.abs() > cfg.tol * scale {
                return ZeroVerdict::NonZero(ZeroPath::Numeric);
            }
            break;
        }
    }
    if valid == 0 {
        ZeroVerdict::Undecidable
    } else {
        ZeroVerdict::Zero(ZeroPath::Numeric)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn verdicts() {
        let v = is_zero_with(&parse("sin(x)^2 + cos(x)^2 - 1").unwrap(), &ZeroTest::default());
        assert_eq!(v, ZeroVerdict::Zero(ZeroPath::Symbolic));
        assert_eq!(is_zero_with(&parse("x + 1").unwrap(), &ZeroTest::default()), ZeroVerdict::NonZero(ZeroPath::Symbolic));
        let v = is_zero_with(&parse("atan2(sin(x), cos(x)) - x").unwrap(), &ZeroTest::default());
        assert_eq!(v, ZeroVerdict::Zero(ZeroPath::Numeric));
    }

    #[test]
    fn all_singular_is_undecidable() {
        let v = is_zero_with(&parse("ln(-1 - x^2) + sin(ln(-1 - y^2))").unwrap(), &ZeroTest::default());
        assert_eq!(v, ZeroVerdict::Undecidable);
    }
}
