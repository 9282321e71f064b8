//! Sparse multivariate polynomials and rational functions with exact
//! rational coefficients over canonical atoms (variables and irreducible
//! function applications, themselves `Expr`s).
//!
//! Arithmetic is metered by a work budget so that pathological expansions
//! abort instead of running away; callers fall back to numeric methods.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use num_traits::{One, Signed, Zero};

use super::{add, mul, pow, Expr, Rational};

/// Expansion exceeded the configured work budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overflow;

#[derive(Debug, Clone)]
pub struct Budget {
    pub max_terms: usize,
    pub remaining_work: usize,
}

impl Budget {
    pub fn new(max_terms: usize, max_work: usize) -> Self {
        Budget {
            max_terms,
            remaining_work: max_work,
        }
    }

    fn spend(&mut self, w: usize) -> Result<(), Overflow> {
        if w > self.remaining_work {
            self.remaining_work = 0;
            return Err(Overflow);
        }
        self.remaining_work -= w;
        Ok(())
    }

    fn check_terms(&self, n: usize) -> Result<(), Overflow> {
        if n > self.max_terms {
            Err(Overflow)
        } else {
            Ok(())
        }
    }
}

/// Power product of atoms, ordered graded-lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Mono(pub BTreeMap<Expr, u32>);

impl Mono {
    pub fn one() -> Mono {
        Mono(BTreeMap::new())
    }

    pub fn atom(a: Expr, k: u32) -> Mono {
        let mut m = BTreeMap::new();
        if k > 0 {
            m.insert(a, k);
        }
        Mono(m)
    }

    pub fn degree(&self) -> u32 {
        self.0.values().sum()
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mul(&self, other: &Mono) -> Mono {
        let mut m = self.0.clone();
        for (a, k) in &other.0 {
            *m.entry(a.clone()).or_insert(0) += k;
        }
        Mono(m)
    }

    pub fn divides(&self, other: &Mono) -> bool {
        self.0.iter().all(|(a, k)| other.0.get(a).is_some_and(|j| j >= k))
    }

    /// `other / self`, assuming `self.divides(other)`.
    pub fn quotient_of(&self, other: &Mono) -> Mono {
        let mut m = other.0.clone();
        for (a, k) in &self.0 {
            let e = m.get_mut(a).unwrap();
            *e -= k;
            if *e == 0 {
                m.remove(a);
            }
        }
        Mono(m)
    }

    pub fn gcd(&self, other: &Mono) -> Mono {
        let mut m = BTreeMap::new();
        for (a, k) in &self.0 {
            if let Some(j) = other.0.get(a) {
                m.insert(a.clone(), (*k).min(*j));
            }
        }
        Mono(m)
    }

    pub fn to_expr(&self) -> Vec<Expr> {
        self.0
            .iter()
            .map(|(a, k)| pow(a.clone(), Expr::int(*k as i64)))
            .collect()
    }
}

impl Ord for Mono {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            o => return o,
        }
        let mut a = self.0.iter().peekable();
        let mut b = other.0.iter().peekable();
        loop {
            match (a.peek(), b.peek()) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Greater,
                (None, Some(_)) => return Ordering::Less,
                (Some((ka, ea)), Some((kb, eb))) => match ka.cmp(kb) {
                    // the smaller atom is the more significant variable
                    Ordering::Less => return Ordering::Greater,
                    Ordering::Greater => return Ordering::Less,
                    Ordering::Equal => {
                        match ea.cmp(eb) {
                            Ordering::Equal => {}
                            o => return o,
                        }
                        a.next();
                        b.next();
                    }
                },
            }
        }
    }
}

impl PartialOrd for Mono {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Poly(pub BTreeMap<Mono, Rational>);

impl Poly {
    pub fn zero() -> Poly {
        Poly(BTreeMap::new())
    }

    pub fn constant(c: Rational) -> Poly {
        let mut m = BTreeMap::new();
        if !c.is_zero() {
            m.insert(Mono::one(), c);
        }
        Poly(m)
    }

    pub fn one() -> Poly {
        Poly::constant(Rational::one())
    }

    pub fn atom(a: Expr) -> Poly {
        let mut m = BTreeMap::new();
        m.insert(Mono::atom(a, 1), Rational::one());
        Poly(m)
    }

    pub fn term(m: Mono, c: Rational) -> Poly {
        let mut map = BTreeMap::new();
        if !c.is_zero() {
            map.insert(m, c);
        }
        Poly(map)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn as_constant(&self) -> Option<Rational> {
        match self.0.len() {
            0 => Some(Rational::zero()),
            1 => {
                let (m, c) = self.0.iter().next().unwrap();
                if m.is_one() {
                    Some(c.clone())
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    pub fn is_one(&self) -> bool {
        self.as_constant().is_some_and(|c| c.is_one())
    }

    pub fn leading(&self) -> Option<(&Mono, &Rational)> {
        self.0.iter().next_back()
    }

    fn add_term(&mut self, m: Mono, c: Rational) {
        if c.is_zero() {
            return;
        }
        match self.0.get_mut(&m) {
            Some(v) => {
                *v += c;
                if v.is_zero() {
                    self.0.remove(&m);
                }
            }
            None => {
                self.0.insert(m, c);
            }
        }
    }

    pub fn add(&self, other: &Poly, b: &mut Budget) -> Result<Poly, Overflow> {
        b.spend(self.len() + other.len())?;
        let mut out = self.clone();
        for (m, c) in &other.0 {
            out.add_term(m.clone(), c.clone());
        }
        b.check_terms(out.len())?;
        Ok(out)
    }

    pub fn neg(&self) -> Poly {
        Poly(self.0.iter().map(|(m, c)| (m.clone(), -c.clone())).collect())
    }

    pub fn sub(&self, other: &Poly, b: &mut Budget) -> Result<Poly, Overflow> {
        self.add(&other.neg(), b)
    }

    pub fn scale(&self, k: &Rational) -> Poly {
        if k.is_zero() {
            return Poly::zero();
        }
        Poly(self.0.iter().map(|(m, c)| (m.clone(), c * k)).collect())
    }

    pub fn mul_term(&self, m: &Mono, k: &Rational) -> Poly {
        Poly(self.0.iter().map(|(mm, c)| (mm.mul(m), c * k)).collect())
    }

    pub fn mul(&self, other: &Poly, b: &mut Budget) -> Result<Poly, Overflow> {
        b.spend(self.len().saturating_mul(other.len()).max(1))?;
        if let Some(c) = other.as_constant() {
            return Ok(self.scale(&c));
        }
        if let Some(c) = self.as_constant() {
            return Ok(other.scale(&c));
        }
        let mut out = Poly::zero();
        for (m1, c1) in &self.0 {
            for (m2, c2) in &other.0 {
                out.add_term(m1.mul(m2), c1 * c2);
            }
        }
        b.check_terms(out.len())?;
        Ok(out)
    }

    pub fn powi(&self, k: u32, b: &mut Budget) -> Result<Poly, Overflow> {
        let mut result = Poly::one();
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                result = result.mul(&base, b)?;
            }
            k >>= 1;
            if k > 0 {
                base = base.mul(&base, b)?;
            }
        }
        Ok(result)
    }

    /// Exact quotient `self / d` if `d` divides `self`.
    pub fn div_exact(&self, d: &Poly, b: &mut Budget) -> Result<Option<Poly>, Overflow> {
        if d.is_zero() {
            return Ok(None);
        }
        if let Some(c) = d.as_constant() {
            return Ok(Some(self.scale(&c.recip())));
        }
        let (ld_m, ld_c) = d.leading().map(|(m, c)| (m.clone(), c.clone())).unwrap();
        let mut r = self.clone();
        let mut q = Poly::zero();
        while let Some((lm, lc)) = r.leading().map(|(m, c)| (m.clone(), c.clone())) {
            if !ld_m.divides(&lm) {
                return Ok(None);
            }
            let tm = ld_m.quotient_of(&lm);
            let tc = lc / &ld_c;
            b.spend(d.len())?;
            let sub = d.mul_term(&tm, &tc);
            q.add_term(tm, tc);
            r = r.sub(&sub, b)?;
        }
        Ok(Some(q))
    }

    pub fn monomial_content(&self) -> Mono {
        let mut it = self.0.keys();
        let mut g = match it.next() {
            Some(m) => m.clone(),
            None => return Mono::one(),
        };
        for m in it {
            g = g.gcd(m);
            if g.is_one() {
                break;
            }
        }
        g
    }

    pub fn divide_mono(&self, m: &Mono) -> Poly {
        Poly(self.0.iter().map(|(mm, c)| (m.quotient_of(mm), c.clone())).collect())
    }

    /// Sign of the leading coefficient.
    pub fn leading_negative(&self) -> bool {
        self.leading().is_some_and(|(_, c)| c.is_negative())
    }

    pub fn to_expr(&self) -> Expr {
        let terms: Vec<Expr> = self
            .0
            .iter()
            .rev()
            .map(|(m, c)| {
                let mut fs = vec![Expr::Num(c.clone())];
                fs.extend(m.to_expr());
                mul(fs)
            })
            .collect();
        add(terms)
    }
}

/// Quotient of polynomials. Invariant after `normalize`: the denominator is
/// nonzero with leading coefficient one and no common monomial factor is
/// shared with the numerator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatFun {
    pub num: Poly,
    pub den: Poly,
}

impl RatFun {
    pub fn from_poly(p: Poly) -> RatFun {
        RatFun { num: p, den: Poly::one() }
    }

    pub fn constant(c: Rational) -> RatFun {
        RatFun::from_poly(Poly::constant(c))
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn as_constant(&self) -> Option<Rational> {
        let n = self.num.as_constant()?;
        let d = self.den.as_constant()?;
        Some(n / d)
    }

    pub fn is_polynomial(&self) -> bool {
        self.den.is_one()
    }

    pub fn normalize(mut self, b: &mut Budget) -> Result<RatFun, Overflow> {
        if self.num.is_zero() {
            return Ok(RatFun::constant(Rational::zero()));
        }
        if !self.den.is_one() {
            let g = self.num.monomial_content().gcd(&self.den.monomial_content());
            if !g.is_one() {
                self.num = self.num.divide_mono(&g);
                self.den = self.den.divide_mono(&g);
            }
            if self.den.as_constant().is_none() {
                if let Some(q) = self.num.div_exact(&self.den, b)? {
                    self.num = q;
                    self.den = Poly::one();
                } else if self.num.len() <= self.den.len() {
                    if let Some(q) = self.den.div_exact(&self.num, b)? {
                        self.num = Poly::one();
                        self.den = q;
                    }
                }
            }
            let lc = self.den.leading().map(|(_, c)| c.clone()).unwrap();
            if !lc.is_one() {
                let inv = lc.recip();
                self.num = self.num.scale(&inv);
                self.den = self.den.scale(&inv);
            }
        }
        Ok(self)
    }

    pub fn neg(&self) -> RatFun {
        RatFun {
            num: self.num.neg(),
            den: self.den.clone(),
        }
    }

    pub fn add(&self, other: &RatFun, b: &mut Budget) -> Result<RatFun, Overflow> {
        if self.den == other.den {
            return RatFun {
                num: self.num.add(&other.num, b)?,
                den: self.den.clone(),
            }
            .normalize(b);
        }
        if other.den.is_one() {
            let n = self.num.add(&other.num.mul(&self.den, b)?, b)?;
            return RatFun { num: n, den: self.den.clone() }.normalize(b);
        }
        if self.den.is_one() {
            return other.add(self, b);
        }
        if let Some(k) = other.den.div_exact(&self.den, b)? {
            let n = self.num.mul(&k, b)?.add(&other.num, b)?;
            return RatFun { num: n, den: other.den.clone() }.normalize(b);
        }
        if let Some(k) = self.den.div_exact(&other.den, b)? {
            let n = other.num.mul(&k, b)?.add(&self.num, b)?;
            return RatFun { num: n, den: self.den.clone() }.normalize(b);
        }
        let n = self.num.mul(&other.den, b)?.add(&other.num.mul(&self.den, b)?, b)?;
        let d = self.den.mul(&other.den, b)?;
        RatFun { num: n, den: d }.normalize(b)
    }

    pub fn mul(&self, other: &RatFun, b: &mut Budget) -> Result<RatFun, Overflow> {
        // cross-cancel before multiplying out
        let (mut n1, mut d1) = (self.num.clone(), self.den.clone());
        let (mut n2, mut d2) = (other.num.clone(), other.den.clone());
        if !d2.is_one() && d2.as_constant().is_none() {
            if let Some(q) = n1.div_exact(&d2, b)? {
                n1 = q;
                d2 = Poly::one();
            }
        }
        if !d1.is_one() && d1.as_constant().is_none() {
            if let Some(q) = n2.div_exact(&d1, b)? {
                n2 = q;
                d1 = Poly::one();
            }
        }
        RatFun {
            num: n1.mul(&n2, b)?,
            den: d1.mul(&d2, b)?,
        }
        .normalize(b)
    }

    pub fn recip(&self, b: &mut Budget) -> Result<Option<RatFun>, Overflow> {
        if self.num.is_zero() {
            return Ok(None);
        }
        Ok(Some(
            RatFun {
                num: self.den.clone(),
                den: self.num.clone(),
            }
            .normalize(b)?,
        ))
    }

    pub fn powi(&self, k: i64, b: &mut Budget) -> Result<Option<RatFun>, Overflow> {
        let base = if k < 0 {
            match self.recip(b)? {
                Some(r) => r,
                None => return Ok(None),
            }
        } else {
            self.clone()
        };
        let k = k.unsigned_abs();
        if k > 64 {
            return Err(Overflow);
        }
        Ok(Some(RatFun {
            num: base.num.powi(k as u32, b)?,
            den: base.den.powi(k as u32, b)?,
        }))
    }

    pub fn to_expr(&self) -> Expr {
        let n = self.num.to_expr();
        if self.den.is_one() {
            return n;
        }
        if let Some(c) = self.den.as_constant() {
            return mul(vec![Expr::Num(c.recip()), n]);
        }
        mul(vec![n, pow(self.den.to_expr(), Expr::int(-1))])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget() -> Budget {
        Budget::new(10_000, 1_000_000)
    }

    #[test]
    fn exact_division() {
        let mut b = budget();
        let x = Poly::atom(Expr::var("x"));
        let y = Poly::atom(Expr::var("y"));
        let s = x.add(&y, &mut b).unwrap();
        let d = x.sub(&y, &mut b).unwrap();
        let p = s.mul(&d, &mut b).unwrap();
        assert_eq!(p.div_exact(&s, &mut b).unwrap(), Some(d.clone()));
        let p1 = p.add(&Poly::one(), &mut b).unwrap();
        assert_eq!(p1.div_exact(&s, &mut b).unwrap(), None);
    }

    #[test]
    fn graded_order() {
        let x = Expr::var("x");
        let y = Expr::var("y");
        let z = Expr::var("z");
        let xz = Mono::atom(x.clone(), 1).mul(&Mono::atom(z, 1));
        assert!(xz > Mono::atom(y.clone(), 1));
        assert!(Mono::atom(x.clone(), 2) > Mono::atom(x.clone(), 1).mul(&Mono::atom(y, 1)));
        assert!(Mono::atom(x, 1) > Mono::one());
    }
}
