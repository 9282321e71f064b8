//! Vector fields on adapted coordinates: brackets, total derivatives,
//! first prolongations, Lie-Backlund map checks and tangency.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::expr::{add, differentiate, is_zero_with, simplify, Expr, ZeroVerdict};
use crate::system::{deriv_name, split_deriv, ControlSystem};
use crate::Tolerances;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("vector fields live on different coordinates: {0:?} vs {1:?}")]
    CoordinateMismatch(Vec<String>, Vec<String>),
    #[error("map does not define target coordinate `{0}`")]
    MissingTarget(String),
    #[error("zero test undecidable for {0}")]
    Undecidable(String),
}

/// `sum coeffs[c] d/dc`. Coordinates without an entry have coefficient 0.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub coords: Vec<String>,
    pub coeffs: BTreeMap<String, Expr>,
}

impl VectorField {
    pub fn new(coords: &[String]) -> VectorField {
        VectorField {
            coords: coords.to_vec(),
            coeffs: BTreeMap::new(),
        }
    }

    pub fn from_pairs(coords: &[String], pairs: &[(&str, Expr)]) -> VectorField {
        let mut v = VectorField::new(coords);
        for (c, e) in pairs {
            v = v.with(c, e.clone());
        }
        v
    }

    /// Sets a coefficient, adding the coordinate if unknown.
    pub fn with(mut self, coord: &str, e: Expr) -> VectorField {
        if !self.coords.iter().any(|c| c == coord) {
            self.coords.push(coord.to_string());
        }
        if e.is_zero_literal() {
            self.coeffs.remove(coord);
        } else {
            self.coeffs.insert(coord.to_string(), e);
        }
        self
    }

    pub fn coeff(&self, c: &str) -> Expr {
        self.coeffs.get(c).cloned().unwrap_or_else(Expr::zero)
    }

    /// Directional derivative `v(e)`.
    pub fn apply(&self, e: &Expr) -> Expr {
        let terms: Vec<Expr> = self
            .coeffs
            .iter()
            .filter(|(c, _)| e.contains_var(c))
            .map(|(c, k)| k.clone() * differentiate(e, c))
            .collect();
        simplify(&add(terms))
    }

    fn same_coords(&self, other: &VectorField) -> bool {
        let a: BTreeSet<&String> = self.coords.iter().collect();
        let b: BTreeSet<&String> = other.coords.iter().collect();
        a == b
    }

    pub fn scale(&self, k: &Expr) -> VectorField {
        let mut out = VectorField::new(&self.coords);
        for (c, e) in &self.coeffs {
            out = out.with(c, simplify(&(k.clone() * e.clone())));
        }
        out
    }

    /// Componentwise sum; coordinates are merged.
    pub fn plus(&self, other: &VectorField) -> VectorField {
        let mut out = self.clone();
        for c in &other.coords {
            if !out.coords.contains(c) {
                out.coords.push(c.clone());
            }
        }
        for (c, e) in &other.coeffs {
            let s = simplify(&(out.coeff(c) + e.clone()));
            out = out.with(c, s);
        }
        out
    }

    pub fn is_zero(&self, tol: &Tolerances) -> bool {
        self.coeffs.values().all(|e| is_zero_with(e, &tol.zero_test()).is_zero())
    }

    /// Restricts to the given coordinates, dropping the others.
    pub fn restrict(&self, coords: &[String]) -> VectorField {
        let mut out = VectorField::new(coords);
        for c in coords {
            out = out.with(c, self.coeff(c));
        }
        out
    }

    pub fn subs(&self, map: &BTreeMap<String, Expr>) -> VectorField {
        let mut out = VectorField::new(&self.coords);
        for (c, e) in &self.coeffs {
            out = out.with(c, simplify(&e.subs(map)));
        }
        out
    }
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for c in &self.coords {
            let Some(e) = self.coeffs.get(c) else { continue };
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            if e.is_one_literal() {
                write!(f, "d/d{c}")?;
            } else {
                write!(f, "({e}) d/d{c}")?;
            }
        }
        if first {
            f.write_str("0")?;
        }
        Ok(())
    }
}

/// `[v, w]^k = v(w^k) - w(v^k)`.
pub fn lie_bracket(v: &VectorField, w: &VectorField) -> Result<VectorField, GeometryError> {
    if !v.same_coords(w) {
        return Err(GeometryError::CoordinateMismatch(v.coords.clone(), w.coords.clone()));
    }
    let mut out = VectorField::new(&v.coords);
    for c in &v.coords {
        let e = simplify(&(v.apply(&w.coeff(c)) - w.apply(&v.coeff(c))));
        out = out.with(c, e);
    }
    Ok(out)
}

/// Total derivative `d/dt + sum rates[s] d/ds`; symbols without a rate are
/// treated as constants.
pub fn total_derivative_with(e: &Expr, time: &str, rates: &BTreeMap<String, Expr>) -> Expr {
    let mut terms = vec![differentiate(e, time)];
    for s in e.free_symbols() {
        if let Some(r) = rates.get(&s) {
            let d = differentiate(e, &s);
            if !d.is_zero_literal() {
                terms.push(r.clone() * d);
            }
        }
    }
    simplify(&add(terms))
}

/// Formal total derivative: every dependent `y` and derivative coordinate
/// `y_dk` advances to `y_d(k+1)`.
pub fn total_derivative(e: &Expr, time: &str, deps: &[String]) -> Expr {
    let mut rates = BTreeMap::new();
    for s in e.free_symbols() {
        let (base, k) = split_deriv(&s);
        if deps.iter().any(|d| d == base) {
            rates.insert(s.clone(), Expr::var(&deriv_name(base, k + 1)));
        }
    }
    total_derivative_with(e, time, &rates)
}

/// A vector field together with its first-order prolongation coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ProlongedField {
    pub base: VectorField,
    pub time: String,
    pub deps: Vec<String>,
    /// `y_d1 -> D_t eta^y - y_d1 D_t xi`.
    pub first: BTreeMap<String, Expr>,
}

impl ProlongedField {
    /// The prolonged field on `(t, y, y_d1)`.
    pub fn as_field(&self) -> VectorField {
        let mut v = self.base.clone();
        for d in &self.deps {
            let n = deriv_name(d, 1);
            v = v.with(&n, self.first.get(&n).cloned().unwrap_or_else(Expr::zero));
        }
        v
    }

    /// Re-checks the defining identities of the prolongation coefficients.
    pub fn check(&self, tol: &Tolerances) -> bool {
        let xi = self.base.coeff(&self.time);
        let dxi = total_derivative(&xi, &self.time, &self.deps);
        self.deps.iter().all(|d| {
            let n = deriv_name(d, 1);
            let expect = total_derivative(&self.base.coeff(d), &self.time, &self.deps) - Expr::var(&n) * dxi.clone();
            let got = self.first.get(&n).cloned().unwrap_or_else(Expr::zero);
            is_zero_with(&(got - expect), &tol.zero_test()).is_zero()
        })
    }
}

/// First prolongation of `v` over the dependents `deps` with time `time`.
pub fn prolong(v: &VectorField, time: &str, deps: &[String]) -> ProlongedField {
    let xi = v.coeff(time);
    let dxi = total_derivative(&xi, time, deps);
    let mut first = BTreeMap::new();
    for d in deps {
        let n = deriv_name(d, 1);
        let zeta = total_derivative(&v.coeff(d), time, deps) - Expr::var(&n) * dxi.clone();
        let zeta = simplify(&zeta);
        if !zeta.is_zero_literal() {
            first.insert(n, zeta);
        }
    }
    ProlongedField {
        base: v.clone(),
        time: time.to_string(),
        deps: deps.to_vec(),
        first,
    }
}

/// Prolongation over the dependents `(x, u)` of a system.
pub fn prolong_on(v: &VectorField, sys: &ControlSystem) -> ProlongedField {
    prolong(v, &sys.time, &sys.dependents())
}

/// Point map from a source system into the coordinates of a target system:
/// `time` gives `T`, `maps` gives every target state and input.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMap {
    pub name: String,
    pub target: String,
    pub time: Expr,
    pub maps: BTreeMap<String, Expr>,
}

impl SystemMap {
    pub fn identity(sys: &ControlSystem) -> SystemMap {
        SystemMap {
            name: "identity".into(),
            target: sys.name.clone(),
            time: Expr::var(&sys.time),
            maps: sys.dependents().into_iter().map(|d| (d.clone(), Expr::var(&d))).collect(),
        }
    }

    /// `self` followed by `next` (`next` expressed in the target coordinates
    /// of `self`).
    pub fn then(&self, next: &SystemMap, mid: &ControlSystem) -> SystemMap {
        let mut sub: BTreeMap<String, Expr> = self.maps.clone();
        sub.insert(mid.time.clone(), self.time.clone());
        SystemMap {
            name: format!("{}*{}", next.name, self.name),
            target: next.target.clone(),
            time: simplify(&next.time.subs(&sub)),
            maps: next.maps.iter().map(|(k, e)| (k.clone(), simplify(&e.subs(&sub)))).collect(),
        }
    }
}

/// Per-state outcome of a map check.
#[derive(Debug, Clone, PartialEq)]
pub struct MapCheck {
    pub residuals: Vec<(String, Expr, ZeroVerdict)>,
}

impl MapCheck {
    pub fn passed(&self) -> bool {
        self.residuals.iter().all(|(_, _, v)| v.is_zero())
    }
}

/// Verifies `d_t V - f_dst(T, V) d_t T = 0` for every target state, with
/// `d_t` the Cartan field of the source (`x' = f`, inputs advance formally).
pub fn check_lie_backlund_map(
    m: &SystemMap,
    src: &ControlSystem,
    dst: &ControlSystem,
    tol: &Tolerances,
) -> Result<MapCheck, GeometryError> {
    for d in dst.dependents() {
        if !m.maps.contains_key(&d) {
            return Err(GeometryError::MissingTarget(d));
        }
    }
    let rates = src.rates(4);
    let dt = total_derivative_with(&m.time, &src.time, &rates);
    let mut at: BTreeMap<String, Expr> = m.maps.clone();
    at.insert(dst.time.clone(), m.time.clone());
    let mut residuals = Vec::new();
    for (x, f) in dst.states.iter().zip(&dst.dynamics) {
        let v = &m.maps[x];
        let lhs = total_derivative_with(v, &src.time, &rates);
        let r = simplify(&(lhs - f.subs(&at) * dt.clone()));
        let verdict = is_zero_with(&r, &tol.zero_test());
        if verdict == ZeroVerdict::Undecidable {
            return Err(GeometryError::Undecidable(format!("target state {x}")));
        }
        residuals.push((x.clone(), r, verdict));
    }
    Ok(MapCheck { residuals })
}

/// Whether `v` is tangent to `{residuals = 0}`: `v(F)` vanishes after the
/// substitution that solves the residuals.
pub fn is_tangent(
    v: &VectorField,
    residuals: &[Expr],
    solve: &BTreeMap<String, Expr>,
    tol: &Tolerances,
) -> Result<bool, GeometryError> {
    for (k, f) in residuals.iter().enumerate() {
        let e = simplify(&v.apply(f).subs(solve));
        match is_zero_with(&e, &tol.zero_test()) {
            ZeroVerdict::Zero(_) => {}
            ZeroVerdict::NonZero(_) => return Ok(false),
            ZeroVerdict::Undecidable => return Err(GeometryError::Undecidable(format!("residual {k}"))),
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn coords(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn brackets() {
        let c = coords(&["z1", "z2", "theta"]);
        let d1 = VectorField::from_pairs(&c, &[("z1", Expr::one())]);
        let v1 = VectorField::from_pairs(
            &c,
            &[("z1", parse("-z2").unwrap()), ("z2", parse("z1").unwrap()), ("theta", Expr::one())],
        );
        let b = lie_bracket(&d1, &v1).unwrap();
        assert_eq!(b, VectorField::from_pairs(&c, &[("z2", Expr::one())]));
        let x = coords(&["x"]);
        let sx = VectorField::from_pairs(&x, &[("x", parse("x").unwrap())]);
        let dx = VectorField::from_pairs(&x, &[("x", Expr::one())]);
        assert_eq!(lie_bracket(&sx, &dx).unwrap(), VectorField::from_pairs(&x, &[("x", Expr::int(-1))]));
        assert!(lie_bracket(&sx, &d1).is_err());
    }

    #[test]
    fn total_derivatives() {
        let deps = coords(&["x", "u"]);
        assert_eq!(total_derivative(&parse("t").unwrap(), "t", &deps), Expr::one());
        let d = total_derivative(&parse("x*u").unwrap(), "t", &deps);
        assert!(is_zero_with(&(d - parse("x_d1*u + x*u_d1").unwrap()), &Default::default()).is_zero());
    }

    #[test]
    fn time_translation_prolongs_trivially() {
        let deps = coords(&["x", "u"]);
        let mut c = vec!["t".to_string()];
        c.extend(deps.clone());
        let v = VectorField::from_pairs(&c, &[("t", Expr::one())]);
        let p = prolong(&v, "t", &deps);
        assert!(p.first.is_empty());
        assert!(p.check(&Tolerances::default()));
    }

    #[test]
    fn scaling_map_on_linear_system() {
        let s = ControlSystem::new("lin", &["z"], &[], &[], vec![parse("z").unwrap()]).unwrap();
        let mut m = SystemMap::identity(&s);
        m.maps.insert("z".into(), parse("2*z").unwrap());
        assert!(check_lie_backlund_map(&m, &s, &s, &Tolerances::default()).unwrap().passed());
        m.maps.insert("z".into(), parse("z^2").unwrap());
        assert!(!check_lie_backlund_map(&m, &s, &s, &Tolerances::default()).unwrap().passed());
    }
}
