//! Lie point symmetries of state systems.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{
    add, differentiate, eval, eval_with, is_zero_with, rational_from_f64, simplify, EvalError, Expr, Rational,
    ZeroVerdict,
};
use crate::geometry::{lie_bracket, prolong_on, GeometryError, VectorField};
use crate::linalg::{lstsq, rank};
use crate::system::{deriv_name, ControlSystem};
use crate::Tolerances;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SymmetryError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("action `{action}` is not the identity at a = 0 on `{coord}`")]
    NotIdentity { action: String, coord: String },
    #[error("generators are not pointwise independent (rank {rank} < {expected})")]
    RankDeficient { rank: usize, expected: usize },
    #[error("parameter index {0} out of range")]
    BadParameter(usize),
    #[error("no valid sample point found")]
    NoSamples,
}

/// Local transformation group acting on `coords`, parametrized by `params`
/// with the identity at `params = 0`. Unlisted coordinates are fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAction {
    pub name: String,
    pub params: Vec<String>,
    pub coords: Vec<String>,
    pub maps: BTreeMap<String, Expr>,
    /// Composition law: parameter of `g2 * g1` in terms of `<a>_1`, `<a>_2`.
    pub compose: Option<BTreeMap<String, Expr>>,
}

impl GroupAction {
    pub fn new(name: &str, params: &[&str], maps: &[(&str, Expr)]) -> GroupAction {
        GroupAction {
            name: name.to_string(),
            params: params.iter().map(|s| s.to_string()).collect(),
            coords: maps.iter().map(|(c, _)| c.to_string()).collect(),
            maps: maps.iter().map(|(c, e)| (c.to_string(), e.clone())).collect(),
            compose: None,
        }
    }

    pub fn with_composition(mut self, law: &[(&str, Expr)]) -> GroupAction {
        self.compose = Some(law.iter().map(|(p, e)| (p.to_string(), e.clone())).collect());
        self
    }

    pub fn r(&self) -> usize {
        self.params.len()
    }

    /// Transformed coordinate `c` (identity when not acted on).
    pub fn image(&self, c: &str) -> Expr {
        self.maps.get(c).cloned().unwrap_or_else(|| Expr::var(c))
    }

    pub fn at_identity(&self) -> BTreeMap<String, Expr> {
        self.params.iter().map(|p| (p.clone(), Expr::zero())).collect()
    }

    pub fn check_identity(&self, tol: &Tolerances) -> Result<(), SymmetryError> {
        let zero = self.at_identity();
        for (c, e) in &self.maps {
            let d = e.subs(&zero) - Expr::var(c);
            if !is_zero_with(&d, &tol.zero_test()).is_zero() {
                return Err(SymmetryError::NotIdentity {
                    action: self.name.clone(),
                    coord: c.clone(),
                });
            }
        }
        Ok(())
    }

    /// Infinitesimal generator for parameter `k`.
    pub fn generator(&self, k: usize) -> Result<VectorField, SymmetryError> {
        let p = self.params.get(k).ok_or(SymmetryError::BadParameter(k))?;
        let zero = self.at_identity();
        let mut v = VectorField::new(&self.coords);
        for c in &self.coords {
            let d = simplify(&differentiate(&self.image(c), p).subs(&zero));
            v = v.with(c, d);
        }
        Ok(v)
    }

    pub fn generators(&self) -> Result<Vec<VectorField>, SymmetryError> {
        (0..self.r()).map(|k| self.generator(k)).collect()
    }

    /// Numeric image of a point; `env` supplies the point, the group
    /// parameters and any model parameters.
    pub fn apply_numeric(&self, env: &HashMap<String, f64>) -> Result<HashMap<String, f64>, EvalError> {
        let mut out = env.clone();
        for c in &self.coords {
            out.insert(c.clone(), eval(&self.image(c), env)?);
        }
        for p in &self.params {
            out.remove(p);
        }
        Ok(out)
    }

    /// Numeric check of the composition law at random parameter pairs.
    /// Returns `None` when no law is declared.
    pub fn check_composition(&self, model: &HashMap<String, f64>, samples: usize, tol: f64, seed: u64) -> Option<bool> {
        let law = self.compose.as_ref()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let free: BTreeSet<String> = self
            .maps
            .values()
            .flat_map(|e| e.free_symbols())
            .filter(|s| !self.params.contains(s) && !model.contains_key(s))
            .collect();
        let mut done = 0;
        let mut tries = 0;
        while done < samples && tries < samples * 20 {
            tries += 1;
            let mut env = model.clone();
            for s in &free {
                env.insert(s.clone(), rng.gen_range(0.2..1.5));
            }
            let a1: Vec<f64> = self.params.iter().map(|_| rng.gen_range(-0.8..0.8)).collect();
            let a2: Vec<f64> = self.params.iter().map(|_| rng.gen_range(-0.8..0.8)).collect();
            let step = |base: &HashMap<String, f64>, a: &[f64]| {
                let mut e = base.clone();
                for (p, v) in self.params.iter().zip(a) {
                    e.insert(p.clone(), *v);
                }
                self.apply_numeric(&e)
            };
            let Ok(z1) = step(&env, &a1) else { continue };
            let Ok(z12) = step(&z1, &a2) else { continue };
            let mut penv = model.clone();
            for (i, p) in self.params.iter().enumerate() {
                penv.insert(format!("{p}_1"), a1[i]);
                penv.insert(format!("{p}_2"), a2[i]);
            }
            let a3: Result<Vec<f64>, _> = self.params.iter().map(|p| eval(&law[p], &penv)).collect();
            let Ok(a3) = a3 else { continue };
            let Ok(z3) = step(&env, &a3) else { continue };
            for c in &self.coords {
                if (z12[c] - z3[c]).abs() > tol * z3[c].abs().max(1.0) {
                    return Some(false);
                }
            }
            done += 1;
        }
        Some(done == samples)
    }
}

/// One entry of a symmetry residual.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualEntry {
    pub state: String,
    pub expr: Expr,
    pub verdict: ZeroVerdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryResidual {
    pub entries: Vec<ResidualEntry>,
}

impl SymmetryResidual {
    pub fn is_symmetry(&self) -> bool {
        self.entries.iter().all(|e| e.verdict.is_zero())
    }

    pub fn undecidable(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.verdict == ZeroVerdict::Undecidable)
            .map(|e| e.state.as_str())
            .collect()
    }
}

/// `pr v (x_d1 - f)` before restricting to the system.
fn raw_condition(sys: &ControlSystem, v: &VectorField) -> Vec<Expr> {
    let pv = prolong_on(v, sys);
    let base = pv.base.clone();
    sys.states
        .iter()
        .zip(&sys.dynamics)
        .map(|(x, f)| {
            let zeta = pv.first.get(&deriv_name(x, 1)).cloned().unwrap_or_else(Expr::zero);
            zeta - base.apply(f)
        })
        .collect()
}

/// `pr v (F^i)` with `x_d1 := f`, one entry per state.
pub fn symmetry_residual(sys: &ControlSystem, v: &VectorField, tol: &Tolerances) -> SymmetryResidual {
    let on = sys.on_system();
    let entries = sys
        .states
        .iter()
        .zip(raw_condition(sys, v))
        .map(|(x, r)| {
            let e = simplify(&r.subs(&on));
            let verdict = is_zero_with(&e, &tol.zero_test());
            ResidualEntry {
                state: x.clone(),
                expr: e,
                verdict,
            }
        })
        .collect();
    SymmetryResidual { entries }
}

/// The two blocks of the split determining equations.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterminingEquations {
    /// `(state, input, eta_u - f xi_u)`, the coefficients of the input
    /// derivatives.
    pub input_block: Vec<(String, String, Expr)>,
    /// `(state, remainder)` free of input derivatives.
    pub base_block: Vec<(String, Expr)>,
}

impl DeterminingEquations {
    pub fn all(&self) -> Vec<Expr> {
        self.input_block
            .iter()
            .map(|(_, _, e)| e.clone())
            .chain(self.base_block.iter().map(|(_, e)| e.clone()))
            .collect()
    }

    pub fn nontrivial(&self) -> Vec<Expr> {
        self.all().into_iter().filter(|e| !e.is_zero_literal()).collect()
    }
}

/// Splits the symmetry condition of `ansatz` by the input derivatives. The
/// ansatz may use opaque coefficient functions.
pub fn determining_equations(sys: &ControlSystem, ansatz: &VectorField) -> DeterminingEquations {
    let on = sys.on_system();
    let udots: Vec<String> = sys.inputs.iter().map(|u| deriv_name(u, 1)).collect();
    let zero_udot: BTreeMap<String, Expr> = udots.iter().map(|u| (u.clone(), Expr::zero())).collect();
    let mut input_block = Vec::new();
    let mut base_block = Vec::new();
    for (x, r) in sys.states.iter().zip(raw_condition(sys, ansatz)) {
        let r = simplify(&r.subs(&on));
        for (u, ud) in sys.inputs.iter().zip(&udots) {
            input_block.push((x.clone(), u.clone(), differentiate(&r, ud)));
        }
        base_block.push((x.clone(), simplify(&r.subs(&zero_udot))));
    }
    DeterminingEquations {
        input_block,
        base_block,
    }
}

/// Structure constants of a list of generators.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureConstants {
    /// `table[i][j][k] = c_{ij}^k` (zero-based).
    pub table: Vec<Vec<Vec<Rational>>>,
    pub closed: bool,
    pub issues: Vec<String>,
}

impl StructureConstants {
    pub fn c(&self, i: usize, j: usize, k: usize) -> f64 {
        crate::expr::rational_to_f64(&self.table[i][j][k])
    }
}

fn union_coords(gens: &[VectorField]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for g in gens {
        for c in &g.coords {
            if !out.contains(c) {
                out.push(c.clone());
            }
        }
    }
    out
}

/// Random environments on which every coefficient of `exprs` evaluates.
pub(crate) fn sample_envs(
    exprs: &[Expr],
    extra: &[String],
    fixed: &HashMap<String, f64>,
    count: usize,
    range: (f64, f64),
    seed: u64,
) -> Vec<HashMap<String, f64>> {
    let mut syms: BTreeSet<String> = exprs.iter().flat_map(|e| e.free_symbols()).collect();
    syms.extend(extra.iter().cloned());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut tries = 0;
    while out.len() < count && tries < count * 50 {
        tries += 1;
        let mut env = fixed.clone();
        for s in &syms {
            if !fixed.contains_key(s) {
                env.insert(s.clone(), rng.gen_range(range.0..range.1));
            }
        }
        if exprs.iter().all(|e| eval(e, &env).is_ok()) {
            out.push(env);
        }
    }
    out
}

/// `c_{ij}^k` with `[v_i, v_j] = sum_k c_{ij}^k v_k`, found by least
/// squares at sample points and confirmed symbolically.
pub fn structure_constants(gens: &[VectorField], tol: &Tolerances) -> Result<StructureConstants, SymmetryError> {
    let r = gens.len();
    let coords = union_coords(gens);
    let gens: Vec<VectorField> = gens.iter().map(|g| g.restrict(&coords)).collect();
    let mut brackets = vec![vec![None; r]; r];
    let mut all_exprs: Vec<Expr> = gens.iter().flat_map(|g| g.coeffs.values().cloned()).collect();
    for i in 0..r {
        for j in i + 1..r {
            let b = lie_bracket(&gens[i], &gens[j])?;
            all_exprs.extend(b.coeffs.values().cloned());
            brackets[i][j] = Some(b);
        }
    }
    let envs = sample_envs(&all_exprs, &coords, &HashMap::new(), 8, (-2.0, 2.0), 0x51c0);
    if envs.len() < 8 {
        return Err(SymmetryError::NoSamples);
    }
    let gen_matrix = |env: &HashMap<String, f64>| -> Result<DMatrix<f64>, EvalError> {
        let mut m = DMatrix::zeros(coords.len(), r);
        for (k, g) in gens.iter().enumerate() {
            for (row, c) in coords.iter().enumerate() {
                m[(row, k)] = eval(&g.coeff(c), env)?;
            }
        }
        Ok(m)
    };
    let mats: Vec<DMatrix<f64>> = envs.iter().map(gen_matrix).collect::<Result<_, _>>()?;
    let mut stacked = DMatrix::zeros(coords.len() * mats.len(), r);
    for (p, m) in mats.iter().enumerate() {
        stacked.view_mut((p * coords.len(), 0), (coords.len(), r)).copy_from(m);
    }
    let rk = rank(&stacked, tol.num);
    if rk < r {
        return Err(SymmetryError::RankDeficient { rank: rk, expected: r });
    }
    let mut table = vec![vec![vec![Rational::zero(); r]; r]; r];
    let mut closed = true;
    let mut issues = Vec::new();
    for i in 0..r {
        for j in i + 1..r {
            let b = brackets[i][j].as_ref().unwrap();
            let nc = coords.len();
            let mut a = DMatrix::zeros(nc * envs.len(), r);
            let mut rhs = DVector::zeros(nc * envs.len());
            for (p, env) in envs.iter().enumerate() {
                a.view_mut((p * nc, 0), (nc, r)).copy_from(&mats[p]);
                for (row, c) in coords.iter().enumerate() {
                    rhs[p * nc + row] = eval(&b.coeff(c), env)?;
                }
            }
            let Some(sol) = lstsq(&a, &rhs) else {
                closed = false;
                issues.push(format!("[v{}, v{}]: least squares failed", i + 1, j + 1));
                continue;
            };
            let res = (&a * &sol - &rhs).amax();
            if res > tol.num * rhs.amax().max(1.0) {
                closed = false;
                issues.push(format!("[v{}, v{}] = {} leaves the span", i + 1, j + 1, b));
                continue;
            }
            let coeffs: Vec<Rational> = sol.iter().map(|c| snap_rational(*c)).collect();
            let mut combo = VectorField::new(&coords);
            for (k, c) in coeffs.iter().enumerate() {
                combo = combo.plus(&gens[k].scale(&Expr::Num(c.clone())));
            }
            let ok = coords.iter().all(|c| {
                let d = add(vec![b.coeff(c), Expr::int(-1) * combo.coeff(c)]);
                is_zero_with(&d, &tol.zero_test()).is_zero()
            });
            if !ok {
                closed = false;
                issues.push(format!("[v{}, v{}]: coefficients are not constant", i + 1, j + 1));
                continue;
            }
            for k in 0..r {
                table[i][j][k] = coeffs[k].clone();
                table[j][i][k] = -coeffs[k].clone();
            }
        }
    }
    Ok(StructureConstants { table, closed, issues })
}

/// Nearest rational with a small denominator when within 1e-9, otherwise
/// the bounded continued-fraction value.
fn snap_rational(v: f64) -> Rational {
    for d in 1..=12i64 {
        let n = (v * d as f64).round();
        if (n / d as f64 - v).abs() < 1e-9 {
            return Rational::new((n as i64).into(), d.into());
        }
    }
    rational_from_f64(v)
}

/// Evaluates a generator coefficient list at a point, for reuse by numeric
/// checks elsewhere.
pub fn eval_field(v: &VectorField, env: &dyn Fn(&str) -> Option<f64>) -> Result<Vec<f64>, EvalError> {
    v.coords.iter().map(|c| eval_with(&v.coeff(c), env)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, parse_with, ParseOptions};

    fn car() -> ControlSystem {
        ControlSystem::new(
            "car",
            &["z1", "z2", "theta"],
            &["v", "phi"],
            &[("l", Some(1.0))],
            vec![
                parse("v*cos(theta)").unwrap(),
                parse("v*sin(theta)").unwrap(),
                parse("v/l*tan(phi)").unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn rotation_generator_and_residual() {
        let rot = GroupAction::new(
            "rot",
            &["a"],
            &[
                ("z1", parse("z1*cos(a) - z2*sin(a)").unwrap()),
                ("z2", parse("z1*sin(a) + z2*cos(a)").unwrap()),
                ("theta", parse("theta + a").unwrap()),
            ],
        );
        rot.check_identity(&Tolerances::default()).unwrap();
        let v1 = rot.generator(0).unwrap();
        assert_eq!(v1.coeff("z1").to_string(), "-z2");
        assert_eq!(v1.coeff("z2").to_string(), "z1");
        assert_eq!(v1.coeff("theta").to_string(), "1");
        let res = symmetry_residual(&car(), &v1, &Tolerances::default());
        assert!(res.is_symmetry());
        let dtheta = VectorField::from_pairs(&car().coords(), &[("theta", Expr::one())]);
        let res = symmetry_residual(&car(), &dtheta, &Tolerances::default());
        assert!(!res.is_symmetry());
        assert_eq!(res.entries[0].expr.to_string(), "v*sin(theta)");
        assert_eq!(res.entries[1].expr.to_string(), "-v*cos(theta)");
    }

    #[test]
    fn determining_equations_for_single_integrator() {
        let sys = ControlSystem::new("int", &["x"], &["u"], &[], vec![parse("u").unwrap()]).unwrap();
        let opts = ParseOptions::with_opaque(["xi", "eta", "phi"]);
        let ansatz = VectorField::from_pairs(
            &sys.coords(),
            &[
                ("t", parse_with("xi(t)", &opts).unwrap()),
                ("x", parse_with("eta(t, x)", &opts).unwrap()),
                ("u", parse_with("phi(t, x, u)", &opts).unwrap()),
            ],
        );
        let de = determining_equations(&sys, &ansatz);
        assert!(de.input_block[0].2.is_zero_literal());
        let hand = parse_with("u*diff(eta(t, x), x) + diff(eta(t, x), t) - u*diff(xi(t), t) - phi(t, x, u)", &opts).unwrap();
        assert!(is_zero_with(&(de.base_block[0].1.clone() - hand), &Default::default()).is_zero());
        let opts2 = ParseOptions::with_opaque(["xi", "eta", "phi"]);
        let ansatz_u = ansatz.clone().with("t", parse_with("xi(t, u)", &opts2).unwrap());
        let de = determining_equations(&sys, &ansatz_u);
        let hand = parse_with("-u*diff(xi(t, u), u)", &opts2).unwrap();
        assert!(is_zero_with(&(de.input_block[0].2.clone() - hand), &Default::default()).is_zero());
    }

    #[test]
    fn non_closing_pair() {
        let c = vec!["x".to_string()];
        let d = VectorField::from_pairs(&c, &[("x", Expr::one())]);
        let q = VectorField::from_pairs(&c, &[("x", parse("x^2").unwrap())]);
        let sc = structure_constants(&[d.clone(), q], &Tolerances::default()).unwrap();
        assert!(!sc.closed);
        let y = VectorField::from_pairs(&["x".to_string(), "y".to_string()], &[("y", Expr::one())]);
        let sc = structure_constants(&[d, y], &Tolerances::default()).unwrap();
        assert!(sc.closed);
        assert!(sc.table.iter().flatten().flatten().all(|c| c.is_zero()));
    }
}
