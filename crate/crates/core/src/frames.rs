//! Moving frames: normalization of group parameters, invariants, invariant
//! tracking errors and compatibility of outputs with a symmetry group.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{
    add, differentiate, eval, is_zero_with, mul, numer_denom, simplify, EvalError, Expr, ZeroVerdict,
};
use crate::geometry::{lie_bracket, total_derivative, VectorField};
use crate::linalg::{newton, pivot_columns, rank, NewtonError};
use crate::symmetry::{GroupAction, SymmetryError};
use crate::system::{deriv_name, split_deriv, ControlSystem};
use crate::Tolerances;

pub const MAX_ORDER: usize = 4;
const NEWTON_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrameError {
    #[error(transparent)]
    Symmetry(#[from] SymmetryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("prolonged action is not locally free up to order {max} (rank {rank} < {r})")]
    NotFree { max: usize, rank: usize, r: usize },
    #[error("{got} normalization components given, {expected} needed")]
    ComponentCount { expected: usize, got: usize },
    #[error("`{0}` is not a coordinate of the (prolonged) action")]
    UnknownComponent(String),
    #[error("normalization Jacobian has rank {rank} < {expected}")]
    RankDeficient { rank: usize, expected: usize },
    #[error("normalization solve failed: {0}")]
    Newton(#[from] NewtonError),
    #[error("frame is singular along the reference at t = {time}")]
    Singular { time: f64 },
    #[error("output differentials have rank {rank} < {expected}")]
    OutputRank { rank: usize, expected: usize },
    #[error("zero test undecidable: {0}")]
    Undecidable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    Symbolic,
    Numeric,
}

/// Extends an action on `coords` to the jet coordinates `c_dk`, `k <= order`,
/// by total differentiation with time unchanged.
pub fn prolong_action(action: &GroupAction, time: &str, order: usize) -> GroupAction {
    let base: Vec<String> = action.coords.iter().filter(|c| split_deriv(c).1 == 0).cloned().collect();
    let mut out = GroupAction {
        name: action.name.clone(),
        params: action.params.clone(),
        coords: base.clone(),
        maps: base.iter().map(|c| (c.clone(), action.image(c))).collect(),
        compose: action.compose.clone(),
    };
    for k in 1..=order {
        for c in &base {
            let prev = out.image(&deriv_name(c, k - 1));
            let next = total_derivative(&prev, time, &base);
            let name = deriv_name(c, k);
            out.coords.push(name.clone());
            out.maps.insert(name, next);
        }
    }
    out
}

/// Deterministic generic point: every symbol in `[0.3, 1.7]`.
pub fn anchor_point(symbols: &[String], seed: u64) -> HashMap<String, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    symbols.iter().map(|s| (s.clone(), rng.gen_range(0.3..1.7))).collect()
}

fn param_jacobian(action: &GroupAction, rows: &[String], at: &HashMap<String, f64>) -> Result<DMatrix<f64>, EvalError> {
    let mut env = at.clone();
    for p in &action.params {
        env.insert(p.clone(), 0.0);
    }
    let mut j = DMatrix::zeros(rows.len(), action.r());
    for (i, c) in rows.iter().enumerate() {
        let img = action.image(c);
        for (k, p) in action.params.iter().enumerate() {
            j[(i, k)] = eval(&differentiate(&img, p), &env)?;
        }
    }
    Ok(j)
}

fn fill_anchor(action: &GroupAction, anchor: Option<&HashMap<String, f64>>, extra: &HashMap<String, f64>) -> HashMap<String, f64> {
    let mut syms: Vec<String> = action.coords.clone();
    for e in action.maps.values() {
        for s in e.free_symbols() {
            if !syms.contains(&s) && !action.params.contains(&s) {
                syms.push(s);
            }
        }
    }
    let mut env = anchor_point(&syms, 0xf4a3e);
    env.extend(extra.iter().map(|(k, v)| (k.clone(), *v)));
    if let Some(a) = anchor {
        env.extend(a.iter().map(|(k, v)| (k.clone(), *v)));
    }
    env
}

/// Smallest prolongation order at which `d(pr phi)/da` at `a = 0` has full
/// rank `r` at the anchor.
pub fn freeness_order(
    action: &GroupAction,
    anchor: Option<&HashMap<String, f64>>,
    model: &HashMap<String, f64>,
    tol: &Tolerances,
) -> Result<usize, FrameError> {
    let mut last = 0;
    for d in 0..=MAX_ORDER {
        let pa = prolong_action(action, "t", d);
        let env = fill_anchor(&pa, anchor, model);
        let j = param_jacobian(&pa, &pa.coords, &env)?;
        last = rank(&j, tol.num);
        if last == action.r() {
            return Ok(d);
        }
    }
    Err(FrameError::NotFree {
        max: MAX_ORDER,
        rank: last,
        r: action.r(),
    })
}

/// Solved normalization `a = gamma(z)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Gamma {
    /// Closed form per group parameter.
    Symbolic(Vec<Expr>),
    /// Newton solve of the normalization equations at each point.
    Numeric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MovingFrame {
    pub name: String,
    /// Action prolonged to `order`.
    pub action: GroupAction,
    pub order: usize,
    pub components: Vec<String>,
    pub constants: Vec<Expr>,
    pub gamma: Gamma,
    /// Normalization equations `phi_c - c` in the group parameters.
    pub equations: Vec<Expr>,
    jacobian: Vec<Vec<Expr>>,
    pub model: HashMap<String, f64>,
}

impl MovingFrame {
    pub fn is_symbolic(&self) -> bool {
        matches!(self.gamma, Gamma::Symbolic(_))
    }

    pub fn gamma_exprs(&self) -> Option<&[Expr]> {
        match &self.gamma {
            Gamma::Symbolic(g) => Some(g),
            Gamma::Numeric => None,
        }
    }

    /// Base (order zero) coordinates acted on.
    pub fn base_coords(&self) -> Vec<String> {
        self.action.coords.iter().filter(|c| split_deriv(c).1 == 0).cloned().collect()
    }

    /// Coordinates left free by the normalization.
    pub fn free_coords(&self) -> Vec<String> {
        self.action.coords.iter().filter(|c| !self.components.contains(c)).cloned().collect()
    }

    /// `gamma` at a point; `warm` seeds the Newton solve in numeric mode.
    pub fn gamma_at(&self, env: &HashMap<String, f64>, warm: Option<&[f64]>, tol: &Tolerances) -> Result<Vec<f64>, FrameError> {
        let mut env = env.clone();
        for (k, v) in &self.model {
            env.entry(k.clone()).or_insert(*v);
        }
        match &self.gamma {
            Gamma::Symbolic(g) => Ok(g.iter().map(|e| eval(e, &env)).collect::<Result<_, _>>()?),
            Gamma::Numeric => {
                let params = &self.action.params;
                let with = |a: &[f64]| {
                    let mut e = env.clone();
                    for (p, v) in params.iter().zip(a) {
                        e.insert(p.clone(), *v);
                    }
                    e
                };
                let f = |a: &[f64]| {
                    let e = with(a);
                    self.equations.iter().map(|q| eval(q, &e).ok()).collect::<Option<Vec<f64>>>()
                };
                let j = |a: &[f64]| {
                    let e = with(a);
                    let mut m = DMatrix::zeros(self.equations.len(), params.len());
                    for (i, row) in self.jacobian.iter().enumerate() {
                        for (k, d) in row.iter().enumerate() {
                            m[(i, k)] = eval(d, &e).ok()?;
                        }
                    }
                    Some(m)
                };
                let zero = vec![0.0; params.len()];
                Ok(newton(f, j, warm.unwrap_or(&zero), tol.newton, NEWTON_ITERS)?)
            }
        }
    }

    /// Applies the group element `a` to a point of the prolonged space.
    pub fn act(&self, env: &HashMap<String, f64>, a: &[f64]) -> Result<HashMap<String, f64>, EvalError> {
        let mut e = env.clone();
        for (k, v) in &self.model {
            e.entry(k.clone()).or_insert(*v);
        }
        for (p, v) in self.action.params.iter().zip(a) {
            e.insert(p.clone(), *v);
        }
        self.action.apply_numeric(&e)
    }
}

/// Solves `eq = 0` for `p` with the pattern rules: affine in `p`, affine in
/// `exp(p)`, or homogeneous in `cos p`, `sin p`.
pub fn solve_for(eq: &Expr, p: &str) -> Option<Expr> {
    let d = differentiate(eq, p);
    if !d.contains_var(p) && !d.is_zero_literal() {
        let e0 = eq.subs_one(p, &Expr::zero());
        return Some(simplify(&(Expr::int(-1) * e0 / d)));
    }
    let (num, _) = numer_denom(eq)?;
    if !num.contains_var(p) {
        return None;
    }
    let d = differentiate(&num, p);
    if !d.contains_var(p) && !d.is_zero_literal() {
        let n0 = num.subs_one(p, &Expr::zero());
        return Some(simplify(&(Expr::int(-1) * n0 / d)));
    }
    let pv = Expr::var(p);
    let w = Expr::var("__w");
    let nw = simplify(&num.replace(&Expr::exp(pv.clone()), &w));
    if !nw.contains_var(p) {
        let dw = differentiate(&nw, "__w");
        if !dw.contains_var("__w") && !dw.is_zero_literal() {
            let w0 = Expr::int(-1) * nw.subs_one("__w", &Expr::zero()) / dw;
            return Some(simplify(&Expr::ln(w0)));
        }
    }
    let s = Expr::var("__s");
    let c = Expr::var("__c");
    let ns = simplify(&num.replace(&Expr::sin(pv.clone()), &s).replace(&Expr::cos(pv), &c));
    if !ns.contains_var(p) {
        let ds = differentiate(&ns, "__s");
        let dc = differentiate(&ns, "__c");
        let free = |e: &Expr| !e.contains_var("__s") && !e.contains_var("__c");
        let mut z = BTreeMap::new();
        z.insert("__s".to_string(), Expr::zero());
        z.insert("__c".to_string(), Expr::zero());
        let rest = simplify(&ns.subs(&z));
        if free(&ds) && free(&dc) && rest.is_zero_literal() {
            // dc cos p + ds sin p = 0
            return Some(simplify(&Expr::atan2(Expr::int(-1) * dc, ds)));
        }
    }
    None
}

pub(crate) fn symbolic_solve(eqs: &[Expr], params: &[String], tol: &Tolerances) -> Option<Vec<Expr>> {
    let mut eqs: Vec<Expr> = eqs.iter().map(simplify).collect();
    let mut sol: BTreeMap<String, Expr> = BTreeMap::new();
    let mut remaining: Vec<usize> = (0..eqs.len()).collect();
    while !remaining.is_empty() {
        let unsolved = |e: &Expr| -> Vec<String> {
            params.iter().filter(|p| !sol.contains_key(*p) && e.contains_var(p)).cloned().collect()
        };
        let mut order = remaining.clone();
        order.sort_by_key(|i| unsolved(&eqs[*i]).len());
        let mut found = None;
        'search: for i in order {
            for p in unsolved(&eqs[i]) {
                if let Some(s) = solve_for(&eqs[i], &p) {
                    found = Some((i, p, s));
                    break 'search;
                }
            }
        }
        let (i, p, s) = found?;
        let one: BTreeMap<String, Expr> = [(p.clone(), s.clone())].into_iter().collect();
        for e in eqs.iter_mut() {
            *e = simplify(&e.subs(&one));
        }
        for v in sol.values_mut() {
            *v = simplify(&v.subs(&one));
        }
        sol.insert(p, s);
        remaining.retain(|k| *k != i);
    }
    let out: Vec<Expr> = params.iter().map(|p| sol.get(p).cloned()).collect::<Option<_>>()?;
    let _ = tol;
    Some(out)
}

/// Builds a moving frame by normalizing `components` of the action
/// prolonged to `order` (the freeness order when `None`) to `constants`.
/// With no components given they are picked greedily at the anchor and
/// normalized to their anchor values.
#[allow(clippy::too_many_arguments)]
pub fn solve_frame(
    name: &str,
    action: &GroupAction,
    order: Option<usize>,
    components: &[String],
    constants: &[Expr],
    mode: SolveMode,
    model: &HashMap<String, f64>,
    tol: &Tolerances,
) -> Result<MovingFrame, FrameError> {
    let order = match order {
        Some(o) => o,
        None => freeness_order(action, None, model, tol)?,
    };
    let pa = prolong_action(action, "t", order);
    let anchor = fill_anchor(&pa, None, model);
    let (components, constants) = if components.is_empty() {
        let j = param_jacobian(&pa, &pa.coords, &anchor)?;
        let rows = pivot_columns(&j.transpose(), pa.r(), tol.num);
        let comps: Vec<String> = rows.iter().map(|i| pa.coords[*i].clone()).collect();
        let consts: Vec<Expr> = comps.iter().map(|c| Expr::from_f64(anchor[c])).collect();
        (comps, consts)
    } else {
        (components.to_vec(), constants.to_vec())
    };
    if components.len() != pa.r() || constants.len() != components.len() {
        return Err(FrameError::ComponentCount {
            expected: pa.r(),
            got: components.len(),
        });
    }
    for c in &components {
        if !pa.coords.contains(c) {
            return Err(FrameError::UnknownComponent(c.clone()));
        }
    }
    let j = param_jacobian(&pa, &components, &anchor)?;
    let rk = rank(&j, tol.num);
    if rk < pa.r() {
        return Err(FrameError::RankDeficient {
            rank: rk,
            expected: pa.r(),
        });
    }
    let msub: BTreeMap<String, Expr> = model.iter().map(|(k, v)| (k.clone(), Expr::from_f64(*v))).collect();
    let _ = msub;
    let equations: Vec<Expr> = components
        .iter()
        .zip(&constants)
        .map(|(c, k)| simplify(&(pa.image(c) - k.clone())))
        .collect();
    let jacobian: Vec<Vec<Expr>> = equations
        .iter()
        .map(|e| pa.params.iter().map(|p| differentiate(e, p)).collect())
        .collect();
    let mut gamma = Gamma::Numeric;
    if mode == SolveMode::Symbolic {
        if let Some(g) = symbolic_solve(&equations, &pa.params, tol) {
            let sub: BTreeMap<String, Expr> = pa.params.iter().cloned().zip(g.iter().cloned()).collect();
            let ok = equations
                .iter()
                .all(|e| is_zero_with(&e.subs(&sub), &tol.zero_test()).is_zero());
            if ok {
                gamma = Gamma::Symbolic(g);
            }
        }
    }
    Ok(MovingFrame {
        name: name.to_string(),
        action: pa,
        order,
        components,
        constants,
        gamma,
        equations,
        jacobian,
        model: model.clone(),
    })
}

/// Invariants obtained by substituting the frame into the free components.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantSet {
    pub frame: MovingFrame,
    pub coords: Vec<String>,
    /// Closed forms when the frame is symbolic.
    pub exprs: Option<Vec<Expr>>,
}

pub fn invariants(frame: &MovingFrame) -> InvariantSet {
    let coords = frame.free_coords();
    let exprs = frame.gamma_exprs().map(|g| {
        let sub: BTreeMap<String, Expr> = frame.action.params.iter().cloned().zip(g.iter().cloned()).collect();
        coords.iter().map(|c| simplify(&frame.action.image(c).subs(&sub))).collect()
    });
    InvariantSet {
        frame: frame.clone(),
        coords,
        exprs,
    }
}

impl InvariantSet {
    pub fn eval(&self, env: &HashMap<String, f64>, tol: &Tolerances) -> Result<Vec<f64>, FrameError> {
        let mut full = env.clone();
        for (k, v) in &self.frame.model {
            full.entry(k.clone()).or_insert(*v);
        }
        if let Some(ex) = &self.exprs {
            return Ok(ex.iter().map(|e| eval(e, &full)).collect::<Result<_, _>>()?);
        }
        let g = self.frame.gamma_at(&full, None, tol)?;
        let img = self.frame.act(&full, &g)?;
        Ok(self.coords.iter().map(|c| img[c]).collect())
    }

    /// Largest `|I(g z) - I(z)|` over random points and group elements.
    pub fn invariance_error(&self, samples: usize, seed: u64, tol: &Tolerances) -> Result<f64, FrameError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let mut done = 0;
        let mut tries = 0;
        while done < samples && tries < samples * 20 {
            tries += 1;
            let z: HashMap<String, f64> = self.frame.action.coords.iter().map(|c| (c.clone(), rng.gen_range(0.3..1.7))).collect();
            let a: Vec<f64> = self.frame.action.params.iter().map(|_| rng.gen_range(-0.8..0.8)).collect();
            let Ok(i0) = self.eval(&z, tol) else { continue };
            let Ok(gz) = self.frame.act(&z, &a) else { continue };
            let Ok(i1) = self.eval(&gz, tol) else { continue };
            for (x, y) in i0.iter().zip(&i1) {
                worst = worst.max((x - y).abs());
            }
            done += 1;
        }
        if done < samples {
            return Err(FrameError::Eval(EvalError::Domain {
                what: "too few valid samples",
                expr: Expr::zero(),
            }));
        }
        Ok(worst)
    }

    /// Rank of the invariants' Jacobian at random points (minimum).
    pub fn independence_rank(&self, samples: usize, seed: u64, tol: &Tolerances) -> Result<usize, FrameError> {
        let coords = &self.frame.action.coords;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut min_rank = usize::MAX;
        for _ in 0..samples {
            let z: HashMap<String, f64> = coords.iter().map(|c| (c.clone(), rng.gen_range(0.3..1.7))).collect();
            let mut j = DMatrix::zeros(self.coords.len(), coords.len());
            for (k, c) in coords.iter().enumerate() {
                let h = 1e-6;
                let mut zp = z.clone();
                let mut zm = z.clone();
                *zp.get_mut(c).unwrap() += h;
                *zm.get_mut(c).unwrap() -= h;
                let ip = self.eval(&zp, tol)?;
                let im = self.eval(&zm, tol)?;
                for i in 0..self.coords.len() {
                    j[(i, k)] = (ip[i] - im[i]) / (2.0 * h);
                }
            }
            min_rank = min_rank.min(rank(&j, 1e-6));
        }
        Ok(min_rank)
    }
}

/// Reference copy of a jet coordinate: `y1_d2 -> y1_ref_d2`.
pub fn ref_name(c: &str) -> String {
    let (b, k) = split_deriv(c);
    deriv_name(&format!("{b}_ref"), k)
}

/// Invariant tracking error `e = I(y, ref) - I(y_ref, ref)` with the frame
/// evaluated on the reference jet.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingError {
    pub frame: MovingFrame,
    /// Tracked (order zero) coordinates.
    pub outputs: Vec<String>,
    pub exprs: Option<Vec<Expr>>,
}

pub fn tracking_error(frame: &MovingFrame) -> TrackingError {
    let outputs = frame.base_coords();
    let rename: BTreeMap<String, String> = frame.action.coords.iter().map(|c| (c.clone(), ref_name(c))).collect();
    let exprs = frame.gamma_exprs().map(|g| {
        let sub: BTreeMap<String, Expr> = frame
            .action
            .params
            .iter()
            .cloned()
            .zip(g.iter().map(|e| e.rename(&rename)))
            .collect();
        outputs
            .iter()
            .map(|y| {
                let img = frame.action.image(y);
                simplify(&(img.subs(&sub) - img.rename(&rename).subs(&sub)))
            })
            .collect()
    });
    TrackingError {
        frame: frame.clone(),
        outputs,
        exprs,
    }
}

impl TrackingError {
    /// Names of the reference jet symbols the error depends on.
    pub fn reference_symbols(&self) -> Vec<String> {
        self.frame.action.coords.iter().map(|c| ref_name(c)).collect()
    }

    /// `e` at output values `y` and reference jet `reference` (keyed by
    /// the reference names).
    pub fn eval(&self, y: &HashMap<String, f64>, reference: &HashMap<String, f64>, tol: &Tolerances) -> Result<Vec<f64>, FrameError> {
        let mut env: HashMap<String, f64> = self.frame.model.clone();
        env.extend(y.iter().map(|(k, v)| (k.clone(), *v)));
        env.extend(reference.iter().map(|(k, v)| (k.clone(), *v)));
        if let Some(ex) = &self.exprs {
            return Ok(ex.iter().map(|e| eval(e, &env)).collect::<Result<_, _>>()?);
        }
        let at_ref: HashMap<String, f64> = self
            .frame
            .action
            .coords
            .iter()
            .filter_map(|c| reference.get(&ref_name(c)).map(|v| (c.clone(), *v)))
            .collect();
        let g = self.frame.gamma_at(&at_ref, None, tol)?;
        let gy = self.frame.act(&env, &g)?;
        let gr = self.frame.act(&at_ref, &g)?;
        Ok(self.outputs.iter().map(|c| gy[c] - gr[c]).collect())
    }

    /// `e(y_ref, ref) = 0` decided by the zero test.
    pub fn vanishes_on_reference(&self, tol: &Tolerances) -> Option<bool> {
        let ex = self.exprs.as_ref()?;
        let sub: BTreeMap<String, Expr> = self.outputs.iter().map(|y| (y.clone(), Expr::var(&ref_name(y)))).collect();
        Some(ex.iter().all(|e| is_zero_with(&e.subs(&sub), &tol.zero_test()).is_zero()))
    }

    /// Largest change of `e` when the same random group element acts on
    /// both `y` and the reference jet.
    pub fn invariance_error(&self, samples: usize, seed: u64, tol: &Tolerances) -> Result<f64, FrameError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = &self.frame.action.coords;
        let mut worst: f64 = 0.0;
        let mut done = 0;
        let mut tries = 0;
        while done < samples && tries < samples * 20 {
            tries += 1;
            let r: HashMap<String, f64> = coords.iter().map(|c| (c.clone(), rng.gen_range(0.3..1.7))).collect();
            let y: HashMap<String, f64> = self.outputs.iter().map(|c| (c.clone(), rng.gen_range(0.3..1.7))).collect();
            let a: Vec<f64> = self.frame.action.params.iter().map(|_| rng.gen_range(-0.8..0.8)).collect();
            let rref: HashMap<String, f64> = r.iter().map(|(k, v)| (ref_name(k), *v)).collect();
            let Ok(e0) = self.eval(&y, &rref, tol) else { continue };
            let Ok(gr) = self.frame.act(&r, &a) else { continue };
            let mut yfull = r.clone();
            yfull.extend(y.iter().map(|(k, v)| (k.clone(), *v)));
            let Ok(gy) = self.frame.act(&yfull, &a) else { continue };
            let gy: HashMap<String, f64> = self.outputs.iter().map(|c| (c.clone(), gy[c])).collect();
            let grref: HashMap<String, f64> = coords.iter().map(|k| (ref_name(k), gr[k])).collect();
            let Ok(e1) = self.eval(&gy, &grref, tol) else { continue };
            for (u, v) in e0.iter().zip(&e1) {
                worst = worst.max((u - v).abs());
            }
            done += 1;
        }
        if done < samples {
            return Err(FrameError::Eval(EvalError::Domain {
                what: "too few valid samples",
                expr: Expr::zero(),
            }));
        }
        Ok(worst)
    }

    /// Checks local invertibility of `e` in `y` along a sampled reference.
    pub fn check_along(
        &self,
        reference: &[(f64, HashMap<String, f64>)],
        tol: &Tolerances,
    ) -> Result<(), FrameError> {
        for (t, r) in reference {
            let y0: HashMap<String, f64> = self.outputs.iter().map(|c| (c.clone(), r[&ref_name(c)])).collect();
            let m = self.outputs.len();
            let mut j = DMatrix::zeros(m, m);
            for (k, c) in self.outputs.iter().enumerate() {
                let h = 1e-6;
                let mut yp = y0.clone();
                let mut ym = y0.clone();
                *yp.get_mut(c).unwrap() += h;
                *ym.get_mut(c).unwrap() -= h;
                let ep = self.eval(&yp, r, tol).map_err(|_| FrameError::Singular { time: *t })?;
                let em = self.eval(&ym, r, tol).map_err(|_| FrameError::Singular { time: *t })?;
                for i in 0..m {
                    j[(i, k)] = (ep[i] - em[i]) / (2.0 * h);
                }
            }
            if rank(&j, 1e-6) < m {
                return Err(FrameError::Singular { time: *t });
            }
        }
        Ok(())
    }
}

/// Outcome of the output compatibility test.
#[derive(Debug, Clone, PartialEq)]
pub struct GCompat {
    pub compatible: bool,
    /// `(annihilator index, generator index, output index, residual)` for
    /// every nonvanishing pairing.
    pub failures: Vec<(usize, usize, usize, Expr)>,
    pub annihilator: Vec<VectorField>,
    /// `L_{v_k} h^i` per generator.
    pub induced: Vec<Vec<Expr>>,
    /// Induced generators written in the output symbols when possible.
    pub induced_on_outputs: Option<Vec<VectorField>>,
    /// Numeric check that the induced generators are constant on fibers of
    /// `h` at random points.
    pub fiber_consistent: bool,
}

pub(crate) fn det(m: &[Vec<Expr>]) -> Expr {
    match m.len() {
        0 => Expr::one(),
        1 => m[0][0].clone(),
        n => {
            let mut terms = Vec::new();
            for j in 0..n {
                let minor: Vec<Vec<Expr>> = m[1..]
                    .iter()
                    .map(|row| row.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, e)| e.clone()).collect())
                    .collect();
                let sign = if j % 2 == 0 { 1 } else { -1 };
                terms.push(mul(vec![Expr::int(sign), m[0][j].clone(), det(&minor)]));
            }
            simplify(&add(terms))
        }
    }
}

/// Checks whether the kernel of `dh` is preserved by the generators, so the
/// group induces an action on the outputs `h`.
pub fn check_g_compatible(
    sys: &ControlSystem,
    h: &[Expr],
    gens: &[VectorField],
    tol: &Tolerances,
) -> Result<GCompat, FrameError> {
    let xs = &sys.states;
    let n = xs.len();
    let m = h.len();
    let dh: Vec<Vec<Expr>> = h.iter().map(|hi| xs.iter().map(|x| differentiate(hi, x)).collect()).collect();
    let model = sys.param_env();
    let mut syms: Vec<String> = xs.clone();
    for g in gens {
        for e in g.coeffs.values() {
            syms.extend(e.free_symbols());
        }
    }
    for s in h.iter().flat_map(|e| e.free_symbols()) {
        syms.push(s);
    }
    syms.sort();
    syms.dedup();
    let anchor = {
        let mut a = anchor_point(&syms, 0x9c0);
        a.extend(model.clone());
        a
    };
    let jnum = |env: &HashMap<String, f64>| -> Result<DMatrix<f64>, EvalError> {
        let mut j = DMatrix::zeros(m, n);
        for i in 0..m {
            for k in 0..n {
                j[(i, k)] = eval(&dh[i][k], env)?;
            }
        }
        Ok(j)
    };
    let j0 = jnum(&anchor)?;
    let rk = rank(&j0, tol.num);
    if rk < m || m > n {
        return Err(FrameError::OutputRank { rank: rk, expected: m });
    }
    let pivots = pivot_columns(&j0, m, tol.num);
    let free: Vec<usize> = (0..n).filter(|k| !pivots.contains(k)).collect();
    let jp: Vec<Vec<Expr>> = (0..m).map(|i| pivots.iter().map(|k| dh[i][*k].clone()).collect()).collect();
    let d = det(&jp);
    // adjugate of J_P
    let adj: Vec<Vec<Expr>> = (0..m)
        .map(|r| {
            (0..m)
                .map(|c| {
                    let minor: Vec<Vec<Expr>> = (0..m)
                        .filter(|i| *i != c)
                        .map(|i| (0..m).filter(|k| *k != r).map(|k| jp[i][k].clone()).collect())
                        .collect();
                    let sign = if (r + c) % 2 == 0 { 1 } else { -1 };
                    simplify(&(Expr::int(sign) * det(&minor)))
                })
                .collect()
        })
        .collect();
    let mut coords = sys.coords();
    for g in gens {
        for c in &g.coords {
            if !coords.contains(c) {
                coords.push(c.clone());
            }
        }
    }
    let mut annihilator = Vec::new();
    for f in &free {
        let mut w = VectorField::new(&coords).with(&xs[*f], d.clone());
        for (r, p) in pivots.iter().enumerate() {
            let s: Vec<Expr> = (0..m).map(|c| adj[r][c].clone() * dh[c][*f].clone()).collect();
            w = w.with(&xs[*p], simplify(&(Expr::int(-1) * add(s))));
        }
        annihilator.push(w);
    }
    let gens_full: Vec<VectorField> = gens.iter().map(|g| g.restrict(&coords)).collect();
    let mut failures = Vec::new();
    for (wi, w) in annihilator.iter().enumerate() {
        for (k, v) in gens_full.iter().enumerate() {
            let b = lie_bracket(w, v).map_err(SymmetryError::from)?;
            for (i, hi) in h.iter().enumerate() {
                let pairing = simplify(&b.apply(hi));
                match is_zero_with(&pairing, &tol.zero_test()) {
                    ZeroVerdict::Zero(_) => {}
                    ZeroVerdict::NonZero(_) => failures.push((wi, k, i, pairing)),
                    ZeroVerdict::Undecidable => return Err(FrameError::Undecidable(format!("<dh{i}, [w{wi}, v{k}]>"))),
                }
            }
        }
    }
    let compatible = failures.is_empty();
    let induced: Vec<Vec<Expr>> = gens_full.iter().map(|v| h.iter().map(|hi| v.apply(hi)).collect()).collect();
    let out_names: Vec<String> = (1..=m).map(|i| format!("y{i}")).collect();
    let plain: Option<BTreeMap<String, String>> = h
        .iter()
        .zip(&out_names)
        .map(|(hi, y)| hi.as_var().map(|x| (x.to_string(), y.clone())))
        .collect();
    let induced_on_outputs = plain.and_then(|ren| {
        let allowed: Vec<&String> = ren.keys().collect();
        induced
            .iter()
            .map(|row| {
                let ok = row
                    .iter()
                    .all(|e| e.free_symbols().iter().all(|s| allowed.contains(&s) || !xs.contains(s)));
                if !ok {
                    return None;
                }
                let mut v = VectorField::new(&out_names);
                for (e, y) in row.iter().zip(&out_names) {
                    v = v.with(y, e.rename(&ren));
                }
                Some(v)
            })
            .collect()
    });
    let fiber_consistent = if compatible {
        fiber_check(sys, h, &dh, &pivots, &induced, &model, tol)
    } else {
        false
    };
    Ok(GCompat {
        compatible,
        failures,
        annihilator,
        induced,
        induced_on_outputs,
        fiber_consistent,
    })
}

fn fiber_check(
    sys: &ControlSystem,
    h: &[Expr],
    dh: &[Vec<Expr>],
    pivots: &[usize],
    induced: &[Vec<Expr>],
    model: &HashMap<String, f64>,
    tol: &Tolerances,
) -> bool {
    let xs = &sys.states;
    let mut rng = ChaCha8Rng::seed_from_u64(0xf1be7);
    let mut syms: Vec<String> = sys.coords();
    for row in induced {
        for e in row {
            syms.extend(e.free_symbols());
        }
    }
    syms.sort();
    syms.dedup();
    let mut checked = 0;
    for _ in 0..40 {
        if checked == 10 {
            break;
        }
        let mut x: HashMap<String, f64> = syms.iter().map(|s| (s.clone(), rng.gen_range(0.3..1.7))).collect();
        x.extend(model.clone());
        let Ok(target) = h.iter().map(|e| eval(e, &x)).collect::<Result<Vec<f64>, _>>() else { continue };
        let mut x2 = x.clone();
        for (k, s) in xs.iter().enumerate() {
            if !pivots.contains(&k) {
                *x2.get_mut(s).unwrap() += rng.gen_range(-0.3..0.3);
            }
        }
        let piv_names: Vec<String> = pivots.iter().map(|k| xs[*k].clone()).collect();
        let start: Vec<f64> = piv_names.iter().map(|s| x2[s]).collect();
        let with = |v: &[f64]| {
            let mut e = x2.clone();
            for (s, val) in piv_names.iter().zip(v) {
                e.insert(s.clone(), *val);
            }
            e
        };
        let f = |v: &[f64]| {
            let e = with(v);
            h.iter().zip(&target).map(|(hi, t)| eval(hi, &e).ok().map(|y| y - t)).collect::<Option<Vec<f64>>>()
        };
        let jac = |v: &[f64]| {
            let e = with(v);
            let mut j = DMatrix::zeros(h.len(), pivots.len());
            for i in 0..h.len() {
                for (c, k) in pivots.iter().enumerate() {
                    j[(i, c)] = eval(&dh[i][*k], &e).ok()?;
                }
            }
            Some(j)
        };
        let Ok(sol) = newton(f, jac, &start, tol.newton.max(1e-13), NEWTON_ITERS) else { continue };
        let x2 = with(&sol);
        for row in induced {
            for e in row {
                let (Ok(a), Ok(b)) = (eval(e, &x), eval(e, &x2)) else { return false };
                if (a - b).abs() > tol.num * a.abs().max(1.0) {
                    return false;
                }
            }
        }
        checked += 1;
    }
    checked == 10
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn se2_output() -> GroupAction {
        GroupAction::new(
            "se2_output",
            &["a", "b1", "b2"],
            &[
                ("y1", parse("y1*cos(a) - y2*sin(a) + b1").unwrap()),
                ("y2", parse("y1*sin(a) + y2*cos(a) + b2").unwrap()),
            ],
        )
    }

    #[test]
    fn freeness_orders() {
        let tol = Tolerances::default();
        let none = HashMap::new();
        assert_eq!(freeness_order(&se2_output(), None, &none, &tol).unwrap(), 1);
        let tr = GroupAction::new("tr", &["a"], &[("y", parse("y + a").unwrap())]);
        assert_eq!(freeness_order(&tr, None, &none, &tol).unwrap(), 0);
    }

    #[test]
    fn pattern_rules() {
        assert_eq!(solve_for(&parse("theta + a").unwrap(), "a").unwrap().to_string(), "-theta");
        assert_eq!(solve_for(&parse("exp(a)*y - 1").unwrap(), "a").unwrap().to_string(), "-ln(y)");
        let g = solve_for(&parse("y1*sin(a) + y2*cos(a)").unwrap(), "a").unwrap();
        assert_eq!(g.to_string(), "atan2(-y2, y1)");
    }

    #[test]
    fn scaling_frame_error() {
        let tol = Tolerances::default();
        let sc = GroupAction::new("scale", &["a"], &[("y", parse("exp(a)*y").unwrap())]);
        let f = solve_frame("s", &sc, Some(0), &["y".into()], &[Expr::one()], SolveMode::Symbolic, &HashMap::new(), &tol).unwrap();
        let te = tracking_error(&f);
        assert_eq!(te.exprs.as_ref().unwrap()[0].to_string(), "(y - y_ref)/y_ref");
        assert_eq!(te.vanishes_on_reference(&tol), Some(true));
    }

    #[test]
    fn se2_tracking_frame() {
        let tol = Tolerances::default();
        let comps: Vec<String> = ["y1", "y2", "y2_d1"].iter().map(|s| s.to_string()).collect();
        let f = solve_frame("trk", &se2_output(), None, &comps, &[Expr::zero(), Expr::zero(), Expr::zero()], SolveMode::Symbolic, &HashMap::new(), &tol).unwrap();
        assert!(f.is_symbolic());
        let te = tracking_error(&f);
        assert_eq!(te.vanishes_on_reference(&tol), Some(true));
        assert!(te.invariance_error(20, 7, &tol).unwrap() < 1e-8);
        // tangent/normal components on a reference moving along +y1
        let r: HashMap<String, f64> = [("y1_ref", 0.0), ("y2_ref", 0.0), ("y1_ref_d1", 2.0), ("y2_ref_d1", 0.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let y: HashMap<String, f64> = [("y1", 0.5), ("y2", -0.25)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let e = te.eval(&y, &r, &tol).unwrap();
        assert!((e[0] - 0.5).abs() < 1e-12 && (e[1] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn numeric_frame_matches_closed_form() {
        let tol = Tolerances::default();
        let sc = GroupAction::new("scale", &["a"], &[("y", parse("exp(a)*y").unwrap())]);
        let f = solve_frame("s", &sc, Some(0), &["y".into()], &[Expr::one()], SolveMode::Numeric, &HashMap::new(), &tol).unwrap();
        let env: HashMap<String, f64> = [("y".to_string(), 2.5)].into_iter().collect();
        let g = f.gamma_at(&env, None, &tol).unwrap();
        assert!((g[0] + 2.5f64.ln()).abs() < 1e-12);
    }
}
