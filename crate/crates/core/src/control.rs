//! Relative degree, input-output linearizing feedback with prescribed linear
//! error dynamics, and equivariance of tracking errors.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{add, differentiate, eval, is_zero_with, simplify, EvalError, Expr, ZeroVerdict};
use crate::frames::{det, prolong_action, ref_name};
use crate::geometry::total_derivative_with;
use crate::linalg::rank;
use crate::symmetry::GroupAction;
use crate::system::{deriv_name, split_deriv, ControlSystem};
use crate::Tolerances;

pub mod bioreactor;

const MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("output {0} has no relative degree up to the state dimension")]
    NoRelativeDegree(usize),
    #[error("decoupling matrix is singular (generic rank {rank} < {m}), relative degrees {r:?}")]
    SingularDecoupling {
        r: Vec<usize>,
        rank: usize,
        m: usize,
        matrix: Vec<Vec<Expr>>,
    },
    #[error("{outputs} outputs for {inputs} inputs")]
    NotSquare { outputs: usize, inputs: usize },
    #[error("relative degrees sum to {sum} < {n}; zero dynamics are not handled")]
    ZeroDynamics { sum: usize, n: usize },
    #[error("channel {channel}: {got} error coefficients given, {expected} needed")]
    CoefficientCount { channel: usize, expected: usize, got: usize },
    #[error("channel {0}: error polynomial is not Hurwitz")]
    NotHurwitz(usize),
    #[error("error dynamics of channel {0} are not affine in the inputs")]
    NotAffine(usize),
    #[error("closed loop does not reproduce the error dynamics on channel {0}")]
    ClosedLoop(usize),
    #[error("zero test undecidable: {0}")]
    Undecidable(String),
    #[error("{0} inputs are beyond the symbolic solver (at most 3)")]
    TooManyInputs(usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeDegree {
    pub r: Vec<usize>,
    /// Rows `d(L_f^{r_i} h^i)/du`.
    pub matrix: Vec<Vec<Expr>>,
    /// `L_f^k h^i` for `k = 0..=r_i`.
    pub lie: Vec<Vec<Expr>>,
}

fn nonzero(e: &Expr, tol: &Tolerances, what: &str) -> Result<bool, ControlError> {
    match is_zero_with(e, &tol.zero_test()) {
        ZeroVerdict::Zero(_) => Ok(false),
        ZeroVerdict::NonZero(_) => Ok(true),
        ZeroVerdict::Undecidable => Err(ControlError::Undecidable(what.to_string())),
    }
}

fn generic_rank(sys: &ControlSystem, m: &[Vec<Expr>], extra: &[String], tol: &Tolerances) -> Result<usize, ControlError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xdec0);
    let mut syms = sys.coords();
    syms.extend(extra.iter().cloned());
    let model = sys.param_env();
    let mut best = 0;
    let mut valid = 0;
    for _ in 0..40 {
        if valid == 10 {
            break;
        }
        let mut env: HashMap<String, f64> = syms.iter().map(|s| (s.clone(), rng.gen_range(0.3..1.7))).collect();
        for row in m {
            for e in row {
                for s in e.free_symbols() {
                    env.entry(s).or_insert_with(|| rng.gen_range(0.3..1.7));
                }
            }
        }
        env.extend(model.clone());
        let rows = m.len();
        let cols = m.first().map_or(0, |r| r.len());
        let mut a = DMatrix::zeros(rows, cols);
        let mut ok = true;
        for i in 0..rows {
            for j in 0..cols {
                match eval(&m[i][j], &env) {
                    Ok(v) => a[(i, j)] = v,
                    Err(_) => ok = false,
                }
            }
        }
        if ok {
            valid += 1;
            best = best.max(rank(&a, tol.num));
        }
    }
    Ok(best)
}

pub fn vector_relative_degree(sys: &ControlSystem, h: &[Expr], tol: &Tolerances) -> Result<RelativeDegree, ControlError> {
    let mut r = Vec::new();
    let mut matrix = Vec::new();
    let mut lie = Vec::new();
    for (i, hi) in h.iter().enumerate() {
        let mut chain = vec![simplify(hi)];
        let mut found = None;
        for k in 0..=sys.n() {
            let l = chain[k].clone();
            let row: Vec<Expr> = sys.inputs.iter().map(|u| differentiate(&l, u)).collect();
            let mut any = false;
            for (e, u) in row.iter().zip(&sys.inputs) {
                if nonzero(e, tol, &format!("d(L^{k} h{i})/d{u}"))? {
                    any = true;
                }
            }
            if any {
                found = Some((k, row));
                break;
            }
            chain.push(sys.lie_derivative(&l));
        }
        let (k, row) = found.ok_or(ControlError::NoRelativeDegree(i))?;
        chain.truncate(k + 1);
        r.push(k);
        matrix.push(row);
        lie.push(chain);
    }
    let m = sys.m();
    if h.len() != m {
        return Err(ControlError::NotSquare {
            outputs: h.len(),
            inputs: m,
        });
    }
    let rk = generic_rank(sys, &matrix, &[], tol)?;
    if rk < m {
        return Err(ControlError::SingularDecoupling { r, rank: rk, m, matrix });
    }
    Ok(RelativeDegree { r, matrix, lie })
}

/// Coefficients `c^0..c^{r-1}` of `e^(r) + sum c^j e^(j) = 0` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDynamicsSpec {
    pub coeffs: Vec<Vec<f64>>,
}

impl ErrorDynamicsSpec {
    /// All poles of channel `i` at `-pole`: coefficients of `(s + pole)^{r_i}`.
    pub fn repeated_pole(r: &[usize], pole: f64) -> ErrorDynamicsSpec {
        let coeffs = r
            .iter()
            .map(|&ri| {
                let mut c = vec![1.0];
                for _ in 0..ri {
                    let mut next = vec![0.0; c.len() + 1];
                    for (k, v) in c.iter().enumerate() {
                        next[k] += v * pole;
                        next[k + 1] += v;
                    }
                    c = next;
                }
                c.pop();
                c
            })
            .collect();
        ErrorDynamicsSpec { coeffs }
    }

    pub fn check(&self) -> Result<(), ControlError> {
        for (i, c) in self.coeffs.iter().enumerate() {
            if !is_hurwitz(c) {
                return Err(ControlError::NotHurwitz(i));
            }
        }
        Ok(())
    }
}

/// Routh test for the monic polynomial `s^r + c[r-1] s^{r-1} + ... + c[0]`.
pub fn is_hurwitz(c: &[f64]) -> bool {
    let r = c.len();
    if r == 0 {
        return true;
    }
    // descending coefficients
    let mut p = vec![1.0];
    p.extend(c.iter().rev());
    let mut rows: Vec<Vec<f64>> = vec![
        p.iter().step_by(2).cloned().collect(),
        p.iter().skip(1).step_by(2).cloned().collect(),
    ];
    let width = rows[0].len();
    for row in rows.iter_mut() {
        row.resize(width + 1, 0.0);
    }
    for _ in 2..=r {
        let a = &rows[rows.len() - 2];
        let b = &rows[rows.len() - 1];
        if b[0] <= MARGIN {
            return false;
        }
        let mut next = vec![0.0; width + 1];
        for k in 0..width {
            next[k] = (b[0] * a[k + 1] - a[0] * b[k + 1]) / b[0];
        }
        rows.push(next);
    }
    rows.iter().take(r + 1).all(|row| row[0] > MARGIN)
}

/// Tracking errors in output symbols and reference jet symbols
/// (`y_ref`, `y_ref_d1`, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSpec {
    pub outputs: Vec<String>,
    pub errors: Vec<Expr>,
}

impl ErrorSpec {
    /// `e^i = y^i - y^i_ref`.
    pub fn naive(outputs: &[&str]) -> ErrorSpec {
        ErrorSpec {
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            errors: outputs
                .iter()
                .map(|y| Expr::var(y) - Expr::var(&ref_name(y)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackLaw {
    pub inputs: Vec<String>,
    /// `u = U(x, reference jet)`.
    pub law: Vec<Expr>,
    /// Determinant of the decoupling system; the law is valid where it is
    /// nonzero.
    pub validity: Expr,
    /// Reference jet symbols the law reads.
    pub reference: Vec<String>,
    pub relative_degree: Vec<usize>,
}

fn reference_rates(outputs: &[String], order: usize) -> BTreeMap<String, Expr> {
    let mut r = BTreeMap::new();
    for y in outputs {
        for k in 0..=order {
            r.insert(ref_name(&deriv_name(y, k)), Expr::var(&ref_name(&deriv_name(y, k + 1))));
        }
    }
    r
}

/// Input-output linearizing feedback imposing the linear error dynamics
/// `spec` on the errors `err`, with outputs `err.outputs = h(x)`.
pub fn io_linearizing_feedback(
    sys: &ControlSystem,
    h: &[Expr],
    spec: &ErrorDynamicsSpec,
    err: &ErrorSpec,
    tol: &Tolerances,
) -> Result<FeedbackLaw, ControlError> {
    let rd = vector_relative_degree(sys, h, tol)?;
    let sum: usize = rd.r.iter().sum();
    if sum < sys.n() {
        return Err(ControlError::ZeroDynamics { sum, n: sys.n() });
    }
    for (i, (c, r)) in spec.coeffs.iter().zip(&rd.r).enumerate() {
        if c.len() != *r {
            return Err(ControlError::CoefficientCount {
                channel: i,
                expected: *r,
                got: c.len(),
            });
        }
    }
    if spec.coeffs.len() != rd.r.len() {
        return Err(ControlError::CoefficientCount {
            channel: spec.coeffs.len(),
            expected: rd.r.len(),
            got: spec.coeffs.len(),
        });
    }
    spec.check()?;
    let m = sys.m();
    if m > 3 {
        return Err(ControlError::TooManyInputs(m));
    }
    let maxr = rd.r.iter().cloned().max().unwrap_or(0);
    let mut rates = reference_rates(&err.outputs, maxr);
    for (x, f) in sys.states.iter().zip(&sys.dynamics) {
        rates.insert(x.clone(), f.clone());
    }
    let on_h: BTreeMap<String, Expr> = err.outputs.iter().cloned().zip(h.iter().cloned()).collect();
    let mut big_e = Vec::new();
    for (i, e) in err.errors.iter().enumerate() {
        let mut d = simplify(&e.subs(&on_h));
        let mut terms = Vec::new();
        for j in 0..rd.r[i] {
            terms.push(Expr::from_f64(spec.coeffs[i][j]) * d.clone());
            d = total_derivative_with(&d, &sys.time, &rates);
        }
        terms.push(d);
        big_e.push(simplify(&add(terms)));
    }
    // E = A u + b
    let zero_u: BTreeMap<String, Expr> = sys.inputs.iter().map(|u| (u.clone(), Expr::zero())).collect();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, e) in big_e.iter().enumerate() {
        let row: Vec<Expr> = sys.inputs.iter().map(|u| differentiate(e, u)).collect();
        for r in &row {
            for u in &sys.inputs {
                if nonzero(&differentiate(r, u), tol, "second input derivative")? {
                    return Err(ControlError::NotAffine(i));
                }
            }
        }
        a.push(row);
        b.push(simplify(&e.subs(&zero_u)));
    }
    let dt = det(&a);
    let mut law = Vec::new();
    for k in 0..m {
        let mut ak = a.clone();
        for i in 0..m {
            ak[i][k] = Expr::int(-1) * b[i].clone();
        }
        law.push(simplify(&(det(&ak) / dt.clone())));
    }
    let sub: BTreeMap<String, Expr> = sys.inputs.iter().cloned().zip(law.iter().cloned()).collect();
    for (i, e) in big_e.iter().enumerate() {
        if nonzero(&e.subs(&sub), tol, "closed-loop error dynamics")? {
            return Err(ControlError::ClosedLoop(i));
        }
    }
    let mut reference: Vec<String> = law
        .iter()
        .flat_map(|e| e.free_symbols())
        .filter(|s| err.outputs.iter().any(|y| split_deriv(s).0 == format!("{y}_ref")))
        .collect();
    reference.sort();
    reference.dedup();
    Ok(FeedbackLaw {
        inputs: sys.inputs.clone(),
        law,
        validity: dt,
        reference,
        relative_degree: rd.r,
    })
}

/// Per-parameter verdict of the equivariance test.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivarianceReport {
    pub equivariant: bool,
    pub per_param: Vec<(String, bool)>,
    pub residuals: Vec<Expr>,
}

/// Checks `e(g y, g y_ref) = e(y, y_ref)` identically in the group
/// parameters, where `induced` acts on the output symbols and its
/// prolongation on the reference jet.
pub fn check_error_equivariance(errors: &[Expr], induced: &GroupAction, tol: &Tolerances) -> Result<EquivarianceReport, ControlError> {
    let outputs: Vec<String> = induced.coords.clone();
    let mut order = 0;
    for e in errors {
        for s in e.free_symbols() {
            let (base, k) = split_deriv(&s);
            if outputs.iter().any(|y| format!("{y}_ref") == base) {
                order = order.max(k);
            }
        }
    }
    let pa = prolong_action(induced, "t", order);
    let mut sub: BTreeMap<String, Expr> = BTreeMap::new();
    let to_ref: BTreeMap<String, String> = pa.coords.iter().map(|c| (c.clone(), ref_name(c))).collect();
    for c in &pa.coords {
        sub.insert(ref_name(c), pa.image(c).rename(&to_ref));
    }
    for y in &outputs {
        sub.insert(y.clone(), induced.image(y));
    }
    let residuals: Vec<Expr> = errors.iter().map(|e| simplify(&(e.subs(&sub) - e.clone()))).collect();
    let mut equivariant = true;
    for (i, r) in residuals.iter().enumerate() {
        if nonzero(r, tol, &format!("equivariance residual {i}"))? {
            equivariant = false;
        }
    }
    let mut per_param = Vec::new();
    for p in &induced.params {
        let others: BTreeMap<String, Expr> = induced
            .params
            .iter()
            .filter(|q| *q != p)
            .map(|q| (q.clone(), Expr::zero()))
            .collect();
        let mut ok = true;
        for r in &residuals {
            if nonzero(&simplify(&r.subs(&others)), tol, "equivariance residual")? {
                ok = false;
            }
        }
        per_param.push((p.clone(), ok));
    }
    Ok(EquivarianceReport {
        equivariant,
        per_param,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn double_integrator() -> ControlSystem {
        ControlSystem::new("di", &["x1", "x2"], &["u"], &[], vec![parse("x2").unwrap(), parse("u").unwrap()]).unwrap()
    }

    #[test]
    fn relative_degrees() {
        let tol = Tolerances::default();
        let rd = vector_relative_degree(&double_integrator(), &[parse("x1").unwrap()], &tol).unwrap();
        assert_eq!(rd.r, vec![2]);
        assert_eq!(rd.matrix[0][0].to_string(), "1");
        let car = ControlSystem::new(
            "car",
            &["z1", "z2", "theta"],
            &["v", "phi"],
            &[("l", Some(1.0))],
            vec![parse("v*cos(theta)").unwrap(), parse("v*sin(theta)").unwrap(), parse("v/l*tan(phi)").unwrap()],
        )
        .unwrap();
        let e = vector_relative_degree(&car, &[parse("z1").unwrap(), parse("z2").unwrap()], &tol).unwrap_err();
        assert!(matches!(e, ControlError::SingularDecoupling { rank: 1, .. }));
    }

    #[test]
    fn routh() {
        assert!(is_hurwitz(&[1.0, 2.0]));
        assert!(!is_hurwitz(&[-1.0, 2.0]));
        assert!(is_hurwitz(&[6.0, 11.0, 6.0]));
        assert!(!is_hurwitz(&[1.0, 0.0, 1.0]));
        assert_eq!(ErrorDynamicsSpec::repeated_pole(&[2], 1.0).coeffs, vec![vec![1.0, 2.0]]);
    }

    #[test]
    fn pole_placement() {
        let tol = Tolerances::default();
        let spec = ErrorDynamicsSpec { coeffs: vec![vec![1.0, 2.0]] };
        let err = ErrorSpec::naive(&["y"]);
        let fb = io_linearizing_feedback(&double_integrator(), &[parse("x1").unwrap()], &spec, &err, &tol).unwrap();
        let want = parse("y_ref_d2 - 2*(x2 - y_ref_d1) - (x1 - y_ref)").unwrap();
        assert!(is_zero_with(&(fb.law[0].clone() - want), &tol.zero_test()).is_zero());
    }

    #[test]
    fn naive_error_not_rotation_equivariant() {
        let tol = Tolerances::default();
        let se2 = GroupAction::new(
            "se2_output",
            &["a", "b1", "b2"],
            &[
                ("y1", parse("y1*cos(a) - y2*sin(a) + b1").unwrap()),
                ("y2", parse("y1*sin(a) + y2*cos(a) + b2").unwrap()),
            ],
        );
        let err = ErrorSpec::naive(&["y1", "y2"]);
        let rep = check_error_equivariance(&err.errors, &se2, &tol).unwrap();
        assert!(!rep.equivariant);
        assert_eq!(
            rep.per_param,
            vec![("a".to_string(), false), ("b1".to_string(), true), ("b2".to_string(), true)]
        );
        let rep = check_error_equivariance(&[Expr::zero()], &se2, &tol).unwrap();
        assert!(rep.equivariant);
    }
}
