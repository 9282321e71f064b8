//! Reduced-order realizations of systems with state symmetries.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::expr::{add, differentiate, is_zero_with, simplify, Expr, ZeroVerdict};
use crate::frames::{symbolic_solve, MovingFrame};
use crate::geometry::{lie_bracket, GeometryError, VectorField};
use crate::system::{ControlSystem, Param};
use crate::Tolerances;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReductionError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("generator {0} has components outside the states")]
    NotStateOnly(usize),
    #[error("zero test undecidable for {0}")]
    Undecidable(String),
    #[error("frame `{0}` has no closed-form normalization")]
    NotSymbolic(String),
    #[error("frame acts on `{0}`, which is not a state")]
    NotAState(String),
    #[error("could not invert the transverse chart")]
    NoInverse,
    #[error("transverse dynamics of `{0}` depend on the orbit coordinates")]
    OrbitDependent(String),
}

/// Vector field `sum f^i d/dx^i` on `(t, x, u)`.
pub fn drift_field(sys: &ControlSystem) -> VectorField {
    let mut v = VectorField::new(&sys.coords());
    for (x, f) in sys.states.iter().zip(&sys.dynamics) {
        v = v.with(x, f.clone());
    }
    v
}

/// True iff every generator acts on states only and commutes with the
/// system vector field.
pub fn check_state_symmetry(sys: &ControlSystem, gens: &[VectorField], tol: &Tolerances) -> Result<bool, ReductionError> {
    let vf = drift_field(sys);
    let coords = sys.coords();
    for (i, g) in gens.iter().enumerate() {
        if g.coeffs.iter().any(|(c, e)| !sys.states.contains(c) && !e.is_zero_literal()) {
            return Err(ReductionError::NotStateOnly(i));
        }
        let b = lie_bracket(&vf, &g.restrict(&coords))?;
        for (c, e) in &b.coeffs {
            match is_zero_with(e, &tol.zero_test()) {
                ZeroVerdict::Zero(_) => {}
                ZeroVerdict::NonZero(_) => return Ok(false),
                ZeroVerdict::Undecidable => return Err(ReductionError::Undecidable(format!("[v_f, v{i}] along {c}"))),
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedRealization {
    /// Transverse subsystem in `(xi, u)`; states keep the names of the
    /// free coordinates.
    pub system: ControlSystem,
    /// `Xi(x)` per transverse state.
    pub chart: Vec<Expr>,
    /// Orbit coordinates, named after the group parameters.
    pub orbit: Vec<String>,
    pub orbit_dynamics: Vec<Expr>,
    /// Normalized states and their constants.
    pub normalized: Vec<(String, Expr)>,
    /// Original state indices, transverse first, then normalized.
    pub permutation: Vec<usize>,
}

fn xi_name(x: &str) -> String {
    format!("__xi_{x}")
}

fn on_normal(normalized: &[(String, Expr)], e: &Expr) -> Expr {
    let map: BTreeMap<String, Expr> = normalized.iter().cloned().collect();
    e.subs(&map)
}

pub fn reduce(sys: &ControlSystem, frame: &MovingFrame, tol: &Tolerances) -> Result<ReducedRealization, ReductionError> {
    let gamma = frame
        .gamma_exprs()
        .ok_or_else(|| ReductionError::NotSymbolic(frame.name.clone()))?
        .to_vec();
    for c in &frame.action.coords {
        if !sys.states.contains(c) {
            return Err(ReductionError::NotAState(c.clone()));
        }
    }
    let zt = tol.zero_test();
    let gsub: BTreeMap<String, Expr> = frame.action.params.iter().cloned().zip(gamma.iter().cloned()).collect();
    let normalized: Vec<(String, Expr)> = frame
        .components
        .iter()
        .cloned()
        .zip(frame.constants.iter().cloned())
        .collect();
    let transverse: Vec<String> = sys
        .states
        .iter()
        .filter(|x| !frame.components.contains(x))
        .cloned()
        .collect();
    let chart: Vec<Expr> = transverse
        .iter()
        .map(|x| {
            if frame.action.coords.contains(x) {
                simplify(&frame.action.image(x).subs(&gsub))
            } else {
                Expr::var(x)
            }
        })
        .collect();

    // invert xi = Xi(c, x_t) for x_t
    let eqs: Vec<Expr> = chart
        .iter()
        .zip(&transverse)
        .map(|(e, x)| simplify(&(on_normal(&normalized, e) - Expr::var(&xi_name(x)))))
        .collect();
    let inverse = symbolic_solve(&eqs, &transverse, tol).ok_or(ReductionError::NoInverse)?;
    let inv_map: BTreeMap<String, Expr> = transverse.iter().cloned().zip(inverse.iter().cloned()).collect();
    if !eqs.iter().all(|e| is_zero_with(&e.subs(&inv_map), &zt).is_zero()) {
        return Err(ReductionError::NoInverse);
    }
    let mut at_slice = inv_map.clone();
    for (c, k) in &normalized {
        at_slice.insert(c.clone(), k.clone());
    }
    let back_names: BTreeMap<String, String> = transverse.iter().map(|x| (xi_name(x), x.clone())).collect();
    let xi_of_x: BTreeMap<String, Expr> = transverse
        .iter()
        .zip(&chart)
        .map(|(x, e)| (xi_name(x), e.clone()))
        .collect();

    let mut reduced_dyn = Vec::new();
    for (x, xi) in transverse.iter().zip(&chart) {
        let full = simplify(&add(
            sys.states
                .iter()
                .zip(&sys.dynamics)
                .map(|(s, f)| differentiate(xi, s) * f.clone())
                .collect(),
        ));
        let reduced = simplify(&full.subs(&at_slice));
        // the reduced field pulled back along Xi must reproduce the full one
        let check = full - reduced.subs(&xi_of_x);
        match is_zero_with(&check, &zt) {
            ZeroVerdict::Zero(_) => {}
            ZeroVerdict::NonZero(_) => return Err(ReductionError::OrbitDependent(x.clone())),
            ZeroVerdict::Undecidable => return Err(ReductionError::Undecidable(format!("reduced dynamics of {x}"))),
        }
        reduced_dyn.push(reduced.rename(&back_names));
    }
    let orbit_dynamics: Vec<Expr> = gamma
        .iter()
        .map(|g| {
            let dg = add(sys
                .states
                .iter()
                .zip(&sys.dynamics)
                .map(|(s, f)| differentiate(g, s) * f.clone())
                .collect());
            simplify(&(Expr::int(-1) * dg).subs(&at_slice)).rename(&back_names)
        })
        .collect();

    let mut used: Vec<String> = Vec::new();
    for e in &reduced_dyn {
        used.extend(e.free_symbols());
    }
    let params: Vec<Param> = sys.params.iter().filter(|p| used.contains(&p.name)).cloned().collect();
    let system = ControlSystem {
        name: format!("{}_reduced", sys.name),
        time: sys.time.clone(),
        states: transverse.clone(),
        inputs: sys.inputs.clone(),
        params,
        dynamics: reduced_dyn,
    };
    let mut permutation: Vec<usize> = transverse.iter().map(|x| sys.state_index(x).unwrap()).collect();
    permutation.extend(frame.components.iter().filter_map(|c| sys.state_index(c)));
    Ok(ReducedRealization {
        system,
        chart,
        orbit: frame.action.params.clone(),
        orbit_dynamics,
        normalized,
        permutation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::frames::{solve_frame, SolveMode};
    use crate::symmetry::GroupAction;
    use std::collections::HashMap;

    #[test]
    fn translation_decouples() {
        let tol = Tolerances::default();
        let sys = ControlSystem::new("tr", &["x1", "x2"], &["u"], &[], vec![parse("u").unwrap(), parse("x2").unwrap()]).unwrap();
        let act = GroupAction::new("shift", &["a"], &[("x1", parse("x1 + a").unwrap())]);
        let g = act.generators().unwrap();
        assert!(check_state_symmetry(&sys, &g, &tol).unwrap());
        let f = solve_frame("f", &act, Some(0), &["x1".into()], &[Expr::zero()], SolveMode::Symbolic, &HashMap::new(), &tol).unwrap();
        let r = reduce(&sys, &f, &tol).unwrap();
        assert_eq!(r.system.states, vec!["x2"]);
        assert_eq!(r.system.dynamics[0].to_string(), "x2");
        assert_eq!(r.orbit_dynamics[0].to_string(), "u");
    }

    #[test]
    fn controlled_invariant_is_not_enough() {
        let tol = Tolerances::default();
        let sys = ControlSystem::new("c", &["x1", "x2"], &["u"], &[], vec![parse("x1*u + x2").unwrap(), parse("x2").unwrap()]).unwrap();
        let g = VectorField::new(&sys.coords()).with("x1", Expr::one());
        assert!(!check_state_symmetry(&sys, &[g], &tol).unwrap());
        assert!(check_state_symmetry(&sys, &[], &tol).unwrap());
    }

    #[test]
    fn oscillator_riccati() {
        let tol = Tolerances::default();
        let sys = ControlSystem::new(
            "osc",
            &["phi", "dphi"],
            &[],
            &[("omega", Some(1.0))],
            vec![parse("dphi").unwrap(), parse("-omega^2*phi").unwrap()],
        )
        .unwrap();
        let act = GroupAction::new("scale", &["a"], &[("phi", parse("exp(a)*phi").unwrap()), ("dphi", parse("exp(a)*dphi").unwrap())]);
        let f = solve_frame("f", &act, Some(0), &["phi".into()], &[Expr::one()], SolveMode::Symbolic, &sys.param_env(), &tol).unwrap();
        let r = reduce(&sys, &f, &tol).unwrap();
        let want = parse("-omega^2 - dphi^2").unwrap();
        assert!(is_zero_with(&(r.system.dynamics[0].clone() - want), &tol.zero_test()).is_zero());
        assert_eq!(r.chart[0].to_string(), "dphi/phi");
    }
}
