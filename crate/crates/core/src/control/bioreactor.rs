//! Predator-prey chemostat: controlled symmetry between growth kinetics,
//! the invariantizing feedback and the kinetic-switch experiment.

use std::cell::Cell;
use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{differentiate, eval, is_zero_with, parse, Compiled, EvalError, Expr};
use crate::frames::solve_for;
use crate::linalg::{newton, NewtonError};
use crate::sim::{compare, integrate, ChannelDiff, Inputs, SimError, Trajectory};
use crate::system::ControlSystem;
use crate::Tolerances;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BioError {
    #[error("could not solve the determining equation for {0}")]
    Unsolved(&'static str),
    #[error("determining equation {0} is not satisfied by the derived maps")]
    Residual(usize),
    #[error("substrate kinetic not invertible (w = {w} >= mu_m)")]
    NotInvertible { w: f64 },
    #[error("prey concentration b = 0 is outside the domain")]
    ZeroPrey,
    #[error("normalization of s failed: {0}")]
    Frame(#[from] NewtonError),
    #[error("sigma is not monotone in a at the anchor")]
    NotMonotone,
    #[error("feedback singular: {0}")]
    Singular(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Model constants; `k_i` is the Haldane inhibition coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BioParams {
    pub alpha: f64,
    pub beta: f64,
    pub nu_m: f64,
    pub mu_m: f64,
    pub k: f64,
    pub k_s: f64,
    pub k_i: f64,
}

impl Default for BioParams {
    fn default() -> Self {
        BioParams {
            alpha: 1.0,
            beta: 1.0,
            nu_m: 1.0,
            mu_m: 1.0,
            k: 1.0,
            k_s: 1.0,
            k_i: 1.0,
        }
    }
}

impl BioParams {
    /// Values of the constant parameters (without `K_I`).
    pub fn env(&self) -> HashMap<String, f64> {
        [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("nu_m", self.nu_m),
            ("mu_m", self.mu_m),
            ("K", self.k),
            ("K_S", self.k_s),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn nu(&self, b: f64, ki: f64) -> f64 {
        self.nu_m * b / (b + self.k_s + ki * b * b)
    }

    pub fn mu(&self, s: f64) -> f64 {
        self.mu_m * s / (self.k + s)
    }
}

fn v(s: &str) -> Expr {
    Expr::var(s)
}

/// `nu_m b / (b + K_S + ki b^2)`.
pub fn nu(b: Expr, ki: Expr) -> Expr {
    v("nu_m") * b.clone() / (b.clone() + v("K_S") + ki * b.clone() * b)
}

/// `mu_m s / (K + s)`.
pub fn mu(s: Expr) -> Expr {
    v("mu_m") * s.clone() / (v("K") + s)
}

/// `K w / (mu_m - w)`.
pub fn mu_inv(w: Expr) -> Expr {
    v("K") * w.clone() / (v("mu_m") - w)
}

/// Right-hand sides for `(p, b, s)` with inhibition coefficient `ki`.
pub fn dynamics(ki: Expr) -> Vec<Expr> {
    let (p, b, s, d, sf) = (v("p"), v("b"), v("s"), v("D"), v("s_F"));
    let nu_b = nu(b.clone(), ki);
    vec![
        Expr::int(-1) * d.clone() * p.clone() + nu_b.clone() * p.clone(),
        Expr::int(-1) * d.clone() * b.clone() + mu(s.clone()) * b.clone() - v("alpha") * nu_b * p,
        d * (sf - s.clone()) - v("beta") * mu(s) * b,
    ]
}

fn param_list(p: &BioParams) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("alpha", Some(p.alpha)),
        ("beta", Some(p.beta)),
        ("nu_m", Some(p.nu_m)),
        ("mu_m", Some(p.mu_m)),
        ("K", Some(p.k)),
        ("K_S", Some(p.k_s)),
    ]
}

/// Haldane model with `K_I` as a parameter.
pub fn system(p: &BioParams) -> ControlSystem {
    let mut params = param_list(p);
    params.push(("K_I", Some(p.k_i)));
    ControlSystem::new("bioreactor", &["p", "b", "s"], &["D", "s_F"], &params, dynamics(v("K_I"))).expect("well-formed model")
}

/// Model with `K_I` as an additional constant state.
pub fn augmented_system(p: &BioParams) -> ControlSystem {
    let mut f = dynamics(v("K_I"));
    f.push(Expr::zero());
    ControlSystem::new("bioreactor_augmented", &["p", "b", "s", "K_I"], &["D", "s_F"], &param_list(p), f).expect("well-formed model")
}

/// Induced maps `D~ = delta`, `s~ = sigma`, `s_F~ = sigma_F` in
/// `(p, b, s, D, s_F, K_I, a)` and the model constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledSymmetry {
    pub delta: Expr,
    pub sigma: Expr,
    pub sigma_f: Expr,
    /// The three determining equations with the maps substituted.
    pub residuals: Vec<Expr>,
}

/// Solves the determining equations for the kinetic change
/// `K_I -> K_I + a` with `p`, `b` fixed, then re-verifies all three.
pub fn derive_controlled_symmetry(tol: &Tolerances) -> Result<ControlledSymmetry, BioError> {
    let (p, b, s, d) = (v("p"), v("b"), v("s"), v("D"));
    let (dn, sn, sfn) = (v("D_new"), v("s_new"), v("sF_new"));
    let nu_h = nu(b.clone(), v("K_I"));
    let nu_t = nu(b.clone(), v("K_I") + v("a"));
    let f = dynamics(v("K_I"));

    let eq1 = |dn: Expr| p.clone() * (nu_h.clone() - d.clone()) - p.clone() * (nu_t.clone() - dn);
    let delta = solve_for(&eq1(dn.clone()), "D_new").ok_or(BioError::Unsolved("D"))?;

    let eq2 = |sn: Expr, dn: Expr| {
        b.clone() * (mu(s.clone()) - d.clone()) - v("alpha") * nu_h.clone() * p.clone()
            - (b.clone() * (mu(sn) - dn) - v("alpha") * nu_t.clone() * p.clone())
    };
    let sigma = solve_for(&eq2(sn, delta.clone()), "s_new").ok_or(BioError::Unsolved("s"))?;

    let eq3 = |sfn: Expr, sigma: &Expr, delta: &Expr| {
        let lhs = differentiate(sigma, "p") * f[0].clone()
            + differentiate(sigma, "b") * f[1].clone()
            + differentiate(sigma, "s") * f[2].clone();
        lhs - (delta.clone() * (sfn - sigma.clone()) - v("beta") * mu(sigma.clone()) * b.clone())
    };
    let sigma_f = solve_for(&eq3(sfn, &sigma, &delta), "sF_new").ok_or(BioError::Unsolved("s_F"))?;

    let residuals = vec![
        eq1(delta.clone()),
        eq2(sigma.clone(), delta.clone()),
        eq3(sigma_f.clone(), &sigma, &delta),
    ];
    for (i, r) in residuals.iter().enumerate() {
        if !is_zero_with(r, &tol.zero_test()).is_zero() {
            return Err(BioError::Residual(i + 1));
        }
    }
    Ok(ControlledSymmetry {
        delta,
        sigma,
        sigma_f,
        residuals,
    })
}

const SLOTS: [&str; 7] = ["p", "b", "s", "K_I", "a", "D", "s_F"];

fn compile(e: &Expr, params: &BioParams) -> Result<Compiled, EvalError> {
    let sub: BTreeMap<String, Expr> = params.env().into_iter().map(|(k, x)| (k, Expr::from_f64(x))).collect();
    let slots: Vec<String> = SLOTS.iter().map(|s| s.to_string()).collect();
    Compiled::new(&e.subs(&sub), &slots)
}

impl ControlledSymmetry {
    /// Largest `|residual|` at one point.
    pub fn residual_at(&self, env: &HashMap<String, f64>) -> Result<f64, EvalError> {
        let mut worst: f64 = 0.0;
        for r in &self.residuals {
            worst = worst.max(eval(r, env)?.abs());
        }
        Ok(worst)
    }

    /// Largest residual over `samples` random states with `a` in
    /// `[-K_I, 0]`. Points where the substrate kinetic is not invertible
    /// are redrawn.
    pub fn residual_sweep(&self, params: &BioParams, samples: usize, seed: u64) -> Result<f64, BioError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let mut done = 0;
        let mut tries = 0;
        while done < samples {
            tries += 1;
            if tries > samples * 1000 {
                return Err(BioError::NotInvertible { w: f64::NAN });
            }
            let (pp, bb) = (rng.gen_range(0.2..1.5), rng.gen_range(0.2..1.5));
            let ss = rng.gen_range(0.1..1.0);
            let dd = rng.gen_range(0.1..1.0);
            let sf = rng.gen_range(0.0..10.0);
            let a = rng.gen_range(-params.k_i..=0.0);
            let w = params.mu(ss) + (params.nu(bb, params.k_i + a) - params.nu(bb, params.k_i)) * (1.0 + params.alpha * pp / bb);
            if w >= params.mu_m {
                continue;
            }
            let mut env = params.env();
            for (k, x) in [("p", pp), ("b", bb), ("s", ss), ("D", dd), ("s_F", sf), ("a", a), ("K_I", params.k_i)] {
                env.insert(k.to_string(), x);
            }
            worst = worst.max(self.residual_at(&env)?);
            done += 1;
        }
        Ok(worst)
    }
}

/// Smooth set-point stabilizer in the invariant input `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stabilizer {
    pub gain: f64,
    pub p_star: f64,
}

impl Default for Stabilizer {
    fn default() -> Self {
        Stabilizer { gain: 1.0, p_star: 0.2 }
    }
}

/// `v = (delta, sigma_F)` at `a = gamma(x)`, where `gamma` normalizes
/// `sigma(x; a) = c`.
pub struct InvariantizingFeedback {
    pub params: BioParams,
    pub c: f64,
    sigma: Compiled,
    dsigma: Compiled,
    delta: Compiled,
    sigma_f: Compiled,
    tol: Tolerances,
}

impl InvariantizingFeedback {
    pub fn new(cs: &ControlledSymmetry, params: BioParams, c: f64, tol: &Tolerances) -> Result<InvariantizingFeedback, BioError> {
        let fb = InvariantizingFeedback {
            params,
            c,
            sigma: compile(&cs.sigma, &params)?,
            dsigma: compile(&differentiate(&cs.sigma, "a"), &params)?,
            delta: compile(&cs.delta, &params)?,
            sigma_f: compile(&cs.sigma_f, &params)?,
            tol: *tol,
        };
        let anchor = [0.5, 1.0, c, params.k_i, 0.0, 0.5, 1.0];
        if fb.dsigma.eval(&anchor).abs() < tol.num {
            return Err(BioError::NotMonotone);
        }
        Ok(fb)
    }

    fn slots(x: &[f64], a: f64, u: [f64; 2]) -> [f64; 7] {
        [x[0], x[1], x[2], x[3], a, u[0], u[1]]
    }

    /// `sigma(x; a)` with the domain checks.
    pub fn sigma(&self, x: &[f64], a: f64) -> Result<f64, BioError> {
        let pr = &self.params;
        if x[1] == 0.0 {
            return Err(BioError::ZeroPrey);
        }
        let w = pr.mu(x[2]) + (pr.nu(x[1], x[3] + a) - pr.nu(x[1], x[3])) * (1.0 + pr.alpha * x[0] / x[1]);
        if w >= pr.mu_m {
            return Err(BioError::NotInvertible { w });
        }
        Ok(self.sigma.eval(&Self::slots(x, a, [0.0, 0.0])))
    }

    /// Frame `a = gamma(x)` by Newton from `warm`.
    pub fn gamma(&self, x: &[f64], warm: f64) -> Result<f64, BioError> {
        let f = |a: &[f64]| self.sigma(x, a[0]).ok().map(|s| vec![s - self.c]);
        let j = |a: &[f64]| Some(DMatrix::from_element(1, 1, self.dsigma.eval(&Self::slots(x, a[0], [0.0, 0.0]))));
        Ok(newton(f, j, &[warm], self.tol.newton, 50)?[0])
    }

    /// `V(x, u)` at a given frame value.
    pub fn v_at(&self, x: &[f64], u: [f64; 2], gamma: f64) -> [f64; 2] {
        let sl = Self::slots(x, gamma, u);
        [self.delta.eval(&sl), self.sigma_f.eval(&sl)]
    }

    pub fn v(&self, x: &[f64], u: [f64; 2]) -> Result<[f64; 2], BioError> {
        let g = self.gamma(x, 0.0)?;
        Ok(self.v_at(x, u, g))
    }

    /// Solves `V(x, u) = v` for `u`; both components are affine.
    pub fn invert(&self, x: &[f64], v: [f64; 2], gamma: f64) -> Result<[f64; 2], BioError> {
        let d0 = self.delta.eval(&Self::slots(x, gamma, [0.0, 0.0]));
        let d1 = self.delta.eval(&Self::slots(x, gamma, [1.0, 0.0]));
        if (d1 - d0).abs() < 1e-14 {
            return Err(BioError::Singular("delta independent of D".into()));
        }
        let dd = (v[0] - d0) / (d1 - d0);
        let s0 = self.sigma_f.eval(&Self::slots(x, gamma, [dd, 0.0]));
        let s1 = self.sigma_f.eval(&Self::slots(x, gamma, [dd, 1.0]));
        if !(s1 - s0).is_finite() || (s1 - s0).abs() < 1e-14 {
            return Err(BioError::Singular("sigma_F independent of s_F".into()));
        }
        Ok([dd, (v[1] - s0) / (s1 - s0)])
    }

    /// Smallest `|det dV/du|` over random points.
    pub fn regularity(&self, samples: usize, seed: u64) -> Result<f64, BioError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::INFINITY;
        let mut done = 0;
        let mut tries = 0;
        while done < samples && tries < samples * 100 {
            tries += 1;
            let x = [rng.gen_range(0.2..1.5), rng.gen_range(0.2..1.5), rng.gen_range(0.1..1.0), self.params.k_i];
            let u = [rng.gen_range(0.1..1.0), rng.gen_range(0.0..10.0)];
            let Ok(g) = self.gamma(&x, 0.0) else { continue };
            let h = 1e-6;
            let mut jac = DMatrix::zeros(2, 2);
            for k in 0..2 {
                let mut up = u;
                let mut um = u;
                up[k] += h;
                um[k] -= h;
                let (a, b) = (self.v_at(&x, up, g), self.v_at(&x, um, g));
                jac[(0, k)] = (a[0] - b[0]) / (2.0 * h);
                jac[(1, k)] = (a[1] - b[1]) / (2.0 * h);
            }
            worst = worst.min(jac.determinant().abs());
            done += 1;
        }
        if done < samples {
            return Err(BioError::Singular("too few points with a solvable frame".into()));
        }
        Ok(worst)
    }

    /// Largest `|V(g (x, u)) - V(x, u)|` over random states and `a`.
    pub fn invariance_error(&self, samples: usize, seed: u64) -> Result<f64, BioError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let mut done = 0;
        let mut tries = 0;
        while done < samples && tries < samples * 100 {
            tries += 1;
            let x = [rng.gen_range(0.2..1.5), rng.gen_range(0.2..1.5), rng.gen_range(0.1..1.0), self.params.k_i];
            let u = [rng.gen_range(0.1..1.0), rng.gen_range(0.0..10.0)];
            let a = rng.gen_range(-self.params.k_i..0.0);
            let Ok(s_new) = self.sigma(&x, a) else { continue };
            let sl = Self::slots(&x, a, u);
            let gx = [x[0], x[1], s_new, x[3] + a];
            let gu = [self.delta.eval(&sl), self.sigma_f.eval(&sl)];
            let (Ok(v0), Ok(v1)) = (self.v(&x, u), self.v(&gx, gu)) else { continue };
            worst = worst.max((v0[0] - v1[0]).abs()).max((v0[1] - v1[1]).abs());
            done += 1;
        }
        if done < samples {
            return Err(BioError::Singular("too few points with a solvable frame".into()));
        }
        Ok(worst)
    }

    /// Closed-loop input `u(x)` for the stabilizer; `warm` carries the
    /// last frame value between calls.
    pub fn control(&self, stab: &Stabilizer, x: &[f64], warm: &Cell<f64>) -> Result<[f64; 2], BioError> {
        let g = self.gamma(x, warm.get())?;
        warm.set(g);
        let pr = &self.params;
        let v1 = pr.nu(x[1], x[3] + g) + stab.gain * (x[0] - stab.p_star);
        if v1.abs() < 1e-12 {
            return Err(BioError::Singular("v1 = 0".into()));
        }
        let v2 = self.c + pr.beta * pr.mu(self.c) * x[1] / v1;
        self.invert(x, [v1, v2], g)
    }
}

/// Closed-loop runs under the Haldane and the Michaelis-Menten kinetic
/// from symmetry-related initial states.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticSwitch {
    pub haldane: Trajectory,
    pub michaelis_menten: Trajectory,
    pub diffs: Vec<ChannelDiff>,
}

pub fn closed_loop(fb: &InvariantizingFeedback, stab: &Stabilizer, x0: &[f64], horizon: f64, h: f64) -> Result<Trajectory, BioError> {
    let sys = augmented_system(&fb.params);
    let warm = Cell::new(fb.gamma(x0, 0.0)?);
    let law = |_t: f64, x: &[f64]| fb.control(stab, x, &warm).map(|u| u.to_vec()).map_err(|e| e.to_string());
    Ok(integrate(&sys, Inputs::Law(&law), x0, horizon, h)?)
}

/// Haldane run from `(p0, b0, s0, K_I)` with `c = s0` and the
/// Michaelis-Menten run from the image under `a = -K_I`.
pub fn kinetic_switch(
    cs: &ControlledSymmetry,
    params: BioParams,
    stab: &Stabilizer,
    x0: [f64; 3],
    horizon: f64,
    h: f64,
    tol: &Tolerances,
) -> Result<KineticSwitch, BioError> {
    let fb = InvariantizingFeedback::new(cs, params, x0[2], tol)?;
    let xh = [x0[0], x0[1], x0[2], params.k_i];
    let s_mm = fb.sigma(&xh, -params.k_i)?;
    let xm = [x0[0], x0[1], s_mm, 0.0];
    let haldane = closed_loop(&fb, stab, &xh, horizon, h)?;
    let michaelis_menten = closed_loop(&fb, stab, &xm, horizon, h)?;
    let diffs = compare(&haldane, &michaelis_menten, &["p", "b", "s"])?;
    Ok(KineticSwitch {
        haldane,
        michaelis_menten,
        diffs,
    })
}

/// `delta` at `a = -K_I` written with the Michaelis-Menten rate.
pub fn delta_at_mm() -> Expr {
    parse("D - nu_m*b/(b + K_S + K_I*b^2) + nu_m*b/(b + K_S)").expect("valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_maps() {
        let tol = Tolerances::default();
        let cs = derive_controlled_symmetry(&tol).unwrap();
        let zt = tol.zero_test();
        let closed = mu_inv(
            mu(v("s"))
                + (nu(v("b"), v("K_I") + v("a")) - nu(v("b"), v("K_I"))) * (Expr::one() + v("alpha") * v("p") / v("b")),
        );
        assert!(is_zero_with(&(cs.sigma.clone() - closed), &zt).is_zero());
        let at0: BTreeMap<String, Expr> = [("a".to_string(), Expr::zero())].into_iter().collect();
        assert!(is_zero_with(&(cs.delta.subs(&at0) - v("D")), &zt).is_zero());
        assert!(is_zero_with(&(cs.sigma.subs(&at0) - v("s")), &zt).is_zero());
        assert!(is_zero_with(&(cs.sigma_f.subs(&at0) - v("s_F")), &zt).is_zero());
        let mm: BTreeMap<String, Expr> = [("a".to_string(), Expr::int(-1) * v("K_I"))].into_iter().collect();
        assert!(is_zero_with(&(cs.delta.subs(&mm) - delta_at_mm()), &zt).is_zero());
    }

    #[test]
    fn feedback_identity_at_normalized_states() {
        let tol = Tolerances::default();
        let cs = derive_controlled_symmetry(&tol).unwrap();
        let fb = InvariantizingFeedback::new(&cs, BioParams::default(), 0.5, &tol).unwrap();
        let x = [0.7, 0.9, 0.5, 1.0];
        assert!(fb.gamma(&x, 0.3).unwrap().abs() < 1e-12);
        let v = fb.v(&x, [0.4, 2.0]).unwrap();
        assert!((v[0] - 0.4).abs() < 1e-12 && (v[1] - 2.0).abs() < 1e-10);
    }
}
