//! Fixed-step RK4 integration, CSV trajectories and comparisons.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::control::FeedbackLaw;
use crate::expr::{Compiled, EvalError, Expr};
use crate::system::ControlSystem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("step must be positive and the horizon nonnegative")]
    BadStep,
    #[error("{0} initial values for {1} states")]
    Dimension(usize, usize),
    #[error("parameter `{0}` has no value")]
    UnboundParam(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("nonfinite value in `{channel}` at t = {time}")]
    NonFinite { time: f64, channel: String },
    #[error("input evaluation failed at t = {time}: {message}")]
    Input { time: f64, message: String },
    #[error("time grids differ")]
    GridMismatch,
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Samples on a time grid; `rows[k]` holds the values of `names` at
/// `times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub meta: BTreeMap<String, String>,
}

impl Trajectory {
    pub fn channel(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn last(&self) -> &[f64] {
        self.rows.last().map_or(&[], |r| r.as_slice())
    }

    /// New trajectory with channels `names` computed row by row from `f`.
    pub fn map(&self, names: &[String], f: impl Fn(&[f64]) -> Vec<f64>) -> Trajectory {
        Trajectory {
            names: names.to_vec(),
            times: self.times.clone(),
            rows: self.rows.iter().map(|r| f(r)).collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for n in &self.names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (t, r) in self.times.iter().zip(&self.rows) {
            s.push_str(&fmt_g17(*t));
            for v in r {
                s.push(',');
                s.push_str(&fmt_g17(*v));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Trajectory, SimError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or(SimError::Csv {
            line: 1,
            message: "empty file".into(),
        })?;
        let cols: Vec<&str> = head.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") {
            return Err(SimError::Csv {
                line: 1,
                message: "first column must be t".into(),
            });
        }
        let names: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
        let mut times = Vec::new();
        let mut rows = Vec::new();
        for (i, l) in lines {
            let vals: Result<Vec<f64>, _> = l.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| SimError::Csv {
                line: i + 1,
                message: e.to_string(),
            })?;
            if vals.len() != cols.len() {
                return Err(SimError::Csv {
                    line: i + 1,
                    message: format!("{} fields, expected {}", vals.len(), cols.len()),
                });
            }
            times.push(vals[0]);
            rows.push(vals[1..].to_vec());
        }
        Ok(Trajectory {
            names,
            times,
            rows,
            meta: BTreeMap::new(),
        })
    }
}

/// `printf("%.17g")`.
pub fn fmt_g17(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-4..17).contains(&exp) {
        let mant = strip_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let prec = (16 - exp) as usize;
        strip_zeros(&format!("{v:.prec$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Classical RK4 on `x' = f(t, x)`. The grid has step `h`; when `horizon`
/// is not a multiple of `h` the last step is shortened.
pub fn rk4<F>(mut f: F, x0: &[f64], horizon: f64, h: f64, names: &[String]) -> Result<(Vec<f64>, Vec<Vec<f64>>), SimError>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, SimError>,
{
    if h.is_nan() || h <= 0.0 || horizon.is_nan() || horizon < 0.0 {
        return Err(SimError::BadStep);
    }
    let steps = ((horizon / h) - 1e-9).ceil().max(0.0) as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    let mut t = 0.0;
    times.push(t);
    xs.push(x.clone());
    let axpy = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    for step in 0..steps {
        let t_next = if step + 1 == steps { horizon } else { (step + 1) as f64 * h };
        let dt = t_next - t;
        let k1 = f(t, &x)?;
        let k2 = f(t + dt / 2.0, &axpy(&x, &k1, dt / 2.0))?;
        let k3 = f(t + dt / 2.0, &axpy(&x, &k2, dt / 2.0))?;
        let k4 = f(t + dt, &axpy(&x, &k3, dt))?;
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t = t_next;
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(SimError::NonFinite {
                time: t,
                channel: names.get(i).cloned().unwrap_or_default(),
            });
        }
        times.push(t);
        xs.push(x.clone());
    }
    Ok((times, xs))
}

/// State feedback `u = law(t, x)`.
pub type LawFn<'a> = &'a dyn Fn(f64, &[f64]) -> Result<Vec<f64>, String>;

/// Input source for `integrate`.
pub enum Inputs<'a> {
    Constant(Vec<f64>),
    /// `u = law(t, x)`, re-evaluated at every RK4 stage.
    Law(LawFn<'a>),
}

fn compile_dynamics(sys: &ControlSystem) -> Result<Vec<Compiled>, SimError> {
    let mut slots = vec![sys.time.clone()];
    slots.extend(sys.states.iter().cloned());
    slots.extend(sys.inputs.iter().cloned());
    let env = sys.param_env();
    let sub: BTreeMap<String, Expr> = env.iter().map(|(k, v)| (k.clone(), Expr::from_f64(*v))).collect();
    for p in &sys.params {
        if p.default.is_none() {
            return Err(SimError::UnboundParam(p.name.clone()));
        }
    }
    Ok(sys
        .dynamics
        .iter()
        .map(|f| Compiled::new(&f.subs(&sub), &slots))
        .collect::<Result<_, _>>()?)
}

/// States and inputs of `sys` on the grid.
pub fn integrate(sys: &ControlSystem, inputs: Inputs, x0: &[f64], horizon: f64, h: f64) -> Result<Trajectory, SimError> {
    if x0.len() != sys.n() {
        return Err(SimError::Dimension(x0.len(), sys.n()));
    }
    let dyn_c = compile_dynamics(sys)?;
    let input_at = |t: f64, x: &[f64]| -> Result<Vec<f64>, SimError> {
        match &inputs {
            Inputs::Constant(u) => Ok(u.clone()),
            Inputs::Law(f) => f(t, x).map_err(|message| SimError::Input { time: t, message }),
        }
    };
    let rhs = |t: f64, x: &[f64]| -> Result<Vec<f64>, SimError> {
        let u = input_at(t, x)?;
        let mut slots = Vec::with_capacity(1 + x.len() + u.len());
        slots.push(t);
        slots.extend_from_slice(x);
        slots.extend_from_slice(&u);
        Ok(dyn_c.iter().map(|c| c.eval(&slots)).collect())
    };
    let (times, xs) = rk4(rhs, x0, horizon, h, &sys.states)?;
    let mut names = sys.states.clone();
    names.extend(sys.inputs.iter().cloned());
    let mut rows = Vec::with_capacity(xs.len());
    for (t, x) in times.iter().zip(&xs) {
        let mut r = x.clone();
        r.extend(input_at(*t, x)?);
        rows.push(r);
    }
    let mut meta = BTreeMap::new();
    meta.insert("system".to_string(), sys.name.clone());
    meta.insert("step".to_string(), fmt_g17(h));
    Ok(Trajectory { names, times, rows, meta })
}

/// Evaluator for a feedback law with the reference jet supplied as a
/// function of time.
pub struct CompiledLaw<'a> {
    law: Vec<Compiled>,
    reference: &'a dyn Fn(f64) -> HashMap<String, f64>,
    ref_names: Vec<String>,
}

impl<'a> CompiledLaw<'a> {
    pub fn new(sys: &ControlSystem, law: &FeedbackLaw, reference: &'a dyn Fn(f64) -> HashMap<String, f64>) -> Result<CompiledLaw<'a>, SimError> {
        let mut slots = vec![sys.time.clone()];
        slots.extend(sys.states.iter().cloned());
        slots.extend(law.reference.iter().cloned());
        let sub: BTreeMap<String, Expr> = sys.param_env().iter().map(|(k, v)| (k.clone(), Expr::from_f64(*v))).collect();
        Ok(CompiledLaw {
            law: law.law.iter().map(|e| Compiled::new(&e.subs(&sub), &slots)).collect::<Result<_, _>>()?,
            reference,
            ref_names: law.reference.clone(),
        })
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, String> {
        let r = (self.reference)(t);
        let mut slots = vec![t];
        slots.extend_from_slice(x);
        for n in &self.ref_names {
            slots.push(*r.get(n).ok_or_else(|| format!("reference `{n}` missing"))?);
        }
        let u: Vec<f64> = self.law.iter().map(|c| c.eval(&slots)).collect();
        if u.iter().all(|v| v.is_finite()) {
            Ok(u)
        } else {
            Err("feedback not finite (decoupling singular?)".into())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDiff {
    pub channel: String,
    pub sup: f64,
    pub at: f64,
}

/// Per-channel sup-norm of `a - b` on a common grid.
pub fn compare(a: &Trajectory, b: &Trajectory, channels: &[&str]) -> Result<Vec<ChannelDiff>, SimError> {
    if a.times.len() != b.times.len() || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-9 * x.abs().max(1.0)) {
        return Err(SimError::GridMismatch);
    }
    let mut out = Vec::new();
    for c in channels {
        let ca = a.channel(c).ok_or_else(|| SimError::UnknownChannel(c.to_string()))?;
        let cb = b.channel(c).ok_or_else(|| SimError::UnknownChannel(c.to_string()))?;
        let mut sup = 0.0;
        let mut at = 0.0;
        for ((x, y), t) in ca.iter().zip(&cb).zip(&a.times) {
            let d = (x - y).abs();
            if d > sup {
                sup = d;
                at = *t;
            }
        }
        out.push(ChannelDiff {
            channel: c.to_string(),
            sup,
            at,
        });
    }
    Ok(out)
}

/// Human-readable comparison table.
pub fn report(diffs: &[ChannelDiff]) -> String {
    let mut s = String::new();
    for d in diffs {
        let _ = writeln!(s, "{:<12} sup = {:.3e} at t = {}", d.channel, d.sup, fmt_g17(d.at));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn g17_format() {
        assert_eq!(fmt_g17(0.1), "0.10000000000000001");
        assert_eq!(fmt_g17(1.0), "1");
        assert_eq!(fmt_g17(1e-5), "1.0000000000000001e-05");
        assert_eq!(fmt_g17(-2.5), "-2.5");
        assert_eq!(fmt_g17(1e20), "1e+20");
        assert_eq!(fmt_g17(123456.0), "123456");
    }

    #[test]
    fn constant_and_straight_line() {
        let still = ControlSystem::new("still", &["x"], &[], &[], vec![Expr::zero()]).unwrap();
        let tr = integrate(&still, Inputs::Constant(vec![]), &[3.0], 1.0, 0.1).unwrap();
        assert!(tr.rows.iter().all(|r| r[0] == 3.0));
        let car = ControlSystem::new(
            "car",
            &["z1", "z2", "theta"],
            &["v", "phi"],
            &[("l", Some(1.0))],
            vec![parse("v*cos(theta)").unwrap(), parse("v*sin(theta)").unwrap(), parse("v/l*tan(phi)").unwrap()],
        )
        .unwrap();
        let tr = integrate(&car, Inputs::Constant(vec![1.0, 0.0]), &[0.0, 0.0, 0.0], 1.0, 1e-3).unwrap();
        let x = tr.last();
        assert!((x[0] - 1.0).abs() < 1e-10 && x[1].abs() < 1e-10 && x[2].abs() < 1e-10);
    }

    #[test]
    fn csv_round_trip() {
        let tr = Trajectory {
            names: vec!["x".into()],
            times: vec![0.0, 0.1],
            rows: vec![vec![1.0 / 3.0], vec![-2e-7]],
            meta: BTreeMap::new(),
        };
        let back = Trajectory::from_csv(&tr.to_csv()).unwrap();
        assert_eq!(back.rows, tr.rows);
        assert_eq!(compare(&tr, &back, &["x"]).unwrap()[0].sup, 0.0);
    }
}
