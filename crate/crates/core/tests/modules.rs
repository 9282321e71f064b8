use std::collections::{BTreeMap, HashMap};

use liesym::control::{check_error_equivariance, io_linearizing_feedback, ErrorDynamicsSpec, ErrorSpec};
use liesym::expr::{eval, parse, Compiled, Expr};
use liesym::frames::tracking_error;
use liesym::reduction::reduce;
use liesym::sim::{integrate, CompiledLaw, Inputs, Trajectory};
use liesym::system::ControlSystem;
use liesym::systems;
use liesym::Tolerances;

fn env(names: &[String], vals: &[f64]) -> HashMap<String, f64> {
    names.iter().cloned().zip(vals.iter().cloned()).collect()
}

fn sup_chart_gap(full: &Trajectory, red: &Trajectory, chart: &[Compiled], n_full: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for (rf, rr) in full.rows.iter().zip(&red.rows) {
        for (k, c) in chart.iter().enumerate() {
            worst = worst.max((c.eval(&rf[..n_full]) - rr[k]).abs());
        }
    }
    worst
}

fn check_reduction(name: &str, frame: &str, x0: &[f64], u: &[f64], horizon: f64) -> f64 {
    let tol = Tolerances::default();
    let file = systems::get(name).unwrap();
    let sys = file.system.with_params_substituted();
    let fr = file.build_frame(frame, &tol).unwrap();
    let red = reduce(&file.system, &fr, &tol).unwrap();
    let params: BTreeMap<String, Expr> = file.system.param_env().into_iter().map(|(k, v)| (k, Expr::from_f64(v))).collect();
    let chart: Vec<Compiled> = red.chart.iter().map(|c| Compiled::new(&c.subs(&params), &sys.states).unwrap()).collect();
    let xi0: Vec<f64> = chart.iter().map(|c| c.eval(x0)).collect();
    let full = integrate(&sys, Inputs::Constant(u.to_vec()), x0, horizon, 1e-3).unwrap();
    let reduced = integrate(&red.system, Inputs::Constant(u.to_vec()), &xi0, horizon, 1e-3).unwrap();
    assert_eq!(full.times.len(), reduced.times.len());
    sup_chart_gap(&full, &reduced, &chart, sys.n())
}

#[test]
fn car_reduction_tracks_full_model() {
    let gap = check_reduction("car", "rot0", &[1.0, 0.5, 0.2], &[1.0, 0.3], 5.0);
    assert!(gap < 1e-6, "{gap}");
}

#[test]
fn oscillator_reduction_tracks_full_model() {
    let gap = check_reduction("oscillator", "scale1", &[1.0, 0.2], &[], 1.0);
    assert!(gap < 1e-6, "{gap}");
}

#[test]
fn rk4_is_fourth_order() {
    let sys = systems::get("oscillator").unwrap().system;
    let err = |h: f64| {
        let tr = integrate(&sys, Inputs::Constant(vec![]), &[1.0, 0.0], 1.0, h).unwrap();
        let x = tr.last();
        (x[0] - 1f64.cos()).abs().max((x[1] + 1f64.sin()).abs())
    };
    let factor = err(0.1) / err(0.05);
    assert!(factor >= 12.0, "{factor}");
}

#[test]
fn rotated_car_trajectory_is_a_trajectory() {
    let file = systems::get("car").unwrap();
    let sys = &file.system;
    let act = file.action("se2").unwrap();
    let g = |x: &[f64]| -> Vec<f64> {
        let mut e = env(&sys.states, x);
        e.extend([("a".to_string(), 0.7), ("b1".to_string(), -0.4), ("b2".to_string(), 1.1)]);
        let img = act.apply_numeric(&e).unwrap();
        sys.states.iter().map(|s| img[s]).collect()
    };
    let u = vec![0.8, -0.2];
    let x0 = [0.3, -0.6, 1.0];
    let a = integrate(sys, Inputs::Constant(u.clone()), &x0, 3.0, 1e-3).unwrap();
    let b = integrate(sys, Inputs::Constant(u), &g(&x0), 3.0, 1e-3).unwrap();
    let mut worst: f64 = 0.0;
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        for (p, q) in g(&ra[..3]).iter().zip(&rb[..3]) {
            worst = worst.max((p - q).abs());
        }
    }
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn scaling_invariant_error_obeys_imposed_dynamics() {
    let tol = Tolerances::default();
    let sys = ControlSystem::new("di", &["x1", "x2"], &["u"], &[], vec![parse("x2").unwrap(), parse("u").unwrap()]).unwrap();
    let err = ErrorSpec {
        outputs: vec!["y".into()],
        errors: vec![parse("y/y_ref - 1").unwrap()],
    };
    let spec = ErrorDynamicsSpec { coeffs: vec![vec![1.0, 2.0]] };
    let law = io_linearizing_feedback(&sys, &[parse("x1").unwrap()], &spec, &err, &tol).unwrap();
    let reference = |t: f64| -> HashMap<String, f64> {
        [("y_ref", 2.0 + t.sin()), ("y_ref_d1", t.cos()), ("y_ref_d2", -t.sin())]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    };
    let cl = CompiledLaw::new(&sys, &law, &reference).unwrap();
    let f = |t: f64, x: &[f64]| cl.eval(t, x);
    let x0 = [3.0, -1.0];
    let tr = integrate(&sys, Inputs::Law(&f), &x0, 5.0, 1e-3).unwrap();
    let e_of = |t: f64, x: &[f64]| {
        let r = reference(t);
        let mut en = r.clone();
        en.insert("y".into(), x[0]);
        eval(&err.errors[0], &en).unwrap()
    };
    let e0 = e_of(0.0, &x0);
    let r0 = reference(0.0);
    let de0 = x0[1] / r0["y_ref"] - x0[0] * r0["y_ref_d1"] / r0["y_ref"].powi(2);
    let mut worst: f64 = 0.0;
    for (t, row) in tr.times.iter().zip(&tr.rows) {
        let exact = (e0 + (de0 + e0) * t) * (-t).exp();
        worst = worst.max((e_of(*t, row) - exact).abs());
    }
    assert!(worst < 1e-8, "{worst}");
}

#[test]
fn frame_error_equivariant_naive_error_not() {
    let tol = Tolerances::default();
    let file = systems::get("car").unwrap();
    let act = file.action("se2_output").unwrap();
    let fr = file.build_frame("se2_tracking", &tol).unwrap();
    let te = tracking_error(&fr);
    let rep = check_error_equivariance(te.exprs.as_ref().unwrap(), act, &tol).unwrap();
    assert!(rep.equivariant);

    let naive = ErrorSpec::naive(&["y1", "y2"]);
    let rep = check_error_equivariance(&naive.errors, act, &tol).unwrap();
    assert!(!rep.equivariant);
    let verdicts: HashMap<String, bool> = rep.per_param.into_iter().collect();
    assert!(!verdicts["a"]);
    assert!(verdicts["b1"] && verdicts["b2"]);

    let rep = check_error_equivariance(&[Expr::zero()], act, &tol).unwrap();
    assert!(rep.equivariant);
}

#[test]
fn frame_error_invariant_along_reference() {
    let tol = Tolerances::default();
    let file = systems::get("car").unwrap();
    let fr = file.build_frame("se2_tracking", &tol).unwrap();
    let te = tracking_error(&fr);
    assert_eq!(te.vanishes_on_reference(&tol), Some(true));
    assert!(te.invariance_error(20, 11, &tol).unwrap() < 1e-8);
}
