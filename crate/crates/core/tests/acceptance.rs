use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use liesym::control::bioreactor::{derive_controlled_symmetry, kinetic_switch, BioParams, Stabilizer};
use liesym::expr::{differentiate, eval, is_zero_with, parse, simplify, Compiled, Expr, ZeroPath, ZeroVerdict};
use liesym::frames::{check_g_compatible, invariants, solve_frame, tracking_error, SolveMode};
use liesym::geometry::check_lie_backlund_map;
use liesym::reduction::reduce;
use liesym::sim::{integrate, Inputs};
use liesym::symmetry::{structure_constants, symmetry_residual};
use liesym::systems;
use liesym::Tolerances;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit, format!("runtime {:.2}s over {limit}s", elapsed.as_secs_f64()))
}

fn tol() -> Tolerances {
    Tolerances::default()
}

fn zero(e: &Expr) -> bool {
    is_zero_with(&simplify(e), &tol().zero_test()).is_zero()
}

fn c1_se2_algebra() -> Outcome {
    let start = Instant::now();
    let car = systems::get("car").map_err(|e| e.to_string())?;
    let gens: Vec<_> = car.generators.iter().map(|(_, v)| v.clone()).collect();
    let sc = structure_constants(&gens, &tol()).map_err(|e| e.to_string())?;
    ensure(sc.closed, "algebra not closed")?;
    for i in 0..3 {
        for j in (i + 1)..3 {
            for k in 0..3 {
                let want = match (i, j, k) {
                    (0, 1, 2) => -1.0,
                    (0, 2, 1) => 1.0,
                    _ => 0.0,
                };
                let c = &sc.table[i][j][k];
                let got = sc.c(i, j, k);
                ensure(got == want && (want != 0.0 || c.is_zero()), format!("c_{}{}^{} = {got}", i + 1, j + 1, k + 1))?;
            }
        }
    }
    within(start.elapsed(), 1.0)?;
    Ok("c12^3 = -1, c13^2 = 1, others 0, closed".into())
}

fn c2_symmetry_verification() -> Outcome {
    let start = Instant::now();
    let car = systems::get("car").map_err(|e| e.to_string())?;
    let osc = systems::get("oscillator").map_err(|e| e.to_string())?;
    let mut cases: Vec<(&str, &liesym::system::ControlSystem, &liesym::geometry::VectorField)> = Vec::new();
    for (n, v) in &car.generators {
        cases.push((n, &car.system, v));
    }
    cases.push(("scaling", &osc.system, osc.generator("scaling").map_err(|e| e.to_string())?));
    for (n, sys, v) in &cases {
        let res = symmetry_residual(sys, v, &tol());
        for e in &res.entries {
            ensure(
                e.verdict == ZeroVerdict::Zero(ZeroPath::Symbolic),
                format!("{}/{n}: {} -> {:?}", sys.name, e.state, e.verdict),
            )?;
        }
    }
    within(start.elapsed(), 1.0)?;
    Ok(format!("{} generator checks symbolic zero", cases.len()))
}

fn c3_car_reduction() -> Outcome {
    let t = tol();
    let car = systems::get("car").map_err(|e| e.to_string())?;
    let fr = car.build_frame("rot0", &t).map_err(|e| e.to_string())?;
    let red = reduce(&car.system, &fr, &t).map_err(|e| e.to_string())?;
    ensure(red.system.states == ["z1", "z2"], format!("reduced states {:?}", red.system.states))?;
    let golden = [parse("v + v/l*z2*tan(phi)").unwrap(), parse("-v/l*z1*tan(phi)").unwrap()];
    for (g, f) in golden.iter().zip(&red.system.dynamics) {
        ensure(zero(&(f.clone() - g.clone())), format!("{f} differs from {g}"))?;
    }
    let full = car.system.with_params_substituted();
    let params: BTreeMap<String, Expr> = car.system.param_env().into_iter().map(|(k, v)| (k, Expr::from_f64(v))).collect();
    let chart: Vec<Compiled> = red
        .chart
        .iter()
        .map(|c| Compiled::new(&c.subs(&params), &full.states).unwrap())
        .collect();
    let x0 = [1.0, 0.5, 0.2];
    let u = vec![1.0, 0.3];
    let xi0: Vec<f64> = chart.iter().map(|c| c.eval(&x0)).collect();
    let a = integrate(&full, Inputs::Constant(u.clone()), &x0, 5.0, 1e-3).map_err(|e| e.to_string())?;
    let b = integrate(&red.system, Inputs::Constant(u), &xi0, 5.0, 1e-3).map_err(|e| e.to_string())?;
    let mut sup: f64 = 0.0;
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        for (k, c) in chart.iter().enumerate() {
            sup = sup.max((c.eval(&ra[..3]) - rb[k]).abs());
        }
    }
    ensure(sup < 1e-6, format!("full vs reduced sup {sup:.3e}"))?;
    Ok(format!("golden z-equations, full vs reduced sup {sup:.3e}"))
}

fn c4_moving_frame() -> Outcome {
    let t = tol();
    let car = systems::get("car").map_err(|e| e.to_string())?;
    let rot = car.action("rot").map_err(|e| e.to_string())?;
    let fr = solve_frame("rot", rot, Some(0), &["theta".into()], &[Expr::zero()], SolveMode::Symbolic, &HashMap::new(), &t)
        .map_err(|e| e.to_string())?;
    let g = fr.gamma_exprs().ok_or("no closed-form frame")?;
    ensure(zero(&(g[0].clone() + Expr::var("theta"))), format!("gamma = {}", g[0]))?;
    let inv = invariants(&fr);
    let ex = inv.exprs.as_ref().ok_or("no closed-form invariants")?;
    let want: BTreeMap<&str, Expr> = [
        ("z1", parse("cos(theta)*z1 + sin(theta)*z2").unwrap()),
        ("z2", parse("-sin(theta)*z1 + cos(theta)*z2").unwrap()),
    ]
    .into_iter()
    .collect();
    ensure(inv.coords == ["z1", "z2"], format!("invariant coordinates {:?}", inv.coords))?;
    for (c, e) in inv.coords.iter().zip(ex) {
        ensure(zero(&(e.clone() - want[c.as_str()].clone())), format!("I_{c} = {e}"))?;
    }
    let err = inv.invariance_error(20, 4, &t).map_err(|e| e.to_string())?;
    ensure(err < 1e-8, format!("invariance error {err:.3e}"))?;
    Ok(format!("gamma = -theta, I = R_theta^T y, invariance {err:.1e}"))
}

fn c5_g_compatibility() -> Outcome {
    let t = tol();
    let car = systems::get("car").map_err(|e| e.to_string())?;
    let gens: Vec<_> = car.generators.iter().map(|(_, v)| v.clone()).collect();
    let good = [Expr::var("z1"), Expr::var("z2")];
    let bad = [Expr::var("z1"), Expr::var("theta")];
    let g = check_g_compatible(&car.system, &good, &gens, &t).map_err(|e| e.to_string())?;
    let b = check_g_compatible(&car.system, &bad, &gens, &t).map_err(|e| e.to_string())?;
    ensure(g.compatible, "(z1, z2) rejected")?;
    ensure(!b.compatible, "(z1, theta) accepted")?;
    Ok("(z1, z2) accepted, (z1, theta) rejected".into())
}

fn c6_pvtol_map() -> Outcome {
    let t = tol();
    let src = systems::get("pvtol").map_err(|e| e.to_string())?;
    let dst = systems::get("pvtol_reduced").map_err(|e| e.to_string())?;
    let map = src.map("to_reduced").map_err(|e| e.to_string())?;
    let ok = check_lie_backlund_map(map, &src.system, &dst.system, &t).map_err(|e| e.to_string())?;
    ensure(ok.passed(), "map rejected")?;
    let mut bent = map.clone();
    bent.maps.insert("z1".into(), parse("y1 - 2*eps*sin(theta)").unwrap());
    let bad = check_lie_backlund_map(&bent, &src.system, &dst.system, &t).map_err(|e| e.to_string())?;
    ensure(!bad.passed(), "perturbed map accepted")?;
    Ok("map accepted, perturbed map rejected".into())
}

fn c7_bioreactor() -> Outcome {
    let start = Instant::now();
    let t = tol();
    let params = BioParams::default();
    let cs = derive_controlled_symmetry(&t).map_err(|e| e.to_string())?;
    let res = cs.residual_sweep(&params, 50, 2024).map_err(|e| e.to_string())?;
    ensure(res < 1e-8, format!("determining equation residual {res:.3e}"))?;
    let ks = kinetic_switch(&cs, params, &Stabilizer::default(), [0.5, 1.0, 0.5], 20.0, 1e-3, &t).map_err(|e| e.to_string())?;
    let sup = |c: &str| ks.diffs.iter().find(|d| d.channel == c).map_or(f64::NAN, |d| d.sup);
    let (p, b, s) = (sup("p"), sup("b"), sup("s"));
    ensure(p < 1e-6 && b < 1e-6, format!("(p, b) sup ({p:.3e}, {b:.3e})"))?;
    ensure(s > 1e-3, format!("s sup {s:.3e}"))?;
    within(start.elapsed(), 30.0)?;
    Ok(format!(
        "residual {res:.1e}, sup p {p:.1e}, b {b:.1e}, s {s:.3}, {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn c8_invariant_errors() -> Outcome {
    let t = tol();
    let mut count = 0;
    for n in systems::NAMES {
        let f = systems::get(n).map_err(|e| e.to_string())?;
        for spec in &f.frames {
            let fr = f.build_frame(&spec.name, &t).map_err(|e| format!("{n}/{}: {e}", spec.name))?;
            let te = tracking_error(&fr);
            ensure(te.vanishes_on_reference(&t) == Some(true), format!("{n}/{}: e(y_ref) != 0", spec.name))?;
            let err = te.invariance_error(20, 8, &t).map_err(|e| format!("{n}/{}: {e}", spec.name))?;
            ensure(err < 1e-8, format!("{n}/{}: invariance {err:.3e}", spec.name))?;
            count += 1;
        }
    }
    ensure(count > 0, "no frames in catalog")?;
    Ok(format!("{count} frames"))
}

fn catalog_exprs() -> Vec<(String, Expr, HashMap<String, f64>)> {
    let mut out = Vec::new();
    for n in systems::NAMES {
        let f = systems::get(n).unwrap();
        let params = f.system.param_env();
        let mut push = |what: String, e: &Expr| out.push((format!("{n}: {what}"), e.clone(), params.clone()));
        for (x, e) in f.system.states.iter().zip(&f.system.dynamics) {
            push(format!("{x}'"), e);
        }
        for o in &f.outputs {
            for (y, e) in o.names.iter().zip(&o.exprs) {
                push(format!("output {y}"), e);
            }
        }
        for a in &f.actions {
            for (c, e) in &a.maps {
                push(format!("action {} {c}", a.name), e);
            }
        }
        for (g, v) in &f.generators {
            for (c, e) in &v.coeffs {
                push(format!("generator {g} {c}"), e);
            }
        }
        for m in &f.maps {
            for (c, e) in &m.maps {
                push(format!("map {} {c}", m.name), e);
            }
        }
    }
    out
}

fn c9_numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for (what, e, params) in catalog_exprs() {
        let syms: Vec<String> = e.free_symbols().into_iter().filter(|s| !params.contains_key(s)).collect();
        for _ in 0..5 {
            let mut env = params.clone();
            for s in &syms {
                env.insert(s.clone(), rng.gen_range(0.3..1.7));
            }
            for s in &syms {
                let d = eval(&differentiate(&e, s), &env).map_err(|err| format!("{what}: {err}"))?;
                let h = 1e-6;
                let at = |dx: f64| {
                    let mut p = env.clone();
                    *p.get_mut(s).unwrap() += dx;
                    eval(&e, &p)
                };
                let fd = (at(h).map_err(|err| err.to_string())? - at(-h).map_err(|err| err.to_string())?) / (2.0 * h);
                let rel = (d - fd).abs() / d.abs().max(1.0);
                ensure(rel < 1e-5, format!("{what}, d/d{s}: {d} vs {fd}"))?;
                worst = worst.max(rel);
                checks += 1;
            }
        }
    }
    let sys = systems::get("oscillator").map_err(|e| e.to_string())?.system;
    let err = |h: f64| -> Result<f64, String> {
        let tr = integrate(&sys, Inputs::Constant(vec![]), &[1.0, 0.0], 1.0, h).map_err(|e| e.to_string())?;
        let x = tr.last();
        Ok((x[0] - 1f64.cos()).abs().max((x[1] + 1f64.sin()).abs()))
    };
    let factor = err(0.1)? / err(0.05)?;
    ensure(factor >= 12.0, format!("RK4 order factor {factor:.2}"))?;
    Ok(format!("{checks} derivatives, worst rel err {worst:.1e}, RK4 factor {factor:.2}"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("SE(2) structure constants", c1_se2_algebra),
        ("symbolic symmetry verification", c2_symmetry_verification),
        ("car reduction", c3_car_reduction),
        ("rotation moving frame", c4_moving_frame),
        ("G-compatibility", c5_g_compatibility),
        ("PVTOL Lie-Backlund map", c6_pvtol_map),
        ("bioreactor controlled symmetry", c7_bioreactor),
        ("invariant tracking errors", c8_invariant_errors),
        ("numerics hygiene", c9_numerics),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS {name} ({detail})", i + 1),
            Err(why) => {
                println!("criterion {}: FAIL {name} ({why})", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria {failed:?}");
        std::process::exit(1);
    }
}
