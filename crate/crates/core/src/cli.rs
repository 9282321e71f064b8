//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::control::bioreactor::{self, BioParams, InvariantizingFeedback, Stabilizer};
use crate::control::{io_linearizing_feedback, ErrorDynamicsSpec, ErrorSpec};
use crate::dsl::{parse_dsl, to_dsl, SystemFile};
use crate::expr::{Expr, ZeroVerdict};
use crate::frames::{check_g_compatible, invariants, tracking_error};
use crate::geometry::VectorField;
use crate::reduction::reduce;
use crate::sim::{compare, integrate, report, Inputs, Trajectory};
use crate::symmetry::{determining_equations, symmetry_residual};
use crate::systems;
use crate::Tolerances;

#[derive(Debug, Parser)]
#[command(name = "liesym", version, about = "Lie symmetries, moving frames and invariant feedback for control systems")]
pub struct Cli {
    #[command(flatten)]
    tol: TolArgs,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Args)]
struct TolArgs {
    /// Numeric fallback tolerance of the zero test
    #[arg(long, global = true, default_value_t = 1e-9)]
    zero_tol: f64,
    /// Tolerance for ranks and numeric comparisons
    #[arg(long, global = true, default_value_t = 1e-8)]
    num_tol: f64,
    /// Residual tolerance of Newton solves
    #[arg(long, global = true, default_value_t = 1e-12)]
    newton_tol: f64,
}

#[derive(Debug, Args)]
struct Source {
    /// System definition file
    #[arg(long, conflicts_with = "catalog")]
    system: Option<PathBuf>,
    /// Built-in system
    #[arg(long)]
    catalog: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Symmetry residuals of declared generators
    CheckSymmetry {
        #[command(flatten)]
        src: Source,
        /// Generator name (repeatable; default all)
        #[arg(long)]
        generator: Vec<String>,
    },
    /// Split determining equations for a generator or the general ansatz
    DeterminingEqs {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        generator: Option<String>,
    },
    /// Moving frame, invariants and invariant tracking error
    Invariants {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        frame: String,
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Reduced-order realization along a frame
    Reduce {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        frame: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compatibility of an output with the declared generators
    Gcompat {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        output: String,
        #[arg(long)]
        generator: Vec<String>,
    },
    /// Input-output linearizing feedback, or the bioreactor controlled symmetry
    Feedback {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        output: Option<String>,
        /// Tracking error from this frame instead of y - y_ref
        #[arg(long)]
        frame: Option<String>,
        /// All error poles at -POLE
        #[arg(long, default_value_t = 1.0)]
        pole: f64,
        #[arg(long)]
        controlled_symmetry: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// RK4 simulation with constant inputs
    Simulate {
        #[command(flatten)]
        src: Source,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        u: Vec<f64>,
        /// Final time (default 1, or 20 with --switch-kinetic)
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        /// CSV file, or file prefix with --switch-kinetic (default `switch`)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Bioreactor closed loop under both kinetics
        #[arg(long)]
        switch_kinetic: bool,
        /// Several step sizes, run concurrently
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<f64>,
    },
    /// Sup-norm differences of two CSV trajectories
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_delimiter = ',')]
        channels: Vec<String>,
        /// Fail when a difference exceeds this bound
        #[arg(long)]
        max: Option<f64>,
    },
    /// List, print or export built-in systems
    Catalog {
        name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum Failure {
    Verification(String),
    Usage(String),
    Numeric(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Verification(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Verification(m) | Failure::Usage(m) | Failure::Numeric(m) => m,
        }
    }
}

type Res = Result<(), Failure>;

fn usage(e: impl ToString) -> Failure {
    Failure::Usage(e.to_string())
}

fn numeric(e: impl ToString) -> Failure {
    Failure::Numeric(e.to_string())
}

fn io(e: std::io::Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn load(src: &Source, tol: &Tolerances) -> Result<SystemFile, Failure> {
    match (&src.system, &src.catalog) {
        (Some(p), None) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            parse_dsl(&text, tol).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
        (None, Some(n)) => systems::get(n).map_err(usage),
        _ => Err(usage("give exactly one of --system FILE or --catalog NAME")),
    }
}

fn write_file(path: &Path, text: &str) -> Res {
    std::fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Runs the CLI on `args` (including the program name).
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = write!(out, "{e}");
            return code;
        }
    };
    let tol = Tolerances {
        zero: cli.tol.zero_tol,
        num: cli.tol.num_tol,
        newton: cli.tol.newton_tol,
    };
    match dispatch(cli.cmd, &tol, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(out, "error: {}", f.message());
            f.code()
        }
    }
}

fn dispatch(cmd: Command, tol: &Tolerances, out: &mut dyn Write) -> Res {
    match cmd {
        Command::CheckSymmetry { src, generator } => check_symmetry(&load(&src, tol)?, &generator, tol, out),
        Command::DeterminingEqs { src, generator } => det_eqs(&load(&src, tol)?, generator.as_deref(), out),
        Command::Invariants { src, frame, samples } => cmd_invariants(&load(&src, tol)?, &frame, samples, tol, out),
        Command::Reduce { src, frame, out: path } => cmd_reduce(&load(&src, tol)?, &frame, path.as_deref(), tol, out),
        Command::Gcompat { src, output, generator } => cmd_gcompat(&load(&src, tol)?, &output, &generator, tol, out),
        Command::Feedback {
            src,
            output,
            frame,
            pole,
            controlled_symmetry,
            out: path,
        } => {
            if controlled_symmetry {
                cmd_controlled_symmetry(tol, out)
            } else {
                cmd_feedback(&load(&src, tol)?, output.as_deref(), frame.as_deref(), pole, path.as_deref(), tol, out)
            }
        }
        Command::Simulate {
            src,
            x0,
            u,
            horizon,
            step,
            out: path,
            switch_kinetic,
            sweep,
        } => {
            if switch_kinetic {
                cmd_switch(&x0, horizon.unwrap_or(20.0), step, path.as_deref(), tol, out)
            } else {
                cmd_simulate(&load(&src, tol)?, &x0, &u, horizon.unwrap_or(1.0), step, &sweep, path.as_deref(), out)
            }
        }
        Command::Compare { a, b, channels, max } => cmd_compare(&a, &b, &channels, max, out),
        Command::Catalog { name, out: path } => cmd_catalog(name.as_deref(), path.as_deref(), out),
    }
}

fn check_symmetry(f: &SystemFile, names: &[String], tol: &Tolerances, out: &mut dyn Write) -> Res {
    let list: Vec<&(String, VectorField)> = if names.is_empty() {
        f.generators.iter().collect()
    } else {
        names
            .iter()
            .map(|n| f.generators.iter().find(|(g, _)| g == n).ok_or_else(|| usage(format!("no generator `{n}`"))))
            .collect::<Result<_, _>>()?
    };
    if list.is_empty() {
        return Err(usage("no generators declared"));
    }
    let mut ok = true;
    let mut undecided = false;
    for (name, v) in list {
        writeln!(out, "generator {name}").map_err(io)?;
        let res = symmetry_residual(&f.system, v, tol);
        for e in &res.entries {
            let tag = match e.verdict {
                ZeroVerdict::Zero(_) => "",
                ZeroVerdict::NonZero(_) => {
                    ok = false;
                    "  (nonzero)"
                }
                ZeroVerdict::Undecidable => {
                    undecided = true;
                    "  (undecidable)"
                }
            };
            writeln!(out, "  {}: {}{tag}", e.state, e.expr).map_err(io)?;
        }
    }
    if undecided {
        return Err(numeric("zero test undecidable"));
    }
    if !ok {
        return Err(Failure::Verification("not a symmetry".into()));
    }
    Ok(())
}

fn general_ansatz(f: &SystemFile) -> VectorField {
    let coords = f.system.coords();
    let args: Vec<&str> = coords.iter().map(String::as_str).collect();
    let mut v = VectorField::new(&coords);
    for c in &coords {
        let name = if *c == f.system.time { "xi".to_string() } else { format!("eta_{c}") };
        v = v.with(c, Expr::opaque(&name, &args));
    }
    v
}

fn det_eqs(f: &SystemFile, generator: Option<&str>, out: &mut dyn Write) -> Res {
    let ansatz = match generator {
        Some(g) => f.generator(g).map_err(usage)?.clone(),
        None => general_ansatz(f),
    };
    let d = determining_equations(&f.system, &ansatz);
    writeln!(out, "input block").map_err(io)?;
    for (x, u, e) in &d.input_block {
        writeln!(out, "  [{x}, {u}] {e} = 0").map_err(io)?;
    }
    writeln!(out, "base block").map_err(io)?;
    for (x, e) in &d.base_block {
        writeln!(out, "  [{x}] {e} = 0").map_err(io)?;
    }
    Ok(())
}

fn cmd_invariants(f: &SystemFile, frame: &str, samples: usize, tol: &Tolerances, out: &mut dyn Write) -> Res {
    let fr = f.build_frame(frame, tol).map_err(numeric)?;
    writeln!(out, "frame {frame}: order {}, normalizing {}", fr.order, fr.components.join(", ")).map_err(io)?;
    match fr.gamma_exprs() {
        Some(g) => {
            for (p, e) in fr.action.params.iter().zip(g) {
                writeln!(out, "  {p} = {e}").map_err(io)?;
            }
        }
        None => writeln!(out, "  (numeric normalization)").map_err(io)?,
    }
    let inv = invariants(&fr);
    writeln!(out, "invariants").map_err(io)?;
    if let Some(ex) = &inv.exprs {
        for (c, e) in inv.coords.iter().zip(ex) {
            writeln!(out, "  I_{c} = {e}").map_err(io)?;
        }
    }
    let err = inv.invariance_error(samples, 1, tol).map_err(numeric)?;
    writeln!(out, "invariance error over {samples} samples: {err:.3e}").map_err(io)?;
    let te = tracking_error(&fr);
    writeln!(out, "tracking error").map_err(io)?;
    if let Some(ex) = &te.exprs {
        for (c, e) in te.outputs.iter().zip(ex) {
            writeln!(out, "  e_{c} = {e}").map_err(io)?;
        }
    }
    let te_err = te.invariance_error(samples, 2, tol).map_err(numeric)?;
    writeln!(out, "tracking error invariance: {te_err:.3e}").map_err(io)?;
    if err > tol.num || te_err > tol.num || te.vanishes_on_reference(tol) == Some(false) {
        return Err(Failure::Verification("invariance check failed".into()));
    }
    Ok(())
}

fn cmd_reduce(f: &SystemFile, frame: &str, path: Option<&Path>, tol: &Tolerances, out: &mut dyn Write) -> Res {
    let fr = f.build_frame(frame, tol).map_err(numeric)?;
    let red = reduce(&f.system, &fr, tol).map_err(|e| Failure::Verification(e.to_string()))?;
    let mut file = SystemFile::new(red.system.clone());
    let mut note = vec![format!("reduction of {} along frame {frame}", f.system.name)];
    for (x, c) in red.system.states.iter().zip(&red.chart) {
        note.push(format!("chart {x} = {c}"));
    }
    for (a, e) in red.orbit.iter().zip(&red.orbit_dynamics) {
        note.push(format!("orbit {a}' = {e}"));
    }
    file.note = Some(note.join("\n"));
    let text = to_dsl(&file);
    write!(out, "{text}").map_err(io)?;
    if let Some(p) = path {
        write_file(p, &text)?;
    }
    Ok(())
}

fn cmd_gcompat(f: &SystemFile, output: &str, names: &[String], tol: &Tolerances, out: &mut dyn Write) -> Res {
    let o = f.output(output).map_err(usage)?;
    let gens: Vec<VectorField> = if names.is_empty() {
        f.generators
            .iter()
            .filter(|(_, v)| v.coeffs.keys().all(|c| f.system.states.contains(c)))
            .map(|(_, v)| v.clone())
            .collect()
    } else {
        names.iter().map(|n| f.generator(n).cloned().map_err(usage)).collect::<Result<_, _>>()?
    };
    let res = check_g_compatible(&f.system, &o.exprs, &gens, tol).map_err(numeric)?;
    for (w, k, i, e) in &res.failures {
        writeln!(out, "  <dh{}, [w{}, v{}]> = {e}", i + 1, w + 1, k + 1).map_err(io)?;
    }
    if res.compatible {
        writeln!(out, "output {output} is compatible").map_err(io)?;
        if let Some(ind) = &res.induced_on_outputs {
            for (k, v) in ind.iter().enumerate() {
                writeln!(out, "  induced v{}: {v}", k + 1).map_err(io)?;
            }
        }
        Ok(())
    } else {
        writeln!(out, "output {output} is not compatible").map_err(io)?;
        Err(Failure::Verification("output is not compatible".into()))
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_feedback(
    f: &SystemFile,
    output: Option<&str>,
    frame: Option<&str>,
    pole: f64,
    path: Option<&Path>,
    tol: &Tolerances,
    out: &mut dyn Write,
) -> Res {
    let o = match output {
        Some(n) => f.output(n).map_err(usage)?,
        None => f.outputs.first().ok_or_else(|| usage("no output declared"))?,
    };
    let err = match frame {
        None => ErrorSpec::naive(&o.names.iter().map(String::as_str).collect::<Vec<_>>()),
        Some(fname) => {
            let fr = f.build_frame(fname, tol).map_err(numeric)?;
            let te = tracking_error(&fr);
            if te.outputs != o.names {
                return Err(usage(format!("frame {fname} acts on {:?}, output is {:?}", te.outputs, o.names)));
            }
            ErrorSpec {
                outputs: te.outputs.clone(),
                errors: te.exprs.ok_or_else(|| numeric("frame has no closed form"))?,
            }
        }
    };
    let rd = crate::control::vector_relative_degree(&f.system, &o.exprs, tol).map_err(|e| Failure::Verification(e.to_string()))?;
    let spec = ErrorDynamicsSpec::repeated_pole(&rd.r, pole);
    let law = io_linearizing_feedback(&f.system, &o.exprs, &spec, &err, tol).map_err(|e| Failure::Verification(e.to_string()))?;
    let mut text = format!("# relative degrees {:?}, valid where {} != 0\n[feedback]\n", law.relative_degree, law.validity);
    for (u, e) in law.inputs.iter().zip(&law.law) {
        text.push_str(&format!("{u} = {e}\n"));
    }
    write!(out, "{text}").map_err(io)?;
    if let Some(p) = path {
        write_file(p, &text)?;
    }
    Ok(())
}

fn cmd_controlled_symmetry(tol: &Tolerances, out: &mut dyn Write) -> Res {
    let cs = bioreactor::derive_controlled_symmetry(tol).map_err(|e| Failure::Verification(e.to_string()))?;
    writeln!(out, "D~ = {}", cs.delta).map_err(io)?;
    writeln!(out, "s~ = {}", cs.sigma).map_err(io)?;
    writeln!(out, "s_F~ = ({} terms)", cs.sigma_f.size()).map_err(io)?;
    let params = BioParams::default();
    let sweep = cs.residual_sweep(&params, 50, 7).map_err(numeric)?;
    writeln!(out, "determining equation residual over 50 states: {sweep:.3e}").map_err(io)?;
    let fb = InvariantizingFeedback::new(&cs, params, 0.5, tol).map_err(numeric)?;
    let reg = fb.regularity(10, 3).map_err(numeric)?;
    let inv = fb.invariance_error(20, 5).map_err(numeric)?;
    writeln!(out, "min |det dV/du| over 10 states: {reg:.3e}").map_err(io)?;
    writeln!(out, "orbit invariance of V over 20 samples: {inv:.3e}").map_err(io)?;
    if sweep > 1e-8 || inv > 1e-8 || reg < tol.num {
        return Err(Failure::Verification("controlled symmetry checks failed".into()));
    }
    Ok(())
}

fn cmd_switch(x0: &[f64], horizon: f64, step: f64, path: Option<&Path>, tol: &Tolerances, out: &mut dyn Write) -> Res {
    let x0 = match x0 {
        [] => [0.5, 1.0, 0.5],
        [p, b, s] => [*p, *b, *s],
        _ => return Err(usage("--x0 takes p,b,s")),
    };
    let cs = bioreactor::derive_controlled_symmetry(tol).map_err(|e| Failure::Verification(e.to_string()))?;
    let ks = bioreactor::kinetic_switch(&cs, BioParams::default(), &Stabilizer::default(), x0, horizon, step, tol).map_err(numeric)?;
    let stem = path.map_or("switch".to_string(), |p| p.to_string_lossy().trim_end_matches(".csv").to_string());
    for (tag, tr) in [("haldane", &ks.haldane), ("mm", &ks.michaelis_menten)] {
        let file = format!("{stem}_{tag}.csv");
        write_file(Path::new(&file), &tr.to_csv())?;
        writeln!(out, "wrote {file}").map_err(io)?;
    }
    write!(out, "{}", report(&ks.diffs)).map_err(io)?;
    let sup = |c: &str| ks.diffs.iter().find(|d| d.channel == c).map_or(f64::INFINITY, |d| d.sup);
    if sup("p") >= 1e-6 || sup("b") >= 1e-6 || sup("s") <= 1e-3 {
        return Err(Failure::Verification("kinetic switch changed the (p, b) response".into()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(f: &SystemFile, x0: &[f64], u: &[f64], horizon: f64, step: f64, sweep: &[f64], path: Option<&Path>, out: &mut dyn Write) -> Res {
    let sys = &f.system;
    let u = if u.is_empty() { vec![0.0; sys.m()] } else { u.to_vec() };
    if u.len() != sys.m() {
        return Err(usage(format!("--u needs {} values", sys.m())));
    }
    if !sweep.is_empty() {
        let results: Vec<Result<Trajectory, String>> = std::thread::scope(|s| {
            let handles: Vec<_> = sweep
                .iter()
                .map(|h| {
                    let u = u.clone();
                    s.spawn(move || integrate(sys, Inputs::Constant(u), x0, horizon, *h).map_err(|e| e.to_string()))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("run panicked".into()))).collect()
        });
        for (h, r) in sweep.iter().zip(results) {
            let tr = r.map_err(numeric)?;
            let last: Vec<String> = tr.last().iter().map(|v| crate::sim::fmt_g17(*v)).collect();
            writeln!(out, "h = {h}: {}", last.join(",")).map_err(io)?;
        }
        return Ok(());
    }
    let tr = integrate(sys, Inputs::Constant(u), x0, horizon, step).map_err(numeric)?;
    let csv = tr.to_csv();
    match path {
        Some(p) => write_file(p, &csv)?,
        None => write!(out, "{csv}").map_err(io)?,
    }
    Ok(())
}

fn cmd_compare(a: &Path, b: &Path, channels: &[String], max: Option<f64>, out: &mut dyn Write) -> Res {
    let read = |p: &Path| -> Result<Trajectory, Failure> {
        let t = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        Trajectory::from_csv(&t).map_err(usage)
    };
    let (ta, tb) = (read(a)?, read(b)?);
    let chans: Vec<&str> = if channels.is_empty() {
        ta.names.iter().map(String::as_str).collect()
    } else {
        channels.iter().map(String::as_str).collect()
    };
    let diffs = compare(&ta, &tb, &chans).map_err(usage)?;
    write!(out, "{}", report(&diffs)).map_err(io)?;
    if let Some(m) = max {
        if diffs.iter().any(|d| d.sup > m) {
            return Err(Failure::Verification(format!("difference above {m}")));
        }
    }
    Ok(())
}

fn cmd_catalog(name: Option<&str>, path: Option<&Path>, out: &mut dyn Write) -> Res {
    match name {
        None => {
            for n in systems::NAMES {
                writeln!(out, "{n}").map_err(io)?;
            }
            Ok(())
        }
        Some(n) => {
            let e = systems::get(n).map_err(usage)?;
            let text = to_dsl(&e);
            match path {
                Some(p) => write_file(p, &text),
                None => write!(out, "{text}").map_err(io),
            }
        }
    }
}

/// Entry point for the binary.
pub fn main_entry() -> i32 {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run(std::env::args_os(), &mut lock)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String) {
        let mut buf = Vec::new();
        let mut full = vec!["liesym"];
        full.extend_from_slice(args);
        let code = run(full, &mut buf);
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn check_symmetry_prints_zero() {
        let (code, out) = run_str(&["check-symmetry", "--catalog", "car", "--generator", "v1"]);
        assert_eq!(code, 0, "{out}");
        assert!(out.lines().skip(1).all(|l| l.trim_end().ends_with(": 0")), "{out}");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run_str(&["catalog", "nonexistent"]).0, 2);
        assert_eq!(run_str(&["bogus"]).0, 2);
        assert_eq!(run_str(&["gcompat", "--catalog", "car", "--output", "position"]).0, 0);
        assert_eq!(run_str(&["feedback", "--catalog", "car"]).0, 1);
    }
}
