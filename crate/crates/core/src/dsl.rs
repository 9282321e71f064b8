//! Line-oriented system definition files.
//!
//! ```text
//! [system]
//! name = car
//! [states]
//! z1
//! [inputs]
//! v
//! [params]
//! l = 1
//! [dynamics]
//! z1 = v*cos(theta)
//! [action.rot]
//! params = a
//! z1 = z1*cos(a) - z2*sin(a)
//! [generator.v2]
//! z1 = 1
//! [output.position]
//! y1 = z1
//! [frame.rot0]
//! action = rot
//! theta = 0
//! [map.flat]
//! target = other
//! w = z1
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::expr::{parse, simplify, Expr, ParseError};
use crate::frames::{solve_frame, FrameError, MovingFrame, SolveMode};
use crate::geometry::{SystemMap, VectorField};
use crate::symmetry::{symmetry_residual, GroupAction};
use crate::system::{ControlSystem, Param, SystemError};
use crate::Tolerances;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    Expr { line: usize, source: ParseError },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("generator `{name}` is not a symmetry: {detail}")]
    NotASymmetry { name: String, detail: String },
    #[error("no {kind} named `{name}`")]
    Unknown { kind: &'static str, name: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub name: String,
    pub names: Vec<String>,
    pub exprs: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSpec {
    pub name: String,
    pub action: String,
    pub order: Option<usize>,
    pub mode: SolveMode,
    pub components: Vec<(String, Expr)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemFile {
    pub system: ControlSystem,
    pub actions: Vec<GroupAction>,
    pub generators: Vec<(String, VectorField)>,
    pub outputs: Vec<OutputSpec>,
    pub frames: Vec<FrameSpec>,
    pub maps: Vec<SystemMap>,
    pub note: Option<String>,
}

impl SystemFile {
    pub fn new(system: ControlSystem) -> SystemFile {
        SystemFile {
            system,
            actions: Vec::new(),
            generators: Vec::new(),
            outputs: Vec::new(),
            frames: Vec::new(),
            maps: Vec::new(),
            note: None,
        }
    }

    pub fn action(&self, name: &str) -> Result<&GroupAction, DslError> {
        self.actions.iter().find(|a| a.name == name).ok_or_else(|| DslError::Unknown {
            kind: "action",
            name: name.into(),
        })
    }

    pub fn generator(&self, name: &str) -> Result<&VectorField, DslError> {
        self.generators
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| DslError::Unknown {
                kind: "generator",
                name: name.into(),
            })
    }

    pub fn output(&self, name: &str) -> Result<&OutputSpec, DslError> {
        self.outputs.iter().find(|o| o.name == name).ok_or_else(|| DslError::Unknown {
            kind: "output",
            name: name.into(),
        })
    }

    pub fn frame_spec(&self, name: &str) -> Result<&FrameSpec, DslError> {
        self.frames.iter().find(|f| f.name == name).ok_or_else(|| DslError::Unknown {
            kind: "frame",
            name: name.into(),
        })
    }

    pub fn map(&self, name: &str) -> Result<&SystemMap, DslError> {
        self.maps.iter().find(|m| m.name == name).ok_or_else(|| DslError::Unknown {
            kind: "map",
            name: name.into(),
        })
    }

    /// Copy with every expression in canonical form, for comparisons.
    pub fn canonical(&self) -> SystemFile {
        let c = |e: &Expr| simplify(e);
        let mut f = self.clone();
        f.system.dynamics = f.system.dynamics.iter().map(c).collect();
        for a in f.actions.iter_mut() {
            for e in a.maps.values_mut() {
                *e = c(e);
            }
            if let Some(law) = a.compose.as_mut() {
                for e in law.values_mut() {
                    *e = c(e);
                }
            }
        }
        for (_, v) in f.generators.iter_mut() {
            for e in v.coeffs.values_mut() {
                *e = c(e);
            }
        }
        for o in f.outputs.iter_mut() {
            o.exprs = o.exprs.iter().map(c).collect();
        }
        for fr in f.frames.iter_mut() {
            for (_, e) in fr.components.iter_mut() {
                *e = c(e);
            }
        }
        for m in f.maps.iter_mut() {
            m.time = c(&m.time);
            for e in m.maps.values_mut() {
                *e = c(e);
            }
        }
        f
    }

    /// Builds a declared frame.
    pub fn build_frame(&self, name: &str, tol: &Tolerances) -> Result<MovingFrame, FrameBuildError> {
        let spec = self.frame_spec(name)?;
        let action = self.action(&spec.action)?;
        let comps: Vec<String> = spec.components.iter().map(|(c, _)| c.clone()).collect();
        let consts: Vec<Expr> = spec.components.iter().map(|(_, k)| k.clone()).collect();
        Ok(solve_frame(
            name,
            action,
            spec.order,
            &comps,
            &consts,
            spec.mode,
            &self.system.param_env(),
            tol,
        )?)
    }

    /// Symmetry residual check of every declared generator.
    pub fn verify_generators(&self, tol: &Tolerances) -> Result<(), DslError> {
        for (name, v) in &self.generators {
            let res = symmetry_residual(&self.system, v, tol);
            if !res.is_symmetry() {
                let detail = res
                    .entries
                    .iter()
                    .filter(|e| !e.verdict.is_zero())
                    .map(|e| format!("{}: {}", e.state, e.expr))
                    .collect::<Vec<_>>()
                    .join("; ");
                return Err(DslError::NotASymmetry {
                    name: name.clone(),
                    detail,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrameBuildError {
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Canonical text of a system file.
pub fn to_dsl(f: &SystemFile) -> String {
    let s = &f.system;
    let mut o = String::new();
    if let Some(n) = &f.note {
        for l in n.lines() {
            let _ = writeln!(o, "# {l}");
        }
    }
    let _ = writeln!(o, "[system]\nname = {}\ntime = {}", s.name, s.time);
    let _ = writeln!(o, "\n[states]");
    for x in &s.states {
        let _ = writeln!(o, "{x}");
    }
    if !s.inputs.is_empty() {
        let _ = writeln!(o, "\n[inputs]");
        for u in &s.inputs {
            let _ = writeln!(o, "{u}");
        }
    }
    if !s.params.is_empty() {
        let _ = writeln!(o, "\n[params]");
        for p in &s.params {
            match p.default {
                Some(d) => {
                    let _ = writeln!(o, "{} = {}", p.name, fmt_num(d));
                }
                None => {
                    let _ = writeln!(o, "{}", p.name);
                }
            }
        }
    }
    let _ = writeln!(o, "\n[dynamics]");
    for (x, e) in s.states.iter().zip(&s.dynamics) {
        let _ = writeln!(o, "{x} = {e}");
    }
    for a in &f.actions {
        let _ = writeln!(o, "\n[action.{}]\nparams = {}", a.name, a.params.join(", "));
        for c in &a.coords {
            let _ = writeln!(o, "{c} = {}", a.maps[c]);
        }
        if let Some(law) = &a.compose {
            for (p, e) in law {
                let _ = writeln!(o, "compose.{p} = {e}");
            }
        }
    }
    for (name, v) in &f.generators {
        let _ = writeln!(o, "\n[generator.{name}]");
        for c in &v.coords {
            let e = v.coeff(c);
            if !e.is_zero_literal() {
                let _ = writeln!(o, "{c} = {e}");
            }
        }
    }
    for out in &f.outputs {
        let _ = writeln!(o, "\n[output.{}]", out.name);
        for (n, e) in out.names.iter().zip(&out.exprs) {
            let _ = writeln!(o, "{n} = {e}");
        }
    }
    for fr in &f.frames {
        let _ = writeln!(o, "\n[frame.{}]\naction = {}", fr.name, fr.action);
        if let Some(k) = fr.order {
            let _ = writeln!(o, "order = {k}");
        }
        if fr.mode == SolveMode::Numeric {
            let _ = writeln!(o, "mode = numeric");
        }
        for (c, k) in &fr.components {
            let _ = writeln!(o, "{c} = {k}");
        }
    }
    for m in &f.maps {
        let _ = writeln!(o, "\n[map.{}]\ntarget = {}\ntime = {}", m.name, m.target, m.time);
        for (c, e) in &m.maps {
            let _ = writeln!(o, "{c} = {e}");
        }
    }
    o
}

enum Section {
    None,
    System,
    States,
    Inputs,
    Params,
    Dynamics,
    Action(usize),
    Generator(usize),
    Output(usize),
    Frame(usize),
    Map(usize),
}

fn is_ident(s: &str) -> bool {
    let mut ch = s.chars();
    matches!(ch.next(), Some(c) if c.is_ascii_alphabetic() || c == '_') && ch.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses a system file and re-verifies its generators.
pub fn parse_dsl(text: &str, tol: &Tolerances) -> Result<SystemFile, DslError> {
    let f = parse_unchecked(text)?;
    f.verify_generators(tol)?;
    Ok(f)
}

/// Parses without the generator check.
pub fn parse_unchecked(text: &str) -> Result<SystemFile, DslError> {
    let mut name = None;
    let mut time = "t".to_string();
    let mut states: Vec<String> = Vec::new();
    let mut inputs: Vec<String> = Vec::new();
    let mut params: Vec<Param> = Vec::new();
    let mut dynamics: HashMap<String, (usize, Expr)> = HashMap::new();
    let mut actions: Vec<GroupAction> = Vec::new();
    let mut gens: Vec<(String, Vec<(String, Expr)>)> = Vec::new();
    let mut outputs: Vec<OutputSpec> = Vec::new();
    let mut frames: Vec<FrameSpec> = Vec::new();
    let mut maps: Vec<SystemMap> = Vec::new();
    let mut note_lines: Vec<String> = Vec::new();
    let mut seen_section = false;
    let mut sec = Section::None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| DslError::Syntax { line, message };
        if let Some(c) = raw.trim_start().strip_prefix('#') {
            if !seen_section {
                note_lines.push(c.strip_prefix(' ').unwrap_or(c).to_string());
            }
            continue;
        }
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(h) = body.strip_prefix('[') {
            let h = h.strip_suffix(']').ok_or_else(|| err("unterminated section header".into()))?.trim();
            seen_section = true;
            let (kind, label) = match h.split_once('.') {
                Some((k, l)) => (k, Some(l.trim().to_string())),
                None => (h, None),
            };
            if let Some(l) = &label {
                if !is_ident(l) {
                    return Err(err(format!("bad section name `{l}`")));
                }
            }
            sec = match (kind, label) {
                ("system", None) => Section::System,
                ("states", None) => Section::States,
                ("inputs", None) => Section::Inputs,
                ("params", None) => Section::Params,
                ("dynamics", None) => Section::Dynamics,
                ("action", Some(l)) => {
                    actions.push(GroupAction {
                        name: l,
                        params: Vec::new(),
                        coords: Vec::new(),
                        maps: BTreeMap::new(),
                        compose: None,
                    });
                    Section::Action(actions.len() - 1)
                }
                ("generator", Some(l)) => {
                    gens.push((l, Vec::new()));
                    Section::Generator(gens.len() - 1)
                }
                ("output", Some(l)) => {
                    outputs.push(OutputSpec {
                        name: l,
                        names: Vec::new(),
                        exprs: Vec::new(),
                    });
                    Section::Output(outputs.len() - 1)
                }
                ("frame", Some(l)) => {
                    frames.push(FrameSpec {
                        name: l,
                        action: String::new(),
                        order: None,
                        mode: SolveMode::Symbolic,
                        components: Vec::new(),
                    });
                    Section::Frame(frames.len() - 1)
                }
                ("map", Some(l)) => {
                    maps.push(SystemMap {
                        name: l,
                        target: String::new(),
                        time: Expr::var("t"),
                        maps: BTreeMap::new(),
                    });
                    Section::Map(maps.len() - 1)
                }
                _ => return Err(err(format!("unknown section `[{h}]`"))),
            };
            continue;
        }
        let kv = body.split_once('=').map(|(k, v)| (k.trim(), v.trim()));
        let expr = |s: &str| parse(s).map_err(|source| DslError::Expr { line, source });
        let ident = |s: &str| -> Result<String, DslError> {
            if is_ident(s) {
                Ok(s.to_string())
            } else {
                Err(err(format!("`{s}` is not an identifier")))
            }
        };
        let need_kv = || kv.ok_or_else(|| err("expected `key = value`".into()));
        match sec {
            Section::None => return Err(err("content before the first section".into())),
            Section::System => {
                let (k, v) = need_kv()?;
                match k {
                    "name" => name = Some(ident(v)?),
                    "time" => time = ident(v)?,
                    _ => return Err(err(format!("unknown key `{k}` in [system]"))),
                }
            }
            Section::States => states.push(ident(body)?),
            Section::Inputs => inputs.push(ident(body)?),
            Section::Params => match kv {
                Some((k, v)) => {
                    let d: f64 = v.parse().map_err(|_| err(format!("`{v}` is not a number")))?;
                    params.push(Param {
                        name: ident(k)?,
                        default: Some(d),
                    });
                }
                None => params.push(Param {
                    name: ident(body)?,
                    default: None,
                }),
            },
            Section::Dynamics => {
                let (k, v) = need_kv()?;
                if dynamics.insert(ident(k)?, (line, expr(v)?)).is_some() {
                    return Err(err(format!("second equation for `{k}`")));
                }
            }
            Section::Action(a) => {
                let (k, v) = need_kv()?;
                let act = &mut actions[a];
                if k == "params" {
                    act.params = v.split(',').map(|p| ident(p.trim())).collect::<Result<_, _>>()?;
                } else if let Some(p) = k.strip_prefix("compose.") {
                    act.compose.get_or_insert_with(BTreeMap::new).insert(ident(p)?, expr(v)?);
                } else {
                    let c = ident(k)?;
                    act.coords.push(c.clone());
                    act.maps.insert(c, expr(v)?);
                }
            }
            Section::Generator(g) => {
                let (k, v) = need_kv()?;
                let c = ident(k)?;
                gens[g].1.push((c, expr(v)?));
            }
            Section::Output(o) => {
                let (k, v) = need_kv()?;
                outputs[o].names.push(ident(k)?);
                outputs[o].exprs.push(expr(v)?);
            }
            Section::Frame(fi) => {
                let (k, v) = need_kv()?;
                let fr = &mut frames[fi];
                match k {
                    "action" => fr.action = ident(v)?,
                    "order" => fr.order = Some(v.parse().map_err(|_| err(format!("bad order `{v}`")))?),
                    "mode" => {
                        fr.mode = match v {
                            "symbolic" => SolveMode::Symbolic,
                            "numeric" => SolveMode::Numeric,
                            _ => return Err(err(format!("unknown mode `{v}`"))),
                        }
                    }
                    _ => fr.components.push((ident(k)?, expr(v)?)),
                }
            }
            Section::Map(mi) => {
                let (k, v) = need_kv()?;
                let m = &mut maps[mi];
                match k {
                    "target" => m.target = ident(v)?,
                    "time" => m.time = expr(v)?,
                    _ => {
                        m.maps.insert(ident(k)?, expr(v)?);
                    }
                }
            }
        }
    }

    let name = name.ok_or(DslError::Syntax {
        line: 0,
        message: "[system] needs a name".into(),
    })?;
    let mut dyn_list = Vec::new();
    for x in &states {
        let (_, e) = dynamics.remove(x).ok_or_else(|| DslError::Syntax {
            line: 0,
            message: format!("no dynamics for state `{x}`"),
        })?;
        dyn_list.push(e);
    }
    if let Some((x, (line, _))) = dynamics.into_iter().next() {
        return Err(DslError::Syntax {
            line,
            message: format!("`{x}` is not a declared state"),
        });
    }
    let system = ControlSystem {
        name,
        time,
        states,
        inputs,
        params,
        dynamics: dyn_list,
    };
    system.validate()?;
    let coords = system.coords();
    let generators = gens
        .into_iter()
        .map(|(n, pairs)| {
            let mut all = coords.clone();
            for (c, _) in &pairs {
                if !all.contains(c) {
                    all.push(c.clone());
                }
            }
            let mut v = VectorField::new(&all);
            for (c, e) in pairs {
                v = v.with(&c, e);
            }
            (n, v)
        })
        .collect();
    for fr in &frames {
        if !actions.iter().any(|a| a.name == fr.action) {
            return Err(DslError::Unknown {
                kind: "action",
                name: fr.action.clone(),
            });
        }
    }
    Ok(SystemFile {
        system,
        actions,
        generators,
        outputs,
        frames,
        maps,
        note: if note_lines.is_empty() { None } else { Some(note_lines.join("\n")) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAR: &str = "# kinematic car
[system]
name = car

[states]
z1
z2
theta

[inputs]
v
phi

[params]
l = 1

[dynamics]
z1 = v*cos(theta)
z2 = v*sin(theta)
theta = v/l*tan(phi)   # steering

[action.rot]
params = a
z1 = z1*cos(a) - z2*sin(a)
z2 = z1*sin(a) + z2*cos(a)
theta = theta + a
compose.a = a_1 + a_2

[generator.v1]
z1 = -z2
z2 = z1
theta = 1

[frame.rot0]
action = rot
theta = 0
";

    #[test]
    fn parse_and_round_trip() {
        let tol = Tolerances::default();
        let f = parse_dsl(CAR, &tol).unwrap();
        assert_eq!(f.system.states, vec!["z1", "z2", "theta"]);
        assert_eq!(f.note.as_deref(), Some("kinematic car"));
        let again = parse_dsl(&to_dsl(&f), &tol).unwrap();
        assert_eq!(again.canonical(), f.canonical());
        let fr = f.build_frame("rot0", &tol).unwrap();
        assert_eq!(fr.gamma_exprs().unwrap()[0].to_string(), "-theta");
    }

    #[test]
    fn errors_carry_lines() {
        let tol = Tolerances::default();
        let bad = CAR.replace("z2 = v*sin(theta)", "z2 = v*sin(theta");
        assert!(matches!(parse_dsl(&bad, &tol), Err(DslError::Expr { line: 19, .. })));
        let bad = CAR.replace("theta = 1", "theta = 2");
        assert!(matches!(parse_dsl(&bad, &tol), Err(DslError::NotASymmetry { .. })));
        let bad = CAR.replace("[inputs]", "[input]");
        assert!(matches!(parse_dsl(&bad, &tol), Err(DslError::Syntax { line: 10, .. })));
    }
}
