//! Control systems in explicit state form `x' = f(t, x, u)`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::expr::{differentiate, simplify, Expr};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("a system needs at least one state")]
    NoStates,
    #[error("{states} states but {dynamics} dynamics expressions")]
    DimensionMismatch { states: usize, dynamics: usize },
    #[error("symbol `{0}` declared twice")]
    Duplicate(String),
    #[error("symbol `{symbol}` in {context} is not declared")]
    Undeclared { symbol: String, context: String },
}

/// Model parameter with an optional numeric default.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub default: Option<f64>,
}

/// Name of the `k`-th time derivative coordinate of `base`.
pub fn deriv_name(base: &str, k: usize) -> String {
    if k == 0 {
        base.to_string()
    } else {
        format!("{base}_d{k}")
    }
}

/// Splits `x_d3` into `("x", 3)`; plain names have order 0.
pub fn split_deriv(name: &str) -> (&str, usize) {
    if let Some(pos) = name.rfind("_d") {
        let tail = &name[pos + 2..];
        if !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit()) && !tail.starts_with('0') {
            if let Ok(k) = tail.parse() {
                return (&name[..pos], k);
            }
        }
    }
    (name, 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSystem {
    pub name: String,
    pub time: String,
    pub states: Vec<String>,
    pub inputs: Vec<String>,
    pub params: Vec<Param>,
    pub dynamics: Vec<Expr>,
}

impl ControlSystem {
    pub fn new(
        name: &str,
        states: &[&str],
        inputs: &[&str],
        params: &[(&str, Option<f64>)],
        dynamics: Vec<Expr>,
    ) -> Result<ControlSystem, SystemError> {
        let sys = ControlSystem {
            name: name.to_string(),
            time: "t".to_string(),
            states: states.iter().map(|s| s.to_string()).collect(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            params: params
                .iter()
                .map(|(n, d)| Param {
                    name: n.to_string(),
                    default: *d,
                })
                .collect(),
            dynamics,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<(), SystemError> {
        if self.states.is_empty() {
            return Err(SystemError::NoStates);
        }
        if self.states.len() != self.dynamics.len() {
            return Err(SystemError::DimensionMismatch {
                states: self.states.len(),
                dynamics: self.dynamics.len(),
            });
        }
        let mut seen = BTreeSet::new();
        seen.insert(self.time.clone());
        for s in self.states.iter().chain(&self.inputs).chain(self.params.iter().map(|p| &p.name)) {
            if !seen.insert(s.clone()) {
                return Err(SystemError::Duplicate(s.clone()));
            }
        }
        for (x, f) in self.states.iter().zip(&self.dynamics) {
            for s in f.free_symbols() {
                if !seen.contains(&s) {
                    return Err(SystemError::Undeclared {
                        symbol: s,
                        context: format!("dynamics of {x}"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn m(&self) -> usize {
        self.inputs.len()
    }

    /// `(t, x, u)`.
    pub fn coords(&self) -> Vec<String> {
        let mut c = vec![self.time.clone()];
        c.extend(self.states.iter().cloned());
        c.extend(self.inputs.iter().cloned());
        c
    }

    /// `(t, x, u, x', u')`.
    pub fn jet_coords(&self) -> Vec<String> {
        let mut c = self.coords();
        c.extend(self.states.iter().map(|x| deriv_name(x, 1)));
        c.extend(self.inputs.iter().map(|u| deriv_name(u, 1)));
        c
    }

    /// States and inputs, the dependent variables of the jet bundle.
    pub fn dependents(&self) -> Vec<String> {
        self.states.iter().chain(&self.inputs).cloned().collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn param_env(&self) -> HashMap<String, f64> {
        self.params
            .iter()
            .filter_map(|p| p.default.map(|d| (p.name.clone(), d)))
            .collect()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn f(&self, state: &str) -> Option<&Expr> {
        self.state_index(state).map(|i| &self.dynamics[i])
    }

    /// Residuals `x_d1 - f` defining the system submanifold.
    pub fn residual(&self) -> Vec<Expr> {
        self.states
            .iter()
            .zip(&self.dynamics)
            .map(|(x, f)| Expr::var(&deriv_name(x, 1)) - f.clone())
            .collect()
    }

    /// Substitution `x_d1 := f` that restricts jet expressions to the system.
    pub fn on_system(&self) -> BTreeMap<String, Expr> {
        self.states
            .iter()
            .zip(&self.dynamics)
            .map(|(x, f)| (deriv_name(x, 1), f.clone()))
            .collect()
    }

    /// Rates for the total derivative along solutions: `x -> f`,
    /// `u_dk -> u_d(k+1)` up to `input_order`.
    pub fn rates(&self, input_order: usize) -> BTreeMap<String, Expr> {
        let mut r = self.on_system_rates();
        for u in &self.inputs {
            for k in 0..=input_order {
                r.insert(deriv_name(u, k), Expr::var(&deriv_name(u, k + 1)));
            }
        }
        r
    }

    fn on_system_rates(&self) -> BTreeMap<String, Expr> {
        self.states.iter().cloned().zip(self.dynamics.iter().cloned()).collect()
    }

    /// Lie derivative `dh/dt + sum f^i dh/dx^i` (inputs held constant).
    pub fn lie_derivative(&self, h: &Expr) -> Expr {
        let mut terms = vec![differentiate(h, &self.time)];
        for (x, f) in self.states.iter().zip(&self.dynamics) {
            let d = differentiate(h, x);
            if !d.is_zero_literal() {
                terms.push(d * f.clone());
            }
        }
        simplify(&crate::expr::add(terms))
    }

    /// Copy with parameter defaults substituted as exact constants.
    pub fn with_params_substituted(&self) -> ControlSystem {
        let map: BTreeMap<String, Expr> = self
            .params
            .iter()
            .filter_map(|p| p.default.map(|d| (p.name.clone(), Expr::from_f64(d))))
            .collect();
        ControlSystem {
            dynamics: self.dynamics.iter().map(|f| simplify(&f.subs(&map))).collect(),
            params: self.params.iter().filter(|p| p.default.is_none()).cloned().collect(),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn derivative_names() {
        assert_eq!(deriv_name("z1", 2), "z1_d2");
        assert_eq!(split_deriv("z1_d2"), ("z1", 2));
        assert_eq!(split_deriv("y_data"), ("y_data", 0));
        assert_eq!(split_deriv("K_d"), ("K_d", 0));
    }

    #[test]
    fn validation() {
        let bad = ControlSystem::new("s", &["x"], &[], &[], vec![parse("x + q").unwrap()]);
        assert!(matches!(bad, Err(SystemError::Undeclared { .. })));
        let bad = ControlSystem::new("s", &["x", "y"], &[], &[], vec![parse("x").unwrap()]);
        assert!(matches!(bad, Err(SystemError::DimensionMismatch { .. })));
        let ok = ControlSystem::new("s", &["x"], &["u"], &[], vec![parse("u").unwrap()]).unwrap();
        assert_eq!(ok.residual()[0].to_string(), "x_d1 - u");
    }
}
