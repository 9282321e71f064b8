//! Built-in example systems with their symmetry data.

use thiserror::Error;

use crate::dsl::{parse_dsl, DslError, SystemFile};
use crate::geometry::{check_lie_backlund_map, GeometryError};
use crate::Tolerances;

pub const NAMES: [&str; 6] = ["oscillator", "car", "pvtol", "pvtol_reduced", "bioreactor", "bioreactor_augmented"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CatalogError {
    #[error("no catalog entry `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("map `{0}` is not a Lie-Backlund map")]
    MapFailed(String),
}

const OSCILLATOR: &str = "# harmonic oscillator in first-order form
[system]
name = oscillator
time = t

[states]
phi
dphi

[params]
omega = 1

[dynamics]
phi = dphi
dphi = -omega^2*phi

[action.scaling]
params = a
phi = exp(a)*phi
dphi = exp(a)*dphi
compose.a = a_1 + a_2

[generator.scaling]
phi = phi
dphi = dphi

[generator.time]
t = 1

[output.position]
y = phi

[frame.scale1]
action = scaling
phi = 1
";

const CAR: &str = "# kinematic car, rear axle position z and heading theta
[system]
name = car
time = t

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
theta = v/l*tan(phi)

[action.se2]
params = a, b1, b2
z1 = z1*cos(a) - z2*sin(a) + b1
z2 = z1*sin(a) + z2*cos(a) + b2
theta = theta + a
compose.a = a_1 + a_2
compose.b1 = b1_1*cos(a_2) - b2_1*sin(a_2) + b1_2
compose.b2 = b1_1*sin(a_2) + b2_1*cos(a_2) + b2_2

[action.rot]
params = a
z1 = z1*cos(a) - z2*sin(a)
z2 = z1*sin(a) + z2*cos(a)
theta = theta + a
compose.a = a_1 + a_2

[action.se2_output]
params = a, b1, b2
y1 = y1*cos(a) - y2*sin(a) + b1
y2 = y1*sin(a) + y2*cos(a) + b2
compose.a = a_1 + a_2
compose.b1 = b1_1*cos(a_2) - b2_1*sin(a_2) + b1_2
compose.b2 = b1_1*sin(a_2) + b2_1*cos(a_2) + b2_2

[generator.v1]
z1 = -z2
z2 = z1
theta = 1

[generator.v2]
z1 = 1

[generator.v3]
z2 = 1

[output.position]
y1 = z1
y2 = z2

[frame.rot0]
action = rot
theta = 0

[frame.se2_tracking]
action = se2_output
order = 1
y1 = 0
y2 = 0
y2_d1 = 0
";

const PVTOL: &str = "# planar vertical take-off and landing aircraft
[system]
name = pvtol
time = t

[states]
y1
y2
theta
dy1
dy2
dtheta

[inputs]
u1
u2

[params]
g = 9.81
eps = 0.1

[dynamics]
y1 = dy1
y2 = dy2
theta = dtheta
dy1 = -u1*sin(theta) + eps*u2*cos(theta)
dy2 = u1*cos(theta) + eps*u2*sin(theta) + g
dtheta = u2

[action.translation]
params = b1, b2
y1 = y1 + b1
y2 = y2 + b2
compose.b1 = b1_1 + b1_2
compose.b2 = b2_1 + b2_2

[generator.shift1]
y1 = 1

[generator.shift2]
y2 = 1

[generator.time]
t = 1

[output.position]
y1 = y1
y2 = y2

[map.to_reduced]
target = pvtol_reduced
time = t
z1 = y1 - eps*sin(theta)
z2 = y2 + eps*cos(theta)
dz1 = dy1 - eps*cos(theta)*dtheta
dz2 = dy2 - eps*sin(theta)*dtheta
v1 = theta
v2 = u1 - eps*dtheta^2
";

const PVTOL_REDUCED: &str = "# PVTOL after removing the coupling through eps
[system]
name = pvtol_reduced
time = t

[states]
z1
z2
dz1
dz2

[inputs]
v1
v2

[params]
g = 9.81

[dynamics]
z1 = dz1
z2 = dz2
dz1 = -v2*sin(v1)
dz2 = v2*cos(v1) + g

[generator.shift1]
z1 = 1

[generator.shift2]
z2 = 1

[generator.time]
t = 1

[output.position]
y1 = z1
y2 = z2
";

const BIOREACTOR: &str = "# predator-prey chemostat with Haldane predator kinetic
[system]
name = bioreactor
time = t

[states]
p
b
s

[inputs]
D
s_F

[params]
alpha = 1
beta = 1
nu_m = 1
mu_m = 1
K = 1
K_S = 1
K_I = 1

[dynamics]
p = -D*p + nu_m*b/(b + K_S + K_I*b^2)*p
b = -D*b + mu_m*s/(K + s)*b - alpha*nu_m*b/(b + K_S + K_I*b^2)*p
s = D*(s_F - s) - beta*mu_m*s/(K + s)*b

[output.populations]
y1 = p
y2 = b
";

const BIOREACTOR_AUGMENTED: &str = "# chemostat with the inhibition coefficient as a constant state
[system]
name = bioreactor_augmented
time = t

[states]
p
b
s
K_I

[inputs]
D
s_F

[params]
alpha = 1
beta = 1
nu_m = 1
mu_m = 1
K = 1
K_S = 1

[dynamics]
p = -D*p + nu_m*b/(b + K_S + K_I*b^2)*p
b = -D*b + mu_m*s/(K + s)*b - alpha*nu_m*b/(b + K_S + K_I*b^2)*p
s = D*(s_F - s) - beta*mu_m*s/(K + s)*b
K_I = 0

[action.kinetic]
params = a
p = p
b = b
s = K*(mu_m*s/(K + s) + (nu_m*b/(b + K_S + (K_I + a)*b^2) - nu_m*b/(b + K_S + K_I*b^2))*(1 + alpha*p/b))/(mu_m - mu_m*s/(K + s) - (nu_m*b/(b + K_S + (K_I + a)*b^2) - nu_m*b/(b + K_S + K_I*b^2))*(1 + alpha*p/b))
K_I = K_I + a
compose.a = a_1 + a_2

[output.populations]
y1 = p
y2 = b

[frame.substrate]
action = kinetic
s = 1/2
";

/// DSL source of a catalog entry.
pub fn source(name: &str) -> Result<&'static str, CatalogError> {
    Ok(match name {
        "oscillator" => OSCILLATOR,
        "car" => CAR,
        "pvtol" => PVTOL,
        "pvtol_reduced" => PVTOL_REDUCED,
        "bioreactor" => BIOREACTOR,
        "bioreactor_augmented" => BIOREACTOR_AUGMENTED,
        _ => return Err(CatalogError::Unknown(name.to_string())),
    })
}

/// Loads an entry; declared generators are re-verified.
pub fn get(name: &str) -> Result<SystemFile, CatalogError> {
    Ok(parse_dsl(source(name)?, &Tolerances::default())?)
}

/// Verifies every map of an entry against its target entry.
pub fn check_maps(entry: &SystemFile, tol: &Tolerances) -> Result<(), CatalogError> {
    for m in &entry.maps {
        let target = get(&m.target)?;
        let res = check_lie_backlund_map(m, &entry.system, &target.system, tol)?;
        if !res.passed() {
            return Err(CatalogError::MapFailed(m.name.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::to_dsl;

    #[test]
    fn all_entries_load_and_round_trip() {
        let tol = Tolerances::default();
        for n in NAMES {
            let e = get(n).unwrap();
            assert_eq!(e.system.name, n);
            check_maps(&e, &tol).unwrap();
            let back = parse_dsl(&to_dsl(&e), &tol).unwrap();
            assert_eq!(back.canonical(), e.canonical());
        }
        assert!(matches!(get("nonexistent"), Err(CatalogError::Unknown(_))));
    }

    #[test]
    fn frames_build() {
        let tol = Tolerances::default();
        for n in NAMES {
            let e = get(n).unwrap();
            for f in &e.frames {
                let fr = e.build_frame(&f.name, &tol).unwrap();
                assert!(fr.is_symbolic(), "{n}/{}", f.name);
            }
        }
    }
}
