//! Lie symmetries of nonlinear control systems: symbolic verification,
//! moving frames, invariant tracking errors, reduction and simulation.

pub mod cli;
pub mod control;
pub mod dsl;
pub mod expr;
pub mod frames;
pub mod geometry;
pub mod linalg;
pub mod reduction;
pub mod sim;
pub mod symmetry;
pub mod system;
pub mod systems;

use expr::ZeroTest;

/// Numeric thresholds shared by all operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Numeric fallback of the zero test.
    pub zero: f64,
    /// Ranks, consistency and invariance checks.
    pub num: f64,
    /// Newton residual.
    pub newton: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            zero: 1e-9,
            num: 1e-8,
            newton: 1e-12,
        }
    }
}

impl Tolerances {
    pub fn zero_test(&self) -> ZeroTest {
        ZeroTest::with_tol(self.zero)
    }
}
