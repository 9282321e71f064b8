//! Small dense numeric helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NewtonError {
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular Jacobian at iteration {0}")]
    Singular(usize),
    #[error("non-finite residual at iteration {0}")]
    NonFinite(usize),
}

/// Numeric rank: singular values above `tol * max(1, sigma_max)`.
pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let cut = tol * smax.max(1.0);
    sv.iter().filter(|s| **s > cut).count()
}

/// Least-squares solution of `a x = b`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-12).ok()
}

/// Greedy column selection: repeatedly take the column with the largest
/// component orthogonal to the ones already chosen. Returns at most
/// `count` indices, stopping early when the remaining columns fall below
/// `tol`.
pub fn pivot_columns(m: &DMatrix<f64>, count: usize, tol: f64) -> Vec<usize> {
    let mut cols: Vec<DVector<f64>> = (0..m.ncols()).map(|j| m.column(j).into_owned()).collect();
    let mut chosen = Vec::new();
    while chosen.len() < count {
        let mut best = None;
        let mut best_norm = tol;
        for (j, c) in cols.iter().enumerate() {
            if chosen.contains(&j) {
                continue;
            }
            let n = c.norm();
            if n > best_norm * (1.0 + 1e-12) {
                best_norm = n;
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        let q = cols[j].clone() / best_norm;
        for c in cols.iter_mut() {
            let p = q.dot(c);
            *c -= &q * p;
        }
        chosen.push(j);
    }
    chosen
}

/// Newton iteration for `f(x) = 0` with a user Jacobian. Converges when the
/// residual max-norm drops below `tol`.
pub fn newton<F, J>(f: F, jac: J, x0: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>, NewtonError>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
    J: Fn(&[f64]) -> Option<DMatrix<f64>>,
{
    let mut x = x0.to_vec();
    let mut res = 0.0;
    for it in 0..max_iter {
        let fx = f(&x).ok_or(NewtonError::NonFinite(it))?;
        res = fx.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !res.is_finite() {
            return Err(NewtonError::NonFinite(it));
        }
        if res < tol {
            return Ok(x);
        }
        let j = jac(&x).ok_or(NewtonError::NonFinite(it))?;
        let rhs = DVector::from_vec(fx);
        let step = j.lu().solve(&rhs).ok_or(NewtonError::Singular(it))?;
        // damped step: halve until the residual decreases
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, si)| xi - lambda * si).collect();
            if let Some(ft) = f(&trial) {
                let r = ft.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if r.is_finite() && r < res {
                    x = trial;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            let fx = f(&x).unwrap_or_default();
            let r = fx.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            return Err(NewtonError::NoConvergence {
                iterations: it + 1,
                residual: r,
            });
        }
    }
    if let Some(fx) = f(&x) {
        res = fx.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if res < tol {
            return Ok(x);
        }
    }
    Err(NewtonError::NoConvergence {
        iterations: max_iter,
        residual: res,
    })
}

/// Central-difference Jacobian of `f` at `x`.
pub fn fd_jacobian<F>(f: &F, x: &[f64], h: f64) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let f0 = f(x)?;
    let mut j = DMatrix::zeros(f0.len(), x.len());
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let step = h * x[k].abs().max(1.0);
        xp[k] = x[k] + step;
        let fp = f(&xp)?;
        xp[k] = x[k] - step;
        let fm = f(&xp)?;
        xp[k] = x[k];
        for i in 0..f0.len() {
            j[(i, k)] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
    Some(j)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_and_pivots() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 2.0, 4.0, 0.0]);
        assert_eq!(rank(&m, 1e-8), 1);
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 3.0, 0.0, 1.0, 0.0]);
        assert_eq!(pivot_columns(&m, 2, 1e-8), vec![2, 1]);
    }

    #[test]
    fn newton_square_root() {
        let f = |x: &[f64]| Some(vec![x[0] * x[0] - 2.0]);
        let j = |x: &[f64]| Some(DMatrix::from_element(1, 1, 2.0 * x[0]));
        let r = newton(f, j, &[1.0], 1e-12, 50).unwrap();
        assert!((r[0] - 2f64.sqrt()).abs() < 1e-12);
    }
}
