//! Damped Gauss-Newton (Levenberg-Marquardt) for small dense problems.
//!
//! Minimizes `½‖r(p)‖²` with Marquardt's diagonal scaling, so parameters
//! living on very different scales (a rational offset of 1e4 next to an
//! asymptote of 0.9) are damped evenly. An optional projection keeps
//! iterates inside a feasible box.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 200;
pub const STEP_TOLERANCE: f64 = 1e-10;
pub const COST_TOLERANCE: f64 = 1e-12;
const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MIN: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e16;

pub trait LeastSquares {
    fn n_params(&self) -> usize;

    /// Residual vector, or `None` if undefined at `p`.
    fn residuals(&self, p: &[f64]) -> Option<Vec<f64>>;

    /// Row-major Jacobian of the residuals, one row per residual.
    fn jacobian(&self, p: &[f64]) -> Vec<Vec<f64>>;

    /// Moves `p` into the feasible set; returns true if anything changed.
    fn project(&self, _p: &mut [f64]) -> bool {
        false
    }

    /// True if `p` sits on the boundary of the feasible set.
    fn at_bound(&self, _p: &[f64]) -> bool {
        false
    }
}

#[derive(Clone, Debug)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// `½‖r‖²` at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The solution required projection onto the feasible set.
    pub projected: bool,
    /// Cost after the start point and after every accepted step.
    pub cost_history: Vec<f64>,
}

fn half_sq_norm(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

pub fn minimize(
    problem: &impl LeastSquares,
    start: &[f64],
    max_iterations: usize,
) -> Result<LmReport> {
    let n = problem.n_params();
    let mut p = start.to_vec();
    problem.project(&mut p);
    let mut r = problem
        .residuals(&p)
        .filter(|r| r.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::NonFinite(format!("residuals undefined at start {p:?}")))?;
    let mut cost = half_sq_norm(&r);
    let mut history = vec![cost];
    let mut lambda = LAMBDA_INIT;
    let mut converged = cost == 0.0;
    let mut iterations = 0;

    while !converged && iterations < max_iterations {
        iterations += 1;
        let rows = problem.jacobian(&p);
        let m = rows.len();
        let jac = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian(format!(
                "non-finite jacobian at {p:?}"
            )));
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * DVector::from_column_slice(&r);
        let max_diag = (0..n).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
        let floor = if max_diag > 0.0 {
            1e-12 * max_diag
        } else {
            1.0
        };
        let scale: Vec<f64> = (0..n).map(|i| jtj[(i, i)].max(floor)).collect();
        let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();

        loop {
            let mut lhs = jtj.clone();
            for i in 0..n {
                lhs[(i, i)] += lambda * scale[i];
            }
            let Some(chol) = lhs.cholesky() else {
                lambda *= 10.0;
                if lambda > LAMBDA_MAX {
                    return Err(Error::SingularJacobian(format!(
                        "damping exhausted without a factorizable system at {p:?}"
                    )));
                }
                continue;
            };
            let step = chol.solve(&(-&grad));
            let step_small = step.norm() <= STEP_TOLERANCE * (p_norm + STEP_TOLERANCE);
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            problem.project(&mut trial);
            let trial_r = problem
                .residuals(&trial)
                .filter(|r| r.iter().all(|v| v.is_finite()));
            let trial_cost = trial_r.as_deref().map(half_sq_norm);
            match (trial_r, trial_cost) {
                (Some(tr), Some(tc)) if tc <= cost => {
                    let rel_decrease = if cost > 0.0 { (cost - tc) / cost } else { 0.0 };
                    p = trial;
                    r = tr;
                    cost = tc;
                    history.push(cost);
                    lambda = (lambda / 10.0).max(LAMBDA_MIN);
                    converged = step_small || rel_decrease < COST_TOLERANCE || cost == 0.0;
                    break;
                }
                _ => {
                    if step_small {
                        converged = true;
                        break;
                    }
                    lambda *= 10.0;
                    if lambda > LAMBDA_MAX {
                        // No descent direction left at this damping level.
                        converged = true;
                        break;
                    }
                }
            }
        }
    }

    let projected = problem.at_bound(&p);
    Ok(LmReport {
        params: p,
        cost,
        iterations,
        converged: converged && !projected,
        projected,
        cost_history: history,
    })
}
