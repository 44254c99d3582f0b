//! Bounded nonlinear least squares (Levenberg–Marquardt).
//!
//! Minimises `½‖r(p)‖²` subject to box bounds. The damping follows
//! Nielsen's update rule with Marquardt's diagonal scaling; steps are
//! projected onto the box and the gain ratio is computed from the projected
//! step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A residual vector with an analytic Jacobian.
pub trait Residuals {
    fn n_residuals(&self) -> usize;
    fn n_params(&self) -> usize;
    fn eval(&self, p: &[f64], r: &mut [f64]);
    /// Fills the `n_residuals × n_params` Jacobian `∂r_i/∂p_j`.
    fn jacobian(&self, p: &[f64], j: &mut DMatrix<f64>);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsqOptions {
    pub max_iter: usize,
    pub xtol: f64,
    pub ftol: f64,
    pub gtol: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            max_iter: 400,
            xtol: 1e-13,
            ftol: 1e-15,
            gtol: 1e-14,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LsqSolution {
    pub params: Vec<f64>,
    /// `‖r‖` at the solution.
    pub residual_norm: f64,
    /// `s² (JᵀJ)⁺` with `s² = ‖r‖²/(m - n)`.
    pub covariance: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl LsqSolution {
    pub fn uncertainties(&self) -> Vec<f64> {
        (0..self.params.len())
            .map(|i| self.covariance[i][i].max(0.0).sqrt())
            .collect()
    }

    pub fn cost(&self) -> f64 {
        0.5 * self.residual_norm * self.residual_norm
    }
}

fn clamp(p: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((x, lo), hi) in p.iter_mut().zip(lower).zip(upper) {
        *x = x.clamp(*lo, *hi);
    }
}

/// Minimises `½‖r(p)‖²` from `p0` within `[lower, upper]`.
pub fn minimize(
    model: &dyn Residuals,
    p0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LsqOptions,
) -> Result<LsqSolution> {
    let n = model.n_params();
    let m = model.n_residuals();
    if p0.len() != n || lower.len() != n || upper.len() != n {
        return Err(Error::Parameter(
            "parameter and bound lengths differ".into(),
        ));
    }
    if m < n {
        return Err(Error::Parameter(format!(
            "{m} residuals cannot determine {n} parameters"
        )));
    }
    let mut x = p0.to_vec();
    clamp(&mut x, lower, upper);
    let mut r = vec![0.0; m];
    model.eval(&x, &mut r);
    let mut cost = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    if !cost.is_finite() {
        return Err(Error::Fit(
            "non-finite residuals at the starting point".into(),
        ));
    }
    let mut jac = DMatrix::zeros(m, n);
    model.jacobian(&x, &mut jac);
    let mut a = jac.transpose() * &jac;
    let mut g = jac.transpose() * DVector::from_column_slice(&r);
    let mut mu = 1e-3 * (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max).max(1e-300);
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut x_new = vec![0.0; n];
    let mut r_new = vec![0.0; m];

    for it in 0..opts.max_iter {
        iterations = it + 1;
        let gmax = (0..n)
            .filter(|&i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .map(|i| g[i].abs())
            .fold(0.0, f64::max);
        if gmax <= opts.gtol * (1.0 + cost) {
            converged = true;
            break;
        }
        // Variables pinned at a bound with the gradient pointing outward are
        // held fixed for this step.
        let pinned: Vec<bool> = (0..n)
            .map(|i| (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0))
            .collect();
        let mut damped = a.clone();
        let mut rhs = -&g;
        for i in 0..n {
            damped[(i, i)] += mu * a[(i, i)].max(1e-12 * (1.0 + a[(i, i)]));
            if pinned[i] {
                for j in 0..n {
                    damped[(i, j)] = 0.0;
                    damped[(j, i)] = 0.0;
                }
                damped[(i, i)] = 1.0;
                rhs[i] = 0.0;
            }
        }
        let h = match damped.cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => {
                mu *= nu;
                nu *= 2.0;
                continue;
            }
        };
        for i in 0..n {
            x_new[i] = x[i] + h[i];
        }
        clamp(&mut x_new, lower, upper);
        let step = DVector::from_iterator(n, (0..n).map(|i| x_new[i] - x[i]));
        let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if step.norm() <= opts.xtol * (xnorm + opts.xtol) {
            converged = true;
            break;
        }
        model.eval(&x_new, &mut r_new);
        let cost_new = 0.5 * r_new.iter().map(|v| v * v).sum::<f64>();
        let pred = -(step.dot(&g)) - 0.5 * step.dot(&(&a * &step));
        let rho = if pred > 0.0 {
            (cost - cost_new) / pred
        } else {
            -1.0
        };
        if cost_new.is_finite() && rho > 0.0 {
            let drop = cost - cost_new;
            std::mem::swap(&mut x, &mut x_new);
            std::mem::swap(&mut r, &mut r_new);
            cost = cost_new;
            model.jacobian(&x, &mut jac);
            a = jac.transpose() * &jac;
            g = jac.transpose() * DVector::from_column_slice(&r);
            mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
            if drop <= opts.ftol * cost {
                converged = true;
                break;
            }
        } else {
            mu *= nu;
            nu *= 2.0;
            if mu > 1e100 {
                converged = true;
                break;
            }
        }
    }
    let rn = (2.0 * cost).sqrt();
    let s2 = if m > n {
        2.0 * cost / (m - n) as f64
    } else {
        0.0
    };
    let svd = a.clone().svd(true, true);
    let eps = 1e-14 * svd.singular_values.max();
    let pinv = svd
        .pseudo_inverse(eps)
        .unwrap_or_else(|_| DMatrix::zeros(n, n));
    let covariance = (0..n)
        .map(|i| (0..n).map(|j| s2 * pinv[(i, j)]).collect())
        .collect();
    Ok(LsqSolution {
        params: x,
        residual_norm: rn,
        covariance,
        iterations,
        converged,
    })
}
