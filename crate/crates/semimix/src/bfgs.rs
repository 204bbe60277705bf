//! A small dense BFGS minimizer with backtracking line search.
//!
//! Used by the joint full-likelihood fit. Minimizes `f` given a gradient
//! callback; non-finite trial values are treated as out-of-domain and
//! rejected by the line search.

use nalgebra::{DMatrix, DVector};

pub(crate) struct BfgsOptions {
    /// Convergence when the gradient sup-norm falls below this.
    pub tol_grad: f64,
    /// Convergence when `|f_new - f_old| <= tol_obj * max(1, |f_old|)`.
    pub tol_obj: f64,
    pub max_iter: usize,
}

pub(crate) struct BfgsOutcome {
    pub x: DVector<f64>,
    pub f: f64,
    /// Objective after the initialization and after each accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 50;
const CURVATURE_SKIP: f64 = 1e-10;

pub(crate) fn minimize<F, G>(
    f: F,
    grad: G,
    x0: DVector<f64>,
    opts: &BfgsOptions,
) -> BfgsOutcome
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let dim = x0.len();
    let mut x = x0;
    let mut fx = f(&x);
    let mut trace = vec![fx];
    let mut g = grad(&x);
    let mut h_inv = DMatrix::<f64>::identity(dim, dim);
    let mut converged = g.amax() < opts.tol_grad;
    let mut iterations = 0;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut direction = -(&h_inv * &g);
        // Guard against a corrupted curvature model: require a descent
        // direction, otherwise restart from steepest descent.
        if direction.dot(&g) >= 0.0 {
            h_inv = DMatrix::identity(dim, dim);
            direction = -g.clone();
        }
        let slope = direction.dot(&g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = &x + t * &direction;
            let fc = f(&cand);
            if fc.is_finite() && fc <= fx + ARMIJO_C1 * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let (x_new, f_new) = match accepted {
            Some(pair) => pair,
            None => {
                // No acceptable step even along steepest descent at tiny
                // step sizes: the iterate is (numerically) a minimizer or
                // the surface is pathological. Stop with the best point.
                break;
            }
        };
        let g_new = grad(&x_new);
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > CURVATURE_SKIP * s.norm() * y.norm() {
            // Standard inverse-Hessian update:
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T.
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H - rho (H y s^T + s y^T H) + rho^2 (y^T H y) s s^T + rho s s^T
            h_inv.ger(-rho, &hy, &s, 1.0);
            h_inv.ger(-rho, &s, &hy, 1.0);
            h_inv.ger(rho * rho * yhy + rho, &s, &s, 1.0);
        }
        let obj_change = (f_new - fx).abs();
        x = x_new;
        fx = f_new;
        g = g_new;
        trace.push(fx);
        if g.amax() < opts.tol_grad || obj_change <= opts.tol_obj * fx.abs().max(1.0) {
            converged = true;
        }
    }

    BfgsOutcome { x, f: fx, trace, iterations, converged }
}
