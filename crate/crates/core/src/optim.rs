//! Ascent optimizers for smooth concave-ish objectives.
//!
//! Both methods maximize and only ever accept points that increase the
//! objective (Armijo backtracking), so the returned value is never below the
//! starting value.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Limited-memory BFGS, two-loop recursion.
    QuasiNewton,
    /// Analytic Hessian with a Levenberg ridge when it is not negative definite.
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    pub max_iterations: usize,
    /// Stop when `|Δf| < tol·(|f| + tol)`.
    pub relative_tolerance: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            method: Method::QuasiNewton,
            max_iterations: 100,
            relative_tolerance: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn with_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n.max(1);
        self
    }
}

/// Value, gradient and optionally Hessian of the objective at a point.
pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct OptimReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_evaluations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    pub initial_value: f64,
    pub final_value: f64,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const LBFGS_MEMORY: usize = 10;

/// Maximizes `f` from `x0`. `f(x, need_hessian)` must return a finite value at `x0`.
pub fn maximize<F>(mut f: F, x0: DVector<f64>, config: &OptimizerConfig) -> (DVector<f64>, OptimReport)
where
    F: FnMut(&DVector<f64>, bool) -> Evaluation,
{
    let need_h = config.method == Method::Newton;
    let mut report = OptimReport::default();
    let mut eval = |x: &DVector<f64>, report: &mut OptimReport| {
        report.evaluations += 1;
        report.gradient_evaluations += 1;
        f(x, need_h)
    };

    let mut x = x0;
    let mut cur = eval(&x, &mut report);
    report.initial_value = cur.value;
    report.final_value = cur.value;
    if !cur.value.is_finite() {
        return (x, report);
    }

    let mut memory: Vec<(DVector<f64>, DVector<f64>, f64)> = Vec::with_capacity(LBFGS_MEMORY);

    while report.iterations < config.max_iterations.max(1) {
        let gnorm = cur.gradient.norm();
        if gnorm == 0.0 || !gnorm.is_finite() {
            report.converged = gnorm == 0.0;
            break;
        }

        let direction = match config.method {
            Method::QuasiNewton => lbfgs_direction(&cur.gradient, &memory),
            Method::Newton => newton_direction(&cur.gradient, cur.hessian.as_ref().expect("hessian requested")),
        };
        let mut slope = cur.gradient.dot(&direction);
        let direction = if slope > 0.0 {
            direction
        } else {
            // Not an ascent direction; fall back to steepest ascent.
            memory.clear();
            slope = gnorm * gnorm;
            cur.gradient.clone()
        };

        let mut step = if config.method == Method::QuasiNewton && memory.is_empty() {
            (1.0 / direction.norm()).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial_x = &x + &direction * step;
            let trial = eval(&trial_x, &mut report);
            if trial.value.is_finite() && trial.value >= cur.value + ARMIJO_C1 * step * slope {
                accepted = Some((trial_x, trial));
                break;
            }
            step *= 0.5;
        }
        report.iterations += 1;

        let Some((new_x, new)) = accepted else {
            report.line_search_failed = true;
            break;
        };

        if config.method == Method::QuasiNewton {
            // Curvature pair for the minimization of -f.
            let s = &new_x - &x;
            let y = &cur.gradient - &new.gradient;
            let sy = s.dot(&y);
            if sy > 1e-12 * s.norm() * y.norm() {
                if memory.len() == LBFGS_MEMORY {
                    memory.remove(0);
                }
                memory.push((s, y, 1.0 / sy));
            }
        }

        let old_value = cur.value;
        x = new_x;
        cur = new;
        report.final_value = cur.value;
        let tol = config.relative_tolerance;
        if (cur.value - old_value).abs() < tol * (old_value.abs() + tol) {
            report.converged = true;
            break;
        }
    }
    (x, report)
}

/// Ascent direction `H·g` from the two-loop recursion (H approximates the
/// inverse Hessian of `-f`).
fn lbfgs_direction(g: &DVector<f64>, memory: &[(DVector<f64>, DVector<f64>, f64)]) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = vec![0.0; memory.len()];
    for (k, (s, y, rho)) in memory.iter().enumerate().rev() {
        let a = rho * s.dot(&q);
        alphas[k] = a;
        q -= y * a;
    }
    if let Some((s, y, _)) = memory.last() {
        q *= s.dot(y) / y.dot(y);
    }
    for (k, (s, y, rho)) in memory.iter().enumerate() {
        let b = rho * y.dot(&q);
        q += s * (alphas[k] - b);
    }
    q
}

fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>) -> DVector<f64> {
    let neg = -h;
    let scale = neg.diagonal().iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-12);
    let mut ridge = 0.0;
    for _ in 0..40 {
        let mut m = neg.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
        if let Some(chol) = m.cholesky() {
            return chol.solve(g);
        }
        ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 10.0 };
    }
    g.clone()
}
