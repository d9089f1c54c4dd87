//! Exact computations by enumerating every completion of the missing cells.
//!
//! Only usable on small instances; the E-step, the EM driver and the tests
//! use these as ground truth.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estep::logsumexp;
use crate::likelihood::{for_each_term, individual_loglik, probit_term};
use crate::model::{propagate_absorbing, Cell, IndividualRecord, Model, OutcomeKind, Panel, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationBudget {
    pub max_missing_cells: usize,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget { max_missing_cells: 20 }
    }
}

impl EnumerationBudget {
    /// Upper bound on the number of completions.
    pub fn max_completions(&self) -> u128 {
        1u128 << self.max_missing_cells.min(127)
    }

    pub fn check(&self, record: &IndividualRecord) -> Result<()> {
        let cells = free_cells(record);
        if cells > self.max_missing_cells {
            return Err(Error::BudgetExceeded {
                individual: record.id.clone(),
                cells,
                max: self.max_missing_cells,
            });
        }
        Ok(())
    }

    pub fn check_panel(&self, panel: &Panel) -> Result<()> {
        panel.individuals().iter().try_for_each(|r| self.check(r))
    }
}

/// Missing cells after the effective start.
fn free_cells(record: &IndividualRecord) -> usize {
    match record.effective_start() {
        Some(s) => (s + 1..record.time_steps())
            .map(|t| record.row(t).iter().filter(|c| c.is_missing()).count())
            .sum(),
        None => 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub cells: Vec<Cell>,
    /// Complete-data log-likelihood of this completion.
    pub log_joint: f64,
    pub probability: f64,
}

/// Exact conditional distribution of the missing cells of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosterior {
    pub id: String,
    pub start: Option<usize>,
    pub completions: Vec<Completion>,
    /// `log Σ exp(log_joint)`; the observed-data log-likelihood.
    pub log_marginal: f64,
}

/// Every completion with nonzero probability, depth first in sweep order.
fn enumerate(model: &Model, record: &IndividualRecord, start: usize) -> Vec<Vec<Cell>> {
    let j_len = model.outcome_count();
    let m = model.mortality();
    let order: Vec<usize> = std::iter::once(m).chain(model.non_mortality()).collect();
    let mut out = Vec::new();
    let mut grid = record.cells().to_vec();
    let first = (start + 1) * j_len;
    visit(model, &order, j_len, m, first, &mut grid, &mut out);
    out
}

fn visit(model: &Model, order: &[usize], j_len: usize, m: usize, pos: usize, grid: &mut Vec<Cell>, out: &mut Vec<Vec<Cell>>) {
    if pos == grid.len() {
        out.push(grid.clone());
        return;
    }
    let t = pos / j_len;
    let j = order[pos % j_len];
    let idx = t * j_len + j;
    let prev_dead = matches!(grid[(t - 1) * j_len + m], Cell::One | Cell::Dead);
    let now_dead = j != m && matches!(grid[t * j_len + m], Cell::One | Cell::Dead);
    let original = grid[idx];

    let forced = if prev_dead {
        match original {
            Cell::Zero => return,
            Cell::One if j != m => return,
            Cell::Missing => Some(Cell::Dead),
            _ => Some(original),
        }
    } else if now_dead {
        Some(Cell::Dead)
    } else if j != m && model.kind(j) == OutcomeKind::Absorbing && grid[(t - 1) * j_len + j] == Cell::One {
        match original {
            Cell::Zero => return,
            _ => Some(Cell::One),
        }
    } else if original == Cell::Missing {
        None
    } else if original == Cell::Dead {
        return;
    } else {
        Some(original)
    };

    match forced {
        Some(c) => {
            grid[idx] = c;
            visit(model, order, j_len, m, pos + 1, grid, out);
        }
        None => {
            for c in [Cell::Zero, Cell::One] {
                grid[idx] = c;
                visit(model, order, j_len, m, pos + 1, grid, out);
            }
        }
    }
    grid[idx] = original;
}

/// Exact posterior of one record's missing cells. The record should have its
/// deterministic cells filled.
pub fn exact_estep(model: &Model, params: &ParamSet, record: &IndividualRecord, budget: &EnumerationBudget) -> Result<ExactPosterior> {
    budget.check(record)?;
    let Some(start) = record.effective_start() else {
        return Ok(ExactPosterior { id: record.id.clone(), start: None, completions: Vec::new(), log_marginal: 0.0 });
    };
    let grids = enumerate(model, record, start);
    let mut completions = Vec::with_capacity(grids.len());
    for cells in grids {
        let log_joint = individual_loglik(model, params, record, &cells, start)?;
        completions.push(Completion { cells, log_joint, probability: 0.0 });
    }
    let log_marginal = if completions.len() == 1 {
        completions[0].log_joint
    } else {
        logsumexp(&completions.iter().map(|c| c.log_joint).collect::<Vec<_>>())
    };
    if log_marginal.is_finite() {
        for c in &mut completions {
            c.probability = (c.log_joint - log_marginal).exp();
        }
    }
    Ok(ExactPosterior { id: record.id.clone(), start: Some(start), completions, log_marginal })
}

/// Observed-data log-likelihood, summing over all completions per individual.
pub fn exact_observed_loglik(model: &Model, params: &ParamSet, panel: &Panel, budget: &EnumerationBudget) -> Result<f64> {
    params.check(model)?;
    let panel = propagate_absorbing(panel, model)?;
    budget.check_panel(&panel)?;
    let mut total = 0.0;
    for rec in panel.individuals() {
        let post = exact_estep(model, params, rec, budget)?;
        if post.start.is_some() {
            if post.completions.is_empty() {
                return Ok(f64::NEG_INFINITY);
            }
            total += post.log_marginal;
        }
    }
    Ok(total)
}

/// Offsets of each outcome's block in the stacked coefficient vector.
fn offsets(model: &Model) -> Vec<usize> {
    let mut at = 0;
    (0..model.outcome_count())
        .map(|j| {
            let o = at;
            at += model.dim(j);
            o
        })
        .collect()
}

/// Gradient and Hessian of the complete-data log-likelihood of one
/// completion in stacked coordinates.
fn completion_derivatives(model: &Model, params: &ParamSet, rec: &IndividualRecord, cells: &[Cell], start: usize, offs: &[usize], n: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mut g = DVector::zeros(n);
    let mut h = DMatrix::zeros(n, n);
    let mut z = Vec::new();
    for_each_term(model, &rec.id, cells, start, |term| {
        let j = term.outcome;
        z.resize(model.dim(j), 0.0);
        model.design_from_bits(&rec.covariates, j, term.t, term.bits, &mut z);
        let eta: f64 = params.outcome(j).iter().zip(&z).map(|(b, x)| b * x).sum();
        let (_, d1, d2) = probit_term(eta, term.response);
        let o = offs[j];
        for a in 0..z.len() {
            g[o + a] += d1 * z[a];
            for b in 0..z.len() {
                h[(o + a, o + b)] += d2 * z[a] * z[b];
            }
        }
    })?;
    Ok((g, h))
}

/// Observed-data log-likelihood with its gradient (Fisher identity) and
/// Hessian (Louis' formula).
pub fn observed_derivatives(model: &Model, params: &ParamSet, panel: &Panel, budget: &EnumerationBudget) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let offs = offsets(model);
    let n = params.len();
    let mut value = 0.0;
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    for rec in panel.individuals() {
        let post = exact_estep(model, params, rec, budget)?;
        let Some(start) = post.start else { continue };
        if post.completions.is_empty() {
            return Ok((f64::NEG_INFINITY, grad, hess));
        }
        value += post.log_marginal;
        let mut mean_g = DVector::zeros(n);
        let mut mean_h = DMatrix::zeros(n, n);
        let mut outer = DMatrix::zeros(n, n);
        for c in &post.completions {
            let (g, h) = completion_derivatives(model, params, rec, &c.cells, start, &offs, n)?;
            mean_g += &g * c.probability;
            mean_h += h * c.probability;
            outer += &g * g.transpose() * c.probability;
        }
        hess += mean_h + outer - &mean_g * mean_g.transpose();
        grad += mean_g;
    }
    Ok((value, grad, hess))
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectMle {
    #[serde(skip)]
    pub params: ParamSet,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest relative gap between the analytic gradient and central
    /// differences at the starting point.
    pub gradient_check: f64,
}

/// Maximizes the exact observed-data log-likelihood by damped Newton.
pub fn direct_mle(model: &Model, panel: &Panel, start: &ParamSet, budget: &EnumerationBudget) -> Result<DirectMle> {
    start.check(model)?;
    let panel = propagate_absorbing(panel, model)?;
    budget.check_panel(&panel)?;
    let n = start.len();

    let gradient_check = {
        let (_, g, _) = observed_derivatives(model, start, &panel, budget)?;
        let flat = start.flatten();
        let mut worst = 0.0f64;
        for k in 0..n {
            let h = 1e-5 * (1.0 + flat[k].abs());
            let mut up = flat.clone();
            up[k] += h;
            let mut dn = flat.clone();
            dn[k] -= h;
            let fu = exact_observed_loglik(model, &ParamSet::from_flat(model, &up)?, &panel, budget)?;
            let fd = exact_observed_loglik(model, &ParamSet::from_flat(model, &dn)?, &panel, budget)?;
            let fdg = (fu - fd) / (2.0 * h);
            worst = worst.max((g[k] - fdg).abs() / (1.0 + fdg.abs()));
        }
        if worst > 1e-5 {
            return Err(Error::Contract(format!("observed-data gradient disagrees with finite differences ({worst:e})")));
        }
        worst
    };

    let mut params = start.clone();
    let (mut value, mut grad, mut hess) = observed_derivatives(model, &params, &panel, budget)?;
    if !value.is_finite() {
        return Err(Error::Domain("observed-data likelihood is zero at the starting point".into()));
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < 500 {
        iterations += 1;
        let neg = -&hess;
        let mut ridge = 0.0;
        let step = loop {
            let mut m = neg.clone();
            for i in 0..n {
                m[(i, i)] += ridge;
            }
            if let Some(ch) = m.cholesky() {
                break ch.solve(&grad);
            }
            ridge = if ridge == 0.0 { 1e-8 } else { ridge * 10.0 };
        };
        let flat = DVector::from_vec(params.flatten());
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = ParamSet::from_flat(model, (&flat + &step * scale).as_slice())?;
            let v = exact_observed_loglik(model, &cand, &panel, budget)?;
            if v.is_finite() && v >= value + 1e-4 * scale * grad.dot(&step) {
                accepted = Some((cand, v));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, v)) = accepted else { break };
        let moved = (&step * scale).amax();
        let gain = v - value;
        params = cand;
        value = v;
        (_, grad, hess) = observed_derivatives(model, &params, &panel, budget)?;
        if moved < 1e-11 || (gain.abs() < 1e-14 * (1.0 + value.abs()) && grad.amax() < 1e-8) {
            converged = true;
            break;
        }
        if grad.amax() < 1e-11 {
            converged = true;
            break;
        }
    }
    Ok(DirectMle { params, loglik: value, iterations, converged, gradient_check })
}
