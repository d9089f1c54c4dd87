//! Weighted Probit updates of each outcome's coefficients.
//!
//! The E-step output is compressed into [`QData`]: for every outcome, the
//! distinct `(design vector, response)` pairs with their summed weights. The
//! expected complete-data log-likelihood is then an ordinary weighted Probit
//! log-likelihood per outcome, and its cost does not grow with the replicate
//! count.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{Exec, REDUCE_CHUNK};
use crate::likelihood::{for_each_term, probit_term, ActiveTerm};
use crate::model::{Model, Panel, ParamSet};
use crate::optim::{self, Evaluation, OptimReport, OptimizerConfig};

/// Weighted rows of one outcome's Probit regression.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutcomeRows {
    dim: usize,
    /// Row-major, `len() * dim` entries.
    z: Vec<f64>,
    y: Vec<bool>,
    w: Vec<f64>,
}

impl OutcomeRows {
    pub fn new(dim: usize) -> Self {
        OutcomeRows { dim, ..Default::default() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, r: usize) -> (&[f64], bool, f64) {
        (&self.z[r * self.dim..(r + 1) * self.dim], self.y[r], self.w[r])
    }

    pub fn total_weight(&self) -> f64 {
        self.w.iter().sum()
    }
}

/// Compressed sufficient data for the M-step.
#[derive(Debug, Clone)]
pub struct QData {
    outcomes: Vec<OutcomeRows>,
    index: Vec<HashMap<(Vec<u64>, bool), usize>>,
}

impl PartialEq for QData {
    fn eq(&self, other: &Self) -> bool {
        self.outcomes == other.outcomes
    }
}

impl QData {
    pub fn new(model: &Model) -> Self {
        let j_len = model.outcome_count();
        QData {
            outcomes: (0..j_len).map(|j| OutcomeRows::new(model.dim(j))).collect(),
            index: vec![HashMap::new(); j_len],
        }
    }

    pub fn outcome(&self, j: usize) -> &OutcomeRows {
        &self.outcomes[j]
    }

    pub fn outcome_count(&self) -> usize {
        self.outcomes.len()
    }

    pub fn row_count(&self) -> usize {
        self.outcomes.iter().map(OutcomeRows::len).sum()
    }

    /// Adds weight `w` to the row `(z, y)` of outcome `j`.
    pub fn add(&mut self, j: usize, z: &[f64], y: bool, w: f64) {
        let rows = &mut self.outcomes[j];
        assert_eq!(z.len(), rows.dim, "design length");
        let key = (z.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y);
        match self.index[j].get(&key) {
            Some(&r) => rows.w[r] += w,
            None => {
                self.index[j].insert(key, rows.y.len());
                rows.z.extend_from_slice(z);
                rows.y.push(y);
                rows.w.push(w);
            }
        }
    }

    pub(crate) fn add_terms(&mut self, model: &Model, covariates: &[f64], terms: &[(ActiveTerm, f64)]) {
        let mut z = Vec::new();
        for &(term, w) in terms {
            z.resize(model.dim(term.outcome), 0.0);
            model.design_from_bits(covariates, term.outcome, term.t, term.bits, &mut z);
            self.add(term.outcome, &z, term.response, w);
        }
    }

    /// Unit-weight rows of a panel without missing cells.
    pub fn from_complete_panel(model: &Model, panel: &Panel) -> Result<Self> {
        let mut data = QData::new(model);
        for rec in panel.individuals() {
            if rec.missing_count() > 0 {
                return Err(Error::Contract(format!("individual {} has missing cells", rec.id)));
            }
            let start = rec.effective_start().unwrap_or(0);
            let mut terms = Vec::new();
            for_each_term(model, &rec.id, rec.cells(), start, |t| terms.push((t, 1.0)))?;
            data.add_terms(model, &rec.covariates, &terms);
        }
        Ok(data)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EvalCounters {
    pub value: usize,
    pub gradient: usize,
}

impl std::ops::AddAssign for EvalCounters {
    fn add_assign(&mut self, o: Self) {
        self.value += o.value;
        self.gradient += o.gradient;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QEvaluation {
    pub q_value: f64,
    pub per_outcome: Vec<f64>,
    pub gradients: Vec<DVector<f64>>,
    /// Empty unless requested.
    pub hessians: Vec<DMatrix<f64>>,
    pub counters: EvalCounters,
}

struct Partial {
    value: f64,
    gradient: Vec<f64>,
    hessian: Vec<f64>,
}

/// Value, gradient and optionally Hessian of one outcome's weighted Probit
/// log-likelihood. Chunk partial sums are folded in a fixed order.
pub(crate) fn outcome_objective(rows: &OutcomeRows, beta: &[f64], hessian: bool, exec: &Exec) -> (f64, DVector<f64>, Option<DMatrix<f64>>) {
    let d = rows.dim;
    assert_eq!(beta.len(), d, "coefficient length");
    let parts = exec.map_chunks(rows.len(), REDUCE_CHUNK, |range| {
        let mut p = Partial {
            value: 0.0,
            gradient: vec![0.0; d],
            hessian: if hessian { vec![0.0; d * d] } else { Vec::new() },
        };
        for r in range {
            let (z, y, w) = rows.row(r);
            if w == 0.0 {
                continue;
            }
            let eta: f64 = beta.iter().zip(z).map(|(b, x)| b * x).sum();
            let (v, d1, d2) = probit_term(eta, y);
            p.value += w * v;
            let g1 = w * d1;
            for (g, x) in p.gradient.iter_mut().zip(z) {
                *g += g1 * x;
            }
            if hessian {
                let g2 = w * d2;
                for a in 0..d {
                    let za = g2 * z[a];
                    if za == 0.0 {
                        continue;
                    }
                    for b in 0..=a {
                        p.hessian[a * d + b] += za * z[b];
                    }
                }
            }
        }
        p
    });
    let mut value = 0.0;
    let mut gradient = DVector::zeros(d);
    let mut h = if hessian { Some(DMatrix::zeros(d, d)) } else { None };
    for p in parts {
        value += p.value;
        for k in 0..d {
            gradient[k] += p.gradient[k];
        }
        if let Some(h) = h.as_mut() {
            for a in 0..d {
                for b in 0..=a {
                    h[(a, b)] += p.hessian[a * d + b];
                }
            }
        }
    }
    if let Some(h) = h.as_mut() {
        for a in 0..d {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
    }
    (value, gradient, h)
}

/// Expected complete-data log-likelihood at `beta` with per-outcome derivatives.
pub fn eval_q(model: &Model, beta: &ParamSet, data: &QData, hessian: bool, exec: &Exec) -> Result<QEvaluation> {
    beta.check(model)?;
    if data.outcome_count() != model.outcome_count() {
        return Err(Error::Contract("Q data and model disagree on the outcome count".into()));
    }
    let mut per_outcome = Vec::with_capacity(data.outcome_count());
    let mut gradients = Vec::new();
    let mut hessians = Vec::new();
    for j in 0..data.outcome_count() {
        let (v, g, h) = outcome_objective(data.outcome(j), beta.outcome(j), hessian, exec);
        per_outcome.push(v);
        gradients.push(g);
        if let Some(h) = h {
            hessians.push(h);
        }
    }
    Ok(QEvaluation {
        q_value: per_outcome.iter().sum(),
        per_outcome,
        gradients,
        hessians,
        counters: EvalCounters { value: 1, gradient: 1 },
    })
}

/// Affine reparametrization that centers and scales non-binary columns.
///
/// Original coefficients are `β = A·θ`.
#[derive(Debug, Clone)]
struct Standardizer {
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
}

impl Standardizer {
    fn fit(rows: &OutcomeRows) -> Self {
        let d = rows.dim;
        let mut a = DMatrix::identity(d, d);
        let mut a_inv = DMatrix::identity(d, d);
        let total = rows.total_weight();
        if total > 0.0 {
            for k in 1..d {
                let binary = (0..rows.len()).all(|r| matches!(rows.row(r).0[k], v if v == 0.0 || v == 1.0));
                if binary {
                    continue;
                }
                let mean = (0..rows.len()).map(|r| rows.row(r).2 * rows.row(r).0[k]).sum::<f64>() / total;
                let var = (0..rows.len()).map(|r| rows.row(r).2 * (rows.row(r).0[k] - mean).powi(2)).sum::<f64>() / total;
                let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
                // β_k = θ_k / s, β_0 = θ_0 − θ_k·m / s
                a[(k, k)] = 1.0 / scale;
                a[(0, k)] = -mean / scale;
                a_inv[(k, k)] = scale;
                a_inv[(0, k)] = mean;
            }
        }
        Standardizer { a, a_inv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeReport {
    pub outcome: String,
    pub rows: usize,
    pub q_before: f64,
    pub q_after: f64,
    pub optim: OptimReport,
}

#[derive(Debug, Clone)]
pub struct MStepResult {
    pub params: ParamSet,
    pub reports: Vec<OutcomeReport>,
    pub q_before: f64,
    pub q_after: f64,
    pub counters: EvalCounters,
}

/// Maximizes each outcome's part of Q separately, starting at `beta_init`.
pub fn maximize_q(model: &Model, beta_init: &ParamSet, data: &QData, config: &OptimizerConfig, exec: &Exec) -> Result<MStepResult> {
    beta_init.check(model)?;
    let mut params = beta_init.clone();
    let mut reports = Vec::with_capacity(model.outcome_count());
    let mut counters = EvalCounters::default();
    let need_h = config.method == optim::Method::Newton;

    for j in 0..model.outcome_count() {
        let rows = data.outcome(j);
        let name = model.outcome_name(j).to_string();
        if rows.is_empty() {
            reports.push(OutcomeReport { outcome: name, rows: 0, q_before: 0.0, q_after: 0.0, optim: OptimReport::default() });
            continue;
        }
        let std = Standardizer::fit(rows);
        let beta0 = DVector::from_column_slice(beta_init.outcome(j));
        let theta0 = &std.a_inv * &beta0;
        let objective = |theta: &DVector<f64>, h: bool| {
            let beta = &std.a * theta;
            let (value, g, hess) = outcome_objective(rows, beta.as_slice(), h || need_h, exec);
            Evaluation {
                value,
                gradient: std.a.transpose() * g,
                hessian: hess.map(|h| std.a.transpose() * h * &std.a),
            }
        };
        let q_before = objective(&theta0, false).value;
        counters += EvalCounters { value: 1, gradient: 1 };
        if !q_before.is_finite() {
            return Err(Error::Initialization {
                outcome: name,
                reason: format!("Q is not finite at the starting coefficients ({q_before})"),
            });
        }
        let (theta, report) = optim::maximize(objective, theta0, config);
        counters += EvalCounters { value: report.evaluations, gradient: report.gradient_evaluations };

        let beta = &std.a * theta;
        let (q_after, _, _) = outcome_objective(rows, beta.as_slice(), false, exec);
        counters += EvalCounters { value: 1, gradient: 0 };
        let q_after = if q_after >= q_before && beta.iter().all(|v| v.is_finite()) {
            params.outcome_mut(j).copy_from_slice(beta.as_slice());
            q_after
        } else {
            q_before
        };
        reports.push(OutcomeReport { outcome: name, rows: rows.len(), q_before, q_after, optim: report });
    }

    Ok(MStepResult {
        q_before: reports.iter().map(|r| r.q_before).sum(),
        q_after: reports.iter().map(|r| r.q_after).sum(),
        params,
        reports,
        counters,
    })
}
