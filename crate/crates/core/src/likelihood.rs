//! Complete-data log-likelihood of the gated Probit transition model.
//!
//! For a live individual every non-mortality outcome contributes a
//! Bernoulli-Probit term, except absorbing outcomes that are already one.
//! Mortality contributes while the individual was alive at t-1; once death
//! occurs at t no other outcome at t or later contributes.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Cell, IndividualRecord, Model, OutcomeKind, ParamSet, Panel};
use crate::probit::raw;

/// A likelihood component with its derivatives in `β_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LikTerm {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl LikTerm {
    fn zero(dim: usize) -> Self {
        LikTerm {
            value: 0.0,
            gradient: DVector::zeros(dim),
            hessian: DMatrix::zeros(dim, dim),
        }
    }

    fn active(beta: &[f64], z: &[f64], y: bool) -> Self {
        let eta: f64 = beta.iter().zip(z).map(|(b, x)| b * x).sum();
        let (value, d1, d2) = probit_term(eta, y);
        let z = DVector::from_column_slice(z);
        LikTerm {
            value,
            hessian: &z * z.transpose() * d2,
            gradient: z * d1,
        }
    }
}

/// `log P(y | η)` under a Probit link, with first and second derivatives in `η`.
#[inline]
pub fn probit_term(eta: f64, y: bool) -> (f64, f64, f64) {
    let (s, u) = if y { (1.0, eta) } else { (-1.0, -eta) };
    let value = raw::log_cdf(u);
    let (lambda, curv) = raw::inv_mills(u);
    (value, s * lambda, -lambda * curv)
}

fn check_dims(beta: &[f64], z: &[f64]) {
    assert_eq!(beta.len(), z.len(), "coefficient and design lengths differ");
}

/// Transient outcome: `(1 − dead_now)·log P(x_now | z'β)`.
pub fn lik_transient(beta: &[f64], z: &[f64], x_now: bool, dead_now: bool) -> LikTerm {
    check_dims(beta, z);
    if dead_now {
        LikTerm::zero(z.len())
    } else {
        LikTerm::active(beta, z, x_now)
    }
}

/// Absorbing outcome: `(1 − dead_now)(1 − x_prev)·log P(x_now | z'β)`.
pub fn lik_absorbing(beta: &[f64], z: &[f64], x_prev: bool, x_now: bool, dead_now: bool) -> Result<LikTerm> {
    check_dims(beta, z);
    if x_prev && !x_now && !dead_now {
        return Err(Error::Contract("absorbing outcome went from 1 to 0".into()));
    }
    Ok(if dead_now || x_prev {
        LikTerm::zero(z.len())
    } else {
        LikTerm::active(beta, z, x_now)
    })
}

/// Mortality: `(1 − dead_prev)·log P(dead_now | z'β)`.
pub fn lik_mortality(beta: &[f64], z: &[f64], dead_prev: bool, dead_now: bool) -> Result<LikTerm> {
    check_dims(beta, z);
    if dead_prev && !dead_now {
        return Err(Error::Contract("mortality went from dead to alive".into()));
    }
    Ok(if dead_prev {
        LikTerm::zero(z.len())
    } else {
        LikTerm::active(beta, z, dead_now)
    })
}

/// One active Bernoulli term of a complete trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActiveTerm {
    /// 0-based destination time index.
    pub t: usize,
    pub outcome: usize,
    /// Dependency states at `t - 1` (see [`Model::dependency_bits`]).
    pub bits: u64,
    pub response: bool,
}

#[inline]
fn is_dead(c: Cell) -> bool {
    matches!(c, Cell::One | Cell::Dead)
}

/// Visits the active terms of a complete cell grid, transitions `start → T`.
///
/// Terms come out ordered by time, mortality first, then the remaining
/// outcomes in declared order.
pub fn for_each_term(
    model: &Model,
    id: &str,
    cells: &[Cell],
    start: usize,
    mut f: impl FnMut(ActiveTerm),
) -> Result<()> {
    let j_len = model.outcome_count();
    let m = model.mortality();
    let t_len = cells.len() / j_len;
    let bad = |t: usize, j: usize, what: &str| {
        Error::Contract(format!(
            "individual {id}, time {}, outcome '{}': {what}",
            t + 1,
            model.outcome_name(j)
        ))
    };

    for t in start + 1..t_len {
        let prev = &cells[(t - 1) * j_len..t * j_len];
        let cur = &cells[t * j_len..(t + 1) * j_len];
        if is_dead(prev[m]) {
            if cur[m] == Cell::Zero {
                return Err(bad(t, m, "alive after death"));
            }
            continue;
        }
        let dead_now = match cur[m] {
            Cell::Zero => false,
            Cell::One => true,
            Cell::Missing => return Err(bad(t, m, "missing cell; run the E-step first")),
            Cell::Dead => return Err(bad(t, m, "missing-by-death without a recorded death")),
        };
        let bits = model.dependency_bits(m, prev).ok_or_else(|| bad(t, m, "unresolved dependency"))?;
        f(ActiveTerm { t, outcome: m, bits, response: dead_now });
        if dead_now {
            continue;
        }
        for j in model.non_mortality() {
            let response = match cur[j] {
                Cell::Zero => false,
                Cell::One => true,
                Cell::Missing => return Err(bad(t, j, "missing cell; run the E-step first")),
                Cell::Dead => return Err(bad(t, j, "missing-by-death while alive")),
            };
            if model.kind(j) == OutcomeKind::Absorbing && prev[j] == Cell::One {
                if !response {
                    return Err(bad(t, j, "absorbing outcome went from 1 to 0"));
                }
                continue;
            }
            let bits = model.dependency_bits(j, prev).ok_or_else(|| bad(t, j, "unresolved dependency"))?;
            f(ActiveTerm { t, outcome: j, bits, response });
        }
    }
    Ok(())
}

/// Complete-data log-likelihood of one record from `start` on.
pub fn individual_loglik(model: &Model, params: &ParamSet, record: &IndividualRecord, cells: &[Cell], start: usize) -> Result<f64> {
    let mut total = 0.0;
    for_each_term(model, &record.id, cells, start, |term| {
        let eta = model.linear_predictor(&record.covariates, term.outcome, term.t, term.bits, params.outcome(term.outcome));
        total += probit_term(eta, term.response).0;
    })?;
    Ok(total)
}

/// Value and per-outcome gradients of the complete-data log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct LoglikEvaluation {
    pub value: f64,
    pub per_outcome: Vec<f64>,
    pub gradients: Vec<Vec<f64>>,
}

/// `Σ_i Σ_t Σ_j l_ijt` over a panel with no missing cells. Each individual
/// starts at its first fully observed time; the marginal of that state is not
/// modeled.
pub fn complete_loglik(model: &Model, params: &ParamSet, panel: &Panel) -> Result<f64> {
    params.check(model)?;
    let mut total = 0.0;
    for rec in panel.individuals() {
        if let Some(start) = rec.effective_start() {
            if rec.missing_count() > 0 {
                return Err(Error::Contract(format!(
                    "individual {} has missing cells; complete data is required (use the E-step)",
                    rec.id
                )));
            }
            total += individual_loglik(model, params, rec, rec.cells(), start)?;
        } else {
            return Err(Error::Contract(format!("individual {} has missing cells", rec.id)));
        }
    }
    Ok(total)
}

/// Like [`complete_loglik`] but also returns per-outcome sums and gradients.
pub fn complete_loglik_with_gradient(model: &Model, params: &ParamSet, panel: &Panel) -> Result<LoglikEvaluation> {
    params.check(model)?;
    let j_len = model.outcome_count();
    let mut per_outcome = vec![0.0; j_len];
    let mut gradients: Vec<Vec<f64>> = (0..j_len).map(|j| vec![0.0; model.dim(j)]).collect();
    let mut z = Vec::new();
    for rec in panel.individuals() {
        if rec.missing_count() > 0 {
            return Err(Error::Contract(format!("individual {} has missing cells", rec.id)));
        }
        let start = rec.effective_start().unwrap_or(0);
        for_each_term(model, &rec.id, rec.cells(), start, |term| {
            let j = term.outcome;
            z.resize(model.dim(j), 0.0);
            model.design_from_bits(&rec.covariates, j, term.t, term.bits, &mut z);
            let eta: f64 = params.outcome(j).iter().zip(&z).map(|(b, x)| b * x).sum();
            let (v, d1, _) = probit_term(eta, term.response);
            per_outcome[j] += v;
            for (g, x) in gradients[j].iter_mut().zip(&z) {
                *g += d1 * x;
            }
        })?;
    }
    Ok(LoglikEvaluation {
        value: per_outcome.iter().sum(),
        per_outcome,
        gradients,
    })
}
