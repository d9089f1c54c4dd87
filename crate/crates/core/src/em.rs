//! EM driver: initialization, the adaptive replicate/iteration schedule and
//! the outer loop.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estep::{run_estep, EStepConfig, EStepMode, WeightConvention};
use crate::exec::Exec;
use crate::model::{propagate_absorbing, Cell, Model, OutcomeKind, Panel, ParamSet};
use crate::mstep::{maximize_q, QData};
use crate::optim::{Method, OptimizerConfig};
use crate::oracle::{exact_observed_loglik, EnumerationBudget};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub r_init: usize,
    pub r_growth_factor: usize,
    pub r_max: usize,
    pub opt_iter_init: usize,
    pub opt_iter_growth: usize,
    pub opt_iter_max: usize,
    /// Growth triggers when the Q gain is at most `trigger_coefficient · √R`.
    pub trigger_coefficient: f64,
    pub em_tolerance: f64,
    pub em_max_iterations: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            r_init: 10,
            r_growth_factor: 10,
            r_max: 1000,
            opt_iter_init: 3,
            opt_iter_growth: 10,
            opt_iter_max: 300,
            trigger_coefficient: 1.97e-4,
            em_tolerance: 1e-4,
            em_max_iterations: 200,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.r_init == 0 || self.r_max == 0 || self.opt_iter_init == 0 || self.opt_iter_max == 0 || self.em_max_iterations == 0 {
            bad.push("counts must be positive");
        }
        if self.r_growth_factor < 1 || self.opt_iter_growth < 1 {
            bad.push("growth factors must be at least 1");
        }
        if self.r_init > self.r_max {
            bad.push("R_init exceeds R_max");
        }
        if self.opt_iter_init > self.opt_iter_max {
            bad.push("opt_iter_init exceeds opt_iter_max");
        }
        if !(self.trigger_coefficient > 0.0) || !(self.em_tolerance > 0.0) {
            bad.push("trigger coefficient and EM tolerance must be positive");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Data(format!("invalid schedule: {}", bad.join("; "))))
        }
    }
}

/// Replicate count and optimizer iteration cap for the next iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Schedule {
    pub replicates: usize,
    pub opt_iterations: usize,
}

impl Schedule {
    pub fn initial(config: &ScheduleConfig) -> Self {
        Schedule { replicates: config.r_init, opt_iterations: config.opt_iter_init }
    }
}

/// Grows R first, then the optimizer cap, whenever the gain is small.
pub fn step_schedule(current: Schedule, q_gain: f64, config: &ScheduleConfig) -> Schedule {
    let threshold = config.trigger_coefficient * (current.replicates as f64).sqrt();
    if !(q_gain <= threshold) {
        return current;
    }
    if current.replicates < config.r_max {
        Schedule {
            replicates: (current.replicates * config.r_growth_factor).min(config.r_max),
            ..current
        }
    } else {
        Schedule {
            opt_iterations: (current.opt_iterations * config.opt_iter_growth).min(config.opt_iter_max),
            ..current
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub k: usize,
    #[serde(rename = "Q")]
    pub q: f64,
    /// Empty at the first iteration.
    pub q_gain: Option<f64>,
    #[serde(rename = "R")]
    pub replicates: usize,
    pub opt_iter: usize,
    pub q_evals: usize,
    pub grad_evals: usize,
    pub seconds: f64,
    pub beta_change: f64,
    pub observed_loglik: Option<f64>,
    pub min_ess: f64,
    pub excluded: usize,
}

/// Mutable state of an EM run.
#[derive(Debug, Clone)]
pub struct EmState {
    pub k: usize,
    pub beta: ParamSet,
    pub schedule: Schedule,
    /// `(k, Q(β^{k+1}; β^k))`.
    pub q_history: Vec<(usize, f64)>,
    pub q_evals: usize,
    pub grad_evals: usize,
    pub seed: u64,
}

impl EmState {
    pub fn new(beta: ParamSet, config: &ScheduleConfig, seed: u64) -> Self {
        EmState {
            k: 0,
            beta,
            schedule: Schedule::initial(config),
            q_history: Vec::new(),
            q_evals: 0,
            grad_evals: 0,
            seed,
        }
    }

    pub fn step_schedule(&mut self, q_gain: f64, config: &ScheduleConfig) {
        self.schedule = step_schedule(self.schedule, q_gain, config);
    }
}

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub schedule: ScheduleConfig,
    /// Method and tolerance; the iteration cap comes from the schedule.
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub convention: WeightConvention,
    /// Replace the Monte Carlo E-step by exact enumeration.
    pub exact_estep: Option<EnumerationBudget>,
    /// Record the exact observed-data log-likelihood after every iteration
    /// (small instances only).
    pub track_observed_loglik: Option<EnumerationBudget>,
    /// Allowed drop of the tracked log-likelihood once R is at its cap.
    pub ascent_slack: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            schedule: ScheduleConfig::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            convention: WeightConvention::Normalized,
            exact_estep: None,
            track_observed_loglik: None,
            ascent_slack: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub params: ParamSet,
    pub initial: ParamSet,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub state: EmState,
    /// Tracked observed-data log-likelihood at the initial parameters.
    pub initial_observed_loglik: Option<f64>,
    /// Tracked log-likelihood decreases beyond the allowed slack.
    pub ascent_violations: usize,
}

/// Complete-case Probit fits, one per outcome.
///
/// A transition into `t` is usable when the response at `t` is observed and
/// the outcome's dependencies are observed at the most recent earlier time
/// where they all are; that gap is treated as a single step.
pub fn initialize(model: &Model, panel: &Panel, exec: &Exec) -> Result<ParamSet> {
    let panel = propagate_absorbing(panel, model)?;
    let m = model.mortality();
    let mut data = QData::new(model);
    let mut z = Vec::new();
    for rec in panel.individuals() {
        for j in 0..model.outcome_count() {
            let mut last_full: Option<(usize, u64)> = None;
            for t in 0..rec.time_steps() {
                let row = rec.row(t);
                if let Some((s, bits)) = last_full {
                    let alive_before = rec.cell(s, m) == Cell::Zero;
                    let usable = alive_before
                        && match (j == m, row[j]) {
                            (true, Cell::Zero | Cell::One) => true,
                            (false, Cell::Zero | Cell::One) => {
                                row[m] == Cell::Zero
                                    && !(model.kind(j) == OutcomeKind::Absorbing && rec.cell(s, j) != Cell::Zero)
                            }
                            _ => false,
                        };
                    if usable {
                        z.resize(model.dim(j), 0.0);
                        model.design_from_bits(&rec.covariates, j, t, bits, &mut z);
                        data.add(j, &z, row[j] == Cell::One, 1.0);
                    }
                }
                let gate_known = row[j].is_observed() || j == m;
                if let (Some(bits), true) = (model.dependency_bits(j, row), gate_known) {
                    last_full = Some((t, bits));
                }
            }
        }
    }

    let mut params = ParamSet::zeros(model);
    let cfg = OptimizerConfig { method: Method::Newton, max_iterations: 200, relative_tolerance: 1e-13 };
    let fit = maximize_q(model, &params, &data, &cfg, exec)?;
    for j in 0..model.outcome_count() {
        let name = model.outcome_name(j);
        let rows = data.outcome(j);
        if rows.is_empty() {
            return Err(Error::Initialization {
                outcome: name.to_string(),
                reason: "no usable complete-case transitions".into(),
            });
        }
        let beta = fit.params.outcome(j);
        let separated = beta.iter().any(|v| !v.is_finite() || v.abs() > 25.0) || !fit.reports[j].optim.converged && fit.reports[j].optim.line_search_failed && beta.iter().any(|v| v.abs() > 10.0);
        if separated {
            warn!("outcome '{name}': complete-case fit looks separated; starting from zero");
            continue;
        }
        params.outcome_mut(j).copy_from_slice(beta);
    }
    Ok(params)
}

/// Runs EM from the complete-case initialization.
pub fn run_em(model: &Model, panel: &Panel, config: &EmConfig, exec: &Exec) -> Result<EmResult> {
    let start = initialize(model, panel, exec)?;
    run_em_from(model, panel, start, config, exec)
}

pub fn run_em_from(model: &Model, panel: &Panel, start: ParamSet, config: &EmConfig, exec: &Exec) -> Result<EmResult> {
    config.schedule.validate()?;
    start.check(model)?;
    let panel = propagate_absorbing(panel, model)?;
    if let Some(budget) = &config.exact_estep {
        budget.check_panel(&panel)?;
    }
    let sched = &config.schedule;
    let mut state = EmState::new(start.clone(), sched, config.seed);
    let observed = |beta: &ParamSet| -> Result<Option<f64>> {
        match &config.track_observed_loglik {
            Some(b) => Ok(Some(exact_observed_loglik(model, beta, &panel, b)?)),
            None => Ok(None),
        }
    };
    let initial_observed_loglik = observed(&start)?;
    let mut last_observed = initial_observed_loglik;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut ascent_violations = 0;
    let mut prev_q: Option<f64> = None;

    while state.k < sched.em_max_iterations {
        let clock = Instant::now();
        let k = state.k;
        let mode = match config.exact_estep {
            Some(b) => EStepMode::Exact(b),
            None => EStepMode::MonteCarlo { replicates: state.schedule.replicates, convention: config.convention },
        };
        let estep = run_estep(
            model,
            &state.beta,
            &panel,
            &EStepConfig { mode, seed: config.seed, iteration: k as u64 },
            exec,
        )?;
        let opt = config.optimizer.with_iterations(state.schedule.opt_iterations);
        let mstep = maximize_q(model, &state.beta, &estep.data, &opt, exec)?;

        let q = mstep.q_after;
        let q_gain = prev_q.map(|p| q - p);
        prev_q = Some(q);
        state.q_history.push((k, q));
        state.q_evals += mstep.counters.value;
        state.grad_evals += mstep.counters.gradient;
        let beta_change = mstep.params.euclidean_distance(&state.beta);
        state.beta = mstep.params;

        let obs = observed(&state.beta)?;
        if let (Some(now), Some(before)) = (obs, last_observed) {
            let slack = if config.exact_estep.is_some() { 1e-9 * (1.0 + before.abs()) } else { config.ascent_slack };
            let at_cap = config.exact_estep.is_some() || state.schedule.replicates >= sched.r_max;
            if at_cap && now < before - slack {
                ascent_violations += 1;
                warn!("iteration {k}: observed-data log-likelihood fell from {before} to {now}");
            }
        }
        last_observed = obs;

        trace.push(TraceRow {
            k,
            q,
            q_gain,
            replicates: match config.exact_estep {
                Some(_) => 0,
                None => state.schedule.replicates,
            },
            opt_iter: state.schedule.opt_iterations,
            q_evals: mstep.counters.value,
            grad_evals: mstep.counters.gradient,
            seconds: clock.elapsed().as_secs_f64(),
            beta_change,
            observed_loglik: obs,
            min_ess: estep.min_ess,
            excluded: estep.degenerate.len(),
        });
        info!(
            "iteration {k}: Q = {q:.6}, gain = {}, R = {}, opt_iter = {}, |Δβ| = {beta_change:.3e}",
            q_gain.map_or("-".to_string(), |g| format!("{g:.3e}")),
            state.schedule.replicates,
            state.schedule.opt_iterations
        );
        state.k += 1;

        if let Some(gain) = q_gain {
            if gain.abs() < sched.em_tolerance {
                converged = true;
                break;
            }
            state.step_schedule(gain, sched);
        }
    }
    if !converged {
        warn!("EM stopped at the iteration cap ({}) without meeting the tolerance", sched.em_max_iterations);
    }

    Ok(EmResult {
        params: state.beta.clone(),
        initial: start,
        trace,
        converged,
        state,
        initial_observed_loglik,
        ascent_violations,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn write_trace<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "k", "Q", "q_gain", "R", "opt_iter", "q_evals", "grad_evals", "seconds", "beta_change", "observed_loglik", "min_ess", "excluded",
    ])?;
    for r in trace {
        w.write_record([
            r.k.to_string(),
            r.q.to_string(),
            opt(r.q_gain),
            r.replicates.to_string(),
            r.opt_iter.to_string(),
            r.q_evals.to_string(),
            r.grad_evals.to_string(),
            r.seconds.to_string(),
            r.beta_change.to_string(),
            opt(r.observed_loglik),
            r.min_ess.to_string(),
            r.excluded.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<trace csv>", e))?;
    Ok(())
}

pub fn write_trace_csv(trace: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(trace, std::io::BufWriter::new(f))
}
