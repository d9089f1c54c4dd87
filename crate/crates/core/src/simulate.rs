//! Forward simulation from a known state and bridge simulation between an
//! observed start and a (partially) observed end state.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estep::{cell_label, effective_sample_size, normalize_weights, sweep};
use crate::exec::Exec;
use crate::model::{Cell, Model, ParamSet};
use crate::rng::{Domain, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    Forward,
    Bridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub replicates: usize,
    /// Number of time steps in each path, including the starting state.
    pub horizon: usize,
    pub seed: u64,
    pub mode: SimulationMode,
}

impl SimulationConfig {
    fn check(&self, min_horizon: usize) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Contract("at least one replicate is required".into()));
        }
        if self.horizon < min_horizon {
            return Err(Error::Contract(format!("horizon {} is shorter than {min_horizon}", self.horizon)));
        }
        Ok(())
    }
}

fn check_state(model: &Model, state: &[Cell], what: &str) -> Result<()> {
    if state.len() != model.outcome_count() {
        return Err(Error::Contract(format!("{what} has {} cells, expected {}", state.len(), model.outcome_count())));
    }
    Ok(())
}

fn check_start(model: &Model, start: &[Cell]) -> Result<()> {
    check_state(model, start, "initial state")?;
    if start.iter().any(|c| c.is_missing()) {
        return Err(Error::Contract("initial state must be complete".into()));
    }
    Ok(())
}

fn run_paths(model: &Model, params: &ParamSet, covariates: &[f64], template: &[Cell], seed: u64, exec: &Exec, n: usize) -> Vec<(Vec<Cell>, f64)> {
    let rng = RngStream::new(seed, Domain::Forward);
    exec.map(n, |r| {
        let mut out = vec![Cell::Missing; template.len()];
        let lw = sweep(model, params, covariates, template, 0, &rng, r as u64, 0, &mut out);
        (out, lw)
    })
}

/// `config.replicates` paths of `config.horizon` steps from a complete state.
///
/// Each path is a row-major cell grid; cells after a death are [`Cell::Dead`].
pub fn simulate_forward(
    model: &Model,
    params: &ParamSet,
    covariates: &[f64],
    initial_state: &[Cell],
    config: &SimulationConfig,
    exec: &Exec,
) -> Result<Vec<Vec<Cell>>> {
    params.check(model)?;
    check_start(model, initial_state)?;
    config.check(1)?;
    if covariates.len() != model.covariate_count() {
        return Err(Error::Contract("wrong covariate count".into()));
    }
    let mut template = initial_state.to_vec();
    template.resize(config.horizon * model.outcome_count(), Cell::Missing);
    Ok(run_paths(model, params, covariates, &template, config.seed, exec, config.replicates)
        .into_iter()
        .map(|(p, _)| p)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeResult {
    /// Full paths, start and end rows included.
    pub trajectories: Vec<Vec<Cell>>,
    /// Probability of the observed end cells given the simulated path.
    pub bridge_weight: Vec<f64>,
    pub normalized_weight: Vec<f64>,
    pub effective_sample_size: f64,
}

/// Paths from `start_state` conditioned on the observed cells of `end_state`
/// at step `config.horizon`.
pub fn simulate_bridge(
    model: &Model,
    params: &ParamSet,
    covariates: &[f64],
    start_state: &[Cell],
    end_state: &[Cell],
    config: &SimulationConfig,
    exec: &Exec,
) -> Result<BridgeResult> {
    params.check(model)?;
    check_start(model, start_state)?;
    check_state(model, end_state, "end state")?;
    config.check(3)?;
    if covariates.len() != model.covariate_count() {
        return Err(Error::Contract("wrong covariate count".into()));
    }
    let j_len = model.outcome_count();
    let m = model.mortality();
    let mut end = end_state.to_vec();
    if end[m] == Cell::Missing && model.non_mortality().any(|j| end[j].is_observed()) {
        end[m] = Cell::Zero;
    }
    if end[m] == Cell::One {
        for j in model.non_mortality() {
            if end[j].is_observed() {
                return Err(Error::InfeasibleBridge("outcomes observed after death in the end state".into()));
            }
            end[j] = Cell::Dead;
        }
    }
    let mut template = start_state.to_vec();
    template.resize((config.horizon - 1) * j_len, Cell::Missing);
    template.extend_from_slice(&end);

    let paths = run_paths(model, params, covariates, &template, config.seed, exec, config.replicates);
    let log_w: Vec<f64> = paths.iter().map(|(_, lw)| *lw).collect();
    let normalized = normalize_weights(&log_w)
        .ok_or_else(|| Error::InfeasibleBridge("every simulated path gives the end state zero probability".into()))?;
    let ess = effective_sample_size(&normalized);
    if ess < 0.01 * config.replicates as f64 {
        warn!("bridge effective sample size is {ess:.1} of {} replicates; estimates may be unreliable", config.replicates);
    }
    Ok(BridgeResult {
        trajectories: paths.into_iter().map(|(p, _)| p).collect(),
        bridge_weight: log_w.iter().map(|v| v.exp()).collect(),
        normalized_weight: normalized,
        effective_sample_size: ess,
    })
}

/// Self-normalized weighted mean of `statistic` over the bridge paths.
pub fn weighted_estimate(result: &BridgeResult, statistic: impl Fn(&[Cell]) -> f64) -> Result<f64> {
    let total: f64 = result.normalized_weight.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InfeasibleBridge("total bridge weight is zero".into()));
    }
    let mut acc = 0.0;
    for (path, w) in result.trajectories.iter().zip(&result.normalized_weight) {
        if *w > 0.0 {
            acc += w * statistic(path);
        }
    }
    Ok(acc / total)
}

/// One row per (replicate, time). Bridge output adds weight columns and the
/// effective sample size.
pub fn write_trajectories<W: Write>(model: &Model, id: &str, paths: &[Vec<Cell>], bridge: Option<&BridgeResult>, out: W) -> Result<()> {
    write_trajectories_with(model, csv::Writer::from_writer(out), true, id, paths, bridge)
}

pub(crate) fn write_trajectories_with<W: Write>(
    model: &Model,
    mut w: csv::Writer<W>,
    header: bool,
    id: &str,
    paths: &[Vec<Cell>],
    bridge: Option<&BridgeResult>,
) -> Result<()> {
    if header {
        w.write_record(trajectory_header(model, bridge.is_some()))?;
    }
    let j_len = model.outcome_count();
    for (r, path) in paths.iter().enumerate() {
        for (t, row) in path.chunks(j_len).enumerate() {
            let mut rec = vec![id.to_string(), (r + 1).to_string(), (t + 1).to_string()];
            rec.extend(row.iter().map(|c| cell_label(*c).to_string()));
            if let Some(b) = bridge {
                rec.push(b.bridge_weight[r].to_string());
                rec.push(b.normalized_weight[r].to_string());
                rec.push(b.effective_sample_size.to_string());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
    Ok(())
}

pub(crate) fn trajectory_header(model: &Model, bridge: bool) -> Vec<String> {
    let mut h = vec!["id".to_string(), "replicate".into(), "time".into()];
    h.extend(model.spec().outcomes.iter().map(|o| o.name.clone()));
    if bridge {
        h.extend(["weight".to_string(), "normalized_weight".into(), "ess".into()]);
    }
    h
}
