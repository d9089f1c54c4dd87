//! Monte Carlo E-step.
//!
//! Each replicate sweeps forward in time from the individual's effective
//! start. Missing cells are drawn from the transition model at the current
//! parameters; observed cells are not drawn but add their log-probability to
//! the replicate's log-weight. Mortality is handled first at every step and a
//! death truncates the replicate.

use std::io::Write;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::likelihood::{for_each_term, ActiveTerm};
use crate::model::{Cell, IndividualRecord, Model, OutcomeKind, Panel, ParamSet};
use crate::mstep::QData;
use crate::oracle::{self, EnumerationBudget};
use crate::probit::raw;
use crate::rng::{Domain, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightConvention {
    /// Weights divided by their per-individual total.
    #[default]
    Normalized,
    /// `exp(log_weight)` used as is, without normalization.
    Paper,
}

impl std::str::FromStr for WeightConvention {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "normalized" => Ok(WeightConvention::Normalized),
            "paper" => Ok(WeightConvention::Paper),
            other => Err(format!("unknown weight convention '{other}' (expected normalized or paper)")),
        }
    }
}

/// Imputed completions of one individual with their importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateSet {
    pub id: String,
    /// Transitions before this time index are not modeled.
    pub start: usize,
    pub trajectories: Vec<Vec<Cell>>,
    pub log_weight: Vec<f64>,
    pub norm_weight: Vec<f64>,
}

impl ReplicateSet {
    pub fn replicates(&self) -> usize {
        self.trajectories.len()
    }

    /// Fills `norm_weight` from `log_weight`.
    pub fn normalize(&mut self) -> Result<()> {
        self.norm_weight = normalize_weights(&self.log_weight).ok_or_else(|| Error::DegenerateIndividual(self.id.clone()))?;
        Ok(())
    }

    /// `1 / Σ w²` over the normalized weights.
    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.norm_weight)
    }

    /// One row per (replicate, time): cells and the replicate's log-weight.
    pub fn write_csv<W: Write>(&self, model: &Model, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string(), "replicate".into(), "time".into()];
        header.extend(model.spec().outcomes.iter().map(|o| o.name.clone()));
        header.extend(["log_weight".to_string(), "norm_weight".into()]);
        w.write_record(&header)?;
        let j_len = model.outcome_count();
        for (r, traj) in self.trajectories.iter().enumerate() {
            for (t, row) in traj.chunks(j_len).enumerate() {
                let mut rec = vec![self.id.clone(), (r + 1).to_string(), (t + 1).to_string()];
                rec.extend(row.iter().map(|c| cell_label(*c).to_string()));
                rec.push(self.log_weight[r].to_string());
                rec.push(self.norm_weight.get(r).map_or(String::new(), |v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io("<replicate csv>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, model: &Model, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(model, std::io::BufWriter::new(f))
    }
}

pub(crate) fn cell_label(c: Cell) -> &'static str {
    match c {
        Cell::Zero => "0",
        Cell::One => "1",
        Cell::Missing => "NA",
        Cell::Dead => "dead",
    }
}

/// `exp(lw - logsumexp(lw))`, or `None` when every entry is `-inf`.
pub fn normalize_weights(log_weight: &[f64]) -> Option<Vec<f64>> {
    let max = log_weight.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let shifted: Vec<f64> = log_weight.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = shifted.iter().sum();
    Some(shifted.into_iter().map(|v| v / total).collect())
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    let sq: f64 = weights.iter().map(|w| (w / total) * (w / total)).sum();
    1.0 / sq
}

#[inline]
fn is_dead(c: Cell) -> bool {
    matches!(c, Cell::One | Cell::Dead)
}

/// Completes a copy of `template` from `start + 1` on and returns the
/// log-weight accumulated over observed cells (`-inf` when the observed cells
/// are impossible under the drawn path).
///
/// Draw coordinates are `(a, b, t, j)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sweep(
    model: &Model,
    params: &ParamSet,
    covariates: &[f64],
    template: &[Cell],
    start: usize,
    rng: &RngStream,
    a: u64,
    b: u64,
    out: &mut [Cell],
) -> f64 {
    let j_len = model.outcome_count();
    let m = model.mortality();
    let t_len = template.len() / j_len;
    out.copy_from_slice(template);
    let mut log_weight = 0.0;

    for t in start + 1..t_len {
        let (done, rest) = out.split_at_mut(t * j_len);
        let prev = &done[(t - 1) * j_len..];
        let cur = &mut rest[..j_len];
        let tpl = &template[t * j_len..(t + 1) * j_len];

        if is_dead(prev[m]) {
            log_weight += after_death(template, out, t, j_len, m);
            return log_weight;
        }

        let bits = model.dependency_bits(m, prev).expect("previous state resolved");
        let eta = model.linear_predictor(covariates, m, t, bits, params.outcome(m));
        let dead = match tpl[m] {
            Cell::Missing => {
                let d = rng.uniform(a, b, t as u64, m as u64) < raw::cdf_unclamped(eta);
                cur[m] = Cell::from_bool(d);
                d
            }
            Cell::Zero => {
                log_weight += raw::log_cdf(-eta);
                false
            }
            Cell::One => {
                log_weight += raw::log_cdf(eta);
                true
            }
            Cell::Dead => {
                log_weight = f64::NEG_INFINITY;
                true
            }
        };
        if dead {
            for j in model.non_mortality() {
                cur[j] = Cell::Dead;
            }
            if t + 1 < t_len {
                log_weight += after_death(template, out, t + 1, j_len, m);
            }
            return log_weight;
        }

        for j in model.non_mortality() {
            if model.kind(j) == OutcomeKind::Absorbing && prev[j] == Cell::One {
                match tpl[j] {
                    Cell::Zero => log_weight = f64::NEG_INFINITY,
                    _ => cur[j] = Cell::One,
                }
                continue;
            }
            let bits = model.dependency_bits(j, prev).expect("previous state resolved");
            let eta = model.linear_predictor(covariates, j, t, bits, params.outcome(j));
            match tpl[j] {
                Cell::Missing => {
                    let x = rng.uniform(a, b, t as u64, j as u64) < raw::cdf_unclamped(eta);
                    cur[j] = Cell::from_bool(x);
                }
                Cell::Zero => log_weight += raw::log_cdf(-eta),
                Cell::One => log_weight += raw::log_cdf(eta),
                Cell::Dead => log_weight = f64::NEG_INFINITY,
            }
        }
    }
    log_weight
}

/// Rows `from..` after a death: missing cells become dead, an observed
/// survival makes the path impossible.
fn after_death(template: &[Cell], out: &mut [Cell], from: usize, j_len: usize, m: usize) -> f64 {
    let mut lw = 0.0;
    for idx in from * j_len..template.len() {
        match template[idx] {
            Cell::Missing => out[idx] = Cell::Dead,
            Cell::Zero => lw = f64::NEG_INFINITY,
            Cell::One if idx % j_len != m => lw = f64::NEG_INFINITY,
            _ => {}
        }
    }
    lw
}

/// Draws `replicates` completions of `record` and their weights.
///
/// `record` should already have deterministic cells filled (see
/// [`crate::model::propagate_absorbing`]).
pub fn impute_individual(
    model: &Model,
    params: &ParamSet,
    record: &IndividualRecord,
    replicates: usize,
    rng: &RngStream,
    individual_index: u64,
) -> Result<ReplicateSet> {
    let start = record
        .effective_start()
        .ok_or_else(|| Error::Data(format!("individual {} has no fully observed time step", record.id)))?;
    let mut trajectories = Vec::with_capacity(replicates);
    let mut log_weight = Vec::with_capacity(replicates);
    let template = record.cells();
    for r in 0..replicates {
        let mut out = vec![Cell::Missing; template.len()];
        let lw = sweep(model, params, &record.covariates, template, start, rng, individual_index, r as u64, &mut out);
        trajectories.push(out);
        log_weight.push(lw);
    }
    let mut set = ReplicateSet {
        id: record.id.clone(),
        start,
        trajectories,
        log_weight,
        norm_weight: Vec::new(),
    };
    set.normalize()?;
    Ok(set)
}

/// How missing cells are integrated out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EStepMode {
    MonteCarlo { replicates: usize, convention: WeightConvention },
    /// Full enumeration of completions; exact conditional probabilities.
    Exact(EnumerationBudget),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EStepConfig {
    pub mode: EStepMode,
    pub seed: u64,
    /// Separates the random streams of successive E-steps.
    pub iteration: u64,
}

#[derive(Debug, Clone)]
pub struct EStepResult {
    pub data: QData,
    /// Individuals whose replicates all had zero weight; excluded this round.
    pub degenerate: Vec<String>,
    /// Individuals without a fully observed time step.
    pub skipped: Vec<String>,
    pub min_ess: f64,
    pub mean_ess: f64,
}

/// Weighted active terms of one individual, merged by `(t, outcome, bits, response)`.
#[derive(Debug, Clone, Default)]
pub(crate) struct IndividualTerms {
    pub entries: Vec<(ActiveTerm, f64)>,
}

/// Sums replicate weights over identical active terms, in first-seen order.
pub(crate) fn accumulate_terms<'a>(
    model: &Model,
    id: &str,
    start: usize,
    completions: impl Iterator<Item = (&'a [Cell], f64)>,
) -> Result<IndividualTerms> {
    let j_len = model.outcome_count();
    let mut buckets: Vec<Vec<(u64, bool, f64)>> = Vec::new();
    let mut t_len = 0;
    for (cells, w) in completions {
        if w <= 0.0 {
            continue;
        }
        if buckets.is_empty() {
            t_len = cells.len() / j_len;
            buckets = vec![Vec::new(); t_len * j_len];
        }
        for_each_term(model, id, cells, start, |term| {
            let bucket = &mut buckets[term.t * j_len + term.outcome];
            match bucket.iter_mut().find(|(b, y, _)| *b == term.bits && *y == term.response) {
                Some(entry) => entry.2 += w,
                None => bucket.push((term.bits, term.response, w)),
            }
        })?;
    }
    let mut entries = Vec::new();
    for t in 0..t_len {
        for j in 0..j_len {
            for &(bits, response, w) in &buckets[t * j_len + j] {
                entries.push((ActiveTerm { t, outcome: j, bits, response }, w));
            }
        }
    }
    Ok(IndividualTerms { entries })
}

enum Outcome {
    Terms(IndividualTerms, f64),
    Degenerate,
    Skipped,
}

/// E-step over a panel whose deterministic cells are already filled.
pub fn run_estep(model: &Model, params: &ParamSet, panel: &Panel, config: &EStepConfig, exec: &Exec) -> Result<EStepResult> {
    params.check(model)?;
    let rng = RngStream::with_tag(config.seed, Domain::EStep, config.iteration);
    let records = panel.individuals();

    let per_individual: Vec<Result<Outcome>> = exec.map(records.len(), |i| {
        let rec = &records[i];
        let Some(start) = rec.effective_start() else {
            return Ok(Outcome::Skipped);
        };
        match config.mode {
            EStepMode::MonteCarlo { replicates, convention } => {
                let set = match impute_individual(model, params, rec, replicates, &rng, i as u64) {
                    Ok(s) => s,
                    Err(Error::DegenerateIndividual(_)) => return Ok(Outcome::Degenerate),
                    Err(e) => return Err(e),
                };
                let ess = set.effective_sample_size();
                let weights: Vec<f64> = match convention {
                    WeightConvention::Normalized => set.norm_weight.clone(),
                    WeightConvention::Paper => set.log_weight.iter().map(|v| v.exp()).collect(),
                };
                let terms = accumulate_terms(
                    model,
                    &rec.id,
                    start,
                    set.trajectories.iter().map(Vec::as_slice).zip(weights.iter().copied()),
                )?;
                Ok(Outcome::Terms(terms, ess))
            }
            EStepMode::Exact(budget) => {
                let post = oracle::exact_estep(model, params, rec, &budget)?;
                if post.completions.is_empty() {
                    return Ok(Outcome::Degenerate);
                }
                let ess = effective_sample_size(&post.completions.iter().map(|c| c.probability).collect::<Vec<_>>());
                let terms = accumulate_terms(
                    model,
                    &rec.id,
                    start,
                    post.completions.iter().map(|c| (c.cells.as_slice(), c.probability)),
                )?;
                Ok(Outcome::Terms(terms, ess))
            }
        }
    });

    let mut data = QData::new(model);
    let mut degenerate = Vec::new();
    let mut skipped = Vec::new();
    let (mut min_ess, mut ess_sum, mut counted) = (f64::INFINITY, 0.0, 0usize);
    for (rec, outcome) in records.iter().zip(per_individual) {
        match outcome? {
            Outcome::Terms(terms, ess) => {
                data.add_terms(model, &rec.covariates, &terms.entries);
                min_ess = min_ess.min(ess);
                ess_sum += ess;
                counted += 1;
            }
            Outcome::Degenerate => {
                warn!("individual {}: all replicate weights are zero; excluded from this iteration", rec.id);
                degenerate.push(rec.id.clone());
            }
            Outcome::Skipped => skipped.push(rec.id.clone()),
        }
    }
    Ok(EStepResult {
        data,
        degenerate,
        skipped,
        min_ess: if counted > 0 { min_ess } else { f64::NAN },
        mean_ess: if counted > 0 { ess_sum / counted as f64 } else { f64::NAN },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::outcome;
    use crate::model::{propagate_absorbing, validate_spec, CovariateDef, CovariateKind, ModelSpec};
    use approx::assert_relative_eq;
    use Cell::*;

    fn small_model() -> Model {
        validate_spec(ModelSpec {
            outcomes: vec![
                outcome("smoking", OutcomeKind::Transient, &["smoking"]),
                outcome("disease", OutcomeKind::Absorbing, &["smoking"]),
                outcome("mortality", OutcomeKind::Mortality, &["disease"]),
            ],
            covariates: vec![CovariateDef { name: "male".into(), kind: CovariateKind::Indicator }],
            time_steps: 4,
            step_unit: "year".into(),
            start_year: 0,
        })
        .unwrap()
    }

    fn params(model: &Model) -> ParamSet {
        ParamSet::new(
            model,
            vec![vec![-1.0, 0.2, 2.0], vec![-1.2, 0.1, 0.5], vec![-1.5, 0.1, 0.4]],
        )
        .unwrap()
    }

    fn record(cells: Vec<Cell>) -> IndividualRecord {
        IndividualRecord::new("p1", vec![1.0], cells, 3)
    }

    fn prepared(model: &Model, cells: Vec<Cell>) -> IndividualRecord {
        let panel = Panel::new(model, vec![record(cells)]).unwrap();
        propagate_absorbing(&panel, model).unwrap().individuals()[0].clone()
    }

    #[test]
    fn normalize_closed_forms() {
        assert_eq!(normalize_weights(&[0.0; 4]).unwrap(), vec![0.25; 4]);
        let w = normalize_weights(&[0.0, -(3f64.ln())]).unwrap();
        assert_relative_eq!(w[0], 0.75, epsilon = 1e-15);
        assert_relative_eq!(w[1], 0.25, epsilon = 1e-15);
        let w = normalize_weights(&[-1000.0, -1001.0]).unwrap();
        let e = std::f64::consts::E;
        assert_relative_eq!(w[0], e / (1.0 + e), epsilon = 1e-15);
        assert_relative_eq!(w[0] + w[1], 1.0, epsilon = 1e-15);
        let w = normalize_weights(&[0.0, -700.0, f64::NEG_INFINITY]).unwrap();
        assert!(w[1] > 0.0 && w[2] == 0.0);
        assert!(normalize_weights(&[f64::NEG_INFINITY; 3]).is_none());
    }

    #[test]
    fn fully_observed_gives_identical_replicates() {
        let model = small_model();
        let cells = vec![Zero, Zero, Zero, One, Zero, Zero, One, One, Zero, Zero, One, Zero];
        let rec = prepared(&model, cells.clone());
        let rng = RngStream::new(5, Domain::EStep);
        let set = impute_individual(&model, &params(&model), &rec, 6, &rng, 0).unwrap();
        assert!(set.trajectories.iter().all(|t| t == &cells));
        assert!(set.log_weight.iter().all(|&w| w == set.log_weight[0]));
        assert!(set.norm_weight.iter().all(|&w| (w - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn single_missing_cell_is_local() {
        let model = small_model();
        let mut cells = vec![Zero; 12];
        cells[3] = Missing; // smoking at t=1
        let rec = prepared(&model, cells);
        let rng = RngStream::new(11, Domain::EStep);
        let set = impute_individual(&model, &params(&model), &rec, 4, &rng, 0).unwrap();
        for traj in &set.trajectories {
            for (k, c) in traj.iter().enumerate() {
                if k == 3 {
                    assert!(c.is_observed());
                } else {
                    assert_eq!(*c, Zero);
                }
            }
        }
        let mut by_value = std::collections::HashMap::new();
        for (traj, &lw) in set.trajectories.iter().zip(&set.log_weight) {
            let prior = by_value.insert(traj[3], lw);
            assert!(prior.is_none_or(|p| p == lw));
        }
    }

    #[test]
    fn observed_cells_never_change_and_closure_holds() {
        let model = small_model();
        let cells = vec![One, Zero, Zero, Missing, Missing, Missing, Missing, One, Missing, Missing, Missing, Missing];
        let rec = prepared(&model, cells);
        let rng = RngStream::new(2, Domain::EStep);
        let set = impute_individual(&model, &params(&model), &rec, 200, &rng, 3).unwrap();
        for (traj, &lw) in set.trajectories.iter().zip(&set.log_weight) {
            for (k, c) in rec.cells().iter().enumerate() {
                if c.is_observed() {
                    assert_eq!(traj[k], *c);
                }
            }
            if lw > f64::NEG_INFINITY {
                assert!(for_each_term(&model, "p1", traj, 0, |_| {}).is_ok());
            }
        }
    }

    #[test]
    fn impossible_observations_give_zero_weight() {
        let model = small_model();
        // alive and observed at t=3, so a death drawn at t=1 or t=2 is impossible
        let cells = vec![Zero, Zero, Zero, Missing, Missing, Missing, Missing, Missing, Missing, One, Zero, Missing];
        let rec = prepared(&model, cells);
        assert_eq!(rec.cell(3, 2), Zero);
        let mut p = params(&model);
        p.outcome_mut(2)[0] = 0.0;
        let rng = RngStream::new(9, Domain::EStep);
        let set = impute_individual(&model, &p, &rec, 400, &rng, 0).unwrap();
        for (traj, &lw) in set.trajectories.iter().zip(&set.log_weight) {
            let died = traj[5] == One || traj[8] == One;
            assert_eq!(died, lw == f64::NEG_INFINITY);
        }
    }

    #[test]
    fn degenerate_individual_is_reported() {
        let model = small_model();
        let mut p = params(&model);
        p.outcome_mut(2)[0] = 50.0; // certain death
        let cells = vec![Zero, Zero, Zero, Missing, Missing, Missing, One, Zero, Missing, Zero, Zero, Missing];
        // unpropagated, so the mortality draw at t=1 happens and always kills
        let rec = Panel::new(&model, vec![record(cells)]).unwrap().individuals()[0].clone();
        let rng = RngStream::new(1, Domain::EStep);
        match impute_individual(&model, &p, &rec, 10, &rng, 0) {
            Err(Error::DegenerateIndividual(id)) => assert_eq!(id, "p1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn replicate_dump_has_one_row_per_replicate_time() {
        let model = small_model();
        let mut cells = vec![Zero; 12];
        cells[4] = Missing;
        let rec = prepared(&model, cells);
        let set = impute_individual(&model, &params(&model), &rec, 3, &RngStream::new(0, Domain::EStep), 0).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&model, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 4);
        assert!(text.starts_with("id,replicate,time,smoking,disease,mortality,log_weight,norm_weight"));
    }

    #[test]
    fn estep_is_worker_invariant() {
        let preset = crate::datagen::presets::fem_mini();
        let truth = crate::datagen::generate_panel(&preset.model, &preset.params, 30, &preset.initial, 4).unwrap();
        let masked = preset.plan.observedness(&preset.model, &truth.ids(), 4).unwrap().apply(&preset.model, &truth).unwrap();
        let panel = propagate_absorbing(&masked, &preset.model).unwrap();
        let cfg = EStepConfig {
            mode: EStepMode::MonteCarlo { replicates: 20, convention: WeightConvention::Normalized },
            seed: 7,
            iteration: 2,
        };
        let a = run_estep(&preset.model, &preset.params, &panel, &cfg, &Exec::sequential()).unwrap();
        let b = run_estep(&preset.model, &preset.params, &panel, &cfg, &Exec::new(3)).unwrap();
        assert_eq!(a.data, b.data);
        assert!(a.degenerate.is_empty());
    }
}
