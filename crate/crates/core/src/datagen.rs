//! Synthetic panels: complete trajectories from known coefficients and
//! missingness masks that mimic survey designs.
//!
//! Observedness is decided from individual ids, panel dimensions and the
//! random stream only. [`MissingnessPlan::observedness`] never sees a cell
//! value.

pub mod presets;

use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estep::sweep;
use crate::model::{Cell, CovariateKind, IndividualRecord, Model, Panel, ParamSet};
use crate::rng::{Domain, RngStream};

/// One way of hiding cells. Times are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mechanism {
    /// Only every `period`-th wave is fielded, starting with the first.
    CoarseSpacing { period: usize },
    /// Only the listed waves are observed, for the listed outcomes (all when empty).
    IrregularWaves {
        times: Vec<usize>,
        #[serde(default)]
        outcomes: Vec<String>,
    },
    /// Each individual misses each wave entirely with this probability.
    IndividualGaps { probability: f64 },
    /// The outcomes are measured on a random subsample at the listed waves
    /// (all waves when empty). With `alternating`, each individual belongs to
    /// one of two halves and the halves take turns across those waves.
    Subsample {
        fraction: f64,
        outcomes: Vec<String>,
        #[serde(default)]
        waves: Vec<usize>,
        #[serde(default)]
        alternating: bool,
    },
    /// The outcomes are not collected before `first_observed`.
    Structural { outcomes: Vec<String>, first_observed: usize },
    /// Each cell is independently unanswered at this rate.
    ItemNonresponse { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MissingnessPlan {
    pub mechanisms: Vec<Mechanism>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn outcome_set(model: &Model, names: &[String]) -> Result<Vec<bool>> {
    let mut set = vec![names.is_empty(); model.outcome_count()];
    for n in names {
        let j = model.outcome_index(n).ok_or_else(|| Error::Data(format!("missingness plan names unknown outcome '{n}'")))?;
        set[j] = true;
    }
    Ok(set)
}

fn check_rate(what: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Data(format!("{what} {v} is outside [0, 1]")))
    }
}

fn check_times(times: &[usize], t_len: usize) -> Result<()> {
    match times.iter().find(|&&t| t < 1 || t > t_len) {
        Some(t) => Err(Error::Data(format!("wave {t} is outside 1..={t_len}"))),
        None => Ok(()),
    }
}

impl Mechanism {
    fn validate(&self, model: &Model) -> Result<()> {
        let t_len = model.time_steps();
        match self {
            Mechanism::CoarseSpacing { period } if *period == 0 => Err(Error::Data("coarse spacing period must be positive".into())),
            Mechanism::CoarseSpacing { .. } => Ok(()),
            Mechanism::IrregularWaves { times, outcomes } => {
                check_times(times, t_len)?;
                outcome_set(model, outcomes).map(|_| ())
            }
            Mechanism::IndividualGaps { probability } => check_rate("gap probability", *probability),
            Mechanism::Subsample { fraction, outcomes, waves, .. } => {
                check_rate("subsample fraction", *fraction)?;
                check_times(waves, t_len)?;
                outcome_set(model, outcomes).map(|_| ())
            }
            Mechanism::Structural { outcomes, first_observed } => {
                check_times(&[*first_observed], t_len)?;
                outcome_set(model, outcomes).map(|_| ())
            }
            Mechanism::ItemNonresponse { rate } => check_rate("item nonresponse rate", *rate),
        }
    }

    /// Clears cells this mechanism hides. `observed` is row-major `T × J`.
    fn hide(&self, model: &Model, id: &str, seed: u64, observed: &mut [bool]) -> Result<()> {
        let (t_len, j_len) = (model.time_steps(), model.outcome_count());
        let key = fnv1a(serde_json::to_string(self)?.as_bytes());
        let rng = RngStream::with_tag(seed, Domain::Mask, key);
        let who = fnv1a(id.as_bytes());
        let mut clear = |t: usize, j: usize| observed[t * j_len + j] = false;
        match self {
            Mechanism::CoarseSpacing { period } => {
                for t in (0..t_len).filter(|t| t % period != 0) {
                    (0..j_len).for_each(|j| clear(t, j));
                }
            }
            Mechanism::IrregularWaves { times, outcomes } => {
                let set = outcome_set(model, outcomes)?;
                for t in (0..t_len).filter(|t| !times.contains(&(t + 1))) {
                    (0..j_len).filter(|&j| set[j]).for_each(|j| clear(t, j));
                }
            }
            Mechanism::IndividualGaps { probability } => {
                for t in 0..t_len {
                    if rng.bernoulli(*probability, who, t as u64, 0, 0) {
                        (0..j_len).for_each(|j| clear(t, j));
                    }
                }
            }
            Mechanism::Subsample { fraction, outcomes, waves, alternating } => {
                let set = outcome_set(model, outcomes)?;
                let waves: Vec<usize> = if waves.is_empty() { (1..=t_len).collect() } else { waves.clone() };
                let half = u64::from(!rng.bernoulli(*fraction, who, u64::MAX, 0, 0));
                for (k, &wave) in waves.iter().enumerate() {
                    let sampled = if *alternating {
                        (k as u64 + half).is_multiple_of(2)
                    } else {
                        rng.bernoulli(*fraction, who, wave as u64, 1, 0)
                    };
                    if !sampled {
                        (0..j_len).filter(|&j| set[j]).for_each(|j| clear(wave - 1, j));
                    }
                }
            }
            Mechanism::Structural { outcomes, first_observed } => {
                let set = outcome_set(model, outcomes)?;
                for t in 0..first_observed - 1 {
                    (0..j_len).filter(|&j| set[j]).for_each(|j| clear(t, j));
                }
            }
            Mechanism::ItemNonresponse { rate } => {
                for t in 0..t_len {
                    for j in 0..j_len {
                        if rng.bernoulli(*rate, who, t as u64, j as u64, 2) {
                            clear(t, j);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl MissingnessPlan {
    pub fn new(mechanisms: Vec<Mechanism>) -> Self {
        MissingnessPlan { mechanisms }
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        self.mechanisms.iter().try_for_each(|m| m.validate(model))
    }

    /// The plan whose mask is the intersection of both plans' masks.
    pub fn then(&self, other: &MissingnessPlan) -> MissingnessPlan {
        MissingnessPlan { mechanisms: self.mechanisms.iter().chain(&other.mechanisms).cloned().collect() }
    }

    /// Which cells are fielded and answered, for each individual id.
    pub fn observedness<S: AsRef<str>>(&self, model: &Model, ids: &[S], seed: u64) -> Result<Mask> {
        self.validate(model)?;
        let (t_len, j_len) = (model.time_steps(), model.outcome_count());
        let mut observed = Vec::with_capacity(ids.len());
        for id in ids {
            let mut cells = vec![true; t_len * j_len];
            for mech in &self.mechanisms {
                mech.hide(model, id.as_ref(), seed, &mut cells)?;
            }
            if !cells.iter().any(|&o| o) {
                warn!("individual {}: the missingness plan hides every cell", id.as_ref());
            }
            observed.push(cells);
        }
        Ok(Mask {
            ids: ids.iter().map(|s| s.as_ref().to_string()).collect(),
            time_steps: t_len,
            outcomes: j_len,
            observed,
        })
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Cell-level observedness for every individual.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    ids: Vec<String>,
    time_steps: usize,
    outcomes: usize,
    observed: Vec<Vec<bool>>,
}

impl Mask {
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_observed(&self, individual: usize, t: usize, j: usize) -> bool {
        self.observed[individual][t * self.outcomes + j]
    }

    /// Cells observed in both masks.
    pub fn intersect(&self, other: &Mask) -> Result<Mask> {
        if self.ids != other.ids || self.time_steps != other.time_steps || self.outcomes != other.outcomes {
            return Err(Error::Contract("masks cover different individuals or shapes".into()));
        }
        Ok(Mask {
            observed: self
                .observed
                .iter()
                .zip(&other.observed)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| *x && *y).collect())
                .collect(),
            ..self.clone()
        })
    }

    /// The observed panel implied by the mask and a complete truth panel.
    ///
    /// Before death a cell is kept when the mask observes it. A death is
    /// revealed at the first wave at or after it where any cell is fielded;
    /// cells between the death and that wave are missing.
    pub fn apply(&self, model: &Model, truth: &Panel) -> Result<Panel> {
        if truth.len() != self.ids.len() {
            return Err(Error::Contract("mask and panel cover different individuals".into()));
        }
        let (t_len, j_len) = (model.time_steps(), model.outcome_count());
        let m = model.mortality();
        let mut records = Vec::with_capacity(truth.len());
        for (i, rec) in truth.individuals().iter().enumerate() {
            if rec.id != self.ids[i] {
                return Err(Error::Contract(format!("mask row {i} is '{}', panel has '{}'", self.ids[i], rec.id)));
            }
            if rec.missing_count() > 0 {
                return Err(Error::Contract(format!("truth panel individual {} has missing cells", rec.id)));
            }
            let death = (0..t_len).find(|&t| rec.cell(t, m) == Cell::One);
            let mut cells = vec![Cell::Missing; t_len * j_len];
            for t in 0..death.unwrap_or(t_len) {
                for j in 0..j_len {
                    if self.is_observed(i, t, j) {
                        cells[t * j_len + j] = rec.cell(t, j);
                    }
                }
            }
            if let Some(td) = death {
                let contact = (td..t_len).find(|&t| (0..j_len).any(|j| self.is_observed(i, t, j)));
                if let Some(tc) = contact {
                    cells[tc * j_len + m] = Cell::One;
                }
            }
            records.push(IndividualRecord::new(rec.id.clone(), rec.covariates.clone(), cells, j_len));
        }
        Panel::new(model, records)
    }

    /// `id,time,<outcomes>` with 1 for observed and 0 for hidden.
    pub fn write_csv<W: Write>(&self, model: &Model, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string(), "time".into()];
        header.extend(model.spec().outcomes.iter().map(|o| o.name.clone()));
        w.write_record(&header)?;
        for (i, id) in self.ids.iter().enumerate() {
            for t in 0..self.time_steps {
                let mut row = vec![id.clone(), (t + 1).to_string()];
                row.extend((0..self.outcomes).map(|j| if self.is_observed(i, t, j) { "1" } else { "0" }.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::io("<mask csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(model: &Model, input: R) -> Result<Mask> {
        let (t_len, j_len) = (model.time_steps(), model.outcome_count());
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let expected: Vec<String> = ["id".to_string(), "time".into()]
            .into_iter()
            .chain(model.spec().outcomes.iter().map(|o| o.name.clone()))
            .collect();
        if headers.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Data("mask CSV header does not match the model outcomes".into()));
        }
        let mut ids: Vec<String> = Vec::new();
        let mut observed: Vec<Vec<bool>> = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let id = rec[0].to_string();
            let t: usize = rec[1].parse().map_err(|_| Error::Data(format!("mask line {}: bad time", line + 2)))?;
            if ids.last() != Some(&id) {
                ids.push(id.clone());
                observed.push(vec![false; t_len * j_len]);
            }
            if t < 1 || t > t_len {
                return Err(Error::Data(format!("mask line {}: time {t} out of range", line + 2)));
            }
            for j in 0..j_len {
                observed.last_mut().expect("row pushed")[(t - 1) * j_len + j] = match &rec[2 + j] {
                    "1" => true,
                    "0" => false,
                    v => return Err(Error::Data(format!("mask line {}: value '{v}' is not 0 or 1", line + 2))),
                };
            }
        }
        Ok(Mask { ids, time_steps: t_len, outcomes: j_len, observed })
    }

    pub fn write_csv_file(&self, model: &Model, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(model, std::io::BufWriter::new(f))
    }

    pub fn read_csv_file(model: &Model, path: impl AsRef<Path>) -> Result<Mask> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Mask::read_csv(model, std::io::BufReader::new(f))
    }
}

/// Mutually exclusive indicators; at most one is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorGroup {
    pub names: Vec<String>,
    pub probabilities: Vec<f64>,
}

/// Distribution of covariates and first-period states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialDistribution {
    /// Inclusive range of birth years, drawn uniformly.
    pub birth_years: (i32, i32),
    /// Indicator groups; an indicator not listed anywhere is always 0.
    pub indicators: Vec<IndicatorGroup>,
    /// Probability of each non-mortality outcome being 1 at the first step.
    pub prevalence: indexmap::IndexMap<String, f64>,
}

impl InitialDistribution {
    pub fn validate(&self, model: &Model) -> Result<()> {
        if self.birth_years.0 > self.birth_years.1 {
            return Err(Error::Data("birth year range is empty".into()));
        }
        for g in &self.indicators {
            if g.names.len() != g.probabilities.len() || g.probabilities.iter().sum::<f64>() > 1.0 + 1e-12 {
                return Err(Error::Data(format!("indicator group {:?} is malformed", g.names)));
            }
            for (n, &p) in g.names.iter().zip(&g.probabilities) {
                check_rate("indicator probability", p)?;
                let known = model.spec().covariates.iter().any(|c| &c.name == n && c.kind == CovariateKind::Indicator);
                if !known {
                    return Err(Error::Data(format!("initial distribution names unknown indicator '{n}'")));
                }
            }
        }
        for (n, &p) in &self.prevalence {
            check_rate("prevalence", p)?;
            match model.outcome_index(n) {
                Some(j) if j != model.mortality() => {}
                _ => return Err(Error::Data(format!("prevalence given for '{n}', which is not a non-mortality outcome"))),
            }
        }
        Ok(())
    }

    fn draw_covariates(&self, model: &Model, rng: &RngStream, i: u64) -> Vec<f64> {
        let mut cov = vec![0.0; model.covariate_count()];
        for (k, c) in model.spec().covariates.iter().enumerate() {
            if c.kind == CovariateKind::AgeFromBirthYear {
                let (lo, hi) = self.birth_years;
                let span = (hi - lo + 1) as f64;
                cov[k] = lo as f64 + (rng.uniform(i, k as u64, 0, 0) * span).floor().min(span - 1.0);
            }
        }
        for (g, group) in self.indicators.iter().enumerate() {
            let u = rng.uniform(i, 1000 + g as u64, 0, 0);
            let mut acc = 0.0;
            for (name, &p) in group.names.iter().zip(&group.probabilities) {
                acc += p;
                if u < acc {
                    let k = model.spec().covariates.iter().position(|c| &c.name == name).expect("validated");
                    cov[k] = 1.0;
                    break;
                }
            }
        }
        cov
    }
}

/// `n` complete trajectories drawn from the model at `params`.
pub fn generate_panel(model: &Model, params: &ParamSet, n: usize, initial: &InitialDistribution, seed: u64) -> Result<Panel> {
    params.check(model)?;
    initial.validate(model)?;
    let (t_len, j_len) = (model.time_steps(), model.outcome_count());
    let cov_rng = RngStream::new(seed, Domain::Covariates);
    let rng = RngStream::new(seed, Domain::Generate);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let covariates = initial.draw_covariates(model, &cov_rng, i as u64);
        let mut template = vec![Cell::Missing; t_len * j_len];
        for j in 0..j_len {
            template[j] = if j == model.mortality() {
                Cell::Zero
            } else {
                let p = initial.prevalence.get(model.outcome_name(j)).copied().unwrap_or(0.0);
                Cell::from_bool(rng.bernoulli(p, i as u64, u64::MAX, 0, j as u64))
            };
        }
        let mut cells = vec![Cell::Missing; template.len()];
        sweep(model, params, &covariates, &template, 0, &rng, i as u64, 0, &mut cells);
        records.push(IndividualRecord::new((i + 1).to_string(), covariates, cells, j_len));
    }
    Panel::new(model, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::outcome;
    use crate::model::{validate_spec, ModelSpec, OutcomeKind};
    use crate::probit::raw;
    use proptest::prelude::*;

    fn preset() -> presets::Preset {
        presets::fem_mini()
    }

    #[test]
    fn coarse_spacing_keeps_odd_waves() {
        let spec = ModelSpec { time_steps: 5, ..preset().model.spec().clone() };
        let model = crate::model::validate_spec(spec).unwrap();
        let plan = MissingnessPlan::new(vec![Mechanism::CoarseSpacing { period: 2 }]);
        let mask = plan.observedness(&model, &["a"], 1).unwrap();
        let waves: Vec<usize> = (0..5).filter(|&t| mask.is_observed(0, t, 0)).map(|t| t + 1).collect();
        assert_eq!(waves, [1, 3, 5]);
    }

    #[test]
    fn alternating_subsample_halves() {
        let p = preset();
        let plan = MissingnessPlan::new(vec![Mechanism::Subsample {
            fraction: 0.5,
            outcomes: vec!["hypertension".into()],
            waves: vec![],
            alternating: true,
        }]);
        let ids: Vec<String> = (0..200).map(|i| i.to_string()).collect();
        let mask = plan.observedness(&p.model, &ids, 3).unwrap();
        let j = p.model.outcome_index("hypertension").unwrap();
        let mut first_half = 0;
        for i in 0..ids.len() {
            let seen: Vec<bool> = (0..15).map(|t| mask.is_observed(i, t, j)).collect();
            assert!(seen.windows(2).all(|w| w[0] != w[1]));
            first_half += usize::from(seen[0]);
            assert!((0..15).all(|t| mask.is_observed(i, t, 0)));
        }
        assert!((60..140).contains(&first_half));
    }

    #[test]
    fn zero_nonresponse_is_identity() {
        let p = preset();
        let truth = generate_panel(&p.model, &p.params, 20, &p.initial, 2).unwrap();
        let plan = MissingnessPlan::new(vec![Mechanism::ItemNonresponse { rate: 0.0 }]);
        let out = plan.observedness(&p.model, &truth.ids(), 2).unwrap().apply(&p.model, &truth).unwrap();
        assert_eq!(out, truth);
    }

    #[test]
    fn structural_and_irregular() {
        let p = preset();
        let plan = MissingnessPlan::new(vec![
            Mechanism::Structural { outcomes: vec!["stroke".into()], first_observed: 4 },
            Mechanism::IrregularWaves { times: vec![1, 2, 5], outcomes: vec!["cancer".into()] },
        ]);
        let mask = plan.observedness(&p.model, &["x"], 0).unwrap();
        let stroke = p.model.outcome_index("stroke").unwrap();
        let cancer = p.model.outcome_index("cancer").unwrap();
        assert!((0..3).all(|t| !mask.is_observed(0, t, stroke)) && mask.is_observed(0, 3, stroke));
        let cw: Vec<usize> = (0..15).filter(|&t| mask.is_observed(0, t, cancer)).map(|t| t + 1).collect();
        assert_eq!(cw, [1, 2, 5]);
    }

    #[test]
    fn invalid_plans_rejected() {
        let p = preset();
        for bad in [
            Mechanism::ItemNonresponse { rate: 1.5 },
            Mechanism::IrregularWaves { times: vec![0], outcomes: vec![] },
            Mechanism::Structural { outcomes: vec!["nope".into()], first_observed: 2 },
            Mechanism::CoarseSpacing { period: 0 },
        ] {
            assert!(MissingnessPlan::new(vec![bad]).observedness(&p.model, &["a"], 0).is_err());
        }
    }

    #[test]
    fn death_rate_matches_intercept() {
        let model = validate_spec(ModelSpec {
            outcomes: vec![outcome("mortality", OutcomeKind::Mortality, &[])],
            covariates: vec![],
            time_steps: 2,
            step_unit: "year".into(),
            start_year: 0,
        })
        .unwrap();
        let params = ParamSet::new(&model, vec![vec![raw::quantile(0.1)]]).unwrap();
        let init = InitialDistribution { birth_years: (1950, 1950), indicators: vec![], prevalence: Default::default() };
        let n = 100_000;
        let panel = generate_panel(&model, &params, n, &init, 99).unwrap();
        let deaths = panel.individuals().iter().filter(|r| r.cell(1, 0) == Cell::One).count() as f64;
        let se = (0.1f64 * 0.9 / n as f64).sqrt();
        assert!((deaths / n as f64 - 0.1).abs() < 3.0 * se);
    }

    #[test]
    fn mask_csv_round_trip() {
        let p = preset();
        let mask = p.plan.observedness(&p.model, &["a", "b"], 8).unwrap();
        let mut buf = Vec::new();
        mask.write_csv(&p.model, &mut buf).unwrap();
        assert_eq!(Mask::read_csv(&p.model, buf.as_slice()).unwrap(), mask);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn generation_is_deterministic_and_absorbing(seed in any::<u64>()) {
            let p = preset();
            let a = generate_panel(&p.model, &p.params, 15, &p.initial, seed).unwrap();
            let b = generate_panel(&p.model, &p.params, 15, &p.initial, seed).unwrap();
            prop_assert_eq!(&a, &b);
            for j in p.model.non_mortality().filter(|&j| p.model.kind(j) == OutcomeKind::Absorbing) {
                let prev: Vec<usize> = (0..15)
                    .map(|t| a.individuals().iter().filter(|r| r.cell(t, j) == Cell::One).count())
                    .collect();
                // among survivors a one never reverts
                for r in a.individuals() {
                    for t in 1..15 {
                        if r.cell(t - 1, j) == Cell::One {
                            prop_assert!(matches!(r.cell(t, j), Cell::One | Cell::Dead));
                        }
                    }
                }
                prop_assert!(prev.iter().all(|&c| c <= 15));
            }
        }

        #[test]
        fn composition_equals_intersection(seed in any::<u64>(), rate in 0.0f64..0.5, gap in 0.0f64..0.3) {
            let p = preset();
            let ids: Vec<String> = (0..10).map(|i| format!("id{i}")).collect();
            let a = MissingnessPlan::new(vec![Mechanism::CoarseSpacing { period: 2 }, Mechanism::IndividualGaps { probability: gap }]);
            let b = MissingnessPlan::new(vec![Mechanism::ItemNonresponse { rate }]);
            let ma = a.observedness(&p.model, &ids, seed).unwrap();
            let mb = b.observedness(&p.model, &ids, seed).unwrap();
            let mab = a.then(&b).observedness(&p.model, &ids, seed).unwrap();
            prop_assert_eq!(ma.intersect(&mb).unwrap(), mab);
        }

        #[test]
        fn masked_cells_match_truth_before_death(seed in any::<u64>()) {
            let p = preset();
            let truth = generate_panel(&p.model, &p.params, 10, &p.initial, seed).unwrap();
            let mask = p.plan.observedness(&p.model, &truth.ids(), seed).unwrap();
            let masked = mask.apply(&p.model, &truth).unwrap();
            let m = p.model.mortality();
            for (i, (t_rec, o_rec)) in truth.individuals().iter().zip(masked.individuals()).enumerate() {
                let death = (0..15).find(|&t| t_rec.cell(t, m) == Cell::One).unwrap_or(15);
                for t in 0..death {
                    for j in 0..8 {
                        let c = o_rec.cell(t, j);
                        if mask.is_observed(i, t, j) {
                            prop_assert_eq!(c, t_rec.cell(t, j));
                        } else {
                            prop_assert_eq!(c, Cell::Missing);
                        }
                    }
                }
            }
        }
    }
}
