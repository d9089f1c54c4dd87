//! Transition-model definition: outcomes, dependency graph, covariates.
//!
//! A [`ModelSpec`] is the serialized form. [`validate_spec`] checks it and
//! resolves names into indices, producing the [`Model`] every other module
//! works with.

pub(crate) mod io;
mod panel;
mod params;

pub use io::{read_panel, read_panel_csv, write_panel, write_panel_csv};
pub use panel::{propagate_absorbing, Cell, IndividualRecord, Panel};
pub use params::{NamedParams, ParamSet};

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Transient,
    Absorbing,
    Mortality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDef {
    pub name: String,
    pub kind: OutcomeKind,
    /// Outcomes whose state at t-1 enter this outcome's transition.
    #[serde(default)]
    pub dependencies: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    /// Age in years at each time step, derived from a `birth_year` column.
    AgeFromBirthYear,
    /// Fixed 0/1 indicator.
    Indicator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateDef {
    pub name: String,
    pub kind: CovariateKind,
}

/// Name of the panel column that feeds an age covariate.
pub const BIRTH_YEAR_COLUMN: &str = "birth_year";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub outcomes: Vec<OutcomeDef>,
    #[serde(default)]
    pub covariates: Vec<CovariateDef>,
    pub time_steps: usize,
    #[serde(default = "default_step_unit")]
    pub step_unit: String,
    /// Calendar year of the first time step; used to turn birth years into ages.
    #[serde(default)]
    pub start_year: i32,
}

fn default_step_unit() -> String {
    "year".to_string()
}

impl ModelSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// A validated spec with names resolved to indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    deps: Vec<Vec<usize>>,
    mortality: usize,
    age_covariate: Option<usize>,
}

pub fn validate_spec(spec: ModelSpec) -> Result<Model> {
    let mut problems = Vec::new();

    if spec.outcomes.is_empty() {
        problems.push("at least one outcome is required".to_string());
    }
    if spec.time_steps < 2 {
        problems.push(format!("time_steps must be at least 2, got {}", spec.time_steps));
    }

    let mut seen = HashSet::new();
    for o in &spec.outcomes {
        if o.name.is_empty() {
            problems.push("outcome with empty name".to_string());
        }
        if !seen.insert(o.name.as_str()) {
            problems.push(format!("duplicate outcome name '{}'", o.name));
        }
    }

    let mortality: Vec<usize> = spec
        .outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.kind == OutcomeKind::Mortality)
        .map(|(j, _)| j)
        .collect();
    match mortality.len() {
        0 => problems.push("no mortality outcome".to_string()),
        1 => {}
        _ => problems.push("multiple mortality outcomes".to_string()),
    }

    let index_of = |name: &str| spec.outcomes.iter().position(|o| o.name == name);
    let mut deps = Vec::with_capacity(spec.outcomes.len());
    for o in &spec.outcomes {
        let mut resolved = Vec::with_capacity(o.dependencies.len());
        let mut own = HashSet::new();
        for d in &o.dependencies {
            match index_of(d) {
                Some(k) => resolved.push(k),
                None => problems.push(format!(
                    "dangling reference: outcome '{}' depends on undeclared outcome '{d}'",
                    o.name
                )),
            }
            if !own.insert(d.as_str()) {
                problems.push(format!("outcome '{}' lists dependency '{d}' twice", o.name));
            }
        }
        if resolved.len() > 64 {
            problems.push(format!("outcome '{}' has more than 64 dependencies", o.name));
        }
        deps.push(resolved);
    }

    let mut cov_names = HashSet::new();
    let mut age_covariate = None;
    for (k, c) in spec.covariates.iter().enumerate() {
        if c.name.is_empty() || c.name == "intercept" {
            problems.push(format!("invalid covariate name '{}'", c.name));
        }
        if !cov_names.insert(c.name.as_str()) {
            problems.push(format!("duplicate covariate name '{}'", c.name));
        }
        if c.kind == CovariateKind::AgeFromBirthYear {
            if age_covariate.is_some() {
                problems.push("at most one age covariate is allowed".to_string());
            }
            age_covariate = Some(k);
        }
    }

    if !problems.is_empty() {
        return Err(Error::InvalidSpec(problems));
    }
    Ok(Model {
        mortality: mortality[0],
        spec,
        deps,
        age_covariate,
    })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn outcome_count(&self) -> usize {
        self.spec.outcomes.len()
    }

    pub fn time_steps(&self) -> usize {
        self.spec.time_steps
    }

    pub fn covariate_count(&self) -> usize {
        self.spec.covariates.len()
    }

    pub fn mortality(&self) -> usize {
        self.mortality
    }

    pub fn kind(&self, j: usize) -> OutcomeKind {
        self.spec.outcomes[j].kind
    }

    pub fn outcome_name(&self, j: usize) -> &str {
        &self.spec.outcomes[j].name
    }

    pub fn outcome_index(&self, name: &str) -> Option<usize> {
        self.spec.outcomes.iter().position(|o| o.name == name)
    }

    pub fn dependencies(&self, j: usize) -> &[usize] {
        &self.deps[j]
    }

    pub fn age_covariate(&self) -> Option<usize> {
        self.age_covariate
    }

    /// Non-mortality outcomes in declared order.
    pub fn non_mortality(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.outcome_count()).filter(move |&j| j != self.mortality)
    }

    /// Length of `β_j`: intercept, covariates, dependencies.
    pub fn dim(&self, j: usize) -> usize {
        1 + self.covariate_count() + self.deps[j].len()
    }

    pub fn coefficient_names(&self, j: usize) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim(j));
        names.push("intercept".to_string());
        names.extend(self.spec.covariates.iter().map(|c| c.name.clone()));
        names.extend(self.deps[j].iter().map(|&d| format!("prev_{}", self.outcome_name(d))));
        names
    }

    /// Age at the 0-based time index `t` for someone born in `birth_year`.
    #[inline]
    pub fn age_at(&self, birth_year: f64, t: usize) -> f64 {
        (self.spec.start_year as f64 + t as f64) - birth_year
    }

    /// Covariate entries of the design vector at time `t`.
    #[inline]
    pub fn covariate_value(&self, raw: &[f64], k: usize, t: usize) -> f64 {
        if Some(k) == self.age_covariate {
            self.age_at(raw[k], t)
        } else {
            raw[k]
        }
    }

    /// Bitmask of dependency values of outcome `j` in `prev` (bit `d` set when
    /// the d-th dependency is one), or `None` if any dependency is unresolved.
    #[inline]
    pub fn dependency_bits(&self, j: usize, prev: &[Cell]) -> Option<u64> {
        let mut bits = 0u64;
        for (d, &k) in self.deps[j].iter().enumerate() {
            match prev[k] {
                Cell::One => bits |= 1 << d,
                Cell::Zero => {}
                _ => return None,
            }
        }
        Some(bits)
    }

    /// Writes `z_jt` for a known dependency bitmask.
    pub fn design_from_bits(&self, raw: &[f64], j: usize, t: usize, bits: u64, out: &mut [f64]) {
        let p = self.covariate_count();
        out[0] = 1.0;
        for k in 0..p {
            out[1 + k] = self.covariate_value(raw, k, t);
        }
        for d in 0..self.deps[j].len() {
            out[1 + p + d] = if bits >> d & 1 == 1 { 1.0 } else { 0.0 };
        }
    }

    /// Linear predictor `z_jt' β_j` given the previous complete state.
    #[inline]
    pub fn linear_predictor(&self, raw: &[f64], j: usize, t: usize, bits: u64, beta_j: &[f64]) -> f64 {
        let p = self.covariate_count();
        let mut eta = beta_j[0];
        for k in 0..p {
            eta += beta_j[1 + k] * self.covariate_value(raw, k, t);
        }
        for d in 0..self.deps[j].len() {
            if bits >> d & 1 == 1 {
                eta += beta_j[1 + p + d];
            }
        }
        eta
    }
}

/// Design vector `z_jt = [1, covariates at t, dependency states at t-1]`.
///
/// `t` is the 0-based index of the destination time step; `prev_state` is the
/// complete state at `t - 1`.
pub fn build_design_vector(
    model: &Model,
    individual: &IndividualRecord,
    j: usize,
    t: usize,
    prev_state: &[Cell],
) -> Result<Vec<f64>> {
    let bits = model.dependency_bits(j, prev_state).ok_or_else(|| {
        Error::Contract(format!(
            "unresolved dependency for outcome '{}' at time index {t} of individual {}; impute first",
            model.outcome_name(j),
            individual.id
        ))
    })?;
    let mut z = vec![0.0; model.dim(j)];
    model.design_from_bits(&individual.covariates, j, t, bits, &mut z);
    Ok(z)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn outcome(name: &str, kind: OutcomeKind, deps: &[&str]) -> OutcomeDef {
        OutcomeDef {
            name: name.to_string(),
            kind,
            dependencies: deps.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn fem_mini_spec_is_valid() {
        let model = crate::datagen::presets::fem_mini().model;
        assert_eq!(model.outcome_count(), 8);
        assert_eq!(model.outcome_name(model.mortality()), "mortality");
        let heart = model.outcome_index("heart_disease").unwrap();
        let names: Vec<_> = model.dependencies(heart).iter().map(|&d| model.outcome_name(d)).collect();
        assert_eq!(names, ["diabetes", "hypertension", "smoking"]);
    }

    #[test]
    fn rejects_two_mortality_outcomes() {
        let spec = ModelSpec {
            outcomes: vec![
                outcome("death", OutcomeKind::Mortality, &[]),
                outcome("death2", OutcomeKind::Mortality, &[]),
            ],
            covariates: vec![],
            time_steps: 3,
            step_unit: "year".into(),
            start_year: 0,
        };
        match validate_spec(spec) {
            Err(Error::InvalidSpec(v)) => assert!(v.iter().any(|m| m.contains("multiple mortality outcomes"))),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_dangling_dependency() {
        let spec = ModelSpec {
            outcomes: vec![
                outcome("smoking", OutcomeKind::Transient, &["obesity"]),
                outcome("mortality", OutcomeKind::Mortality, &[]),
            ],
            covariates: vec![],
            time_steps: 3,
            step_unit: "year".into(),
            start_year: 0,
        };
        match validate_spec(spec) {
            Err(Error::InvalidSpec(v)) => assert!(v.iter().any(|m| m.contains("dangling reference"))),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_every_violation() {
        let spec = ModelSpec {
            outcomes: vec![outcome("a", OutcomeKind::Transient, &[]), outcome("a", OutcomeKind::Transient, &[])],
            covariates: vec![],
            time_steps: 1,
            step_unit: "year".into(),
            start_year: 0,
        };
        let Err(Error::InvalidSpec(v)) = validate_spec(spec) else { panic!() };
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn intercept_only_design() {
        let spec = ModelSpec {
            outcomes: vec![outcome("mortality", OutcomeKind::Mortality, &[])],
            covariates: vec![],
            time_steps: 3,
            step_unit: "year".into(),
            start_year: 0,
        };
        let model = validate_spec(spec).unwrap();
        let rec = IndividualRecord::new("a", vec![], vec![Cell::Zero; 3], 1);
        assert_eq!(build_design_vector(&model, &rec, 0, 1, &[Cell::Zero]).unwrap(), vec![1.0]);
    }

    #[test]
    fn fem_mini_design_layout() {
        let model = crate::datagen::presets::fem_mini().model;
        // born 1940, start_year 2000, t index 0 -> age 60
        let rec = IndividualRecord::new("x", vec![1940.0, 1.0, 0.0, 0.0], vec![Cell::Zero; 8 * 15], 8);
        let prev = vec![Cell::Zero; 8];
        let smoking = model.outcome_index("smoking").unwrap();
        let z = build_design_vector(&model, &rec, smoking, 0, &prev).unwrap();
        assert_eq!(z.len(), model.dim(smoking));
        assert_eq!(&z[..5], &[1.0, 60.0, 1.0, 0.0, 0.0]);
        assert!(z[5..].iter().all(|&v| v == 0.0));
        assert_eq!(z.len(), 5 + 7);

        let heart = model.outcome_index("heart_disease").unwrap();
        let mut prev = prev;
        prev[model.outcome_index("hypertension").unwrap()] = Cell::One;
        let z = build_design_vector(&model, &rec, heart, 2, &prev).unwrap();
        assert_eq!(z.len(), 5 + 3);
        assert_eq!(z[1], 62.0);
        assert_eq!(&z[5..], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn design_requires_resolved_dependencies() {
        let model = crate::datagen::presets::fem_mini().model;
        let rec = IndividualRecord::new("x", vec![1940.0, 1.0, 0.0, 0.0], vec![Cell::Zero; 8 * 15], 8);
        let mut prev = vec![Cell::Zero; 8];
        prev[0] = Cell::Missing;
        assert!(matches!(build_design_vector(&model, &rec, 1, 1, &prev), Err(Error::Contract(_))));
    }

    #[test]
    fn coefficient_names_follow_layout() {
        let model = crate::datagen::presets::fem_mini().model;
        let cancer = model.outcome_index("cancer").unwrap();
        assert_eq!(
            model.coefficient_names(cancer),
            ["intercept", "age", "male", "black", "hispanic", "prev_smoking"]
        );
    }
}
