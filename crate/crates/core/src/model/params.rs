use std::path::Path;

use indexmap::IndexMap;

use super::Model;
use crate::error::{Error, Result};

/// One Probit coefficient vector per outcome, laid out as
/// `[intercept, covariates…, dependencies…]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    beta: Vec<Vec<f64>>,
}

/// Serialized form: outcome name -> coefficient name -> value.
pub type NamedParams = IndexMap<String, IndexMap<String, f64>>;

impl ParamSet {
    pub fn zeros(model: &Model) -> Self {
        ParamSet {
            beta: (0..model.outcome_count()).map(|j| vec![0.0; model.dim(j)]).collect(),
        }
    }

    pub fn new(model: &Model, beta: Vec<Vec<f64>>) -> Result<Self> {
        let p = ParamSet { beta };
        p.check(model)?;
        Ok(p)
    }

    pub fn check(&self, model: &Model) -> Result<()> {
        if self.beta.len() != model.outcome_count() {
            return Err(Error::Contract(format!(
                "parameter set has {} outcomes, model has {}",
                self.beta.len(),
                model.outcome_count()
            )));
        }
        for (j, b) in self.beta.iter().enumerate() {
            if b.len() != model.dim(j) {
                return Err(Error::Contract(format!(
                    "outcome '{}' has {} coefficients, layout needs {}",
                    model.outcome_name(j),
                    b.len(),
                    model.dim(j)
                )));
            }
            if let Some(v) = b.iter().find(|v| !v.is_finite()) {
                return Err(Error::Contract(format!(
                    "outcome '{}' has non-finite coefficient {v}",
                    model.outcome_name(j)
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn outcome(&self, j: usize) -> &[f64] {
        &self.beta[j]
    }

    pub fn outcome_mut(&mut self, j: usize) -> &mut Vec<f64> {
        &mut self.beta[j]
    }

    pub fn outcomes(&self) -> &[Vec<f64>] {
        &self.beta
    }

    pub fn len(&self) -> usize {
        self.beta.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All coefficients, outcome by outcome.
    pub fn flatten(&self) -> Vec<f64> {
        self.beta.iter().flatten().copied().collect()
    }

    pub fn from_flat(model: &Model, flat: &[f64]) -> Result<Self> {
        let total: usize = (0..model.outcome_count()).map(|j| model.dim(j)).sum();
        if flat.len() != total {
            return Err(Error::Contract(format!("flat parameter vector has {} entries, expected {total}", flat.len())));
        }
        let mut beta = Vec::with_capacity(model.outcome_count());
        let mut at = 0;
        for j in 0..model.outcome_count() {
            beta.push(flat[at..at + model.dim(j)].to_vec());
            at += model.dim(j);
        }
        Ok(ParamSet { beta })
    }

    /// Largest absolute coefficient difference.
    pub fn max_abs_diff(&self, other: &ParamSet) -> f64 {
        self.beta
            .iter()
            .flatten()
            .zip(other.beta.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn euclidean_distance(&self, other: &ParamSet) -> f64 {
        self.beta
            .iter()
            .flatten()
            .zip(other.beta.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_named(&self, model: &Model) -> NamedParams {
        (0..model.outcome_count())
            .map(|j| {
                let coefs = model.coefficient_names(j).into_iter().zip(self.beta[j].iter().copied()).collect();
                (model.outcome_name(j).to_string(), coefs)
            })
            .collect()
    }

    pub fn from_named(model: &Model, named: &NamedParams) -> Result<Self> {
        let mut beta = Vec::with_capacity(model.outcome_count());
        for j in 0..model.outcome_count() {
            let name = model.outcome_name(j);
            let coefs = named
                .get(name)
                .ok_or_else(|| Error::Data(format!("parameters missing outcome '{name}'")))?;
            let names = model.coefficient_names(j);
            if coefs.len() != names.len() {
                return Err(Error::Data(format!(
                    "outcome '{name}' has {} coefficients, expected {}",
                    coefs.len(),
                    names.len()
                )));
            }
            let mut b = Vec::with_capacity(names.len());
            for c in &names {
                let v = coefs
                    .get(c)
                    .ok_or_else(|| Error::Data(format!("outcome '{name}' missing coefficient '{c}'")))?;
                b.push(*v);
            }
            beta.push(b);
        }
        if let Some(extra) = named.keys().find(|k| model.outcome_index(k).is_none()) {
            return Err(Error::Data(format!("parameters name unknown outcome '{extra}'")));
        }
        ParamSet::new(model, beta)
    }

    pub fn to_json(&self, model: &Model) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_named(model))? + "\n")
    }

    pub fn from_json(model: &Model, text: &str) -> Result<Self> {
        let named: NamedParams = serde_json::from_str(text)?;
        ParamSet::from_named(model, &named)
    }

    pub fn read_json(model: &Model, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ParamSet::from_json(model, &text)
    }

    pub fn write_json(&self, model: &Model, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json(model)?).map_err(|e| Error::io(path, e))
    }
}
