use serde::{Deserialize, Serialize};

use super::{CovariateKind, Model, OutcomeKind};
use crate::error::{Error, Result};

/// One outcome at one time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Zero,
    One,
    Missing,
    /// Missing because the individual died earlier (or at this step, for the
    /// non-mortality outcomes). Never imputed, never in the likelihood.
    Dead,
}

impl Cell {
    #[inline]
    pub fn from_bool(b: bool) -> Self {
        if b {
            Cell::One
        } else {
            Cell::Zero
        }
    }

    #[inline]
    pub fn is_observed(self) -> bool {
        matches!(self, Cell::Zero | Cell::One)
    }

    #[inline]
    pub fn is_missing(self) -> bool {
        self == Cell::Missing
    }

    #[inline]
    pub fn value(self) -> Option<bool> {
        match self {
            Cell::Zero => Some(false),
            Cell::One => Some(true),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndividualRecord {
    pub id: String,
    /// Raw covariate values in declared order; birth year for the age covariate.
    pub covariates: Vec<f64>,
    cells: Vec<Cell>,
    outcomes: usize,
}

impl IndividualRecord {
    /// `cells` is row-major by time: `cells[t * outcomes + j]`.
    pub fn new(id: impl Into<String>, covariates: Vec<f64>, cells: Vec<Cell>, outcomes: usize) -> Self {
        assert!(outcomes > 0 && cells.len().is_multiple_of(outcomes), "cell grid shape");
        IndividualRecord {
            id: id.into(),
            covariates,
            cells,
            outcomes,
        }
    }

    pub fn time_steps(&self) -> usize {
        self.cells.len() / self.outcomes
    }

    pub fn outcome_count(&self) -> usize {
        self.outcomes
    }

    #[inline]
    pub fn cell(&self, t: usize, j: usize) -> Cell {
        self.cells[t * self.outcomes + j]
    }

    #[inline]
    pub fn set(&mut self, t: usize, j: usize, c: Cell) {
        self.cells[t * self.outcomes + j] = c;
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[Cell] {
        &self.cells[t * self.outcomes..(t + 1) * self.outcomes]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_missing()).count()
    }

    /// First time index whose state has no missing cell. Transitions before it
    /// are dropped; `None` means the record contributes nothing.
    pub fn effective_start(&self) -> Option<usize> {
        (0..self.time_steps()).find(|&t| !self.row(t).contains(&Cell::Missing))
    }

    /// Marks missing-by-death cells after an observed death and checks that
    /// nothing is observed after it.
    fn derive_death(&mut self, mortality: usize) -> Result<()> {
        let Some(td) = (0..self.time_steps()).find(|&t| self.cell(t, mortality) == Cell::One) else {
            return Ok(());
        };
        for j in 0..self.outcomes {
            if j != mortality && self.cell(td, j) == Cell::Missing {
                self.set(td, j, Cell::Dead);
            }
        }
        for t in td + 1..self.time_steps() {
            for j in 0..self.outcomes {
                match self.cell(t, j) {
                    Cell::Missing | Cell::Dead => {}
                    Cell::One if j == mortality => {}
                    c => {
                        return Err(Error::Data(format!(
                            "individual {}: outcome {j} is {c:?} at time {} after death at time {}",
                            self.id,
                            t + 1,
                            td + 1
                        )))
                    }
                }
                self.set(t, j, Cell::Dead);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    individuals: Vec<IndividualRecord>,
    time_steps: usize,
    outcomes: usize,
}

impl Panel {
    /// Checks shapes and covariates and derives missing-by-death cells.
    pub fn new(model: &Model, mut individuals: Vec<IndividualRecord>) -> Result<Self> {
        let (t_len, j_len) = (model.time_steps(), model.outcome_count());
        let mut ids = std::collections::HashSet::new();
        for rec in &mut individuals {
            if !ids.insert(rec.id.clone()) {
                return Err(Error::Data(format!("duplicate individual id '{}'", rec.id)));
            }
            if rec.outcomes != j_len || rec.time_steps() != t_len {
                return Err(Error::Data(format!(
                    "individual {} has a {}x{} grid, expected {t_len}x{j_len}",
                    rec.id,
                    rec.time_steps(),
                    rec.outcomes
                )));
            }
            if rec.covariates.len() != model.covariate_count() {
                return Err(Error::Data(format!("individual {} has wrong covariate count", rec.id)));
            }
            for (k, c) in model.spec().covariates.iter().enumerate() {
                let v = rec.covariates[k];
                let ok = match c.kind {
                    CovariateKind::AgeFromBirthYear => v.is_finite(),
                    CovariateKind::Indicator => v == 0.0 || v == 1.0,
                };
                if !ok {
                    return Err(Error::Data(format!(
                        "individual {}: covariate '{}' has invalid value {v}",
                        rec.id, c.name
                    )));
                }
            }
            rec.derive_death(model.mortality())?;
        }
        Ok(Panel {
            individuals,
            time_steps: t_len,
            outcomes: j_len,
        })
    }

    pub fn individuals(&self) -> &[IndividualRecord] {
        &self.individuals
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn outcome_count(&self) -> usize {
        self.outcomes
    }

    pub fn missing_count(&self) -> usize {
        self.individuals.iter().map(|r| r.missing_count()).sum()
    }

    pub fn is_complete(&self) -> bool {
        self.missing_count() == 0
    }

    pub fn ids(&self) -> Vec<&str> {
        self.individuals.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&IndividualRecord> {
        self.individuals.iter().find(|r| r.id == id)
    }
}

/// Fills cells implied by absorbing outcomes and by survival.
///
/// * An observed non-mortality response at `t` means the individual was alive
///   at `t`; a missing mortality cell there becomes zero. Only cells observed
///   in the input count as responses, never cells filled below.
/// * For absorbing outcomes and mortality, missing cells before an observed
///   zero become zero; for absorbing outcomes, missing cells after an observed
///   one become one at times the individual is known to be alive.
///
/// Observed cells are never changed. An observed one followed by an observed
/// zero is a data error.
pub fn propagate_absorbing(panel: &Panel, model: &Model) -> Result<Panel> {
    let m = model.mortality();
    let mut out = panel.clone();
    for rec in &mut out.individuals {
        let t_len = rec.time_steps();

        for t in 0..t_len {
            if rec.cell(t, m) == Cell::Missing && model.non_mortality().any(|j| rec.cell(t, j).is_observed()) {
                rec.set(t, m, Cell::Zero);
            }
        }

        if let Some(b) = (0..t_len).rev().find(|&t| rec.cell(t, m) == Cell::Zero) {
            for t in 0..b {
                if rec.cell(t, m) == Cell::Missing {
                    rec.set(t, m, Cell::Zero);
                }
            }
        }

        for j in 0..model.outcome_count() {
            let kind = model.kind(j);
            if kind == OutcomeKind::Transient || j == m {
                continue;
            }
            let first_one = (0..t_len).find(|&t| rec.cell(t, j) == Cell::One);
            let last_zero = (0..t_len).rev().find(|&t| rec.cell(t, j) == Cell::Zero);
            if let (Some(a), Some(b)) = (first_one, last_zero) {
                if a < b {
                    return Err(Error::Data(format!(
                        "individual {}: absorbing outcome '{}' observed 1 at time {} then 0 at time {}",
                        rec.id,
                        model.outcome_name(j),
                        a + 1,
                        b + 1
                    )));
                }
            }
            if let Some(b) = last_zero {
                for t in 0..b {
                    if rec.cell(t, j) == Cell::Missing {
                        rec.set(t, j, Cell::Zero);
                    }
                }
            }
            if kind == OutcomeKind::Absorbing {
                if let Some(a) = first_one {
                    for t in a + 1..t_len {
                        if rec.cell(t, j) == Cell::Missing && rec.cell(t, m) == Cell::Zero {
                            rec.set(t, j, Cell::One);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
