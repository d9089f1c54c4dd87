//! Bundled scenarios.

use indexmap::IndexMap;

use super::{IndicatorGroup, InitialDistribution, Mechanism, MissingnessPlan};
use crate::model::{validate_spec, CovariateDef, CovariateKind, Model, ModelSpec, OutcomeDef, OutcomeKind, ParamSet};
use crate::probit::raw;

#[derive(Debug, Clone)]
pub struct Preset {
    pub model: Model,
    pub params: ParamSet,
    pub plan: MissingnessPlan,
    pub initial: InitialDistribution,
}

pub fn by_name(name: &str) -> Option<Preset> {
    match name {
        "fem-mini" | "fem_mini" => Some(fem_mini()),
        _ => None,
    }
}

fn def(name: &str, kind: OutcomeKind, deps: &[&str]) -> OutcomeDef {
    OutcomeDef {
        name: name.into(),
        kind,
        dependencies: deps.iter().map(|s| s.to_string()).collect(),
    }
}

const REFERENCE_AGE: f64 = 65.0;

/// `[intercept, age, male, black, hispanic, deps...]` with the intercept set
/// so that a reference person aged 65 with no dependencies has annual
/// probability `p`.
fn coefs(p: f64, age: f64, demo: [f64; 3], deps: &[f64]) -> Vec<f64> {
    let mut b = vec![raw::quantile(p) - age * REFERENCE_AGE, age];
    b.extend(demo);
    b.extend_from_slice(deps);
    b
}

/// Eight outcomes (smoking, six chronic conditions, mortality) observed over
/// 15 annual steps from 2000, with age, sex and race covariates.
pub fn fem_mini() -> Preset {
    use OutcomeKind::*;
    let all = ["cancer", "diabetes", "heart_disease", "hypertension", "lung_disease", "stroke", "smoking"];
    let spec = ModelSpec {
        outcomes: vec![
            def("smoking", Transient, &all),
            def("cancer", Absorbing, &["smoking"]),
            def("diabetes", Absorbing, &["smoking"]),
            def("heart_disease", Absorbing, &["diabetes", "hypertension", "smoking"]),
            def("hypertension", Absorbing, &["diabetes", "smoking"]),
            def("lung_disease", Absorbing, &["smoking"]),
            def("stroke", Absorbing, &["cancer", "diabetes", "heart_disease", "hypertension", "smoking"]),
            def("mortality", Mortality, &all),
        ],
        covariates: vec![
            CovariateDef { name: "age".into(), kind: CovariateKind::AgeFromBirthYear },
            CovariateDef { name: "male".into(), kind: CovariateKind::Indicator },
            CovariateDef { name: "black".into(), kind: CovariateKind::Indicator },
            CovariateDef { name: "hispanic".into(), kind: CovariateKind::Indicator },
        ],
        time_steps: 15,
        step_unit: "year".into(),
        start_year: 2000,
    };
    let model = validate_spec(spec).expect("preset spec is valid");

    let beta = vec![
        // smoking: strongly persistent, slowly declining with age
        coefs(0.02, -0.01, [0.1, 0.05, -0.1], &[-0.1, -0.1, -0.15, 0.0, -0.2, -0.1, 3.0]),
        coefs(0.010, 0.015, [0.1, 0.0, -0.1], &[0.3]),
        coefs(0.015, 0.005, [0.05, 0.2, 0.25], &[0.1]),
        coefs(0.020, 0.02, [0.15, 0.05, 0.0], &[0.2, 0.25, 0.2]),
        coefs(0.040, 0.01, [0.0, 0.3, 0.1], &[0.3, 0.1]),
        coefs(0.010, 0.01, [0.05, -0.1, -0.1], &[0.5]),
        coefs(0.010, 0.02, [0.05, 0.2, 0.0], &[0.1, 0.15, 0.2, 0.3, 0.2]),
        coefs(0.015, 0.03, [0.2, 0.1, -0.05], &[0.5, 0.2, 0.25, 0.05, 0.3, 0.3, 0.2]),
    ];
    let params = ParamSet::new(&model, beta).expect("preset coefficients match the layout");

    let plan = MissingnessPlan::new(vec![
        Mechanism::CoarseSpacing { period: 2 },
        Mechanism::ItemNonresponse { rate: 0.05 },
    ]);

    let prevalence: IndexMap<String, f64> = [
        ("smoking", 0.2),
        ("cancer", 0.08),
        ("diabetes", 0.15),
        ("heart_disease", 0.2),
        ("hypertension", 0.4),
        ("lung_disease", 0.08),
        ("stroke", 0.05),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let initial = InitialDistribution {
        birth_years: (1925, 1950),
        indicators: vec![
            IndicatorGroup { names: vec!["male".into()], probabilities: vec![0.45] },
            IndicatorGroup { names: vec!["black".into(), "hispanic".into()], probabilities: vec![0.12, 0.10] },
        ],
        prevalence,
    };

    Preset { model, params, plan, initial }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_seven_coefficients() {
        let p = fem_mini();
        assert_eq!(p.params.len(), 67);
        assert!(by_name("fem-mini").is_some());
        assert!(by_name("other").is_none());
    }
}
