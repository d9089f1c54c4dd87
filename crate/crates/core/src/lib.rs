//! Estimation and simulation of discrete-time Markov transition models with
//! gated Probit transitions, fitted to incomplete panels by Monte Carlo EM.

pub mod commands;
pub mod datagen;
pub mod em;
pub mod error;
pub mod estep;
pub mod exec;
pub mod likelihood;
pub mod model;
pub mod mstep;
pub mod optim;
pub mod oracle;
pub mod probit;
pub mod rng;
pub mod simulate;

pub use em::{run_em, run_em_from, EmConfig, EmResult, ScheduleConfig};
pub use error::{Error, Result};
pub use exec::Exec;
pub use model::{validate_spec, Cell, Model, ModelSpec, Panel, ParamSet};
