//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::datagen::{generate_panel, presets, InitialDistribution, MissingnessPlan};
use crate::em::{run_em, run_em_from, write_trace_csv, EmConfig, ScheduleConfig};
use crate::error::{Error, Result};
use crate::estep::WeightConvention;
use crate::exec::Exec;
use crate::model::{read_panel_csv, validate_spec, write_panel_csv, Cell, Model, ModelSpec, Panel, ParamSet};
use crate::optim::{Method, OptimizerConfig};
use crate::oracle::{direct_mle, exact_observed_loglik, EnumerationBudget};
use crate::simulate::{simulate_bridge, simulate_forward, trajectory_header, write_trajectories_with, SimulationConfig, SimulationMode};

#[derive(Debug, Parser)]
#[command(name = "markov-em", version, about = "Estimate and simulate Markov transition models from incomplete panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a bundled scenario's spec, parameters, plan and initial distribution as JSON.
    Preset {
        #[arg(long, default_value = "fem-mini")]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a complete panel, a mask and the masked panel.
    Generate(GenerateArgs),
    /// Fit the model to a panel by Monte Carlo EM.
    Estimate(EstimateArgs),
    /// Simulate forward from each individual's first state.
    Simulate(SimulateArgs),
    /// Simulate between each individual's first and last states.
    Bridge(SimulateArgs),
    /// Exact observed-data log-likelihood (or exact MLE) by enumeration.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Bundled scenario supplying any of spec, params, plan and initial not given.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub initial: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub panel: PathBuf,
    /// Starting coefficients; complete-case fits when omitted.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long = "R-init", default_value_t = 10)]
    pub r_init: usize,
    #[arg(long = "R-growth", default_value_t = 10)]
    pub r_growth: usize,
    #[arg(long = "R-max", default_value_t = 1000)]
    pub r_max: usize,
    #[arg(long = "opt-iter-init", default_value_t = 3)]
    pub opt_iter_init: usize,
    #[arg(long = "opt-iter-growth", default_value_t = 10)]
    pub opt_iter_growth: usize,
    #[arg(long = "opt-iter-max", default_value_t = 300)]
    pub opt_iter_max: usize,
    #[arg(long = "trigger-coefficient", default_value_t = 1.97e-4)]
    pub trigger_coefficient: f64,
    #[arg(long = "em-tol", default_value_t = 1e-4)]
    pub em_tol: f64,
    #[arg(long = "em-max-iter", default_value_t = 200)]
    pub em_max_iter: usize,
    /// Exact E-step by enumeration (small panels only).
    #[arg(long = "exact-estep")]
    pub exact_estep: bool,
    /// Largest number of missing cells per individual for enumeration.
    #[arg(long, default_value_t = 20)]
    pub budget: usize,
    #[arg(long = "weight-convention", default_value = "normalized")]
    pub weight_convention: WeightConvention,
    #[arg(long, value_enum, default_value = "quasi-newton")]
    pub method: MethodArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum MethodArg {
    QuasiNewton,
    Newton,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    /// Panel supplying covariates and start (and, for bridges, end) states.
    #[arg(long)]
    pub panel: PathBuf,
    /// Replicates per individual.
    #[arg(long = "M", default_value_t = 1000)]
    pub replicates: usize,
    /// Path length in steps; defaults to the model's time steps.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Maximize the exact likelihood instead of evaluating it.
    #[arg(long)]
    pub mle: bool,
    #[arg(long, default_value_t = 20)]
    pub budget: usize,
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InfeasibleBridge(_) | Error::DegenerateIndividual(_) => 3,
        _ => 2,
    }
}

/// What a successful command reports back to `main`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    NotConverged,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Done => 0,
            Status::NotConverged => 4,
        }
    }
}

pub fn run(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Preset { name, out } => preset(&name, &out),
        Command::Generate(a) => generate(&a),
        Command::Estimate(a) => estimate(&a),
        Command::Simulate(a) => simulate(&a, SimulationMode::Forward),
        Command::Bridge(a) => simulate(&a, SimulationMode::Bridge),
        Command::Oracle(a) => oracle(&a),
    }
}

fn load_model(path: &Path) -> Result<Model> {
    validate_spec(ModelSpec::from_json_file(path)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn lookup_preset(name: &str) -> Result<presets::Preset> {
    presets::by_name(name).ok_or_else(|| Error::Data(format!("unknown preset '{name}'")))
}

fn preset(name: &str, out: &Path) -> Result<Status> {
    let p = lookup_preset(name)?;
    create_dir(out)?;
    p.model.spec().to_json_file(out.join("spec.json"))?;
    p.params.write_json(&p.model, out.join("params.json"))?;
    write_json(&p.plan, &out.join("plan.json"))?;
    write_json(&p.initial, &out.join("initial.json"))?;
    eprintln!("wrote spec.json, params.json, plan.json and initial.json to {}", out.display());
    Ok(Status::Done)
}

fn generate(a: &GenerateArgs) -> Result<Status> {
    let base = a.preset.as_deref().map(lookup_preset).transpose()?;
    let model = match (&a.spec, &base) {
        (Some(path), _) => load_model(path)?,
        (None, Some(p)) => p.model.clone(),
        (None, None) => return Err(Error::Data("--spec or --preset is required".into())),
    };
    let missing = |what: &str| Error::Data(format!("--{what} is required without a preset"));
    let params = match (&a.params, &base) {
        (Some(path), _) => ParamSet::read_json(&model, path)?,
        (None, Some(p)) => p.params.clone(),
        (None, None) => return Err(missing("params")),
    };
    let plan: MissingnessPlan = match (&a.plan, &base) {
        (Some(path), _) => MissingnessPlan::from_json_file(path)?,
        (None, Some(p)) => p.plan.clone(),
        (None, None) => MissingnessPlan::default(),
    };
    let initial: InitialDistribution = match (&a.initial, &base) {
        (Some(path), _) => read_json(path)?,
        (None, Some(p)) => p.initial.clone(),
        (None, None) => return Err(missing("initial")),
    };
    let truth = generate_panel(&model, &params, a.n, &initial, a.seed)?;
    let mask = plan.observedness(&model, &truth.ids(), a.seed)?;
    let masked = mask.apply(&model, &truth)?;
    create_dir(&a.out)?;
    write_panel_csv(&model, &truth, a.out.join("truth.csv"))?;
    write_panel_csv(&model, &masked, a.out.join("panel.csv"))?;
    mask.write_csv_file(&model, a.out.join("mask.csv"))?;
    eprintln!(
        "generated {} individuals; {} of {} cells missing in panel.csv",
        a.n,
        masked.missing_count(),
        a.n * model.time_steps() * model.outcome_count()
    );
    Ok(Status::Done)
}

fn estimate(a: &EstimateArgs) -> Result<Status> {
    let model = load_model(&a.spec)?;
    let panel = read_panel_csv(&model, &a.panel)?;
    let schedule = ScheduleConfig {
        r_init: a.r_init,
        r_growth_factor: a.r_growth,
        r_max: a.r_max,
        opt_iter_init: a.opt_iter_init,
        opt_iter_growth: a.opt_iter_growth,
        opt_iter_max: a.opt_iter_max,
        trigger_coefficient: a.trigger_coefficient,
        em_tolerance: a.em_tol,
        em_max_iterations: a.em_max_iter,
    };
    let config = EmConfig {
        schedule,
        optimizer: OptimizerConfig {
            method: match a.method {
                MethodArg::QuasiNewton => Method::QuasiNewton,
                MethodArg::Newton => Method::Newton,
            },
            ..OptimizerConfig::default()
        },
        seed: a.seed,
        convention: a.weight_convention,
        exact_estep: a.exact_estep.then_some(EnumerationBudget { max_missing_cells: a.budget }),
        ..EmConfig::default()
    };
    let exec = Exec::new(a.workers);
    let result = match &a.params {
        Some(p) => run_em_from(&model, &panel, ParamSet::read_json(&model, p)?, &config, &exec)?,
        None => run_em(&model, &panel, &config, &exec)?,
    };
    create_dir(&a.out)?;
    result.params.write_json(&model, a.out.join("fitted.json"))?;
    write_trace_csv(&result.trace, a.out.join("trace.csv"))?;
    eprintln!(
        "{} after {} EM iterations; wrote fitted.json and trace.csv to {}",
        if result.converged { "converged" } else { "not converged" },
        result.trace.len(),
        a.out.display()
    );
    Ok(if result.converged { Status::Done } else { Status::NotConverged })
}

/// Keeps individuals' streams apart under one user seed.
fn individual_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn simulate(a: &SimulateArgs, mode: SimulationMode) -> Result<Status> {
    let model = load_model(&a.spec)?;
    let params = ParamSet::read_json(&model, &a.params)?;
    let panel = read_panel_csv(&model, &a.panel)?;
    let m = model.mortality();
    let exec = Exec::new(a.workers);
    let horizon = a.horizon.unwrap_or(model.time_steps());
    let file = std::fs::File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut w = std::io::BufWriter::new(file);
    {
        let mut header = csv::Writer::from_writer(&mut w);
        header.write_record(trajectory_header(&model, mode == SimulationMode::Bridge))?;
        header.flush().map_err(|e| Error::io(&a.out, e))?;
    }
    let mut min_ess = f64::INFINITY;
    for (i, rec) in panel.individuals().iter().enumerate() {
        let config = SimulationConfig { replicates: a.replicates, horizon, seed: individual_seed(a.seed, i), mode };
        let mut start = rec.row(0).to_vec();
        if start[m] == Cell::Missing && model.non_mortality().any(|j| start[j].is_observed()) {
            start[m] = Cell::Zero;
        }
        let start = start.as_slice();
        if start.iter().any(|c| c.is_missing()) {
            return Err(Error::Data(format!("individual {} has an incomplete first state", rec.id)));
        }
        let writer = csv::Writer::from_writer(&mut w);
        match mode {
            SimulationMode::Forward => {
                let paths = simulate_forward(&model, &params, &rec.covariates, start, &config, &exec)?;
                write_trajectories_with(&model, writer, false, &rec.id, &paths, None)?;
            }
            SimulationMode::Bridge => {
                let end: Vec<Cell> = rec.row(rec.time_steps() - 1).to_vec();
                let config = SimulationConfig { horizon: a.horizon.unwrap_or(rec.time_steps()), ..config };
                let res = simulate_bridge(&model, &params, &rec.covariates, start, &end, &config, &exec)
                    .map_err(|e| match e {
                        Error::InfeasibleBridge(msg) => Error::InfeasibleBridge(format!("individual {}: {msg}", rec.id)),
                        other => other,
                    })?;
                min_ess = min_ess.min(res.effective_sample_size);
                write_trajectories_with(&model, writer, false, &rec.id, &res.trajectories, Some(&res))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    if mode == SimulationMode::Bridge {
        eprintln!("bridge weights are importance weights; estimates can be biased when the effective sample size is small (minimum {min_ess:.1})");
    }
    eprintln!("wrote {}", a.out.display());
    Ok(Status::Done)
}

fn oracle(a: &OracleArgs) -> Result<Status> {
    let model = load_model(&a.spec)?;
    let panel: Panel = read_panel_csv(&model, &a.panel)?;
    let budget = EnumerationBudget { max_missing_cells: a.budget };
    let mut out = std::io::stdout().lock();
    let io_err = |e| Error::io("<stdout>", e);
    if a.mle {
        let start = match &a.params {
            Some(p) => ParamSet::read_json(&model, p)?,
            None => ParamSet::zeros(&model),
        };
        let fit = direct_mle(&model, &panel, &start, &budget)?;
        let doc = serde_json::json!({
            "loglik": fit.loglik,
            "iterations": fit.iterations,
            "converged": fit.converged,
            "params": fit.params.to_named(&model),
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&doc)?).map_err(io_err)?;
        return Ok(if fit.converged { Status::Done } else { Status::NotConverged });
    }
    let params = match &a.params {
        Some(p) => ParamSet::read_json(&model, p)?,
        None => return Err(Error::Data("--params is required unless --mle is given".into())),
    };
    let ll = exact_observed_loglik(&model, &params, &panel, &budget)?;
    writeln!(out, "{ll}").map_err(io_err)?;
    Ok(Status::Done)
}
