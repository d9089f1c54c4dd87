//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use indexmap::IndexMap;
use markov_em::datagen::{generate_panel, presets, InitialDistribution, Mechanism, MissingnessPlan};
use markov_em::em::{run_em, step_schedule, Schedule, ScheduleConfig};
use markov_em::estep::{impute_individual, EStepConfig};
use markov_em::likelihood::complete_loglik_with_gradient;
use markov_em::model::{
    propagate_absorbing, validate_spec, Cell, CovariateDef, CovariateKind, OutcomeDef, OutcomeKind,
};
use markov_em::mstep::{eval_q, maximize_q, QData};
use markov_em::optim::{Method, OptimizerConfig};
use markov_em::oracle::{direct_mle, exact_estep, exact_observed_loglik, EnumerationBudget};
use markov_em::probit::log_phi_cdf;
use markov_em::rng::{Domain, RngStream};
use markov_em::simulate::{simulate_bridge, weighted_estimate, SimulationConfig, SimulationMode};
use markov_em::{EmConfig, Exec, Model, ModelSpec, Panel, ParamSet};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn def(name: &str, kind: OutcomeKind, deps: &[&str]) -> OutcomeDef {
    OutcomeDef { name: name.into(), kind, dependencies: deps.iter().map(|d| d.to_string()).collect() }
}

// ---------------------------------------------------------------------------
// Small 2-outcome instance shared by criteria 1-3.

const SMALL_SEED: u64 = 22;

fn small_model() -> Model {
    validate_spec(ModelSpec {
        outcomes: vec![
            def("smoking", OutcomeKind::Transient, &["smoking"]),
            def("mortality", OutcomeKind::Mortality, &["smoking"]),
        ],
        covariates: vec![],
        time_steps: 3,
        step_unit: "year".into(),
        start_year: 2000,
    })
    .unwrap()
}

fn small_truth(model: &Model) -> ParamSet {
    ParamSet::new(model, vec![vec![-0.6, 1.4], vec![-1.1, 0.5]]).unwrap()
}

fn small_panel(model: &Model) -> Panel {
    let mut prevalence = IndexMap::new();
    prevalence.insert("smoking".to_string(), 0.5);
    let initial = InitialDistribution { birth_years: (1940, 1950), indicators: vec![], prevalence };
    let full = generate_panel(model, &small_truth(model), 10, &initial, SMALL_SEED).unwrap();
    let plan = MissingnessPlan::new(vec![Mechanism::ItemNonresponse { rate: 0.3 }]);
    plan.observedness(model, &full.ids(), SMALL_SEED).unwrap().apply(model, &full).unwrap()
}

fn live_missing_fraction(panel: &Panel) -> f64 {
    let live: usize = panel.individuals().iter().map(|r| r.cells().iter().filter(|c| **c != Cell::Dead).count()).sum();
    panel.missing_count() as f64 / live as f64
}

struct OracleRun {
    coef_gap: f64,
    ll_gap: f64,
    em_iterations: usize,
    converged: bool,
    ascent_violations: usize,
    tracked: Vec<f64>,
    seconds: f64,
    missing: f64,
}

fn oracle_run() -> OracleRun {
    let clock = Instant::now();
    let model = small_model();
    let panel = small_panel(&model);
    let budget = EnumerationBudget::default();
    let mle = direct_mle(&model, &panel, &ParamSet::zeros(&model), &budget).unwrap();

    let config = EmConfig {
        schedule: ScheduleConfig {
            opt_iter_init: 300,
            opt_iter_max: 300,
            em_tolerance: 1e-13,
            em_max_iterations: 20_000,
            ..ScheduleConfig::default()
        },
        optimizer: OptimizerConfig { method: Method::Newton, relative_tolerance: 1e-14, ..OptimizerConfig::default() },
        seed: 1,
        exact_estep: Some(budget),
        track_observed_loglik: Some(budget),
        ..EmConfig::default()
    };
    let fit = run_em(&model, &panel, &config, &Exec::sequential()).unwrap();
    let ll_em = exact_observed_loglik(&model, &fit.params, &panel, &budget).unwrap();
    let mut tracked = vec![fit.initial_observed_loglik.unwrap()];
    tracked.extend(fit.trace.iter().map(|r| r.observed_loglik.unwrap()));
    OracleRun {
        coef_gap: fit.params.max_abs_diff(&mle.params),
        ll_gap: (ll_em - mle.loglik).abs(),
        em_iterations: fit.trace.len(),
        converged: fit.converged,
        ascent_violations: fit.ascent_violations,
        tracked,
        seconds: clock.elapsed().as_secs_f64(),
        missing: live_missing_fraction(&panel),
    }
}

fn criterion_1(run: &OracleRun) -> Outcome {
    let ok = run.coef_gap <= 1e-4 && run.ll_gap <= 1e-6 && run.seconds < 60.0;
    outcome(
        ok,
        format!(
            "{:.0}% missing; max |beta_em - beta_mle| = {:.2e}, |ll gap| = {:.2e}, {} EM iterations (converged: {}), {:.1}s",
            100.0 * run.missing,
            run.coef_gap,
            run.ll_gap,
            run.em_iterations,
            run.converged,
            run.seconds
        ),
    )
}

fn criterion_2(run: &OracleRun) -> Outcome {
    let drops = run.tracked.windows(2).filter(|w| w[1] < w[0]).count();
    let worst = run.tracked.windows(2).map(|w| w[0] - w[1]).fold(0.0f64, f64::max);
    outcome(
        run.ascent_violations == 0,
        format!(
            "{} iterations; violations beyond rounding: {}; raw decreases: {drops} (largest {worst:.1e})",
            run.tracked.len() - 1,
            run.ascent_violations
        ),
    )
}

fn criterion_3() -> Outcome {
    let clock = Instant::now();
    let model = small_model();
    let panel = propagate_absorbing(&small_panel(&model), &model).unwrap();
    let beta = small_truth(&model);
    let budget = EnumerationBudget::default();
    let rng = RngStream::with_tag(3, Domain::EStep, 0);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, rec) in panel.individuals().iter().enumerate() {
        let exact = exact_estep(&model, &beta, rec, &budget).unwrap();
        if exact.completions.len() < 2 {
            continue;
        }
        let set = impute_individual(&model, &beta, rec, 100_000, &rng, i as u64).unwrap();
        let mut mass: IndexMap<Vec<Cell>, f64> = IndexMap::new();
        for (traj, w) in set.trajectories.iter().zip(&set.norm_weight) {
            *mass.entry(traj.clone()).or_default() += w;
        }
        let mut tv = 0.0;
        for c in &exact.completions {
            tv += (mass.shift_remove(&c.cells).unwrap_or(0.0) - c.probability).abs();
        }
        tv += mass.values().map(|v| v.abs()).sum::<f64>();
        worst = worst.max(0.5 * tv);
        checked += 1;
    }
    let secs = clock.elapsed().as_secs_f64();
    outcome(
        checked > 0 && worst <= 0.01 && secs < 60.0,
        format!("{checked} individuals with missing cells at R = 1e5; worst total variation {worst:.4}; {secs:.1}s"),
    )
}

// ---------------------------------------------------------------------------

fn criterion_4() -> Outcome {
    const N: usize = 2000;
    const FITS: usize = 20;
    let clock = Instant::now();
    let p = presets::fem_mini();
    let exec = Exec::new(0);
    let truth = p.params.flatten();
    let newton = OptimizerConfig { method: Method::Newton, max_iterations: 200, relative_tolerance: 1e-12 };

    let mut fits: Vec<Vec<f64>> = Vec::with_capacity(FITS);
    for s in 0..FITS as u64 {
        let panel = generate_panel(&p.model, &p.params, N, &p.initial, 10_000 + s).unwrap();
        let data = QData::from_complete_panel(&p.model, &panel).unwrap();
        let m = maximize_q(&p.model, &p.params, &data, &newton, &exec).unwrap();
        fits.push(m.params.flatten());
    }
    let k_len = truth.len();
    let se: Vec<f64> = (0..k_len)
        .map(|k| {
            let mean = fits.iter().map(|f| f[k]).sum::<f64>() / FITS as f64;
            (fits.iter().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / (FITS - 1) as f64).sqrt()
        })
        .collect();

    let seed = 7;
    let full = generate_panel(&p.model, &p.params, N, &p.initial, seed).unwrap();
    let panel = p.plan.observedness(&p.model, &full.ids(), seed).unwrap().apply(&p.model, &full).unwrap();
    let config = EmConfig { seed, schedule: ScheduleConfig { em_max_iterations: 40, ..ScheduleConfig::default() }, ..EmConfig::default() };
    let fit = run_em(&p.model, &panel, &config, &exec).unwrap();
    let est = fit.params.flatten();
    // the same panel without its mask, fitted directly: separates sampling luck from EM error
    let same_panel = maximize_q(&p.model, &p.params, &QData::from_complete_panel(&p.model, &full).unwrap(), &newton, &exec)
        .unwrap()
        .params
        .flatten();

    let names: Vec<String> = (0..p.model.outcome_count())
        .flat_map(|j| p.model.coefficient_names(j).into_iter().map(move |c| (j, c)))
        .map(|(j, c)| format!("{}:{c}", p.model.outcome_name(j)))
        .collect();
    let z: Vec<f64> = (0..k_len).map(|k| (est[k] - truth[k]).abs() / se[k]).collect();
    let misses: Vec<String> = (0..k_len)
        .filter(|&k| z[k] > 3.0)
        .map(|k| format!("{} ({:.1} SE; unmasked fit {:.1} SE)", names[k], z[k], (same_panel[k] - truth[k]).abs() / se[k]))
        .collect();
    let em_vs_unmasked = (0..k_len).map(|k| (est[k] - same_panel[k]).abs() / se[k]).fold(0.0, f64::max);
    let last = fit.trace.last().unwrap();
    let worst = z.iter().copied().fold(0.0, f64::max);
    outcome(
        misses.is_empty(),
        format!(
            "{}/{} coefficients within 3 SE (worst {worst:.2} SE); EM vs unmasked fit of the same panel at most {em_vs_unmasked:.2} SE; {} EM iterations ending at R = {}, opt_iter = {}, converged: {}; {:.0}s{}",
            k_len - misses.len(),
            k_len,
            fit.trace.len(),
            last.replicates,
            last.opt_iter,
            fit.converged,
            clock.elapsed().as_secs_f64(),
            if misses.is_empty() { String::new() } else { format!("; outside: {}", misses.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------------------

fn fd4(f: &mut dyn FnMut(f64) -> f64, h: f64) -> f64 {
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn criterion_5() -> Outcome {
    let rng = RngStream::new(5, Domain::Generate);
    let mut worst = 0.0f64;
    let mut checks = 0usize;
    for c in 0..100u64 {
        let u = |k: u64| rng.uniform(c, k, 0, 0);
        let spec = ModelSpec {
            outcomes: vec![
                def("smoking", OutcomeKind::Transient, &["smoking", "disease"]),
                def("disease", OutcomeKind::Absorbing, &["smoking"]),
                def("mortality", OutcomeKind::Mortality, &["smoking", "disease"]),
            ],
            covariates: vec![
                CovariateDef { name: "age".into(), kind: CovariateKind::AgeFromBirthYear },
                CovariateDef { name: "male".into(), kind: CovariateKind::Indicator },
            ],
            time_steps: 3 + (u(1) * 5.0) as usize,
            step_unit: "year".into(),
            start_year: 2000,
        };
        let model = validate_spec(spec).unwrap();
        let beta: Vec<Vec<f64>> = (0..model.outcome_count())
            .map(|j| {
                (0..model.dim(j))
                    .map(|k| {
                        let scale = if k == 1 { 0.01 } else { 0.8 };
                        let centre = if k == 0 { -1.0 } else { 0.0 };
                        centre + scale * (2.0 * u(10 + 20 * j as u64 + k as u64) - 1.0)
                    })
                    .collect()
            })
            .collect();
        let params = ParamSet::new(&model, beta).unwrap();
        let mut prevalence = IndexMap::new();
        prevalence.insert("smoking".to_string(), 0.3);
        prevalence.insert("disease".to_string(), 0.1);
        let initial = InitialDistribution {
            birth_years: (1930, 1960),
            indicators: vec![markov_em::datagen::IndicatorGroup { names: vec!["male".into()], probabilities: vec![0.5] }],
            prevalence,
        };
        let n = 5 + (u(2) * 40.0) as usize;
        let panel = generate_panel(&model, &params, n, &initial, 100 + c).unwrap();

        let lik = complete_loglik_with_gradient(&model, &params, &panel).unwrap();
        let mut data = QData::from_complete_panel(&model, &panel).unwrap();
        let mut extra = QData::new(&model);
        for j in 0..model.outcome_count() {
            let rows = data.outcome(j);
            for r in 0..rows.len() {
                let (z, y, _) = rows.row(r);
                extra.add(j, z, y, 0.05 + u(1000 + r as u64));
            }
        }
        data = extra;
        let q = eval_q(&model, &params, &data, false, &Exec::sequential()).unwrap();

        for j in 0..model.outcome_count() {
            for k in 0..model.dim(j) {
                let h = 1e-4 * (1.0 + params.outcome(j)[k].abs());
                let shifted = |d: f64| {
                    let mut p = params.clone();
                    p.outcome_mut(j)[k] += d;
                    p
                };
                let fd_lik = fd4(&mut |d| complete_loglik_with_gradient(&model, &shifted(d), &panel).unwrap().per_outcome[j], h);
                let fd_q = fd4(&mut |d| eval_q(&model, &shifted(d), &data, false, &Exec::sequential()).unwrap().per_outcome[j], h);
                worst = worst.max(rel_err(lik.gradients[j][k], fd_lik));
                worst = worst.max(rel_err(q.gradients[j][k], fd_q));
                checks += 2;
            }
        }
    }
    outcome(worst <= 1e-6, format!("100 random configurations, {checks} partial derivatives; worst relative error {worst:.2e}"))
}

// ---------------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let cfg = ScheduleConfig::default();
    let mut s = Schedule::initial(&cfg);
    let mut seen = vec![(s.replicates, s.opt_iterations)];
    for _ in 0..5 {
        let threshold = cfg.trigger_coefficient * (s.replicates as f64).sqrt();
        let above = step_schedule(s, threshold * 1.01, &cfg);
        if above != s {
            return outcome(false, format!("schedule moved on a gain above the threshold at {s:?}"));
        }
        s = step_schedule(s, threshold * 0.99, &cfg);
        seen.push((s.replicates, s.opt_iterations));
    }
    let expected = vec![(10, 3), (100, 3), (1000, 3), (1000, 30), (1000, 300), (1000, 300)];
    outcome(seen == expected, format!("sequence {seen:?}"))
}

// ---------------------------------------------------------------------------

fn criterion_7() -> Outcome {
    let model = validate_spec(ModelSpec {
        outcomes: vec![def("mortality", OutcomeKind::Mortality, &[])],
        covariates: vec![CovariateDef { name: "age".into(), kind: CovariateKind::AgeFromBirthYear }],
        time_steps: 3,
        step_unit: "year".into(),
        start_year: 2000,
    })
    .unwrap();
    let beta = ParamSet::new(&model, vec![vec![-4.0, 0.04]]).unwrap();
    let birth = 1930.0;
    let p = |t: usize| {
        let eta = -4.0 + 0.04 * model.age_at(birth, t);
        0.5 * libm::erfc(-eta / std::f64::consts::SQRT_2)
    };
    let (p1, p2) = (p(1), p(2));
    // X_3 = dead given X_1 alive: dead at 2 with p1, or survive then die with (1-p1) p2
    let dead_at_2 = p1 / (p1 + (1.0 - p1) * p2);

    let config = SimulationConfig { replicates: 100_000, horizon: 3, seed: 7, mode: SimulationMode::Bridge };
    let b = simulate_bridge(&model, &beta, &[birth], &[Cell::Zero], &[Cell::One], &config, &Exec::new(0)).unwrap();
    let mut dist = [0.0f64; 2];
    for (path, w) in b.trajectories.iter().zip(&b.normalized_weight) {
        dist[usize::from(path[1] == Cell::One)] += w;
    }
    let tv = 0.5 * ((dist[0] - (1.0 - dead_at_2)).abs() + (dist[1] - dead_at_2).abs());
    let survival = weighted_estimate(&b, |path| if path[1] == Cell::Zero { 1.0 } else { 0.0 }).unwrap();
    let gap = (survival - (1.0 - dead_at_2)).abs();
    outcome(
        tv <= 0.02 && gap <= 0.01,
        format!(
            "P(dead at 2 | alive at 1, dead at 3) exact {dead_at_2:.4}, weighted {:.4}; TV {tv:.4}; survival gap {gap:.4}; ESS {:.0}",
            dist[1], b.effective_sample_size
        ),
    )
}

// ---------------------------------------------------------------------------

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_markov-em")).args(args).output().expect("binary runs")
}

fn strip_seconds(trace: &str) -> String {
    let mut lines = trace.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = header.iter().position(|h| *h == "seconds");
    std::iter::once(header.join(","))
        .chain(lines.map(|l| {
            l.split(',').enumerate().filter(|(i, _)| Some(*i) != col).map(|(_, v)| v).collect::<Vec<_>>().join(",")
        }))
        .collect::<Vec<_>>()
        .join("\n")
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let gen = run_cli(&["generate", "--preset", "fem-mini", "--n", "150", "--seed", "3", "--out", &s(&d.join("data"))]);
    let preset = run_cli(&["preset", "--name", "fem-mini", "--out", &s(&d.join("preset"))]);
    if !gen.status.success() || !preset.status.success() {
        return outcome(false, format!("setup failed: {}", String::from_utf8_lossy(&gen.stderr)));
    }
    let mut outputs = Vec::new();
    for workers in ["1", "8"] {
        let out = d.join(format!("fit{workers}"));
        let r = run_cli(&[
            "estimate",
            "--spec",
            &s(&d.join("preset/spec.json")),
            "--panel",
            &s(&d.join("data/panel.csv")),
            "--seed",
            "11",
            "--workers",
            workers,
            "--R-max",
            "100",
            "--em-max-iter",
            "15",
            "--out",
            &s(&out),
        ]);
        let code = r.status.code();
        if !matches!(code, Some(0) | Some(4)) {
            return outcome(false, format!("estimate exited with {code:?}: {}", String::from_utf8_lossy(&r.stderr)));
        }
        let fitted = std::fs::read(out.join("fitted.json")).unwrap();
        let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
        outputs.push((fitted, strip_seconds(&trace), trace.lines().count() - 1));
    }
    let same = outputs[0].0 == outputs[1].0 && outputs[0].1 == outputs[1].1;
    outcome(
        same,
        format!(
            "1 vs 8 workers over {} EM iterations: fitted JSON {}, trace (wall-clock column excluded) {}",
            outputs[0].2,
            if outputs[0].0 == outputs[1].0 { "identical" } else { "differs" },
            if outputs[0].1 == outputs[1].1 { "identical" } else { "differs" }
        ),
    )
}

// ---------------------------------------------------------------------------

/// `∫_0^∞ exp(-x s - s²/2) ds` by composite Simpson with compensated
/// summation; `Φ(-x) = φ(x)` times this.
fn mills_quadrature(x: f64) -> f64 {
    const N: usize = 20_000;
    // the integrand is below e^-60 past this point
    let upper = -x + (x * x + 2.0 * 60.0).sqrt();
    let h = upper / N as f64;
    let f = |s: f64| (-x * s - 0.5 * s * s).exp();
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for i in 0..=N {
        let w = if i == 0 || i == N { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let term = w * f(i as f64 * h);
        let t = sum + term;
        comp += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
        sum = t;
    }
    (sum + comp) * h / 3.0
}

fn log_phi_reference(z: f64) -> f64 {
    let log_pdf = |x: f64| -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
    if z <= 0.0 {
        log_pdf(z) + mills_quadrature(-z).ln()
    } else {
        (-(log_pdf(z) + mills_quadrature(z).ln()).exp()).ln_1p()
    }
}

fn criterion_9() -> Outcome {
    let mut worst = 0.0f64;
    let mut at = 0.0;
    for i in 0..=8000 {
        let z = -40.0 + i as f64 * 0.01;
        let got = log_phi_cdf(z).unwrap();
        let want = log_phi_reference(z);
        let err = if (got - want).abs() <= f64::MIN_POSITIVE { 0.0 } else { (got - want).abs() / want.abs() };
        if err > worst || err.is_nan() {
            worst = err;
            at = z;
        }
    }

    let model = validate_spec(ModelSpec {
        outcomes: vec![
            def("smoking", OutcomeKind::Transient, &["smoking", "disease"]),
            def("disease", OutcomeKind::Absorbing, &["smoking"]),
            def("mortality", OutcomeKind::Mortality, &["disease"]),
        ],
        covariates: vec![CovariateDef { name: "age".into(), kind: CovariateKind::AgeFromBirthYear }],
        time_steps: 8,
        step_unit: "year".into(),
        start_year: 2000,
    })
    .unwrap();
    let params = ParamSet::new(
        &model,
        vec![vec![-35.5, 0.0, 35.0, 20.0], vec![-33.0, 0.3, 30.0], vec![-35.0, 0.45, 5.0]],
    )
    .unwrap();
    let mut prevalence = IndexMap::new();
    prevalence.insert("smoking".to_string(), 0.5);
    prevalence.insert("disease".to_string(), 0.3);
    let initial = InitialDistribution { birth_years: (1900, 1990), indicators: vec![], prevalence };
    let full = generate_panel(&model, &params, 200, &initial, 9).unwrap();
    let plan = MissingnessPlan::new(vec![Mechanism::ItemNonresponse { rate: 0.3 }]);
    let panel = plan.observedness(&model, &full.ids(), 9).unwrap().apply(&model, &full).unwrap();
    let panel = propagate_absorbing(&panel, &model).unwrap();

    let mut max_eta = 0.0f64;
    for rec in full.individuals() {
        for t in 1..model.time_steps() {
            for j in 0..model.outcome_count() {
                if let Some(bits) = model.dependency_bits(j, rec.row(t - 1)) {
                    max_eta = max_eta.max(model.linear_predictor(&rec.covariates, j, t, bits, params.outcome(j)).abs());
                }
            }
        }
    }
    let rng = RngStream::with_tag(9, Domain::EStep, 0);
    let mut non_finite = 0;
    let mut weights = 0;
    for (i, rec) in panel.individuals().iter().enumerate() {
        if rec.effective_start().is_none() {
            continue;
        }
        let set = impute_individual(&model, &params, rec, 200, &rng, i as u64).unwrap();
        non_finite += set.log_weight.iter().chain(&set.norm_weight).filter(|w| !w.is_finite()).count();
        weights += set.log_weight.len();
    }
    let estep = markov_em::estep::run_estep(
        &model,
        &params,
        &panel,
        &EStepConfig { mode: markov_em::estep::EStepMode::MonteCarlo { replicates: 200, convention: Default::default() }, seed: 9, iteration: 0 },
        &Exec::sequential(),
    )
    .unwrap();
    let q = eval_q(&model, &params, &estep.data, true, &Exec::sequential()).unwrap();
    let ok = worst <= 1e-10 && non_finite == 0 && q.q_value.is_finite() && max_eta >= 35.0;
    outcome(
        ok,
        format!(
            "log Phi worst relative error {worst:.1e} at z = {at:.2} over [-40, 40]; stress panel max |eta| = {max_eta:.1}, {non_finite} non-finite of {weights} log-weights, Q finite: {}",
            q.q_value.is_finite()
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).is_test(true).init();
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: usize| filter.is_empty() || filter.iter().any(|f| f == &n.to_string() || f == &format!("criterion_{n}"));

    let oracle = (wanted(1) || wanted(2)).then(oracle_run);
    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let criteria: Vec<(usize, &str, Check)> = vec![
        (1, "oracle equivalence of exact-E-step EM", Box::new(|| criterion_1(oracle.as_ref().unwrap()))),
        (2, "EM ascent of the observed-data log-likelihood", Box::new(|| criterion_2(oracle.as_ref().unwrap()))),
        (3, "importance-sampling E-step matches the exact posterior", Box::new(criterion_3)),
        (4, "parameter recovery on fem-mini", Box::new(criterion_4)),
        (5, "analytic gradients match finite differences", Box::new(criterion_5)),
        (6, "scheduler reproduces the reported sequence", Box::new(criterion_6)),
        (7, "bridge simulation matches the Bayes conditional", Box::new(criterion_7)),
        (8, "determinism across worker counts", Box::new(criterion_8)),
        (9, "numerical robustness of log Phi and stress weights", Box::new(criterion_9)),
    ];

    let mut failed = Vec::new();
    for (n, name, check) in &criteria {
        if !wanted(*n) {
            continue;
        }
        let result = check();
        println!("criterion {n} [{}] {name}: {}", if result.passed { "PASS" } else { "FAIL" }, result.detail);
        if !result.passed {
            failed.push(*n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
