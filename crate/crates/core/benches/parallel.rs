use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use markov_em::datagen::{generate_panel, presets};
use markov_em::estep::{run_estep, EStepConfig, EStepMode, WeightConvention};
use markov_em::mstep::{eval_q, QData};
use markov_em::Exec;

fn executors() -> Vec<(&'static str, Exec)> {
    let mut v = vec![("sequential", Exec::sequential())];
    if cfg!(feature = "parallel") {
        v.push(("parallel", Exec::new(0)));
    }
    v
}

fn bench_estep(c: &mut Criterion) {
    let p = presets::fem_mini();
    let truth = generate_panel(&p.model, &p.params, 300, &p.initial, 11).unwrap();
    let mask = p.plan.observedness(&p.model, &truth.ids(), 11).unwrap();
    let panel = mask.apply(&p.model, &truth).unwrap();
    let config = EStepConfig {
        mode: EStepMode::MonteCarlo { replicates: 20, convention: WeightConvention::Normalized },
        seed: 5,
        iteration: 0,
    };
    let mut group = c.benchmark_group("estep");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| run_estep(&p.model, &p.params, &panel, &config, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_eval_q(c: &mut Criterion) {
    let p = presets::fem_mini();
    let truth = generate_panel(&p.model, &p.params, 2000, &p.initial, 12).unwrap();
    let data = QData::from_complete_panel(&p.model, &truth).unwrap();
    let mut group = c.benchmark_group("eval_q");
    group.sample_size(20);
    for (name, exec) in executors() {
        for hessian in [false, true] {
            let id = BenchmarkId::new(name, if hessian { "with_hessian" } else { "gradient" });
            group.bench_with_input(id, &exec, |b, exec| {
                b.iter(|| eval_q(&p.model, &p.params, &data, hessian, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_estep, bench_eval_q);
criterion_main!(benches);
