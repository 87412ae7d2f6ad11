use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use modematch::estimators::McmcSettings;
use modematch::harness::{run_cell, CellPlan, PriorStrengths, Regime};
use modematch::model::ConditionSpec;
use modematch::parallel::Execution;

fn plan(replications: usize) -> CellPlan {
    CellPlan {
        replications,
        regimes: vec![Regime::Ml, Regime::Bui, Regime::BiGab],
        mcmc: McmcSettings {
            iterations: 1_000,
            burnin: 500,
            ..McmcSettings::default()
        },
        seed: 1,
        strength: PriorStrengths::default(),
    }
}

fn replicate_loop(c: &mut Criterion) {
    let spec = ConditionSpec::new(10, 5, 0.2, 0.0, 0.0);
    let mut group = c.benchmark_group("replicates");
    group.sample_size(10);
    for reps in [8, 32] {
        let plan = plan(reps);
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, reps), &plan, |b, plan| {
                b.iter(|| run_cell(black_box(&spec), plan, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, replicate_loop);
criterion_main!(benches);
