use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hypocart::config::PipelineConfig;
use hypocart::evaluation::cross_validate;
use hypocart::features::build_cohort_instances;
use hypocart::synth::{generate_cohort, SynthConfig};
use hypocart::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench_pipeline(c: &mut Criterion) {
    let synth = SynthConfig::with_seed(7);
    let cfg = PipelineConfig::default();
    let cohort = generate_cohort(&synth, Execution::Sequential).expect("cohort");
    let instances = build_cohort_instances(&cohort, &cfg, Execution::Sequential);

    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new("generate_cohort", name), &exec, |b, &e| {
            b.iter(|| generate_cohort(&synth, e).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("build_instances", name), &exec, |b, &e| {
            b.iter(|| build_cohort_instances(&cohort, &cfg, e))
        });
        group.bench_with_input(BenchmarkId::new("cross_validate", name), &exec, |b, &e| {
            b.iter(|| cross_validate(&instances, &cfg, 42, e).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
