use criterion::{criterion_group, criterion_main, Criterion};
use gapcert::bundled;
use gapcert::model::Layer;
use gapcert::par::Parallelism;
use gapcert::solve::{self, Objective, SolveOptions, TranscribeOptions};

fn multistart(c: &mut Criterion) {
    let spec = bundled::ex51();
    let opts = TranscribeOptions {
        n: 20,
        ..TranscribeOptions::default()
    };
    let t = solve::transcribe(&spec, Layer::Extended, &opts, Objective::Cost).unwrap();
    let sopts = SolveOptions::default();
    let mut group = c.benchmark_group("multistart_ex51_n20_x8");
    group.sample_size(10);
    for (name, mode) in [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)] {
        group.bench_function(name, |b| b.iter(|| solve::multistart(&t, 8, 0, &sopts, mode).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, multistart);
criterion_main!(benches);
