use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use specs_bench::run_config;
use specs_core::{fixtures, Engine, Execution, MethodSpec};

fn episodes(c: &mut Criterion) {
    let inst = fixtures::random_instance(5, 4, 6);
    let engine = Engine::new(&inst.draft, &inst.target, &inst.prm).with_execution(Execution::Sequential);
    let mut group = c.benchmark_group("episode");
    for (name, method) in [
        ("specs", MethodSpec::Specs),
        ("beam_search_target", MethodSpec::BeamSearch { source: specs_core::GenerationSource::Target }),
        ("rsd++", MethodSpec::RsdPlusPlus),
    ] {
        for n in [4, 16] {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, &n| {
                let mut seed = 0u64;
                b.iter(|| {
                    seed += 1;
                    engine.run(method, "x", &run_config(n, 6, seed)).unwrap()
                })
            });
        }
    }
    let threaded = Engine::new(&inst.draft, &inst.target, &inst.prm).with_execution(Execution::Concurrent);
    group.bench_function("specs_concurrent/16", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            threaded.run(MethodSpec::Specs, "x", &run_config(16, 6, seed)).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, episodes);
criterion_main!(benches);
