use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use jumpmil::errorlab::{ErrorLab, Reference};
use jumpmil::meshdesign::{equidistant_mesh, pilot_expected_y};
use jumpmil::{Exec, MertonParams, MethodKind, MilsteinScheme};

fn execs() -> [(&'static str, Exec); 3] {
    [("sequential", Exec::sequential()), ("parallel-det", Exec::default()), ("parallel-fast", Exec::fast())]
}

fn l2_error(c: &mut Criterion) {
    let p = MertonParams::with_gamma(0.0, 1.0, 2.0, 1.0, 1.0).unwrap();
    let mesh = equidistant_mesh(1.0, 64).unwrap();
    let mut group = c.benchmark_group("l2_error");
    group.sample_size(10);
    for (name, exec) in execs() {
        let scheme = MilsteinScheme::new(p.model(), p.intensity()).unwrap();
        let lab = ErrorLab::new(scheme, Reference::MertonExact(p), 2000, 512).unwrap().with_exec(exec);
        group.bench_function(BenchmarkId::new(name, 2000), |b| {
            b.iter(|| black_box(lab.l2_error(MethodKind::Linear, &mesh).unwrap()))
        });
    }
    group.finish();
}

fn pilot(c: &mut Criterion) {
    let p = MertonParams::with_gamma(1.0, 0.5, 1.0, 1.0, 1.0).unwrap();
    let scheme = MilsteinScheme::new(p.model(), p.intensity()).unwrap();
    let mut group = c.benchmark_group("pilot");
    group.sample_size(10);
    for (name, exec) in execs() {
        group.bench_function(BenchmarkId::new(name, 4000), |b| {
            b.iter(|| black_box(pilot_expected_y(&scheme, 256, 4000, 1, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, l2_error, pilot);
criterion_main!(benches);
