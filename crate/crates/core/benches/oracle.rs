use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use vistask::oracle::{verify_proxy_with, DatasetFamily, Execution};
use vistask::rewrite::{analyze, AnalysisOptions};
use vistask::spec::gallery_spec;
use vistask::task::parse_task;

fn verify(c: &mut Criterion) {
    let family = DatasetFamily { row_range: [1, 8], ..Default::default() };
    let mut group = c.benchmark_group("verify_proxy");
    for (chart, text) in [
        ("pie", "percent_of b by a at a='A'"),
        ("scatter", "x = percent_of b by a at a='A'\ny = percent_of b by a at a='B'\ncombine(x, sum, y)"),
    ] {
        let spec = gallery_spec(chart).unwrap();
        let q = parse_task(text, Some(&spec.schema)).unwrap();
        let plan = analyze(&q, &spec, &AnalysisOptions::default()).unwrap();
        for (label, mode) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(label, chart), &mode, |b, &mode| {
                b.iter(|| verify_proxy_with(&q, &spec, &plan, &family, 5_000, 1e-9, mode).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, verify);
criterion_main!(benches);
