use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rarexact::cmdp::{lagrangian_backward, CmdpSpec};
use rarexact::oc::OcEvaluator;
use rarexact::{path_weights, Policy, PolicyKind, TestKind, TestRule};

fn policies(n: u32) -> Vec<(&'static str, Policy)> {
    [
        ("ea", PolicyKind::EqualAllocation),
        ("brar", PolicyKind::BayesianRar),
        ("dbcd", PolicyKind::DbcdNeyman { gamma: 2.0 }),
    ]
    .into_iter()
    .map(|(name, k)| (name, Policy::new(k, n, 6).unwrap()))
    .collect()
}

fn forward_g(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_g");
    group.sample_size(10);
    for n in [50, 100] {
        for (name, p) in policies(n) {
            group.bench_with_input(BenchmarkId::new(name, n), &p, |b, p| b.iter(|| path_weights(p).unwrap()));
        }
    }
    group.finish();
}

fn rules(c: &mut Criterion) {
    let mut group = c.benchmark_group("rules");
    group.sample_size(10);
    let g = path_weights(&Policy::new(PolicyKind::BayesianRar, 50, 6).unwrap()).unwrap();
    for kind in [TestKind::Conditional, TestKind::Unconditional, TestKind::Gb] {
        group.bench_function(kind.label(), |b| b.iter(|| TestRule::build(kind, &g, 0.05).unwrap()));
    }
    let rule = TestRule::build(TestKind::Unconditional, &g, 0.05).unwrap();
    let ev = OcEvaluator::new(&g, &rule).unwrap();
    group.bench_function("rejection_rate", |b| b.iter(|| ev.rejection_rate((0.3, 0.6))));
    group.finish();
}

fn backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("lagrangian_backward");
    group.sample_size(10);
    for n in [20, 50] {
        let spec = CmdpSpec::power(n, 6);
        let len = path_weights(&Policy::new(PolicyKind::EqualAllocation, n, 6).unwrap()).unwrap().len();
        let reward: Vec<f64> = (0..len).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.3).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &reward, |b, r| b.iter(|| lagrangian_backward(r, &spec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, forward_g, rules, backward);
criterion_main!(benches);
