use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sitegnn::gnn::{forward, forward_with_tape, OperatorKind, OperatorParams};
use sitegnn::synth::random_graph;
use sitegnn::tensor::Tensor;

fn operators(c: &mut Criterion) {
    let graph = random_graph(500, 20, 2, 0.01, 3);
    let mut group = c.benchmark_group("forward_backward");
    for kind in OperatorKind::ALL {
        let params =
            OperatorParams::init(kind, graph.node_dim(), graph.edge_dim(), 1).expect("valid dims");
        group.bench_with_input(BenchmarkId::new("forward", kind.name()), &params, |b, p| {
            b.iter(|| forward(p, &graph).expect("forward"))
        });
        group.bench_with_input(
            BenchmarkId::new("backward", kind.name()),
            &params,
            |b, p| {
                b.iter(|| {
                    let mut fwd = forward_with_tape(p, &graph).expect("forward");
                    let ones = fwd.tape.constant(Tensor::full(1, graph.n_nodes(), 1.0));
                    let total = fwd.tape.matmul(ones, fwd.logits).expect("sum");
                    fwd.tape.backward(total).expect("backward")
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, operators);
criterion_main!(benches);
