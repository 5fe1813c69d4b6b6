use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sitegnn::bundle::EdgeDefinition;
use sitegnn::gnn::{OperatorKind, OperatorParams};
use sitegnn::graph::{EdgeKind, NodeGroup};
use sitegnn::train::{make_split, train_one, TrainConfig};
use sitegnn_bench::synthetic_bundle;

fn training(c: &mut Criterion) {
    let bundle = synthetic_bundle(500, 7);
    let config = TrainConfig {
        max_epochs: 100,
        patience: 100,
        ..TrainConfig::default()
    };
    let split = make_split(&bundle.labels, &config).expect("split");
    let mut group = c.benchmark_group("train_100_epochs");
    group.sample_size(10);
    for def in EdgeDefinition::ALL {
        let graph = bundle
            .graph(
                def,
                &[EdgeKind::Sci, EdgeKind::Mci],
                &[NodeGroup::Competition, NodeGroup::BasicDemographics],
            )
            .expect("graph");
        for kind in [
            OperatorKind::Mpnn,
            OperatorKind::GatConv,
            OperatorKind::GeneralConv,
        ] {
            group.bench_function(BenchmarkId::new(def.code(), kind.name()), |b| {
                b.iter(|| {
                    let params = OperatorParams::init(kind, graph.node_dim(), graph.edge_dim(), 0)
                        .expect("params");
                    train_one(params, &graph, &split, 0, &config).expect("training")
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, training);
criterion_main!(benches);
