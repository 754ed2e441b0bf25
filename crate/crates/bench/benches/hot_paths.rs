use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use divnet_core::data::generate_synthetic;
use divnet_core::model::diversity_det;
use divnet_core::tensor::Graph;
use divnet_core::training::instance_gradients;
use divnet_core::{decode_slate, DecodeMode, DivNetParams, ModelConfig, RankingInstance, SyntheticConfig, TrainConfig};

fn corpus(items: usize) -> Vec<RankingInstance> {
    let cfg = SyntheticConfig {
        num_items: items,
        ..SyntheticConfig::default()
    };
    generate_synthetic(&cfg, 4).unwrap().instances
}

fn model(inst: &RankingInstance) -> DivNetParams {
    let cfg = ModelConfig::new(inst.item_dim(), 0).with_dims(32, 32);
    DivNetParams::init(cfg, 7).unwrap()
}

fn decode(c: &mut Criterion) {
    let mut group = c.benchmark_group("decode_greedy");
    for n in [10, 20, 50] {
        let data = corpus(n);
        let params = model(&data[0]);
        group.bench_with_input(BenchmarkId::from_parameter(n), &data[0], |b, inst| {
            b.iter(|| decode_slate(&params, black_box(inst), 0.5, &DecodeMode::Greedy, 0).unwrap())
        });
    }
    group.finish();
}

fn determinant(c: &mut Criterion) {
    let mut group = c.benchmark_group("diversity_det");
    for t in [2, 5, 10, 20] {
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|i| (0..32).map(|j| ((i * 31 + j * 17) % 13) as f64 - 6.0).collect())
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(t), &rows, |b, rows| {
            b.iter(|| {
                let mut g = Graph::new();
                let vars: Vec<_> = rows.iter().map(|r| g.constant_matrix(1, r.len(), r.clone())).collect();
                let (last, prefix) = vars.split_last().unwrap();
                diversity_det(&mut g, prefix, *last).unwrap().1
            })
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let data = corpus(10);
    let params = model(&data[0]);
    let cfg = TrainConfig::default();
    c.bench_function("instance_gradients_n10", |b| {
        b.iter(|| instance_gradients(&params, black_box(&data[0]), &cfg, 3).unwrap())
    });
}

criterion_group!(benches, decode, determinant, train_step);
criterion_main!(benches);
