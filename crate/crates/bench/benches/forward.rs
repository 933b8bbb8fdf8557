use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mutdet_core::detector::{pretrain_loss, Detector};
use mutdet_core::harness::{self, RunConfig};
use mutdet_core::losses::LossConfig;
use mutdet_core::nn::Graph;
use mutdet_core::prep::PrepConfig;

fn pretrain_step(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let d = &cfg.detector;
    harness::generate_dataset(dir.path(), 7, 12, 6, d.image_size).unwrap();
    let dataset = harness::load_dataset(dir.path()).unwrap();
    let det = Detector::new(d.clone()).unwrap();
    let prep = PrepConfig {
        emb_dim: d.dim,
        k_cls: d.k_cls,
        kmeans_iters: 100,
        seed: 7,
    };
    let labels = harness::prepare_dataset_labels(&dataset, det.backbone(), prep).unwrap();
    let items = harness::training_items(&det, &dataset, &labels.sets).unwrap();
    let item = &items[0];
    let loss_cfg = LossConfig::default();

    c.bench_function("backbone/32px", |b| b.iter(|| det.backbone_tokens(black_box(&dataset[0].image)).unwrap()));
    c.bench_function("pretrain/forward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            pretrain_loss(&det, &mut g, &item.tokens, &item.labels, &loss_cfg).unwrap().1
        })
    });
    c.bench_function("pretrain/forward_backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let (total, _, _) = pretrain_loss(&det, &mut g, &item.tokens, &item.labels, &loss_cfg).unwrap();
            g.backward(total)
        })
    });
}

criterion_group!(benches, pretrain_step);
criterion_main!(benches);
