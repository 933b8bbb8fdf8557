use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mutdet_bench::{box_pairs, random_matrix, rng};
use mutdet_core::geometry::{min_area_rect, rotated_iou};
use mutdet_core::losses::hungarian;
use mutdet_core::nn::{Graph, MultiHeadAttention, ParamStore};

fn rotated_iou_pairs(c: &mut Criterion) {
    let pairs = box_pairs(&mut rng(1), 256);
    c.bench_function("rotated_iou/256_pairs", |b| {
        b.iter(|| pairs.iter().map(|(p, q)| rotated_iou(black_box(p), black_box(q))).sum::<f64>())
    });
}

fn min_rect(c: &mut Criterion) {
    let pts = random_matrix(&mut rng(2), 200, 2);
    let pts: Vec<[f64; 2]> = pts.rows().into_iter().map(|r| [r[0], r[1]]).collect();
    c.bench_function("min_area_rect/200_points", |b| b.iter(|| min_area_rect(black_box(&pts)).unwrap()));
}

fn assignment(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian");
    for (m, n) in [(5, 20), (20, 20), (50, 100)] {
        let cost = random_matrix(&mut rng(3), m, n);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{m}x{n}")), &cost, |b, cost| {
            b.iter(|| hungarian(black_box(cost)).unwrap())
        });
    }
    group.finish();
}

fn attention(c: &mut Criterion) {
    let mut r = rng(4);
    let mut store = ParamStore::new();
    let attn = MultiHeadAttention::new(&mut store, "attn", 32, 4, &mut r).unwrap();
    let x = random_matrix(&mut r, 64, 32);
    c.bench_function("attention/64x32_forward_backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let v = g.input(x.clone());
            let y = attn.forward(&mut g, &store, v, v).unwrap();
            let loss = g.sum(y);
            g.backward(loss)
        })
    });
}

criterion_group!(benches, rotated_iou_pairs, min_rect, assignment, attention);
criterion_main!(benches);
