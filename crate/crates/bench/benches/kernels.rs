use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use cardiolens::encoder::clip_loss;
use cardiolens::metrics::roc_auc;
use cardiolens::tokenizer::train_bpe;
use cardiolens::{RecordKind, TemplateVocab};
use cardiolens_bench::{image_store, reports, scores_and_labels, unit_rows, unit_vector};

fn tokenize(c: &mut Criterion) {
    let texts = reports(200, 1);
    let vocab = TemplateVocab::starter();
    let bpe = train_bpe(&texts, 500);
    let bytes: usize = texts.iter().map(String::len).sum();
    let mut group = c.benchmark_group("tokenize");
    group.throughput(Throughput::Bytes(bytes as u64));
    group.bench_function("template", |b| {
        b.iter(|| {
            for t in &texts {
                black_box(vocab.tokenize_template(black_box(t), 77).unwrap());
            }
        })
    });
    group.bench_function("bpe", |b| {
        b.iter(|| {
            for t in &texts {
                black_box(bpe.encode(black_box(t)));
            }
        })
    });
    group.finish();
}

fn top_k(c: &mut Criterion) {
    let mut group = c.benchmark_group("top_k");
    for n in [1_000, 10_000] {
        let store = image_store(n, 64, 2);
        let query = unit_vector(64, 3);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &store, |b, store| {
            b.iter(|| black_box(store.top_k(&query, Some(RecordKind::Image), 10).unwrap()))
        });
    }
    group.finish();
}

fn auc(c: &mut Criterion) {
    let mut group = c.benchmark_group("roc_auc");
    for n in [1_000, 100_000] {
        let (scores, labels) = scores_and_labels(n, 4);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| black_box(roc_auc(&scores, &labels).unwrap()))
        });
    }
    group.finish();
}

fn loss(c: &mut Criterion) {
    let mut group = c.benchmark_group("clip_loss");
    for n in [64, 256] {
        let img = unit_rows(n, 32, 5);
        let txt = unit_rows(n, 32, 6);
        group.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| black_box(clip_loss(img.view(), txt.view(), 2.0).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(kernels, tokenize, top_k, auc, loss);
criterion_main!(kernels);
