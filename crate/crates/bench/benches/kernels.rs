use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use sparse_rep::network::he_init;
use sparse_rep::regularizers::Divergence;
use sparse_rep::{rng_from_seed, Activation, Matrix, TileCoder, TileCoderConfig};
use sparse_rep_bench::uniform_batch;

fn forward_backward(c: &mut Criterion) {
    let params = he_init(&[2, 32, 256], Activation::Relu, &mut rng_from_seed(1)).unwrap();
    let batch = uniform_batch(64, 2, 2);
    c.bench_function("forward 64x[2,32,256]", |b| {
        b.iter(|| params.forward(black_box(&batch), None).unwrap())
    });
    let cache = params.forward(&batch, None).unwrap();
    let upstream = Matrix::from_vec(64, 256, vec![1.0; 64 * 256]).unwrap();
    c.bench_function("backward 64x[2,32,256]", |b| {
        b.iter(|| params.backward(black_box(&cache), black_box(&upstream)).unwrap())
    });
}

fn tile_encode(c: &mut Criterion) {
    let tc = TileCoder::new(TileCoderConfig::default(), 4).unwrap();
    let batch = uniform_batch(256, 4, 3);
    c.bench_function("tile encode 256 obs, 4-d", |b| {
        b.iter_batched(
            || batch.clone(),
            |m| {
                for r in 0..m.rows() {
                    black_box(tc.encode(m.row(r)).unwrap());
                }
            },
            BatchSize::SmallInput,
        )
    });
}

fn skl_penalty(c: &mut Criterion) {
    let means = uniform_batch(1, 256, 4).into_vec();
    c.bench_function("skl exponential penalty, 256 units", |b| {
        b.iter(|| Divergence::SklExponential.penalty(black_box(&means), 0.1).unwrap())
    });
}

criterion_group!(kernels, forward_backward, tile_encode, skl_penalty);
criterion_main!(kernels);
