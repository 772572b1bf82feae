//! Parallel (rayon) vs sequential execution of the data-parallel hot paths.
//!
//! Both modes run the same chunked code with identical reduction order, so
//! the benchmark compares scheduling overhead and speedup only; outputs are
//! bit-identical.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use qpal_core::codebooks::{build_nuq_codebook, build_vq_codebook, TrellisConfig};
use qpal_core::engines::quantize_matrix;
use qpal_core::exec;
use qpal_core::incoherence::gaussianize;
use qpal_core::rng::gaussian_matrix;
use qpal_core::store::Scheme;
use qpal_core::trellis::tcq_encode;

fn modes() -> Vec<(&'static str, bool)> {
    if cfg!(feature = "parallel") {
        vec![("parallel", true), ("sequential", false)]
    } else {
        vec![("sequential", false)]
    }
}

fn bench_hadamard(c: &mut Criterion) {
    let m = gaussian_matrix(1024, 256, 3);
    let mut g = c.benchmark_group("gaussianize_1024x256");
    for (name, par) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &par, |b, &par| {
            exec::set_parallel(par);
            b.iter(|| gaussianize(black_box(&m), 7).unwrap());
        });
    }
    exec::set_parallel(true);
    g.finish();
}

fn bench_vq_codebook(c: &mut Criterion) {
    let mut g = c.benchmark_group("vq2_codebook_100k_samples");
    g.sample_size(10);
    for (name, par) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &par, |b, &par| {
            exec::set_parallel(par);
            b.iter(|| build_vq_codebook(8, 100_000, black_box(5)).unwrap());
        });
    }
    exec::set_parallel(true);
    g.finish();
}

fn bench_nuq_quantize(c: &mut Criterion) {
    let cb = build_nuq_codebook(4, 100_000, 2).unwrap();
    let m = gaussian_matrix(512, 512, 11);
    let mut g = c.benchmark_group("nuq4_quantize_512x512");
    for (name, par) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &par, |b, &par| {
            exec::set_parallel(par);
            b.iter(|| quantize_matrix(black_box(&m), Scheme::Nuq, 16, &cb, None).unwrap());
        });
    }
    exec::set_parallel(true);
    g.finish();
}

fn bench_trellis_encode(c: &mut Criterion) {
    // One run of the production 2-bit trellis; parallelism applies across
    // runs, so this measures the sequential kernel itself.
    let cfg = TrellisConfig::standard(8).unwrap();
    let cb = qpal_core::codebooks::build_trellis_lut(&cfg, 1 << 16, 3).unwrap();
    let lut: Vec<f32> = match cb.payload {
        qpal_core::store::CodebookPayload::Trellis { ref lut, .. } => {
            lut.iter().flatten().copied().collect()
        }
        _ => unreachable!(),
    };
    let v = qpal_core::rng::standard_normal(9, 256);
    let mut g = c.benchmark_group("tcq2_encode_single_run");
    g.sample_size(10);
    g.bench_function("viterbi_256", |b| {
        b.iter(|| tcq_encode(black_box(&v), &cfg, &lut).unwrap());
    });
    g.finish();
}

criterion_group!(
    benches,
    bench_hadamard,
    bench_vq_codebook,
    bench_nuq_quantize,
    bench_trellis_encode
);
criterion_main!(benches);
