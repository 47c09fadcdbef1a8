//! Microbenchmarks for the recurrence kernels and the matmul workhorse:
//! sequential vs chunked-parallel scan across lengths, GRU cell unroll,
//! and the blocked matmul at training-typical shapes.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use rrl_core::array::{matmul, Array};
use rrl_core::autodiff::{scan_parallel, scan_sequential, ParamBinder, ParameterSet, SeqLayout, Tape};
use rrl_core::nets::GruCore;
use rrl_core::rng::{stream_rng, NormalSource, Stream};

fn coeff_inputs(len: usize, width: usize) -> (Array, Array) {
    let mut rng = stream_rng(0, Stream::Lab);
    let mut normal = NormalSource::new();
    let mut a = Array::zeros(&[len, width]);
    for v in a.data_mut() {
        *v = 0.5 + 0.49 * normal.sample(&mut rng).tanh();
    }
    let mut b = Array::zeros(&[len, width]);
    normal.fill(&mut rng, b.data_mut());
    (a, b)
}

fn bench_scans(c: &mut Criterion) {
    let width = 64;
    let mut group = c.benchmark_group("scan");
    for len in [256usize, 1024, 4096] {
        let (a, b) = coeff_inputs(len, width);
        let layout = SeqLayout::unbroken(len, 1);
        group.throughput(Throughput::Elements((len * width) as u64));
        group.bench_with_input(BenchmarkId::new("sequential", len), &len, |bench, _| {
            bench.iter(|| black_box(scan_sequential(&a, &b, &layout)))
        });
        group.bench_with_input(BenchmarkId::new("parallel", len), &len, |bench, _| {
            bench.iter(|| black_box(scan_parallel(&a, &b, &layout)))
        });
    }
    group.finish();
}

fn bench_gru_unroll(c: &mut Criterion) {
    let width = 64;
    let gru = GruCore { input_dim: width, state_dim: width };
    let mut params = ParameterSet::new();
    gru.init_params(&mut params, &mut stream_rng(1, Stream::ParamInit), "g");
    let mut group = c.benchmark_group("gru_unroll");
    group.sample_size(10);
    for len in [256usize, 1024] {
        let mut x = Array::zeros(&[len, width]);
        let mut normal = NormalSource::new();
        normal.fill(&mut stream_rng(2, Stream::Lab), x.data_mut());
        let layout = SeqLayout::unbroken(len, 1);
        group.bench_with_input(BenchmarkId::from_parameter(len), &len, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let mut binder = ParamBinder::frozen(&params);
                let xn = tape.constant(x.clone());
                black_box(gru.seq(&mut tape, &mut binder, "g", xn, &layout))
            })
        });
    }
    group.finish();
}

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for &(m, k, n) in &[(200usize, 48usize, 320usize), (1000, 256, 256)] {
        let mut normal = NormalSource::new();
        let mut rng = stream_rng(3, Stream::Lab);
        let mut a = Array::zeros(&[m, k]);
        normal.fill(&mut rng, a.data_mut());
        let mut b = Array::zeros(&[k, n]);
        normal.fill(&mut rng, b.data_mut());
        group.throughput(Throughput::Elements((2 * m * k * n) as u64));
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{m}x{k}x{n}")),
            &m,
            |bench, _| bench.iter(|| black_box(matmul(&a, &b))),
        );
    }
    group.finish();
}

criterion_group!(benches, bench_scans, bench_gru_unroll, bench_matmul);
criterion_main!(benches);
