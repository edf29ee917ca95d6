use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use polarnn::eval::f_kernels;
use polarnn::{build_decoder, BuildOptions, MlDecoder, PolarCode, ScDecoder};
use polarnn_bench::llr_frames;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn f_variants(c: &mut Criterion) {
    let batch = 1 << 14;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a: Vec<f64> = (0..batch).map(|_| rng.gen_range(-50.0..50.0)).collect();
    let b: Vec<f64> = (0..batch).map(|_| rng.gen_range(-50.0..50.0)).collect();
    let mut out = vec![0.0; batch];
    let mut group = c.benchmark_group("f_variant");
    group.throughput(Throughput::Elements(batch as u64));
    for (name, kernel) in f_kernels() {
        group.bench_function(name, |bench| {
            bench.iter(|| kernel(black_box(&a), black_box(&b), black_box(&mut out)))
        });
    }
    group.finish();
}

fn decoders(c: &mut Criterion) {
    let mut group = c.benchmark_group("decode");
    for (n, k) in [(3u32, 4usize), (4, 11)] {
        let code = PolarCode::build(n, k, 1.0).unwrap();
        let frames = llr_frames(&code, 1.0, 256, 2);
        let sc = ScDecoder::new(code.clone());
        let ml = MlDecoder::new(&code).unwrap();
        let net = build_decoder(&code, &BuildOptions::default()).unwrap().net;
        let label = format!("{}_{}", code.len(), k);
        group.throughput(Throughput::Elements(frames.len() as u64));
        group.bench_with_input(BenchmarkId::new("sc", &label), &frames, |bench, frames| {
            bench.iter(|| frames.iter().map(|f| sc.decode(f).unwrap()[0]).sum::<u8>())
        });
        group.bench_with_input(BenchmarkId::new("ml", &label), &frames, |bench, frames| {
            bench.iter(|| frames.iter().map(|f| ml.decode(f).unwrap()[0]).sum::<u8>())
        });
        group.bench_with_input(
            BenchmarkId::new("nn_forward", &label),
            &frames,
            |bench, frames| {
                bench.iter(|| {
                    frames
                        .iter()
                        .map(|f| net.forward(f).unwrap()[0])
                        .sum::<f64>()
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, f_variants, decoders);
criterion_main!(benches);
