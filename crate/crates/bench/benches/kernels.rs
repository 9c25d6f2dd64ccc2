use criterion::{criterion_group, criterion_main, Criterion};
use jnn_core::arch::{Detector, DetectorSpec, JointPlacementMask, Preset, Recognizer, RecognizerSpec};
use jnn_core::metrics::{nms, DetectionRecord, Rect};
use jnn_core::numerics::ops::{conv2d, conv2d_backward};
use jnn_core::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn conv(c: &mut Criterion) {
    let r = &mut ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::randn(&[8, 16, 28, 28], 1.0, r);
    let w = Tensor::randn(&[32, 16, 3, 3], 0.1, r);
    let b = Tensor::zeros(&[32]);
    c.bench_function("conv2d 8x16x28x28 -> 32, 3x3", |bench| {
        bench.iter(|| conv2d(&x, &w, &b, 1, 1).unwrap())
    });
    let y = conv2d(&x, &w, &b, 1, 1).unwrap();
    let g = Tensor::randn(y.shape(), 1.0, r);
    c.bench_function("conv2d backward", |bench| {
        bench.iter(|| conv2d_backward(&x, &w, &g, 1, 1).unwrap())
    });
}

fn forward(c: &mut Criterion) {
    let r = &mut ChaCha8Rng::seed_from_u64(2);
    let rec = Recognizer::build(&RecognizerSpec::preset(Preset::Desk), r).unwrap();
    let q = Tensor::uniform(&[8, 3, 64, 64], 0.0, 1.0, r);
    let t = Tensor::uniform(&[8, 3, 64, 64], 0.0, 1.0, r);
    c.bench_function("desk recognizer forward, 8 pairs", |bench| {
        bench.iter(|| rec.forward(&q, &t).unwrap())
    });

    let spec = DetectorSpec::preset(Preset::Desk, 5, JointPlacementMask::detector_default());
    let det = Detector::build(&spec, r).unwrap();
    let q = Tensor::uniform(&[1, 3, 56, 56], 0.0, 1.0, r);
    let t = Tensor::uniform(&[1, 3, 112, 112], 0.0, 1.0, r);
    let mut group = c.benchmark_group("detector");
    group.sample_size(10);
    group.bench_function("desk detector forward, 1 pair", |bench| {
        bench.iter(|| det.forward(&q, &t).unwrap())
    });
    group.finish();
}

fn suppression(c: &mut Criterion) {
    let r = &mut ChaCha8Rng::seed_from_u64(3);
    let records: Vec<DetectionRecord> = (0..245)
        .map(|i| DetectionRecord {
            image_id: 0,
            class: "c".into(),
            rect: Rect::new(
                r.random_range(0.0..100.0),
                r.random_range(0.0..100.0),
                r.random_range(5.0..40.0),
                r.random_range(5.0..40.0),
            ),
            confidence: (i as f64 * 0.618).fract(),
        })
        .collect();
    c.bench_function("nms 245 boxes", |bench| bench.iter(|| nms(&records, 0.45)));
}

criterion_group!(benches, conv, forward, suppression);
criterion_main!(benches);
