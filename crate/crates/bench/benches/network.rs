use criterion::{criterion_group, criterion_main, Criterion};
use drn_bench::ramp;
use drn_core::imaging::bicubic_resize;
use drn_core::metrics::{self_ensemble, ssim};
use drn_core::{Drn, DrnConfig, ImageF32, Plane, Shape};

fn toy() -> DrnConfig {
    DrnConfig {
        scale: 2,
        base_channels: 16,
        groups: 2,
        blocks_per_group: 2,
        rd_units_per_block: 1,
        distill_width: 4,
        ..DrnConfig::default()
    }
}

fn network(c: &mut Criterion) {
    let mut group = c.benchmark_group("drn");
    group.sample_size(10);
    let mut model = Drn::<f32>::with_seed(toy(), 0).unwrap();
    let x = ramp(Shape::new(8, 3, 32, 32));
    group.bench_function("toy/infer/8x32x32", |b| b.iter(|| model.infer(&x).unwrap()));
    let y = model.infer(&x).unwrap();
    group.bench_function("toy/train-step/8x32x32", |b| {
        b.iter(|| {
            model.zero_grad();
            model.forward_train(&x).unwrap();
            model.backward(&y).unwrap()
        })
    });
    let single = ramp(Shape::new(1, 3, 32, 32));
    group.bench_function("toy/self-ensemble/32x32", |b| {
        b.iter(|| self_ensemble(&model, &single).unwrap())
    });
    group.finish();
}

fn imaging(c: &mut Criterion) {
    let img = ImageF32::from_fn(256, 256, |x, y, ch| {
        ((x * 3 + y * 5 + ch) % 255) as f32 / 255.0
    });
    c.bench_function("bicubic/256->128", |b| {
        b.iter(|| bicubic_resize(&img, 128, 128))
    });
    c.bench_function("bicubic/128->256", |b| {
        let small = bicubic_resize(&img, 128, 128);
        b.iter(|| bicubic_resize(&small, 256, 256))
    });
    let p = Plane::new(
        256,
        256,
        img.data
            .iter()
            .step_by(3)
            .map(|&v| v as f64 * 255.0)
            .collect(),
    );
    let q = Plane::new(256, 256, p.data.iter().map(|v| 255.0 - v).collect());
    c.bench_function("ssim/256x256", |b| b.iter(|| ssim(&p, &q).unwrap()));
}

criterion_group!(benches, network, imaging);
criterion_main!(benches);
