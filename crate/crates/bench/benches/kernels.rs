use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tinycd::ops::{conv2d, instance_norm, sum, LossKind, INSTANCE_NORM_EPS};
use tinycd::train::{AdamWConfig, OptimizerState};
use tinycd::{ModelConfig, TinyCd};
use tinycd_bench::{batch, filled};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d_3x3");
    for (ch, side) in [(16, 64), (32, 16)] {
        let x = filled([4, ch, side, side], true);
        let w = filled([ch, ch, 3, 3], true);
        let b = filled([1, ch, 1, 1], true);
        let id = format!("{ch}x{side}");
        g.bench_with_input(BenchmarkId::new("forward", &id), &(), |bench, _| {
            bench.iter(|| conv2d(&x, &w, Some(&b), 1, 1, 1).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("forward_backward", &id), &(), |bench, _| {
            bench.iter(|| {
                let y = conv2d(&x, &w, Some(&b), 1, 1, 1).unwrap();
                sum(&y).backward().unwrap();
                w.zero_grad();
            })
        });
    }
    g.finish();
}

fn norm(c: &mut Criterion) {
    let x = filled([8, 16, 64, 64], false);
    c.bench_function("instance_norm 8x16x64x64", |b| b.iter(|| instance_norm(&x, INSTANCE_NORM_EPS).unwrap()));
}

fn model(c: &mut Criterion) {
    let net = TinyCd::<f32>::new(ModelConfig::default(), 0).unwrap();
    let (a, b, label) = batch(8, 64);
    c.bench_function("model forward 8x64x64", |bench| {
        bench.iter(|| {
            let _guard = tinycd::no_grad();
            net.forward(&a, &b).unwrap()
        })
    });

    let mut net = TinyCd::<f32>::new(ModelConfig::default(), 0).unwrap();
    let mut state = OptimizerState::new(AdamWConfig::default(), net.params());
    c.bench_function("train step 8x64x64", |bench| {
        bench.iter(|| {
            net.params().zero_grad();
            let out = net.forward(&a, &b).unwrap();
            LossKind::Bce.apply(&out.prediction, &label).unwrap().backward().unwrap();
            state.step(net.params_mut(), 1e-3).unwrap();
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = conv, norm, model
}
criterion_main!(benches);
