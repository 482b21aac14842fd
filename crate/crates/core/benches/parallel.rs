//! Sequential versus data-parallel per-sample work. The sequential side runs
//! the same code inside a one-thread rayon pool, or through `par::map_seq`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tailnoise::numerics::{one_hot, Activation, Mlp, SeededRng};
use tailnoise::par;
use tailnoise::stage1::{batch_gradients, FeatureQueue, Stage1Config, Stage1Model};

fn pools() -> [(&'static str, rayon::ThreadPool); 2] {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    [
        (
            "sequential",
            rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap(),
        ),
        (
            "parallel",
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap(),
        ),
    ]
}

fn stage1_batch(c: &mut Criterion) {
    let cfg = Stage1Config::default();
    let (d, k) = (16, 20);
    let mut rng = SeededRng::new(1);
    let model = Stage1Model::init(&cfg, d, k, &mut rng).unwrap();
    let mut queue = FeatureQueue::new(cfg.queue_capacity).unwrap();
    for _ in 0..cfg.queue_capacity {
        let z: Vec<f64> = (0..cfg.embed_dim).map(|_| rng.normal()).collect();
        queue.push(&z).unwrap();
    }
    let mut group = c.benchmark_group("stage1_batch_gradients");
    group.sample_size(20);
    for batch in [64usize, 256] {
        let inputs: Vec<Vec<f64>> = (0..batch).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
        let views: Vec<(Vec<f64>, Vec<f64>)> = inputs
            .iter()
            .map(|x| {
                (
                    x.iter().map(|v| v + 0.1 * rng.normal()).collect(),
                    x.iter().map(|v| v + 0.1 * rng.normal()).collect(),
                )
            })
            .collect();
        let anchors: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let labels: Vec<usize> = (0..batch).map(|i| i % k).collect();
        for (name, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(name, batch), &batch, |b, _| {
                pool.install(|| b.iter(|| batch_gradients(&model, &anchors, &views, &labels, &queue, &cfg).unwrap()))
            });
        }
    }
    group.finish();
}

fn per_sample_backprop(c: &mut Criterion) {
    let mut rng = SeededRng::new(2);
    let net = Mlp::new(&[16, 64, 32, 20], Activation::Tanh, &mut rng).unwrap();
    let xs: Vec<Vec<f64>> = (0..512).map(|_| (0..16).map(|_| rng.normal()).collect()).collect();
    let grad = |x: &Vec<f64>| {
        let trace = net.forward_trace(x).unwrap();
        net.backward(&trace, &one_hot(3, 20)).unwrap().0
    };
    let mut group = c.benchmark_group("mlp_backprop_512");
    group.bench_function("map_seq", |b| b.iter(|| par::map_seq(&xs, grad)));
    group.bench_function("map", |b| b.iter(|| par::map(&xs, grad)));
    group.finish();
}

criterion_group!(benches, stage1_batch, per_sample_backprop);
criterion_main!(benches);
