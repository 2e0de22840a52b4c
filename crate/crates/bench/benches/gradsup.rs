use criterion::{criterion_group, criterion_main, Criterion};
use gradsup::data::{gen_spurious_ood, pair_index, SpuriousConfig};
use gradsup::evaluation::mean_average_precision;
use gradsup::gs::{all_terms, batch_gs_loss, GsBatch, GsConfig};
use gradsup::training::{ModelSpec, TrainConfig};
use gradsup::{Activation, Tape, Tensor};

fn spec() -> ModelSpec {
    ModelSpec { hidden: vec![16], activation: Activation::Tanh }
}

fn gs_step(c: &mut Criterion) {
    let data = gen_spurious_ood(&SpuriousConfig { seed: 1, ..Default::default() }).unwrap();
    let pairs = pair_index(&data.train);
    let config = GsConfig { lambda: 10.0, ..Default::default() };
    let terms = all_terms(&data.train, &pairs, &config).unwrap();
    let refs: Vec<_> = terms.iter().take(32).collect();
    let batch = GsBatch::from_terms(&data.train, &refs).unwrap();
    let model = spec().build(10, 1, 1).unwrap();

    c.bench_function("forward_batch_256", |b| {
        let idx: Vec<usize> = (0..256).collect();
        let x = data.train.feature_matrix(&idx).unwrap();
        b.iter(|| model.logits_batch(&x).unwrap())
    });

    // The output bias does not reach the input gradient, so only the weights are differentiated.
    c.bench_function("gs_loss_double_backprop_32_terms", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let mv = model.attach(&tape);
            let loss = batch_gs_loss(&mv, &batch, &config, true).unwrap();
            let grads = tape.grad(loss.value, &mv.params()[..3], false).unwrap();
            grads.iter().map(|g| g.value()).collect::<Vec<_>>()
        })
    });
}

fn training(c: &mut Criterion) {
    let data = gen_spurious_ood(&SpuriousConfig { n: 400, n_validation: 100, seed: 2, ..Default::default() }).unwrap();
    let pairs = pair_index(&data.train);
    let init = spec().build(10, 1, 2).unwrap();
    let config =
        TrainConfig { max_epochs: 2, gs: GsConfig { lambda: 10.0, ..Default::default() }, ..Default::default() };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("two_epochs_gs", |b| {
        b.iter(|| gradsup::train(&init, &data.train, &pairs, &data.validation, &config).unwrap())
    });
    group.finish();
}

fn map(c: &mut Criterion) {
    let (n, k) = (2000, 20);
    let scores: Vec<f64> = (0..n * k).map(|i| ((i * 7919) % 1009) as f64 / 1009.0).collect();
    let labels: Vec<f64> = (0..n * k).map(|i| f64::from(u8::from((i * 31) % 5 == 0))).collect();
    let scores = Tensor::new(n, k, scores).unwrap();
    let labels = Tensor::new(n, k, labels).unwrap();
    c.bench_function("map_2000x20", |b| b.iter(|| mean_average_precision(&scores, &labels).unwrap()));
}

criterion_group!(benches, gs_step, training, map);
criterion_main!(benches);
