use std::hint::black_box;

use cifst_core::cif::{
    compute_weights, inference_rescale, integrate_and_fire_final, AcousticStates,
};
use cifst_core::data::{generate_corpus, SyntheticSpec};
use cifst_core::metrics::{average_lagging, differentiable_average_lagging, DelayVector};
use cifst_core::model::{Model, ModelConfig, Task};
use cifst_core::policy::{run_policy, PolicyConfig};
use cifst_core::Tensor;
use criterion::{criterion_group, criterion_main, Criterion};

fn wave(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| ((i * 7919) % 1013) as f64 / 1013.0 - 0.5)
        .collect()
}

fn bench_cif(c: &mut Criterion) {
    let (t, d) = (500, 257);
    let states = AcousticStates::new(Tensor::new(vec![t, d], wave(t * d)), 40.0).unwrap();
    c.bench_function("cif/integrate_500x257", |b| {
        b.iter(|| {
            let w = inference_rescale(&compute_weights(black_box(&states)));
            integrate_and_fire_final(&states, &w).unwrap()
        })
    });
}

fn bench_latency(c: &mut Criterion) {
    let vectors: Vec<DelayVector> = (0..1000)
        .map(|i| {
            let n = 5 + i % 20;
            let delays = (1..=n).map(|j| (j * 280).min(6000) as f64).collect();
            DelayVector::new(delays, 6000.0, n)
        })
        .collect();
    c.bench_function("metrics/al_dal_1000_logs", |b| {
        b.iter(|| {
            vectors
                .iter()
                .map(|v| average_lagging(v).unwrap() + differentiable_average_lagging(v).unwrap())
                .sum::<f64>()
        })
    });
}

fn bench_model(c: &mut Criterion) {
    let corpus = generate_corpus(&SyntheticSpec {
        n_train: 0,
        n_dev: 0,
        n_test: 4,
        ..SyntheticSpec::default()
    });
    let model = Model::new(ModelConfig::default()).unwrap();
    let utt = &corpus.test[0];
    c.bench_function("model/greedy_translate", |b| {
        b.iter(|| model.translate(black_box(&utt.frames), Task::St, 1))
    });
    c.bench_function("model/beam4_translate", |b| {
        b.iter(|| model.translate(black_box(&utt.frames), Task::St, 4))
    });
    let cfg = PolicyConfig::adaptive(3, 280);
    c.bench_function("policy/adaptive_k3_280ms", |b| {
        b.iter(|| run_policy(&model, black_box(&utt.frames), &cfg))
    });
}

criterion_group!(benches, bench_cif, bench_latency, bench_model);
criterion_main!(benches);
