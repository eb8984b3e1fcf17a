use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use grnlab::config::{Task, TrainConfig};
use grnlab::exec::Exec;
use grnlab::gradsuite;
use grnlab::heads::{DecodeOptions, Example, Vocabs};
use grnlab::synthetic;
use grnlab::train::{batch_gradients, build_model, prepare_examples};

fn modes() -> [(&'static str, Exec); 2] {
    [
        ("sequential", Exec::sequential()),
        ("parallel", Exec::parallel(None)),
    ]
}

fn config() -> TrainConfig {
    let mut cfg = TrainConfig::for_task(Task::Graph2Seq);
    cfg.embed_dim = 32;
    cfg.hidden_dim = 32;
    cfg.attention_dim = 32;
    cfg.label_dim = 8;
    cfg.char_dim = 0;
    cfg.steps = 4;
    cfg.dropout = 0.0;
    cfg.beam = 3;
    cfg.max_decode_len = 8;
    cfg
}

fn batch_gradient(c: &mut Criterion) {
    let cfg = config();
    let data = synthetic::label_sequence_graphs(32, 1);
    let vocabs = Vocabs::build(&cfg, &data).unwrap();
    let (model, store) = build_model(&cfg, &vocabs).unwrap();
    let examples = prepare_examples(&cfg, &data).unwrap();
    let batch: Vec<&Example> = examples.iter().collect();
    let seeds: Vec<u64> = (0..batch.len() as u64).collect();
    let mut group = c.benchmark_group("batch_gradients");
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| batch_gradients(&model, &store, &batch, &seeds, 0.0, &exec).unwrap())
        });
    }
    group.finish();
}

fn grad_check_coordinates(c: &mut Criterion) {
    let cases = gradsuite::cases(1).unwrap();
    let case = cases.iter().max_by_key(|c| c.params()).unwrap();
    let mut group = c.benchmark_group("grad_check");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::new(name, &case.name), |b| {
            b.iter(|| case.check(&exec).unwrap())
        });
    }
    group.finish();
}

fn decoding(c: &mut Criterion) {
    let cfg = config();
    let data = synthetic::label_sequence_graphs(16, 2);
    let vocabs = Vocabs::build(&cfg, &data).unwrap();
    let (model, store) = build_model(&cfg, &vocabs).unwrap();
    let examples = prepare_examples(&cfg, &data).unwrap();
    let opts = DecodeOptions::from_config(&cfg);
    let mut group = c.benchmark_group("beam_decode");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                exec.map(&examples, |ex| {
                    model
                        .predict(&store, ex, &Exec::sequential(), opts)
                        .unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradient, grad_check_coordinates, decoding);
criterion_main!(benches);
