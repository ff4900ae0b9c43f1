//! Run once per build and compare the saved baselines:
//!
//! ```text
//! cargo bench --bench parallel_vs_sequential -- --save-baseline parallel
//! cargo bench --bench parallel_vs_sequential --no-default-features -- --baseline parallel
//! ```

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use clstm::cells::CellKind;
use clstm::data::{build_vocab, synth_needle, Batch, EncodedDoc};
use clstm::encoder::{EncoderConfig, Model};
use clstm::evaluation::predict;
use clstm::par;
use clstm::reference::reference_grad_check;
use clstm::training::batch_gradient;

fn corpus(docs: usize, length: usize) -> (Vec<EncodedDoc>, usize) {
    let (train, _) = synth_needle(docs, length, 3, 200, 1).unwrap();
    let vocab = build_vocab(&train, 1).unwrap();
    (vocab.encode_all(&train), vocab.len())
}

fn model(vocab: usize, hidden: usize, groups: usize, input_dim: usize) -> Model {
    let cfg = EncoderConfig {
        cell_kind: CellKind::Clstm,
        bidirectional: true,
        input_dim,
        hidden,
        groups,
        classes: 3,
        use_bias: true,
    };
    Model::new(cfg, vocab, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
}

fn benches(c: &mut Criterion) {
    eprintln!("backend: {}", if par::is_parallel() { "rayon" } else { "sequential" });

    let (docs, vocab) = corpus(160, 60);
    let m = model(vocab, 30, 3, 20);
    let batch = Batch::from_docs(&docs[..64], &(0..64).collect::<Vec<_>>()).unwrap();
    let mut g = c.benchmark_group("batch_gradient");
    for shard in [4, 16, 64] {
        g.bench_with_input(BenchmarkId::from_parameter(shard), &shard, |b, &shard| {
            b.iter(|| batch_gradient(black_box(&m), &batch, 1e-4, shard).unwrap())
        });
    }
    g.finish();

    c.bench_function("predict", |b| b.iter(|| predict(black_box(&m), &docs, 32).unwrap()));

    let small = model(vocab, 6, 3, 3);
    let short: Vec<EncodedDoc> = docs[..2].iter().map(|d| EncodedDoc { ids: d.ids[..4].to_vec(), label: d.label }).collect();
    let short = Batch::from_docs(&short, &[0, 1]).unwrap();
    let mut g = c.benchmark_group("grad_check");
    g.sample_size(10);
    g.bench_function("clstm_k3", |b| b.iter(|| reference_grad_check(black_box(&small), &short, 1e-4, 1e-5, None).unwrap()));
    g.finish();
}

criterion_group!(parallel_vs_sequential, benches);
criterion_main!(parallel_vs_sequential);
