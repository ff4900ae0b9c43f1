use clstm::cells::{CellKind, CellParams, CifgParams, Gate};
use clstm::data::{build_vocab, synth_needle};
use clstm::encoder::{EncoderConfig, Model};
use clstm::evaluation::{group_sweep, seeded_model, SweepSetup};
use clstm::training::{fit, TrainConfig};

fn negated(g: &Gate) -> Gate {
    Gate { w: g.w.map(|v| -v), u: g.u.map(|v| -v), b: g.b.as_ref().map(|b| b.map(|v| -v)) }
}

/// The CIFG model a single-group CLSTM maps onto: forget weights are the
/// negated rate weights, everything else is shared.
fn as_cifg(model: &Model) -> Model {
    let flip = |p: &CellParams| match p {
        CellParams::Clstm(c) => CellParams::Cifg(CifgParams {
            forget: negated(&c.rate),
            output: c.output.clone(),
            candidate: c.candidate.clone(),
        }),
        other => panic!("expected a CLSTM cell, got {}", other.kind()),
    };
    Model {
        config: EncoderConfig { cell_kind: CellKind::Cifg, ..model.config.clone() },
        embeddings: model.embeddings.clone(),
        forward: flip(&model.forward),
        backward: model.backward.as_ref().map(flip),
        classifier: model.classifier.clone(),
    }
}

#[test]
fn single_group_entry_matches_cifg_run() {
    let (train, dev) = synth_needle(150, 20, 3, 25, 4).unwrap();
    let vocab = build_vocab(&train, 1).unwrap();
    let (train, dev) = (vocab.encode_all(&train), vocab.encode_all(&dev));
    let base = EncoderConfig {
        cell_kind: CellKind::Clstm,
        bidirectional: true,
        input_dim: 5,
        hidden: 6,
        groups: 1,
        classes: 3,
        use_bias: true,
    };
    let train_cfg = TrainConfig { learning_rate: 0.05, batch_size: 16, max_epochs: 4, seed: 9, ..TrainConfig::default() };
    let setup = SweepSetup {
        base: base.clone(),
        train_cfg: train_cfg.clone(),
        vocab_size: vocab.len(),
        embeddings: None,
        train: &train,
        dev: &dev,
    };
    let report = group_sweep(&setup, &[1, 2, 4, 3]).unwrap();
    assert_eq!(report.entries.iter().map(|e| e.k).collect::<Vec<_>>(), [1, 2, 3]);
    assert_eq!(report.skipped.len(), 1);

    let start = seeded_model(base, vocab.len(), None, train_cfg.seed).unwrap();
    let cifg = fit(as_cifg(&start), &train, &dev, &train_cfg, |_| {}).unwrap();
    let clstm = fit(start, &train, &dev, &train_cfg, |_| {}).unwrap();
    assert_eq!(report.entries[0].best_dev_acc, clstm.best().dev_acc);
    assert_eq!(report.entries[0].best_dev_acc, cifg.best().dev_acc);
    for (a, b) in cifg.epochs.iter().zip(&clstm.epochs) {
        assert_eq!(a.dev_acc, b.dev_acc);
        assert!((a.train_loss - b.train_loss).abs() < 1e-9);
    }
}
