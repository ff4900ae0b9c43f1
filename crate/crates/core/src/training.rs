//! Mini-batch training: cross-entropy with L2 decay, minimized by Adagrad.
//! The parameters with the best dev accuracy are kept.

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check_with, Fault, Tape, Var};
use crate::data::{make_batches, Batch, EncodedDoc, PAD};
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, Metrics};
use crate::par;
use crate::tensor::Tensor;

/// Lower bound applied to probabilities inside the log.
pub const PROB_FLOOR: f64 = 1e-12;
/// Adagrad denominator offset.
pub const ADAGRAD_EPS: f64 = 1e-6;

fn default_lr() -> f64 {
    0.01
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_batch_size() -> usize {
    32
}
fn default_shard_size() -> usize {
    16
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// L2 coefficient λ.
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Global gradient-norm clip; off when absent.
    #[serde(default)]
    pub gradient_clip_norm: Option<f64>,
    /// Bucket documents of similar length into the same batch.
    #[serde(default = "default_true")]
    pub sort_bucket: bool,
    /// Documents per gradient shard. Shards are the unit of parallel work and
    /// are summed in order, so this (not the thread count) fixes the result.
    #[serde(default = "default_shard_size")]
    pub shard_size: usize,
    /// Fill the `seconds` column with wall time. Off keeps logs byte-stable.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            weight_decay: default_weight_decay(),
            batch_size: default_batch_size(),
            max_epochs: 0,
            seed: 0,
            gradient_clip_norm: None,
            sort_bucket: true,
            shard_size: default_shard_size(),
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.shard_size == 0 {
            return Err(Error::config("shard_size must be at least 1"));
        }
        if let Some(c) = self.gradient_clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::config("gradient_clip_norm must be positive"));
            }
        }
        Ok(())
    }

    fn epoch_seed(&self, epoch: usize) -> u64 {
        self.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

fn check_gold(gold: &[usize], classes: usize) -> Result<()> {
    match gold.iter().find(|&&g| g >= classes) {
        Some(g) => Err(Error::contract(format!("gold class {g} outside [0, {classes})"))),
        None => Ok(()),
    }
}

/// `−(1/m) Σ ln p_{y_i} + (λ/2) Σ θ²`, with probabilities floored at
/// [`PROB_FLOOR`].
pub fn objective(probs: &Tensor, gold: &[usize], params: &[&Tensor], weight_decay: f64) -> Result<f64> {
    if gold.len() != probs.rows() || gold.is_empty() {
        return Err(Error::dim("objective", probs.shape(), (gold.len(), probs.cols())));
    }
    check_gold(gold, probs.cols())?;
    let nll: f64 = gold
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.get(i, y).max(PROB_FLOOR).ln())
        .sum::<f64>()
        / gold.len() as f64;
    let l2: f64 = params.iter().map(|p| p.sum_squares()).sum();
    Ok(nll + 0.5 * weight_decay * l2)
}

/// Tape form of [`objective`]; `params` are the regularized leaves.
pub fn objective_on_tape(tape: &mut Tape, probs: Var, gold: &[usize], params: &[Var], weight_decay: f64) -> Result<Var> {
    let mut loss = tape.nll_sum(probs, gold, PROB_FLOOR, gold.len() as f64)?;
    if weight_decay != 0.0 {
        for &p in params {
            let sq = tape.sum_squares(p);
            let term = tape.scale(sq, 0.5 * weight_decay);
            loss = tape.add(loss, term)?;
        }
    }
    Ok(loss)
}

/// Builds the full training objective for one batch on `tape`: all dense
/// parameters plus the touched embedding rows are regularized. Returns the
/// loss and the model as bound.
pub fn batch_objective(
    tape: &mut Tape,
    model: &Model,
    batch: &Batch,
    weight_decay: f64,
) -> Result<(Var, crate::encoder::BoundModel)> {
    let (bound, probs) = model.forward_batch(tape, batch)?;
    let mut regularized = bound.dense_leaves();
    regularized.push(bound.embedding);
    let loss = objective_on_tape(tape, probs, &batch.labels, &regularized, weight_decay)?;
    Ok((loss, bound))
}

/// Largest per-entry relative error between tape gradients and central
/// differences of the full batch objective, over the touched embedding rows
/// and every dense tensor.
pub fn model_grad_check(
    model: &Model,
    batch: &Batch,
    weight_decay: f64,
    eps: f64,
    fault: Option<Fault>,
) -> Result<f64> {
    let mut probe = Tape::new();
    let rows = model.bind(&mut probe, batch).rows;
    let mut sub = Tensor::zeros(rows.len(), model.config.input_dim);
    for (r, &id) in rows.iter().enumerate() {
        sub.row_mut(r).copy_from_slice(model.embeddings.table.row(id));
    }
    let mut params = vec![sub];
    params.extend(model.dense_named().into_iter().map(|(_, t)| t.clone()));
    let objective = |tape: &mut Tape, leaves: &[Var]| {
        let bound = model.bind_leaves(leaves[0], rows.clone(), &leaves[1..])?;
        let probs = bound.probabilities(tape, &model.config, batch)?;
        objective_on_tape(tape, probs, &batch.labels, leaves, weight_decay)
    };
    grad_check_with(objective, &params, eps, fault)
}

/// Per-parameter Adagrad accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct AdagradState {
    pub dense: Vec<Tensor>,
    pub embedding: Tensor,
}

impl AdagradState {
    pub fn new(model: &Model) -> Self {
        AdagradState {
            dense: model.dense_named().iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect(),
            embedding: Tensor::zeros(model.embeddings.table.rows(), model.embeddings.table.cols()),
        }
    }
}

/// `acc += g⊙g; θ −= lr·g/(√acc + ε)` elementwise over matching slices.
pub fn adagrad_step(theta: &mut [f64], grad: &[f64], acc: &mut [f64], lr: f64) {
    for ((t, &g), a) in theta.iter_mut().zip(grad).zip(acc.iter_mut()) {
        *a += g * g;
        *t -= lr * g / (a.sqrt() + ADAGRAD_EPS);
    }
}

/// Tensor form of [`adagrad_step`].
pub fn adagrad_update(theta: &mut Tensor, grad: &Tensor, acc: &mut Tensor, lr: f64) -> Result<()> {
    if theta.shape() != grad.shape() || acc.shape() != grad.shape() {
        return Err(Error::dim("adagrad_update", theta.shape(), grad.shape()));
    }
    adagrad_step(theta.data_mut(), grad.data(), acc.data_mut(), lr);
    Ok(())
}

/// Objective value and gradients of one batch.
#[derive(Clone, Debug)]
pub struct BatchGradient {
    pub loss: f64,
    /// In [`Model::dense_named`] order.
    pub dense: Vec<Tensor>,
    /// Sparse embedding gradient: vocabulary id → row gradient, PAD excluded.
    pub embedding: BTreeMap<usize, Vec<f64>>,
}

impl BatchGradient {
    pub fn norm(&self) -> f64 {
        let dense: f64 = self.dense.iter().map(Tensor::sum_squares).sum();
        let emb: f64 = self.embedding.values().flatten().map(|v| v * v).sum();
        (dense + emb).sqrt()
    }

    fn scale(&mut self, s: f64) {
        for t in &mut self.dense {
            t.scale(s);
        }
        for row in self.embedding.values_mut() {
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
}

struct ShardGradient {
    nll: f64,
    dense: Vec<Tensor>,
    rows: Vec<usize>,
    embedding: Tensor,
}

fn shard_gradient(model: &Model, shard: &Batch, denom: f64) -> Result<ShardGradient> {
    let mut tape = Tape::new();
    let (bound, probs) = model.forward_batch(&mut tape, shard)?;
    let loss = tape.nll_sum(probs, &shard.labels, PROB_FLOOR, denom)?;
    let nll = tape.value(loss).get(0, 0);
    let mut grads = tape.backward(loss)?;
    let dense = bound.dense_leaves().into_iter().map(|v| grads.take(v)).collect();
    Ok(ShardGradient { nll, dense, embedding: grads.take(bound.embedding), rows: bound.rows })
}

/// Gradient of the full objective for `batch`. The cross-entropy part is
/// computed per shard of `shard_size` documents (in parallel when enabled)
/// and summed in shard order; the L2 part is added analytically.
pub fn batch_gradient(model: &Model, batch: &Batch, weight_decay: f64, shard_size: usize) -> Result<BatchGradient> {
    check_gold(&batch.labels, model.config.classes)?;
    let bounds: Vec<(usize, usize)> = (0..batch.len())
        .step_by(shard_size.max(1))
        .map(|s| (s, (s + shard_size).min(batch.len())))
        .collect();
    let denom = batch.len() as f64;
    let shards = par::map_indexed(&bounds, |&(from, to)| shard_gradient(model, &batch.split(from, to), denom));

    let dense_params = model.dense_named();
    let mut dense: Vec<Tensor> = dense_params.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
    let mut embedding: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut loss = 0.0;
    for shard in shards {
        let shard = shard?;
        loss += shard.nll;
        for (acc, g) in dense.iter_mut().zip(&shard.dense) {
            acc.add_assign(g);
        }
        for (r, &id) in shard.rows.iter().enumerate() {
            if id == PAD {
                continue;
            }
            let row = embedding.entry(id).or_insert_with(|| vec![0.0; shard.embedding.cols()]);
            for (a, g) in row.iter_mut().zip(shard.embedding.row(r)) {
                *a += g;
            }
        }
    }
    if weight_decay != 0.0 {
        let mut l2 = 0.0;
        for (g, (_, t)) in dense.iter_mut().zip(&dense_params) {
            l2 += t.sum_squares();
            g.axpy(weight_decay, t);
        }
        for (&id, row) in embedding.iter_mut() {
            let theta = model.embeddings.table.row(id);
            l2 += theta.iter().map(|v| v * v).sum::<f64>();
            for (g, t) in row.iter_mut().zip(theta) {
                *g += weight_decay * t;
            }
        }
        loss += 0.5 * weight_decay * l2;
    }
    Ok(BatchGradient { loss, dense, embedding })
}

/// Applies one optimizer step. Only embedding rows present in the gradient
/// move; PAD never does.
pub fn apply_gradient(model: &mut Model, grad: &BatchGradient, state: &mut AdagradState, lr: f64) -> Result<()> {
    for (((_, theta), g), acc) in model.dense_named_mut().into_iter().zip(&grad.dense).zip(&mut state.dense) {
        adagrad_update(theta, g, acc, lr)?;
    }
    if model.embeddings.trainable {
        for (&id, g) in &grad.embedding {
            if id == PAD {
                continue;
            }
            adagrad_step(model.embeddings.table.row_mut(id), g, state.embedding.row_mut(id), lr);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub documents: usize,
}

/// One pass over `batches` in the given order.
pub fn train_epoch(model: &mut Model, batches: &[Batch], cfg: &TrainConfig, state: &mut AdagradState) -> Result<EpochStats> {
    if batches.is_empty() {
        return Err(Error::contract("no batches to train on"));
    }
    let mut total = 0.0;
    let mut docs = 0;
    for (i, batch) in batches.iter().enumerate() {
        let mut grad = batch_gradient(model, batch, cfg.weight_decay, cfg.shard_size)?;
        if !grad.loss.is_finite() {
            return Err(Error::NonFiniteLoss { batch: i });
        }
        if let Some(max_norm) = cfg.gradient_clip_norm {
            let n = grad.norm();
            if n > max_norm {
                grad.scale(max_norm / n);
            }
        }
        apply_gradient(model, &grad, state, cfg.learning_rate)?;
        total += grad.loss * batch.len() as f64;
        docs += batch.len();
    }
    Ok(EpochStats { mean_loss: total / docs as f64, documents: docs })
}

/// Mean objective over `docs` at the current parameters.
pub fn mean_loss(model: &Model, docs: &[EncodedDoc], cfg: &TrainConfig) -> Result<f64> {
    let batches = make_batches(docs, cfg.batch_size, cfg.seed, false)?;
    let mut total = 0.0;
    for b in &batches {
        let g = batch_loss(model, b, cfg)?;
        total += g * b.len() as f64;
    }
    Ok(total / docs.len().max(1) as f64)
}

fn batch_loss(model: &Model, batch: &Batch, cfg: &TrainConfig) -> Result<f64> {
    let bounds: Vec<(usize, usize)> = (0..batch.len())
        .step_by(cfg.shard_size)
        .map(|s| (s, (s + cfg.shard_size).min(batch.len())))
        .collect();
    let probs = par::map_indexed(&bounds, |&(f, t)| model.predict_batch(&batch.split(f, t)));
    let mut nll = 0.0;
    for (p, &(f, t)) in probs.into_iter().zip(&bounds) {
        let p = p?;
        for (i, &y) in batch.labels[f..t].iter().enumerate() {
            nll -= p.get(i, y).max(PROB_FLOOR).ln();
        }
    }
    let mut l2: f64 = model.dense_named().iter().map(|(_, t)| t.sum_squares()).sum();
    let mut seen: Vec<usize> = batch.ids.iter().flatten().copied().filter(|&i| i != PAD).collect();
    seen.sort_unstable();
    seen.dedup();
    l2 += seen.iter().map(|&i| model.embeddings.table.row(i).iter().map(|v| v * v).sum::<f64>()).sum::<f64>();
    Ok(nll / batch.len() as f64 + 0.5 * cfg.weight_decay * l2)
}

/// One line of the per-epoch log. Epoch 0 holds the initial parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_acc: f64,
    pub dev_mse: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_model: Model,
}

impl TrainReport {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }
}

/// Trains for `cfg.max_epochs`, evaluating the dev set after each epoch and
/// keeping the parameters with the highest dev accuracy (earliest on ties).
/// `on_epoch` sees each record as soon as it is produced.
pub fn fit(
    model: Model,
    train: &[EncodedDoc],
    dev: &[EncodedDoc],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    fit_until(model, train, dev, cfg, |rec| {
        on_epoch(rec);
        ControlFlow::Continue(())
    })
}

/// As [`fit`], stopping after any epoch for which `on_epoch` breaks.
pub fn fit_until(
    mut model: Model,
    train: &[EncodedDoc],
    dev: &[EncodedDoc],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::contract("train and dev sets must be non-empty"));
    }
    let mut state = AdagradState::new(&model);
    let clock = Instant::now();
    let elapsed = |clock: &Instant| if cfg.record_wall_time { clock.elapsed().as_secs_f64() } else { 0.0 };

    let Metrics { accuracy, mse, .. } = evaluate(&model, dev, cfg.batch_size)?;
    let initial = EpochRecord {
        epoch: 0,
        train_loss: mean_loss(&model, train, cfg)?,
        dev_acc: accuracy,
        dev_mse: mse,
        seconds: elapsed(&clock),
    };
    let mut stop = on_epoch(&initial).is_break();
    let mut epochs = vec![initial];
    let mut best_epoch = 0;
    let mut best_model = model.clone();

    for epoch in 1..=cfg.max_epochs {
        if stop {
            break;
        }
        let batches = make_batches(train, cfg.batch_size, cfg.epoch_seed(epoch), cfg.sort_bucket)?;
        let stats = train_epoch(&mut model, &batches, cfg, &mut state)?;
        let m = evaluate(&model, dev, cfg.batch_size)?;
        let rec = EpochRecord {
            epoch,
            train_loss: stats.mean_loss,
            dev_acc: m.accuracy,
            dev_mse: m.mse,
            seconds: elapsed(&clock),
        };
        stop = on_epoch(&rec).is_break();
        if rec.dev_acc > epochs[best_epoch].dev_acc {
            best_epoch = epochs.len();
            best_model = model.clone();
        }
        epochs.push(rec);
    }
    Ok(TrainReport { epochs, best_epoch, best_model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;
    use crate::encoder::EncoderConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn objective_fixtures() {
        let uniform = Tensor::filled(1, 5, 0.2);
        assert!((objective(&uniform, &[3], &[], 0.0).unwrap() - 5f64.ln()).abs() < 1e-12);
        let onehot = Tensor::row_vector(&[0.0, 1.0]);
        assert_eq!(objective(&onehot, &[1], &[], 0.0).unwrap(), 0.0);
        let floored = objective(&onehot, &[0], &[], 0.0).unwrap();
        assert!((floored - -(PROB_FLOOR.ln())).abs() < 1e-9);
        let theta = Tensor::row_vector(&[3.0]);
        assert_eq!(objective(&onehot, &[1], &[&theta], 2.0).unwrap(), 9.0);
        assert!(matches!(objective(&onehot, &[2], &[], 0.0), Err(Error::Contract(_))));
    }

    #[test]
    fn l2_term_is_exact_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Tensor::from_rows(&[&[0.1, 0.6, 0.3], &[0.5, 0.25, 0.25]]);
        let a = Tensor::uniform(3, 4, 1.0, &mut rng);
        let b = Tensor::uniform(2, 2, 1.0, &mut rng);
        let lam = 1e-3;
        let with = objective(&p, &[1, 0], &[&a, &b], lam).unwrap();
        let without = objective(&p, &[1, 0], &[&a, &b], 0.0).unwrap();
        let want = 0.5 * lam * (a.sum_squares() + b.sum_squares());
        assert!((with - without - want).abs() < 1e-15);
    }

    #[test]
    fn adagrad_fixtures() {
        let mut theta = Tensor::zeros(1, 1);
        let mut acc = Tensor::zeros(1, 1);
        adagrad_update(&mut theta, &Tensor::filled(1, 1, 2.0), &mut acc, 0.01).unwrap();
        assert_eq!(acc.data(), &[4.0]);
        assert!((theta.get(0, 0) - -0.02 / (2.0 + ADAGRAD_EPS)).abs() < 1e-18);
        assert!((theta.get(0, 0) + 0.009_999_5).abs() < 1e-6);

        let before = theta.clone();
        adagrad_update(&mut theta, &Tensor::zeros(1, 1), &mut acc, 0.01).unwrap();
        assert_eq!(theta, before);

        let mut theta = Tensor::zeros(1, 1);
        let mut acc = Tensor::zeros(1, 1);
        let g = Tensor::filled(1, 1, 1.0);
        let mut prev = 0.0;
        for t in 1..=16 {
            adagrad_update(&mut theta, &g, &mut acc, 1.0).unwrap();
            let step = prev - theta.get(0, 0);
            assert!((step - 1.0 / ((t as f64).sqrt() + ADAGRAD_EPS)).abs() < 1e-12);
            prev = theta.get(0, 0);
        }
    }

    fn toy() -> (Model, Vec<EncodedDoc>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = EncoderConfig {
            cell_kind: CellKind::Clstm,
            bidirectional: true,
            input_dim: 4,
            hidden: 6,
            groups: 3,
            classes: 3,
            use_bias: true,
        };
        let model = Model::new(cfg, 12, &mut rng).unwrap();
        let docs = (0..7)
            .map(|i| EncodedDoc { ids: (0..(2 + i % 4)).map(|t| 2 + (i * 3 + t) % 10).collect(), label: i % 3 })
            .collect();
        (model, docs)
    }

    #[test]
    fn sharded_gradient_matches_single_tape() {
        let (model, docs) = toy();
        let batch = Batch::from_docs(&docs, &(0..docs.len()).collect::<Vec<_>>()).unwrap();
        let lam = 1e-2;
        let mut tape = Tape::new();
        let (loss, bound) = batch_objective(&mut tape, &model, &batch, lam).unwrap();
        let grads = tape.backward(loss).unwrap();
        for shard in [1, 3, 7] {
            let g = batch_gradient(&model, &batch, lam, shard).unwrap();
            assert!((g.loss - tape.value(loss).get(0, 0)).abs() < 1e-12);
            for (a, v) in g.dense.iter().zip(bound.dense_leaves()) {
                assert!(a.max_abs_diff(&grads.get(v)) < 1e-12);
            }
            let emb = grads.get(bound.embedding);
            for (r, &id) in bound.rows.iter().enumerate() {
                if id == PAD {
                    assert!(!g.embedding.contains_key(&PAD));
                    continue;
                }
                let row = &g.embedding[&id];
                for (x, y) in row.iter().zip(emb.row(r)) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let (model, docs) = toy();
        let batches = make_batches(&docs, 7, 1, false).unwrap();
        let mut m = model.clone();
        let mut state = AdagradState::new(&m);
        // configs reject lr = 0, the epoch itself does not
        let cfg = TrainConfig { learning_rate: 0.0, ..Default::default() };
        let stats = train_epoch(&mut m, &batches, &cfg, &mut state).unwrap();
        assert!(stats.mean_loss.is_finite());
        assert_eq!(m, model);
    }

    #[test]
    fn untouched_embedding_rows_stay_put() {
        let (model, docs) = toy();
        let batch = Batch::from_docs(&docs, &[0]).unwrap();
        let mut m = model.clone();
        let mut state = AdagradState::new(&m);
        let cfg = TrainConfig { weight_decay: 1e-3, ..Default::default() };
        train_epoch(&mut m, std::slice::from_ref(&batch), &cfg, &mut state).unwrap();
        for id in 0..model.embeddings.vocab_size() {
            let touched = batch.ids[0].contains(&id) && id != PAD;
            let same = m.embeddings.table.row(id) == model.embeddings.table.row(id);
            assert_eq!(same, !touched, "row {id}");
        }
        assert!(m.embeddings.table.row(PAD).iter().all(|&v| v == 0.0));
        assert!(state.embedding.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn loss_decreases_on_frozen_batch() {
        let (mut model, docs) = toy();
        let batches = make_batches(&docs, 7, 1, false).unwrap();
        let cfg = TrainConfig { weight_decay: 0.0, ..Default::default() };
        let mut state = AdagradState::new(&model);
        let mut prev = f64::INFINITY;
        for _ in 0..5 {
            let l = batch_gradient(&model, &batches[0], 0.0, 16).unwrap().loss;
            assert!(l < prev);
            prev = l;
            train_epoch(&mut model, &batches, &cfg, &mut state).unwrap();
        }
    }

    #[test]
    fn clipping_bounds_update_norm() {
        let (model, docs) = toy();
        let batch = Batch::from_docs(&docs, &[0, 1, 2]).unwrap();
        let g = batch_gradient(&model, &batch, 0.0, 16).unwrap();
        assert!(g.norm() > 1e-3);
        let mut clipped = g.clone();
        clipped.scale(1e-3 / g.norm());
        assert!((clipped.norm() - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { weight_decay: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        let parsed: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"learning_rate": 0.1, "bogus": 1}"#);
        assert!(parsed.is_err());
    }
}
