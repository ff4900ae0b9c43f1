//! Accuracy / MSE metrics and the analysis harnesses: convergence curves,
//! memory-group sweeps and length-decile sensitivity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::CellKind;
use crate::data::{Batch, EmbeddingMatrix, EncodedDoc};
use crate::encoder::{EncoderConfig, Model};
use crate::error::{Error, Result};
use crate::par;
use crate::training::{fit, EpochRecord, TrainConfig, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// On the 1-based rating scale.
    pub mse: f64,
    pub n: usize,
}

fn check_pairs(preds: &[usize], gold: &[usize]) -> Result<()> {
    if preds.len() != gold.len() {
        return Err(Error::contract(format!("{} predictions for {} gold labels", preds.len(), gold.len())));
    }
    if preds.is_empty() {
        return Err(Error::contract("metrics need at least one sample"));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], gold: &[usize]) -> Result<f64> {
    check_pairs(preds, gold)?;
    let correct = preds.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Mean squared rating difference. Ratings are `class + 1`, and a shift
/// cancels in the difference, so class indices can be passed directly.
pub fn mse(preds: &[usize], gold: &[usize]) -> Result<f64> {
    check_pairs(preds, gold)?;
    let total: f64 = preds
        .iter()
        .zip(gold)
        .map(|(&p, &g)| {
            let d = p as f64 - g as f64;
            d * d
        })
        .sum();
    Ok(total / preds.len() as f64)
}

pub fn metrics(preds: &[usize], gold: &[usize]) -> Result<Metrics> {
    Ok(Metrics { accuracy: accuracy(preds, gold)?, mse: mse(preds, gold)?, n: preds.len() })
}

/// Argmax class per document (lower index on ties), in input order.
pub fn predict(model: &Model, docs: &[EncodedDoc], batch_size: usize) -> Result<Vec<usize>> {
    let chunks: Vec<Vec<usize>> = (0..docs.len())
        .collect::<Vec<_>>()
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect();
    let preds = par::map_indexed(&chunks, |idx| {
        let batch = Batch::from_docs(docs, idx)?;
        Ok::<_, Error>(model.predict_batch(&batch)?.argmax_rows())
    });
    let mut out = Vec::with_capacity(docs.len());
    for p in preds {
        out.extend(p?);
    }
    Ok(out)
}

pub fn evaluate(model: &Model, docs: &[EncodedDoc], batch_size: usize) -> Result<Metrics> {
    let preds = predict(model, docs, batch_size)?;
    let gold: Vec<usize> = docs.iter().map(|d| d.label).collect();
    metrics(&preds, &gold)
}

pub const CONVERGENCE_HEADER: [&str; 5] = ["epoch", "train_loss", "dev_acc", "dev_mse", "seconds"];

/// Per-epoch CSV with header `epoch,train_loss,dev_acc,dev_mse,seconds`.
pub fn convergence_log(report: &TrainReport) -> Result<String> {
    write_epochs(&report.epochs)
}

pub fn write_epochs(epochs: &[EpochRecord]) -> Result<String> {
    let mut w = writer();
    w.write_record(CONVERGENCE_HEADER).map_err(csv_err)?;
    for e in epochs {
        w.serialize((e.epoch, e.train_loss, e.dev_acc, e.dev_mse, e.seconds)).map_err(csv_err)?;
    }
    finish(w)
}

pub fn parse_convergence_log(text: &str) -> Result<Vec<EpochRecord>> {
    parse_csv(text, &CONVERGENCE_HEADER)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecileBucket {
    pub decile: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub n: usize,
    pub acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecileReport {
    pub buckets: Vec<DecileBucket>,
}

pub const DECILE_HEADER: [&str; 5] = ["decile", "min_len", "max_len", "n", "acc"];

impl DecileReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = writer();
        w.write_record(DECILE_HEADER).map_err(csv_err)?;
        for b in &self.buckets {
            w.serialize(b).map_err(csv_err)?;
        }
        finish(w)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        Ok(DecileReport { buckets: parse_csv(text, &DECILE_HEADER)? })
    }

    pub fn total(&self) -> usize {
        self.buckets.iter().map(|b| b.n).sum()
    }
}

pub const DECILES: usize = 10;

/// Bucket sizes for `n` items split into `parts` contiguous runs; the first
/// `n mod parts` runs hold one extra item.
pub fn bucket_sizes(n: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|i| n / parts + usize::from(i < n % parts)).collect()
}

/// Accuracy per length decile given precomputed predictions.
pub fn decile_report_from_predictions(docs: &[EncodedDoc], preds: &[usize]) -> Result<DecileReport> {
    check_pairs(preds, &vec![0; docs.len()])?;
    if docs.len() < DECILES {
        return Err(Error::contract(format!("length deciles need at least {DECILES} documents, got {}", docs.len())));
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.sort_by_key(|&i| (docs[i].ids.len(), i));
    let mut start = 0;
    let mut buckets = Vec::with_capacity(DECILES);
    for (d, size) in bucket_sizes(docs.len(), DECILES).into_iter().enumerate() {
        let idx = &order[start..start + size];
        start += size;
        let correct = idx.iter().filter(|&&i| preds[i] == docs[i].label).count();
        buckets.push(DecileBucket {
            decile: d + 1,
            min_len: docs[idx[0]].ids.len(),
            max_len: docs[idx[size - 1]].ids.len(),
            n: size,
            acc: correct as f64 / size as f64,
        });
    }
    Ok(DecileReport { buckets })
}

pub fn length_decile_report(model: &Model, docs: &[EncodedDoc], batch_size: usize) -> Result<DecileReport> {
    if docs.len() < DECILES {
        return Err(Error::contract(format!("length deciles need at least {DECILES} documents, got {}", docs.len())));
    }
    let preds = predict(model, docs, batch_size)?;
    decile_report_from_predictions(docs, &preds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub k: usize,
    pub best_dev_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    /// Group counts left out, with the reason.
    pub skipped: Vec<(usize, String)>,
}

pub const SWEEP_HEADER: [&str; 2] = ["k", "best_dev_acc"];

impl SweepReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = writer();
        w.write_record(SWEEP_HEADER).map_err(csv_err)?;
        for e in &self.entries {
            w.serialize(e).map_err(csv_err)?;
        }
        finish(w)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        Ok(SweepReport { entries: parse_csv(text, &SWEEP_HEADER)?, skipped: Vec::new() })
    }
}

/// What a sweep needs besides the group counts.
#[derive(Clone, Debug)]
pub struct SweepSetup<'a> {
    /// Cell kind is forced to CLSTM; `groups` is replaced per run.
    pub base: EncoderConfig,
    pub train_cfg: TrainConfig,
    pub vocab_size: usize,
    /// Shared starting embeddings; random ones are drawn per run when absent.
    pub embeddings: Option<&'a EmbeddingMatrix>,
    pub train: &'a [EncodedDoc],
    pub dev: &'a [EncodedDoc],
}

/// Builds the initial model every run of a sweep starts from.
pub fn seeded_model(
    cfg: EncoderConfig,
    vocab_size: usize,
    embeddings: Option<&EmbeddingMatrix>,
    seed: u64,
) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match embeddings {
        Some(e) => Model::with_embeddings(cfg, e.clone(), &mut rng),
        None => Model::new(cfg, vocab_size, &mut rng),
    }
}

/// One seeded `fit` per group count with the same budget; group counts that
/// do not divide H are skipped and reported.
pub fn group_sweep(setup: &SweepSetup<'_>, ks: &[usize]) -> Result<SweepReport> {
    let mut runnable = Vec::new();
    let mut skipped = Vec::new();
    for &k in ks {
        if k == 0 || !setup.base.hidden.is_multiple_of(k) {
            skipped.push((k, format!("hidden size {} is not divisible by {k}", setup.base.hidden)));
        } else {
            runnable.push(k);
        }
    }
    let runs = par::map_indexed(&runnable, |&k| {
        let cfg = EncoderConfig { cell_kind: CellKind::Clstm, groups: k, ..setup.base.clone() };
        let model = seeded_model(cfg, setup.vocab_size, setup.embeddings, setup.train_cfg.seed)?;
        let report = fit(model, setup.train, setup.dev, &setup.train_cfg, |_| {})?;
        Ok::<_, Error>(SweepEntry { k, best_dev_acc: report.best().dev_acc })
    });
    let entries = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { entries, skipped })
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let mut w = w;
    w.flush()?;
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn parse_csv<T: for<'de> Deserialize<'de>>(text: &str, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let got = r.headers().map_err(csv_err)?;
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::Format(format!("expected header {}, got {}", header.join(","), got.iter().collect::<Vec<_>>().join(","))));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_fixtures() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 4]).unwrap(), 2.0 / 3.0);
        assert_eq!(mse(&[1, 2, 3], &[1, 2, 4]).unwrap(), 1.0 / 3.0);
        assert_eq!(accuracy(&[0, 1], &[0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1], &[1, 0]).unwrap(), 0.0);
        assert_eq!(mse(&[0, 1], &[0, 1]).unwrap(), 0.0);
        assert_eq!(mse(&[0; 4], &[4; 4]).unwrap(), 16.0);
        assert!(matches!(accuracy(&[1], &[1, 2]), Err(Error::Contract(_))));
        assert!(matches!(mse(&[], &[]), Err(Error::Contract(_))));
    }

    fn docs_with_lengths(lengths: &[usize]) -> Vec<EncodedDoc> {
        lengths.iter().enumerate().map(|(i, &n)| EncodedDoc { ids: vec![2; n], label: i % 2 }).collect()
    }

    #[test]
    fn decile_sizes() {
        let docs = docs_with_lengths(&(1..=20).rev().collect::<Vec<_>>());
        let rep = decile_report_from_predictions(&docs, &[0; 20]).unwrap();
        assert!(rep.buckets.iter().all(|b| b.n == 2));
        assert_eq!((rep.buckets[0].min_len, rep.buckets[0].max_len), (1, 2));
        assert_eq!((rep.buckets[9].min_len, rep.buckets[9].max_len), (19, 20));

        let docs = docs_with_lengths(&[5; 21]);
        let rep = decile_report_from_predictions(&docs, &[0; 21]).unwrap();
        let sizes: Vec<usize> = rep.buckets.iter().map(|b| b.n).collect();
        assert_eq!(sizes, [3, 2, 2, 2, 2, 2, 2, 2, 2, 2]);
        assert_eq!(rep.total(), 21);

        let err = decile_report_from_predictions(&docs[..9], &[0; 9]);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn constant_prediction_matches_bucket_frequency() {
        let docs = docs_with_lengths(&(0..30).map(|i| 1 + (i * 7) % 13).collect::<Vec<_>>());
        let rep = decile_report_from_predictions(&docs, &vec![1; 30]).unwrap();
        let mut order: Vec<usize> = (0..30).collect();
        order.sort_by_key(|&i| (docs[i].ids.len(), i));
        for (b, idx) in rep.buckets.iter().zip(order.chunks(3)) {
            let ones = idx.iter().filter(|&&i| docs[i].label == 1).count();
            assert_eq!(b.acc, ones as f64 / 3.0);
        }
    }

    #[test]
    fn csv_round_trips() {
        let epochs: Vec<EpochRecord> = (0..3)
            .map(|e| EpochRecord {
                epoch: e,
                train_loss: 1.0 / (e as f64 + 3.0),
                dev_acc: 0.1 * e as f64,
                dev_mse: std::f64::consts::PI * e as f64,
                seconds: 0.0,
            })
            .collect();
        let text = write_epochs(&epochs).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("epoch,train_loss,dev_acc,dev_mse,seconds\n"));
        assert_eq!(parse_convergence_log(&text).unwrap(), epochs);

        let docs = docs_with_lengths(&(1..=21).collect::<Vec<_>>());
        let rep = decile_report_from_predictions(&docs, &[0; 21]).unwrap();
        assert_eq!(DecileReport::from_csv(&rep.to_csv().unwrap()).unwrap(), rep);

        let sweep = SweepReport { entries: vec![SweepEntry { k: 2, best_dev_acc: 0.75 }], skipped: vec![] };
        assert_eq!(SweepReport::from_csv(&sweep.to_csv().unwrap()).unwrap(), sweep);
        assert!(parse_convergence_log("a,b\n1,2\n").is_err());
    }

    #[test]
    fn bucket_sizes_partition() {
        for n in 10..60 {
            let s = bucket_sizes(n, 10);
            assert_eq!(s.iter().sum::<usize>(), n);
            assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
        }
    }
}
