//! The CLI subcommands as library functions. Each validates its inputs
//! before writing anything.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Fault;
use crate::cells::CellKind;
use crate::config::RunConfig;
use crate::data::{
    build_vocab, convert_external, format_corpus, load_embeddings, read_corpus, synth_needle, Batch, ConvertOptions,
    Document, EmbeddingMatrix, EncodedDoc, Vocab, PAD, UNK,
};
use crate::encoder::{EncoderConfig, Model};
use crate::error::{Error, Result};
use crate::evaluation::{
    convergence_log, decile_report_from_predictions, group_sweep, metrics, predict, seeded_model, Metrics, SweepReport,
    SweepSetup, DECILES,
};
use crate::model_io::{load_model, save_model, write_atomic};
use crate::tensor::Tensor;
use crate::reference::{reference_grad_check, ReferenceCheck};
use crate::training::{fit, TrainReport};

pub const MODEL_FILE: &str = "model.bin";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const SUMMARY_FILE: &str = "metrics.json";
pub const DECILES_FILE: &str = "deciles.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const TRAIN_CORPUS: &str = "train.tsv";
pub const DEV_CORPUS: &str = "dev.tsv";

/// Process exit status for an error: 2 for anything wrong with the inputs,
/// 3 for failures while running.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Format(_) => 2,
        _ => 3,
    }
}

fn read_labeled(path: &Path, field: &str, classes: usize) -> Result<Vec<Document>> {
    let docs = read_corpus(path).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse { line, msg: format!("{field} ({}): {msg}", path.display()) },
        Error::Io(io) => Error::config(format!("{field}: cannot read {}: {io}", path.display())),
        other => other,
    })?;
    if docs.is_empty() {
        return Err(Error::config(format!("{field}: {} holds no documents", path.display())));
    }
    if let Some((i, d)) = docs.iter().enumerate().find(|(_, d)| d.label >= classes) {
        return Err(Error::config(format!(
            "{field}: document {} has label {} but model.classes is {classes}",
            i + 1,
            d.label
        )));
    }
    Ok(docs)
}

/// Everything a run reads before training starts.
pub struct Prepared {
    pub vocab: Vocab,
    pub train: Vec<EncodedDoc>,
    pub dev: Vec<EncodedDoc>,
    pub test: Option<Vec<EncodedDoc>>,
    pub embeddings: Option<EmbeddingMatrix>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let classes = cfg.model.classes;
    let train = read_labeled(&cfg.data.train, "data.train", classes)?;
    let dev = read_labeled(&cfg.data.dev, "data.dev", classes)?;
    let test = cfg.data.test.as_ref().map(|p| read_labeled(p, "data.test", classes)).transpose()?;
    let vocab = build_vocab(&train, cfg.data.min_count)?;
    let embeddings = match &cfg.data.embeddings {
        Some(p) => {
            let mut e = load_embeddings(p, &vocab, cfg.model.input_dim, cfg.train.seed)?;
            e.trainable = !cfg.data.freeze_embeddings;
            Some(e)
        }
        None => None,
    };
    Ok(Prepared {
        train: vocab.encode_all(&train),
        dev: vocab.encode_all(&dev),
        test: test.map(|t| vocab.encode_all(&t)),
        vocab,
        embeddings,
    })
}

fn initial_model(cfg: &RunConfig, prep: &Prepared) -> Result<Model> {
    let mut model = seeded_model(cfg.model.clone(), prep.vocab.len(), prep.embeddings.as_ref(), cfg.train.seed)?;
    model.embeddings.trainable = !cfg.data.freeze_embeddings;
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub best_epoch: usize,
    pub dev: Metrics,
    pub test: Option<Metrics>,
    pub vocab_size: usize,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub summary: Summary,
}

/// Trains, then writes the best model, the per-epoch CSV and a JSON summary
/// into `output_dir`.
pub fn cmd_train(cfg: &RunConfig, mut log: impl FnMut(&str)) -> Result<TrainOutcome> {
    let prep = prepare(cfg)?;
    let model = initial_model(cfg, &prep)?;
    log(&format!(
        "training {} on {} docs ({} dev), vocab {}",
        cfg.model.cell_kind,
        prep.train.len(),
        prep.dev.len(),
        prep.vocab.len()
    ));
    let report = fit(model, &prep.train, &prep.dev, &cfg.train, |r| {
        log(&format!(
            "epoch {:>3}  loss {:.6}  dev_acc {:.4}  dev_mse {:.4}",
            r.epoch, r.train_loss, r.dev_acc, r.dev_mse
        ))
    })?;
    let best = report.best();
    let test = match &prep.test {
        Some(t) => Some(evaluate_docs(&report.best_model, t, cfg.train.batch_size)?),
        None => None,
    };
    let summary = Summary {
        best_epoch: report.best_epoch,
        dev: Metrics { accuracy: best.dev_acc, mse: best.dev_mse, n: prep.dev.len() },
        test,
        vocab_size: prep.vocab.len(),
    };
    let csv = convergence_log(&report)?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))? + "\n";
    fs::create_dir_all(&cfg.output_dir)?;
    save_model(&cfg.output_dir.join(MODEL_FILE), &report.best_model, &prep.vocab)?;
    write_atomic(&cfg.output_dir.join(EPOCHS_FILE), csv.as_bytes())?;
    write_atomic(&cfg.output_dir.join(SUMMARY_FILE), json.as_bytes())?;
    Ok(TrainOutcome { report, summary })
}

fn evaluate_docs(model: &Model, docs: &[EncodedDoc], batch_size: usize) -> Result<Metrics> {
    let preds = predict(model, docs, batch_size)?;
    let gold: Vec<usize> = docs.iter().map(|d| d.label).collect();
    metrics(&preds, &gold)
}

pub struct EvalOutcome {
    pub metrics: Metrics,
    /// Where the length-decile CSV went, if the corpus was large enough.
    pub deciles: Option<PathBuf>,
}

/// Scores a saved model on a corpus and writes the length-decile report to
/// `deciles_path` when the corpus has at least ten documents.
pub fn cmd_eval(model_path: &Path, corpus: &Path, deciles_path: &Path, batch_size: usize) -> Result<EvalOutcome> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    if !model_path.is_file() {
        return Err(Error::config(format!("model: no such file {}", model_path.display())));
    }
    if !corpus.is_file() {
        return Err(Error::config(format!("corpus: no such file {}", corpus.display())));
    }
    let (model, vocab) = load_model(model_path)?;
    let docs = vocab.encode_all(&read_labeled(corpus, "corpus", model.config.classes)?);
    let preds = predict(&model, &docs, batch_size)?;
    let gold: Vec<usize> = docs.iter().map(|d| d.label).collect();
    let m = metrics(&preds, &gold)?;
    let deciles = if docs.len() >= DECILES {
        let csv = decile_report_from_predictions(&docs, &preds)?.to_csv()?;
        if let Some(dir) = deciles_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        write_atomic(deciles_path, csv.as_bytes())?;
        Some(deciles_path.to_path_buf())
    } else {
        None
    };
    Ok(EvalOutcome { metrics: m, deciles })
}

/// Instance for the command-line gradient check.
#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub cell_kind: CellKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub groups: usize,
    pub classes: usize,
    pub steps: usize,
    pub bidirectional: bool,
    pub use_bias: bool,
    pub weight_decay: f64,
    /// Parameters are redrawn from `U[−scale, scale]`.
    pub scale: f64,
    pub eps: f64,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            cell_kind: CellKind::Clstm,
            input_dim: 4,
            hidden: 6,
            groups: 3,
            classes: 3,
            steps: 1,
            bidirectional: false,
            use_bias: true,
            weight_decay: 1e-4,
            scale: 0.5,
            eps: 1e-5,
            seed: 0,
            fault: None,
        }
    }
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-6;
const GRADCHECK_VOCAB: usize = 8;
const GRADCHECK_DOCS: usize = 2;

/// Builds a small model and batch and compares tape gradients of the full
/// objective with central differences of the extended-precision reference.
pub fn cmd_gradcheck(opts: &GradcheckOptions) -> Result<ReferenceCheck> {
    if opts.steps == 0 {
        return Err(Error::config("steps must be at least 1"));
    }
    if !(opts.scale > 0.0 && opts.eps > 0.0) {
        return Err(Error::config("scale and eps must be positive"));
    }
    let cfg = EncoderConfig {
        cell_kind: opts.cell_kind,
        bidirectional: opts.bidirectional,
        input_dim: opts.input_dim,
        hidden: opts.hidden,
        groups: opts.groups,
        classes: opts.classes,
        use_bias: opts.use_bias,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut model = Model::new(cfg, GRADCHECK_VOCAB, &mut rng)?;
    for (_, t) in model.dense_named_mut() {
        *t = Tensor::uniform(t.rows(), t.cols(), opts.scale, &mut rng);
    }
    let table = &mut model.embeddings.table;
    *table = Tensor::uniform(table.rows(), table.cols(), opts.scale, &mut rng);
    table.row_mut(PAD).fill(0.0);
    let docs: Vec<EncodedDoc> = (0..GRADCHECK_DOCS)
        .map(|i| EncodedDoc {
            ids: (0..opts.steps.saturating_sub(i).max(1)).map(|_| rng.gen_range(UNK..GRADCHECK_VOCAB)).collect(),
            label: rng.gen_range(0..opts.classes),
        })
        .collect();
    let batch = Batch::from_docs(&docs, &(0..docs.len()).collect::<Vec<_>>())?;
    reference_grad_check(&model, &batch, opts.weight_decay, opts.eps, opts.fault)
}

/// Runs one seeded training per group count and writes `sweep.csv`.
pub fn cmd_sweep(cfg: &RunConfig, ks: &[usize]) -> Result<SweepReport> {
    if ks.is_empty() {
        return Err(Error::config("no group counts given"));
    }
    if cfg.model.cell_kind != CellKind::Clstm {
        return Err(Error::config("model.cell_kind must be clstm for a group sweep"));
    }
    let prep = prepare(cfg)?;
    let setup = SweepSetup {
        base: cfg.model.clone(),
        train_cfg: cfg.train.clone(),
        vocab_size: prep.vocab.len(),
        embeddings: prep.embeddings.as_ref(),
        train: &prep.train,
        dev: &prep.dev,
    };
    let report = group_sweep(&setup, ks)?;
    fs::create_dir_all(&cfg.output_dir)?;
    write_atomic(&cfg.output_dir.join(SWEEP_FILE), report.to_csv()?.as_bytes())?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub docs: usize,
    pub length: usize,
    pub classes: usize,
    pub noise_vocab: usize,
    pub seed: u64,
}

/// Writes the needle task as `train.tsv` and `dev.tsv` under `out_dir`.
pub fn cmd_synth(opts: &SynthOptions, out_dir: &Path) -> Result<(usize, usize)> {
    let (train, dev) = synth_needle(opts.docs, opts.length, opts.classes, opts.noise_vocab, opts.seed)?;
    if dev.is_empty() {
        return Err(Error::config("too few documents for a dev split"));
    }
    fs::create_dir_all(out_dir)?;
    write_atomic(&out_dir.join(TRAIN_CORPUS), format_corpus(&train).as_bytes())?;
    write_atomic(&out_dir.join(DEV_CORPUS), format_corpus(&dev).as_bytes())?;
    Ok((train.len(), dev.len()))
}

/// Rewrites an external corpus in the canonical format.
pub fn cmd_convert(input: &Path, output: &Path, opts: &ConvertOptions) -> Result<usize> {
    if !input.is_file() {
        return Err(Error::config(format!("input: no such file {}", input.display())));
    }
    let docs = convert_external(input, opts)?;
    write_atomic(output, format_corpus(&docs).as_bytes())?;
    Ok(docs.len())
}
