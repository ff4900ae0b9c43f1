//! Unrolls cells over token sequences, builds the document representation
//! from the slowest memory group and classifies it.
//!
//! Sequences are processed as padded row batches. At a padded step the
//! recurrent state is carried through unchanged and the per-step output is
//! zeroed, so a document's representation does not depend on its batch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cells::{init_params, CellKind, CellParams, CellState, CellVars, ForgetRates, INIT_SCALE};
use crate::data::{Batch, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Architecture of an encoder + classifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub cell_kind: CellKind,
    #[serde(default)]
    pub bidirectional: bool,
    /// Embedding width `d`.
    pub input_dim: usize,
    /// Total hidden units `H` across all groups.
    pub hidden: usize,
    /// Memory groups `K`; 1 for every cell but the CLSTM.
    #[serde(default = "one")]
    pub groups: usize,
    pub classes: usize,
    #[serde(default)]
    pub use_bias: bool,
}

fn one() -> usize {
    1
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("classes must be at least 2"));
        }
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if self.cell_kind == CellKind::Cbow {
            if self.bidirectional {
                return Err(Error::config("cbow has no direction; set bidirectional = false"));
            }
            return Ok(());
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden must be positive"));
        }
        if self.groups == 0 || !self.hidden.is_multiple_of(self.groups) {
            return Err(Error::config(format!(
                "hidden ({}) must be divisible by groups ({})",
                self.hidden, self.groups
            )));
        }
        if self.cell_kind != CellKind::Clstm && self.groups != 1 {
            return Err(Error::config(format!("groups must be 1 for {}", self.cell_kind)));
        }
        Ok(())
    }

    pub fn group_size(&self) -> usize {
        self.hidden / self.groups
    }

    /// Width of the document representation fed to the classifier.
    pub fn representation_dim(&self) -> usize {
        match self.cell_kind {
            CellKind::Cbow => self.input_dim,
            _ if self.bidirectional => 2 * self.group_size(),
            _ => self.group_size(),
        }
    }
}

/// Output layer `p = softmax(W_p z + b_p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    /// `C × z_dim`
    pub w: Tensor,
    /// `C × 1`
    pub b: Tensor,
}

impl ClassifierParams {
    pub fn random<R: Rng + ?Sized>(classes: usize, z_dim: usize, rng: &mut R) -> Self {
        ClassifierParams {
            w: Tensor::uniform(classes, z_dim, INIT_SCALE, rng),
            b: Tensor::zeros(classes, 1),
        }
    }
}

/// All parameters of an encoder plus its classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: EncoderConfig,
    pub embeddings: EmbeddingMatrix,
    pub forward: CellParams,
    pub backward: Option<CellParams>,
    pub classifier: ClassifierParams,
}

/// Prefixes used to name model tensors.
pub const FORWARD_PREFIX: &str = "fwd.";
pub const BACKWARD_PREFIX: &str = "bwd.";
pub const EMBEDDING_NAME: &str = "emb";

impl Model {
    /// Fresh model with embeddings drawn from the same generator.
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        let embeddings = EmbeddingMatrix::random(vocab_size, config.input_dim, rng);
        Model::with_embeddings(config, embeddings, rng)
    }

    pub fn with_embeddings<R: Rng + ?Sized>(
        config: EncoderConfig,
        embeddings: EmbeddingMatrix,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if embeddings.dim() != config.input_dim {
            return Err(Error::dim(
                "embeddings",
                embeddings.table.shape(),
                (embeddings.vocab_size(), config.input_dim),
            ));
        }
        let cell = |rng: &mut R| {
            init_params(config.cell_kind, config.input_dim, config.hidden, config.groups, config.use_bias, rng)
        };
        let forward = cell(rng)?;
        let backward = if config.bidirectional { Some(cell(rng)?) } else { None };
        let classifier = ClassifierParams::random(config.classes, config.representation_dim(), rng);
        Ok(Model { config, embeddings, forward, backward, classifier })
    }

    /// Dense trainable tensors (everything but the embedding table), named
    /// and in a fixed order.
    pub fn dense_named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .forward
            .named()
            .into_iter()
            .map(|(n, t)| (format!("{FORWARD_PREFIX}{n}"), t))
            .collect();
        if let Some(b) = &self.backward {
            out.extend(b.named().into_iter().map(|(n, t)| (format!("{BACKWARD_PREFIX}{n}"), t)));
        }
        out.push(("cls.w".into(), &self.classifier.w));
        out.push(("cls.b".into(), &self.classifier.b));
        out
    }

    pub fn dense_named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = self
            .forward
            .named_mut()
            .into_iter()
            .map(|(n, t)| (format!("{FORWARD_PREFIX}{n}"), t))
            .collect();
        if let Some(b) = &mut self.backward {
            out.extend(b.named_mut().into_iter().map(|(n, t)| (format!("{BACKWARD_PREFIX}{n}"), t)));
        }
        out.push(("cls.w".into(), &mut self.classifier.w));
        out.push(("cls.b".into(), &mut self.classifier.b));
        out
    }

    /// Every tensor including the embedding table.
    pub fn all_named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![(EMBEDDING_NAME.to_string(), &self.embeddings.table)];
        out.extend(self.dense_named());
        out
    }

    /// Records the model on `tape` for the vocabulary rows used by `batch`.
    pub fn bind(&self, tape: &mut Tape, batch: &Batch) -> BoundModel {
        let mut rows: Vec<usize> = batch.ids.iter().flatten().copied().collect();
        rows.sort_unstable();
        rows.dedup();
        let mut sub = Tensor::zeros(rows.len(), self.config.input_dim);
        for (r, &id) in rows.iter().enumerate() {
            sub.row_mut(r).copy_from_slice(self.embeddings.table.row(id));
        }
        let embedding = tape.param(sub);
        self.bind_with_embedding(tape, embedding, rows)
    }

    /// As [`Model::bind`] with an already-recorded embedding sub-table whose
    /// row `i` holds vocabulary id `rows[i]`.
    pub fn bind_with_embedding(&self, tape: &mut Tape, embedding: Var, rows: Vec<usize>) -> BoundModel {
        let forward = self.forward.bind(tape);
        let backward = self.backward.as_ref().map(|b| b.bind(tape));
        let cls_w = tape.param(self.classifier.w.clone());
        let cls_b = tape.param(self.classifier.b.clone());
        BoundModel { embedding, rows, forward, backward, cls_w, cls_b }
    }

    /// Binds caller-owned leaves: `embedding` as in
    /// [`Model::bind_with_embedding`] and `dense` in [`Model::dense_named`]
    /// order.
    pub fn bind_leaves(&self, embedding: Var, rows: Vec<usize>, dense: &[Var]) -> Result<BoundModel> {
        let expected = self.dense_named().len();
        if dense.len() != expected {
            return Err(Error::contract(format!("expected {expected} dense leaves, got {}", dense.len())));
        }
        let nf = self.forward.named().len();
        let forward = self.forward.vars_from_leaves(&dense[..nf]);
        let backward = self.backward.as_ref().map(|b| b.vars_from_leaves(&dense[nf..nf + b.named().len()]));
        Ok(BoundModel { embedding, rows, forward, backward, cls_w: dense[expected - 2], cls_b: dense[expected - 1] })
    }

    /// Class probabilities, one row per document of `batch`.
    pub fn forward_batch(&self, tape: &mut Tape, batch: &Batch) -> Result<(BoundModel, Var)> {
        let bound = self.bind(tape, batch);
        let probs = bound.probabilities(tape, &self.config, batch)?;
        Ok((bound, probs))
    }

    /// Class probabilities for one batch without keeping the tape.
    pub fn predict_batch(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (_, probs) = self.forward_batch(&mut tape, batch)?;
        Ok(tape.value(probs).clone())
    }
}

/// A [`Model`] recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    /// Embedding rows touched by the batch.
    pub embedding: Var,
    /// Vocabulary id of each row of `embedding`.
    pub rows: Vec<usize>,
    pub forward: CellVars,
    pub backward: Option<CellVars>,
    pub cls_w: Var,
    pub cls_b: Var,
}

impl BoundModel {
    /// Dense leaves in [`Model::dense_named`] order.
    pub fn dense_leaves(&self) -> Vec<Var> {
        let mut out = self.forward.leaves();
        if let Some(b) = &self.backward {
            out.extend(b.leaves());
        }
        out.push(self.cls_w);
        out.push(self.cls_b);
        out
    }

    /// Per-step inputs `B×d` gathered from the embedding sub-table.
    pub fn inputs(&self, tape: &mut Tape, batch: &Batch) -> Result<Vec<Var>> {
        let local: std::collections::HashMap<usize, usize> =
            self.rows.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        (0..batch.max_len())
            .map(|t| {
                let idx: Vec<usize> = batch.ids.iter().map(|row| local[&row[t]]).collect();
                tape.gather_rows(self.embedding, &idx)
            })
            .collect()
    }

    pub fn representation(&self, tape: &mut Tape, cfg: &EncoderConfig, batch: &Batch) -> Result<Var> {
        let inputs = self.inputs(tape, batch)?;
        let masks = step_masks(batch);
        if cfg.cell_kind == CellKind::Cbow {
            return cbow_encode(tape, &inputs, Some(&masks));
        }
        let enc = match &self.backward {
            Some(bwd) => encode_bidirectional(tape, cfg, &self.forward, bwd, &inputs, Some(&masks))?,
            None => encode_forward(tape, cfg, &self.forward, &inputs, Some(&masks))?,
        };
        doc_representation(tape, &enc)
    }

    pub fn probabilities(&self, tape: &mut Tape, cfg: &EncoderConfig, batch: &Batch) -> Result<Var> {
        let rep = self.representation(tape, cfg, batch)?;
        classify(tape, rep, self.cls_w, self.cls_b)
    }
}

/// Per-step row masks (`true` = real token) from a batch.
pub fn step_masks(batch: &Batch) -> Vec<Vec<bool>> {
    (0..batch.max_len())
        .map(|t| batch.mask.iter().map(|m| m[t] == 1).collect())
        .collect()
}

/// One direction of an unrolled sequence.
#[derive(Clone, Debug)]
pub struct DirectionOutput {
    /// Hidden state after each position (all groups, `B×H`), aligned by
    /// original position; rows are zero at padded positions.
    pub hidden: Vec<Var>,
    /// Forgetting rates per position (CLSTM only).
    pub rates: Vec<ForgetRates>,
    /// State after the last real token in reading order.
    pub last: CellState,
}

#[derive(Clone, Debug)]
pub struct EncodedSequence {
    pub forward: DirectionOutput,
    pub backward: Option<DirectionOutput>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.forward.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.hidden.is_empty()
    }

    /// Per-position output `→h ⊕ ←h` (or just `→h`).
    pub fn step_output(&self, tape: &mut Tape, t: usize) -> Result<Var> {
        match &self.backward {
            Some(b) => tape.concat_cols(&[self.forward.hidden[t], b.hidden[t]]),
            None => Ok(self.forward.hidden[t]),
        }
    }
}

fn run_direction(
    tape: &mut Tape,
    cfg: &EncoderConfig,
    cell: &CellVars,
    inputs: &[Var],
    masks: Option<&[Vec<bool>]>,
    reverse: bool,
) -> Result<DirectionOutput> {
    let Some(first) = inputs.first() else {
        return Err(Error::contract("cannot encode an empty sequence"));
    };
    if let Some(m) = masks {
        if m.len() != inputs.len() {
            return Err(Error::contract("one mask per step required"));
        }
    }
    let batch = first.rows();
    let mut state = CellState::zeros(tape, batch, cfg.hidden, cell.groups());
    let zero = state.h;
    let mut hidden = vec![zero; inputs.len()];
    let mut rates = Vec::new();
    let order: Box<dyn Iterator<Item = usize>> =
        if reverse { Box::new((0..inputs.len()).rev()) } else { Box::new(0..inputs.len()) };
    for t in order {
        let (next, r) = cell.step(tape, inputs[t], &state)?;
        rates.extend(r);
        match masks.map(|m| &m[t]).filter(|m| m.iter().any(|&k| !k)) {
            Some(keep) => {
                let c = tape.select_rows(keep, next.c, state.c)?;
                let h = tape.select_rows(keep, next.h, state.h)?;
                state = CellState { c, h, groups: next.groups };
                hidden[t] = tape.select_rows(keep, next.h, zero)?;
            }
            None => {
                state = next;
                hidden[t] = next.h;
            }
        }
    }
    if reverse {
        rates.reverse();
    }
    Ok(DirectionOutput { hidden, rates, last: state })
}

/// Runs `cell` left to right from a zero state. `masks[t][i]` marks real
/// tokens; omit for unpadded input.
pub fn encode_forward(
    tape: &mut Tape,
    cfg: &EncoderConfig,
    cell: &CellVars,
    inputs: &[Var],
    masks: Option<&[Vec<bool>]>,
) -> Result<EncodedSequence> {
    Ok(EncodedSequence { forward: run_direction(tape, cfg, cell, inputs, masks, false)?, backward: None })
}

/// Forward pass plus an independently parameterized pass over the reversed
/// sequence; outputs stay aligned by original position.
pub fn encode_bidirectional(
    tape: &mut Tape,
    cfg: &EncoderConfig,
    fwd: &CellVars,
    bwd: &CellVars,
    inputs: &[Var],
    masks: Option<&[Vec<bool>]>,
) -> Result<EncodedSequence> {
    let forward = run_direction(tape, cfg, fwd, inputs, masks, false)?;
    let backward = run_direction(tape, cfg, bwd, inputs, masks, true)?;
    Ok(EncodedSequence { forward, backward: Some(backward) })
}

/// Final state of the first (slowest) group: `→h_1^(T)`, or
/// `→h_1^(T) ⊕ ←h_1^(1)` when bidirectional.
pub fn doc_representation(tape: &mut Tape, enc: &EncodedSequence) -> Result<Var> {
    let fwd = first_group(tape, &enc.forward.last)?;
    match &enc.backward {
        Some(b) => {
            let bwd = first_group(tape, &b.last)?;
            tape.concat_cols(&[fwd, bwd])
        }
        None => Ok(fwd),
    }
}

fn first_group(tape: &mut Tape, s: &CellState) -> Result<Var> {
    if s.groups == 1 {
        Ok(s.h)
    } else {
        s.hidden_group(tape, 0)
    }
}

/// `softmax(z·W_pᵀ + b_p)` row-wise.
pub fn classify(tape: &mut Tape, rep: Var, w: Var, b: Var) -> Result<Var> {
    if rep.cols() != w.cols() {
        return Err(Error::dim("classify", rep.shape(), w.shape()));
    }
    let logits = tape.matmul_t(rep, w)?;
    let logits = tape.add_col_bias(logits, b)?;
    Ok(tape.softmax_rows(logits))
}

/// `tanh(Σ_t x_t)` over real tokens.
pub fn cbow_encode(tape: &mut Tape, inputs: &[Var], masks: Option<&[Vec<bool>]>) -> Result<Var> {
    let Some(first) = inputs.first() else {
        return Err(Error::contract("cannot encode an empty sequence"));
    };
    let zero = tape.constant(Tensor::zeros(first.rows(), first.cols()));
    let mut acc = zero;
    for (t, &x) in inputs.iter().enumerate() {
        let x = match masks.map(|m| &m[t]).filter(|m| m.iter().any(|&k| !k)) {
            Some(keep) => tape.select_rows(keep, x, zero)?,
            None => x,
        };
        acc = tape.add(acc, x)?;
    }
    Ok(tape.tanh(acc))
}
