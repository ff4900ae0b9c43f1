//! Corpus ingestion, vocabulary, embeddings, padded batching and the
//! synthetic long-range "needle" task.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cells::INIT_SCALE;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
/// Sentence separator left in pre-tokenized review corpora.
pub const SENTENCE_SEPARATOR: &str = "<sssss>";
/// Default embedding width.
pub const DEFAULT_EMBEDDING_DIM: usize = 50;

/// A labeled, tokenized document. Labels are 0-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub label: usize,
    pub tokens: Vec<String>,
}

impl Document {
    pub fn new(label: usize, tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::contract("document has no tokens"));
        }
        Ok(Document { label, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Whitespace split, lowercased, sentence separators dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter(|t| *t != SENTENCE_SEPARATOR)
        .map(str::to_lowercase)
        .collect()
}

/// Token ↔ id map with reserved `PAD = 0` and `UNK = 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    min_count: usize,
}

impl Vocab {
    /// Builds from an explicit id-ordered token list; the first two entries
    /// must be the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>, min_count: usize) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::Format("vocabulary must start with <pad>, <unk>".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocab { tokens, ids, min_count })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, doc: &Document) -> EncodedDoc {
        EncodedDoc {
            ids: doc.tokens.iter().map(|t| self.id(t)).collect(),
            label: doc.label,
        }
    }

    pub fn encode_all(&self, docs: &[Document]) -> Vec<EncodedDoc> {
        docs.iter().map(|d| self.encode(d)).collect()
    }
}

/// Tokens with corpus frequency `≥ min_count` get ids from 2 upward, most
/// frequent first, ties broken lexicographically.
pub fn build_vocab(docs: &[Document], min_count: usize) -> Result<Vocab> {
    if docs.is_empty() {
        return Err(Error::contract("cannot build a vocabulary from zero documents"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for d in docs {
        for t in &d.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let tokens = [PAD_TOKEN, UNK_TOKEN]
        .into_iter()
        .chain(kept.into_iter().map(|(t, _)| t))
        .map(String::from)
        .collect();
    Vocab::from_tokens(tokens, min_count)
}

/// Document as vocabulary ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedDoc {
    pub ids: Vec<usize>,
    pub label: usize,
}

/// `V×d` word vectors. Row [`PAD`] is zero and never updated.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub table: Tensor,
    pub trainable: bool,
}

impl EmbeddingMatrix {
    /// Uniform `[−0.1, 0.1]` rows with a zero PAD row.
    pub fn random<R: Rng + ?Sized>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        let mut table = Tensor::uniform(vocab_size, dim, INIT_SCALE, rng);
        table.row_mut(PAD).fill(0.0);
        EmbeddingMatrix { table, trainable: true }
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }
}

/// Reads `token v1 … vd` lines. In-vocabulary tokens take the file values;
/// the rest keep a seeded uniform initialization.
pub fn load_embeddings(path: &Path, vocab: &Vocab, dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut emb = EmbeddingMatrix::random(vocab.len(), dim, &mut rng);
    let reader = BufReader::new(fs::File::open(path)?);
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        let mut parts = line.split(' ').filter(|s| !s.is_empty());
        let Some(token) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(|v| {
                v.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad float `{v}`"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {dim} values, found {}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse { line: lineno, msg: "non-finite value".into() });
        }
        let id = vocab.id(&token.to_lowercase());
        if id != UNK && id != PAD {
            emb.table.row_mut(id).copy_from_slice(&values);
        }
    }
    Ok(emb)
}

/// Padded mini-batch. `ids[i][t]` is [`PAD`] and `mask[i][t] == 0` for
/// `t ≥ lengths[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<u8>>,
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
    /// Position of each row in the source document list.
    pub doc_index: Vec<usize>,
}

impl Batch {
    pub fn from_docs(docs: &[EncodedDoc], index: &[usize]) -> Result<Self> {
        if index.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let lengths: Vec<usize> = index.iter().map(|&i| docs[i].ids.len()).collect();
        if lengths.contains(&0) {
            return Err(Error::contract("document with no tokens in batch"));
        }
        let t_max = *lengths.iter().max().unwrap();
        let mut ids = Vec::with_capacity(index.len());
        let mut mask = Vec::with_capacity(index.len());
        for &i in index {
            let d = &docs[i].ids;
            let mut row = d.clone();
            row.resize(t_max, PAD);
            let mut m = vec![1u8; d.len()];
            m.resize(t_max, 0);
            ids.push(row);
            mask.push(m);
        }
        Ok(Batch {
            ids,
            mask,
            lengths,
            labels: index.iter().map(|&i| docs[i].label).collect(),
            doc_index: index.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    /// Rows `[from, to)` as their own batch, padded to their own maximum.
    pub fn split(&self, from: usize, to: usize) -> Batch {
        let lengths = self.lengths[from..to].to_vec();
        let t_max = *lengths.iter().max().unwrap();
        Batch {
            ids: self.ids[from..to].iter().map(|r| r[..t_max].to_vec()).collect(),
            mask: self.mask[from..to].iter().map(|r| r[..t_max].to_vec()).collect(),
            lengths,
            labels: self.labels[from..to].to_vec(),
            doc_index: self.doc_index[from..to].to_vec(),
        }
    }
}

/// Documents per length-sorted bucket, in batches.
const BUCKET_BATCHES: usize = 20;

/// Shuffles with `seed` and cuts into batches. With `sort_bucket`, windows of
/// shuffled documents are sorted by length before cutting so that batches
/// hold similar lengths; batch order is shuffled again afterwards.
pub fn make_batches(docs: &[EncodedDoc], batch_size: usize, seed: u64, sort_bucket: bool) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut rng);
    if sort_bucket {
        for window in order.chunks_mut(batch_size * BUCKET_BATCHES) {
            window.sort_by_key(|&i| (docs[i].ids.len(), i));
        }
    }
    let mut batches = order
        .chunks(batch_size)
        .map(|c| Batch::from_docs(docs, c))
        .collect::<Result<Vec<_>>>()?;
    if sort_bucket {
        batches.shuffle(&mut rng);
    }
    Ok(batches)
}

/// Reads the canonical corpus: one `label<TAB>text` document per line with a
/// 0-based label. Blank lines are skipped.
pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut docs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = n + 1;
        let (label, text) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: lineno,
            msg: "expected `label<TAB>text`".into(),
        })?;
        let label = label.trim().parse::<usize>().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad label `{label}`"),
        })?;
        let doc = Document::new(label, tokenize(text)).map_err(|_| Error::Parse {
            line: lineno,
            msg: "document has no tokens".into(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn format_corpus(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&d.label.to_string());
        out.push('\t');
        out.push_str(&d.tokens.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(format_corpus(docs).as_bytes())?;
    Ok(())
}

/// Field layout of an external review corpus.
#[derive(Clone, Debug)]
pub struct ConvertOptions {
    pub field_sep: String,
    pub label_index: usize,
    pub text_index: usize,
    /// Rating that maps to label 0 (e.g. 1 for a 1..5 star scale).
    pub label_offset: i64,
    pub classes: usize,
}

/// Parses an external corpus into documents.
pub fn convert_external(path: &Path, opts: &ConvertOptions) -> Result<Vec<Document>> {
    let text = fs::read_to_string(path)?;
    convert_external_str(&text, opts)
}

pub fn convert_external_str(text: &str, opts: &ConvertOptions) -> Result<Vec<Document>> {
    if opts.field_sep.is_empty() {
        return Err(Error::config("field separator must not be empty"));
    }
    let need = opts.label_index.max(opts.text_index) + 1;
    let mut docs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = n + 1;
        let fields: Vec<&str> = line.split(opts.field_sep.as_str()).collect();
        if fields.len() < need {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected at least {need} fields, found {}", fields.len()),
            });
        }
        let raw = fields[opts.label_index].trim();
        let rating: i64 = raw.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad rating `{raw}`"),
        })?;
        let label = rating - opts.label_offset;
        if label < 0 || label >= opts.classes as i64 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!(
                    "rating {rating} outside [{}, {}]",
                    opts.label_offset,
                    opts.label_offset + opts.classes as i64 - 1
                ),
            });
        }
        let doc = Document::new(label as usize, tokenize(fields[opts.text_index])).map_err(|_| Error::Parse {
            line: lineno,
            msg: "document has no tokens".into(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Token carrying the label in a needle document.
pub fn signal_token(class: usize) -> String {
    format!("sig{class}")
}

pub fn noise_token(i: usize) -> String {
    format!("w{i}")
}

/// Synthetic long-range task: `length` uniform noise tokens, one of which,
/// placed within the first 10% of positions, is replaced by the signal token
/// of the document's class. Labels cycle through the classes before
/// shuffling; the last tenth of the shuffled set is the dev split.
pub fn synth_needle(
    n_docs: usize,
    length: usize,
    classes: usize,
    noise_vocab_size: usize,
    seed: u64,
) -> Result<(Vec<Document>, Vec<Document>)> {
    if length < 10 {
        return Err(Error::config("needle documents need at least 10 tokens"));
    }
    if classes < 2 {
        return Err(Error::config("needle task needs at least 2 classes"));
    }
    if noise_vocab_size == 0 {
        return Err(Error::config("noise vocabulary must not be empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let window = length / 10;
    let mut docs: Vec<Document> = (0..n_docs)
        .map(|i| {
            let label = i % classes;
            let mut tokens: Vec<String> = (0..length)
                .map(|_| noise_token(rng.gen_range(0..noise_vocab_size)))
                .collect();
            tokens[rng.gen_range(0..window)] = signal_token(label);
            Document { label, tokens }
        })
        .collect();
    docs.shuffle(&mut rng);
    let n_dev = n_docs / 10;
    let dev = docs.split_off(n_docs - n_dev);
    Ok((docs, dev))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(label: usize, toks: &[&str]) -> Document {
        Document::new(label, toks.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("Good Food"), ["good", "food"]);
        assert_eq!(tokenize("a <sssss> b"), ["a", "b"]);
        assert_eq!(tokenize("  a\tb "), ["a", "b"]);
        assert!(tokenize("   ").is_empty());
        assert!(Document::new(0, vec![]).is_err());
    }

    #[test]
    fn vocab_ordering_and_threshold() {
        let docs = [doc(0, &["a", "b"]), doc(1, &["a"])];
        let v = build_vocab(&docs, 1).unwrap();
        assert_eq!((v.id("a"), v.id("b")), (2, 3));
        assert_eq!(v.id(PAD_TOKEN), PAD);
        let v2 = build_vocab(&docs, 2).unwrap();
        assert_eq!((v2.id("a"), v2.id("b")), (2, UNK));
        assert_eq!(v, build_vocab(&docs, 1).unwrap());
    }

    #[test]
    fn vocab_ties_are_lexicographic() {
        let docs = [doc(0, &["z", "m", "a", "m"])];
        let v = build_vocab(&docs, 1).unwrap();
        assert_eq!(&v.tokens()[2..], ["m", "a", "z"]);
    }

    #[test]
    fn embeddings_from_file() {
        let docs = [doc(0, &["good", "bad", "meh"])];
        let v = build_vocab(&docs, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vec.txt");
        fs::write(&p, "good 0.5 -1.25\nunused 1 1\nBAD 2 3\n").unwrap();
        let e = load_embeddings(&p, &v, 2, 7).unwrap();
        assert_eq!(e.table.row(v.id("good")), &[0.5, -1.25]);
        assert_eq!(e.table.row(v.id("bad")), &[2.0, 3.0]);
        assert!(e.table.row(v.id("meh")).iter().all(|x| x.abs() <= 0.1));
        assert_eq!(e.table.row(PAD), &[0.0, 0.0]);

        let err = load_embeddings(&p, &v, 3, 7).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        fs::write(&p, "good 0.5 -1.25\nbad x 1\n").unwrap();
        assert!(matches!(load_embeddings(&p, &v, 2, 7), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn batches_pad_and_mask() {
        let docs = vec![
            EncodedDoc { ids: vec![2, 3, 4], label: 0 },
            EncodedDoc { ids: vec![5, 6, 7, 8, 9], label: 1 },
        ];
        let b = make_batches(&docs, 2, 1, false).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].max_len(), 5);
        let mut sums: Vec<usize> = b[0].mask.iter().map(|m| m.iter().map(|&x| x as usize).sum()).collect();
        sums.sort();
        assert_eq!(sums, [3, 5]);
        for (row, len) in b[0].ids.iter().zip(&b[0].lengths) {
            assert!(row[*len..].iter().all(|&i| i == PAD));
        }
        for single in make_batches(&docs, 1, 1, true).unwrap() {
            assert_eq!(single.max_len(), single.lengths[0]);
        }
        assert_eq!(make_batches(&docs, 1, 9, true).unwrap(), make_batches(&docs, 1, 9, true).unwrap());
        assert!(make_batches(&docs, 0, 1, false).is_err());
    }

    #[test]
    fn convert_fixture() {
        let opts = ConvertOptions {
            field_sep: "\t".into(),
            label_index: 0,
            text_index: 1,
            label_offset: 1,
            classes: 5,
        };
        let docs = convert_external_str("4\tgreat food\n\n2\tmeh <sssss> ok\n", &opts).unwrap();
        assert_eq!(docs, vec![doc(3, &["great", "food"]), doc(1, &["meh", "ok"])]);
        assert!(matches!(convert_external_str("6\tx", &opts), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(convert_external_str("1\tok\nfour\tx", &opts), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(convert_external_str("3", &opts), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn convert_multi_char_separator() {
        let opts = ConvertOptions {
            field_sep: "\t\t".into(),
            label_index: 2,
            text_index: 3,
            label_offset: 1,
            classes: 10,
        };
        let docs = convert_external_str("u1\t\tp9\t\t10\t\tA long review", &opts).unwrap();
        assert_eq!(docs, vec![doc(9, &["a", "long", "review"])]);
    }

    #[test]
    fn corpus_round_trip() {
        let docs = vec![doc(2, &["x", "y"]), doc(0, &["z"])];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.tsv");
        write_corpus(&p, &docs).unwrap();
        assert_eq!(read_corpus(&p).unwrap(), docs);
    }

    #[test]
    fn needle_construction() {
        let (train, dev) = synth_needle(200, 40, 3, 30, 4).unwrap();
        assert_eq!((train.len(), dev.len()), (180, 20));
        let mut per_class = [0usize; 3];
        for d in train.iter().chain(&dev) {
            let signals: Vec<usize> = d
                .tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| t.starts_with("sig"))
                .map(|(i, _)| i)
                .collect();
            assert_eq!(signals.len(), 1);
            assert!(signals[0] < 4);
            assert_eq!(d.tokens[signals[0]], signal_token(d.label));
            assert_eq!(d.len(), 40);
            per_class[d.label] += 1;
        }
        let (lo, hi) = (per_class.iter().min().unwrap(), per_class.iter().max().unwrap());
        assert!(hi - lo <= 1);
        assert_eq!(synth_needle(200, 40, 3, 30, 4).unwrap(), (train, dev));
        assert!(synth_needle(10, 9, 3, 30, 4).is_err());
        assert!(synth_needle(10, 10, 1, 30, 4).is_err());
    }
}
