//! Independent scalar evaluation of the training objective, generic over the
//! number type.
//!
//! The tape computes gradients in 64-bit floats. Checking them against
//! central differences of a 64-bit forward pass mixes two error sources:
//! the truncation error of the difference quotient and roundoff in the loss
//! (about one ulp of the loss divided by `2ε`, ≈1e-11 at `ε = 1e-5`), which
//! swamps entries whose true gradient is below ~1e-5. Evaluating the same
//! objective in [`DoubleDouble`] (≈106-bit) leaves only truncation error, so
//! small gradient entries can be certified too.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::OnceLock;

use crate::autodiff::{relative_error, Fault, Tape, SATURATION_EPS};
use crate::cells::CellKind;
use crate::data::Batch;
use crate::encoder::{EncoderConfig, Model};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;
use crate::training::{objective_on_tape, PROB_FLOOR};

pub trait Scalar:
    Copy
    + Debug
    + PartialOrd
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    /// Natural log of a positive value.
    fn ln(self) -> Self;

    fn sigmoid(self) -> Self {
        let one = Self::from_f64(1.0);
        let s = if self >= Self::from_f64(0.0) {
            one / (one + (-self).exp())
        } else {
            let e = self.exp();
            e / (one + e)
        };
        clamp(s, Self::from_f64(SATURATION_EPS), Self::from_f64(1.0 - SATURATION_EPS))
    }

    fn tanh(self) -> Self {
        let one = Self::from_f64(1.0);
        let neg = self < Self::from_f64(0.0);
        let ax = if neg { -self } else { self };
        let t = if ax.to_f64() > 40.0 {
            one
        } else {
            let e = (-(ax + ax)).exp();
            (one - e) / (one + e)
        };
        let lim = Self::from_f64(1.0 - SATURATION_EPS);
        let t = if t > lim { lim } else { t };
        if neg {
            -t
        } else {
            t
        }
    }
}

fn clamp<S: Scalar>(v: S, lo: S, hi: S) -> S {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
}

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

const LN2: DoubleDouble = DoubleDouble { hi: std::f64::consts::LN_2, lo: 2.319_046_813_846_299_6e-17 };

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

/// Veltkamp split into two halves of at most 26 significant bits.
fn split(a: f64) -> (f64, f64) {
    let t = 134_217_729.0 * a;
    let hi = t - (t - a);
    (hi, a - hi)
}

/// Dekker's exact product; avoids `mul_add`, which is a slow library call
/// on targets without hardware FMA.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

impl DoubleDouble {
    pub const fn new(v: f64) -> Self {
        DoubleDouble { hi: v, lo: 0.0 }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        DoubleDouble { hi, lo }
    }

    /// Exact multiplication by a power of two.
    fn ldexp(self, k: i32) -> Self {
        let s = 2f64.powi(k);
        DoubleDouble { hi: self.hi * s, lo: self.lo * s }
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        DoubleDouble::renorm(p, e + self.lo * b)
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        DoubleDouble::renorm(s, e + f)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        DoubleDouble::renorm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        DoubleDouble::renorm(q1, q2) + DoubleDouble::new(q3)
    }
}

/// `1/n!` for `n < 16`.
fn inverse_factorials() -> &'static [DoubleDouble; 16] {
    static TABLE: OnceLock<[DoubleDouble; 16]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [DoubleDouble::new(1.0); 16];
        for n in 2..16 {
            t[n] = t[n - 1] / DoubleDouble::new(n as f64);
        }
        t
    })
}

impl Scalar for DoubleDouble {
    fn from_f64(v: f64) -> Self {
        DoubleDouble::new(v)
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi > 709.0 {
            return DoubleDouble::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return DoubleDouble::new(0.0);
        }
        // e^x = 2^k · (e^{r/1024})^1024 with |r| ≤ ln2/2
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2.mul_f64(k)).ldexp(-10);
        let inv = inverse_factorials();
        let mut s = r;
        let mut power = r;
        for c in &inv[2..] {
            power = power * r;
            let term = power * *c;
            s = s + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        // expm1 doubling: (1+s)² − 1 = 2s + s²
        for _ in 0..10 {
            s = s.ldexp(1) + s * s;
        }
        (s + DoubleDouble::new(1.0)).ldexp(k as i32)
    }

    fn ln(self) -> Self {
        // Newton on exp: y ← y + x·e^{−y} − 1
        let mut y = DoubleDouble::new(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - DoubleDouble::new(1.0);
        }
        y
    }
}

/// Row-major matrix of scalars.
#[derive(Clone, Debug)]
pub struct Mat<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn from_tensor(t: &Tensor) -> Self {
        Mat { rows: t.rows(), cols: t.cols(), data: t.data().iter().map(|&v| S::from_f64(v)).collect() }
    }

    fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · v` for a column vector `v`.
    fn apply(&self, v: &[S]) -> Vec<S> {
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).fold(S::from_f64(0.0), |acc, (&a, &b)| acc + a * b))
            .collect()
    }
}

struct GateRef<'a, S> {
    w: &'a Mat<S>,
    u: &'a Mat<S>,
    b: Option<&'a Mat<S>>,
}

impl<S: Scalar> GateRef<'_, S> {
    fn pre(&self, x: &[S], h: &[S]) -> Vec<S> {
        let wx = self.w.apply(x);
        let uh = self.u.apply(h);
        (0..wx.len()).map(|i| wx[i] + uh[i] + self.b.map_or(S::from_f64(0.0), |b| b.data[i])).collect()
    }
}

fn gate_count(kind: CellKind) -> usize {
    match kind {
        CellKind::Rnn => 1,
        CellKind::Lstm => 4,
        CellKind::Cifg | CellKind::Clstm => 3,
        CellKind::Cbow => 0,
    }
}

fn map<S: Scalar>(v: &[S], f: impl Fn(S) -> S) -> Vec<S> {
    v.iter().map(|&x| f(x)).collect()
}

/// Final hidden state after feeding `xs` in order from a zero state.
fn run_cell<S: Scalar>(cfg: &EncoderConfig, gates: &[GateRef<'_, S>], xs: &[&[S]]) -> Vec<S> {
    let zero = S::from_f64(0.0);
    let one = S::from_f64(1.0);
    let hidden = cfg.hidden;
    let mut h = vec![zero; hidden];
    let mut c = vec![zero; hidden];
    for x in xs {
        match cfg.cell_kind {
            CellKind::Rnn => h = map(&gates[0].pre(x, &h), S::tanh),
            CellKind::Lstm => {
                let i = map(&gates[0].pre(x, &h), S::sigmoid);
                let f = map(&gates[1].pre(x, &h), S::sigmoid);
                let o = map(&gates[2].pre(x, &h), S::sigmoid);
                let g = map(&gates[3].pre(x, &h), S::tanh);
                c = (0..hidden).map(|j| f[j] * c[j] + i[j] * g[j]).collect();
                h = (0..hidden).map(|j| o[j] * c[j].tanh()).collect();
            }
            CellKind::Cifg => {
                let f = map(&gates[0].pre(x, &h), S::sigmoid);
                let o = map(&gates[1].pre(x, &h), S::sigmoid);
                let g = map(&gates[2].pre(x, &h), S::tanh);
                c = (0..hidden).map(|j| f[j] * c[j] + (one - f[j]) * g[j]).collect();
                h = (0..hidden).map(|j| o[j] * c[j].tanh()).collect();
            }
            CellKind::Clstm => {
                let k = cfg.groups;
                let size = hidden / k;
                let inv = S::from_f64(1.0 / k as f64);
                let z = map(&gates[0].pre(x, &h), S::sigmoid);
                let r: Vec<S> =
                    (0..hidden).map(|j| z[j] * inv + S::from_f64((j / size) as f64 / k as f64)).collect();
                let o = map(&gates[1].pre(x, &h), S::sigmoid);
                let g = map(&gates[2].pre(x, &h), S::tanh);
                c = (0..hidden).map(|j| (one - r[j]) * c[j] + r[j] * g[j]).collect();
                h = (0..hidden).map(|j| o[j] * c[j].tanh()).collect();
            }
            CellKind::Cbow => unreachable!("cbow has no recurrent cell"),
        }
    }
    h
}

/// Which part of the model a parameter tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    Embedding,
    Forward,
    Backward,
    Classifier,
}

/// Parameter tensors split by role, laid out as in
/// [`grad_check_parameters`].
struct Parts<'a, S> {
    emb: &'a Mat<S>,
    fwd: Vec<GateRef<'a, S>>,
    bwd: Vec<GateRef<'a, S>>,
    cls_w: &'a Mat<S>,
    cls_b: &'a Mat<S>,
}

fn part_of(cfg: &EncoderConfig, index: usize) -> Part {
    let per_cell = gate_count(cfg.cell_kind) * if cfg.use_bias { 3 } else { 2 };
    let fwd_end = 1 + per_cell;
    let bwd_end = fwd_end + if cfg.bidirectional { per_cell } else { 0 };
    match index {
        0 => Part::Embedding,
        i if i < fwd_end => Part::Forward,
        i if i < bwd_end => Part::Backward,
        _ => Part::Classifier,
    }
}

fn split_parts<'a, S>(cfg: &EncoderConfig, params: &'a [Mat<S>]) -> Result<Parts<'a, S>> {
    let per_gate = if cfg.use_bias { 3 } else { 2 };
    let n = gate_count(cfg.cell_kind);
    let cells = if cfg.bidirectional { 2 } else { 1 };
    if params.len() != 1 + cells * n * per_gate + 2 {
        return Err(Error::contract("reference parameter count does not match the config"));
    }
    let gates = |from: usize| -> Vec<GateRef<'a, S>> {
        (0..n)
            .map(|g| {
                let at = from + g * per_gate;
                GateRef { w: &params[at], u: &params[at + 1], b: cfg.use_bias.then(|| &params[at + 2]) }
            })
            .collect()
    };
    let fwd = gates(1);
    let bwd = if cfg.bidirectional { gates(1 + n * per_gate) } else { Vec::new() };
    let len = params.len();
    Ok(Parts { emb: &params[0], fwd, bwd, cls_w: &params[len - 2], cls_b: &params[len - 1] })
}

/// Forward and backward halves of one document's representation.
#[derive(Clone)]
struct DocRep<S> {
    fwd: Vec<S>,
    bwd: Vec<S>,
}

struct Instance<'a> {
    cfg: &'a EncoderConfig,
    /// Per document, the embedding-table row of each real token.
    locals: Vec<Vec<usize>>,
    labels: &'a [usize],
    weight_decay: f64,
}

impl<'a> Instance<'a> {
    fn new(cfg: &'a EncoderConfig, rows: &[usize], batch: &'a Batch, weight_decay: f64) -> Result<Self> {
        let locals = batch
            .ids
            .iter()
            .zip(&batch.lengths)
            .map(|(ids, &len)| {
                ids[..len]
                    .iter()
                    .map(|id| rows.iter().position(|r| r == id).ok_or_else(|| Error::contract("token row not bound")))
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(Instance { cfg, locals, labels: &batch.labels, weight_decay })
    }

    fn forward_half<S: Scalar>(&self, p: &Parts<'_, S>, doc: usize) -> Vec<S> {
        let xs: Vec<&[S]> = self.locals[doc].iter().map(|&r| p.emb.row(r)).collect();
        if self.cfg.cell_kind == CellKind::Cbow {
            let zero = S::from_f64(0.0);
            let sum = xs.iter().fold(vec![zero; self.cfg.input_dim], |acc, x| {
                acc.iter().zip(*x).map(|(&a, &b)| a + b).collect()
            });
            return map(&sum, S::tanh);
        }
        run_cell(self.cfg, &p.fwd, &xs)[..self.cfg.group_size()].to_vec()
    }

    fn backward_half<S: Scalar>(&self, p: &Parts<'_, S>, doc: usize) -> Vec<S> {
        if !self.cfg.bidirectional {
            return Vec::new();
        }
        let xs: Vec<&[S]> = self.locals[doc].iter().rev().map(|&r| p.emb.row(r)).collect();
        run_cell(self.cfg, &p.bwd, &xs)[..self.cfg.group_size()].to_vec()
    }

    fn rep<S: Scalar>(&self, p: &Parts<'_, S>, doc: usize) -> DocRep<S> {
        DocRep { fwd: self.forward_half(p, doc), bwd: self.backward_half(p, doc) }
    }

    fn nll<S: Scalar>(&self, p: &Parts<'_, S>, rep: &DocRep<S>, doc: usize) -> S {
        let z: Vec<S> = rep.fwd.iter().chain(&rep.bwd).copied().collect();
        let logits: Vec<S> = p.cls_w.apply(&z).into_iter().zip(&p.cls_b.data).map(|(a, &b)| a + b).collect();
        let max = logits.iter().copied().fold(logits[0], |m, v| if v > m { v } else { m });
        let exps: Vec<S> = logits.iter().map(|&v| (v - max).exp()).collect();
        let total = exps.iter().fold(S::from_f64(0.0), |a, &b| a + b);
        let prob = exps[self.labels[doc]] / total;
        let floor = S::from_f64(PROB_FLOOR);
        -(if prob < floor { floor } else { prob }).ln()
    }

    fn total<S: Scalar>(&self, nll: &[S], l2: S) -> S {
        let sum = nll.iter().fold(S::from_f64(0.0), |a, &b| a + b);
        sum / S::from_f64(nll.len() as f64) + S::from_f64(0.5 * self.weight_decay) * l2
    }
}

fn sum_squares<S: Scalar>(params: &[Mat<S>]) -> S {
    params.iter().flat_map(|m| &m.data).fold(S::from_f64(0.0), |a, &v| a + v * v)
}

/// The full batch objective (mean cross-entropy plus `λ/2·Σθ²` over every
/// parameter) from scalar parameters laid out as in
/// [`grad_check_parameters`]: the embedding rows `rows`, then the dense
/// tensors in `Model::dense_named` order. Documents are processed one by
/// one at their true length.
pub fn objective<S: Scalar>(
    cfg: &EncoderConfig,
    params: &[Mat<S>],
    rows: &[usize],
    batch: &Batch,
    weight_decay: f64,
) -> Result<S> {
    let inst = Instance::new(cfg, rows, batch, weight_decay)?;
    let parts = split_parts(cfg, params)?;
    let nll: Vec<S> = (0..batch.len()).map(|d| inst.nll(&parts, &inst.rep(&parts, d), d)).collect();
    Ok(inst.total(&nll, sum_squares(params)))
}

/// Vocabulary rows touched by `batch` and the parameter tensors checked
/// against the reference: those rows of the embedding table, then every
/// dense tensor.
pub fn grad_check_parameters(model: &Model, batch: &Batch) -> (Vec<usize>, Vec<Tensor>) {
    let mut probe = Tape::new();
    let rows = model.bind(&mut probe, batch).rows;
    let mut sub = Tensor::zeros(rows.len(), model.config.input_dim);
    for (r, &id) in rows.iter().enumerate() {
        sub.row_mut(r).copy_from_slice(model.embeddings.table.row(id));
    }
    let mut params = vec![sub];
    params.extend(model.dense_named().into_iter().map(|(_, t)| t.clone()));
    (rows, params)
}

/// Outcome of [`reference_grad_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceCheck {
    /// Largest per-entry relative error of tape gradients against central
    /// differences of the double-double objective.
    pub max_rel_error: f64,
    /// `|tape loss − reference loss|` relative to the loss; shows both sides
    /// compute the same function.
    pub forward_gap: f64,
    /// Number of parameter entries compared.
    pub entries: usize,
}

/// Tape gradients (optionally with an injected fault) of the full objective
/// against `(f(θ+ε) − f(θ−ε)) / 2ε` with `f` evaluated in [`DoubleDouble`].
pub fn reference_grad_check(
    model: &Model,
    batch: &Batch,
    weight_decay: f64,
    eps: f64,
    fault: Option<Fault>,
) -> Result<ReferenceCheck> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::contract("eps must be positive"));
    }
    let cfg = &model.config;
    let (rows, params) = grad_check_parameters(model, batch);

    let mut tape = match fault {
        Some(f) => Tape::with_fault(f),
        None => Tape::new(),
    };
    let leaves: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
    let bound = model.bind_leaves(leaves[0], rows.clone(), &leaves[1..])?;
    let probs = bound.probabilities(&mut tape, cfg, batch)?;
    let loss = objective_on_tape(&mut tape, probs, &batch.labels, &leaves, weight_decay)?;
    let tape_loss = tape.value(loss).get(0, 0);
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = leaves.iter().map(|&l| grads.get(l)).collect();

    // Cache the unperturbed per-document pieces; each difference then
    // recomputes only what the perturbed entry feeds into.
    type Dd = DoubleDouble;
    let base: Vec<Mat<Dd>> = params.iter().map(Mat::from_tensor).collect();
    let inst = Instance::new(cfg, &rows, batch, weight_decay)?;
    let base_parts = split_parts(cfg, &base)?;
    let reps: Vec<DocRep<Dd>> = (0..batch.len()).map(|d| inst.rep(&base_parts, d)).collect();
    let nll: Vec<Dd> = reps.iter().enumerate().map(|(d, r)| inst.nll(&base_parts, r, d)).collect();
    let l2 = sum_squares(&base);
    let ref_loss = inst.total(&nll, l2).to_f64();
    let forward_gap = (tape_loss - ref_loss).abs() / ref_loss.abs().max(f64::MIN_POSITIVE);

    let perturbed = |p: usize, i: usize, theta: Dd| -> Result<Dd> {
        let mut shifted = base.clone();
        let old = shifted[p].data[i];
        shifted[p].data[i] = theta;
        let parts = split_parts(cfg, &shifted)?;
        let l2 = l2 - old * old + theta * theta;
        let nll: Vec<Dd> = (0..batch.len())
            .map(|d| {
                let rep = match part_of(cfg, p) {
                    Part::Embedding if inst.locals[d].contains(&(i / cfg.input_dim)) => inst.rep(&parts, d),
                    Part::Forward => DocRep { fwd: inst.forward_half(&parts, d), bwd: reps[d].bwd.clone() },
                    Part::Backward => DocRep { fwd: reps[d].fwd.clone(), bwd: inst.backward_half(&parts, d) },
                    Part::Classifier => reps[d].clone(),
                    Part::Embedding => return nll[d],
                };
                inst.nll(&parts, &rep, d)
            })
            .collect();
        Ok(inst.total(&nll, l2))
    };

    let entries: Vec<(usize, usize)> =
        params.iter().enumerate().flat_map(|(p, t)| (0..t.data().len()).map(move |i| (p, i))).collect();
    let eps_dd = Dd::new(eps);
    let errors = par::map_indexed(&entries, |&(p, i)| {
        let theta = base[p].data[i];
        let plus = perturbed(p, i, theta + eps_dd)?;
        let minus = perturbed(p, i, theta - eps_dd)?;
        let fd = ((plus - minus) / Dd::new(2.0 * eps)).to_f64();
        Ok::<_, Error>(relative_error(analytic[p].data()[i], fd))
    });
    let mut worst = 0.0f64;
    for e in errors {
        worst = worst.max(e?);
    }
    Ok(ReferenceCheck { max_rel_error: worst, forward_gap, entries: entries.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd(v: f64) -> DoubleDouble {
        DoubleDouble::new(v)
    }

    #[test]
    fn arithmetic_carries_extra_bits() {
        let third = dd(1.0) / dd(3.0);
        let back = third * dd(3.0) - dd(1.0);
        assert!(back.to_f64().abs() < 1e-31);
        let tiny = dd(1.0) + dd(1e-20);
        assert_eq!((tiny - dd(1.0)).to_f64(), 1e-20);
    }

    #[test]
    fn transcendental_accuracy() {
        for &x in &[-20.0, -3.5, -1e-3, 0.0, 1e-8, 0.5, 1.0, 2.0, 10.0, 50.0] {
            let e = dd(x).exp();
            assert!((e.to_f64() - x.exp()).abs() <= 4.0 * f64::EPSILON * x.exp(), "exp {x}");
            // exp then ln returns to x far beyond f64 precision
            let back = e.ln() - dd(x);
            assert!(back.to_f64().abs() < 1e-28 * (1.0 + x.abs()), "ln∘exp {x}: {back:?}");
        }
        let e1 = dd(1.0).exp();
        let want = DoubleDouble { hi: std::f64::consts::E, lo: 1.445_646_891_729_250_2e-16 };
        assert!((e1 - want).to_f64().abs() < 1e-30, "{:?}", e1 - want);
        let l2 = dd(2.0).ln() - LN2;
        assert!(l2.to_f64().abs() < 1e-31);
        let t = dd(0.3).tanh().to_f64();
        assert!((t - 0.3f64.tanh()).abs() < 1e-16);
        assert!((dd(-0.7).sigmoid().to_f64() - crate::tensor::sigmoid(-0.7)).abs() < 1e-16);
    }

    #[test]
    fn saturation_matches_the_tape() {
        assert_eq!(dd(80.0).sigmoid().to_f64(), 1.0 - SATURATION_EPS);
        assert_eq!(dd(-80.0).sigmoid().to_f64(), SATURATION_EPS);
        assert_eq!(dd(-80.0).tanh().to_f64(), -(1.0 - SATURATION_EPS));
    }
}
