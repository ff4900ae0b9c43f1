//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of one forward pass. [`Var`] is a
//! lightweight handle to a recorded node; the value lives on the tape.
//! Node ids are assigned in creation order, so inputs always precede outputs
//! and [`Tape::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, sigmoid, Tensor};

/// Distance kept from the open bounds of sigmoid and tanh so that outputs
/// stay strictly inside (0, 1) and (−1, 1) in floating point.
pub const SATURATION_EPS: f64 = 1e-15;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    SubFromOne(usize),
    Sigmoid(usize),
    Tanh(usize),
    Scale(usize, f64),
    AddColBias(usize, usize),
    AffineCols { input: usize, scale: f64 },
    ConcatCols(Vec<usize>),
    SliceCols { input: usize, from: usize },
    SoftmaxRows(usize),
    GatherRows { table: usize, index: Vec<usize> },
    SelectRows { keep_new: Vec<bool>, new: usize, old: usize },
    SumAll(usize),
    SumSquares(usize),
    NllSum { probs: usize, gold: Vec<usize>, floor: f64, denom: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Deliberate gradient-rule corruptions, used to show the gradient checker
/// actually detects a wrong rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fault {
    /// Multiplies the sigmoid local derivative by the given factor.
    SigmoidGradScale(f64),
}

/// Operation record for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

/// Gradients produced by [`Tape::backward`], indexed by node id.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for a node; zeros when the node does not influence the loss.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.id] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.id];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        match self.grads[var.id].take() {
            Some(g) => g,
            None => Tensor::zeros(var.rows, var.cols),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn with_fault(fault: Fault) -> Self {
        Tape { nodes: Vec::new(), fault: Some(fault) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.id].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let (rows, cols) = value.shape();
        let id = self.nodes.len();
        self.nodes.push(Node { value, op, needs_grad });
        Var { id, rows, cols }
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.id].needs_grad
    }

    /// Trainable leaf: receives a gradient on backward.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if a.cols != b.rows {
            return Err(Error::dim("matmul", a.shape(), b.shape()));
        }
        let mut out = Tensor::zeros(a.rows, b.cols);
        gemm_nn(self.value(a), self.value(b), &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a.id, b.id), ng))
    }

    /// `a · bᵀ`; the row-batched form of `W x`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        if a.cols != b.cols {
            return Err(Error::dim("matmul_t", a.shape(), b.shape()));
        }
        let mut out = Tensor::zeros(a.rows, b.rows);
        gemm_nt(self.value(a), self.value(b), &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMulT(a.id, b.id), ng))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::dim(op, a.shape(), b.shape()));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(a.rows, a.cols, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("add", a, b, |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a.id, b.id), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("sub", a, b, |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a.id, b.id), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("mul", a, b, |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a.id, b.id), ng))
    }

    /// `1 − a`, elementwise.
    pub fn sub_from_one(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 - x);
        let ng = self.ng(a);
        self.push(out, Op::SubFromOne(a.id), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|x| sigmoid(x).clamp(SATURATION_EPS, 1.0 - SATURATION_EPS));
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a.id), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let lim = 1.0 - SATURATION_EPS;
        let out = self.value(a).map(|x| x.tanh().clamp(-lim, lim));
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a.id), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a.id, s), ng)
    }

    /// Adds a column bias `b: n×1` to every row of `a: m×n`.
    pub fn add_col_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        if b.cols != 1 || b.rows != a.cols {
            return Err(Error::dim("add_col_bias", a.shape(), b.shape()));
        }
        let mut out = self.value(a).clone();
        let bias = self.value(b).data().to_vec();
        for r in 0..out.rows() {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::AddColBias(a.id, b.id), ng))
    }

    /// `a·scale + offsets[col]`, with one offset per column.
    pub fn affine_cols(&mut self, a: Var, scale: f64, offsets: &[f64]) -> Result<Var> {
        if offsets.len() != a.cols {
            return Err(Error::dim("affine_cols", a.shape(), (1, offsets.len())));
        }
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            for (o, off) in out.row_mut(r).iter_mut().zip(offsets) {
                *o = *o * scale + off;
            }
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::AffineCols { input: a.id, scale }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols of zero parts"));
        }
        let values: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let out = Tensor::concat_cols(&values)?;
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), ng))
    }

    /// Columns `[from, to)` of `a`.
    pub fn slice_cols(&mut self, a: Var, from: usize, to: usize) -> Result<Var> {
        let out = self.value(a).slice_cols(from, to)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceCols { input: a.id, from }, ng))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a.id), ng)
    }

    /// Row `index[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        if let Some(&bad) = index.iter().find(|&&i| i >= table.rows) {
            return Err(Error::Index {
                op: "gather_rows",
                detail: format!("row {bad} of {}", table.rows),
            });
        }
        let t = self.value(table);
        let mut out = Tensor::zeros(index.len(), table.cols);
        for (r, &i) in index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        let ng = self.ng(table);
        Ok(self.push(out, Op::GatherRows { table: table.id, index: index.to_vec() }, ng))
    }

    /// Per-row choice: row `i` comes from `new` when `keep_new[i]`, else from
    /// `old`. Used to carry recurrent state through padded steps.
    pub fn select_rows(&mut self, keep_new: &[bool], new: Var, old: Var) -> Result<Var> {
        if new.shape() != old.shape() {
            return Err(Error::dim("select_rows", new.shape(), old.shape()));
        }
        if keep_new.len() != new.rows {
            return Err(Error::dim("select_rows", new.shape(), (keep_new.len(), 1)));
        }
        let mut out = self.value(old).clone();
        let vn = self.value(new);
        for (r, &k) in keep_new.iter().enumerate() {
            if k {
                out.row_mut(r).copy_from_slice(vn.row(r));
            }
        }
        let ng = self.ng(new) || self.ng(old);
        Ok(self.push(out, Op::SelectRows { keep_new: keep_new.to_vec(), new: new.id, old: old.id }, ng))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::filled(1, 1, self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::SumAll(a.id), ng)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let out = Tensor::filled(1, 1, self.value(a).sum_squares());
        let ng = self.ng(a);
        self.push(out, Op::SumSquares(a.id), ng)
    }

    /// `Σᵢ −ln max(probs[i, gold[i]], floor) / denom` as a `1×1` value.
    pub fn nll_sum(&mut self, probs: Var, gold: &[usize], floor: f64, denom: f64) -> Result<Var> {
        if gold.len() != probs.rows {
            return Err(Error::dim("nll_sum", probs.shape(), (gold.len(), 1)));
        }
        if let Some(&bad) = gold.iter().find(|&&g| g >= probs.cols) {
            return Err(Error::contract(format!(
                "gold class {bad} outside [0, {})",
                probs.cols
            )));
        }
        let p = self.value(probs);
        let total: f64 = gold
            .iter()
            .enumerate()
            .map(|(i, &g)| -p.get(i, g).max(floor).ln())
            .sum();
        let out = Tensor::filled(1, 1, total / denom);
        let ng = self.ng(probs);
        Ok(self.push(out, Op::NllSum { probs: probs.id, gold: gold.to_vec(), floor, denom }, ng))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.shape() != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                loss.shape()
            )));
        }
        let n = loss.id + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::filled(1, 1, 1.0));
        for id in (0..n).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: usize, delta: Tensor) {
        if !self.nodes[id].needs_grad {
            return;
        }
        match &mut grads[id] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Tensor>], id: usize, f: impl FnOnce(&mut Tensor)) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let (r, c) = self.nodes[id].value.shape();
        let slot = grads[id].get_or_insert_with(|| Tensor::zeros(r, c));
        f(slot);
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[id].value;
        match &self.nodes[id].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                // da = g·bᵀ, db = aᵀ·g
                self.accumulate_with(grads, a, |ga| gemm_nt(g, vb, ga));
                self.accumulate_with(grads, b, |gb| gemm_tn(va, g, gb));
            }
            &Op::MatMulT(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                // out = a·bᵀ: da = g·b, db = gᵀ·a
                self.accumulate_with(grads, a, |ga| gemm_nn(g, vb, ga));
                self.accumulate_with(grads, b, |gb| gemm_tn(g, va, gb));
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|x| -x));
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                self.accumulate(grads, a, zip_map(g, vb, |x, y| x * y));
                self.accumulate(grads, b, zip_map(g, va, |x, y| x * y));
            }
            &Op::SubFromOne(a) => self.accumulate(grads, a, g.map(|x| -x)),
            &Op::Sigmoid(a) => {
                let k = match self.fault {
                    Some(Fault::SigmoidGradScale(k)) => k,
                    None => 1.0,
                };
                self.accumulate(grads, a, zip_map(g, out, |x, y| k * x * y * (1.0 - y)));
            }
            &Op::Tanh(a) => self.accumulate(grads, a, zip_map(g, out, |x, y| x * (1.0 - y * y))),
            &Op::Scale(a, s) => self.accumulate(grads, a, g.map(|x| x * s)),
            &Op::AddColBias(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate_with(grads, b, |gb| {
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            &Op::AffineCols { input, scale } => self.accumulate(grads, input, g.map(|x| x * scale)),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.nodes[p].value.cols();
                    self.accumulate_with(grads, p, |gp| {
                        for r in 0..g.rows() {
                            for (o, v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *o += v;
                            }
                        }
                    });
                    off += w;
                }
            }
            &Op::SliceCols { input, from } => {
                let w = g.cols();
                self.accumulate_with(grads, input, |gi| {
                    for r in 0..g.rows() {
                        for (o, v) in gi.row_mut(r)[from..from + w].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            &Op::SoftmaxRows(a) => {
                let mut d = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), out.row(r));
                    let dotp: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    for ((o, &gx), &y) in d.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = y * (gx - dotp);
                    }
                }
                self.accumulate(grads, a, d);
            }
            Op::GatherRows { table, index } => {
                self.accumulate_with(grads, *table, |gt| {
                    for (r, &i) in index.iter().enumerate() {
                        for (o, v) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::SelectRows { keep_new, new, old } => {
                let mut gn = Tensor::zeros(g.rows(), g.cols());
                let mut go = Tensor::zeros(g.rows(), g.cols());
                for (r, &k) in keep_new.iter().enumerate() {
                    let dst = if k { &mut gn } else { &mut go };
                    dst.row_mut(r).copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *new, gn);
                self.accumulate(grads, *old, go);
            }
            &Op::SumAll(a) => {
                let (r, c) = self.nodes[a].value.shape();
                self.accumulate(grads, a, Tensor::filled(r, c, g.get(0, 0)));
            }
            &Op::SumSquares(a) => {
                let s = 2.0 * g.get(0, 0);
                self.accumulate(grads, a, self.nodes[a].value.map(|x| s * x));
            }
            Op::NllSum { probs, gold, floor, denom } => {
                let p = &self.nodes[*probs].value;
                let s = g.get(0, 0);
                let mut d = Tensor::zeros(p.rows(), p.cols());
                for (i, &y) in gold.iter().enumerate() {
                    let v = p.get(i, y);
                    if v > *floor {
                        d.set(i, y, -s / (v * denom));
                    }
                }
                self.accumulate(grads, *probs, d);
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("shapes agree")
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// Relative error used by [`grad_check`].
pub fn relative_error(tape_grad: f64, fd_grad: f64) -> f64 {
    (tape_grad - fd_grad).abs() / (tape_grad.abs() + fd_grad.abs()).max(1e-8)
}

/// Compares tape gradients of a scalar function against central differences
/// over every entry of `params` and returns the maximum relative error.
///
/// `f` builds the scalar on the given tape from one leaf per parameter tensor.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    grad_check_with(f, params, eps, None)
}

/// [`grad_check`] with an optional fault injected into the analytic pass.
pub fn grad_check_with<F>(f: F, params: &[Tensor], eps: f64, fault: Option<Fault>) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::contract("grad_check eps must be positive"));
    }
    let mut tape = match fault {
        Some(fl) => Tape::with_fault(fl),
        None => Tape::new(),
    };
    let leaves: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &leaves)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = leaves.iter().map(|&l| grads.get(l)).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| t.param(p.clone())).collect();
        let out = f(&mut t, &vars)?;
        Ok(t.value(out).get(0, 0))
    };

    let entries: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.data().len()).map(move |i| (p, i)))
        .collect();
    let errors: Vec<Result<f64>> = par::map_indexed(&entries, |&(p, i)| {
        let mut shifted = params.to_vec();
        let base = params[p].data()[i];
        shifted[p].data_mut()[i] = base + eps;
        let plus = eval(&shifted)?;
        shifted[p].data_mut()[i] = base - eps;
        let minus = eval(&shifted)?;
        let fd = (plus - minus) / (2.0 * eps);
        Ok(relative_error(analytic[p].data()[i], fd))
    });
    let mut worst = 0.0f64;
    for e in errors {
        worst = worst.max(e?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::row_vector(&[3.0]));
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum_all(sq);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).data(), &[6.0]);
    }

    #[test]
    fn matmul_gradient_is_outer_product_pattern() {
        let mut t = Tape::new();
        let w = t.param(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let x = t.constant(Tensor::from_rows(&[&[5.0], &[7.0]]));
        let y = t.matmul(w, x).unwrap();
        let loss = t.sum_all(y);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w), Tensor::from_rows(&[&[5.0, 7.0], &[5.0, 7.0]]));
    }

    #[test]
    fn add_passes_gradient_through() {
        let mut t = Tape::new();
        let a = t.param(Tensor::row_vector(&[1.0, 2.0]));
        let b = t.param(Tensor::row_vector(&[3.0, 4.0]));
        let s = t.add(a, b).unwrap();
        let w = t.constant(Tensor::row_vector(&[2.0, -1.0]));
        let p = t.mul(s, w).unwrap();
        let loss = t.sum_all(p);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(a).data(), &[2.0, -1.0]);
        assert_eq!(g.get(b).data(), &[2.0, -1.0]);
    }

    #[test]
    fn elementwise_fixtures() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::row_vector(&[1.0, 2.0]));
        let b = t.constant(Tensor::row_vector(&[3.0, 4.0]));
        let m = t.mul(a, b).unwrap();
        assert_eq!(t.value(m).data(), &[3.0, 8.0]);
        let q = t.constant(Tensor::row_vector(&[0.25, 0.75]));
        let r = t.sub_from_one(q);
        assert_eq!(t.value(r).data(), &[0.75, 0.25]);
        let z = t.constant(Tensor::row_vector(&[0.0]));
        let s = t.sigmoid(z);
        let th = t.tanh(z);
        assert_eq!(t.value(s).data(), &[0.5]);
        assert_eq!(t.value(th).data(), &[0.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut t = Tape::new();
        let x = t.param(Tensor::row_vector(&[0.0]));
        let s = t.sigmoid(x);
        let loss = t.sum_all(s);
        assert_eq!(t.backward(loss).unwrap().get(x).data(), &[0.25]);
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(1, 2));
        let b = t.constant(Tensor::zeros(1, 3));
        assert!(matches!(t.add(a, b), Err(Error::Dimension { .. })));
        assert!(matches!(t.mul(a, b), Err(Error::Dimension { .. })));
        assert!(matches!(t.matmul(a, b), Err(Error::Dimension { .. })));
        assert!(matches!(t.slice_cols(a, 1, 3), Err(Error::Index { .. })));
    }

    #[test]
    fn concat_then_slice_recovers_part() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[&[1.0]]));
        let b = t.constant(Tensor::from_rows(&[&[2.0]]));
        let c = t.concat_cols(&[a, b]).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0]);
        let s = t.slice_cols(c, 0, 1).unwrap();
        assert_eq!(t.value(s), t.value(a));
    }

    #[test]
    fn slice_gradient_lands_in_block() {
        let mut t = Tape::new();
        let a = t.param(Tensor::row_vector(&[1.0, 2.0, 3.0, 4.0]));
        let s = t.slice_cols(a, 1, 3).unwrap();
        let loss = t.sum_all(s);
        assert_eq!(t.backward(loss).unwrap().get(a).data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn softmax_fixtures() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros(1, 5));
        let p = t.softmax_rows(z);
        for &v in t.value(p).data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
        let big = t.constant(Tensor::row_vector(&[1000.0, 1000.0]));
        let q = t.softmax_rows(big);
        assert_eq!(t.value(q).data(), &[0.5, 0.5]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let a = t.param(Tensor::zeros(1, 2));
        assert!(matches!(t.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_leaf_gets_zeros() {
        let mut t = Tape::new();
        let a = t.param(Tensor::row_vector(&[1.0]));
        let b = t.param(Tensor::row_vector(&[5.0, 6.0]));
        let loss = t.sum_squares(a);
        assert_eq!(t.backward(loss).unwrap().get(b), Tensor::zeros(1, 2));
    }

    #[test]
    fn grad_check_quadratic_and_affine() {
        let mut r = rng(1);
        let x = Tensor::uniform(3, 3, 1.0, &mut r);
        let quad = grad_check(|t, v| Ok(t.sum_squares(v[0])), std::slice::from_ref(&x), 1e-5).unwrap();
        assert!(quad < 1e-9, "{quad}");
        let w = Tensor::uniform(3, 3, 1.0, &mut r);
        let affine = grad_check(
            |t, v| {
                let c = t.constant(w.clone());
                let p = t.mul(v[0], c)?;
                Ok(t.sum_all(p))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(affine < 1e-9, "{affine}");
    }

    #[test]
    fn grad_check_matmul_and_softmax() {
        let mut r = rng(2);
        let a = Tensor::uniform(3, 4, 1.0, &mut r);
        let b = Tensor::uniform(4, 2, 1.0, &mut r);
        let w = Tensor::uniform(3, 2, 1.0, &mut r);
        let err = grad_check(
            |t, v| {
                let p = t.matmul(v[0], v[1])?;
                let c = t.constant(w.clone());
                let q = t.mul(p, c)?;
                Ok(t.sum_all(q))
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");

        let s = Tensor::uniform(2, 4, 1.0, &mut r);
        let w2 = Tensor::uniform(2, 4, 1.0, &mut r);
        let err = grad_check(
            |t, v| {
                let p = t.softmax_rows(v[0]);
                let c = t.constant(w2.clone());
                let q = t.mul(p, c)?;
                Ok(t.sum_all(q))
            },
            &[s],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn fault_is_detected() {
        let mut r = rng(3);
        let x = Tensor::uniform(2, 2, 1.0, &mut r);
        let f = |t: &mut Tape, v: &[Var]| {
            let s = t.sigmoid(v[0]);
            Ok(t.sum_squares(s))
        };
        assert!(grad_check(f, std::slice::from_ref(&x), 1e-5).unwrap() < 1e-8);
        let bad = grad_check_with(f, &[x], 1e-5, Some(Fault::SigmoidGradScale(1.01))).unwrap();
        assert!(bad > 1e-3, "{bad}");
    }
}
