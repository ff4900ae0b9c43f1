//! Single-step transitions for the RNN, LSTM, CIFG-LSTM and cached LSTM
//! (CLSTM) cells, plus their parameter containers.
//!
//! Weights follow the `W: H×d`, `U: H×H` convention. Inputs are row batches
//! (`B×d`), so a gate pre-activation is `x·Wᵀ + h·Uᵀ`.
//!
//! The CLSTM keeps one concatenated `H×d` / `H×H` matrix per gate. Group `k`
//! owns rows `[k·g, (k+1)·g)` with `g = H/K`; the recurrent block reading
//! group `j` into group `k` (`U^{j→k}`) sits at rows of `k`, columns of `j`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Half-width of the uniform weight initializer.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Lstm,
    Cifg,
    Clstm,
    /// Order-free bag of embeddings; has no recurrent parameters.
    Cbow,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::Rnn => "rnn",
            CellKind::Lstm => "lstm",
            CellKind::Cifg => "cifg",
            CellKind::Clstm => "clstm",
            CellKind::Cbow => "cbow",
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Ok(CellKind::Rnn),
            "lstm" => Ok(CellKind::Lstm),
            "cifg" => Ok(CellKind::Cifg),
            "clstm" => Ok(CellKind::Clstm),
            "cbow" => Ok(CellKind::Cbow),
            other => Err(Error::config(format!("unknown cell kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Weights of one gate; the bias is optional.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Option<Tensor>,
}

impl Gate {
    pub fn zeros(hidden: usize, input: usize, use_bias: bool) -> Self {
        Gate {
            w: Tensor::zeros(hidden, input),
            u: Tensor::zeros(hidden, hidden),
            b: use_bias.then(|| Tensor::zeros(hidden, 1)),
        }
    }

    fn random<R: Rng + ?Sized>(hidden: usize, input: usize, use_bias: bool, rng: &mut R) -> Self {
        let w = Tensor::uniform(hidden, input, INIT_SCALE, rng);
        let u = Tensor::uniform(hidden, hidden, INIT_SCALE, rng);
        Gate { w, u, b: use_bias.then(|| Tensor::zeros(hidden, 1)) }
    }

    pub fn hidden(&self) -> usize {
        self.w.rows()
    }

    pub fn input(&self) -> usize {
        self.w.cols()
    }

    fn bind(&self, tape: &mut Tape) -> GateVars {
        GateVars {
            w: tape.param(self.w.clone()),
            u: tape.param(self.u.clone()),
            b: self.b.as_ref().map(|b| tape.param(b.clone())),
        }
    }

    fn named<'a>(&'a self, suffix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("w_{suffix}"), &self.w));
        out.push((format!("u_{suffix}"), &self.u));
        if let Some(b) = &self.b {
            out.push((format!("b_{suffix}"), b));
        }
    }

    fn named_mut<'a>(&'a mut self, suffix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("w_{suffix}"), &mut self.w));
        out.push((format!("u_{suffix}"), &mut self.u));
        if let Some(b) = &mut self.b {
            out.push((format!("b_{suffix}"), b));
        }
    }

    fn check(&self, hidden: usize, input: usize) -> Result<()> {
        if self.w.shape() != (hidden, input) {
            return Err(Error::dim("gate input weights", self.w.shape(), (hidden, input)));
        }
        if self.u.shape() != (hidden, hidden) {
            return Err(Error::dim("gate recurrent weights", self.u.shape(), (hidden, hidden)));
        }
        if let Some(b) = &self.b {
            if b.shape() != (hidden, 1) {
                return Err(Error::dim("gate bias", b.shape(), (hidden, 1)));
            }
        }
        Ok(())
    }
}

/// Tape handles for a [`Gate`].
#[derive(Clone, Copy, Debug)]
pub struct GateVars {
    pub w: Var,
    pub u: Var,
    pub b: Option<Var>,
}

impl GateVars {
    /// `x·Wᵀ + h·Uᵀ (+ b)`.
    pub fn preactivation(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let wx = tape.matmul_t(x, self.w)?;
        let uh = tape.matmul_t(h, self.u)?;
        let s = tape.add(wx, uh)?;
        match self.b {
            Some(b) => tape.add_col_bias(s, b),
            None => Ok(s),
        }
    }

    fn vars(&self, out: &mut Vec<Var>) {
        out.push(self.w);
        out.push(self.u);
        out.extend(self.b);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnParams {
    pub hidden: Gate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub input: Gate,
    pub forget: Gate,
    pub output: Gate,
    pub candidate: Gate,
}

/// CIFG-LSTM: the input gate is `1 − f`, so it carries no weights of its own.
#[derive(Clone, Debug, PartialEq)]
pub struct CifgParams {
    pub forget: Gate,
    pub output: Gate,
    pub candidate: Gate,
}

/// Cached LSTM with `groups` memory groups of `H / groups` units each.
#[derive(Clone, Debug, PartialEq)]
pub struct ClstmParams {
    groups: usize,
    pub rate: Gate,
    pub output: Gate,
    pub candidate: Gate,
}

/// Which gate of a CLSTM cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClstmGate {
    Rate,
    Output,
    Candidate,
}

impl ClstmParams {
    pub fn new(groups: usize, rate: Gate, output: Gate, candidate: Gate) -> Result<Self> {
        let hidden = rate.hidden();
        check_groups(hidden, groups)?;
        let input = rate.input();
        for g in [&rate, &output, &candidate] {
            g.check(hidden, input)?;
        }
        Ok(ClstmParams { groups, rate, output, candidate })
    }

    /// Assembles the parameters from per-group blocks. `input[k]` is
    /// `W^k: (H/K)×d`; `recurrent[j][k]` is `U^{j→k}: (H/K)×(H/K)`.
    pub fn from_blocks(
        input: [&[Tensor]; 3],
        recurrent: [&[Vec<Tensor>]; 3],
    ) -> Result<Self> {
        let groups = input[0].len();
        if groups == 0 {
            return Err(Error::config("CLSTM needs at least one group"));
        }
        let g = input[0][0].rows();
        let d = input[0][0].cols();
        let hidden = g * groups;
        let mut gates = Vec::with_capacity(3);
        for (ws, us) in input.iter().zip(recurrent.iter()) {
            if ws.len() != groups || us.len() != groups {
                return Err(Error::config("block lists must have one entry per group"));
            }
            let mut w = Tensor::zeros(hidden, d);
            let mut u = Tensor::zeros(hidden, hidden);
            for k in 0..groups {
                if ws[k].shape() != (g, d) {
                    return Err(Error::dim("CLSTM input block", ws[k].shape(), (g, d)));
                }
                for r in 0..g {
                    w.row_mut(k * g + r).copy_from_slice(ws[k].row(r));
                }
                for j in 0..groups {
                    let blk = &us[j][k];
                    if blk.shape() != (g, g) {
                        return Err(Error::dim("CLSTM recurrent block", blk.shape(), (g, g)));
                    }
                    for r in 0..g {
                        u.row_mut(k * g + r)[j * g..(j + 1) * g].copy_from_slice(blk.row(r));
                    }
                }
            }
            gates.push(Gate { w, u, b: None });
        }
        let candidate = gates.pop().unwrap();
        let output = gates.pop().unwrap();
        let rate = gates.pop().unwrap();
        ClstmParams::new(groups, rate, output, candidate)
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn hidden(&self) -> usize {
        self.rate.hidden()
    }

    pub fn group_size(&self) -> usize {
        self.hidden() / self.groups
    }

    fn gate(&self, which: ClstmGate) -> &Gate {
        match which {
            ClstmGate::Rate => &self.rate,
            ClstmGate::Output => &self.output,
            ClstmGate::Candidate => &self.candidate,
        }
    }

    /// `W^k` of the given gate (0-based group index).
    pub fn input_block(&self, which: ClstmGate, k: usize) -> Tensor {
        let g = self.group_size();
        self.gate(which).w.slice_rows(k * g, (k + 1) * g).expect("group in range")
    }

    /// `U^{j→k}` of the given gate (0-based group indices).
    pub fn recurrent_block(&self, which: ClstmGate, j: usize, k: usize) -> Tensor {
        let g = self.group_size();
        self.gate(which)
            .u
            .slice_rows(k * g, (k + 1) * g)
            .and_then(|rows| rows.slice_cols(j * g, (j + 1) * g))
            .expect("group in range")
    }

    /// Number of distinct `(W^k, U^{j→k})` blocks: `(3·K, 3·K²)`.
    pub fn block_counts(&self) -> (usize, usize) {
        (3 * self.groups, 3 * self.groups * self.groups)
    }
}

fn check_groups(hidden: usize, groups: usize) -> Result<()> {
    if groups == 0 || !hidden.is_multiple_of(groups) {
        return Err(Error::config(format!(
            "hidden size {hidden} is not divisible into {groups} groups"
        )));
    }
    Ok(())
}

/// Parameters of any supported cell.
#[derive(Clone, Debug, PartialEq)]
pub enum CellParams {
    Rnn(RnnParams),
    Lstm(LstmParams),
    Cifg(CifgParams),
    Clstm(ClstmParams),
    Cbow,
}

impl CellParams {
    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Rnn(_) => CellKind::Rnn,
            CellParams::Lstm(_) => CellKind::Lstm,
            CellParams::Cifg(_) => CellKind::Cifg,
            CellParams::Clstm(_) => CellKind::Clstm,
            CellParams::Cbow => CellKind::Cbow,
        }
    }

    /// Parameter tensors with stable names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        match self {
            CellParams::Rnn(p) => p.hidden.named("h", &mut out),
            CellParams::Lstm(p) => {
                p.input.named("i", &mut out);
                p.forget.named("f", &mut out);
                p.output.named("o", &mut out);
                p.candidate.named("c", &mut out);
            }
            CellParams::Cifg(p) => {
                p.forget.named("f", &mut out);
                p.output.named("o", &mut out);
                p.candidate.named("c", &mut out);
            }
            CellParams::Clstm(p) => {
                p.rate.named("r", &mut out);
                p.output.named("o", &mut out);
                p.candidate.named("c", &mut out);
            }
            CellParams::Cbow => {}
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        match self {
            CellParams::Rnn(p) => p.hidden.named_mut("h", &mut out),
            CellParams::Lstm(p) => {
                p.input.named_mut("i", &mut out);
                p.forget.named_mut("f", &mut out);
                p.output.named_mut("o", &mut out);
                p.candidate.named_mut("c", &mut out);
            }
            CellParams::Cifg(p) => {
                p.forget.named_mut("f", &mut out);
                p.output.named_mut("o", &mut out);
                p.candidate.named_mut("c", &mut out);
            }
            CellParams::Clstm(p) => {
                p.rate.named_mut("r", &mut out);
                p.output.named_mut("o", &mut out);
                p.candidate.named_mut("c", &mut out);
            }
            CellParams::Cbow => {}
        }
        out
    }

    /// Rebuilds typed handles from leaves given in [`CellParams::named`]
    /// order.
    pub fn vars_from_leaves(&self, leaves: &[Var]) -> CellVars {
        let mut it = leaves.iter().copied();
        let mut gate = |g: &Gate| GateVars {
            w: it.next().expect("leaf count"),
            u: it.next().expect("leaf count"),
            b: if g.b.is_some() { it.next() } else { None },
        };
        match self {
            CellParams::Rnn(p) => CellVars::Rnn(RnnVars { hidden: gate(&p.hidden) }),
            CellParams::Lstm(p) => CellVars::Lstm(LstmVars {
                input: gate(&p.input),
                forget: gate(&p.forget),
                output: gate(&p.output),
                candidate: gate(&p.candidate),
            }),
            CellParams::Cifg(p) => CellVars::Cifg(CifgVars {
                forget: gate(&p.forget),
                output: gate(&p.output),
                candidate: gate(&p.candidate),
            }),
            CellParams::Clstm(p) => CellVars::Clstm(ClstmVars {
                groups: p.groups,
                rate: gate(&p.rate),
                output: gate(&p.output),
                candidate: gate(&p.candidate),
            }),
            CellParams::Cbow => CellVars::Cbow,
        }
    }

    /// Records every tensor as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> CellVars {
        match self {
            CellParams::Rnn(p) => CellVars::Rnn(RnnVars { hidden: p.hidden.bind(tape) }),
            CellParams::Lstm(p) => CellVars::Lstm(LstmVars {
                input: p.input.bind(tape),
                forget: p.forget.bind(tape),
                output: p.output.bind(tape),
                candidate: p.candidate.bind(tape),
            }),
            CellParams::Cifg(p) => CellVars::Cifg(CifgVars {
                forget: p.forget.bind(tape),
                output: p.output.bind(tape),
                candidate: p.candidate.bind(tape),
            }),
            CellParams::Clstm(p) => CellVars::Clstm(ClstmVars {
                groups: p.groups,
                rate: p.rate.bind(tape),
                output: p.output.bind(tape),
                candidate: p.candidate.bind(tape),
            }),
            CellParams::Cbow => CellVars::Cbow,
        }
    }
}

/// Samples every weight i.i.d. from `U[−0.1, 0.1]`; biases start at zero.
pub fn init_params<R: Rng + ?Sized>(
    kind: CellKind,
    input: usize,
    hidden: usize,
    groups: usize,
    use_bias: bool,
    rng: &mut R,
) -> Result<CellParams> {
    let gate = |rng: &mut R| Gate::random(hidden, input, use_bias, rng);
    Ok(match kind {
        CellKind::Rnn => CellParams::Rnn(RnnParams { hidden: gate(rng) }),
        CellKind::Lstm => CellParams::Lstm(LstmParams {
            input: gate(rng),
            forget: gate(rng),
            output: gate(rng),
            candidate: gate(rng),
        }),
        CellKind::Cifg => CellParams::Cifg(CifgParams {
            forget: gate(rng),
            output: gate(rng),
            candidate: gate(rng),
        }),
        CellKind::Clstm => {
            check_groups(hidden, groups)?;
            let (rate, output, candidate) = (gate(rng), gate(rng), gate(rng));
            CellParams::Clstm(ClstmParams { groups, rate, output, candidate })
        }
        CellKind::Cbow => CellParams::Cbow,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct RnnVars {
    pub hidden: GateVars,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub input: GateVars,
    pub forget: GateVars,
    pub output: GateVars,
    pub candidate: GateVars,
}

#[derive(Clone, Copy, Debug)]
pub struct CifgVars {
    pub forget: GateVars,
    pub output: GateVars,
    pub candidate: GateVars,
}

#[derive(Clone, Copy, Debug)]
pub struct ClstmVars {
    pub groups: usize,
    pub rate: GateVars,
    pub output: GateVars,
    pub candidate: GateVars,
}

/// Tape handles for a [`CellParams`], in the same order as
/// [`CellParams::named`].
#[derive(Clone, Copy, Debug)]
pub enum CellVars {
    Rnn(RnnVars),
    Lstm(LstmVars),
    Cifg(CifgVars),
    Clstm(ClstmVars),
    Cbow,
}

impl CellVars {
    pub fn leaves(&self) -> Vec<Var> {
        let mut out = Vec::new();
        match self {
            CellVars::Rnn(p) => p.hidden.vars(&mut out),
            CellVars::Lstm(p) => {
                for g in [&p.input, &p.forget, &p.output, &p.candidate] {
                    g.vars(&mut out);
                }
            }
            CellVars::Cifg(p) => {
                for g in [&p.forget, &p.output, &p.candidate] {
                    g.vars(&mut out);
                }
            }
            CellVars::Clstm(p) => {
                for g in [&p.rate, &p.output, &p.candidate] {
                    g.vars(&mut out);
                }
            }
            CellVars::Cbow => {}
        }
        out
    }

    pub fn groups(&self) -> usize {
        match self {
            CellVars::Clstm(p) => p.groups,
            _ => 1,
        }
    }

    /// Advances one step. The RNN carries its memory slot unchanged.
    pub fn step(&self, tape: &mut Tape, x: Var, prev: &CellState) -> Result<(CellState, Option<ForgetRates>)> {
        match self {
            CellVars::Rnn(p) => {
                let h = rnn_step(tape, p, x, prev.h)?;
                Ok((CellState { c: prev.c, h, groups: 1 }, None))
            }
            CellVars::Lstm(p) => Ok((lstm_step(tape, p, x, prev)?, None)),
            CellVars::Cifg(p) => Ok((cifg_step(tape, p, x, prev)?, None)),
            CellVars::Clstm(p) => {
                let (s, r) = clstm_step(tape, p, x, prev)?;
                Ok((s, Some(r)))
            }
            CellVars::Cbow => Err(Error::contract("the bag-of-words encoder has no recurrent step")),
        }
    }
}

/// Memory `c` and hidden `h` for a batch, `B×H` each. Group `k` occupies
/// columns `[k·H/K, (k+1)·H/K)`.
#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub c: Var,
    pub h: Var,
    pub groups: usize,
}

impl CellState {
    /// All-zero state for `batch` rows.
    pub fn zeros(tape: &mut Tape, batch: usize, hidden: usize, groups: usize) -> Self {
        let c = tape.constant(Tensor::zeros(batch, hidden));
        let h = tape.constant(Tensor::zeros(batch, hidden));
        CellState { c, h, groups }
    }

    pub fn group_size(&self) -> usize {
        self.h.cols() / self.groups
    }

    /// Hidden state of group `k` (0-based).
    pub fn hidden_group(&self, tape: &mut Tape, k: usize) -> Result<Var> {
        let g = self.group_size();
        tape.slice_cols(self.h, k * g, (k + 1) * g)
    }

    /// Memory of group `k` (0-based).
    pub fn memory_group(&self, tape: &mut Tape, k: usize) -> Result<Var> {
        let g = self.group_size();
        tape.slice_cols(self.c, k * g, (k + 1) * g)
    }
}

/// Per-group forgetting rates `r_k` of one CLSTM step, stored as `B×H`.
#[derive(Clone, Copy, Debug)]
pub struct ForgetRates {
    pub r: Var,
    pub groups: usize,
}

impl ForgetRates {
    /// Values of group `k` (0-based), copied off the tape.
    pub fn group(&self, tape: &Tape, k: usize) -> Tensor {
        let g = self.r.cols() / self.groups;
        tape.value(self.r).slice_cols(k * g, (k + 1) * g).expect("group in range")
    }
}

fn check_step(op: &'static str, x: Var, prev: &CellState, hidden: usize, input: usize) -> Result<()> {
    if x.cols() != input {
        return Err(Error::dim(op, x.shape(), (x.rows(), input)));
    }
    if prev.h.shape() != (x.rows(), hidden) || prev.c.shape() != (x.rows(), hidden) {
        return Err(Error::dim(op, prev.h.shape(), (x.rows(), hidden)));
    }
    Ok(())
}

/// `h' = tanh(W x + U h)`.
pub fn rnn_step(tape: &mut Tape, p: &RnnVars, x: Var, prev_h: Var) -> Result<Var> {
    if x.cols() != p.hidden.w.cols() || prev_h.cols() != p.hidden.u.rows() || prev_h.rows() != x.rows() {
        return Err(Error::dim("rnn_step", x.shape(), prev_h.shape()));
    }
    let a = p.hidden.preactivation(tape, x, prev_h)?;
    Ok(tape.tanh(a))
}

/// Standard LSTM: `c' = f⊙c + i⊙c̃`, `h' = o⊙tanh(c')`.
pub fn lstm_step(tape: &mut Tape, p: &LstmVars, x: Var, prev: &CellState) -> Result<CellState> {
    check_step("lstm_step", x, prev, p.forget.u.rows(), p.forget.w.cols())?;
    let ai = p.input.preactivation(tape, x, prev.h)?;
    let i = tape.sigmoid(ai);
    let af = p.forget.preactivation(tape, x, prev.h)?;
    let f = tape.sigmoid(af);
    let ao = p.output.preactivation(tape, x, prev.h)?;
    let o = tape.sigmoid(ao);
    let ac = p.candidate.preactivation(tape, x, prev.h)?;
    let cand = tape.tanh(ac);
    let keep = tape.mul(f, prev.c)?;
    let write = tape.mul(i, cand)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok(CellState { c, h, groups: 1 })
}

/// CIFG-LSTM: as [`lstm_step`] with the input gate fixed to `1 − f`.
pub fn cifg_step(tape: &mut Tape, p: &CifgVars, x: Var, prev: &CellState) -> Result<CellState> {
    check_step("cifg_step", x, prev, p.forget.u.rows(), p.forget.w.cols())?;
    let af = p.forget.preactivation(tape, x, prev.h)?;
    let f = tape.sigmoid(af);
    let ao = p.output.preactivation(tape, x, prev.h)?;
    let o = tape.sigmoid(ao);
    let ac = p.candidate.preactivation(tape, x, prev.h)?;
    let cand = tape.tanh(ac);
    let keep = tape.mul(f, prev.c)?;
    let i = tape.sub_from_one(f);
    let write = tape.mul(i, cand)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok(CellState { c, h, groups: 1 })
}

/// `ψ_k(z) = z/K + (k−1)/K` for 1-based group `k`.
pub fn squash(z: &Tensor, k: usize, groups: usize) -> Result<Tensor> {
    if k == 0 || k > groups {
        return Err(Error::contract(format!("group index {k} outside 1..={groups}")));
    }
    let inv = 1.0 / groups as f64;
    let offset = (k - 1) as f64 * inv;
    Ok(z.map(|v| v * inv + offset))
}

/// Column offsets `(k−1)/K` for every unit of a grouped `H`-wide row.
pub fn squash_offsets(hidden: usize, groups: usize) -> Vec<f64> {
    let g = hidden / groups;
    (0..hidden).map(|c| (c / g) as f64 / groups as f64).collect()
}

/// Cached LSTM step. Every group reads all groups' previous hidden states:
///
/// ```text
/// r_k  = ψ_k(σ(W_r^k x + Σ_j U_r^{j→k} h_j))
/// o_k  = σ(W_o^k x + Σ_j U_o^{j→k} h_j)
/// c̃_k  = tanh(W_c^k x + Σ_j U_c^{j→k} h_j)
/// c_k' = (1 − r_k)⊙c_k + r_k⊙c̃_k
/// h_k' = o_k⊙tanh(c_k')
/// ```
pub fn clstm_step(tape: &mut Tape, p: &ClstmVars, x: Var, prev: &CellState) -> Result<(CellState, ForgetRates)> {
    let hidden = p.rate.u.rows();
    check_step("clstm_step", x, prev, hidden, p.rate.w.cols())?;
    if prev.groups != p.groups {
        return Err(Error::dim("clstm_step groups", (prev.groups, 0), (p.groups, 0)));
    }
    let ar = p.rate.preactivation(tape, x, prev.h)?;
    let z = tape.sigmoid(ar);
    let offsets = squash_offsets(hidden, p.groups);
    let r = tape.affine_cols(z, 1.0 / p.groups as f64, &offsets)?;
    let ao = p.output.preactivation(tape, x, prev.h)?;
    let o = tape.sigmoid(ao);
    let ac = p.candidate.preactivation(tape, x, prev.h)?;
    let cand = tape.tanh(ac);
    let retain = tape.sub_from_one(r);
    let keep = tape.mul(retain, prev.c)?;
    let write = tape.mul(r, cand)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((CellState { c, h, groups: p.groups }, ForgetRates { r, groups: p.groups }))
}
