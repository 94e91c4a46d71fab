//! LSTM chain over per-second joint representations, attention pooling over
//! its states, and the sigmoid predictor.

use crate::error::{Error, Result};
use crate::layers::{Init, Linear};
use crate::tensor::{Element, ParamId, Tape, Tensor, Var};

/// Separate input and recurrent matrices for the update (u), forget (f),
/// output (o) and candidate cell (c) gates.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w_fu: ParamId,
    pub w_ff: ParamId,
    pub w_fo: ParamId,
    pub w_fc: ParamId,
    pub w_hu: ParamId,
    pub w_hf: ParamId,
    pub w_ho: ParamId,
    pub w_hc: ParamId,
    pub b_u: ParamId,
    pub b_f: ParamId,
    pub b_o: ParamId,
    pub b_c: ParamId,
    pub d_input: usize,
    pub d_hidden: usize,
}

impl LstmParams {
    /// Xavier weights, zero biases except the forget gate at +1.
    pub fn new<T: Element>(init: &mut Init<'_, T>, d_input: usize, d_hidden: usize) -> Result<Self> {
        let w_in = |g: &str, init: &mut Init<'_, T>| init.xavier(&format!("lstm.w_f{g}"), d_input, d_hidden);
        let (w_fu, w_ff, w_fo, w_fc) = (w_in("u", init)?, w_in("f", init)?, w_in("o", init)?, w_in("c", init)?);
        let w_rec = |g: &str, init: &mut Init<'_, T>| init.xavier(&format!("lstm.w_h{g}"), d_hidden, d_hidden);
        let (w_hu, w_hf, w_ho, w_hc) = (w_rec("u", init)?, w_rec("f", init)?, w_rec("o", init)?, w_rec("c", init)?);
        Ok(LstmParams {
            w_fu,
            w_ff,
            w_fo,
            w_fc,
            w_hu,
            w_hf,
            w_ho,
            w_hc,
            b_u: init.filled("lstm.b_u", &[d_hidden], 0.0)?,
            b_f: init.filled("lstm.b_f", &[d_hidden], 1.0)?,
            b_o: init.filled("lstm.b_o", &[d_hidden], 0.0)?,
            b_c: init.filled("lstm.b_c", &[d_hidden], 0.0)?,
            d_input,
            d_hidden,
        })
    }
}

/// Hidden and cell state, each `1 × d_hidden`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros<T: Element>(tape: &mut Tape<'_, T>, d_hidden: usize) -> Self {
        LstmState {
            h: tape.constant(Tensor::zeros(&[1, d_hidden])),
            c: tape.constant(Tensor::zeros(&[1, d_hidden])),
        }
    }
}

fn gate<T: Element>(tape: &mut Tape<'_, T>, x: Var, h: Var, w_x: ParamId, w_h: ParamId, b: ParamId) -> Result<Var> {
    let (wx, wh, b) = (tape.param(w_x), tape.param(w_h), tape.param(b));
    let a = tape.matmul(x, wx)?;
    let r = tape.matmul(h, wh)?;
    let s = tape.add(a, r)?;
    tape.add_bias(s, b)
}

/// One step:
/// u, f, o = σ(W_F·F + W_h·h + b); c̃ = tanh(…); c = f⊙c_prev + u⊙c̃; h = o⊙tanh(c).
pub fn lstm_step<T: Element>(tape: &mut Tape<'_, T>, input: Var, prev: &LstmState, p: &LstmParams) -> Result<LstmState> {
    let u = gate(tape, input, prev.h, p.w_fu, p.w_hu, p.b_u)?;
    let u = tape.sigmoid(u)?;
    let f = gate(tape, input, prev.h, p.w_ff, p.w_hf, p.b_f)?;
    let f = tape.sigmoid(f)?;
    let o = gate(tape, input, prev.h, p.w_fo, p.w_ho, p.b_o)?;
    let o = tape.sigmoid(o)?;
    let cand = gate(tape, input, prev.h, p.w_fc, p.w_hc, p.b_c)?;
    let cand = tape.tanh(cand)?;
    let keep = tape.mul(f, prev.c)?;
    let write = tape.mul(u, cand)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok(LstmState { h, c })
}

/// Fold the chain left to right from a zero state. Returns every state.
pub fn run_lstm<T: Element>(tape: &mut Tape<'_, T>, inputs: &[Var], p: &LstmParams) -> Result<Vec<LstmState>> {
    if inputs.is_empty() {
        return Err(Error::Input("LSTM needs at least one segment".into()));
    }
    let mut state = LstmState::zeros(tape, p.d_hidden);
    let mut states = Vec::with_capacity(inputs.len());
    for &x in inputs {
        state = lstm_step(tape, x, &state, p)?;
        states.push(state);
    }
    Ok(states)
}

/// Additive scorer `s_i = vᵀ tanh(W_s h_i + b_s)` over hidden states.
#[derive(Clone, Debug)]
pub struct AttnPoolParams {
    pub w_s: ParamId,
    pub b_s: ParamId,
    pub v: ParamId,
}

impl AttnPoolParams {
    pub fn new<T: Element>(init: &mut Init<'_, T>, d_hidden: usize, d_attn: usize) -> Result<Self> {
        Ok(AttnPoolParams {
            w_s: init.xavier("attn_pool.w_s", d_hidden, d_attn)?,
            b_s: init.filled("attn_pool.b_s", &[d_attn], 0.0)?,
            v: init.xavier("attn_pool.v", d_attn, 1)?,
        })
    }
}

/// Returns the context `Σ α_i h_i` (`1 × d_hidden`) and the weights α
/// (`1 × n`).
pub fn attention_pool<T: Element>(tape: &mut Tape<'_, T>, hidden: &[Var], ap: &AttnPoolParams) -> Result<(Var, Var)> {
    if hidden.is_empty() {
        return Err(Error::Input("attention pooling over no states".into()));
    }
    let hs = tape.concat_rows(hidden)?;
    let (ws, bs, v) = (tape.param(ap.w_s), tape.param(ap.b_s), tape.param(ap.v));
    let proj = tape.matmul(hs, ws)?;
    let proj = tape.add_bias(proj, bs)?;
    let act = tape.tanh(proj)?;
    let scores = tape.matmul(act, v)?;
    let scores = tape.reshape(scores, &[1, hidden.len()])?;
    let alphas = tape.softmax(scores, 1)?;
    let context = tape.matmul(alphas, hs)?;
    Ok((context, alphas))
}

/// `σ(h·W + b)`, one output per target.
pub fn predict<T: Element>(tape: &mut Tape<'_, T>, h: Var, head: &Linear) -> Result<Var> {
    let logits = head.forward(tape, h)?;
    tape.sigmoid(logits)
}
