//! Location-aware attention decoder.
//!
//! At output step `u`, with previous decoder state `s` and previous
//! attention weights `a`:
//!
//! ```text
//! f      = F * a                                  (conv along frames)
//! e_l    = ωᵀ tanh(W s + V h_l + M f_l + b)
//! a_u    = softmax(e)
//! c_u    = Σ_l a_u,l h_l
//! s_u    = LSTM(s, [embed(y_{u−1}); c_u])
//! logits = [s_u; c_u] W_out + b_out
//! ```
//!
//! Decoder classes are the subword units (`0..K`), then `<sos>` (`K`) and
//! `<eos>` (`K + 1`).

use crate::encoder::lstm_step;
use crate::error::{Error, Result};
use crate::model::{AttentionVars, DecoderVars, Model};
use crate::numerics::{Tape, Tensor, Var};

/// Recurrent decoder state as owned tensors, used between decoding steps.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    /// LSTM hidden state, `1 × d_s`.
    pub s: Tensor,
    /// LSTM cell state, `1 × d_s`.
    pub cell: Tensor,
    /// Previous attention weights, `1 × L`.
    pub a_prev: Tensor,
    /// Previous output as a decoder class index.
    pub y_prev: usize,
}

impl DecoderState {
    /// Zero recurrent state, uniform attention over `frames`, previous
    /// output `<sos>`.
    pub fn initial(model: &Model, frames: usize) -> Self {
        let d_s = model.config.decoder.cells;
        Self {
            s: Tensor::zeros(&[1, d_s]),
            cell: Tensor::zeros(&[1, d_s]),
            a_prev: Tensor::full(&[1, frames.max(1)], 1.0 / frames.max(1) as f64),
            y_prev: model.config.sos_class(),
        }
    }
}

/// Decoder state as tape variables.
#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub s: Var,
    pub cell: Var,
    pub a_prev: Var,
    pub y_prev: usize,
}

impl StateVars {
    pub fn constant(tape: &mut Tape, state: &DecoderState) -> Self {
        Self {
            s: tape.constant(state.s.clone()),
            cell: tape.constant(state.cell.clone()),
            a_prev: tape.constant(state.a_prev.clone()),
            y_prev: state.y_prev,
        }
    }
}

/// `h V`, shared by every attention step over the same encoder output.
pub fn project_frames(tape: &mut Tape, h: Var, att: &AttentionVars) -> Result<Var> {
    tape.matmul(h, att.v)
}

/// One location-aware attention step. Returns `(c_u, a_u)` as `1 × d_h` and
/// `1 × L` rows.
pub fn location_attention(
    tape: &mut Tape,
    s_prev: Var,
    a_prev: Var,
    h: Var,
    h_proj: Var,
    att: &AttentionVars,
) -> Result<(Var, Var)> {
    let frames = tape.value(h).rows();
    if tape.value(a_prev).numel() != frames {
        return Err(Error::Contract(format!(
            "previous attention covers {} frames, encoder output has {frames}",
            tape.value(a_prev).numel()
        )));
    }
    let f = tape.conv1d_frames(a_prev, att.filters)?;
    let mf = tape.matmul(f, att.m)?;
    let ws = tape.matmul(s_prev, att.w)?;
    let pre = tape.add(h_proj, mf)?;
    let pre = tape.add_row(pre, ws)?;
    let pre = tape.add_row(pre, att.b)?;
    let act = tape.tanh(pre);
    let energies = tape.matmul(act, att.omega)?;
    let energies = tape.transpose(energies);
    let a = tape.softmax(energies)?;
    let c = tape.matmul(a, h)?;
    Ok((c, a))
}

/// Output of [`decoder_step`].
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub s: Var,
    pub cell: Var,
    pub attention: Var,
    pub context: Var,
    /// `1 × (K + 2)`
    pub logits: Var,
}

/// Attention followed by the recurrent update and output layer.
pub fn decoder_step(tape: &mut Tape, state: &StateVars, h: Var, h_proj: Var, vars: &DecoderVars) -> Result<StepVars> {
    let (context, attention) = location_attention(tape, state.s, state.a_prev, h, h_proj, &vars.att)?;
    let emb = tape.gather_rows(vars.embed, &[state.y_prev])?;
    let input = tape.concat_cols(&[emb, context])?;
    let (s, cell) = lstm_step(tape, input, state.s, state.cell, &vars.lstm)?;
    let out_in = tape.concat_cols(&[s, context])?;
    let logits = tape.linear(out_in, vars.out_w, vars.out_b)?;
    Ok(StepVars {
        s,
        cell,
        attention,
        context,
        logits,
    })
}

/// Teacher-forced negative log-likelihood of `targets` (decoder class
/// indices of subword units) followed by `<eos>`.
///
/// Returns the loss and the attention weights `a_u` of every step.
pub fn attention_nll(tape: &mut Tape, model: &Model, h: Var, targets: &[usize], vars: &DecoderVars) -> Result<(Var, Vec<Var>)> {
    let (sos, eos) = (model.config.sos_class(), model.config.eos_class());
    if targets.is_empty() {
        return Err(Error::Contract("attention loss needs at least one target unit".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&y| y >= sos) {
        let what = match bad {
            b if b == sos => "<sos>".to_string(),
            b if b == eos => "<eos>".to_string(),
            b => format!("class {b}"),
        };
        return Err(Error::Contract(format!("target sequence contains {what}")));
    }
    let frames = tape.value(h).rows();
    let h_proj = project_frames(tape, h, &vars.att)?;
    let init = DecoderState::initial(model, frames);
    let mut state = StateVars::constant(tape, &init);
    let mut logits = Vec::with_capacity(targets.len() + 1);
    let mut weights = Vec::with_capacity(targets.len() + 1);
    let mut gold: Vec<usize> = targets.to_vec();
    gold.push(eos);
    for &y in &gold {
        let step = decoder_step(tape, &state, h, h_proj, vars)?;
        logits.push(step.logits);
        weights.push(step.attention);
        state = StateVars {
            s: step.s,
            cell: step.cell,
            a_prev: step.attention,
            y_prev: y,
        };
    }
    let stacked = tape.concat_rows(&logits)?;
    let loss = tape.cross_entropy(stacked, &gold)?;
    Ok((loss, weights))
}

/// One decoding step outside of training: returns the next state and the
/// log-probabilities over decoder classes.
pub fn infer_step(model: &Model, h: &Tensor, h_proj: &Tensor, state: &DecoderState) -> Result<(DecoderState, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars = model.bind_decoder(&mut tape, false);
    let h = tape.leaf_ref(h, false);
    let h_proj = tape.leaf_ref(h_proj, false);
    let sv = StateVars::constant(&mut tape, state);
    let step = decoder_step(&mut tape, &sv, h, h_proj, &vars)?;
    let log_probs = tape.log_softmax(step.logits)?;
    let next = DecoderState {
        s: tape.value(step.s).clone(),
        cell: tape.value(step.cell).clone(),
        a_prev: tape.value(step.attention).clone(),
        y_prev: state.y_prev,
    };
    Ok((next, tape.value(log_probs).data().to_vec()))
}

/// `h V` computed once per utterance for [`infer_step`].
pub fn infer_projection(model: &Model, h: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = model.bind_decoder(&mut tape, false);
    let hv = tape.leaf_ref(h, false);
    let p = project_frames(&mut tape, hv, &vars.att)?;
    Ok(tape.value(p).clone())
}

/// Text dump of attention weights, one row per output step.
pub fn format_attention(weights: &[Tensor]) -> String {
    weights
        .iter()
        .map(|w| {
            let row: Vec<String> = w.data().iter().map(|v| format!("{v:.6}")).collect();
            row.join(" ") + "\n"
        })
        .collect()
}
