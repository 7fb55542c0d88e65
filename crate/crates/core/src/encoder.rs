//! Shared BLSTM encoder with frame-skipping subsampling.

use crate::config::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{EncoderLayerVars, LstmVars, Model};
use crate::numerics::{BatchStats, Tape, Tensor, Var};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Whether batch normalization measures the sequence or uses running stats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Encoder output on a tape.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `L × 2c`
    pub h: Var,
    /// Original frame index of each output row.
    pub frame_map: Vec<usize>,
    /// Per-layer statistics measured in [`Mode::Train`].
    pub batch_stats: Vec<BatchStats>,
}

/// One LSTM step from input `x_t` (`1 × d`).
///
/// Gate layout along the `4c` axis is input, forget, candidate, output.
pub fn lstm_step(tape: &mut Tape, x_t: Var, h_prev: Var, c_prev: Var, p: &LstmVars) -> Result<(Var, Var)> {
    let gx = tape.linear(x_t, p.w_x, p.b)?;
    lstm_cell(tape, gx, h_prev, c_prev, p.w_h)
}

/// LSTM recurrence given the input contribution `gx = x_t W_x + b`.
fn lstm_cell(tape: &mut Tape, gx: Var, h_prev: Var, c_prev: Var, w_h: Var) -> Result<(Var, Var)> {
    let c = tape.value(c_prev).cols();
    let gh = tape.matmul(h_prev, w_h)?;
    let pre = tape.add(gx, gh)?;
    if tape.value(pre).cols() != 4 * c {
        return Err(Error::Dimension(format!(
            "gate width {} does not match cell size {c}",
            tape.value(pre).cols()
        )));
    }
    let i = tape.slice_cols(pre, 0, c)?;
    let f = tape.slice_cols(pre, c, 2 * c)?;
    let g = tape.slice_cols(pre, 2 * c, 3 * c)?;
    let o = tape.slice_cols(pre, 3 * c, 4 * c)?;
    let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c_t = tape.add(keep, write)?;
    let squashed = tape.tanh(c_t);
    let h_t = tape.mul(o, squashed)?;
    Ok((h_t, c_t))
}

/// Runs one direction over the rows of `gx` (precomputed `X W_x + b`).
fn lstm_sweep(tape: &mut Tape, gx: Var, w_h: Var, cells: usize, reverse: bool) -> Result<Vec<Var>> {
    let steps = tape.value(gx).rows();
    let mut h = tape.constant(Tensor::zeros(&[1, cells]));
    let mut c = tape.constant(Tensor::zeros(&[1, cells]));
    let mut out = vec![h; steps];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    };
    for t in order {
        let gx_t = tape.row(gx, t)?;
        (h, c) = lstm_cell(tape, gx_t, h, c, w_h)?;
        out[t] = h;
    }
    Ok(out)
}

/// Bidirectional layer: forward outputs in the first `c` columns, backward
/// outputs (run from the last frame to the first) in the last `c`.
pub fn blstm_layer(tape: &mut Tape, seq: Var, fwd: &LstmVars, bwd: &LstmVars) -> Result<Var> {
    if tape.value(seq).rows() == 0 {
        return Err(Error::Dimension("empty sequence".into()));
    }
    let cells = tape.value(fwd.w_h).rows();
    let gx_f = tape.linear(seq, fwd.w_x, fwd.b)?;
    let gx_b = tape.linear(seq, bwd.w_x, bwd.b)?;
    let hs_f = lstm_sweep(tape, gx_f, fwd.w_h, cells, false)?;
    let hs_b = lstm_sweep(tape, gx_b, bwd.w_h, cells, true)?;
    let f = tape.concat_rows(&hs_f)?;
    let b = tape.concat_rows(&hs_b)?;
    tape.concat_cols(&[f, b])
}

/// Row indices kept by frame-skipping subsampling: `0, k, 2k, …`.
pub fn subsample_indices(len: usize, factor: usize) -> Vec<usize> {
    (0..len).step_by(factor.max(1)).collect()
}

/// Keeps rows `0, factor, 2·factor, …` of `seq`.
pub fn subsample(seq: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::Contract("subsample factor must be at least 1".into()));
    }
    let idx = subsample_indices(seq.rows(), factor);
    let mut data = Vec::with_capacity(idx.len() * seq.cols());
    for &i in &idx {
        data.extend_from_slice(seq.row_slice(i));
    }
    Tensor::new(vec![idx.len(), seq.cols()], data)
}

/// Encoder output length for `frames` input frames.
pub fn output_length(frames: usize, config: &EncoderConfig) -> usize {
    config
        .subsample_layers
        .iter()
        .fold(frames, |len, _| len.div_ceil(config.subsample_factor))
}

/// `h = Encoder(x)` for `x: T × input_dim`.
///
/// Layer `i` (1-based) first subsamples its input when listed in
/// `subsample_layers`, then runs a BLSTM, then batch normalization when
/// enabled.
pub fn encode(tape: &mut Tape, x: Var, model: &Model, layers: &[EncoderLayerVars], mode: Mode) -> Result<EncoderOutput> {
    let mut out = encode_batch(tape, &[x], model, layers, mode)?;
    Ok(out.pop().expect("one output per input"))
}

/// Encodes several utterances at once.
///
/// In [`Mode::Train`] batch normalization measures its statistics over all
/// frames of all utterances in the batch; each returned output carries the
/// same per-layer statistics. In [`Mode::Eval`] the utterances are
/// independent.
pub fn encode_batch(tape: &mut Tape, xs: &[Var], model: &Model, layers: &[EncoderLayerVars], mode: Mode) -> Result<Vec<EncoderOutput>> {
    let config = &model.config.encoder;
    for &x in xs {
        let frames = tape.value(x).rows();
        if frames < config.total_subsampling() {
            return Err(Error::Contract(format!(
                "{frames} frames is too short for ×{} subsampling",
                config.total_subsampling()
            )));
        }
        if tape.value(x).cols() != model.config.input_dim {
            return Err(Error::Dimension(format!(
                "input has {} dims, model expects {}",
                tape.value(x).cols(),
                model.config.input_dim
            )));
        }
    }
    let mut seqs: Vec<Var> = xs.to_vec();
    let mut frame_maps: Vec<Vec<usize>> = xs.iter().map(|&x| (0..tape.value(x).rows()).collect()).collect();
    let mut batch_stats = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        for (seq, map) in seqs.iter_mut().zip(frame_maps.iter_mut()) {
            if config.subsample_layers.contains(&(i + 1)) && config.subsample_factor > 1 {
                let idx = subsample_indices(map.len(), config.subsample_factor);
                *seq = tape.gather_rows(*seq, &idx)?;
                *map = idx.into_iter().map(|j| map[j]).collect();
            }
            *seq = blstm_layer(tape, *seq, &layer.fwd, &layer.bwd)?;
        }
        let Some(bn) = &layer.bn else { continue };
        match mode {
            Mode::Train => {
                let lens: Vec<usize> = seqs.iter().map(|&s| tape.value(s).rows()).collect();
                let pooled = if seqs.len() == 1 { seqs[0] } else { tape.concat_rows(&seqs)? };
                let (normed, stats) = tape.batch_norm_train(pooled, bn.gamma, bn.beta, BN_EPSILON)?;
                batch_stats.push(stats);
                if seqs.len() == 1 {
                    seqs[0] = normed;
                } else {
                    let mut start = 0;
                    for (seq, len) in seqs.iter_mut().zip(lens) {
                        let idx: Vec<usize> = (start..start + len).collect();
                        *seq = tape.gather_rows(normed, &idx)?;
                        start += len;
                    }
                }
            }
            Mode::Eval => {
                let mean = model.buffer(&format!("enc.{i}.bn.running_mean"));
                let var = model.buffer(&format!("enc.{i}.bn.running_var"));
                for seq in seqs.iter_mut() {
                    *seq = tape.batch_norm_frozen(*seq, bn.gamma, bn.beta, mean.data(), var.data(), BN_EPSILON)?;
                }
            }
        }
    }
    Ok(seqs
        .into_iter()
        .zip(frame_maps)
        .map(|(h, frame_map)| EncoderOutput {
            h,
            frame_map,
            batch_stats: batch_stats.clone(),
        })
        .collect())
}

/// Folds measured statistics into the running averages, in order.
pub fn update_running_stats(model: &mut Model, stats: &[BatchStats]) {
    for (i, s) in stats.iter().enumerate() {
        for (key, values) in [("running_mean", &s.mean), ("running_var", &s.var)] {
            if let Some(buf) = model.buffers.get_mut(&format!("enc.{i}.bn.{key}")) {
                for (r, v) in buf.data_mut().iter_mut().zip(values) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
                }
            }
        }
    }
}

/// Convenience: encodes `features` in evaluation mode and returns `h`.
pub fn encode_eval(model: &Model, features: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let x = tape.leaf_ref(features, false);
    let out = encode(&mut tape, x, model, &vars.layers, Mode::Eval)?;
    Ok(tape.value(out.h).clone())
}
