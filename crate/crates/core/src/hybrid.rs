//! Joint CTC/attention objective and the training loop.
//!
//! `L = λ·L_ctc + (1 − λ)·L_att`, both computed from the same encoder
//! output. At `λ = 0` or `λ = 1` the unused branch is not evaluated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::attention_nll;
use crate::config::HybridConfig;
use crate::decode::{decode_features, greedy_features, hypothesis_to_words};
use crate::ctc::min_frames;
use crate::encoder::{encode_batch, output_length, update_running_stats, Mode};
use crate::error::{Error, Result};
use crate::eval::wer_report;
use crate::features::Utterance;
use crate::model::Model;
use crate::numerics::{clip_global_norm, Adadelta, BatchStats, GradMap, Tape, Tensor, Var};
use crate::tokenizer::{OovPolicy, SubwordVocab};

/// `λ·l_ctc + (1 − λ)·l_att`; endpoints return the selected loss exactly.
pub fn hybrid_loss(l_ctc: f64, l_att: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must lie in [0,1], got {lambda}")));
    }
    Ok(if lambda == 1.0 {
        l_ctc
    } else if lambda == 0.0 {
        l_att
    } else {
        lambda * l_ctc + (1.0 - lambda) * l_att
    })
}

/// One training utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    /// `T × input_dim`
    pub features: Tensor,
    /// Subword unit ids (`1..=K`).
    pub targets: Vec<usize>,
    pub transcript: String,
}

impl Example {
    pub fn from_utterance(utt: &Utterance, vocab: &SubwordVocab, policy: OovPolicy) -> Result<Self> {
        let units = vocab
            .segment_sentence(&utt.transcript, policy)
            .map_err(|e| Error::Contract(format!("utterance {}: {e}", utt.id)))?;
        Ok(Self {
            id: utt.id.clone(),
            features: utt.features.clone(),
            targets: vocab.ids(&units)?,
            transcript: utt.transcript.clone(),
        })
    }
}

/// Loss values of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct LossParts {
    pub ctc: Option<f64>,
    pub attention: Option<f64>,
    pub total: f64,
}

/// Forward (and optionally backward) pass over one utterance.
#[derive(Debug)]
pub struct UtteranceOutcome {
    pub loss: LossParts,
    /// Empty unless gradients were requested.
    pub grads: GradMap,
    pub batch_stats: Vec<BatchStats>,
}

/// Runs the shared encoder once and both branches from its output.
///
/// Non-finite values anywhere in the pass are reported with the utterance
/// id.
pub fn utterance_forward(model: &Model, ex: &Example, lambda: f64, mode: Mode, with_grad: bool) -> Result<UtteranceOutcome> {
    let mut out = batch_forward(model, &[ex], lambda, mode, with_grad)?;
    Ok(UtteranceOutcome {
        loss: out.losses.pop().expect("one loss per example"),
        grads: out.grads,
        batch_stats: out.batch_stats,
    })
}

/// Forward (and optionally backward) pass over a batch.
#[derive(Debug)]
pub struct BatchOutcome {
    /// One entry per example, in order.
    pub losses: Vec<LossParts>,
    /// Gradient of the summed total loss; empty unless requested.
    pub grads: GradMap,
    pub batch_stats: Vec<BatchStats>,
}

/// Joint pass over several utterances on one tape.
///
/// In [`Mode::Train`] batch normalization pools its statistics over every
/// frame of the batch. Gradients are those of the summed total loss.
pub fn batch_forward(model: &Model, batch: &[&Example], lambda: f64, mode: Mode, with_grad: bool) -> Result<BatchOutcome> {
    let ids = || batch.iter().map(|e| e.id.as_str()).collect::<Vec<_>>().join(", ");
    forward(model, batch, lambda, mode, with_grad).map_err(|e| match e {
        Error::NonFinite(msg) if !batch.iter().any(|ex| msg.contains(&ex.id)) => Error::NonFinite(format!("utterance {}: {msg}", ids())),
        other => other,
    })
}

fn forward(model: &Model, batch: &[&Example], lambda: f64, mode: Mode, with_grad: bool) -> Result<BatchOutcome> {
    hybrid_loss(0.0, 0.0, lambda)?;
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, with_grad);
    let xs: Vec<Var> = batch.iter().map(|ex| tape.leaf_ref(&ex.features, false)).collect();
    let encoded = encode_batch(&mut tape, &xs, model, &vars.layers, mode)?;
    let mut losses = Vec::with_capacity(batch.len());
    let mut sum: Option<Var> = None;
    for (ex, enc) in batch.iter().zip(&encoded) {
        let ctc = if lambda > 0.0 {
            let logits = tape.linear(enc.h, vars.ctc_w, vars.ctc_b)?;
            Some(tape.ctc_loss(logits, &ex.targets)?)
        } else {
            None
        };
        let att = if lambda < 1.0 {
            let classes: Vec<usize> = ex.targets.iter().map(|&id| id.wrapping_sub(1)).collect();
            Some(attention_nll(&mut tape, model, enc.h, &classes, &vars.decoder)?.0)
        } else {
            None
        };
        let total = match (ctc, att) {
            (Some(c), None) => c,
            (None, Some(a)) => a,
            (Some(c), Some(a)) => {
                let c = tape.scale(c, lambda);
                let a = tape.scale(a, 1.0 - lambda);
                tape.add(c, a)?
            }
            (None, None) => unreachable!("lambda lies in [0,1]"),
        };
        let loss = LossParts {
            ctc: ctc.map(|v| tape.value(v).data()[0]),
            attention: att.map(|v| tape.value(v).data()[0]),
            total: tape.value(total).data()[0],
        };
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!("loss of utterance {} is {}", ex.id, loss.total)));
        }
        losses.push(loss);
        sum = Some(match sum {
            None => total,
            Some(s) => tape.add(s, total)?,
        });
    }
    let mut grads = GradMap::new();
    if with_grad {
        let mut g = tape.backward(sum.expect("non-empty batch"))?;
        for (name, &var) in &vars.by_name {
            let grad = g.take(var).unwrap_or_else(|| Tensor::zeros(tape.value(var).shape()));
            if !grad.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
            grads.insert(name.clone(), grad);
        }
    }
    let batch_stats = encoded.into_iter().next().map(|e| e.batch_stats).unwrap_or_default();
    Ok(BatchOutcome { losses, grads, batch_stats })
}

/// Why `ex` cannot be trained on under `lambda`, if anything.
fn precheck(model: &Model, ex: &Example, lambda: f64) -> Result<()> {
    let enc = &model.config.encoder;
    let frames = ex.features.rows();
    if frames < enc.total_subsampling() {
        return Err(Error::Contract(format!(
            "utterance {}: {frames} frames is too short for ×{} subsampling",
            ex.id,
            enc.total_subsampling()
        )));
    }
    if ex.features.cols() != model.config.input_dim {
        return Err(Error::Dimension(format!(
            "utterance {}: {} feature dims, model expects {}",
            ex.id,
            ex.features.cols(),
            model.config.input_dim
        )));
    }
    let out = output_length(frames, enc);
    if lambda > 0.0 && out < min_frames(&ex.targets) {
        return Err(Error::Unalignable {
            frames: out,
            labels: ex.targets.len(),
            repeats: min_frames(&ex.targets) - ex.targets.len(),
        });
    }
    Ok(())
}

/// Result of one optimizer update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    /// Mean total loss over the utterances that were used.
    pub mean_loss: f64,
    pub used: usize,
    /// Ids of utterances skipped as unalignable.
    pub skipped: Vec<String>,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Forward/backward over `batch`, summed gradients, clipping, Adadelta.
///
/// Unalignable utterances are skipped and logged; a non-finite loss aborts
/// with the utterance id. If every utterance is skipped the model is left
/// untouched.
pub fn train_step(model: &mut Model, optimizer: &mut Adadelta, batch: &[Example], config: &HybridConfig) -> Result<StepReport> {
    let mut report = StepReport::default();
    let mut used = Vec::with_capacity(batch.len());
    for ex in batch {
        match precheck(model, ex, config.lambda) {
            Ok(()) => used.push(ex),
            Err(e @ Error::Unalignable { .. }) => {
                log::warn!("skipping utterance {}: {e}", ex.id);
                report.skipped.push(ex.id.clone());
            }
            Err(e) => return Err(e),
        }
    }
    if used.is_empty() {
        return Ok(report);
    }
    let out = batch_forward(model, &used, config.lambda, Mode::Train, true)?;
    let mut sum = out.grads;
    report.used = used.len();
    report.mean_loss = out.losses.iter().map(|l| l.total).sum::<f64>() / report.used as f64;
    report.grad_norm = clip_global_norm(&mut sum, config.clip_max_norm)?;
    optimizer.step(&mut model.params, &sum)?;
    update_running_stats(model, &out.batch_stats);
    Ok(report)
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_wer: f64,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch\ttrain_loss\tdev_loss\tdev_wer\twall_seconds";

impl EpochMetrics {
    pub fn to_tsv_row(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.4}\t{:.3}",
            self.epoch, self.train_loss, self.dev_loss, self.dev_wer, self.wall_seconds
        )
    }
}

/// Dev loss (mean total, evaluation mode) and WER in percent, decoding
/// greedily when `beam` is 1.
pub fn evaluate(model: &Model, dev: &[Example], vocab: &SubwordVocab, lambda: f64, beam: usize) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut counted = 0usize;
    let mut pairs = Vec::with_capacity(dev.len());
    for ex in dev {
        match utterance_forward(model, ex, lambda, Mode::Eval, false) {
            Ok(out) => {
                loss += out.loss.total;
                counted += 1;
            }
            Err(Error::Unalignable { .. }) => {}
            Err(e) => return Err(e),
        }
        let tokens = if beam == 1 {
            greedy_features(model, &ex.features, None)?.tokens
        } else {
            decode_features(model, &ex.features, beam, None, 0.0)?.swap_remove(0).tokens
        };
        pairs.push((ex.transcript.clone(), hypothesis_to_words(&tokens, vocab)?));
    }
    let dev_loss = if counted == 0 { f64::NAN } else { loss / counted as f64 };
    Ok((dev_loss, wer_report(&pairs)?.wer))
}

/// A fresh random partition of `0..len` into batches of `batch_size`.
///
/// Batches are not bucketed by length: batch normalization statistics of a
/// length bucket differ systematically from the running averages used at
/// inference.
pub fn shuffled_batches(len: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Summary of a [`train_loop`] run.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    pub skipped: Vec<String>,
}

impl TrainReport {
    pub fn best(&self) -> Option<&EpochMetrics> {
        self.best_epoch.map(|e| &self.epochs[e - 1])
    }
}

/// Where [`train_loop`] writes checkpoints and the metrics log.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub dir: PathBuf,
    pub metadata: BTreeMap<String, String>,
}

fn metrics_preamble(config: &HybridConfig) -> String {
    format!("# seed={} lambda={} batch_size={}\n{METRICS_HEADER}\n", config.seed, config.lambda, config.batch_size)
}

fn save_model(model: &Model, out: &TrainOutput, name: &str) -> Result<()> {
    model.to_checkpoint(out.metadata.clone()).save(&out.dir.join(name))
}

/// Trains for `config.epochs` epochs, evaluating on `dev` after each.
///
/// Utterances are reshuffled into new batches every epoch from
/// `config.seed`. With an output directory, writes `epoch-000.ckpt` (the
/// initial model), one `epoch-NNN.ckpt` per epoch, `best.ckpt` (lowest dev
/// WER, earliest on ties) and `metrics.tsv`. Stops early once `config.target_dev_wer` is met.
pub fn train_loop(
    model: &mut Model,
    train: &[Example],
    dev: &[Example],
    vocab: &SubwordVocab,
    config: &HybridConfig,
    out: Option<&TrainOutput>,
) -> Result<TrainReport> {
    config.validate()?;
    if dev.is_empty() && config.epochs > 0 {
        return Err(Error::Contract("training needs at least one dev utterance".into()));
    }
    let metrics_path = out.map(|o| o.dir.join("metrics.tsv"));
    let mut metrics = metrics_preamble(config);
    if let Some(o) = out {
        fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
        save_model(model, o, "epoch-000.ckpt")?;
        write_text(metrics_path.as_deref().unwrap(), &metrics)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Adadelta::new(config.adadelta.clone());
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: None,
        skipped: Vec::new(),
    };
    let start = Instant::now();
    for epoch in 1..=config.epochs {
        let batches = shuffled_batches(train.len(), config.batch_size, &mut rng);
        let (mut loss_sum, mut used) = (0.0, 0usize);
        for batch in &batches {
            let items: Vec<Example> = batch.iter().map(|&i| train[i].clone()).collect();
            let step = train_step(model, &mut optimizer, &items, config)?;
            loss_sum += step.mean_loss * step.used as f64;
            used += step.used;
            if epoch == 1 {
                report.skipped.extend(step.skipped);
            }
        }
        let (dev_loss, dev_wer) = evaluate(model, dev, vocab, config.lambda, config.dev_beam)?;
        let row = EpochMetrics {
            epoch,
            train_loss: if used == 0 { f64::NAN } else { loss_sum / used as f64 },
            dev_loss,
            dev_wer,
            wall_seconds: if config.log_wall_time { start.elapsed().as_secs_f64() } else { 0.0 },
        };
        log::info!("epoch {epoch}: {}", row.to_tsv_row());
        let _ = writeln!(metrics, "{}", row.to_tsv_row());
        let improved = report.best().map_or(true, |b| dev_wer < b.dev_wer);
        report.epochs.push(row);
        if improved {
            report.best_epoch = Some(epoch);
        }
        if let Some(o) = out {
            write_text(metrics_path.as_deref().unwrap(), &metrics)?;
            save_model(model, o, &format!("epoch-{epoch:03}.ckpt"))?;
            if improved {
                save_model(model, o, "best.ckpt")?;
            }
        }
        if config.target_dev_wer.is_some_and(|t| dev_wer <= t) {
            log::info!("dev WER {dev_wer:.2}% reached the target; stopping");
            break;
        }
    }
    Ok(report)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
