//! Beam search and greedy decoding with the attention decoder.
//!
//! Hypotheses hold decoder class indices (subword units `0..K`, `<eos>` at
//! `K + 1`); `<sos>` is never emitted. Scores are summed natural-log
//! probabilities with no length normalization unless a length penalty is
//! requested.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::attention::{infer_projection, infer_step, DecoderState};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Tensor;
use crate::tokenizer::{detokenize, SubwordVocab};

/// A source of next-label log-probabilities, stepped one label at a time.
pub trait StepModel {
    type State: Clone;

    fn num_classes(&self) -> usize;
    fn sos(&self) -> usize;
    fn eos(&self) -> usize;
    fn initial_state(&self) -> Self::State;
    /// Consumes `prev` (the previous label) and returns the new state and
    /// log-probabilities over all classes.
    fn step(&self, state: &Self::State, prev: usize) -> Result<(Self::State, Vec<f64>)>;
}

/// The trained attention decoder over one utterance's encoder output.
pub struct AttentionScorer<'m> {
    model: &'m Model,
    h: Tensor,
    h_proj: Tensor,
}

impl<'m> AttentionScorer<'m> {
    pub fn new(model: &'m Model, h: Tensor) -> Result<Self> {
        if h.rows() == 0 || h.numel() == 0 {
            return Err(Error::Dimension("empty encoder output".into()));
        }
        let h_proj = infer_projection(model, &h)?;
        Ok(Self { model, h, h_proj })
    }

    pub fn frames(&self) -> usize {
        self.h.rows()
    }
}

impl StepModel for AttentionScorer<'_> {
    type State = DecoderState;

    fn num_classes(&self) -> usize {
        self.model.config.decoder_classes()
    }

    fn sos(&self) -> usize {
        self.model.config.sos_class()
    }

    fn eos(&self) -> usize {
        self.model.config.eos_class()
    }

    fn initial_state(&self) -> DecoderState {
        DecoderState::initial(self.model, self.h.rows())
    }

    fn step(&self, state: &DecoderState, prev: usize) -> Result<(DecoderState, Vec<f64>)> {
        let mut input = state.clone();
        input.y_prev = prev;
        infer_step(self.model, &self.h, &self.h_proj, &input)
    }
}

#[derive(Clone, Debug)]
pub struct Hypothesis<S> {
    pub tokens: Vec<usize>,
    pub score: f64,
    /// Log-probability of each emitted token.
    pub step_scores: Vec<f64>,
    pub state: S,
    pub finished: bool,
}

impl<S> Hypothesis<S> {
    fn last(&self, sos: usize) -> usize {
        self.tokens.last().copied().unwrap_or(sos)
    }

    pub fn ranking_score(&self, length_penalty: f64) -> f64 {
        self.score + length_penalty * self.tokens.len() as f64
    }
}

/// Default decode length bound for `frames` encoder frames.
pub fn default_max_len(frames: usize) -> usize {
    2 * frames + 10
}

fn rank_order(a_score: f64, a_tokens: &[usize], b_score: f64, b_tokens: &[usize]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_tokens.cmp(b_tokens))
}

/// Step-synchronous beam search.
///
/// Each step expands every live hypothesis over every class except
/// `<sos>` and keeps the `beam` best candidates; those ending in `<eos>` move
/// to the finished pool. Search stops when nothing is live or after
/// `max_len` tokens. Finished hypotheses are returned best first; if none
/// finished, the surviving live hypotheses are returned unfinished.
pub fn beam_search<M: StepModel>(model: &M, beam: usize, max_len: usize, length_penalty: f64) -> Result<Vec<Hypothesis<M::State>>> {
    if beam == 0 || max_len == 0 {
        return Err(Error::Contract("beam and max_len must be at least 1".into()));
    }
    let (sos, eos) = (model.sos(), model.eos());
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        step_scores: Vec::new(),
        state: model.initial_state(),
        finished: false,
    }];
    let mut done = Vec::new();
    for _ in 0..max_len {
        let mut expanded = Vec::with_capacity(live.len());
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (parent, hyp) in live.iter().enumerate() {
            let (state, log_probs) = model.step(&hyp.state, hyp.last(sos))?;
            for (k, &lp) in log_probs.iter().enumerate() {
                if k != sos {
                    candidates.push((hyp.score + lp, parent, k));
                }
            }
            expanded.push((state, log_probs));
        }
        let key = |&(score, parent, k): &(f64, usize, usize)| {
            let hyp: &Hypothesis<M::State> = &live[parent];
            (score + length_penalty * (hyp.tokens.len() + 1) as f64, parent, k)
        };
        candidates.sort_by(|a, b| {
            let ((sa, pa, ka), (sb, pb, kb)) = (key(a), key(b));
            sb.total_cmp(&sa)
                .then_with(|| live[pa].tokens.cmp(&live[pb].tokens))
                .then_with(|| ka.cmp(&kb))
        });
        candidates.truncate(beam);
        let mut next = Vec::with_capacity(candidates.len());
        for (score, parent, k) in candidates {
            let p = &live[parent];
            let (state, log_probs) = &expanded[parent];
            let mut tokens = p.tokens.clone();
            tokens.push(k);
            let mut step_scores = p.step_scores.clone();
            step_scores.push(log_probs[k]);
            let hyp = Hypothesis {
                tokens,
                score,
                step_scores,
                state: state.clone(),
                finished: k == eos,
            };
            if hyp.finished {
                done.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    if done.is_empty() {
        done = live;
    }
    done.sort_by(|a, b| {
        rank_order(
            a.ranking_score(length_penalty),
            &a.tokens,
            b.ranking_score(length_penalty),
            &b.tokens,
        )
    });
    Ok(done)
}

/// Picks the most probable class (lowest index on ties) until `<eos>` or
/// `max_len` tokens.
pub fn greedy_decode<M: StepModel>(model: &M, max_len: usize) -> Result<Hypothesis<M::State>> {
    let (sos, eos) = (model.sos(), model.eos());
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        step_scores: Vec::new(),
        state: model.initial_state(),
        finished: false,
    };
    while hyp.tokens.len() < max_len && !hyp.finished {
        let (state, log_probs) = model.step(&hyp.state, hyp.last(sos))?;
        let mut best: Option<usize> = None;
        for (k, &lp) in log_probs.iter().enumerate() {
            if k != sos && best.map_or(true, |b| lp > log_probs[b]) {
                best = Some(k);
            }
        }
        let k = best.ok_or_else(|| Error::Contract("decoder has no emittable class".into()))?;
        hyp.score += log_probs[k];
        hyp.step_scores.push(log_probs[k]);
        hyp.tokens.push(k);
        hyp.state = state;
        hyp.finished = k == eos;
    }
    Ok(hyp)
}

/// Recomputes a token sequence's log-probability by stepping the model
/// through it.
pub fn rescore<M: StepModel>(model: &M, tokens: &[usize]) -> Result<f64> {
    let mut state = model.initial_state();
    let mut prev = model.sos();
    let mut total = 0.0;
    for &k in tokens {
        let (next, log_probs) = model.step(&state, prev)?;
        total += log_probs
            .get(k)
            .ok_or_else(|| Error::Contract(format!("token {k} outside the model's classes")))?;
        state = next;
        prev = k;
    }
    Ok(total)
}

/// Maps decoder classes back to subword units and restores words.
pub fn hypothesis_to_words(tokens: &[usize], vocab: &SubwordVocab) -> Result<String> {
    let k = vocab.num_units();
    let (sos, eos) = (k, k + 1);
    let mut units = Vec::with_capacity(tokens.len());
    for (pos, &t) in tokens.iter().enumerate() {
        match t {
            t if t == sos && pos == 0 => {}
            t if t == eos => {}
            t if t < k => units.push(vocab.units()[t].as_str()),
            t => return Err(Error::Contract(format!("token {t} at position {pos} is not a subword unit"))),
        }
    }
    Ok(detokenize(&units).text)
}

/// Beam search over one utterance's features with the trained model.
pub fn decode_features<'m>(
    model: &'m Model,
    features: &Tensor,
    beam: usize,
    max_len: Option<usize>,
    length_penalty: f64,
) -> Result<Vec<Hypothesis<DecoderState>>> {
    let h = crate::encoder::encode_eval(model, features)?;
    let scorer = AttentionScorer::new(model, h)?;
    let max_len = max_len.unwrap_or_else(|| default_max_len(scorer.frames()));
    beam_search(&scorer, beam, max_len, length_penalty)
}

/// Greedy counterpart of [`decode_features`].
pub fn greedy_features(model: &Model, features: &Tensor, max_len: Option<usize>) -> Result<Hypothesis<DecoderState>> {
    let h = crate::encoder::encode_eval(model, features)?;
    let scorer = AttentionScorer::new(model, h)?;
    let max_len = max_len.unwrap_or_else(|| default_max_len(scorer.frames()));
    greedy_decode(&scorer, max_len)
}

/// Attention weights of every step while emitting `tokens`, one `1 × L`
/// row per token.
pub fn attention_matrix(model: &Model, features: &Tensor, tokens: &[usize]) -> Result<Vec<Tensor>> {
    let h = crate::encoder::encode_eval(model, features)?;
    let scorer = AttentionScorer::new(model, h)?;
    let mut state = scorer.initial_state();
    let mut prev = scorer.sos();
    let mut rows = Vec::with_capacity(tokens.len());
    for &k in tokens {
        let (next, _) = scorer.step(&state, prev)?;
        rows.push(next.a_prev.clone());
        state = next;
        prev = k;
    }
    Ok(rows)
}

/// One n-best row.
#[derive(Clone, Debug, PartialEq)]
pub struct NBestEntry {
    pub utt_id: String,
    pub rank: usize,
    pub score: f64,
    pub words: String,
}

/// `utt_id\trank\tscore\twords` lines; ranks start at 1.
pub fn format_nbest(entries: &[NBestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let _ = writeln!(out, "{}\t{}\t{:.6}\t{}", e.utt_id, e.rank, e.score, e.words);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Deterministic model emitting a fixed sequence with probability 1.
    struct Rigged {
        seq: Vec<usize>,
        classes: usize,
    }

    impl StepModel for Rigged {
        type State = usize;
        fn num_classes(&self) -> usize {
            self.classes
        }
        fn sos(&self) -> usize {
            self.classes - 2
        }
        fn eos(&self) -> usize {
            self.classes - 1
        }
        fn initial_state(&self) -> usize {
            0
        }
        fn step(&self, &pos: &usize, _prev: usize) -> Result<(usize, Vec<f64>)> {
            let mut lp = vec![f64::NEG_INFINITY; self.classes];
            lp[self.seq.get(pos).copied().unwrap_or(self.eos())] = 0.0;
            Ok((pos + 1, lp))
        }
    }

    #[test]
    fn rigged_model_sequence() {
        let m = Rigged { seq: vec![0, 1, 4], classes: 5 };
        let hyps = beam_search(&m, 3, 10, 0.0).unwrap();
        assert_eq!(hyps[0].tokens, vec![0, 1, 4]);
        assert_eq!(hyps[0].score, 0.0);
        assert!(hyps[0].finished);
        assert_eq!(greedy_decode(&m, 10).unwrap().tokens, vec![0, 1, 4]);
    }

    #[test]
    fn max_len_forces_a_stop() {
        let m = Rigged { seq: vec![0, 1, 4], classes: 5 };
        let g = greedy_decode(&m, 1).unwrap();
        assert_eq!(g.tokens, vec![0]);
        assert!(!g.finished);
        let b = beam_search(&m, 1, 1, 0.0).unwrap();
        assert_eq!(b[0].tokens, vec![0]);
    }

    #[test]
    fn words_from_tokens() {
        let alphabet = crate::tokenizer::Alphabet::new('a'..='z').unwrap();
        let corpus = crate::tokenizer::word_counts(["that that neither neither"]);
        let vocab = crate::tokenizer::learn_bpe(&corpus, 0, alphabet).unwrap();
        let units = vocab.segment_sentence("that neither", Default::default()).unwrap();
        let classes: Vec<usize> = vocab.ids(&units).unwrap().into_iter().map(|id| id - 1).collect();
        let mut tokens = classes.clone();
        tokens.push(vocab.num_units() + 1);
        assert_eq!(hypothesis_to_words(&tokens, &vocab).unwrap(), "that neither");
        assert_eq!(hypothesis_to_words(&[], &vocab).unwrap(), "");
        assert!(hypothesis_to_words(&[vocab.num_units() + 2], &vocab).is_err());
    }
}
