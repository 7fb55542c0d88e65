//! One pass/fail line per acceptance criterion. Runs as a plain binary so
//! the lines appear in order and the process exits nonzero on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::*;
use rand::Rng;
use subword_asr::attention::attention_nll;
use subword_asr::config::{DecoderConfig, EncoderConfig, HybridConfig};
use subword_asr::ctc::{brute_force_ctc, ctc_forward_backward, min_frames};
use subword_asr::decode::{beam_search, decode_features, greedy_decode, hypothesis_to_words, rescore, AttentionScorer};
use subword_asr::encoder::{encode_batch, encode_eval, update_running_stats, Mode};
use subword_asr::eval::{edit_distance, wer_report};
use subword_asr::features::{accumulate_and_normalize, Utterance};
use subword_asr::hybrid::{train_loop, train_step, utterance_forward, Example, TrainOutput};
use subword_asr::model::{Model, ModelConfig};
use subword_asr::numerics::{clip_global_norm, Adadelta, GradMap, Tape, Tensor, Var};
use subword_asr::tokenizer::{detokenize, learn_bpe, word_counts, Alphabet, OovPolicy, SubwordVocab};
use subword_asr::toy::{generate, ToyConfig};
use subword_asr::Error;

type Outcome = (bool, String);

fn main() {
    let criteria: [(usize, fn() -> Outcome); 9] = [
        (1, ctc_brute_force),
        (2, ctc_frame_identity),
        (3, gradient_suite),
        (4, lambda_endpoints),
        (5, bpe),
        (6, beam_search_oracles),
        (7, toy_end_to_end),
        (8, wer_oracle),
        (9, determinism),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|n| n.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (n, check) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        failed += usize::from(!pass);
        println!(
            "criterion {n}: {} ({:.1}s) {detail}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn ctc_brute_force() -> Outcome {
    let mut r = rng(1001);
    let start = Instant::now();
    let (mut compared, mut unalignable, mut worst) = (0, 0, 0.0f64);
    let mut agree = true;
    while compared < 500 {
        let frames = r.gen_range(1..=6);
        let k = r.gen_range(1..=3);
        let u = r.gen_range(0..=3);
        let target: Vec<usize> = (0..u).map(|_| r.gen_range(1..=k)).collect();
        let q = random_probs(&mut r, frames, k + 1);
        let brute = brute_force_ctc(&q, &target);
        match ctc_forward_backward(&q, &target) {
            Ok(lattice) => {
                worst = worst.max((lattice.log_likelihood - brute).abs());
                compared += 1;
            }
            Err(Error::Unalignable { .. }) => {
                agree &= brute == f64::NEG_INFINITY && frames < min_frames(&target);
                unalignable += 1;
            }
            Err(e) => return (false, format!("unexpected error {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        agree && worst <= 1e-10 && secs < 10.0,
        format!("{compared} cases, max |diff| {worst:.1e} (tol 1e-10), {unalignable} unalignable agreed={agree}, {secs:.2}s (limit 10s)"),
    )
}

fn ctc_frame_identity() -> Outcome {
    let mut r = rng(1002);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let u = r.gen_range(0..=3);
        let target: Vec<usize> = (0..u).map(|_| r.gen_range(1..=4)).collect();
        if min_frames(&target) > 5 {
            continue;
        }
        let q = random_probs(&mut r, 5, 5);
        let lattice = ctc_forward_backward(&q, &target).unwrap();
        let log_q = q.map(f64::ln);
        let p = lattice.log_likelihood.exp();
        for l in 0..5 {
            let at_frame = lattice.frame_log_likelihood(&log_q, l).exp();
            worst = worst.max((at_frame - p).abs() / p);
        }
    }
    (worst <= 1e-8, format!("L=5 K=4, max relative deviation {worst:.1e} over every frame (tol 1e-8)"))
}

fn gradient_suite() -> Outcome {
    let mut results: Vec<(&str, f64)> = Vec::new();
    let mut r = rng(1003);

    let logits = random_tensor(&mut r, &[6, 4], 2.0);
    results.push(("ctc", op_gradient_error(&[logits], |t, v| t.ctc_loss(v[0], &[1, 3, 3]).unwrap())));

    let (frames, d_h, d_s, d_att, n_f, w) = (6, 4, 3, 3, 2, 3);
    let inputs = vec![
        random_tensor(&mut r, &[d_att, 1], 1.0),
        random_tensor(&mut r, &[d_s, d_att], 1.0),
        random_tensor(&mut r, &[d_h, d_att], 1.0),
        random_tensor(&mut r, &[n_f, d_att], 1.0),
        random_tensor(&mut r, &[1, d_att], 1.0),
        random_tensor(&mut r, &[n_f, w], 1.0),
        random_tensor(&mut r, &[1, d_s], 1.0),
        random_probs(&mut r, 1, frames),
        random_tensor(&mut r, &[frames, d_h], 1.0),
    ];
    results.push((
        "location attention (omega W V M b F)",
        op_gradient_error(&inputs, |t, v| {
            let att = subword_asr::model::AttentionVars {
                omega: v[0],
                w: v[1],
                v: v[2],
                m: v[3],
                b: v[4],
                filters: v[5],
            };
            let hp = subword_asr::attention::project_frames(t, v[8], &att).unwrap();
            let (c, a) = subword_asr::attention::location_attention(t, v[6], v[7], v[8], hp, &att).unwrap();
            t.concat_cols(&[c, a]).unwrap()
        }),
    ));

    let lstm = |r: &mut rand_chacha::ChaCha8Rng, d: usize, c: usize| {
        vec![
            random_tensor(r, &[d, 4 * c], 0.8),
            random_tensor(r, &[c, 4 * c], 0.8),
            random_tensor(r, &[1, 4 * c], 0.8),
        ]
    };
    let mut inputs = lstm(&mut r, 3, 2);
    inputs.extend([random_tensor(&mut r, &[1, 3], 1.0), random_tensor(&mut r, &[1, 2], 1.0), random_tensor(&mut r, &[1, 2], 1.0)]);
    results.push((
        "lstm",
        op_gradient_error(&inputs, |t, v| {
            let p = subword_asr::model::LstmVars { w_x: v[0], w_h: v[1], b: v[2] };
            let (h, c) = subword_asr::encoder::lstm_step(t, v[3], v[4], v[5], &p).unwrap();
            t.concat_cols(&[h, c]).unwrap()
        }),
    ));

    let mut inputs = lstm(&mut r, 3, 2);
    inputs.extend(lstm(&mut r, 3, 2));
    inputs.push(random_tensor(&mut r, &[5, 3], 1.0));
    results.push((
        "blstm",
        op_gradient_error(&inputs, |t, v| {
            let f = subword_asr::model::LstmVars { w_x: v[0], w_h: v[1], b: v[2] };
            let b = subword_asr::model::LstmVars { w_x: v[3], w_h: v[4], b: v[5] };
            subword_asr::encoder::blstm_layer(t, v[6], &f, &b).unwrap()
        }),
    ));

    let model = tiny_model(3, 1004);
    let x = random_tensor(&mut r, &[6, 3], 1.0);
    let weights = random_tensor(&mut r, &[3, 4], 1.0);
    let (_, analytic) = encoder_loss(&model, &x, &weights);
    results.push(("encoder", model_gradient_error(&model, &["enc."], &analytic, |m| encoder_loss(m, &x, &weights).0)));

    let ex = Example {
        id: "g".into(),
        features: random_tensor(&mut r, &[8, 3], 1.0),
        targets: vec![1, 3, 2],
        transcript: String::new(),
    };
    let analytic = utterance_forward(&model, &ex, 0.3, Mode::Train, true).unwrap().grads;
    results.push((
        "hybrid",
        model_gradient_error(&model, &[""], &analytic, |m| utterance_forward(m, &ex, 0.3, Mode::Train, false).unwrap().loss.total),
    ));

    let lambda = 0.35;
    let mixed = utterance_forward(&model, &ex, lambda, Mode::Train, true).unwrap().grads;
    let ctc = utterance_forward(&model, &ex, 1.0, Mode::Train, true).unwrap().grads;
    let att = utterance_forward(&model, &ex, 0.0, Mode::Train, true).unwrap().grads;
    let mut linearity = 0.0f64;
    for (name, g) in &mixed {
        for (i, v) in g.data().iter().enumerate() {
            let expect = lambda * ctc[name].data()[i] + (1.0 - lambda) * att[name].data()[i];
            linearity = linearity.max((v - expect).abs());
        }
    }

    let pass = results.iter().all(|(_, e)| *e <= 1e-4) && linearity <= 1e-8;
    let detail = results.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    (pass, format!("relative errors (tol 1e-4, step 1e-5): {detail}; lambda linearity {linearity:.1e} (tol 1e-8)"))
}

/// One optimizer step on a single objective, written directly against the
/// tape rather than through the hybrid trainer.
fn pure_step(model: &mut Model, opt: &mut Adadelta, batch: &[Example], ctc: bool, clip: f64) {
    let (grads, stats) = {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, true);
        let xs: Vec<Var> = batch.iter().map(|e| tape.leaf_ref(&e.features, false)).collect();
        let encoded = encode_batch(&mut tape, &xs, model, &vars.layers, Mode::Train).unwrap();
        let mut total: Option<Var> = None;
        for (ex, enc) in batch.iter().zip(&encoded) {
            let loss = if ctc {
                let logits = tape.linear(enc.h, vars.ctc_w, vars.ctc_b).unwrap();
                tape.ctc_loss(logits, &ex.targets).unwrap()
            } else {
                let classes: Vec<usize> = ex.targets.iter().map(|&id| id - 1).collect();
                attention_nll(&mut tape, model, enc.h, &classes, &vars.decoder).unwrap().0
            };
            total = Some(match total {
                None => loss,
                Some(t) => tape.add(t, loss).unwrap(),
            });
        }
        let mut g = tape.backward(total.unwrap()).unwrap();
        let grads: GradMap = vars
            .by_name
            .iter()
            .map(|(n, &v)| (n.clone(), g.take(v).unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))))
            .collect();
        (grads, encoded[0].batch_stats.clone())
    };
    let mut grads = grads;
    clip_global_norm(&mut grads, clip).unwrap();
    opt.step(&mut model.params, &grads).unwrap();
    update_running_stats(model, &stats);
}

fn lambda_endpoints() -> Outcome {
    let mut r = rng(1005);
    let batch: Vec<Example> = (0..3)
        .map(|i| Example {
            id: format!("e{i}"),
            features: random_tensor(&mut r, &[8 + 2 * i, 3], 1.0),
            targets: vec![1 + i % 3, 2, 3],
            transcript: String::new(),
        })
        .collect();
    let mut verdicts = Vec::new();
    for (lambda, ctc) in [(1.0, true), (0.0, false)] {
        let cfg = HybridConfig { lambda, ..HybridConfig::default() };
        let (mut hybrid, mut pure) = (tiny_model(3, 1006), tiny_model(3, 1006));
        let (mut opt_h, mut opt_p) = (Adadelta::new(Default::default()), Adadelta::new(Default::default()));
        for _ in 0..3 {
            train_step(&mut hybrid, &mut opt_h, &batch, &cfg).unwrap();
            pure_step(&mut pure, &mut opt_p, &batch, ctc, cfg.clip_max_norm);
        }
        let identical = hybrid.params.iter().all(|(n, t)| {
            t.data().iter().zip(pure.params[n].data()).all(|(a, b)| a.to_bits() == b.to_bits())
        }) && hybrid == pure;
        verdicts.push((lambda, identical));
    }
    (
        verdicts.iter().all(|v| v.1),
        verdicts.iter().map(|(l, ok)| format!("lambda={l} bit-identical={ok}")).collect::<Vec<_>>().join(", "),
    )
}

fn bpe() -> Outcome {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let text = std::fs::read_to_string(fixture.join("tiny_transcripts.txt")).unwrap();
    let learned = learn_bpe(&word_counts(text.lines()), 2, Alphabet::default()).unwrap();
    let oracle = learned.merges_to_string() == std::fs::read_to_string(fixture.join("tiny_merges.txt")).unwrap();

    let chars = SubwordVocab::characters(Alphabet::default());
    let sentence = "THAT NEITHER OF THEM HAD CROSSED THE THRESHOLD SINCE THE DARK DAY";
    let table_row = "T H A T _ N E I T H E R _ O F _ T H E M _ H A D _ C R O S S E D _ T H E _ \
                     T H R E S H O L D _ S I N C E _ T H E _ D A R K _ D A Y _";
    let table = chars.segment_sentence(sentence, OovPolicy::Reject).unwrap().join(" ") == table_row;

    let mut r = rng(1007);
    let letters: Vec<char> = ('A'..='Z').chain(['\'']).collect();
    let word = |r: &mut rand_chacha::ChaCha8Rng| -> String {
        let n = r.gen_range(1..=8);
        (0..n).map(|_| letters[r.gen_range(0..letters.len())]).collect()
    };
    let training: Vec<String> = (0..300).map(|_| (0..6).map(|_| word(&mut r)).collect::<Vec<_>>().join(" ")).collect();
    let mut corpus: Vec<&str> = training.iter().map(String::as_str).collect();
    corpus.push(sentence);
    let vocab = learn_bpe(&word_counts(corpus), 200, Alphabet::default()).unwrap();
    let (mut round_trip, mut shorter) = (0, 0);
    for _ in 0..10_000 {
        let n = r.gen_range(0..=10);
        let s = (0..n).map(|_| word(&mut r)).collect::<Vec<_>>().join(" ");
        let sub = vocab.segment_sentence(&s, OovPolicy::Reject).unwrap();
        let ch = chars.segment_sentence(&s, OovPolicy::Reject).unwrap();
        round_trip += usize::from(detokenize(&sub).text == s);
        shorter += usize::from(sub.len() <= ch.len());
    }
    (
        oracle && table && round_trip == 10_000 && shorter == 10_000,
        format!(
            "hand-oracle merges {oracle}, character row exact {table}, round trip {round_trip}/10000, subwords <= characters {shorter}/10000"
        ),
    )
}

fn beam_search_oracles() -> Outcome {
    let scorer_input = |seed: u64, frames: usize| random_tensor(&mut rng(seed), &[frames, 3], 1.5);
    let mut beam_one = 0;
    for seed in 0..100 {
        let model = Model::init(tiny_config(3, true), 3000 + seed, 1.0).unwrap();
        let scorer = AttentionScorer::new(&model, encode_eval(&model, &scorer_input(4000 + seed, 6)).unwrap()).unwrap();
        let beam = beam_search(&scorer, 1, 8, 0.0).unwrap();
        let greedy = greedy_decode(&scorer, 8).unwrap();
        beam_one += usize::from(beam[0].tokens == greedy.tokens && beam[0].score.to_bits() == greedy.score.to_bits());
    }
    let (mut exhaustive, mut worst_rescore) = (0, 0.0f64);
    for seed in 0..30 {
        let model = Model::init(tiny_config(3, true), 5000 + seed, 1.0).unwrap();
        let scorer = AttentionScorer::new(&model, encode_eval(&model, &scorer_input(6000 + seed, 5)).unwrap()).unwrap();
        let hyps = beam_search(&scorer, 64, 3, 0.0).unwrap();
        let (tokens, score) = brute_force_best(&scorer, 3);
        exhaustive += usize::from(hyps[0].tokens == tokens && (hyps[0].score - score).abs() <= 1e-12);
        for h in beam_search(&scorer, 6, 10, 0.0).unwrap() {
            worst_rescore = worst_rescore.max((rescore(&scorer, &h.tokens).unwrap() - h.score).abs());
        }
    }
    (
        beam_one == 100 && exhaustive == 30 && worst_rescore <= 1e-9,
        format!("beam=1 equals greedy {beam_one}/100, wide beam equals exhaustive argmax (K=3, max_len=3) {exhaustive}/30, max rescoring gap {worst_rescore:.1e} (tol 1e-9)"),
    )
}

struct ToyData {
    train: Vec<Example>,
    dev: Vec<Example>,
    vocab: SubwordVocab,
}

fn toy_data(config: &ToyConfig, merges: usize) -> ToyData {
    let corpus = generate(config).unwrap();
    let (train, _) = accumulate_and_normalize(corpus.train).unwrap();
    let (dev, _) = accumulate_and_normalize(corpus.dev).unwrap();
    let vocab = learn_bpe(&word_counts(train.iter().map(|u| u.transcript.as_str())), merges, Alphabet::default()).unwrap();
    let to_examples = |utts: &[Utterance]| -> Vec<Example> {
        utts.iter().map(|u| Example::from_utterance(u, &vocab, OovPolicy::Reject).unwrap()).collect()
    };
    ToyData {
        train: to_examples(&train),
        dev: to_examples(&dev),
        vocab,
    }
}

fn desk_model(data: &ToyData, seed: u64) -> Model {
    let config = ModelConfig {
        input_dim: 8,
        num_units: data.vocab.num_units(),
        encoder: EncoderConfig::desk(),
        decoder: DecoderConfig::desk(),
    };
    Model::init(config, seed, 0.1).unwrap()
}

/// Desk recipe: 30 epochs, no early stopping. Returns the per-epoch
/// metrics (dev WER decoded with `dev_beam`), the final model's beam-20
/// dev WER and the wall seconds at the end of each epoch.
fn toy_run(data: &ToyData, lambda: f64, seed: u64, dev_beam: usize) -> (Vec<f64>, f64, Vec<f64>) {
    let start = Instant::now();
    let mut model = desk_model(data, seed);
    let cfg = HybridConfig {
        lambda,
        epochs: 30,
        seed,
        dev_beam,
        ..HybridConfig::default()
    };
    let report = train_loop(&mut model, &data.train, &data.dev, &data.vocab, &cfg, None).unwrap();
    let wers: Vec<f64> = report.epochs.iter().map(|m| m.dev_wer).collect();
    let seconds: Vec<f64> = report.epochs.iter().map(|m| m.wall_seconds).collect();
    let final_wer = if dev_beam == 20 { *wers.last().unwrap() } else { beam_wer(&model, data, 20) };
    eprintln!("toy lambda={lambda} seed={seed}: final beam-20 dev WER {final_wer:.2}% ({:.0}s)", start.elapsed().as_secs_f64());
    (wers, final_wer, seconds)
}

fn beam_wer(model: &Model, data: &ToyData, beam: usize) -> f64 {
    let pairs: Vec<(String, String)> = data
        .dev
        .iter()
        .map(|ex| {
            let best = decode_features(model, &ex.features, beam, None, 0.0).unwrap().swap_remove(0);
            (ex.transcript.clone(), hypothesis_to_words(&best.tokens, &data.vocab).unwrap())
        })
        .collect();
    wer_report(&pairs).unwrap().wer
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn toy_end_to_end() -> Outcome {
    let data = toy_data(&ToyConfig::default(), 100);
    let mut medians = Vec::new();
    let mut headline = String::new();
    let mut reached = false;
    for lambda in [0.2, 0.5] {
        let mut finals = Vec::new();
        for seed in 1..=3 {
            let headline_run = lambda == 0.2 && seed == 1;
            let (wers, final_wer, seconds) = toy_run(&data, lambda, seed, if headline_run { 20 } else { 1 });
            if headline_run {
                headline = match wers.iter().position(|&w| w <= 5.0) {
                    Some(i) => {
                        reached = seconds[i] <= 900.0;
                        format!("lambda=0.2 seed=1 first reaches beam-20 dev WER {:.2}% at epoch {} after {:.0}s", wers[i], i + 1, seconds[i])
                    }
                    None => format!("lambda=0.2 seed=1 never reaches 5% (best {:.2}%)", wers.iter().cloned().fold(f64::INFINITY, f64::min)),
                };
            }
            finals.push(final_wer);
        }
        medians.push((median(finals.clone()), finals));
    }
    let ordered = medians[1].0 >= medians[0].0;
    (
        reached && ordered,
        format!(
            "{headline} (need <=5% within 30 epochs and 900s); final beam-20 dev WER after 30 epochs, seeds 1-3: \
             lambda=0.2 {:?} median {:.2}%, lambda=0.5 {:?} median {:.2}% (need 0.5 >= 0.2)",
            medians[0].1, medians[0].0, medians[1].1, medians[1].0
        ),
    )
}

fn wer_oracle() -> Outcome {
    // Every alignment is a monotone pairing of equally many reference and
    // hypothesis positions; unpaired positions are deletions or insertions.
    let alphabet = [0u8, 1, 2];
    let mut seqs: Vec<Vec<u8>> = vec![Vec::new()];
    let mut frontier = seqs.clone();
    for _ in 0..6 {
        let next: Vec<Vec<u8>> = frontier
            .iter()
            .flat_map(|s| alphabet.iter().map(move |&w| [s.as_slice(), &[w]].concat()))
            .collect();
        seqs.extend(next.iter().cloned());
        frontier = next;
    }
    let subsets: Vec<Vec<Vec<Vec<usize>>>> = (0..=6)
        .map(|n| {
            let mut by_size = vec![Vec::new(); n + 1];
            for mask in 0u32..(1 << n) {
                let picked: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                by_size[picked.len()].push(picked);
            }
            by_size
        })
        .collect();
    let names = ["a", "b", "c"];
    let words: Vec<Vec<&str>> = seqs.iter().map(|s| s.iter().map(|&w| names[w as usize]).collect()).collect();
    let (mut pairs, mut mismatched) = (0usize, 0usize);
    for (ri, r) in seqs.iter().enumerate() {
        for (hi, h) in seqs.iter().enumerate() {
            let (n, m) = (r.len(), h.len());
            let mut best = usize::MAX;
            let mut optimal: Vec<(usize, usize, usize)> = Vec::new();
            for k in 0..=n.min(m) {
                for rs in &subsets[n][k] {
                    for hs in &subsets[m][k] {
                        let subs = rs.iter().zip(hs).filter(|(&a, &b)| r[a] != h[b]).count();
                        let cost = subs + (n - k) + (m - k);
                        if cost < best {
                            best = cost;
                            optimal.clear();
                        }
                        if cost == best && !optimal.contains(&(subs, n - k, m - k)) {
                            optimal.push((subs, n - k, m - k));
                        }
                    }
                }
            }
            let c = edit_distance(&words[ri], &words[hi]);
            if c.total() != best || !optimal.contains(&(c.substitutions, c.deletions, c.insertions)) {
                mismatched += 1;
            }
            pairs += 1;
        }
    }
    (
        mismatched == 0,
        format!("{pairs} pairs up to length 6 over 3 words, {mismatched} differ from the exhaustive alignment oracle"),
    )
}

fn determinism() -> Outcome {
    let toy = ToyConfig {
        train_size: 60,
        dev_size: 12,
        ..ToyConfig::default()
    };
    let data = toy_data(&toy, 60);
    let run = |dir: &Path| {
        let mut model = desk_model(&data, 9);
        let cfg = HybridConfig {
            epochs: 2,
            seed: 9,
            log_wall_time: false,
            ..HybridConfig::default()
        };
        let out = TrainOutput {
            dir: dir.to_path_buf(),
            metadata: Default::default(),
        };
        train_loop(&mut model, &data.train, &data.dev, &data.vocab, &cfg, Some(&out)).unwrap();
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(a.path());
    run(b.path());
    let files = ["metrics.tsv", "epoch-000.ckpt", "epoch-001.ckpt", "epoch-002.ckpt", "best.ckpt"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap())
        .collect();
    (
        differing.is_empty(),
        format!("{} files compared byte for byte, differing: {differing:?}", files.len()),
    )
}
