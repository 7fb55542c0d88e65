//! Trains the desk-profile model on the synthetic toy corpus and reports
//! dev WER per epoch.
//!
//! `cargo run --release --example toy_train -- [epochs] [lambda] [seed] [target_wer|none]`

use std::time::Instant;

use subword_asr::config::{DecoderConfig, EncoderConfig, HybridConfig};
use subword_asr::features::accumulate_and_normalize;
use subword_asr::hybrid::{train_loop, Example};
use subword_asr::model::{Model, ModelConfig};
use subword_asr::tokenizer::{learn_bpe, word_counts, Alphabet, OovPolicy};
use subword_asr::toy::{generate, ToyConfig};

fn main() -> subword_asr::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().map_or(30, |s| s.parse().expect("epochs"));
    let lambda = args.get(1).map_or(0.2, |s| s.parse().expect("lambda"));
    let seed = args.get(2).map_or(1, |s| s.parse().expect("seed"));
    let target = match args.get(3).map(String::as_str) {
        Some("none") => None,
        Some(s) => Some(s.parse().expect("target_wer")),
        None => Some(5.0),
    };

    let corpus = generate(&ToyConfig::default())?;
    let (train, _) = accumulate_and_normalize(corpus.train)?;
    let (dev, _) = accumulate_and_normalize(corpus.dev)?;
    let counts = word_counts(train.iter().map(|u| u.transcript.as_str()));
    let vocab = learn_bpe(&counts, 100, Alphabet::default())?;
    println!("{} subword units", vocab.num_units());

    let to_examples = |utts: &[subword_asr::features::Utterance]| -> subword_asr::Result<Vec<Example>> {
        utts.iter().map(|u| Example::from_utterance(u, &vocab, OovPolicy::Reject)).collect()
    };
    let (train, dev) = (to_examples(&train)?, to_examples(&dev)?);
    let config = ModelConfig {
        input_dim: 8,
        num_units: vocab.num_units(),
        encoder: EncoderConfig::desk(),
        decoder: DecoderConfig::desk(),
    };
    let mut model = Model::init(config, seed, 0.1)?;
    println!("{} parameters", model.num_parameters());
    let hybrid = HybridConfig {
        lambda,
        epochs,
        seed,
        target_dev_wer: target,
        ..HybridConfig::default()
    };
    let start = Instant::now();
    let report = train_loop(&mut model, &train, &dev, &vocab, &hybrid, None)?;
    for m in &report.epochs {
        println!("epoch {:>2}  train {:.4}  dev {:.4}  WER {:6.2}%", m.epoch, m.train_loss, m.dev_loss, m.dev_wer);
    }
    println!("{:.1}s total", start.elapsed().as_secs_f64());
    Ok(())
}
