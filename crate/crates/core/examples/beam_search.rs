//! Beam search with a small randomly initialized model: prints the n-best
//! list, the greedy path, and each hypothesis rescored from scratch.
//!
//! `cargo run --example beam_search -- [beam] [seed]`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subword_asr::config::{DecoderConfig, EncoderConfig};
use subword_asr::decode::{beam_search, greedy_decode, rescore, AttentionScorer};
use subword_asr::encoder::encode_eval;
use subword_asr::model::{Model, ModelConfig};
use subword_asr::Tensor;

fn main() -> subword_asr::Result<()> {
    let mut args = std::env::args().skip(1);
    let beam = args.next().map_or(4, |s| s.parse().expect("beam"));
    let seed = args.next().map_or(4, |s| s.parse().expect("seed"));
    let config = ModelConfig {
        input_dim: 4,
        num_units: 3,
        encoder: EncoderConfig {
            num_layers: 1,
            cells_per_direction: 4,
            subsample_layers: vec![],
            subsample_factor: 1,
            batch_norm: true,
        },
        decoder: DecoderConfig {
            cells: 6,
            embedding_dim: 3,
            attention_dim: 5,
            conv_filters: 2,
            conv_width: 3,
        },
    };
    let model = Model::init(config, seed, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let features = Tensor::new(vec![6, 4], (0..24).map(|_| rng.gen_range(-1.5..1.5)).collect())?;
    let scorer = AttentionScorer::new(&model, encode_eval(&model, &features)?)?;

    let hyps = beam_search(&scorer, beam, 6, 0.0)?;
    println!("beam {beam}: {} hypotheses (classes 0..=2 are units, 4 is eos)", hyps.len());
    for (rank, h) in hyps.iter().enumerate().take(8) {
        println!(
            "  {:>2}. {:?} score {:.6} rescored {:.6} finished {}",
            rank + 1,
            h.tokens,
            h.score,
            rescore(&scorer, &h.tokens)?,
            h.finished
        );
    }
    let greedy = greedy_decode(&scorer, 6)?;
    println!("greedy: {:?} score {:.6}", greedy.tokens, greedy.score);
    Ok(())
}
