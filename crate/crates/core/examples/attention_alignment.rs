//! Trains a small hybrid model on synthetic unit sequences and prints the
//! location-aware attention weights of a held-out utterance as a
//! token × frame grid.
//!
//! `cargo run --release --example attention_alignment -- [epochs]`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subword_asr::config::{DecoderConfig, EncoderConfig, HybridConfig};
use subword_asr::decode::{attention_matrix, greedy_features};
use subword_asr::hybrid::{train_step, Example};
use subword_asr::model::{Model, ModelConfig};
use subword_asr::numerics::Adadelta;
use subword_asr::Tensor;

/// Each unit is a one-hot burst of 4-7 noisy frames, with 1-2 quiet
/// frames around it.
fn utterance(id: usize, rng: &mut ChaCha8Rng) -> Example {
    let targets: Vec<usize> = (0..rng.gen_range(2..=4)).map(|_| rng.gen_range(1..=3)).collect();
    let mut data = Vec::new();
    let frame = |data: &mut Vec<f64>, hot: Option<usize>, rng: &mut ChaCha8Rng| {
        data.extend((0..4).map(|d| if Some(d) == hot { 2.0 } else { 0.0 } + rng.gen_range(-0.3..0.3)));
    };
    for &unit in &targets {
        for _ in 0..rng.gen_range(1..=2) {
            frame(&mut data, None, rng);
        }
        for _ in 0..rng.gen_range(4..=7) {
            frame(&mut data, Some(unit), rng);
        }
    }
    frame(&mut data, None, rng);
    let rows = data.len() / 4;
    Example {
        id: format!("u{id}"),
        features: Tensor::new(vec![rows, 4], data).expect("frame rows"),
        targets,
        transcript: String::new(),
    }
}

fn main() -> subword_asr::Result<()> {
    let epochs = std::env::args().nth(1).map_or(40, |s| s.parse().expect("epochs"));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let train: Vec<Example> = (0..200).map(|i| utterance(i, &mut rng)).collect();
    let ex = utterance(999, &mut rng);
    let config = ModelConfig {
        input_dim: 4,
        num_units: 3,
        encoder: EncoderConfig {
            num_layers: 1,
            cells_per_direction: 32,
            subsample_layers: vec![1],
            subsample_factor: 2,
            batch_norm: true,
        },
        decoder: DecoderConfig {
            cells: 32,
            embedding_dim: 8,
            attention_dim: 32,
            conv_filters: 4,
            conv_width: 5,
        },
    };
    let mut model = Model::init(config, 1, 0.1)?;
    let mut opt = Adadelta::new(Default::default());
    let hybrid = HybridConfig { lambda: 0.2, ..HybridConfig::default() };
    for epoch in 0..epochs {
        let mut total = 0.0;
        for batch in train.chunks(hybrid.batch_size) {
            total += train_step(&mut model, &mut opt, batch, &hybrid)?.mean_loss * batch.len() as f64;
        }
        println!("epoch {:>2}: loss {:.4}", epoch + 1, total / train.len() as f64);
    }
    let hyp = greedy_features(&model, &ex.features, None)?;
    let reference: Vec<usize> = ex.targets.iter().map(|&id| id - 1).collect();
    println!("reference classes {reference:?}, greedy {:?}", hyp.tokens);
    let classes: Vec<usize> = reference.iter().copied().chain([model.config.eos_class()]).collect();
    for (k, row) in classes.iter().zip(attention_matrix(&model, &ex.features, &classes)?) {
        let cells: String = row.data().iter().map(|&a| format!("{a:5.2}")).collect();
        println!("class {k}: {cells}");
    }
    Ok(())
}
