//! Synthetic speech-like corpus for end-to-end tests and demos.
//!
//! Each vocabulary word is a fixed sequence of frame templates. An
//! utterance concatenates words, holds each template for a few frames,
//! adds Gaussian noise and a per-speaker offset, and pads with near-silent
//! frames between words.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{write_feature_file, Utterance};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub num_words: usize,
    pub dim: usize,
    pub templates_per_word: (usize, usize),
    pub frames_per_template: (usize, usize),
    pub words_per_utterance: (usize, usize),
    pub word_length: (usize, usize),
    pub noise: f64,
    pub speaker_offset: f64,
    pub num_speakers: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            num_words: 20,
            dim: 8,
            templates_per_word: (3, 5),
            frames_per_template: (3, 4),
            words_per_utterance: (2, 6),
            word_length: (3, 6),
            noise: 0.25,
            speaker_offset: 0.3,
            num_speakers: 8,
            train_size: 2000,
            dev_size: 200,
            seed: 7,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("templates_per_word", self.templates_per_word),
            ("frames_per_template", self.frames_per_template),
            ("words_per_utterance", self.words_per_utterance),
            ("word_length", self.word_length),
        ];
        for (name, (lo, hi)) in ranges {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("toy.{name} must be a non-empty positive range")));
            }
        }
        if self.num_words == 0 || self.dim == 0 || self.num_speakers == 0 {
            return Err(Error::Config("toy corpus needs words, speakers and a feature dimension".into()));
        }
        if 26usize.saturating_pow(self.word_length.1 as u32) < 2 * self.num_words {
            return Err(Error::Config("toy.word_length too short for num_words distinct words".into()));
        }
        Ok(())
    }
}

/// A word and its template sequence (`templates × dim`).
#[derive(Clone, Debug)]
pub struct ToyWord {
    pub text: String,
    pub templates: Tensor,
}

#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub words: Vec<ToyWord>,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
}

fn in_range(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.gen_range(lo..=hi)
}

fn make_words(config: &ToyConfig, rng: &mut ChaCha8Rng) -> Vec<ToyWord> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut seen = std::collections::BTreeSet::new();
    let mut words = Vec::with_capacity(config.num_words);
    while words.len() < config.num_words {
        let len = in_range(rng, config.word_length);
        let text: String = (0..len).map(|_| char::from(b'A' + rng.gen_range(0..26u8))).collect();
        if !seen.insert(text.clone()) {
            continue;
        }
        let n = in_range(rng, config.templates_per_word);
        let data: Vec<f64> = (0..n * config.dim).map(|_| normal.sample(rng)).collect();
        words.push(ToyWord {
            text,
            templates: Tensor::new(vec![n, config.dim], data).expect("template shape"),
        });
    }
    words
}

fn make_utterance(
    id: String,
    config: &ToyConfig,
    words: &[ToyWord],
    offsets: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Utterance {
    let noise = Normal::new(0.0, config.noise.max(1e-12)).expect("noise sigma");
    let speaker = rng.gen_range(0..config.num_speakers);
    let count = in_range(rng, config.words_per_utterance);
    let chosen: Vec<&ToyWord> = (0..count).map(|_| words.choose(rng).expect("words")).collect();
    let mut frames: Vec<Vec<f64>> = Vec::new();
    let silence = |rng: &mut ChaCha8Rng, frames: &mut Vec<Vec<f64>>, n: usize| {
        for _ in 0..n {
            frames.push((0..config.dim).map(|_| 0.2 * noise.sample(rng)).collect());
        }
    };
    silence(rng, &mut frames, 2);
    for (i, w) in chosen.iter().enumerate() {
        if i > 0 {
            let gap = rng.gen_range(0..=2);
            silence(rng, &mut frames, gap);
        }
        for t in 0..w.templates.rows() {
            let hold = in_range(rng, config.frames_per_template);
            for _ in 0..hold {
                frames.push(
                    w.templates
                        .row_slice(t)
                        .iter()
                        .map(|&v| v + noise.sample(rng))
                        .collect(),
                );
            }
        }
    }
    silence(rng, &mut frames, 2);
    for f in &mut frames {
        for (v, o) in f.iter_mut().zip(&offsets[speaker]) {
            *v += o;
        }
    }
    Utterance {
        id,
        speaker_id: format!("spk{speaker:02}"),
        features: Tensor::from_rows(&frames).expect("frame rows"),
        transcript: chosen.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" "),
    }
}

/// Generates the whole corpus from `config.seed`.
pub fn generate(config: &ToyConfig) -> Result<ToyCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let words = make_words(config, &mut rng);
    let offset = Normal::new(0.0, config.speaker_offset.max(1e-12)).expect("offset sigma");
    let offsets: Vec<Vec<f64>> = (0..config.num_speakers)
        .map(|_| (0..config.dim).map(|_| offset.sample(&mut rng)).collect())
        .collect();
    let train = (0..config.train_size)
        .map(|i| make_utterance(format!("train-{i:05}"), config, &words, &offsets, &mut rng))
        .collect();
    let dev = (0..config.dev_size)
        .map(|i| make_utterance(format!("dev-{i:05}"), config, &words, &offsets, &mut rng))
        .collect();
    Ok(ToyCorpus { words, train, dev })
}

/// Writes `name.tsv` plus one feature file per utterance under `dir/feats`.
pub fn write_manifest(dir: &Path, name: &str, utterances: &[Utterance]) -> Result<PathBuf> {
    let feats = dir.join("feats");
    fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
    let mut manifest = String::from("# utt_id\tspeaker_id\tsource_path\ttranscript\n");
    for u in utterances {
        let rel = format!("feats/{}.feat", u.id);
        write_feature_file(&dir.join(&rel), &u.features)?;
        let _ = writeln!(manifest, "{}\t{}\t{rel}\t{}", u.id, u.speaker_id, u.transcript);
    }
    let path = dir.join(format!("{name}.tsv"));
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
