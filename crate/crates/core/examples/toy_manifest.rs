//! Writes the synthetic toy corpus as feature files plus train/dev
//! manifests and a transcript list, ready for the command-line tool.
//!
//! `cargo run --release --example toy_manifest -- <out_dir> [train_size] [dev_size]`

use std::path::PathBuf;

use subword_asr::toy::{generate, write_manifest, ToyConfig};

fn main() -> subword_asr::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "toy-data".into()));
    let defaults = ToyConfig::default();
    let config = ToyConfig {
        train_size: args.next().map_or(defaults.train_size, |s| s.parse().expect("train_size")),
        dev_size: args.next().map_or(defaults.dev_size, |s| s.parse().expect("dev_size")),
        ..defaults
    };
    let corpus = generate(&config)?;
    let train = write_manifest(&dir, "train", &corpus.train)?;
    let dev = write_manifest(&dir, "dev", &corpus.dev)?;
    let text: String = corpus.train.iter().map(|u| format!("{}\n", u.transcript)).collect();
    let transcripts = dir.join("train.txt");
    std::fs::write(&transcripts, text).map_err(|e| subword_asr::Error::io(&transcripts, e))?;
    println!("words: {}", corpus.words.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" "));
    println!("{}\n{}\n{}", train.display(), dev.display(), transcripts.display());
    Ok(())
}
