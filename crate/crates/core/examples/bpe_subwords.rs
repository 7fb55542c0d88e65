//! Learns byte-pair merges from a few transcripts and compares subword and
//! character segmentations of one sentence.
//!
//! `cargo run --example bpe_subwords -- [num_merges]`

use subword_asr::tokenizer::{detokenize, learn_bpe, word_counts, Alphabet, OovPolicy, SubwordVocab};

const CORPUS: &[&str] = &[
    "THAT NEITHER OF THEM HAD CROSSED THE THRESHOLD SINCE THE DARK DAY",
    "THE OTHER ONE HAD CROSSED THE RIVER BEFORE THEM",
    "NEITHER THE FATHER NOR THE MOTHER SPOKE OF THAT DAY",
    "THEY SAT THERE UNTIL THE DARK CAME",
];

fn main() -> subword_asr::Result<()> {
    let merges = std::env::args().nth(1).map_or(30, |s| s.parse().expect("num_merges"));
    let vocab = learn_bpe(&word_counts(CORPUS.iter().copied()), merges, Alphabet::default())?;
    println!("{} merges, {} units", vocab.merges().len(), vocab.num_units());
    for (i, m) in vocab.merges().iter().take(10).enumerate() {
        println!("  merge {:>2}: {} + {} -> {}", i + 1, m.left, m.right, m.merged());
    }

    let sentence = CORPUS[0];
    let chars = SubwordVocab::characters(Alphabet::default()).segment_sentence(sentence, OovPolicy::Reject)?;
    let subwords = vocab.segment_sentence(sentence, OovPolicy::Reject)?;
    println!("characters ({}): {}", chars.len(), chars.join(" "));
    println!("subwords   ({}): {}", subwords.len(), subwords.join(" "));
    println!("ids: {:?}", vocab.ids(&subwords)?);
    println!("round trip: {}", detokenize(&subwords).text);
    Ok(())
}
