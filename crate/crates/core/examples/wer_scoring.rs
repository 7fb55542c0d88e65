//! Scores hypotheses against references and shows the pooled error counts.
//!
//! `cargo run --example wer_scoring`

use subword_asr::eval::{edit_distance, normalize_words, wer_report};

fn main() -> subword_asr::Result<()> {
    let pairs = [
        ("THE CAT SAT ON THE MAT", "THE BAT SAT THE MAT"),
        ("A DOG", "A BIG DOG"),
        ("HELLO WORLD", "hello world"),
    ];
    for (r, h) in &pairs {
        let c = edit_distance(&normalize_words(r), &normalize_words(h));
        println!("{r:<24} | {h:<20} S={} D={} I={}", c.substitutions, c.deletions, c.insertions);
    }
    let report = wer_report(&pairs)?;
    println!("{report}");
    print!("{}", report.to_tsv());
    Ok(())
}
