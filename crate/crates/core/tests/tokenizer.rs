use std::collections::BTreeMap;

use proptest::prelude::*;
use subword_asr::tokenizer::{detokenize, learn_bpe, word_counts, Alphabet, OovPolicy, SubwordVocab};

fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn hand_oracle_merges_on_fixture_corpus() {
    let text = std::fs::read_to_string(fixture("tiny_transcripts.txt")).unwrap();
    let vocab = learn_bpe(&word_counts(text.lines()), 2, Alphabet::default()).unwrap();
    let expected = std::fs::read_to_string(fixture("tiny_merges.txt")).unwrap();
    assert_eq!(vocab.merges_to_string(), expected);
}

#[test]
fn pair_count_oracle() {
    let corpus: BTreeMap<String, u64> = [("abab".to_string(), 2), ("ab".to_string(), 1)].into();
    let vocab = learn_bpe(&corpus, 2, Alphabet::new("ab".chars()).unwrap()).unwrap();
    let merges: Vec<(&str, &str)> = vocab.merges().iter().map(|m| (m.left.as_str(), m.right.as_str())).collect();
    assert_eq!(merges, [("a", "b"), ("ab", "_")]);
    for u in ["a", "b", "_", "ab", "ab_"] {
        assert!(vocab.contains(u), "{u}");
    }
}

#[test]
fn stops_when_no_pair_repeats() {
    let corpus: BTreeMap<String, u64> = [("xyz".to_string(), 1)].into();
    let vocab = learn_bpe(&corpus, 10, Alphabet::new("xyz".chars()).unwrap()).unwrap();
    assert!(vocab.merges().is_empty());
}

#[test]
fn character_segmentation_of_a_sentence() {
    let sentence = "THAT NEITHER OF THEM HAD CROSSED THE THRESHOLD SINCE THE DARK DAY";
    let vocab = SubwordVocab::characters(Alphabet::default());
    let units = vocab.segment_sentence(sentence, OovPolicy::Reject).unwrap();
    let expected = "T H A T _ N E I T H E R _ O F _ T H E M _ H A D _ C R O S S E D _ T H E _ \
                    T H R E S H O L D _ S I N C E _ T H E _ D A R K _ D A Y _";
    assert_eq!(units.join(" "), expected);
    assert_eq!(detokenize(&["THAT_", "NE", "I", "THER_"]).text, "THAT NEITHER");
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = word_counts(["THE CAT SAT ON THE MAT", "THE CAT"]);
    let vocab = learn_bpe(&corpus, 6, Alphabet::default()).unwrap();
    let (m, u) = (dir.path().join("m.txt"), dir.path().join("u.txt"));
    vocab.save(&m, &u).unwrap();
    let back = SubwordVocab::load(&m, &u).unwrap();
    assert_eq!(back.units(), vocab.units());
    assert_eq!(back.merges(), vocab.merges());
}

#[test]
fn out_of_alphabet_is_rejected_or_skipped() {
    let vocab = SubwordVocab::characters(Alphabet::default());
    let err = vocab.segment_sentence("HELLO W0RLD", OovPolicy::Reject).unwrap_err();
    assert!(err.to_string().contains('0'), "{err}");
    let units = vocab.segment_sentence("HELLO W0RLD", OovPolicy::SkipWithWarning).unwrap();
    assert_eq!(detokenize(&units).text, "HELLO WRLD");
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec("[A-Z']{1,8}", 0..8).prop_map(|w| w.join(" "))
}

fn shared_vocab() -> SubwordVocab {
    let corpus = word_counts([
        "THE CAT SAT ON THE MAT AND THE DOG SAT THERE",
        "THAT NEITHER OF THEM HAD CROSSED THE THRESHOLD",
        "SINCE THE DARK DAY THEY DID NOT SPEAK OF IT",
    ]);
    learn_bpe(&corpus, 40, Alphabet::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip_and_no_longer_than_characters(s in sentence()) {
        let vocab = shared_vocab();
        let chars = SubwordVocab::characters(Alphabet::default());
        let sub = vocab.segment_sentence(&s, OovPolicy::Reject).unwrap();
        let ch = chars.segment_sentence(&s, OovPolicy::Reject).unwrap();
        prop_assert_eq!(detokenize(&sub).text, s.clone());
        prop_assert!(sub.len() <= ch.len());
        let joined: String = sub.concat();
        prop_assert_eq!(joined, s.split_whitespace().map(|w| format!("{w}_")).collect::<String>());
    }

    #[test]
    fn learning_is_deterministic(words in prop::collection::vec("[A-C]{1,5}", 1..12), merges in 0usize..8) {
        let counts = word_counts(words.iter().map(String::as_str));
        let a = learn_bpe(&counts, merges, Alphabet::default()).unwrap();
        let b = learn_bpe(&counts, merges, Alphabet::default()).unwrap();
        prop_assert_eq!(a.merges_to_string(), b.merges_to_string());
        prop_assert!(a.merges().len() <= merges);
        for m in a.merges() {
            let merged = m.left.clone() + &m.right;
            prop_assert!(a.contains(&m.left) && a.contains(&m.right) && a.contains(&merged));
        }
    }
}
