//! Byte-pair-encoded subword units.
//!
//! Words are rendered as their characters followed by the boundary symbol
//! `_`; learning repeatedly merges the most frequent adjacent pair. Text is
//! segmented by greedy longest match against the unit set, and restored by
//! splitting the concatenated units at each boundary.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOUNDARY: char = '_';
pub const BLANK_TOKEN: &str = "<blank>";
pub const SOS_TOKEN: &str = "<sos>";
pub const EOS_TOKEN: &str = "<eos>";
const MERGE_HEADER: &str = "#version 1";

/// What to do with characters outside the alphabet when segmenting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OovPolicy {
    #[default]
    Reject,
    SkipWithWarning,
}

/// Ordered set of characters words may contain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet(Vec<char>);

impl Default for Alphabet {
    /// `A`–`Z` plus the apostrophe.
    fn default() -> Self {
        Self(('A'..='Z').chain(std::iter::once('\'')).collect())
    }
}

impl Alphabet {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for c in chars {
            if c == BOUNDARY || c.is_whitespace() {
                return Err(Error::Config(format!("alphabet may not contain {c:?}")));
            }
            if seen.insert(c) {
                out.push(c);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("alphabet is empty".into()));
        }
        Ok(Self(out))
    }

    pub fn chars(&self) -> &[char] {
        &self.0
    }

    pub fn contains(&self, c: char) -> bool {
        self.0.contains(&c)
    }

    pub fn as_string(&self) -> String {
        self.0.iter().collect()
    }

    fn check_word(&self, word: &str) -> Result<()> {
        match word.chars().find(|&c| !self.contains(c)) {
            Some(ch) => Err(Error::OutOfAlphabet {
                ch,
                word: word.to_string(),
            }),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergeRule {
    pub left: String,
    pub right: String,
    pub rank: usize,
}

impl MergeRule {
    pub fn merged(&self) -> String {
        format!("{}{}", self.left, self.right)
    }
}

/// Learned unit inventory and the merge list that produced it.
///
/// Units are kept in a stable order: alphabet characters, the boundary, then
/// merge results by rank. Model label ids follow that order after the blank
/// (`0`): unit `i` has id `i + 1`, then `<sos>` and `<eos>` close the table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordVocab {
    alphabet: Alphabet,
    units: Vec<String>,
    merges: Vec<MergeRule>,
    index: HashMap<String, usize>,
    max_unit_chars: usize,
}

impl SubwordVocab {
    /// Character-only inventory: the alphabet plus the boundary.
    pub fn characters(alphabet: Alphabet) -> Self {
        Self::build(alphabet, Vec::new())
    }

    fn build(alphabet: Alphabet, merges: Vec<MergeRule>) -> Self {
        let mut units: Vec<String> = alphabet.chars().iter().map(|c| c.to_string()).collect();
        units.push(BOUNDARY.to_string());
        for m in &merges {
            let merged = m.merged();
            if !units.contains(&merged) {
                units.push(merged);
            }
        }
        Self::from_parts(alphabet, units, merges)
    }

    fn from_parts(alphabet: Alphabet, units: Vec<String>, merges: Vec<MergeRule>) -> Self {
        let index = units.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        let max_unit_chars = units.iter().map(|u| u.chars().count()).max().unwrap_or(1);
        Self {
            alphabet,
            units,
            merges,
            index,
            max_unit_chars,
        }
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    pub fn contains(&self, unit: &str) -> bool {
        self.index.contains_key(unit)
    }

    /// Number of subword units `K` (blank, sos and eos excluded).
    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    pub fn blank_id(&self) -> usize {
        0
    }

    pub fn sos_id(&self) -> usize {
        self.units.len() + 1
    }

    pub fn eos_id(&self) -> usize {
        self.units.len() + 2
    }

    /// Size of the full id table: blank, units, sos, eos.
    pub fn table_len(&self) -> usize {
        self.units.len() + 3
    }

    pub fn unit_id(&self, unit: &str) -> Option<usize> {
        self.index.get(unit).map(|i| i + 1)
    }

    /// Unit string for a model id; the reserved ids map to their tokens.
    pub fn token(&self, id: usize) -> Option<&str> {
        match id {
            0 => Some(BLANK_TOKEN),
            i if i <= self.units.len() => Some(&self.units[i - 1]),
            i if i == self.sos_id() => Some(SOS_TOKEN),
            i if i == self.eos_id() => Some(EOS_TOKEN),
            _ => None,
        }
    }

    pub fn ids(&self, units: &[String]) -> Result<Vec<usize>> {
        units
            .iter()
            .map(|u| {
                self.unit_id(u)
                    .ok_or_else(|| Error::Contract(format!("unit {u:?} is not in the vocabulary")))
            })
            .collect()
    }

    /// Greedy left-to-right longest-match segmentation of one word.
    pub fn segment(&self, word: &str, policy: OovPolicy) -> Result<Vec<String>> {
        let mut chars: Vec<char> = Vec::with_capacity(word.len() + 1);
        for c in word.chars() {
            if self.alphabet.contains(c) {
                chars.push(c);
            } else if policy == OovPolicy::SkipWithWarning {
                log::warn!("skipping out-of-alphabet character {c:?} in {word:?}");
            } else {
                return Err(Error::OutOfAlphabet {
                    ch: c,
                    word: word.to_string(),
                });
            }
        }
        chars.push(BOUNDARY);
        let mut out = Vec::new();
        let mut pos = 0;
        let mut buf = String::new();
        while pos < chars.len() {
            let longest = (pos + self.max_unit_chars).min(chars.len());
            let mut taken = None;
            for end in (pos + 1..=longest).rev() {
                buf.clear();
                buf.extend(&chars[pos..end]);
                if self.contains(&buf) {
                    taken = Some(end);
                    break;
                }
            }
            // Single characters are always units, so a match always exists.
            let end = taken.expect("single characters are always units");
            out.push(buf.clone());
            pos = end;
        }
        Ok(out)
    }

    /// Segments every whitespace-separated word of `text`, in order.
    pub fn segment_sentence(&self, text: &str, policy: OovPolicy) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for (i, word) in text.split_whitespace().enumerate() {
            let units = self.segment(word, policy).map_err(|e| match e {
                Error::OutOfAlphabet { ch, word } => Error::Contract(format!(
                    "word {i} ({word:?}): character {ch:?} is not in the alphabet"
                )),
                other => other,
            })?;
            out.extend(units);
        }
        Ok(out)
    }

    /// Merge file: `#version 1` then one `left right` pair per line, by rank.
    pub fn merges_to_string(&self) -> String {
        let mut out = String::from(MERGE_HEADER);
        out.push('\n');
        for m in &self.merges {
            let _ = writeln!(out, "{} {}", m.left, m.right);
        }
        out
    }

    /// Unit list: one `unit id` line per entry of the id table.
    pub fn units_to_string(&self) -> String {
        let mut out = String::new();
        for id in 0..self.table_len() {
            let _ = writeln!(out, "{} {id}", self.token(id).expect("id in table"));
        }
        out
    }

    pub fn save(&self, merges_path: &Path, units_path: &Path) -> Result<()> {
        fs::write(merges_path, self.merges_to_string()).map_err(|e| Error::io(merges_path, e))?;
        fs::write(units_path, self.units_to_string()).map_err(|e| Error::io(units_path, e))
    }

    /// Reads a merge file and unit list written by [`SubwordVocab::save`].
    pub fn load(merges_path: &Path, units_path: &Path) -> Result<Self> {
        let merges_text = fs::read_to_string(merges_path).map_err(|e| Error::io(merges_path, e))?;
        let units_text = fs::read_to_string(units_path).map_err(|e| Error::io(units_path, e))?;
        let merges = parse_merges(&merges_text, merges_path)?;
        let units = parse_units(&units_text, units_path)?;
        let alphabet = Alphabet::new(
            units
                .iter()
                .filter(|u| u.chars().count() == 1 && *u != &BOUNDARY.to_string())
                .filter_map(|u| u.chars().next()),
        )?;
        let vocab = Self::from_parts(alphabet, units, merges);
        vocab.validate().map_err(|msg| Error::parse(units_path, 0, msg))?;
        Ok(vocab)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !self.contains(&BOUNDARY.to_string()) {
            return Err("unit list lacks the boundary symbol".into());
        }
        for m in &self.merges {
            for part in [&m.left, &m.right, &m.merged()] {
                if !self.contains(part) {
                    return Err(format!("merge {} {} uses unknown unit {part:?}", m.left, m.right));
                }
            }
        }
        Ok(())
    }
}

fn parse_merges(text: &str, path: &Path) -> Result<Vec<MergeRule>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim() == MERGE_HEADER => {}
        _ => return Err(Error::parse(path, 1, format!("expected {MERGE_HEADER:?} header"))),
    }
    let mut merges = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => merges.push(MergeRule {
                left: l.to_string(),
                right: r.to_string(),
                rank: merges.len(),
            }),
            _ => return Err(Error::parse(path, i + 1, "expected \"left right\"")),
        }
    }
    Ok(merges)
}

fn parse_units(text: &str, path: &Path) -> Result<Vec<String>> {
    let mut table = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (unit, id) = line
            .rsplit_once(' ')
            .ok_or_else(|| Error::parse(path, i + 1, "expected \"unit id\""))?;
        let id: usize = id
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad id {id:?}")))?;
        if id != table.len() {
            return Err(Error::parse(path, i + 1, format!("expected id {}, found {id}", table.len())));
        }
        table.push(unit.to_string());
    }
    let n = table.len();
    if n < 4 || table[0] != BLANK_TOKEN || table[n - 2] != SOS_TOKEN || table[n - 1] != EOS_TOKEN {
        return Err(Error::parse(path, 1, "unit table must be <blank>, units…, <sos>, <eos>"));
    }
    Ok(table[1..n - 2].to_vec())
}

/// Learns up to `num_merges` merges from a word-frequency table.
///
/// Pair frequencies count every adjacent occurrence weighted by word count.
/// Ties go to the lexicographically smallest `(left, right)`. Learning stops
/// early once no pair occurs at least twice.
pub fn learn_bpe(corpus: &BTreeMap<String, u64>, num_merges: usize, alphabet: Alphabet) -> Result<SubwordVocab> {
    let mut words: Vec<(Vec<String>, u64)> = Vec::with_capacity(corpus.len());
    for (word, &count) in corpus {
        alphabet.check_word(word)?;
        let mut symbols: Vec<String> = word.chars().map(|c| c.to_string()).collect();
        symbols.push(BOUNDARY.to_string());
        words.push((symbols, count));
    }

    let mut merges = Vec::with_capacity(num_merges);
    while merges.len() < num_merges {
        let mut counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for (symbols, count) in &words {
            for pair in symbols.windows(2) {
                *counts.entry((pair[0].as_str(), pair[1].as_str())).or_default() += count;
            }
        }
        // BTreeMap iterates in (left, right) order, so the first maximum wins ties.
        let best = counts
            .iter()
            .fold(None::<((&str, &str), u64)>, |best, (&pair, &n)| match best {
                Some((_, m)) if m >= n => best,
                _ => Some((pair, n)),
            });
        let Some(((left, right), freq)) = best else { break };
        if freq < 2 {
            break;
        }
        let rule = MergeRule {
            left: left.to_string(),
            right: right.to_string(),
            rank: merges.len(),
        };
        log::debug!("merge {} {} (freq {freq})", rule.left, rule.right);
        let merged = rule.merged();
        for (symbols, _) in &mut words {
            apply_merge(symbols, &rule.left, &rule.right, &merged);
        }
        merges.push(rule);
    }
    Ok(SubwordVocab::build(alphabet, merges))
}

fn apply_merge(symbols: &mut Vec<String>, left: &str, right: &str, merged: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            symbols[i] = merged.to_string();
            symbols.remove(i + 1);
        }
        i += 1;
    }
}

/// Word-frequency table of whitespace-separated transcripts.
pub fn word_counts<'a>(transcripts: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for line in transcripts {
        for w in line.split_whitespace() {
            *counts.entry(w.to_string()).or_default() += 1;
        }
    }
    counts
}

/// Words restored from a unit sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Detokenized {
    pub text: String,
    /// The last word had no closing boundary.
    pub partial_tail: bool,
}

/// Concatenates `units` and splits at each boundary symbol.
pub fn detokenize<S: AsRef<str>>(units: &[S]) -> Detokenized {
    let joined: String = units.iter().map(AsRef::as_ref).collect();
    let mut words: Vec<&str> = joined.split(BOUNDARY).collect();
    let tail = words.pop().unwrap_or("");
    let partial_tail = !tail.is_empty();
    if partial_tail {
        words.push(tail);
    }
    Detokenized {
        text: words.into_iter().filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" "),
        partial_tail,
    }
}
