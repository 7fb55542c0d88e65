//! Word error rate.
//!
//! Words are compared after whitespace tokenization and upper-casing; no
//! other normalization is applied. WER may exceed 100% when insertions
//! outnumber reference words.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Minimum unit-cost alignment of `hyp` against `reference`.
///
/// Among equally cheap alignments the backtrace prefers substitution (or
/// match), then deletion, then insertion.
pub fn edit_distance<S: AsRef<str>>(reference: &[S], hyp: &[S]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let mut cost = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in cost.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        cost[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = cost[i - 1][j - 1] + usize::from(reference[i - 1].as_ref() != hyp[j - 1].as_ref());
            cost[i][j] = diag.min(cost[i - 1][j] + 1).min(cost[i][j - 1] + 1);
        }
    }
    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hyp[j - 1].as_ref();
            if cost[i][j] == cost[i - 1][j - 1] + usize::from(!same) {
                counts.substitutions += usize::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[i][j] == cost[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

/// Upper-cased whitespace tokens.
pub fn normalize_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_uppercase).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WerReport {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_words: usize,
    /// Percent.
    pub wer: f64,
}

impl fmt::Display for WerReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "WER {:.2}% (S={}, D={}, I={}, N={})",
            self.wer, self.substitutions, self.deletions, self.insertions, self.reference_words
        )
    }
}

impl WerReport {
    /// `metric\tvalue` lines.
    pub fn to_tsv(&self) -> String {
        format!(
            "wer\t{:.4}\nsubstitutions\t{}\ndeletions\t{}\ninsertions\t{}\nreference_words\t{}\n",
            self.wer, self.substitutions, self.deletions, self.insertions, self.reference_words
        )
    }
}

/// Corpus-level WER pooled over `(reference, hypothesis)` text pairs.
pub fn wer_report<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)]) -> Result<WerReport> {
    let mut report = WerReport::default();
    for (r, h) in pairs {
        let (r, h) = (normalize_words(r.as_ref()), normalize_words(h.as_ref()));
        let c = edit_distance(&r, &h);
        report.substitutions += c.substitutions;
        report.deletions += c.deletions;
        report.insertions += c.insertions;
        report.reference_words += r.len();
    }
    if report.reference_words == 0 {
        return Err(Error::Contract("WER needs at least one reference word".into()));
    }
    let errors = report.substitutions + report.deletions + report.insertions;
    report.wer = 100.0 * errors as f64 / report.reference_words as f64;
    Ok(report)
}
