//! Surface-similarity metrics (BLEU, ROUGE-L, exact-match METEOR, term-frequency
//! cosine, BLEU divergence) and embedding metrics over supplied vectors.
//!
//! All surface metrics operate on [`TokenSequence`]s from [`tokenize`], so two
//! texts are always compared under the same normalization.

mod embedding;
mod meteor;

use std::collections::HashMap;
use std::ops::Deref;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use embedding::{
    bert_score, cosine, style_similarity, BertScore, EmbeddingProvider, HashEmbedding, HttpEmbeddingProvider,
};
pub use meteor::{align_exact, meteor, Alignment};

/// Lowercased tokens from [`tokenize`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl Deref for TokenSequence {
    type Target = [String];
    fn deref(&self) -> &[String] {
        &self.0
    }
}

impl From<Vec<String>> for TokenSequence {
    fn from(v: Vec<String>) -> Self {
        TokenSequence(v)
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'
                ..='\u{201F}'
                    | '\u{2026}'
                    | '\u{2013}'
                    | '\u{2014}'
                    | '\u{00AB}'
                    | '\u{00BB}'
                    | '\u{00A1}'
                    | '\u{00BF}'
        )
}

/// Lowercase, split on Unicode whitespace, trim punctuation at both ends of
/// each token, drop empties. Internal punctuation (`don't`) survives.
pub fn tokenize(text: &str) -> TokenSequence {
    TokenSequence(
        text.split_whitespace()
            .map(|t| t.trim_matches(is_punct).to_lowercase())
            .filter(|t| !t.is_empty())
            .collect(),
    )
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(|s| s.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuOptions {
    pub max_n: usize,
    /// When set, a zero n-gram precision becomes `epsilon / total` instead of
    /// zeroing the score.
    pub epsilon: Option<f64>,
}

impl Default for BleuOptions {
    fn default() -> Self {
        Self {
            max_n: 3,
            epsilon: None,
        }
    }
}

/// Sentence-level BLEU with uniform weights and brevity penalty.
///
/// Orders for which the candidate has no n-grams (candidate shorter than `n`)
/// are left out of the geometric mean, so identical short texts still score 1.
pub fn bleu_with<S: AsRef<str>>(candidate: &[S], reference: &[S], opts: BleuOptions) -> f64 {
    assert!(opts.max_n >= 1, "BLEU order must be at least 1");
    if candidate.is_empty() {
        return 0.0;
    }
    let orders = opts.max_n.min(candidate.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let total = candidate.len() + 1 - n;
        let clipped: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if clipped == 0 {
            match opts.epsilon {
                Some(eps) => eps / total as f64,
                None => return 0.0,
            }
        } else {
            clipped as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let c = candidate.len() as f64;
    let r = reference.len() as f64;
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / orders as f64).exp()
}

pub fn bleu<S: AsRef<str>>(candidate: &[S], reference: &[S], max_n: usize) -> f64 {
    bleu_with(candidate, reference, BleuOptions { max_n, epsilon: None })
}

pub(crate) fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    2.0 * p * r / (p + r)
}

fn term_frequencies<S: AsRef<str>>(tokens: &[S]) -> HashMap<&str, f64> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_ref()).or_insert(0.0) += 1.0;
    }
    m
}

/// Cosine between term-frequency vectors; 0 if either side is empty.
pub fn cosine_tf<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let a = term_frequencies(candidate);
    let b = term_frequencies(reference);
    let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
    let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).min(1.0)
}

/// `1 - BLEU-3(synthetic → source)`.
pub fn divergence<S: AsRef<str>>(source: &[S], synthetic: &[S]) -> f64 {
    1.0 - bleu(synthetic, source, 3)
}

/// TF-cosine on raw text; the default similarity used for temperature calibration.
pub fn cosine_tf_text(a: &str, b: &str) -> f64 {
    cosine_tf(&tokenize(a), &tokenize(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub bleu3: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cosine: f64,
    pub divergence: f64,
}

/// All surface metrics for `candidate` scored against `reference`.
pub fn pair_report(candidate: &str, reference: &str) -> SimilarityReport {
    pair_report_tokens(&tokenize(candidate), &tokenize(reference))
}

pub fn pair_report_tokens(candidate: &[String], reference: &[String]) -> SimilarityReport {
    let bleu3 = bleu(candidate, reference, 3);
    SimilarityReport {
        bleu3,
        rouge_l: rouge_l(candidate, reference),
        meteor: meteor(candidate, reference),
        cosine: cosine_tf(candidate, reference),
        divergence: 1.0 - bleu3,
    }
}

/// One JSONL row of a similarity report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub id: String,
    #[serde(flatten)]
    pub report: SimilarityReport,
}

/// Scores `(id, synthetic, source)` triples in parallel; output keeps input order.
pub fn score_pairs(pairs: &[(String, String, String)]) -> Vec<SimilarityRecord> {
    pairs
        .par_iter()
        .map(|(id, synthetic, source)| SimilarityRecord {
            id: id.clone(),
            report: pair_report(synthetic, source),
        })
        .collect()
}

/// Arithmetic mean of each field; `None` for an empty slice.
pub fn mean_report(reports: &[SimilarityReport]) -> Option<SimilarityReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let sum = |f: fn(&SimilarityReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(SimilarityReport {
        bleu3: sum(|r| r.bleu3),
        rouge_l: sum(|r| r.rouge_l),
        meteor: sum(|r| r.meteor),
        cosine: sum(|r| r.cosine),
        divergence: sum(|r| r.divergence),
    })
}
