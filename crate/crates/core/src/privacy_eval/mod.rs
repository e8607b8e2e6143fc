//! Privacy evaluation of a synthetic corpus.
//!
//! Unlinkability: each synthetic post is used as a web-search query, results
//! that do not point at reddit are dropped, the remaining pages are fetched and
//! scored against the synthetic text, and the post is discarded when its best
//! METEOR score exceeds a threshold.
//!
//! Indistinguishability: see [`survey`].

pub mod survey;
pub mod web;

use std::collections::HashMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use survey::{
    chi_square_gof, chi_square_gof_with, chi_square_sf, default_expected, gamma_q, read_survey_csv, tally_survey,
    ChiSquareForm, ChiSquareReport, SetTally, SurveyResponse, SurveyTally,
};
pub use web::{
    html_to_text, HttpPageFetcher, HttpSearchClient, MockWeb, PageFetcher, SearchClient, SearchFixture, SearchResult,
};

use crate::error::{Error, Result};
use crate::textmetrics::{pair_report_tokens, tokenize};

pub const DEFAULT_MAX_QUERY_CHARS: usize = 256;
pub const MIN_QUERY_CHARS: usize = 32;

/// Single-line query of at most `max_chars` characters (clamped to at least
/// [`MIN_QUERY_CHARS`]). Quotes and line breaks become spaces, runs of
/// whitespace collapse, and a long text is cut at the last word boundary that
/// fits. A single word longer than the limit is cut mid-word.
pub fn build_query(synthetic_text: &str, max_chars: usize) -> String {
    let max_chars = max_chars.max(MIN_QUERY_CHARS);
    let cleaned: String = synthetic_text
        .chars()
        .map(|c| match c {
            '"' | '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{00AB}' | '\u{00BB}' => ' ',
            c if c.is_whitespace() => ' ',
            c => c,
        })
        .collect();
    let mut out = String::new();
    let mut len = 0usize;
    for word in cleaned.split_whitespace() {
        let wlen = word.chars().count();
        let needed = if out.is_empty() { wlen } else { wlen + 1 };
        if len + needed > max_chars {
            if out.is_empty() {
                out = word.chars().take(max_chars).collect();
            }
            break;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
        len += needed;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnlinkOptions {
    /// Search results to inspect per post.
    pub k: usize,
    /// A post is discarded when its best METEOR score is strictly above this.
    pub threshold: f64,
    pub max_query_chars: usize,
    /// A result counts when its host equals one of these or is a subdomain.
    pub reddit_hosts: Vec<String>,
    pub parallelism: usize,
}

impl Default for UnlinkOptions {
    fn default() -> Self {
        Self {
            k: 10,
            threshold: 0.5,
            max_query_chars: DEFAULT_MAX_QUERY_CHARS,
            reddit_hosts: vec!["reddit.com".into(), "redd.it".into()],
            parallelism: 4,
        }
    }
}

impl UnlinkOptions {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must be in [0, 1], got {}",
                self.threshold
            )));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        Ok(())
    }
}

/// True if `url` is http(s) and its host is one of `hosts` or a subdomain of one.
pub fn is_reddit_url(url: &str, hosts: &[String]) -> bool {
    let Ok(parsed) = url::Url::parse(url) else {
        return false;
    };
    if !matches!(parsed.scheme(), "http" | "https") {
        return false;
    }
    let Some(host) = parsed.host_str() else {
        return false;
    };
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    hosts.iter().any(|h| {
        let h = h.to_ascii_lowercase();
        host == h || host.ends_with(&format!(".{h}"))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Kept,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlinkabilityRecord {
    pub synthetic_id: String,
    /// False when the search itself failed; such records can be retried.
    pub queried: bool,
    pub reddit_hits: usize,
    pub pages_scored: usize,
    pub fetch_failures: usize,
    pub max_bleu3: Option<f64>,
    pub max_meteor: Option<f64>,
    pub max_rouge_l: Option<f64>,
    pub max_cosine: Option<f64>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn fmax(acc: Option<f64>, v: f64) -> Option<f64> {
    Some(acc.map_or(v, |a| a.max(v)))
}

/// Search, filter to reddit, fetch and score one synthetic post.
pub fn unlink_scan(
    synthetic_id: &str,
    synthetic_text: &str,
    search: &dyn SearchClient,
    fetcher: &dyn PageFetcher,
    opts: &UnlinkOptions,
) -> UnlinkabilityRecord {
    let mut rec = UnlinkabilityRecord {
        synthetic_id: synthetic_id.to_string(),
        queried: false,
        reddit_hits: 0,
        pages_scored: 0,
        fetch_failures: 0,
        max_bleu3: None,
        max_meteor: None,
        max_rouge_l: None,
        max_cosine: None,
        verdict: Verdict::Kept,
        error: None,
    };
    let query = build_query(synthetic_text, opts.max_query_chars);
    let results = match search.search(&query, opts.k) {
        Ok(r) => r,
        Err(e) => {
            warn!("search failed for {synthetic_id}: {e}");
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    rec.queried = true;
    let synthetic_tokens = tokenize(synthetic_text);
    for result in results.iter().take(opts.k) {
        if !is_reddit_url(&result.url, &opts.reddit_hosts) {
            continue;
        }
        rec.reddit_hits += 1;
        let page = match fetcher.fetch(&result.url) {
            Ok(p) => p,
            Err(e) => {
                warn!("fetch failed for {}: {e}", result.url);
                rec.fetch_failures += 1;
                continue;
            }
        };
        let report = pair_report_tokens(&synthetic_tokens, &tokenize(&page));
        rec.pages_scored += 1;
        rec.max_bleu3 = fmax(rec.max_bleu3, report.bleu3);
        rec.max_meteor = fmax(rec.max_meteor, report.meteor);
        rec.max_rouge_l = fmax(rec.max_rouge_l, report.rouge_l);
        rec.max_cosine = fmax(rec.max_cosine, report.cosine);
    }
    rec.verdict = verdict_for(rec.max_meteor, opts.threshold);
    rec
}

pub fn verdict_for(max_meteor: Option<f64>, threshold: f64) -> Verdict {
    match max_meteor {
        Some(m) if m > threshold => Verdict::Discarded,
        _ => Verdict::Kept,
    }
}

/// Scans `(id, text)` pairs with at most `opts.parallelism` posts in flight;
/// records come back in input order.
pub fn unlink_corpus(
    posts: &[(String, String)],
    search: &dyn SearchClient,
    fetcher: &dyn PageFetcher,
    opts: &UnlinkOptions,
) -> Result<Vec<UnlinkabilityRecord>> {
    opts.validate()?;
    let scan = || {
        posts
            .par_iter()
            .map(|(id, text)| unlink_scan(id, text, search, fetcher, opts))
            .collect()
    };
    Ok(
        match rayon::ThreadPoolBuilder::new().num_threads(opts.parallelism).build() {
            Ok(pool) => pool.install(scan),
            Err(_) => scan(),
        },
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdAccounting {
    pub before: usize,
    pub discarded: usize,
    pub after: usize,
    /// Kept posts whose search failed, so they were never actually checked.
    pub kept_unqueried: usize,
}

/// Drops every item whose record says [`Verdict::Discarded`]. Every item needs
/// a record, matched by `id_of(item) == synthetic_id`.
pub fn apply_threshold<T>(
    items: Vec<T>,
    records: &[UnlinkabilityRecord],
    id_of: impl Fn(&T) -> &str,
) -> Result<(Vec<T>, ThresholdAccounting)> {
    let by_id: HashMap<&str, &UnlinkabilityRecord> = records.iter().map(|r| (r.synthetic_id.as_str(), r)).collect();
    let before = items.len();
    let mut kept = Vec::with_capacity(before);
    let mut kept_unqueried = 0;
    for item in items {
        let rec = by_id
            .get(id_of(&item))
            .ok_or_else(|| Error::MissingRecord(id_of(&item).to_string()))?;
        if rec.verdict == Verdict::Kept {
            kept_unqueried += usize::from(!rec.queried);
            kept.push(item);
        }
    }
    let after = kept.len();
    Ok((
        kept,
        ThresholdAccounting {
            before,
            discarded: before - after,
            after,
            kept_unqueried,
        },
    ))
}
