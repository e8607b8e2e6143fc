//! Post ingestion and the filtering cascade that turns a raw user-history dump
//! into an annotation-ready sample.
//!
//! Stages run in a fixed order: NSFW blocklist, first-person marker, minimum
//! length, then seeded uniform sampling. Every stage is a pure, order-preserving
//! subsequence filter; [`run_filter_pipeline`] records row and unique-author
//! counts after each one in a [`FilterLedger`].

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{self, LoadMode, Loaded, SkippedLine};

/// Identifier stored in the ledger for the sampling procedure below. Bump it if
/// the RNG or the index-selection routine ever changes.
pub const SAMPLING_ALGORITHM: &str = "chacha8-seed_from_u64/rand-0.8-index-sample/sorted";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostKind {
    #[default]
    Post,
    Comment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub author: String,
    pub subreddit: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub kind: PostKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub over_18: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub nsfw_subreddits: BTreeSet<String>,
    pub pronoun_lexicon: Vec<String>,
    pub min_words: usize,
    pub sample_fraction: f64,
    pub sample_seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            nsfw_subreddits: BTreeSet::new(),
            pronoun_lexicon: ["i", "me", "myself", "my", "mine", "we", "us", "our", "ours"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            min_words: 3,
            sample_fraction: 0.05,
            sample_seed: 0,
        }
    }
}

impl FilterConfig {
    /// Checks the invariants and lowercases the blocklist and lexicon.
    pub fn validated(mut self) -> Result<Self> {
        if self.pronoun_lexicon.is_empty() {
            return Err(Error::Config("pronoun_lexicon must not be empty".into()));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "sample_fraction must be in (0, 1], got {}",
                self.sample_fraction
            )));
        }
        if self.min_words == 0 {
            return Err(Error::Config("min_words must be at least 1".into()));
        }
        self.nsfw_subreddits = self.nsfw_subreddits.iter().map(|s| s.trim().to_lowercase()).collect();
        for w in &mut self.pronoun_lexicon {
            *w = w.trim().to_lowercase();
        }
        Ok(self)
    }

    /// Adds every non-empty, non-comment line of a blocklist file.
    pub fn load_blocklist(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for line in text.lines() {
            let name = line.trim();
            if name.is_empty() || name.starts_with('#') {
                continue;
            }
            let name = name.strip_prefix("r/").unwrap_or(name);
            self.nsfw_subreddits.insert(name.to_lowercase());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: String,
    pub rows: usize,
    pub unique_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterLedger {
    pub stages: Vec<StageCount>,
    pub sampling_algorithm: String,
    pub sample_seed: u64,
    pub sample_fraction: f64,
    /// Free-form provenance notes (e.g. how the author set was chosen upstream).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl FilterLedger {
    fn push(&mut self, stage: &str, posts: &[Post]) {
        self.stages.push(StageCount {
            stage: stage.to_string(),
            rows: posts.len(),
            unique_users: unique_authors(posts),
        });
    }
}

pub fn unique_authors(posts: &[Post]) -> usize {
    posts.iter().map(|p| p.author.as_str()).collect::<HashSet<_>>().len()
}

/// Loads posts from JSONL. Records with an empty or duplicate `id` are treated
/// like malformed lines.
pub fn load_posts(path: &Path, mode: LoadMode) -> Result<Loaded<Post>> {
    let Loaded { records, mut skipped } = jsonl::read_jsonl::<Post>(path, mode)?;
    let mut seen = HashSet::new();
    let mut posts = Vec::with_capacity(records.len());
    for (idx, post) in records.into_iter().enumerate() {
        let problem = if post.id.is_empty() {
            Some("empty id".to_string())
        } else if !seen.insert(post.id.clone()) {
            Some(format!("duplicate id {:?}", post.id))
        } else {
            None
        };
        match (problem, mode) {
            (None, _) => posts.push(post),
            (Some(message), LoadMode::Strict) => return Err(Error::InvalidRecord { index: idx, message }),
            (Some(message), LoadMode::Lenient) => skipped.push(SkippedLine { line: idx + 1, message }),
        }
    }
    Ok(Loaded {
        records: posts,
        skipped,
    })
}

pub fn filter_nsfw(posts: &[Post], config: &FilterConfig) -> Vec<Post> {
    posts
        .iter()
        .filter(|p| p.over_18 != Some(true))
        .filter(|p| !config.nsfw_subreddits.contains(&p.subreddit.to_lowercase()))
        .cloned()
        .collect()
}

/// True if the lowercased text, split on non-alphanumeric boundaries, contains
/// a lexicon word.
pub fn has_first_person_marker(text: &str, lexicon: &[String]) -> bool {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .any(|tok| lexicon.iter().any(|w| w == tok))
}

pub fn filter_first_person(posts: &[Post], config: &FilterConfig) -> Vec<Post> {
    posts
        .iter()
        .filter(|p| has_first_person_marker(&p.text, &config.pronoun_lexicon))
        .cloned()
        .collect()
}

pub fn filter_min_length(posts: &[Post], config: &FilterConfig) -> Vec<Post> {
    posts
        .iter()
        .filter(|p| p.text.split_whitespace().count() >= config.min_words)
        .cloned()
        .collect()
}

/// Number of rows kept by [`sample_fraction`] for an input of `n` rows.
pub fn sample_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// Seeded uniform sample without replacement; output keeps input order.
pub fn sample_fraction(posts: &[Post], config: &FilterConfig) -> Vec<Post> {
    let n = posts.len();
    let amount = sample_size(n, config.sample_fraction);
    if amount == n {
        return posts.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.sample_seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, amount).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| posts[i].clone()).collect()
}

/// `Subreddit: r/<name>` on the first line, then the post text. Not idempotent.
pub fn augment_with_subreddit(post: &Post) -> String {
    format!("Subreddit: r/{}\n{}", post.subreddit, post.text)
}

pub fn run_filter_pipeline(posts: &[Post], config: &FilterConfig) -> (Vec<Post>, FilterLedger) {
    let mut ledger = FilterLedger {
        stages: Vec::with_capacity(5),
        sampling_algorithm: SAMPLING_ALGORITHM.to_string(),
        sample_seed: config.sample_seed,
        sample_fraction: config.sample_fraction,
        metadata: BTreeMap::new(),
    };
    ledger.push("input", posts);
    let kept = filter_nsfw(posts, config);
    ledger.push("nsfw", &kept);
    let kept = filter_first_person(&kept, config);
    ledger.push("first_person", &kept);
    let kept = filter_min_length(&kept, config);
    ledger.push("min_length", &kept);
    let kept = sample_fraction(&kept, config);
    ledger.push("sample", &kept);
    (kept, ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn post(id: &str, sub: &str, text: &str) -> Post {
        Post {
            id: id.into(),
            author: format!("u_{id}"),
            subreddit: sub.into(),
            text: text.into(),
            created_at: None,
            kind: PostKind::Post,
            over_18: None,
        }
    }

    fn cfg() -> FilterConfig {
        FilterConfig::default()
    }

    #[test]
    fn nsfw_empty_blocklist_is_identity() {
        let posts = vec![post("1", "a", "x"), post("2", "b", "y")];
        assert_eq!(filter_nsfw(&posts, &cfg()), posts);
    }

    #[test]
    fn nsfw_set_difference() {
        let posts = vec![post("1", "a", "x"), post("2", "b", "y"), post("3", "c", "z")];
        let mut c = cfg();
        c.nsfw_subreddits.insert("b".into());
        let subs: Vec<_> = filter_nsfw(&posts, &c).into_iter().map(|p| p.subreddit).collect();
        assert_eq!(subs, vec!["a", "c"]);
    }

    #[test]
    fn nsfw_case_insensitive() {
        let mut c = cfg();
        c.nsfw_subreddits.insert("gonewild".into());
        for casing in ["GoneWild", "gonewild", "GONEWILD", "gOnEwIlD"] {
            assert!(filter_nsfw(&[post("1", casing, "x")], &c).is_empty(), "{casing}");
        }
    }

    #[test]
    fn nsfw_honors_over_18_flag() {
        let mut p = post("1", "fine", "x");
        p.over_18 = Some(true);
        assert!(filter_nsfw(&[p], &cfg()).is_empty());
    }

    #[test]
    fn first_person_examples() {
        let c = cfg();
        assert_eq!(filter_first_person(&[post("1", "a", "I went home")], &c).len(), 1);
        assert!(filter_first_person(&[post("1", "a", "The committee decided")], &c).is_empty());
        let mut only_mine = cfg();
        only_mine.pronoun_lexicon = vec!["mine".into()];
        assert!(filter_first_person(&[post("1", "a", "determine the cause")], &only_mine).is_empty());
        assert!(filter_first_person(&[post("1", "a", "it was examined")], &only_mine).is_empty());
        assert_eq!(
            filter_first_person(&[post("1", "a", "that's MINE!")], &only_mine).len(),
            1
        );
    }

    #[test]
    fn contraction_counts_as_first_person() {
        assert!(has_first_person_marker("I'm tired", &cfg().pronoun_lexicon));
    }

    #[test]
    fn min_length_boundaries() {
        let c = cfg();
        assert!(filter_min_length(&[post("1", "a", "ok")], &c).is_empty());
        assert_eq!(filter_min_length(&[post("1", "a", "a b c")], &c).len(), 1);
        let mut one = cfg();
        one.min_words = 1;
        let posts = vec![post("1", "a", "  "), post("2", "a", ""), post("3", "a", "x")];
        let kept = filter_min_length(&posts, &one);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "3");
    }

    #[test]
    fn sample_identity_at_full_fraction() {
        let posts: Vec<_> = (0..20).map(|i| post(&i.to_string(), "a", "x")).collect();
        let mut c = cfg();
        c.sample_fraction = 1.0;
        assert_eq!(sample_fraction(&posts, &c), posts);
    }

    #[test]
    fn sample_size_matches_reported_count() {
        assert_eq!(sample_size(65_282, 0.05), 3264);
    }

    #[test]
    fn sample_is_seed_deterministic() {
        let posts: Vec<_> = (0..1000).map(|i| post(&i.to_string(), "a", "x")).collect();
        let mut c = cfg();
        c.sample_seed = 7;
        let a = sample_fraction(&posts, &c);
        let b = sample_fraction(&posts, &c);
        assert_eq!(a, b);
        c.sample_seed = 8;
        assert_ne!(a, sample_fraction(&posts, &c));
        assert_eq!(a.len(), 50);
    }

    #[test]
    fn augmentation_format() {
        assert_eq!(
            augment_with_subreddit(&post("1", "lgbt", "hello")),
            "Subreddit: r/lgbt\nhello"
        );
        assert_eq!(augment_with_subreddit(&post("1", "lgbt", "")), "Subreddit: r/lgbt\n");
    }

    #[test]
    fn validated_rejects_bad_fraction() {
        let mut c = cfg();
        c.sample_fraction = 0.0;
        assert!(c.clone().validated().is_err());
        c.sample_fraction = 1.5;
        assert!(c.validated().is_err());
        let mut c = cfg();
        c.pronoun_lexicon.clear();
        assert!(c.validated().is_err());
    }

    #[test]
    fn all_pass_pipeline_is_identity() {
        let posts: Vec<_> = (0..5).map(|i| post(&i.to_string(), "a", "I am here today")).collect();
        let mut c = cfg();
        c.sample_fraction = 1.0;
        let (out, ledger) = run_filter_pipeline(&posts, &c);
        assert_eq!(out, posts);
        assert!(ledger.stages.iter().all(|s| s.rows == 5 && s.unique_users == 5));
    }

    fn arb_post() -> impl Strategy<Value = Post> {
        (
            "[a-z]{1,6}",
            prop::sample::select(vec!["a", "b", "NSFW", "c"]),
            prop::collection::vec(
                prop::sample::select(vec!["i", "we", "the", "cat", "mine", "examined", "x"]),
                0..6,
            ),
        )
            .prop_map(|(author, sub, words)| Post {
                id: String::new(),
                author,
                subreddit: sub.to_string(),
                text: words.join(" "),
                created_at: None,
                kind: PostKind::Post,
                over_18: None,
            })
    }

    proptest! {
        #[test]
        fn ledger_rows_non_increasing(mut posts in prop::collection::vec(arb_post(), 0..60), seed in any::<u64>(), frac in 0.01f64..=1.0) {
            for (i, p) in posts.iter_mut().enumerate() { p.id = i.to_string(); }
            let mut c = cfg();
            c.nsfw_subreddits.insert("nsfw".into());
            c.sample_seed = seed;
            c.sample_fraction = frac;
            let (out, ledger) = run_filter_pipeline(&posts, &c);
            for w in ledger.stages.windows(2) {
                prop_assert!(w[1].rows <= w[0].rows);
            }
            // Subsequence of the input, same order.
            let mut it = posts.iter();
            for p in &out {
                prop_assert!(it.any(|q| q == p));
            }
            let staged = sample_fraction(&filter_min_length(&filter_first_person(&filter_nsfw(&posts, &c), &c), &c), &c);
            prop_assert_eq!(out, staged);
        }

        #[test]
        fn first_person_matches_token_oracle(text in "[a-zA-Z' .,!]{0,40}") {
            let lex = cfg().pronoun_lexicon;
            let lower = text.to_lowercase();
            let mut tokens = Vec::new();
            let mut cur = String::new();
            for ch in lower.chars() {
                if ch.is_alphanumeric() { cur.push(ch) } else if !cur.is_empty() { tokens.push(std::mem::take(&mut cur)) }
            }
            if !cur.is_empty() { tokens.push(cur) }
            let expected = tokens.iter().any(|t| lex.contains(t));
            prop_assert_eq!(has_first_person_marker(&text, &lex), expected);
        }
    }
}
