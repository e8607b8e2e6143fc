//! Web search and page fetching behind small traits, with HTTP and
//! fixture-backed implementations.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::net::{HttpPolicy, PoliteClient};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    /// 1-based position on the result page.
    pub rank: u32,
    pub url: String,
    #[serde(default)]
    pub snippet: String,
}

pub trait SearchClient: Send + Sync {
    /// At most `k` results, best first.
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchResult>>;
}

pub trait PageFetcher: Send + Sync {
    /// Visible text of the page at `url`.
    fn fetch(&self, url: &str) -> Result<String>;
}

/// Drops duplicate ranks and empty URLs, sorts by rank and keeps the first `k`.
pub fn normalize_results(mut results: Vec<SearchResult>, k: usize) -> Vec<SearchResult> {
    results.retain(|r| !r.url.trim().is_empty());
    results.sort_by_key(|r| r.rank);
    results.dedup_by_key(|r| r.rank);
    results.truncate(k);
    results
}

/// `GET <endpoint>?q=<query>&k=<k>` returning `[{rank, url, snippet}]`.
pub struct HttpSearchClient {
    endpoint: String,
    client: PoliteClient,
}

impl HttpSearchClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, policy: HttpPolicy) -> Result<Self> {
        Ok(Self {
            endpoint: endpoint.into(),
            client: PoliteClient::new(policy, api_key)?,
        })
    }
}

impl SearchClient for HttpSearchClient {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchResult>> {
        let results: Vec<SearchResult> = self
            .client
            .get_json(&self.endpoint, &[("q", query.to_string()), ("k", k.to_string())])?;
        Ok(normalize_results(results, k))
    }
}

pub struct HttpPageFetcher {
    client: PoliteClient,
}

impl HttpPageFetcher {
    /// Pages are fetched at most once per second per host by default.
    pub fn new() -> Result<Self> {
        Self::with_policy(HttpPolicy {
            timeout: Duration::from_secs(30),
            max_retries: 2,
            min_interval: Duration::from_secs(1),
            ..HttpPolicy::default()
        })
    }

    pub fn with_policy(policy: HttpPolicy) -> Result<Self> {
        Ok(Self {
            client: PoliteClient::new(policy, None)?,
        })
    }
}

impl PageFetcher for HttpPageFetcher {
    fn fetch(&self, url: &str) -> Result<String> {
        Ok(html_to_text(&self.client.get_text(url)?))
    }
}

fn decode_entity(entity: &str) -> Option<char> {
    match entity {
        "amp" => Some('&'),
        "lt" => Some('<'),
        "gt" => Some('>'),
        "quot" => Some('"'),
        "apos" => Some('\''),
        "nbsp" => Some(' '),
        _ => {
            let num = entity.strip_prefix('#')?;
            let code = match num.strip_prefix(['x', 'X']) {
                Some(hex) => u32::from_str_radix(hex, 16).ok()?,
                None => num.parse().ok()?,
            };
            char::from_u32(code)
        }
    }
}

/// Reduces HTML to visible text: drops tags, comments and the contents of
/// `script`, `style`, `noscript` and `template`, decodes common entities and
/// collapses whitespace.
pub fn html_to_text(html: &str) -> String {
    const HIDDEN: [&str; 4] = ["script", "style", "noscript", "template"];
    let lower = html.to_ascii_lowercase();
    let mut out = String::with_capacity(html.len() / 2);
    let mut i = 0;
    while i < html.len() {
        let rest = &html[i..];
        if rest.starts_with("<!--") {
            i += rest.find("-->").map_or(rest.len(), |e| e + 3);
            continue;
        }
        if rest.starts_with('<') {
            let close = rest.find('>').map_or(rest.len(), |e| e + 1);
            let tag: String = rest[1..]
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric())
                .collect::<String>()
                .to_ascii_lowercase();
            i += close;
            if HIDDEN.contains(&tag.as_str()) {
                let end_tag = format!("</{tag}");
                i = lower[i..].find(&end_tag).map_or(html.len(), |e| {
                    let after = i + e;
                    after + html[after..].find('>').map_or(html.len() - after, |g| g + 1)
                });
            }
            out.push(' ');
            continue;
        }
        if rest.starts_with('&') {
            if let Some(semi) = rest[1..].find(';').filter(|&s| s <= 10) {
                if let Some(c) = decode_entity(&rest[1..1 + semi]) {
                    out.push(c);
                    i += semi + 2;
                    continue;
                }
            }
        }
        let c = rest.chars().next().expect("non-empty remainder");
        out.push(c);
        i += c.len_utf8();
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Search fixture: `{"results": {query: [..]}, "default": [..], "self_match": false}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchFixture {
    /// Keyed by query. A key also matches any query containing it; the longest
    /// such key wins.
    pub results: BTreeMap<String, Vec<SearchResult>>,
    /// Returned when no key matches.
    pub default: Vec<SearchResult>,
    /// Every query yields one reddit URL whose page text is the query itself,
    /// plus one non-reddit URL.
    pub self_match: bool,
}

/// Offline stand-in for both the search engine and the web. Every call is
/// logged so tests can assert what was queried and fetched.
#[derive(Debug, Default)]
pub struct MockWeb {
    search: SearchFixture,
    pages: BTreeMap<String, String>,
    echoed: Mutex<BTreeMap<String, String>>,
    queries: Mutex<Vec<String>>,
    fetched: Mutex<Vec<String>>,
}

impl MockWeb {
    pub fn new(search: SearchFixture, pages: BTreeMap<String, String>) -> Self {
        Self {
            search,
            pages,
            ..Default::default()
        }
    }

    /// Loads `search.json` and `pages.json` from `dir`; either may be absent.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let search_path = dir.join("search.json");
        let pages_path = dir.join("pages.json");
        let search = if search_path.exists() {
            jsonl::read_json(&search_path)?
        } else {
            SearchFixture::default()
        };
        let pages = if pages_path.exists() {
            jsonl::read_json(&pages_path)?
        } else {
            BTreeMap::new()
        };
        Ok(Self::new(search, pages))
    }

    pub fn queries(&self) -> Vec<String> {
        self.queries.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn fetched_urls(&self) -> Vec<String> {
        self.fetched.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn lookup(&self, query: &str) -> Vec<SearchResult> {
        if let Some(r) = self.search.results.get(query) {
            return r.clone();
        }
        self.search
            .results
            .iter()
            .filter(|(key, _)| !key.is_empty() && query.contains(key.as_str()))
            .max_by_key(|(key, _)| key.len())
            .map(|(_, r)| r.clone())
            .unwrap_or_else(|| self.search.default.clone())
    }
}

fn fnv(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

impl SearchClient for MockWeb {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchResult>> {
        self.queries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(query.to_string());
        let results = if self.search.self_match {
            let url = format!("https://www.reddit.com/r/mock/comments/{:016x}/", fnv(query));
            self.echoed
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .insert(url.clone(), query.to_string());
            vec![
                SearchResult {
                    rank: 1,
                    url,
                    snippet: String::new(),
                },
                SearchResult {
                    rank: 2,
                    url: format!("https://example.com/{:016x}", fnv(query)),
                    snippet: String::new(),
                },
            ]
        } else {
            self.lookup(query)
        };
        Ok(normalize_results(results, k))
    }
}

impl PageFetcher for MockWeb {
    fn fetch(&self, url: &str) -> Result<String> {
        self.fetched
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(url.to_string());
        if let Some(text) = self.echoed.lock().unwrap_or_else(|e| e.into_inner()).get(url) {
            return Ok(text.clone());
        }
        self.pages
            .get(url)
            .map(|p| html_to_text(p))
            .ok_or_else(|| Error::Transport(format!("mock: no page for {url}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(rank: u32, url: &str) -> SearchResult {
        SearchResult {
            rank,
            url: url.into(),
            snippet: String::new(),
        }
    }

    #[test]
    fn html_stripping() {
        let html = "<html><head><style>p{color:red}</style><script>var x = '<b>';</script></head>\
                    <body><p>Hello&nbsp;<b>world</b> &amp; friends</p><!-- hidden --><div>bye&#33;</div></body></html>";
        assert_eq!(html_to_text(html), "Hello world & friends bye!");
        assert_eq!(html_to_text("plain text"), "plain text");
        assert_eq!(html_to_text("a &bogus; b"), "a &bogus; b");
        assert_eq!(html_to_text("<SCRIPT>x</SCRIPT>ok"), "ok");
        assert_eq!(html_to_text("unterminated <p"), "unterminated");
    }

    #[test]
    fn normalize_sorts_dedups_and_truncates() {
        let out = normalize_results(vec![r(3, "c"), r(1, "a"), r(2, ""), r(1, "dup"), r(4, "d")], 2);
        assert_eq!(out, vec![r(1, "a"), r(3, "c")]);
    }

    #[test]
    fn mock_lookup_prefers_longest_contained_key() {
        let mut results = BTreeMap::new();
        results.insert("cat".to_string(), vec![r(1, "u1")]);
        results.insert("my cat".to_string(), vec![r(1, "u2")]);
        let web = MockWeb::new(
            SearchFixture {
                results,
                default: vec![r(1, "fallback")],
                self_match: false,
            },
            BTreeMap::new(),
        );
        assert_eq!(web.search("my cat is great", 10).unwrap()[0].url, "u2");
        assert_eq!(web.search("a cat", 10).unwrap()[0].url, "u1");
        assert_eq!(web.search("dog", 10).unwrap()[0].url, "fallback");
        assert_eq!(web.queries().len(), 3);
        assert!(web.fetch("nowhere").is_err());
        assert_eq!(web.fetched_urls(), vec!["nowhere"]);
    }

    #[test]
    fn self_match_echoes_query() {
        let web = MockWeb::new(
            SearchFixture {
                self_match: true,
                ..Default::default()
            },
            BTreeMap::new(),
        );
        let res = web.search("some query", 10).unwrap();
        assert_eq!(res.len(), 2);
        assert_eq!(web.fetch(&res[0].url).unwrap(), "some query");
        assert_eq!(web.search("q", 1).unwrap().len(), 1);
    }
}
