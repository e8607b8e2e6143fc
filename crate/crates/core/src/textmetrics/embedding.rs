use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::tokenize;
use crate::error::{Error, Result};
use crate::net::{HttpPolicy, PoliteClient};

/// Source of token-level and pooled text vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn token_vectors(&self, text: &str) -> Result<Vec<Vec<f64>>>;
    fn pooled_vector(&self, text: &str) -> Result<Vec<f64>>;
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Plain cosine; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BertScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Greedy max-cosine matching without idf weights or baseline rescaling.
pub fn bert_score(cand: &[Vec<f64>], refs: &[Vec<f64>]) -> Result<BertScore> {
    if cand.is_empty() || refs.is_empty() {
        return Err(Error::Empty("BERTScore needs at least one vector per side"));
    }
    let dim = cand[0].len();
    if let Some(bad) = cand.iter().chain(refs).find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch(dim, bad.len()));
    }
    let sims: Vec<Vec<f64>> = cand
        .iter()
        .map(|c| refs.iter().map(|r| cosine(c, r)).collect())
        .collect();
    let precision = sims
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / cand.len() as f64;
    let recall = (0..refs.len())
        .map(|j| sims.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / refs.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(BertScore { precision, recall, f1 })
}

/// Cosine of two pooled document vectors.
pub fn style_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(a.len(), b.len()));
    }
    if norm(a) == 0.0 || norm(b) == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(cosine(a, b))
}

/// Deterministic bag-of-hashed-tokens vectors for tests and offline runs.
/// Equal tokens map to equal vectors; the pooled vector is the token mean.
#[derive(Debug, Clone)]
pub struct HashEmbedding {
    dim: usize,
}

impl HashEmbedding {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        Self { dim }
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        // FNV-1a seed, then splitmix64 per component.
        let mut h: u64 = 0xcbf29ce484222325;
        for b in token.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        (0..self.dim)
            .map(|i| {
                let mut z = h.wrapping_add((i as u64 + 1).wrapping_mul(0x9E3779B97F4A7C15));
                z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
                z ^= z >> 31;
                (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect()
    }
}

impl EmbeddingProvider for HashEmbedding {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn token_vectors(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        Ok(tokenize(text).iter().map(|t| self.token_vector(t)).collect())
    }

    fn pooled_vector(&self, text: &str) -> Result<Vec<f64>> {
        let toks = self.token_vectors(text)?;
        let mut out = vec![0.0; self.dim];
        if toks.is_empty() {
            return Ok(out);
        }
        for v in &toks {
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
        let n = toks.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Ok(out)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pooled: bool,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Embedding endpoint client.
///
/// Token mode posts `{"texts": [text]}` and expects the token vectors of that
/// one text in `vectors`. Pooled mode posts `{"texts": [text], "pooled": true}`
/// and expects one pooled vector per input text.
pub struct HttpEmbeddingProvider {
    endpoint: String,
    dim: usize,
    client: PoliteClient,
}

impl HttpEmbeddingProvider {
    pub fn new(endpoint: impl Into<String>, dim: usize, api_key: Option<String>) -> Result<Self> {
        let policy = HttpPolicy {
            timeout: Duration::from_secs(60),
            ..HttpPolicy::default()
        };
        Ok(Self {
            endpoint: endpoint.into(),
            dim,
            client: PoliteClient::new(policy, api_key)?,
        })
    }

    fn call(&self, text: &str, pooled: bool) -> Result<Vec<Vec<f64>>> {
        let texts = [text];
        let body = EmbedRequest { texts: &texts, pooled };
        let resp: EmbedResponse = self.client.post_json(&self.endpoint, &body)?;
        if let Some(bad) = resp.vectors.iter().find(|v| v.len() != self.dim) {
            return Err(Error::DimensionMismatch(self.dim, bad.len()));
        }
        if resp.vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Transport("embedding endpoint returned non-finite values".into()));
        }
        Ok(resp.vectors)
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn token_vectors(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        self.call(text, false)
    }

    fn pooled_vector(&self, text: &str) -> Result<Vec<f64>> {
        self.call(text, true)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Transport("embedding endpoint returned no vectors".into()))
    }
}
