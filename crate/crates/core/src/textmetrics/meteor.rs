//! METEOR restricted to exact unigram matches (no stemming, no synonyms).
//!
//! The alignment always has the maximum number of matches; among those it
//! looks for the fewest chunks with a depth-first branch-and-bound search.
//! Exhaustive chunk minimisation is NP-hard in general, so the search stops
//! after [`SEARCH_BUDGET`] nodes and keeps the best alignment found. The first
//! leaf visited is the leftmost, chunk-extending greedy alignment.

use std::collections::HashMap;

const ALPHA: f64 = 0.9;
const BETA: f64 = 3.0;
const GAMMA: f64 = 0.5;

pub const SEARCH_BUDGET: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    /// `(candidate index, reference index)`, ascending by candidate index.
    pub pairs: Vec<(usize, usize)>,
    pub chunks: usize,
}

impl Alignment {
    pub fn matches(&self) -> usize {
        self.pairs.len()
    }
}

struct Search {
    cand: Vec<Option<usize>>, // word id per candidate token, None if absent from reference
    ref_ids: Vec<usize>,
    positions: Vec<Vec<usize>>, // reference positions per word id
    used: Vec<bool>,
    skips_left: Vec<usize>,
    current: Vec<Option<usize>>,
    best: Option<(usize, Vec<Option<usize>>)>,
    nodes: usize,
}

impl Search {
    fn run(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        if let Some((best, _)) = &self.best {
            if chunks >= *best || self.nodes >= SEARCH_BUDGET {
                return;
            }
        }
        self.nodes += 1;
        if i == self.cand.len() {
            self.best = Some((chunks, self.current.clone()));
            return;
        }
        let Some(w) = self.cand[i] else {
            self.current[i] = None;
            self.run(i + 1, None, chunks);
            return;
        };

        // Continue the running chunk first.
        let ext = prev
            .map(|j| j + 1)
            .filter(|&j| j < self.ref_ids.len() && self.ref_ids[j] == w && !self.used[j]);
        if let Some(j) = ext {
            self.take(i, j, chunks);
        }
        for k in 0..self.positions[w].len() {
            let j = self.positions[w][k];
            if Some(j) == ext || self.used[j] {
                continue;
            }
            self.take(i, j, chunks + 1);
        }
        if self.skips_left[w] > 0 {
            self.skips_left[w] -= 1;
            self.current[i] = None;
            self.run(i + 1, None, chunks);
            self.skips_left[w] += 1;
        }
    }

    fn take(&mut self, i: usize, j: usize, chunks: usize) {
        self.used[j] = true;
        self.current[i] = Some(j);
        self.run(i + 1, Some(j), chunks);
        self.used[j] = false;
        self.current[i] = None;
    }
}

/// Maximum exact-match alignment with (budget-limited) fewest chunks.
pub fn align_exact<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Alignment {
    let mut vocab: HashMap<&str, usize> = HashMap::new();
    let mut ref_ids = Vec::with_capacity(reference.len());
    for t in reference {
        let n = vocab.len();
        ref_ids.push(*vocab.entry(t.as_ref()).or_insert(n));
    }
    let mut positions = vec![Vec::new(); vocab.len()];
    for (j, &w) in ref_ids.iter().enumerate() {
        positions[w].push(j);
    }
    let cand: Vec<Option<usize>> = candidate.iter().map(|t| vocab.get(t.as_ref()).copied()).collect();
    let mut cand_counts = vec![0usize; vocab.len()];
    for w in cand.iter().flatten() {
        cand_counts[*w] += 1;
    }
    let skips_left = cand_counts
        .iter()
        .zip(&positions)
        .map(|(&c, p)| c.saturating_sub(p.len()))
        .collect();

    let mut search = Search {
        current: vec![None; cand.len()],
        used: vec![false; ref_ids.len()],
        cand,
        ref_ids,
        positions,
        skips_left,
        best: None,
        nodes: 0,
    };
    search.run(0, None, 0);
    let (chunks, assignment) = search.best.expect("search always reaches a leaf");
    Alignment {
        pairs: assignment
            .into_iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (i, j)))
            .collect(),
        chunks,
    }
}

/// Exact-match METEOR: `Fmean * (1 - 0.5 * (chunks / m)^3)` with
/// `Fmean = 10PR / (R + 9P)`.
pub fn meteor<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let al = align_exact(candidate, reference);
    let m = al.matches() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = p * r / (ALPHA * p + (1.0 - ALPHA) * r);
    let penalty = GAMMA * (al.chunks as f64 / m).powf(BETA);
    fmean * (1.0 - penalty)
}
