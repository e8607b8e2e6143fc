//! Reference implementations and fixtures shared by the integration tests.
//!
//! Everything here is written independently of the library: different data
//! structures, no shared helpers, brute force where the input is small.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use dforge::annotation::{PiiCategory, PiiSpan};

/// Hand-built (candidate, reference) pairs, already lowercase and
/// space-separated.
pub const ORACLE_PAIRS: [(&str, &str); 50] = [
    ("the cat sat", "the cat sat on the mat"),
    ("the cat sat on the mat", "the cat sat on the mat"),
    ("a x b", "a b"),
    ("a b", "a b"),
    ("a b c d", "a c d"),
    ("a b", "a c"),
    ("dog", "cat"),
    ("the dog ran home", "the cat ran away"),
    ("i moved to ohio last year", "last year i moved to texas"),
    ("my sister got married", "my brother got married in may"),
    (
        "we paid off our mortgage",
        "we finally paid off the mortgage on our house",
    ),
    ("the the the", "the cat the mat"),
    ("cat", "cat"),
    ("a", "a b c d e f"),
    ("a b c d e f", "a"),
    ("i am a nurse in boston", "i work as a nurse in boston"),
    ("i am 25 and single", "i am single and 25"),
    ("my mom is a teacher", "my dad is a teacher too"),
    (
        "coming out to my parents went well",
        "coming out to my parents went better than expected",
    ),
    ("he said no", "she said yes"),
    ("one two three four five six", "six five four three two one"),
    ("one two three four five six", "one two three four five six seven"),
    ("a b a b a b", "a b a b"),
    ("a b a b", "b a b a b a"),
    ("i hate mondays so much", "mondays are the worst i hate them"),
    ("the quick brown fox jumps", "the quick brown dog jumps"),
    (
        "the quick brown fox jumps over the lazy dog",
        "the lazy dog sleeps while the quick brown fox jumps",
    ),
    (
        "my doctor said i have diabetes",
        "i was diagnosed with diabetes by my doctor",
    ),
    ("just got my degree in nursing", "i just got my nursing degree"),
    ("living in london with two kids", "two kids and living in london"),
    ("x y z", "z y x"),
    ("x y z", "x y z x y z"),
    ("x", "y"),
    ("new job new city new me", "new city new job"),
    ("i am a muslim woman from cairo", "i am a christian man from lagos"),
    ("lost my job at the bank today", "got fired from the bank today"),
    ("our son turned five yesterday", "our daughter turned six last week"),
    ("a b c a b c", "a b c"),
    ("a b c", "c b a b c"),
    ("i love my wife", "i love my husband"),
    ("i love my wife", "my wife loves me"),
    ("the the", "the"),
    ("the", "the the"),
    ("engineer at google for ten years", "ten years at google as an engineer"),
    ("my gf and i broke up", "my boyfriend and i broke up last night"),
    ("a b c d e", "e d c b a"),
    ("a b c d e", "a b x d e"),
    ("recently retired after 30 years", "retired recently after thirty years"),
    ("we adopted a puppy", "we adopted a cat and a puppy"),
    ("no overlap here", "completely different words"),
];

pub fn toks(s: &str) -> Vec<String> {
    s.split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
}

fn ngrams(tokens: &[String], n: usize) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    if tokens.len() < n {
        return out;
    }
    for start in 0..=tokens.len() - n {
        let key = tokens[start..start + n].join("\u{1}");
        *out.entry(key).or_insert(0) += 1;
    }
    out
}

/// Unsmoothed sentence BLEU; orders the candidate is too short for are left
/// out of the mean.
pub fn ref_bleu(cand: &[String], reference: &[String], max_n: usize) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let orders = max_n.min(cand.len());
    let mut product = 1.0f64;
    for n in 1..=orders {
        let c = ngrams(cand, n);
        let r = ngrams(reference, n);
        let mut hit = 0usize;
        for (g, cnt) in &c {
            hit += (*cnt).min(*r.get(g).unwrap_or(&0));
        }
        if hit == 0 {
            return 0.0;
        }
        product *= hit as f64 / (cand.len() - n + 1) as f64;
    }
    let bp = if cand.len() >= reference.len() {
        1.0
    } else {
        (1.0 - reference.len() as f64 / cand.len() as f64).exp()
    };
    bp * product.powf(1.0 / orders as f64)
}

fn lcs_rec(a: &[String], b: &[String], memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let key = (a.len(), b.len());
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let v = if a[0] == b[0] {
        1 + lcs_rec(&a[1..], &b[1..], memo)
    } else {
        lcs_rec(&a[1..], b, memo).max(lcs_rec(a, &b[1..], memo))
    };
    memo.insert(key, v);
    v
}

pub fn ref_rouge_l(cand: &[String], reference: &[String]) -> f64 {
    let l = lcs_rec(cand, reference, &mut BTreeMap::new()) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / cand.len() as f64;
    let r = l / reference.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn ref_cosine(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let vocab: BTreeSet<&String> = cand.iter().chain(reference).collect();
    let count = |v: &[String], w: &String| v.iter().filter(|t| *t == w).count() as f64;
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for w in vocab {
        let x = count(cand, w);
        let y = count(reference, w);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn enumerate_alignments(
    cand: &[String],
    reference: &[String],
    i: usize,
    used: &mut Vec<bool>,
    current: &mut Vec<Option<usize>>,
    best: &mut (usize, usize),
) {
    if i == cand.len() {
        let m = current.iter().flatten().count();
        let mut chunks = 0;
        for k in 0..current.len() {
            if let Some(j) = current[k] {
                let continues = k > 0 && current[k - 1] == Some(j.wrapping_sub(1)) && j > 0;
                if !continues {
                    chunks += 1;
                }
            }
        }
        if m > best.0 || (m == best.0 && chunks < best.1) {
            *best = (m, chunks);
        }
        return;
    }
    current.push(None);
    enumerate_alignments(cand, reference, i + 1, used, current, best);
    current.pop();
    for j in 0..reference.len() {
        if !used[j] && reference[j] == cand[i] {
            used[j] = true;
            current.push(Some(j));
            enumerate_alignments(cand, reference, i + 1, used, current, best);
            current.pop();
            used[j] = false;
        }
    }
}

/// (matches, chunks) of the maximum-match, fewest-chunk exact alignment,
/// found by trying every alignment.
pub fn brute_force_alignment(cand: &[String], reference: &[String]) -> (usize, usize) {
    let mut best = (0, usize::MAX);
    enumerate_alignments(
        cand,
        reference,
        0,
        &mut vec![false; reference.len()],
        &mut Vec::new(),
        &mut best,
    );
    best
}

pub fn ref_meteor(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let (m, chunks) = brute_force_alignment(cand, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let frag = chunks as f64 / m as f64;
    fmean * (1.0 - 0.5 * frag * frag * frag)
}

fn chars(span: &PiiSpan) -> BTreeSet<usize> {
    (span.start..span.end).collect()
}

/// Greedy one-to-one matching on explicit character sets. Returns the matched
/// pairs' (intersection, union) sizes.
pub fn ref_iaa_matches(a: &[PiiSpan], b: &[PiiSpan]) -> Vec<(usize, usize)> {
    let mut a: Vec<PiiSpan> = a.to_vec();
    let mut b: Vec<PiiSpan> = b.to_vec();
    a.sort_by_key(|s| (s.start, s.end, s.category));
    b.sort_by_key(|s| (s.start, s.end, s.category));
    let mut taken = BTreeSet::new();
    let mut out = Vec::new();
    for sa in &a {
        let ca = chars(sa);
        for (j, sb) in b.iter().enumerate() {
            if taken.contains(&j) || sa.category != sb.category {
                continue;
            }
            let cb = chars(sb);
            let inter = ca.intersection(&cb).count();
            if inter > 0 {
                taken.insert(j);
                out.push((inter, ca.union(&cb).count()));
                break;
            }
        }
    }
    out
}

/// Partial-overlap TP count with coverage measured on the gold span.
pub fn ref_span_tp(gold: &[PiiSpan], pred: &[PiiSpan], min_overlap: f64) -> usize {
    let mut gold: Vec<PiiSpan> = gold.to_vec();
    let mut pred: Vec<PiiSpan> = pred.to_vec();
    gold.sort_by_key(|s| (s.start, s.end, s.category));
    pred.sort_by_key(|s| (s.start, s.end, s.category));
    let mut taken = vec![false; gold.len()];
    let mut tp = 0;
    for p in &pred {
        let cp = chars(p);
        for (j, g) in gold.iter().enumerate() {
            if taken[j] || g.category != p.category {
                continue;
            }
            let cg = chars(g);
            let inter = cg.intersection(&cp).count();
            if inter > 0 && inter as f64 / cg.len() as f64 >= min_overlap {
                taken[j] = true;
                tp += 1;
                break;
            }
        }
    }
    tp
}

/// Ten annotator pairs over one post each.
pub fn iaa_fixture_pairs() -> Vec<(Vec<PiiSpan>, Vec<PiiSpan>)> {
    use PiiCategory::*;
    let s = PiiSpan::new;
    vec![
        (vec![s(0, 5, Gender)], vec![s(3, 8, Gender)]),
        (vec![s(0, 5, Gender)], vec![s(0, 5, Gender)]),
        (vec![s(0, 5, Gender)], vec![s(5, 9, Gender)]),
        (vec![s(0, 5, Gender)], vec![s(0, 5, Age)]),
        (vec![s(0, 10, Age)], vec![s(0, 3, Age), s(6, 10, Age)]),
        (vec![s(0, 3, Age), s(6, 10, Age)], vec![s(0, 10, Age)]),
        (
            vec![s(2, 8, Location), s(20, 30, Employment)],
            vec![s(4, 6, Location), s(25, 40, Employment), s(50, 55, MedicalInformation)],
        ),
        (vec![], vec![s(1, 2, Religion)]),
        (
            vec![s(0, 4, MaritalStatus), s(5, 9, MaritalStatus), s(10, 14, Parenthood)],
            vec![s(3, 6, MaritalStatus), s(8, 12, MaritalStatus), s(13, 20, Parenthood)],
        ),
        (
            vec![s(10, 20, DegreeDesignation), s(30, 31, Sexuality)],
            vec![
                s(0, 11, DegreeDesignation),
                s(19, 25, DegreeDesignation),
                s(30, 31, Sexuality),
            ],
        ),
    ]
}

/// Minimal xorshift generator so fuzz inputs do not depend on library RNG code.
pub struct XorShift(pub u64);

impl XorShift {
    pub fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }
}

pub fn random_spans(rng: &mut XorShift, max: usize) -> Vec<PiiSpan> {
    let cats = [PiiCategory::Age, PiiCategory::Gender, PiiCategory::Location];
    (0..rng.below(max as u64 + 1))
        .map(|_| {
            let start = rng.below(30) as usize;
            let len = 1 + rng.below(12) as usize;
            PiiSpan::new(start, start + len, cats[rng.below(3) as usize])
        })
        .collect()
}
