//! Scoring of classifier and tagger predictions, and PII-distribution
//! comparison between an original and a synthetic corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotation::{category_proportions, AnnotatedPost, PiiCategory, PiiSpan};
use crate::error::{Error, Result};
use crate::jsonl::{self, LoadMode};

/// One post-level prediction: `{id, gold: [...], pred: [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilabelExample {
    pub id: String,
    pub gold: BTreeSet<PiiCategory>,
    pub pred: BTreeSet<PiiCategory>,
}

/// Per-token predictions: `{id, tokens: [...], gold: [[...]], pred: [[...]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenPrediction {
    pub id: String,
    pub tokens: Vec<String>,
    pub gold: Vec<BTreeSet<PiiCategory>>,
    pub pred: Vec<BTreeSet<PiiCategory>>,
}

impl TokenPrediction {
    pub fn validate(&self) -> Result<()> {
        for labels in [&self.gold, &self.pred] {
            if labels.len() != self.tokens.len() {
                return Err(Error::LengthMismatch {
                    id: self.id.clone(),
                    tokens: self.tokens.len(),
                    labels: labels.len(),
                });
            }
        }
        Ok(())
    }
}

pub fn load_multilabel(path: &Path) -> Result<Vec<MultilabelExample>> {
    Ok(jsonl::read_jsonl(path, LoadMode::Strict)?.records)
}

pub fn load_token_predictions(path: &Path) -> Result<Vec<TokenPrediction>> {
    let records: Vec<TokenPrediction> = jsonl::read_jsonl(path, LoadMode::Strict)?.records;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Pool label instances over all categories.
    #[default]
    Micro,
    /// Mean of per-category scores over categories seen in gold or pred.
    Macro,
    /// Mean of per-example scores.
    Samples,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultilabelMetrics {
    pub averaging: Averaging,
    /// Fraction of examples whose predicted set equals the gold set.
    pub subset_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Confusion {
    fn add(&mut self, gold: bool, pred: bool) {
        match (gold, pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    fn prf(self) -> (f64, f64, f64) {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        let f = ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_);
        (p, r, f)
    }
}

/// Subset accuracy plus micro-averaged precision, recall and F1.
pub fn multilabel_metrics(examples: &[MultilabelExample]) -> Result<MultilabelMetrics> {
    multilabel_metrics_with(examples, Averaging::Micro)
}

/// Precision and recall are 0 when their denominator is 0. An example with
/// empty gold and pred sets scores 1 under sample averaging.
pub fn multilabel_metrics_with(examples: &[MultilabelExample], averaging: Averaging) -> Result<MultilabelMetrics> {
    if examples.is_empty() {
        return Err(Error::Empty("no multilabel examples"));
    }
    let n = examples.len() as f64;
    let subset_accuracy = examples.iter().filter(|e| e.gold == e.pred).count() as f64 / n;
    let (precision, recall, f1) = match averaging {
        Averaging::Micro => {
            let mut c = Confusion::default();
            for e in examples {
                for cat in PiiCategory::ALL {
                    c.add(e.gold.contains(&cat), e.pred.contains(&cat));
                }
            }
            c.prf()
        }
        Averaging::Macro => {
            let mut per: BTreeMap<PiiCategory, Confusion> = BTreeMap::new();
            for e in examples {
                for &cat in e.gold.union(&e.pred) {
                    per.entry(cat)
                        .or_default()
                        .add(e.gold.contains(&cat), e.pred.contains(&cat));
                }
            }
            mean_prf(per.values().map(|c| c.prf()))
        }
        Averaging::Samples => mean_prf(examples.iter().map(|e| {
            if e.gold.is_empty() && e.pred.is_empty() {
                return (1.0, 1.0, 1.0);
            }
            let mut c = Confusion::default();
            for &cat in e.gold.union(&e.pred) {
                c.add(e.gold.contains(&cat), e.pred.contains(&cat));
            }
            c.prf()
        })),
    };
    Ok(MultilabelMetrics {
        averaging,
        subset_accuracy,
        precision,
        recall,
        f1,
    })
}

fn mean_prf(it: impl Iterator<Item = (f64, f64, f64)>) -> (f64, f64, f64) {
    let (mut n, mut p, mut r, mut f) = (0usize, 0.0, 0.0, 0.0);
    for (a, b, c) in it {
        n += 1;
        p += a;
        r += b;
        f += c;
    }
    if n == 0 {
        return (0.0, 0.0, 0.0);
    }
    let n = n as f64;
    (p / n, r / n, f / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenF1Report {
    pub macro_f1: f64,
    /// F1 of every category with at least one gold-positive token.
    pub per_category: BTreeMap<PiiCategory, f64>,
}

/// Token-level macro F1 over categories with at least one gold-positive token.
pub fn token_macro_f1(predictions: &[TokenPrediction]) -> Result<f64> {
    Ok(token_f1_report(predictions)?.macro_f1)
}

pub fn token_f1_report(predictions: &[TokenPrediction]) -> Result<TokenF1Report> {
    let mut per: BTreeMap<PiiCategory, Confusion> = BTreeMap::new();
    for p in predictions {
        p.validate()?;
        for (gold, pred) in p.gold.iter().zip(&p.pred) {
            for &cat in gold.union(pred) {
                per.entry(cat)
                    .or_default()
                    .add(gold.contains(&cat), pred.contains(&cat));
            }
        }
    }
    let per_category: BTreeMap<PiiCategory, f64> = per
        .into_iter()
        .filter(|(_, c)| c.tp + c.fn_ > 0)
        .map(|(cat, c)| (cat, c.prf().2))
        .collect();
    if per_category.is_empty() {
        return Err(Error::Empty("no category has a gold-positive token"));
    }
    let macro_f1 = per_category.values().sum::<f64>() / per_category.len() as f64;
    Ok(TokenF1Report { macro_f1, per_category })
}

/// What the intersection is divided by when testing partial overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapBasis {
    /// Length of the gold span.
    #[default]
    Gold,
    /// Length of the union of both spans.
    Union,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub gold_spans: usize,
    pub pred_spans: usize,
}

fn partial_match(gold: &PiiSpan, pred: &PiiSpan, min_overlap: f64, basis: OverlapBasis) -> bool {
    if gold.category != pred.category {
        return false;
    }
    let inter = gold.intersection(pred);
    if inter == 0 {
        return false;
    }
    let denom = match basis {
        OverlapBasis::Gold => gold.len(),
        OverlapBasis::Union => gold.union(pred),
    };
    inter as f64 >= min_overlap * denom as f64
}

/// Greedy one-to-one partial-overlap matching for one document: predicted
/// spans in offset order each take the first unmatched gold span (in offset
/// order) that they cover by at least `min_overlap`.
pub fn span_matches(gold: &[PiiSpan], pred: &[PiiSpan], min_overlap: f64, basis: OverlapBasis) -> usize {
    let mut gold = gold.to_vec();
    let mut pred = pred.to_vec();
    gold.sort();
    pred.sort();
    let mut used = vec![false; gold.len()];
    let mut tp = 0;
    for p in &pred {
        if let Some(j) = (0..gold.len()).find(|&j| !used[j] && partial_match(&gold[j], p, min_overlap, basis)) {
            used[j] = true;
            tp += 1;
        }
    }
    tp
}

fn span_f1_from_counts(tp: usize, gold: usize, pred: usize) -> SpanF1 {
    let precision = if pred == 0 { 0.0 } else { tp as f64 / pred as f64 };
    let recall = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
    let f1 = if gold + pred == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (gold + pred) as f64
    };
    SpanF1 {
        precision,
        recall,
        f1,
        true_positives: tp,
        gold_spans: gold,
        pred_spans: pred,
    }
}

fn check_overlap(min_overlap: f64) -> Result<()> {
    if !(min_overlap > 0.0 && min_overlap <= 1.0) {
        return Err(Error::Config(format!(
            "min_overlap must be in (0, 1], got {min_overlap}"
        )));
    }
    Ok(())
}

/// Partial span F1 for a single document.
pub fn span_f1_partial(gold: &[PiiSpan], pred: &[PiiSpan], min_overlap: f64) -> Result<SpanF1> {
    check_overlap(min_overlap)?;
    let tp = span_matches(gold, pred, min_overlap, OverlapBasis::Gold);
    Ok(span_f1_from_counts(tp, gold.len(), pred.len()))
}

/// Partial span F1 pooled over documents paired by id. Both sides must cover
/// the same ids.
pub fn span_f1_corpus(
    gold: &[AnnotatedPost],
    pred: &[AnnotatedPost],
    min_overlap: f64,
    basis: OverlapBasis,
) -> Result<SpanF1> {
    check_overlap(min_overlap)?;
    let pred_by_id: BTreeMap<&str, &AnnotatedPost> = pred.iter().map(|p| (p.id.as_str(), p)).collect();
    if pred_by_id.len() != gold.len() || gold.iter().any(|g| !pred_by_id.contains_key(g.id.as_str())) {
        return Err(Error::PostIdMismatch("gold and predicted documents differ".into()));
    }
    let (mut tp, mut g, mut p) = (0, 0, 0);
    for doc in gold {
        let pd = pred_by_id[doc.id.as_str()];
        tp += span_matches(&doc.spans, &pd.spans, min_overlap, basis);
        g += doc.spans.len();
        p += pd.spans.len();
    }
    Ok(span_f1_from_counts(tp, g, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionRow {
    pub category: PiiCategory,
    pub original: f64,
    pub synthetic: f64,
    /// `synthetic - original`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionComparison {
    /// One row per category, in taxonomy order.
    pub rows: Vec<ProportionRow>,
    pub max_abs_deviation: f64,
}

pub fn proportion_comparison(original: &[AnnotatedPost], synthetic: &[AnnotatedPost]) -> Result<ProportionComparison> {
    let orig = category_proportions(original)?;
    let synth = category_proportions(synthetic)?;
    Ok(comparison_from_maps(&orig, &synth))
}

fn comparison_from_maps(orig: &BTreeMap<PiiCategory, f64>, synth: &BTreeMap<PiiCategory, f64>) -> ProportionComparison {
    let rows: Vec<ProportionRow> = PiiCategory::ALL
        .iter()
        .map(|&category| {
            let o = orig.get(&category).copied().unwrap_or(0.0);
            let s = synth.get(&category).copied().unwrap_or(0.0);
            ProportionRow {
                category,
                original: o,
                synthetic: s,
                residual: s - o,
            }
        })
        .collect();
    let max_abs_deviation = rows.iter().map(|r| r.residual.abs()).fold(0.0, f64::max);
    ProportionComparison {
        rows,
        max_abs_deviation,
    }
}

/// Writes `category,original,synthetic,residual`.
pub fn write_proportion_csv(path: &Path, cmp: &ProportionComparison) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in &cmp.rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| crate::error::Error::io(path, e))
}
