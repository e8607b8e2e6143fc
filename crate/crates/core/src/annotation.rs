//! The 19-category PII taxonomy, span annotations, inter-annotator agreement and
//! per-category corpus statistics.
//!
//! Offsets are Unicode scalar positions (what annotation tools export), half-open
//! `[start, end)`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::jsonl::{self, LoadMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PiiCategory {
    Name,
    Birthdate,
    Location,
    Country,
    MaritalStatus,
    Religion,
    EthnicityRace,
    Gender,
    Parenthood,
    Age,
    Sexuality,
    MedicalInformation,
    Employment,
    Relationship,
    Family,
    GenderAge,
    MentalHealth,
    PhysicalAppearance,
    DegreeDesignation,
}

impl PiiCategory {
    pub const ALL: [PiiCategory; 19] = [
        PiiCategory::Name,
        PiiCategory::Birthdate,
        PiiCategory::Location,
        PiiCategory::Country,
        PiiCategory::MaritalStatus,
        PiiCategory::Religion,
        PiiCategory::EthnicityRace,
        PiiCategory::Gender,
        PiiCategory::Parenthood,
        PiiCategory::Age,
        PiiCategory::Sexuality,
        PiiCategory::MedicalInformation,
        PiiCategory::Employment,
        PiiCategory::Relationship,
        PiiCategory::Family,
        PiiCategory::GenderAge,
        PiiCategory::MentalHealth,
        PiiCategory::PhysicalAppearance,
        PiiCategory::DegreeDesignation,
    ];

    /// Stable serialized name.
    pub fn label(self) -> &'static str {
        match self {
            PiiCategory::Name => "Name",
            PiiCategory::Birthdate => "Birthdate",
            PiiCategory::Location => "Location",
            PiiCategory::Country => "Country",
            PiiCategory::MaritalStatus => "Marital Status",
            PiiCategory::Religion => "Religion",
            PiiCategory::EthnicityRace => "Ethnicity/Race",
            PiiCategory::Gender => "Gender",
            PiiCategory::Parenthood => "Parenthood",
            PiiCategory::Age => "Age",
            PiiCategory::Sexuality => "Sexuality",
            PiiCategory::MedicalInformation => "Medical Information",
            PiiCategory::Employment => "Employment",
            PiiCategory::Relationship => "Relationship",
            PiiCategory::Family => "Family",
            PiiCategory::GenderAge => "Gender-Age",
            PiiCategory::MentalHealth => "Mental Health",
            PiiCategory::PhysicalAppearance => "Physical Appearance",
            PiiCategory::DegreeDesignation => "Degree/Designation",
        }
    }
}

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl FromStr for PiiCategory {
    type Err = Error;

    /// Accepts the stable label or the identifier spelling, ignoring case,
    /// spaces and separators (`"Marital Status"`, `"MaritalStatus"`, `"marital_status"`).
    fn from_str(s: &str) -> Result<Self> {
        let key = squash(s);
        PiiCategory::ALL
            .iter()
            .copied()
            .find(|c| squash(c.label()) == key)
            .ok_or_else(|| Error::UnknownCategory(s.to_string()))
    }
}

impl fmt::Display for PiiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for PiiCategory {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for PiiCategory {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PiiSpan {
    pub start: usize,
    pub end: usize,
    pub category: PiiCategory,
}

impl PiiSpan {
    pub fn new(start: usize, end: usize, category: PiiCategory) -> Self {
        Self { start, end, category }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Length of the character intersection with `other`.
    pub fn intersection(&self, other: &PiiSpan) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }

    pub fn union(&self, other: &PiiSpan) -> usize {
        self.len() + other.len() - self.intersection(other)
    }

    pub fn validate(&self, text_len: usize) -> Result<()> {
        if self.start >= self.end || self.end > text_len {
            return Err(Error::SpanOutOfBounds {
                start: self.start,
                end: self.end,
                len: text_len,
            });
        }
        Ok(())
    }
}

/// A post (original or synthetic) with its span annotations. Native JSONL schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedPost {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub spans: Vec<PiiSpan>,
    #[serde(default)]
    pub annotator: String,
    /// Source post id when `text` is a synthetic rewrite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lineage: Option<String>,
}

impl AnnotatedPost {
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.char_len();
        self.spans.iter().try_for_each(|s| s.validate(len))
    }

    /// Covered substring for a span.
    pub fn span_text(&self, span: &PiiSpan) -> String {
        self.text.chars().skip(span.start).take(span.len()).collect()
    }

    pub fn categories(&self) -> BTreeSet<PiiCategory> {
        self.spans.iter().map(|s| s.category).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationSchema {
    /// `{"id"?, "text", "label": [[start, end, "Category"], ...]}`
    Doccano,
    Native,
}

impl FromStr for AnnotationSchema {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "doccano" => Ok(AnnotationSchema::Doccano),
            "native" => Ok(AnnotationSchema::Native),
            other => Err(Error::Config(format!("unknown annotation schema {other:?}"))),
        }
    }
}

#[derive(Debug, Deserialize)]
struct DoccanoRecord {
    #[serde(default)]
    id: Option<serde_json::Value>,
    text: String,
    #[serde(default, alias = "labels")]
    label: Vec<(i64, i64, String)>,
    #[serde(default, alias = "user")]
    annotator: Option<serde_json::Value>,
}

fn value_to_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn doccano_to_post(idx: usize, rec: DoccanoRecord) -> Result<AnnotatedPost> {
    let invalid = |message: String| Error::InvalidRecord { index: idx, message };
    let len = rec.text.chars().count();
    let mut spans = Vec::with_capacity(rec.label.len());
    for (start, end, cat) in rec.label {
        let category: PiiCategory = cat.parse().map_err(|e: Error| invalid(e.to_string()))?;
        if start < 0 || end < 0 {
            return Err(invalid(format!("negative offset in [{start}, {end})")));
        }
        let span = PiiSpan::new(start as usize, end as usize, category);
        span.validate(len).map_err(|e| invalid(e.to_string()))?;
        spans.push(span);
    }
    spans.sort();
    Ok(AnnotatedPost {
        id: rec.id.as_ref().map(value_to_string).unwrap_or_else(|| idx.to_string()),
        text: rec.text,
        spans,
        annotator: rec.annotator.as_ref().map(value_to_string).unwrap_or_default(),
        lineage: None,
    })
}

/// Imports annotations; every span is checked in-bounds. Errors carry the
/// 0-based record index.
pub fn import_annotations(path: &Path, schema: AnnotationSchema) -> Result<Vec<AnnotatedPost>> {
    match schema {
        AnnotationSchema::Doccano => {
            let loaded = jsonl::read_jsonl::<DoccanoRecord>(path, LoadMode::Strict)?;
            loaded
                .records
                .into_iter()
                .enumerate()
                .map(|(i, r)| doccano_to_post(i, r))
                .collect()
        }
        AnnotationSchema::Native => {
            let loaded = jsonl::read_jsonl::<AnnotatedPost>(path, LoadMode::Strict)?;
            for (i, p) in loaded.records.iter().enumerate() {
                p.validate().map_err(|e| Error::InvalidRecord {
                    index: i,
                    message: e.to_string(),
                })?;
            }
            Ok(loaded.records)
        }
    }
}

pub fn export_native(path: &Path, posts: &[AnnotatedPost]) -> Result<()> {
    jsonl::write_jsonl(path, posts)
}

/// Same category and intersecting half-open character intervals.
pub fn spans_match(a: &PiiSpan, b: &PiiSpan) -> bool {
    a.category == b.category && a.start < b.end && b.start < a.end
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IaaReport {
    pub pairwise_f1: f64,
    /// Mean character Jaccard over matched pairs; 0 when nothing matched.
    pub mean_overlap_fraction: f64,
    pub matched_pairs: usize,
    pub spans_a: usize,
    pub spans_b: usize,
}

/// Greedy one-to-one matching for a single post: A's spans in offset order,
/// each taking the first unmatched B span (in offset order) that matches.
/// Returns matched index pairs into the sorted slices.
pub fn greedy_matches(a: &[PiiSpan], b: &[PiiSpan]) -> Vec<(PiiSpan, PiiSpan)> {
    let mut a_sorted = a.to_vec();
    let mut b_sorted = b.to_vec();
    a_sorted.sort();
    b_sorted.sort();
    let mut used = vec![false; b_sorted.len()];
    let mut out = Vec::new();
    for sa in &a_sorted {
        if let Some(j) = (0..b_sorted.len()).find(|&j| !used[j] && spans_match(sa, &b_sorted[j])) {
            used[j] = true;
            out.push((*sa, b_sorted[j]));
        }
    }
    out
}

/// Pairwise F1 with partial-overlap matching between two annotators.
pub fn pairwise_f1(ann_a: &[AnnotatedPost], ann_b: &[AnnotatedPost]) -> Result<IaaReport> {
    let by_id_b: HashMap<&str, &AnnotatedPost> = ann_b.iter().map(|p| (p.id.as_str(), p)).collect();
    let ids_a: BTreeSet<&str> = ann_a.iter().map(|p| p.id.as_str()).collect();
    let ids_b: BTreeSet<&str> = by_id_b.keys().copied().collect();
    if ids_a != ids_b {
        let only_a: Vec<_> = ids_a.difference(&ids_b).take(5).collect();
        let only_b: Vec<_> = ids_b.difference(&ids_a).take(5).collect();
        return Err(Error::PostIdMismatch(format!(
            "only in A: {only_a:?}, only in B: {only_b:?}"
        )));
    }

    let mut matched = 0usize;
    let mut spans_a = 0usize;
    let mut spans_b = 0usize;
    let mut overlap_sum = 0.0;
    for pa in ann_a {
        let pb = by_id_b[pa.id.as_str()];
        spans_a += pa.spans.len();
        spans_b += pb.spans.len();
        for (x, y) in greedy_matches(&pa.spans, &pb.spans) {
            matched += 1;
            overlap_sum += x.intersection(&y) as f64 / x.union(&y) as f64;
        }
    }
    let total = spans_a + spans_b;
    Ok(IaaReport {
        pairwise_f1: if total == 0 {
            1.0
        } else {
            2.0 * matched as f64 / total as f64
        },
        mean_overlap_fraction: if matched == 0 {
            0.0
        } else {
            overlap_sum / matched as f64
        },
        matched_pairs: matched,
        spans_a,
        spans_b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStat {
    pub category: PiiCategory,
    pub span_count: usize,
    /// `None` when the category has no spans.
    pub mean_span_chars: Option<f64>,
}

/// Per-category span counts and mean character length, in taxonomy order.
pub fn category_stats(corpus: &[AnnotatedPost]) -> Vec<CategoryStat> {
    let mut acc: BTreeMap<PiiCategory, (usize, usize)> = BTreeMap::new();
    for span in corpus.iter().flat_map(|p| &p.spans) {
        let e = acc.entry(span.category).or_default();
        e.0 += 1;
        e.1 += span.len();
    }
    PiiCategory::ALL
        .iter()
        .map(|&category| {
            let (n, total) = acc.get(&category).copied().unwrap_or_default();
            CategoryStat {
                category,
                span_count: n,
                mean_span_chars: (n > 0).then(|| total as f64 / n as f64),
            }
        })
        .collect()
}

/// Share of all spans belonging to each category; every category is present.
pub fn category_proportions(corpus: &[AnnotatedPost]) -> Result<BTreeMap<PiiCategory, f64>> {
    let stats = category_stats(corpus);
    let total: usize = stats.iter().map(|s| s.span_count).sum();
    if total == 0 {
        return Err(Error::Empty("corpus contains no spans"));
    }
    Ok(stats
        .into_iter()
        .map(|s| (s.category, s.span_count as f64 / total as f64))
        .collect())
}
