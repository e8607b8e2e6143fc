//! Sequential-instruction rewriting against a chat-completion backend.
//!
//! One *round* runs every instruction of a [`PromptPlan`] in order: step 1 sees
//! the source text, step k sees the parsed output of step k-1. A refusal, a
//! missing output marker or an unchanged result fails the round, and the whole
//! plan is re-run with fresh sampling until `max_rounds` is exhausted. Every
//! round is kept in the [`GenerationTrace`].

pub mod client;
pub mod mock;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

pub use client::{ChatClient, ChatMessage, ChatRequest, HttpChatClient};
pub use mock::{MockBehavior, MockCall, MockChatClient, MockChatSpec, MockRule};

use crate::corpus::{augment_with_subreddit, Post};
use crate::error::{Error, Result};
use crate::jsonl;

const SYSTEM_PROMPT: &str = "You are a story recreator who takes the information from the original post, and then makes a different story with similar kinds of personal information. You want to minimize the chance of finding the link between the stories. Generate the post following this format:\n\"Changed Post\":";

const CONTENT_PROMPT: &str = "Change the original post following these rules:
1. Replace all non-sensitive private information such as age, dob, religion, gender, marital status, race, ethnicity, employment, location, sexuality, and parenthood with other non-sensitive private information that retains the context. Replace the organization name with any other organization that serves the same purpose without generalization.
2. Change specific codes, IDs, numbers, and names with different codes, IDs, numbers, and names, respectively.
3. Generate a post that matches the same style and tone as the original post. If the original post contains spelling errors, strong language, or informal expressions, ensure that the synthetic post reflects the same characteristics.
4. Use common internet abbreviations, slang, emoticons, and expressions where appropriate, keeping the overall feel and context of the original post intact.
5. Don't give the title of the post.";

const SUBREDDIT_PROMPT: &str = "The first line of the original text tells about the subreddit name in which the original post was posted. Change the name of the subreddit to another subreddit of a similar kind.";

pub const DEFAULT_OUTPUT_MARKER: &str = "\"Changed Post\":";

pub const DEFAULT_REFUSAL_PATTERNS: [&str; 3] = [
    r"\bI cannot\b",
    r"\bI['\u{2019}]m just an AI\b",
    r"not within my programming",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub system: String,
    pub steps: Vec<String>,
    #[serde(default = "default_marker")]
    pub output_marker: String,
}

fn default_marker() -> String {
    DEFAULT_OUTPUT_MARKER.to_string()
}

impl Default for PromptPlan {
    /// Content rewrite followed by subreddit rename.
    fn default() -> Self {
        Self {
            system: SYSTEM_PROMPT.to_string(),
            steps: vec![CONTENT_PROMPT.to_string(), SUBREDDIT_PROMPT.to_string()],
            output_marker: DEFAULT_OUTPUT_MARKER.to_string(),
        }
    }
}

impl PromptPlan {
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::Config("prompt plan needs at least one step".into()));
        }
        if self.output_marker.is_empty() {
            return Err(Error::Config("output_marker must not be empty".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let plan: PromptPlan = jsonl::read_json(path)?;
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub max_rounds: u32,
    pub refusal_patterns: Vec<String>,
    /// Use the whole trimmed response when the output marker is missing.
    pub fallback_whole_response: bool,
    /// Maximum in-flight requests during corpus generation.
    pub parallelism: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self::llama2()
    }
}

impl GenerationConfig {
    fn profile(model: &str, temperature: f64, top_p: f64) -> Self {
        Self {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model_name: model.into(),
            temperature,
            top_p,
            max_tokens: 1024,
            max_rounds: 3,
            refusal_patterns: DEFAULT_REFUSAL_PATTERNS.iter().map(|s| s.to_string()).collect(),
            fallback_whole_response: false,
            parallelism: 4,
        }
    }

    pub fn llama2() -> Self {
        Self::profile("meta-llama/Llama-2-7b-chat-hf", 1.0, 0.9)
    }

    pub fn llama3() -> Self {
        Self::profile("meta-llama/Meta-Llama-3-8B-Instruct", 0.9, 0.9)
    }

    pub fn zephyr() -> Self {
        Self::profile("HuggingFaceH4/zephyr-7b-beta", 1.0, 0.95)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "llama2" => Some(Self::llama2()),
            "llama3" => Some(Self::llama3()),
            "zephyr" => Some(Self::zephyr()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.max_tokens == 0 || self.max_rounds == 0 || self.parallelism == 0 {
            return Err(Error::Config(
                "max_tokens, max_rounds and parallelism must be positive".into(),
            ));
        }
        RefusalDetector::new(&self.refusal_patterns).map(|_| ())
    }

    pub fn snapshot(&self) -> ConfigSnapshot {
        ConfigSnapshot {
            endpoint: self.endpoint.clone(),
            model_name: self.model_name.clone(),
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
            max_rounds: self.max_rounds,
        }
    }
}

/// Identifies the model and sampling parameters that produced a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub max_rounds: u32,
}

/// Case-insensitive refusal patterns, compiled once at config load.
#[derive(Debug, Clone)]
pub struct RefusalDetector {
    patterns: Vec<Regex>,
}

impl RefusalDetector {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self> {
        let patterns = patterns
            .iter()
            .map(|p| {
                RegexBuilder::new(p.as_ref())
                    .case_insensitive(true)
                    .build()
                    .map_err(|source| Error::Regex {
                        pattern: p.as_ref().to_string(),
                        source,
                    })
            })
            .collect::<Result<_>>()?;
        Ok(Self { patterns })
    }

    pub fn is_refusal(&self, text: &str) -> bool {
        detect_refusal(text, &self.patterns)
    }
}

pub fn detect_refusal(text: &str, patterns: &[Regex]) -> bool {
    patterns.iter().any(|p| p.is_match(text))
}

fn strip_quotes(s: &str) -> &str {
    for (open, close) in [('"', '"'), ('\u{201C}', '\u{201D}')] {
        if s.chars().count() >= 2 && s.starts_with(open) && s.ends_with(close) {
            return s[open.len_utf8()..s.len() - close.len_utf8()].trim();
        }
    }
    s
}

/// Text after the last `marker`, trimmed, with one layer of enclosing quotes
/// removed. Without a marker, either the trimmed response (`fallback`) or
/// [`Error::NoMarker`].
pub fn parse_changed_post(raw: &str, marker: &str, fallback: bool) -> Result<String> {
    match raw.rfind(marker) {
        Some(idx) => Ok(strip_quotes(raw[idx + marker.len()..].trim()).to_string()),
        None if fallback => Ok(strip_quotes(raw.trim()).to_string()),
        None => Err(Error::NoMarker(marker.to_string())),
    }
}

/// Refusals are only looked for ahead of the output marker, so a rewritten post
/// that happens to say "I cannot ..." is not mistaken for one.
fn response_refused(raw: &str, marker: &str, detector: &RefusalDetector) -> bool {
    let preamble = raw.rfind(marker).map_or(raw, |i| &raw[..i]);
    detector.is_refusal(preamble)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Text the instruction was applied to.
    pub input: String,
    pub response: String,
    /// What was handed to the next step (or taken as final).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RoundResult {
    Success,
    Refused { step: usize },
    NoMarker { step: usize },
    Unchanged,
    Error { step: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub steps: Vec<StepRecord>,
    pub result: RoundResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Refused,
    Error { detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub source_post_id: String,
    pub input_text: String,
    /// Parsed outputs of every step in the last round (y1..yk).
    pub step_outputs: Vec<String>,
    pub final_text: Option<String>,
    pub rounds_used: u32,
    pub outcome: Outcome,
    pub rounds: Vec<RoundRecord>,
    pub config: ConfigSnapshot,
}

impl GenerationTrace {
    pub fn is_success(&self) -> bool {
        self.outcome == Outcome::Success
    }
}

/// A text to rewrite plus the id it traces back to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationInput {
    pub id: String,
    pub text: String,
}

impl GenerationInput {
    /// Subreddit-augmented text of `post`.
    pub fn from_post(post: &Post) -> Self {
        Self {
            id: post.id.clone(),
            text: augment_with_subreddit(post),
        }
    }
}

fn run_round(
    round: u32,
    input_text: &str,
    plan: &PromptPlan,
    config: &GenerationConfig,
    detector: &RefusalDetector,
    client: &dyn ChatClient,
) -> (RoundRecord, Vec<String>) {
    let mut text = input_text.to_string();
    let mut steps = Vec::with_capacity(plan.steps.len());
    let mut outputs = Vec::with_capacity(plan.steps.len());
    let last = plan.steps.len() - 1;
    for (k, prompt) in plan.steps.iter().enumerate() {
        let messages = [prompt.clone(), text.clone()];
        let response = match client.complete(&plan.system, &messages, config) {
            Ok(r) => r,
            Err(e) => {
                let result = RoundResult::Error {
                    step: k,
                    detail: e.to_string(),
                };
                return (RoundRecord { round, steps, result }, outputs);
            }
        };
        let mut record = StepRecord {
            step: k,
            input: text.clone(),
            response,
            output: None,
        };
        if response_refused(&record.response, &plan.output_marker, detector) {
            steps.push(record);
            let result = RoundResult::Refused { step: k };
            return (RoundRecord { round, steps, result }, outputs);
        }
        let parsed = parse_changed_post(
            &record.response,
            &plan.output_marker,
            config.fallback_whole_response || k < last,
        );
        match parsed {
            Ok(out) => {
                record.output = Some(out.clone());
                outputs.push(out.clone());
                text = out;
                steps.push(record);
            }
            Err(_) => {
                steps.push(record);
                let result = RoundResult::NoMarker { step: k };
                return (RoundRecord { round, steps, result }, outputs);
            }
        }
    }
    let result = if text.trim().is_empty() || text == input_text {
        RoundResult::Unchanged
    } else {
        RoundResult::Success
    };
    (RoundRecord { round, steps, result }, outputs)
}

/// Rewrites one text, retrying failed rounds up to `config.max_rounds` times.
pub fn run_sequential(
    source_post_id: &str,
    input_text: &str,
    plan: &PromptPlan,
    config: &GenerationConfig,
    detector: &RefusalDetector,
    client: &dyn ChatClient,
) -> GenerationTrace {
    let mut trace = GenerationTrace {
        source_post_id: source_post_id.to_string(),
        input_text: input_text.to_string(),
        step_outputs: Vec::new(),
        final_text: None,
        rounds_used: 0,
        outcome: Outcome::Error {
            detail: "empty input".into(),
        },
        rounds: Vec::new(),
        config: config.snapshot(),
    };
    if input_text.trim().is_empty() || plan.steps.is_empty() {
        if plan.steps.is_empty() {
            trace.outcome = Outcome::Error {
                detail: "empty prompt plan".into(),
            };
        }
        return trace;
    }
    for round in 1..=config.max_rounds.max(1) {
        let (record, outputs) = run_round(round, input_text, plan, config, detector, client);
        trace.rounds_used = round;
        trace.step_outputs = outputs;
        let result = record.result.clone();
        trace.rounds.push(record);
        match result {
            RoundResult::Success => {
                trace.final_text = trace.step_outputs.last().cloned();
                trace.outcome = Outcome::Success;
                return trace;
            }
            RoundResult::Error { detail, .. } => {
                trace.outcome = Outcome::Error { detail };
                return trace;
            }
            RoundResult::Refused { .. } => trace.outcome = Outcome::Refused,
            RoundResult::NoMarker { .. } => {
                trace.outcome = Outcome::Error {
                    detail: "no_marker".into(),
                }
            }
            RoundResult::Unchanged => {
                trace.outcome = Outcome::Error {
                    detail: "unchanged".into(),
                }
            }
        }
    }
    trace
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub attempted: usize,
    pub succeeded: usize,
    pub refused_final: usize,
    pub errored: usize,
    /// rounds_used -> number of traces.
    pub rounds_histogram: BTreeMap<u32, usize>,
}

impl GenerationReport {
    pub fn from_traces(traces: &[GenerationTrace]) -> Self {
        let mut report = GenerationReport {
            attempted: traces.len(),
            succeeded: 0,
            refused_final: 0,
            errored: 0,
            rounds_histogram: BTreeMap::new(),
        };
        for t in traces {
            match t.outcome {
                Outcome::Success => report.succeeded += 1,
                Outcome::Refused => report.refused_final += 1,
                Outcome::Error { .. } => report.errored += 1,
            }
            *report.rounds_histogram.entry(t.rounds_used).or_insert(0) += 1;
        }
        report
    }

    /// True if any trace ended on a transport-level error (not a refusal or
    /// an unusable response).
    pub fn has_transport_failure(traces: &[GenerationTrace]) -> bool {
        traces.iter().any(|t| {
            t.rounds
                .last()
                .is_some_and(|r| matches!(r.result, RoundResult::Error { .. }))
        })
    }
}

fn with_pool<T: Send>(parallelism: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// One trace per input, in input order, with at most `config.parallelism`
/// requests in flight.
pub fn generate_corpus(
    inputs: &[GenerationInput],
    plan: &PromptPlan,
    config: &GenerationConfig,
    client: &dyn ChatClient,
) -> Result<(Vec<GenerationTrace>, GenerationReport)> {
    plan.validate()?;
    config.validate()?;
    let detector = RefusalDetector::new(&config.refusal_patterns)?;
    let traces: Vec<GenerationTrace> = with_pool(config.parallelism, || {
        inputs
            .par_iter()
            .map(|inp| run_sequential(&inp.id, &inp.text, plan, config, &detector, client))
            .collect()
    });
    let report = GenerationReport::from_traces(&traces);
    Ok((traces, report))
}

/// `0.5, 0.6, ..., 1.0`
pub fn default_temperature_grid() -> Vec<f64> {
    (5..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub temperature: f64,
    pub attempted: usize,
    pub succeeded: usize,
    /// Mean similarity over successful rewrites; `None` if all failed.
    pub mean_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub points: Vec<CalibrationPoint>,
    pub chosen_temperature: f64,
}

/// Picks the temperature whose rewrites are least similar to their sources.
/// Temperatures where nothing succeeded are skipped; ties go to the higher
/// temperature. Temperatures run one after another.
pub fn calibrate_temperature(
    samples: &[GenerationInput],
    grid: &[f64],
    plan: &PromptPlan,
    base: &GenerationConfig,
    client: &dyn ChatClient,
    similarity: &(dyn Fn(&str, &str) -> f64 + Sync),
) -> Result<CalibrationReport> {
    if samples.is_empty() {
        return Err(Error::Empty("calibration needs at least one sample post"));
    }
    if grid.is_empty() {
        return Err(Error::Empty("temperature grid is empty"));
    }
    plan.validate()?;
    base.validate()?;
    let detector = RefusalDetector::new(&base.refusal_patterns)?;
    let mut points = Vec::with_capacity(grid.len());
    for &temperature in grid {
        let config = GenerationConfig {
            temperature,
            ..base.clone()
        };
        config.validate()?;
        let sims: Vec<Option<f64>> = with_pool(config.parallelism, || {
            samples
                .par_iter()
                .map(|s| {
                    let t = run_sequential(&s.id, &s.text, plan, &config, &detector, client);
                    t.final_text
                        .filter(|_| t.outcome == Outcome::Success)
                        .map(|out| similarity(&s.text, &out))
                })
                .collect()
        });
        let ok: Vec<f64> = sims.into_iter().flatten().collect();
        points.push(CalibrationPoint {
            temperature,
            attempted: samples.len(),
            succeeded: ok.len(),
            mean_similarity: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
        });
    }
    let chosen = points
        .iter()
        .filter_map(|p| p.mean_similarity.map(|m| (p.temperature, m)))
        .reduce(|best, cur| {
            if cur.1 < best.1 || (cur.1 == best.1 && cur.0 > best.0) {
                cur
            } else {
                best
            }
        })
        .ok_or(Error::NoUsableTemperature)?;
    Ok(CalibrationReport {
        points,
        chosen_temperature: chosen.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textmetrics::cosine_tf_text;

    fn echo_spec() -> MockChatSpec {
        MockChatSpec {
            default: MockBehavior::Echo,
            ..Default::default()
        }
    }

    fn detector() -> RefusalDetector {
        RefusalDetector::new(&DEFAULT_REFUSAL_PATTERNS).unwrap()
    }

    #[test]
    fn default_plan_shape() {
        let p = PromptPlan::default();
        assert_eq!(p.steps.len(), 2);
        assert!(p.system.ends_with(DEFAULT_OUTPUT_MARKER));
        assert!(p.steps[0].contains("5. Don't give the title of the post."));
        assert!(p.steps[1].starts_with("The first line of the original text"));
        p.validate().unwrap();
    }

    #[test]
    fn presets() {
        let l2 = GenerationConfig::llama2();
        assert_eq!((l2.temperature, l2.top_p, l2.max_tokens), (1.0, 0.9, 1024));
        let l3 = GenerationConfig::llama3();
        assert_eq!((l3.temperature, l3.top_p), (0.9, 0.9));
        let z = GenerationConfig::zephyr();
        assert_eq!((z.temperature, z.top_p), (1.0, 0.95));
        assert!(GenerationConfig::preset("gpt").is_none());
    }

    #[test]
    fn refusal_detection() {
        let d = detector();
        assert!(d.is_refusal("I cannot create content that promotes or glorifies harmful activities"));
        assert!(d.is_refusal("I'm just an AI, it's not within my programming"));
        assert!(d.is_refusal("i CANNOT do that"));
        assert!(!d.is_refusal("Changed Post: here is a story"));
        let empty = RefusalDetector::new::<&str>(&[]).unwrap();
        assert!(!empty.is_refusal("I cannot"));
        assert!(RefusalDetector::new(&["(unclosed"]).is_err());
    }

    #[test]
    fn refusal_inside_payload_is_not_a_refusal() {
        let raw = "\"Changed Post\": I cannot believe my cat did this";
        assert!(!response_refused(raw, DEFAULT_OUTPUT_MARKER, &detector()));
        assert!(response_refused(
            "I cannot help with that.",
            DEFAULT_OUTPUT_MARKER,
            &detector()
        ));
    }

    #[test]
    fn parse_examples() {
        let m = DEFAULT_OUTPUT_MARKER;
        assert_eq!(
            parse_changed_post("Sure!\n\"Changed Post\": hello world", m, false).unwrap(),
            "hello world"
        );
        assert!(matches!(
            parse_changed_post("no marker", m, false),
            Err(Error::NoMarker(_))
        ));
        assert_eq!(parse_changed_post("  no marker ", m, true).unwrap(), "no marker");
        assert_eq!(
            parse_changed_post("\"Changed Post\": \"quoted text\"", m, false).unwrap(),
            "quoted text"
        );
        assert_eq!(
            parse_changed_post("\"Changed Post\": a\n\"Changed Post\": b", m, false).unwrap(),
            "b"
        );
        // Only fully quoted payloads lose their quotes.
        assert_eq!(
            parse_changed_post("\"Changed Post\": \"a\" b", m, false).unwrap(),
            "\"a\" b"
        );
    }

    #[test]
    fn echo_at_every_step_succeeds_in_one_round() {
        let client = MockChatClient::new(echo_spec(), DEFAULT_OUTPUT_MARKER);
        let plan = PromptPlan {
            steps: vec!["p1".into(), "p2".into()],
            ..PromptPlan::default()
        };
        // Echo returns the text unchanged, which must not count as success.
        let t = run_sequential("1", "X", &plan, &GenerationConfig::default(), &detector(), &client);
        assert_eq!(
            t.outcome,
            Outcome::Error {
                detail: "unchanged".into()
            }
        );

        let spec = MockChatSpec {
            default: MockBehavior::Raw {
                text: "\"Changed Post\": X".into(),
            },
            ..Default::default()
        };
        let client = MockChatClient::new(spec, DEFAULT_OUTPUT_MARKER);
        let t = run_sequential(
            "1",
            "original",
            &plan,
            &GenerationConfig::default(),
            &detector(),
            &client,
        );
        assert_eq!(t.outcome, Outcome::Success);
        assert_eq!(t.final_text.as_deref(), Some("X"));
        assert_eq!(t.rounds_used, 1);
        assert_eq!(t.step_outputs, vec!["X", "X"]);
    }

    #[test]
    fn persistent_refusal_uses_all_rounds() {
        let spec = MockChatSpec {
            default: MockBehavior::Refuse {
                message: "I cannot create content that promotes this.".into(),
            },
            ..Default::default()
        };
        let client = MockChatClient::new(spec, DEFAULT_OUTPUT_MARKER);
        let cfg = GenerationConfig::default();
        let t = run_sequential("1", "post", &PromptPlan::default(), &cfg, &detector(), &client);
        assert_eq!(t.outcome, Outcome::Refused);
        assert_eq!(t.rounds_used, 3);
        assert_eq!(client.call_count(), 3);
        assert!(t.final_text.is_none());
    }

    #[test]
    fn single_step_plan_one_call_per_round() {
        let client = MockChatClient::new(MockChatSpec::default(), DEFAULT_OUTPUT_MARKER);
        let plan = PromptPlan {
            steps: vec!["only".into()],
            ..PromptPlan::default()
        };
        let t = run_sequential(
            "1",
            "some text",
            &plan,
            &GenerationConfig::default(),
            &detector(),
            &client,
        );
        assert!(t.is_success());
        assert_eq!(client.call_count(), 1);
    }

    #[test]
    fn transport_error_stops_immediately() {
        let spec = MockChatSpec {
            default: MockBehavior::Fail,
            ..Default::default()
        };
        let client = MockChatClient::new(spec, DEFAULT_OUTPUT_MARKER);
        let t = run_sequential(
            "1",
            "x y",
            &PromptPlan::default(),
            &GenerationConfig::default(),
            &detector(),
            &client,
        );
        assert!(matches!(t.outcome, Outcome::Error { .. }));
        assert_eq!(t.rounds_used, 1);
        assert!(GenerationReport::has_transport_failure(&[t]));
    }

    #[test]
    fn missing_marker_after_all_rounds() {
        let spec = MockChatSpec {
            default: MockBehavior::Raw {
                text: "just some text".into(),
            },
            ..Default::default()
        };
        let client = MockChatClient::new(spec, DEFAULT_OUTPUT_MARKER);
        let t = run_sequential(
            "1",
            "x y",
            &PromptPlan::default(),
            &GenerationConfig::default(),
            &detector(),
            &client,
        );
        assert_eq!(
            t.outcome,
            Outcome::Error {
                detail: "no_marker".into()
            }
        );
        assert_eq!(t.rounds_used, 3);
        assert!(!GenerationReport::has_transport_failure(&[t]));
    }

    #[test]
    fn refuse_then_comply() {
        let spec = MockChatSpec {
            rules: vec![MockRule {
                when_contains: Some("touchy".into()),
                times: Some(2),
                behavior: Some(MockBehavior::Refuse {
                    message: "I'm just an AI, sorry".into(),
                }),
                ..Default::default()
            }],
            ..Default::default()
        };
        let client = MockChatClient::new(spec, DEFAULT_OUTPUT_MARKER);
        let t = run_sequential(
            "1",
            "a touchy post",
            &PromptPlan::default(),
            &GenerationConfig::default(),
            &detector(),
            &client,
        );
        assert!(t.is_success());
        assert_eq!(t.rounds_used, 3);
        assert_eq!(t.rounds.len(), 3);
        assert_eq!(t.rounds[2].steps.len(), 2);
    }

    #[test]
    fn all_first_round_histogram() {
        let client = MockChatClient::new(MockChatSpec::default(), DEFAULT_OUTPUT_MARKER);
        let inputs: Vec<_> = (0..7)
            .map(|i| GenerationInput {
                id: i.to_string(),
                text: format!("post number {i}"),
            })
            .collect();
        let (traces, report) =
            generate_corpus(&inputs, &PromptPlan::default(), &GenerationConfig::default(), &client).unwrap();
        assert_eq!(
            traces.iter().map(|t| t.source_post_id.clone()).collect::<Vec<_>>(),
            inputs.iter().map(|i| i.id.clone()).collect::<Vec<_>>()
        );
        assert_eq!(report.rounds_histogram, BTreeMap::from([(1, 7)]));
        assert_eq!(report.succeeded, 7);
    }

    #[test]
    fn calibration_prefers_dissimilar_output() {
        let spec = MockChatSpec {
            rules: vec![MockRule {
                max_temperature: Some(0.5),
                behavior: Some(MockBehavior::Raw { text: String::new() }),
                ..Default::default()
            }],
            default: MockBehavior::Rewrite,
            step_prompts: vec![],
        };
        // At T=0.5 an echo of the input plus one extra word (cosine < 1 but high).
        let spec = MockChatSpec {
            rules: vec![MockRule {
                max_temperature: Some(0.5),
                behavior: Some(MockBehavior::Raw {
                    text: "\"Changed Post\": the cat sat down today".into(),
                }),
                ..Default::default()
            }],
            ..spec
        };
        let client = MockChatClient::new(spec, DEFAULT_OUTPUT_MARKER);
        let plan = PromptPlan {
            steps: vec!["rewrite".into()],
            ..PromptPlan::default()
        };
        let samples = vec![GenerationInput {
            id: "1".into(),
            text: "the cat sat down".into(),
        }];
        let report = calibrate_temperature(
            &samples,
            &[0.5, 1.0],
            &plan,
            &GenerationConfig::default(),
            &client,
            &cosine_tf_text,
        )
        .unwrap();
        assert_eq!(report.chosen_temperature, 1.0);
        assert!(report.points[0].mean_similarity.unwrap() > 0.8);
        assert_eq!(report.points[1].mean_similarity, Some(0.0));
    }

    #[test]
    fn calibration_call_count_and_single_temperature() {
        let client = MockChatClient::new(MockChatSpec::default(), DEFAULT_OUTPUT_MARKER);
        let plan = PromptPlan {
            steps: vec!["rewrite".into()],
            ..PromptPlan::default()
        };
        let samples: Vec<_> = (0..4)
            .map(|i| GenerationInput {
                id: i.to_string(),
                text: format!("my post {i}"),
            })
            .collect();
        let grid = default_temperature_grid();
        assert_eq!(grid, vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
        let report = calibrate_temperature(
            &samples,
            &grid,
            &plan,
            &GenerationConfig::default(),
            &client,
            &cosine_tf_text,
        )
        .unwrap();
        assert_eq!(client.call_count(), 6 * samples.len());
        assert_eq!(report.points.len(), 6);
        // All tie at 0 similarity: highest temperature wins.
        assert_eq!(report.chosen_temperature, 1.0);

        let report = calibrate_temperature(
            &samples,
            &[0.7],
            &plan,
            &GenerationConfig::default(),
            &client,
            &cosine_tf_text,
        )
        .unwrap();
        assert_eq!(report.chosen_temperature, 0.7);
    }

    #[test]
    fn calibration_excludes_fully_refused_temperatures() {
        let spec = MockChatSpec {
            rules: vec![MockRule {
                min_temperature: Some(0.9),
                behavior: Some(MockBehavior::Refuse {
                    message: "I cannot".into(),
                }),
                ..Default::default()
            }],
            ..Default::default()
        };
        let client = MockChatClient::new(spec, DEFAULT_OUTPUT_MARKER);
        let plan = PromptPlan {
            steps: vec!["rewrite".into()],
            ..PromptPlan::default()
        };
        let samples = vec![GenerationInput {
            id: "1".into(),
            text: "my post".into(),
        }];
        let cfg = GenerationConfig {
            max_rounds: 1,
            ..GenerationConfig::default()
        };
        let r = calibrate_temperature(&samples, &[0.8, 1.0], &plan, &cfg, &client, &cosine_tf_text).unwrap();
        assert_eq!(r.chosen_temperature, 0.8);
        assert_eq!(r.points[1].mean_similarity, None);
        let err = calibrate_temperature(&samples, &[1.0], &plan, &cfg, &client, &cosine_tf_text).unwrap_err();
        assert!(matches!(err, Error::NoUsableTemperature));
    }

    #[test]
    fn config_validation() {
        assert!(GenerationConfig {
            temperature: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(GenerationConfig {
            top_p: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(GenerationConfig {
            max_rounds: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(GenerationConfig {
            refusal_patterns: vec!["[".into()],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(PromptPlan {
            steps: vec![],
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
