//! Scripted chat backend for offline runs and tests.
//!
//! A [`MockChatSpec`] is a list of rules checked in order against each call;
//! the first rule that applies picks the [`MockBehavior`]. Rules with `times`
//! only fire for the first N calls carrying the same input text, which is how
//! "refuse twice, then comply" scenarios are scripted.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::client::ChatClient;
use super::GenerationConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockBehavior {
    /// `"Changed Post": <input text>`
    Echo,
    /// Replaces every word with a deterministic pseudo-word.
    Rewrite,
    Refuse {
        #[serde(default = "default_refusal")]
        message: String,
    },
    Raw {
        text: String,
    },
    /// Simulated transport failure.
    Fail,
}

fn default_refusal() -> String {
    "I cannot create content that promotes or facilitates unethical or illegal activities.".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct MockRule {
    /// Substring the input text must contain.
    pub when_contains: Option<String>,
    /// 0-based step index (position of the instruction in the plan).
    pub step: Option<usize>,
    pub min_temperature: Option<f64>,
    pub max_temperature: Option<f64>,
    pub times: Option<u32>,
    pub behavior: Option<MockBehavior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockChatSpec {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default = "default_behavior")]
    pub default: MockBehavior,
    /// Instruction texts in plan order, used to resolve `step` in rules.
    #[serde(default)]
    pub step_prompts: Vec<String>,
}

fn default_behavior() -> MockBehavior {
    MockBehavior::Rewrite
}

impl Default for MockChatSpec {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            default: MockBehavior::Rewrite,
            step_prompts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockCall {
    pub system: String,
    pub user_messages: Vec<String>,
    pub temperature: f64,
}

pub struct MockChatClient {
    spec: MockChatSpec,
    marker: String,
    fired: Mutex<HashMap<(usize, String), u32>>,
    log: Mutex<Vec<MockCall>>,
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "zu", "ve", "ra", "to", "ni", "qe", "bo", "fy", "xa", "du", "se", "wi", "jo",
];

/// Deterministic pseudo-word for `word`: six syllables chosen by hash, so
/// distinct words rarely collide.
pub fn pseudo_word(word: &str) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in word.to_lowercase().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    (0..6).map(|i| SYLLABLES[((h >> (i * 4)) & 0xf) as usize]).collect()
}

/// Replaces each alphanumeric run with its pseudo-word; punctuation and
/// whitespace stay in place.
pub fn pseudo_rewrite(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            if !word.is_empty() {
                out.push_str(&pseudo_word(&word));
                word.clear();
            }
            out.push(ch);
        }
    }
    if !word.is_empty() {
        out.push_str(&pseudo_word(&word));
    }
    out
}

impl MockChatClient {
    pub fn new(spec: MockChatSpec, output_marker: impl Into<String>) -> Self {
        Self {
            spec,
            marker: output_marker.into(),
            fired: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    fn pick(&self, instruction: &str, text: &str, temperature: f64) -> MockBehavior {
        let step = self.spec.step_prompts.iter().position(|p| p == instruction);
        for (idx, rule) in self.spec.rules.iter().enumerate() {
            if let Some(s) = &rule.when_contains {
                if !text.contains(s.as_str()) {
                    continue;
                }
            }
            if rule.step.is_some() && rule.step != step {
                continue;
            }
            if rule.min_temperature.is_some_and(|t| temperature < t - 1e-9) {
                continue;
            }
            if rule.max_temperature.is_some_and(|t| temperature > t + 1e-9) {
                continue;
            }
            if let Some(limit) = rule.times {
                let mut fired = self.fired.lock().unwrap_or_else(|e| e.into_inner());
                let n = fired.entry((idx, text.to_string())).or_insert(0);
                if *n >= limit {
                    continue;
                }
                *n += 1;
            }
            return rule.behavior.clone().unwrap_or_else(|| self.spec.default.clone());
        }
        self.spec.default.clone()
    }
}

impl ChatClient for MockChatClient {
    fn complete(&self, system: &str, user_messages: &[String], config: &GenerationConfig) -> Result<String> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(MockCall {
            system: system.to_string(),
            user_messages: user_messages.to_vec(),
            temperature: config.temperature,
        });
        let (instruction, text) = match user_messages {
            [] => ("", ""),
            [only] => ("", only.as_str()),
            [first, .., last] => (first.as_str(), last.as_str()),
        };
        Ok(match self.pick(instruction, text, config.temperature) {
            MockBehavior::Echo => format!("{} {}", self.marker, text),
            MockBehavior::Rewrite => format!(
                "Sure! Here is the rewritten post:\n{} {}",
                self.marker,
                pseudo_rewrite(text)
            ),
            MockBehavior::Refuse { message } => message,
            MockBehavior::Raw { text } => text,
            MockBehavior::Fail => return Err(Error::Transport("mock transport failure".into())),
        })
    }
}
