use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::GenerationConfig;
use crate::error::{Error, Result};
use crate::net::{HttpPolicy, PoliteClient};

/// A chat-completion backend. Implementations must tolerate concurrent calls up
/// to the parallelism the caller configures.
pub trait ChatClient: Send + Sync {
    /// `user_messages` make up one user turn, in order (instruction first, then
    /// the text it applies to).
    fn complete(&self, system: &str, user_messages: &[String], config: &GenerationConfig) -> Result<String>;
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Request body sent to the chat-completion endpoint.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn build(system: &str, user_messages: &[String], config: &GenerationConfig) -> Self {
        Self {
            model: config.model_name.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: system.to_string(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: user_messages.join("\n\n"),
                },
            ],
            temperature: config.temperature,
            top_p: config.top_p,
            max_tokens: config.max_tokens,
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

/// OpenAI-style `/v1/chat/completions` client. The user messages are joined
/// with a blank line into a single user turn, which keeps templates that demand
/// strict user/assistant alternation happy.
pub struct HttpChatClient {
    http: PoliteClient,
}

impl HttpChatClient {
    pub fn new(api_key: Option<String>, policy: HttpPolicy) -> Result<Self> {
        Ok(Self {
            http: PoliteClient::new(policy, api_key)?,
        })
    }

    pub fn with_defaults(api_key: Option<String>) -> Result<Self> {
        Self::new(
            api_key,
            HttpPolicy {
                timeout: Duration::from_secs(300),
                ..HttpPolicy::default()
            },
        )
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, system: &str, user_messages: &[String], config: &GenerationConfig) -> Result<String> {
        let body = ChatRequest::build(system, user_messages, config);
        let resp: ChatResponse = self.http.post_json(&config.endpoint, &body)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::Transport("chat response had no content".into()))
    }
}
