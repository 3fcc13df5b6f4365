//! Agent completion backends.
//!
//! * [`ChatCompletionsClient`] - any chat-completions compatible HTTP endpoint.
//! * [`ScriptedBackend`] - replays a script file, per role, in order.
//! * [`SimulatedBackend`] - rule-based offline agents (see `simulated`).

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::graph::ResourceDelta;

pub use crate::simulated::SimulatedBackend;

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const API_KEY_ENV: &str = "CHAINSHORT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub speaker: String,
    pub text: String,
}

impl Message {
    pub fn user(text: impl Into<String>) -> Self {
        Message {
            speaker: "user".into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRequest {
    pub role_profile: String,
    pub system_prompt: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
}

impl AgentRequest {
    pub fn new(role_profile: &str, system_prompt: &str, body: String) -> Self {
        AgentRequest {
            role_profile: role_profile.to_string(),
            system_prompt: system_prompt.to_string(),
            messages: vec![Message::user(body)],
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    /// System prompt followed by every message text, newline-separated.
    pub fn prompt_text(&self) -> String {
        let mut s = self.system_prompt.clone();
        for m in &self.messages {
            s.push('\n');
            s.push_str(&m.text);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentReply {
    pub text: String,
    pub usage: ResourceDelta,
}

pub trait AgentBackend: Send + Sync {
    fn complete(&self, request: &AgentRequest) -> Result<AgentReply>;
}

impl<B: AgentBackend + ?Sized> AgentBackend for &B {
    fn complete(&self, request: &AgentRequest) -> Result<AgentReply> {
        (**self).complete(request)
    }
}

impl<B: AgentBackend + ?Sized> AgentBackend for Box<B> {
    fn complete(&self, request: &AgentRequest) -> Result<AgentReply> {
        (**self).complete(request)
    }
}

/// Whitespace token count inflated by 4/3, rounded up.
pub fn count_tokens_fallback(text: &str) -> u64 {
    let words = text.split_whitespace().count() as u64;
    (words * 4).div_ceil(3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub role_profile: String,
    pub text: String,
    pub time_seconds: f64,
    pub tokens: u64,
}

/// Replays scripted replies; each role consumes its own entries in file order.
#[derive(Debug)]
pub struct ScriptedBackend {
    by_role: HashMap<String, Vec<ScriptEntry>>,
    cursors: Mutex<HashMap<String, usize>>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Result<Self> {
        let mut by_role: HashMap<String, Vec<ScriptEntry>> = HashMap::new();
        for e in entries {
            ResourceDelta::new(e.time_seconds, e.tokens)?;
            by_role.entry(e.role_profile.clone()).or_default().push(e);
        }
        Ok(ScriptedBackend {
            by_role,
            cursors: Mutex::new(HashMap::new()),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Entries not yet consumed for `role`.
    pub fn remaining(&self, role: &str) -> usize {
        let used = self
            .cursors
            .lock()
            .expect("cursor lock poisoned")
            .get(role)
            .copied()
            .unwrap_or(0);
        self.by_role.get(role).map_or(0, |v| v.len().saturating_sub(used))
    }
}

impl AgentBackend for ScriptedBackend {
    fn complete(&self, request: &AgentRequest) -> Result<AgentReply> {
        let mut cursors = self.cursors.lock().expect("cursor lock poisoned");
        let cursor = cursors.entry(request.role_profile.clone()).or_insert(0);
        let entry = self
            .by_role
            .get(&request.role_profile)
            .and_then(|v| v.get(*cursor))
            .ok_or_else(|| Error::ScriptUnderflow {
                role: request.role_profile.clone(),
                ordinal: *cursor + 1,
            })?;
        *cursor += 1;
        Ok(AgentReply {
            text: entry.text.clone(),
            usage: ResourceDelta {
                time_seconds: entry.time_seconds,
                tokens: entry.tokens,
            },
        })
    }
}

/// Client for `POST {base_url}/chat/completions`.
pub struct ChatCompletionsClient {
    base_url: String,
    model: String,
    api_key: Option<String>,
    attempts: u32,
    backoff: Duration,
    client: reqwest::blocking::Client,
}

impl ChatCompletionsClient {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| Error::Configuration(e.to_string()))?;
        Ok(ChatCompletionsClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            attempts: 3,
            backoff: Duration::from_secs(1),
            client,
        })
    }

    /// Reads the credential from `CHAINSHORT_API_KEY`.
    pub fn from_env(base_url: impl Into<String>, model: impl Into<String>) -> Result<Self> {
        Self::new(base_url, model, std::env::var(API_KEY_ENV).ok())
    }

    pub fn with_retry(mut self, attempts: u32, backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff = backoff;
        self
    }

    fn body(&self, request: &AgentRequest) -> serde_json::Value {
        let mut messages = Vec::with_capacity(request.messages.len() + 1);
        if !request.system_prompt.is_empty() {
            messages.push(json!({ "role": "system", "content": request.system_prompt }));
        }
        for m in &request.messages {
            let role = match m.speaker.as_str() {
                "assistant" | "system" => m.speaker.as_str(),
                _ => "user",
            };
            messages.push(json!({ "role": role, "content": m.text }));
        }
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<(String, Option<u64>), String> {
        let mut req = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            let detail = resp.text().unwrap_or_default();
            return Err(format!("HTTP {status}: {}", detail.chars().take(300).collect::<String>()));
        }
        let value: serde_json::Value = resp.json().map_err(|e| e.to_string())?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| "response lacks choices[0].message.content".to_string())?
            .to_string();
        let prompt = value.pointer("/usage/prompt_tokens").and_then(|v| v.as_u64());
        let completion = value.pointer("/usage/completion_tokens").and_then(|v| v.as_u64());
        let tokens = match (prompt, completion) {
            (Some(p), Some(c)) => Some(p + c),
            _ => None,
        };
        Ok((text, tokens))
    }
}

impl AgentBackend for ChatCompletionsClient {
    fn complete(&self, request: &AgentRequest) -> Result<AgentReply> {
        let body = self.body(request);
        let started = Instant::now();
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            match self.attempt(&body) {
                Ok((text, tokens)) => {
                    let tokens = tokens.unwrap_or_else(|| {
                        count_tokens_fallback(&request.prompt_text()) + count_tokens_fallback(&text)
                    });
                    return Ok(AgentReply {
                        text,
                        usage: ResourceDelta {
                            time_seconds: started.elapsed().as_secs_f64(),
                            tokens,
                        },
                    });
                }
                Err(msg) => {
                    log::warn!("completion attempt {attempt}/{} failed: {msg}", self.attempts);
                    last = msg;
                    if attempt < self.attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(Error::Provider {
            message: last,
            attempts: self.attempts,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script() -> ScriptedBackend {
        ScriptedBackend::from_json(
            r#"[
                {"role_profile":"programmer","text":"first code","time_seconds":1.5,"tokens":40},
                {"role_profile":"reviewer","text":"looks off","time_seconds":0.5,"tokens":12},
                {"role_profile":"programmer","text":"second code","time_seconds":2.0,"tokens":55}
            ]"#,
        )
        .unwrap()
    }

    fn req(role: &str) -> AgentRequest {
        AgentRequest::new(role, "sys", "body".into())
    }

    #[test]
    fn fallback_counter() {
        assert_eq!(count_tokens_fallback(""), 0);
        assert_eq!(count_tokens_fallback("a b c"), 4);
        assert_eq!(count_tokens_fallback("  \n\t "), 0);
        assert_eq!(count_tokens_fallback("one"), 2);
        assert_eq!(count_tokens_fallback("a b c d e f"), 8);
    }

    #[test]
    fn scripted_replies_follow_role_order() {
        let s = script();
        let r = s.complete(&req("programmer")).unwrap();
        assert_eq!(r.text, "first code");
        assert_eq!(r.usage, ResourceDelta::new(1.5, 40).unwrap());
        assert_eq!(s.complete(&req("reviewer")).unwrap().text, "looks off");
        assert_eq!(s.complete(&req("programmer")).unwrap().text, "second code");
        assert_eq!(s.remaining("programmer"), 0);
    }

    #[test]
    fn scripted_underflow() {
        let s = script();
        s.complete(&req("reviewer")).unwrap();
        match s.complete(&req("reviewer")) {
            Err(Error::ScriptUnderflow { role, ordinal }) => {
                assert_eq!(role, "reviewer");
                assert_eq!(ordinal, 2);
            }
            other => panic!("expected underflow, got {other:?}"),
        }
        assert!(matches!(
            s.complete(&req("tester")),
            Err(Error::ScriptUnderflow { ordinal: 1, .. })
        ));
    }

    #[test]
    fn identical_scripts_give_identical_transcripts() {
        let run = || {
            let s = script();
            ["programmer", "reviewer", "programmer"]
                .iter()
                .map(|r| s.complete(&req(r)).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn negative_scripted_time_rejected() {
        let bad = r#"[{"role_profile":"p","text":"x","time_seconds":-1.0,"tokens":1}]"#;
        assert!(ScriptedBackend::from_json(bad).is_err());
    }
}
