// SPDX-License-Identifier: MIT OR Apache-2.0

//! Judges backed by HTTP endpoints.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::judge::{parse_rating, render_pae_prompt, Judge};
use crate::error::{Error, Result};
use crate::labels::LabelSet;

fn default_retries() -> usize {
    3
}
fn default_token_env() -> String {
    "STEERPROBE_JUDGE_TOKEN".into()
}
fn default_timeout() -> f64 {
    60.0
}

/// Connection settings shared by both HTTP judges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    /// Environment variable holding a bearer token; unset means no auth header.
    #[serde(default = "default_token_env")]
    pub token_env: String,
    /// Attempts per sample after the first failure.
    #[serde(default = "default_retries")]
    pub retries: usize,
    /// Request-rate ceiling; `None` is unlimited.
    #[serde(default)]
    pub max_requests_per_second: Option<f64>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token_env: default_token_env(),
            retries: default_retries(),
            max_requests_per_second: None,
            timeout_secs: default_timeout(),
        }
    }
}

/// Blocking client with a shared rate ceiling.
struct Client {
    config: EndpointConfig,
    agent: ureq::Agent,
    last: Mutex<Option<Instant>>,
}

impl Client {
    fn new(config: EndpointConfig) -> Result<Self> {
        if config.url.trim().is_empty() {
            return Err(Error::Config("judge endpoint url is empty".into()));
        }
        if let Some(r) = config.max_requests_per_second {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("request-rate ceiling {r} must be positive")));
            }
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs.max(0.001))))
            .build()
            .into();
        Ok(Self {
            config,
            agent,
            last: Mutex::new(None),
        })
    }

    fn throttle(&self) {
        let Some(rate) = self.config.max_requests_per_second else {
            return;
        };
        let gap = Duration::from_secs_f64(1.0 / rate);
        let mut last = self.last.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(prev) = *last {
            let next = prev + gap;
            let now = Instant::now();
            if next > now {
                std::thread::sleep(next - now);
            }
        }
        *last = Some(Instant::now());
    }

    fn post(&self, body: &Value) -> Result<Value> {
        self.throttle();
        let mut request = self.agent.post(&self.config.url);
        if let Ok(token) = std::env::var(&self.config.token_env) {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request
            .send_json(body)
            .map_err(|e| Error::Judge(format!("request to {} failed: {e}", self.config.url)))?;
        response
            .body_mut()
            .read_json::<Value>()
            .map_err(|e| Error::Judge(format!("response from {} is not JSON: {e}", self.config.url)))
    }

    /// Call `attempt` until it succeeds or the retry budget is spent.
    fn with_retries<T>(&self, mut attempt: impl FnMut() -> Result<T>) -> Result<T> {
        let mut last = None;
        for _ in 0..=self.config.retries {
            match attempt() {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::debug!("judge attempt failed: {e}");
                    last = Some(e);
                }
            }
        }
        Err(last.unwrap_or_else(|| Error::Judge("no judge attempts made".into())))
    }
}

/// Judge over a chat-completion endpoint (`{"model", "messages"}` in,
/// `{"choices":[{"message":{"content"}}]}` out). Ratings use the rating
/// prompt verbatim; classification asks for one label name.
pub struct ChatJudge {
    client: Client,
    model: String,
    label_set: LabelSet,
}

impl ChatJudge {
    pub fn new(config: EndpointConfig, model: impl Into<String>, label_set: LabelSet) -> Result<Self> {
        Ok(Self {
            client: Client::new(config)?,
            model: model.into(),
            label_set,
        })
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let reply = self.client.post(&body)?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| Error::Judge("chat reply has no choices[0].message.content".into()))
    }

    fn classification_prompt(&self, text: &str) -> String {
        let names: Vec<&str> = self.label_set.labels().iter().map(|l| l.display.as_str()).collect();
        format!(
            "Which one of the following personality traits does this response express most: {}?\n\
             Response: {text}\n\
             Answer with the trait name only:",
            names.join(", ")
        )
    }
}

impl Judge for ChatJudge {
    fn name(&self) -> &str {
        "chat"
    }

    fn classify(&self, text: &str) -> Result<usize> {
        let prompt = self.classification_prompt(text);
        self.client.with_retries(|| {
            let reply = self.complete(&prompt)?;
            let answer = reply.trim().trim_end_matches('.');
            self.label_set
                .index_of(answer)
                .ok_or_else(|| Error::Judge(format!("reply {reply:?} names no known label")))
        })
    }

    fn rate(&self, text: &str, target: usize) -> Result<u8> {
        let prompt = render_pae_prompt(&self.label_set, target, text)?;
        self.client.with_retries(|| parse_rating(&self.complete(&prompt)?))
    }
}

/// Judge over a classifier endpoint (`{"text"}` in, `{"label"}` out).
/// It cannot rate; `rate` always fails.
pub struct ClassifierJudge {
    client: Client,
    label_set: LabelSet,
}

impl ClassifierJudge {
    pub fn new(config: EndpointConfig, label_set: LabelSet) -> Result<Self> {
        Ok(Self {
            client: Client::new(config)?,
            label_set,
        })
    }
}

impl Judge for ClassifierJudge {
    fn name(&self) -> &str {
        "classifier"
    }

    fn classify(&self, text: &str) -> Result<usize> {
        self.client.with_retries(|| {
            let reply = self.client.post(&json!({ "text": text }))?;
            let label = match reply.get("label") {
                Some(Value::String(s)) => self.label_set.index_of(s),
                Some(Value::Number(n)) => n
                    .as_u64()
                    .map(|v| v as usize)
                    .filter(|v| *v < self.label_set.len()),
                _ => None,
            };
            label.ok_or_else(|| Error::Judge(format!("classifier reply {reply} has no known label")))
        })
    }

    fn rate(&self, _text: &str, _target: usize) -> Result<u8> {
        Err(Error::Judge("the classifier judge does not produce ratings".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_url_and_bad_rate_are_rejected() {
        assert!(matches!(Client::new(EndpointConfig::new("  ")), Err(Error::Config(_))));
        let mut cfg = EndpointConfig::new("http://127.0.0.1:9");
        cfg.max_requests_per_second = Some(0.0);
        assert!(matches!(Client::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn unreachable_endpoint_is_a_judge_error() {
        let mut cfg = EndpointConfig::new("http://127.0.0.1:9/classify");
        cfg.retries = 1;
        cfg.timeout_secs = 2.0;
        let judge = ClassifierJudge::new(cfg, LabelSet::big_five()).unwrap();
        assert!(matches!(judge.classify("hello"), Err(Error::Judge(_))));
        assert!(matches!(judge.rate("hello", 0), Err(Error::Judge(_))));
    }
}
