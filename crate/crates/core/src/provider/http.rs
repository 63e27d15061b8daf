use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CompletionProvider, CompletionResponse, FinishReason, ProviderError, PromptRequest};

fn default_budget() -> usize {
    super::DEFAULT_CONTEXT_BUDGET
}

fn default_retries() -> u32 {
    3
}

fn default_timeout() -> u64 {
    120
}

/// Connection settings for a chat-completion endpoint. Holds the *name* of
/// the environment variable with the API key, never the key itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model_name: String,
    pub api_key_env_var: String,
    #[serde(default = "default_budget")]
    pub context_budget_tokens: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

struct Secret(String);

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

/// Blocking JSON-over-HTTP chat-completion client with bounded retries.
#[derive(Debug)]
pub struct HttpProvider {
    config: ProviderConfig,
    api_key: Secret,
    agent: ureq::Agent,
    backoff: Duration,
}

impl HttpProvider {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: ProviderConfig) -> Result<Self, ProviderError> {
        let key = std::env::var(&config.api_key_env_var)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| ProviderError::MissingApiKey(config.api_key_env_var.clone()))?;
        Ok(Self::with_key(config, key))
    }

    pub fn with_key(config: ProviderConfig, api_key: String) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            api_key: Secret(api_key),
            agent,
            backoff: Duration::from_millis(500),
        }
    }

    /// Base delay between attempts; doubles after every failure.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// Chat-completion request body: system message, few-shot pairs as
    /// user/assistant turns, then the task payload.
    pub fn wire_body(&self, request: &PromptRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_instruction})];
        for ex in &request.few_shot_examples {
            messages.push(json!({"role": "user", "content": ex.input}));
            messages.push(json!({"role": "assistant", "content": ex.output}));
        }
        messages.push(json!({"role": "user", "content": request.payload}));
        json!({
            "model": self.config.model_name,
            "messages": messages,
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
        })
    }

    fn attempt(&self, body: &Value) -> Result<CompletionResponse, Attempt> {
        let response = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key.0))
            .send_json(body)
            .map_err(|e| Attempt::Transient(format!("transport error: {}", scrub(&e.to_string()))))?;
        let status = response.status().as_u16();
        let text = response
            .into_body()
            .read_to_string()
            .map_err(|e| Attempt::Transient(format!("reading body: {e}")))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Transient(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(format!("HTTP {status}")));
        }
        parse_chat_response(&text).map_err(Attempt::Fatal)
    }
}

enum Attempt {
    Transient(String),
    Fatal(String),
}

fn scrub(message: &str) -> String {
    // ureq errors never carry headers, but keep bearer material out regardless
    message
        .split_whitespace()
        .map(|w| if w.starts_with("Bearer") { "[redacted]" } else { w })
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_chat_response(text: &str) -> Result<CompletionResponse, String> {
    let v: Value = serde_json::from_str(text).map_err(|e| format!("malformed response body: {e}"))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| "response has no choices".to_string())?;
    let content = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Truncated,
        _ => FinishReason::Complete,
    };
    let mut response = CompletionResponse {
        raw_text: Some(content),
        finish_reason,
        provider_metadata: Default::default(),
    };
    if let Some(model) = v.get("model").and_then(Value::as_str) {
        response.provider_metadata.insert("model".into(), model.into());
    }
    if let Some(usage) = v.get("usage") {
        response.provider_metadata.insert("usage".into(), usage.to_string());
    }
    Ok(response)
}

impl CompletionProvider for HttpProvider {
    fn context_budget(&self) -> usize {
        self.config.context_budget_tokens
    }

    fn send(&self, request: &PromptRequest) -> Result<CompletionResponse, ProviderError> {
        let body = self.wire_body(request);
        let mut delay = self.backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(reason)) => {
                    return Err(ProviderError::ProviderUnavailable { attempts, reason })
                }
                Err(Attempt::Transient(reason)) => {
                    if attempts > self.config.max_retries {
                        return Err(ProviderError::ProviderUnavailable { attempts, reason });
                    }
                    log::warn!("provider attempt {attempts} failed ({reason}); retrying");
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{complete, TaskInput};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Serves one canned (status, body) per connection; sends each raw
    /// request back over the channel.
    fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                head.push_str(&String::from_utf8_lossy(&buf));
                tx.send(head).unwrap();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1/chat/completions"), rx)
    }

    fn config(endpoint: String, retries: u32) -> ProviderConfig {
        ProviderConfig {
            endpoint,
            model_name: "test-model".into(),
            api_key_env_var: "KGH_TEST_KEY_UNUSED".into(),
            context_budget_tokens: 32_768,
            max_retries: retries,
            timeout_secs: 5,
        }
    }

    fn ok_body(content: &str, finish: &str) -> String {
        json!({"model": "test-model", "choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": finish}]})
            .to_string()
    }

    fn request() -> PromptRequest {
        let mut r = PromptRequest::new("You are a taxonomist.", "classify: lipstick", TaskInput::Freeform);
        r.few_shot_examples.push(super::super::FewShotPair {
            input: "beach".into(),
            output: r#"{"beach": ["Travel"]}"#.into(),
        });
        r
    }

    #[test]
    fn sends_chat_messages_with_bearer_token() {
        let (url, rx) = serve(vec![(200, ok_body("{\"lipstick\": [\"Beauty\"]}", "stop"))]);
        let p = HttpProvider::with_key(config(url, 0), "sk-secret".into());
        let resp = complete(&p, &request()).unwrap();
        assert_eq!(resp.text(), "{\"lipstick\": [\"Beauty\"]}");
        let raw = rx.recv().unwrap();
        assert!(raw.to_ascii_lowercase().contains("authorization: bearer sk-secret"));
        let body: Value = serde_json::from_str(raw.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        let roles: Vec<&str> = body["messages"]
            .as_array()
            .unwrap()
            .iter()
            .map(|m| m["role"].as_str().unwrap())
            .collect();
        assert_eq!(roles, ["system", "user", "assistant", "user"]);
        assert_eq!(body["model"], "test-model");
    }

    #[test]
    fn retries_are_bounded() {
        let (url, rx) = serve(vec![(503, "{}".into()), (503, "{}".into()), (503, "{}".into())]);
        let p = HttpProvider::with_key(config(url, 2), "sk-secret".into())
            .with_backoff(Duration::from_millis(1));
        let err = complete(&p, &request()).unwrap_err();
        assert!(matches!(err, ProviderError::ProviderUnavailable { attempts: 3, .. }));
        assert!(!err.to_string().contains("sk-secret"));
        assert!(!format!("{p:?}").contains("sk-secret"));
        assert_eq!(rx.try_iter().count(), 3);
    }

    #[test]
    fn transient_failure_then_success() {
        let (url, _rx) = serve(vec![(429, "{}".into()), (200, ok_body("{}", "stop"))]);
        let p = HttpProvider::with_key(config(url, 3), "k".into()).with_backoff(Duration::from_millis(1));
        assert_eq!(complete(&p, &request()).unwrap().text(), "{}");
    }

    #[test]
    fn length_finish_is_truncation() {
        let (url, _rx) = serve(vec![(200, ok_body("{\"a\":", "length"))]);
        let p = HttpProvider::with_key(config(url, 0), "k".into());
        assert!(matches!(
            complete(&p, &request()),
            Err(ProviderError::Truncated { .. })
        ));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, rx) = serve(vec![(401, "{}".into()), (200, ok_body("{}", "stop"))]);
        let p = HttpProvider::with_key(config(url, 3), "k".into()).with_backoff(Duration::from_millis(1));
        assert!(matches!(
            complete(&p, &request()),
            Err(ProviderError::ProviderUnavailable { attempts: 1, .. })
        ));
        rx.recv().unwrap();
        assert!(rx.try_recv().is_err());
    }

    #[test]
    fn missing_key_names_variable_only() {
        let err = HttpProvider::from_env(config("http://127.0.0.1:1".into(), 0)).unwrap_err();
        assert_eq!(err, ProviderError::MissingApiKey("KGH_TEST_KEY_UNUSED".into()));
    }
}
