//! HTTP provider speaking the chat-completions wire shape.

use std::time::Duration;

use serde_json::{json, Value};

use super::{
    fingerprint, AttemptRecord, ChatMessage, ChatProvider, Completion, GenerationParams, LlmError, RateLimiter,
    ResponseFormat,
};

/// Minimal POST transport so retry logic can be exercised without a network.
pub trait HttpTransport: Send + Sync {
    /// Returns the status code and body, or a transport-level error message.
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &str) -> Result<(u16, String), String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &str) -> Result<(u16, String), String> {
        let mut request = self.agent.post(url).header("Content-Type", "application/json");
        for (k, v) in headers {
            request = request.header(k.as_str(), v.as_str());
        }
        let mut response = request.send(body).map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok((status, text))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before attempt `i + 2` is `backoff[min(i, len - 1)]`.
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff: vec![Duration::from_secs(1), Duration::from_secs(2), Duration::from_secs(4)],
        }
    }
}

impl RetryPolicy {
    fn delay(&self, failed_attempts: usize) -> Duration {
        match self.backoff.len() {
            0 => Duration::ZERO,
            n => self.backoff[(failed_attempts - 1).min(n - 1)],
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    /// 0 disables rate limiting.
    pub requests_per_minute: u32,
}

pub struct HttpProvider {
    config: HttpConfig,
    transport: Box<dyn HttpTransport>,
    limiter: Option<RateLimiter>,
}

pub fn request_body(model: &str, messages: &[ChatMessage], params: &GenerationParams) -> Value {
    let mut body = json!({
        "model": model,
        "messages": messages,
        "temperature": params.temperature,
    });
    if let Some(seed) = params.seed {
        body["seed"] = json!(seed);
    }
    if params.response_format == ResponseFormat::Structured {
        body["response_format"] = json!({"type": "json_object"});
    }
    if let Some(max) = params.max_output {
        body["max_tokens"] = json!(max);
    }
    body
}

/// Extracts `choices[0].message.content`.
pub fn parse_response(body: &str) -> Result<String, LlmError> {
    let v: Value = serde_json::from_str(body).map_err(|e| LlmError::BadResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))
}

fn retryable(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let transport = Box::new(UreqTransport::new(config.timeout));
        Self::with_transport(config, transport)
    }

    pub fn with_transport(config: HttpConfig, transport: Box<dyn HttpTransport>) -> Result<Self, LlmError> {
        if config.endpoint.trim().is_empty() {
            return Err(LlmError::Config("http provider requires an endpoint".into()));
        }
        if config.retry.max_attempts == 0 {
            return Err(LlmError::Config("max_attempts must be at least 1".into()));
        }
        let limiter = (config.requests_per_minute > 0).then(|| RateLimiter::new(config.requests_per_minute, 1));
        Ok(Self {
            config,
            transport,
            limiter,
        })
    }

    /// Completes and returns the log of every attempt made.
    pub fn complete_with_log(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> (Result<Completion, LlmError>, Vec<AttemptRecord>) {
        let mut log = Vec::new();
        if messages.is_empty() {
            return (Err(LlmError::NoMessages), log);
        }
        let body = request_body(&self.config.model, messages, params).to_string();
        let mut headers = Vec::new();
        if let Some(key) = &self.config.api_key {
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        for attempt in 1..=self.config.retry.max_attempts {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            let outcome = self.transport.post_json(&self.config.endpoint, &headers, &body);
            let retry = match outcome {
                Ok((status, text)) if (200..300).contains(&status) => {
                    log.push(AttemptRecord {
                        attempt,
                        outcome: format!("status {status}"),
                    });
                    let result = parse_response(&text).map(|content| Completion {
                        content,
                        fingerprint: fingerprint(&self.config.model, messages, params),
                    });
                    return (result, log);
                }
                Ok((status, text)) => {
                    let snippet: String = text.chars().take(200).collect();
                    log.push(AttemptRecord {
                        attempt,
                        outcome: format!("status {status}: {snippet}"),
                    });
                    retryable(status)
                }
                Err(e) => {
                    log.push(AttemptRecord {
                        attempt,
                        outcome: format!("transport error: {e}"),
                    });
                    true
                }
            };
            if !retry {
                break;
            }
            if attempt < self.config.retry.max_attempts {
                std::thread::sleep(self.config.retry.delay(attempt as usize));
            }
        }
        (Err(LlmError::Http { attempts: log.clone() }), log)
    }
}

impl ChatProvider for HttpProvider {
    fn model(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<Completion, LlmError> {
        let (result, log) = self.complete_with_log(messages, params);
        if log.len() > 1 {
            log::warn!("completion took {} attempts", log.len());
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<Result<(u16, String), String>>>,
        bodies: Mutex<Vec<String>>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<(u16, String), String>>) -> Self {
            Self {
                replies: Mutex::new(replies.into_iter().rev().collect()),
                bodies: Mutex::new(Vec::new()),
            }
        }
    }

    impl HttpTransport for &'static Scripted {
        fn post_json(&self, _url: &str, _h: &[(String, String)], body: &str) -> Result<(u16, String), String> {
            self.bodies.lock().unwrap().push(body.to_string());
            self.replies.lock().unwrap().pop().unwrap_or(Err("no more replies".into()))
        }
    }

    fn ok(content: &str) -> Result<(u16, String), String> {
        Ok((200, json!({"choices":[{"message":{"role":"assistant","content":content}}]}).to_string()))
    }

    fn config(attempts: u32) -> HttpConfig {
        HttpConfig {
            endpoint: "http://localhost/v1/chat/completions".into(),
            model: "gpt-test".into(),
            api_key: Some("k".into()),
            retry: RetryPolicy {
                max_attempts: attempts,
                backoff: vec![Duration::ZERO],
            },
            timeout: Duration::from_secs(1),
            requests_per_minute: 0,
        }
    }

    fn leak(s: Scripted) -> &'static Scripted {
        Box::leak(Box::new(s))
    }

    #[test]
    fn retries_after_429() {
        let t = leak(Scripted::new(vec![Ok((429, "slow down".into())), ok("yes")]));
        let p = HttpProvider::with_transport(config(2), Box::new(t)).unwrap();
        let (res, log) = p.complete_with_log(&[ChatMessage::user("q")], &GenerationParams::default());
        assert_eq!(res.unwrap().content, "yes");
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn exhausted_retries_carry_log() {
        let t = leak(Scripted::new(vec![Err("refused".into()), Ok((503, "".into()))]));
        let p = HttpProvider::with_transport(config(2), Box::new(t)).unwrap();
        match p.complete(&[ChatMessage::user("q")], &GenerationParams::default()) {
            Err(LlmError::Http { attempts }) => assert_eq!(attempts.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = leak(Scripted::new(vec![Ok((401, "bad key".into())), ok("never")]));
        let p = HttpProvider::with_transport(config(3), Box::new(t)).unwrap();
        let (res, log) = p.complete_with_log(&[ChatMessage::user("q")], &GenerationParams::default());
        assert!(res.is_err());
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn wire_shape() {
        let t = leak(Scripted::new(vec![ok("{}")]));
        let p = HttpProvider::with_transport(config(1), Box::new(t)).unwrap();
        let params = GenerationParams {
            seed: Some(42),
            ..GenerationParams::default()
        }
        .structured();
        p.complete(&[ChatMessage::system("s"), ChatMessage::user("q")], &params).unwrap();
        let body: Value = serde_json::from_str(&t.bodies.lock().unwrap()[0]).unwrap();
        assert_eq!(body["model"], "gpt-test");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["seed"], 42);
        assert_eq!(body["response_format"]["type"], "json_object");
        assert_eq!(body["messages"][1]["role"], "user");
    }

    #[test]
    fn endpoint_required() {
        let mut c = config(1);
        c.endpoint.clear();
        assert!(HttpProvider::new(c).is_err());
    }
}
