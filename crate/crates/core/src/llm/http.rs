//! OpenAI-compatible `POST {endpoint}/chat/completions`, one system and one
//! user message, no streaming.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{LlmBackend, LlmConfig, LlmError};

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
    stream: bool,
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

pub struct HttpBackend {
    http: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    model: String,
    temperature: f64,
    max_tokens: u32,
    system_prompt: String,
}

impl HttpBackend {
    pub fn new(config: &LlmConfig, api_key: Option<String>) -> Result<Self, LlmError> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| LlmError::Transport("http backend needs an endpoint".into()))?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(HttpBackend {
            http,
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            api_key: api_key.filter(|k| !k.is_empty()),
            model: config.model.clone(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            system_prompt: config.system_prompt.clone(),
        })
    }
}

impl LlmBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [
                ChatMessage {
                    role: "system",
                    content: &self.system_prompt,
                },
                ChatMessage {
                    role: "user",
                    content: prompt,
                },
            ],
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            stream: false,
        };
        let mut req = self.http.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(map_transport)?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(LlmError::HttpStatus {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| if e.is_timeout() { LlmError::Timeout } else { LlmError::InvalidResponse(e.to_string()) })?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::InvalidResponse("no choices[0].message.content".into()))
    }
}

fn map_transport(e: reqwest::Error) -> LlmError {
    if e.is_timeout() {
        LlmError::Timeout
    } else {
        LlmError::Transport(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{LlmClient, RetryPolicy};
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};
    use std::thread;

    /// Serves the canned `(status, body)` responses in order, one per
    /// connection, and records the request bodies it saw.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = seen.clone();
        thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                let request = loop {
                    let n = stream.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                    let text = String::from_utf8_lossy(&buf).to_string();
                    if let Some(idx) = text.find("\r\n\r\n") {
                        let len = text[..idx]
                            .lines()
                            .find_map(|l| {
                                l.to_ascii_lowercase()
                                    .strip_prefix("content-length:")
                                    .map(|v| v.trim().parse::<usize>().unwrap())
                            })
                            .unwrap_or(0);
                        if buf.len() >= idx + 4 + len {
                            break text;
                        }
                    }
                    if n == 0 {
                        break text;
                    }
                };
                seen2.lock().unwrap().push(request);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1"), seen)
    }

    fn ok_body(text: &str) -> String {
        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn config(endpoint: String) -> LlmConfig {
        LlmConfig {
            endpoint: Some(endpoint),
            retry: RetryPolicy {
                attempts: 3,
                initial_backoff_ms: 0,
            },
            timeout_secs: 5.0,
            ..LlmConfig::default()
        }
    }

    #[test]
    fn sends_chat_request_and_parses_reply() {
        let (endpoint, seen) = serve(vec![(200, ok_body("SELECT 1"))]);
        let backend = HttpBackend::new(&config(endpoint), Some("sk-test".into())).unwrap();
        assert_eq!(backend.complete("Question: q\nSQL: ").unwrap(), "SELECT 1");
        let req = seen.lock().unwrap()[0].clone();
        assert!(req.starts_with("POST /v1/chat/completions"));
        assert!(req.to_ascii_lowercase().contains("authorization: bearer sk-test"));
        let body: serde_json::Value = serde_json::from_str(&req[req.find("\r\n\r\n").unwrap() + 4..]).unwrap();
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "Question: q\nSQL: ");
    }

    #[test]
    fn client_retries_429_then_succeeds() {
        let (endpoint, seen) = serve(vec![(429, "{}".into()), (200, ok_body("ok"))]);
        let cfg = config(endpoint);
        let client = LlmClient::new(cfg.clone(), Box::new(HttpBackend::new(&cfg, None).unwrap()));
        assert_eq!(client.complete("p").unwrap(), "ok");
        assert_eq!(seen.lock().unwrap().len(), 2);
    }

    #[test]
    fn client_does_not_retry_400() {
        let (endpoint, seen) = serve(vec![(400, "{\"error\":\"bad\"}".into())]);
        let cfg = config(endpoint);
        let client = LlmClient::new(cfg.clone(), Box::new(HttpBackend::new(&cfg, None).unwrap()));
        let err = client.complete("p").unwrap_err();
        assert!(matches!(err, LlmError::HttpStatus { status: 400, .. }));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn missing_endpoint_is_rejected() {
        assert!(HttpBackend::new(&LlmConfig::default(), None).is_err());
    }
}
