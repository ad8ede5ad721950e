//! Request transport. The HTTP implementation speaks the chat-completion shape.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub image_png: Vec<u8>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TransportError {
    /// Timeouts, connection failures, 429 and 5xx.
    #[error("transient: {0}")]
    Transient(String),
    #[error("rejected: {0}")]
    Rejected(String),
    /// A 2xx reply whose body has no assistant text.
    #[error("unexpected response body")]
    Body(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, TransportError::Transient(_))
    }
}

/// Sends one prompt with one image and returns the assistant's text.
pub trait Transport: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<String, TransportError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    credential: String,
}

impl HttpTransport {
    pub fn new(endpoint: &str, credential: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, endpoint: endpoint.into(), credential: credential.into() }
    }
}

pub fn request_body(req: &ChatRequest) -> Value {
    let data = base64::engine::general_purpose::STANDARD.encode(&req.image_png);
    json!({
        "model": req.model,
        "temperature": 0,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "text", "text": req.prompt},
                {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{data}")}}
            ]
        }]
    })
}

/// Assistant text from a chat-completion body.
pub fn reply_text(body: &str) -> Result<String, TransportError> {
    let v: Value = serde_json::from_str(body).map_err(|_| TransportError::Body(body.into()))?;
    match &v["choices"][0]["message"]["content"] {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts.iter().filter_map(|p| p["text"].as_str()).collect::<Vec<_>>().join("")),
        _ => Err(TransportError::Body(body.into())),
    }
}

impl Transport for HttpTransport {
    fn send(&self, req: &ChatRequest) -> Result<String, TransportError> {
        let resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.credential))
            .send_json(request_body(req));
        let mut resp = match resp {
            Ok(r) => r,
            Err(e) => return Err(TransportError::Transient(e.to_string())),
        };
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| TransportError::Transient(e.to_string()))?;
        match status {
            200..=299 => reply_text(&body),
            429 | 500..=599 => Err(TransportError::Transient(format!("HTTP {status}"))),
            _ => Err(TransportError::Rejected(format!("HTTP {status}: {body}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_carries_image_as_data_url() {
        let req = ChatRequest { model: "m".into(), prompt: "p".into(), image_png: vec![1, 2, 3] };
        let b = request_body(&req);
        assert_eq!(b["model"], "m");
        assert_eq!(b["messages"][0]["content"][1]["image_url"]["url"], "data:image/png;base64,AQID");
    }

    #[test]
    fn reply_text_shapes() {
        assert_eq!(reply_text(r#"{"choices":[{"message":{"content":"hi"}}]}"#).unwrap(), "hi");
        assert_eq!(
            reply_text(r#"{"choices":[{"message":{"content":[{"type":"text","text":"a"},{"text":"b"}]}}]}"#).unwrap(),
            "ab"
        );
        assert!(matches!(reply_text(r#"{"error":"x"}"#), Err(TransportError::Body(_))));
    }
}
