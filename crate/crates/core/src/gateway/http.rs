//! Chat-completions style JSON-over-HTTP backends.

use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use super::{BackendBinding, BackendFailure, ChatBackend, ChatMessage, EmbeddingBackend};

fn agent(timeout: Duration) -> Agent {
    Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build()
        .into()
}

fn endpoint_url(binding: &BackendBinding, path: &str) -> String {
    format!("{}/{}", binding.endpoint.trim_end_matches('/'), path)
}

fn post_json(agent: &Agent, binding: &BackendBinding, url: &str, body: &Value) -> Result<Value, BackendFailure> {
    let mut request = agent.post(url).header("Content-Type", "application/json");
    if let Some(var) = &binding.auth {
        let key = std::env::var(var).map_err(|_| BackendFailure::Transport {
            status: 401,
            message: format!("environment variable {var} is not set"),
        })?;
        request = request.header("Authorization", &format!("Bearer {key}"));
    }
    let mut response = request
        .send(body.to_string())
        .map_err(|e| BackendFailure::Transport { status: 0, message: e.to_string() })?;
    let status = response.status().as_u16();
    if status == 429 {
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        return Err(BackendFailure::RateLimited { retry_after });
    }
    let text = response
        .body_mut()
        .read_to_string()
        .map_err(|e| BackendFailure::Transport { status: 0, message: e.to_string() })?;
    if !(200..300).contains(&status) {
        return Err(BackendFailure::Transport { status, message: truncate(&text, 200) });
    }
    serde_json::from_str(&text).map_err(|e| BackendFailure::BadResponse(format!("invalid JSON: {e}")))
}

fn truncate(text: &str, max: usize) -> String {
    text.chars().take(max).collect()
}

/// Request body for `POST {endpoint}/chat/completions`.
pub fn chat_request_body(binding: &BackendBinding, history: &[ChatMessage]) -> Value {
    let messages: Vec<Value> = history
        .iter()
        .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
        .collect();
    json!({
        "model": binding.model_name,
        "messages": messages,
        "temperature": binding.sampling.temperature,
        "max_tokens": binding.sampling.max_tokens,
    })
}

/// Pulls `choices[0].message.content` out of a chat-completions response.
pub fn parse_chat_response(body: &Value) -> Result<String, BackendFailure> {
    body.get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendFailure::BadResponse("missing choices[0].message.content".into()))
}

/// Pulls `data[*].embedding` out of an embeddings response, ordered by `index`.
pub fn parse_embedding_response(body: &Value) -> Result<Vec<Vec<f64>>, BackendFailure> {
    let data = body
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendFailure::BadResponse("missing data array".into()))?;
    let mut rows = Vec::with_capacity(data.len());
    for (pos, item) in data.iter().enumerate() {
        let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
        let values = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendFailure::BadResponse("missing embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| BackendFailure::BadResponse("non-numeric embedding".into())))
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push((index, values));
    }
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}

pub struct HttpChatBackend {
    agent: Agent,
}

impl HttpChatBackend {
    pub fn new(timeout: Duration) -> Self {
        HttpChatBackend { agent: agent(timeout) }
    }
}

impl Default for HttpChatBackend {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, binding: &BackendBinding, history: &[ChatMessage]) -> Result<String, BackendFailure> {
        let url = endpoint_url(binding, "chat/completions");
        let body = post_json(&self.agent, binding, &url, &chat_request_body(binding, history))?;
        parse_chat_response(&body)
    }
}

pub struct HttpEmbeddingBackend {
    agent: Agent,
}

impl HttpEmbeddingBackend {
    pub fn new(timeout: Duration) -> Self {
        HttpEmbeddingBackend { agent: agent(timeout) }
    }
}

impl Default for HttpEmbeddingBackend {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl EmbeddingBackend for HttpEmbeddingBackend {
    fn embed(&self, binding: &BackendBinding, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendFailure> {
        let url = endpoint_url(binding, "embeddings");
        let body = json!({"model": binding.model_name, "input": texts});
        let response = post_json(&self.agent, binding, &url, &body)?;
        parse_embedding_response(&response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_body_shape() {
        let binding = BackendBinding::chat("b", "http://x", "gpt").with_temperature(0.0);
        let body = chat_request_body(&binding, &[ChatMessage::system("s"), ChatMessage::user("u")]);
        assert_eq!(body["model"], "gpt");
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["temperature"], 0.0);
    }

    #[test]
    fn parses_chat_and_embedding_responses() {
        let chat = json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": "hi"}}]});
        assert_eq!(parse_chat_response(&chat).unwrap(), "hi");
        assert!(parse_chat_response(&json!({"choices": []})).is_err());

        let emb = json!({"data": [
            {"index": 1, "embedding": [0.0, 1.0]},
            {"index": 0, "embedding": [1.0, 0.0]}
        ]});
        assert_eq!(parse_embedding_response(&emb).unwrap(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }
}
