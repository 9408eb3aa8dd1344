//! Remote provider implementations: embedding similarity, cross-encoder
//! reranking, and chat completion over HTTP. All are optional — the local
//! trigram similarity, lexical scorer, and echo mock cover offline runs.

use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::linking::SimilarityProvider;
use crate::qa::{Completion, CompletionProvider, TokenUsage};
use crate::rerank::RerankScorer;

fn provider_err(endpoint: &str, msg: impl std::fmt::Display) -> Error {
    Error::Provider {
        endpoint: endpoint.to_string(),
        msg: msg.to_string(),
    }
}

fn client(timeout_secs: u64) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(timeout_secs))
        .build()
        .map_err(|e| provider_err("client", e))
}

fn bearer(api_key_env: &Option<String>) -> Option<String> {
    api_key_env
        .as_ref()
        .and_then(|var| std::env::var(var).ok())
}

fn post(
    endpoint: &str,
    api_key_env: &Option<String>,
    timeout_secs: u64,
    body: serde_json::Value,
) -> Result<serde_json::Value> {
    let mut req = client(timeout_secs)?.post(endpoint).json(&body);
    if let Some(token) = bearer(api_key_env) {
        req = req.bearer_auth(token);
    }
    let resp = req.send().map_err(|e| provider_err(endpoint, e))?;
    if !resp.status().is_success() {
        return Err(provider_err(
            endpoint,
            format!("HTTP {}", resp.status()),
        ));
    }
    resp.json().map_err(|e| provider_err(endpoint, e))
}

/// Embedding-based similarity: embeds the query and all candidates in one
/// request, scores by cosine.
#[derive(Debug, Clone)]
pub struct RemoteEmbeddingSimilarity {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingRow>,
}
#[derive(Deserialize)]
struct EmbeddingRow {
    embedding: Vec<f64>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl SimilarityProvider for RemoteEmbeddingSimilarity {
    fn scores(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>> {
        let mut input = vec![query.to_string()];
        input.extend_from_slice(candidates);
        let value = post(
            &self.endpoint,
            &self.api_key_env,
            self.timeout_secs,
            json!({ "model": self.model, "input": input }),
        )?;
        let parsed: EmbeddingResponse =
            serde_json::from_value(value).map_err(|e| provider_err(&self.endpoint, e))?;
        if parsed.data.len() != candidates.len() + 1 {
            return Err(provider_err(
                &self.endpoint,
                format!(
                    "expected {} embeddings, got {}",
                    candidates.len() + 1,
                    parsed.data.len()
                ),
            ));
        }
        let q = &parsed.data[0].embedding;
        Ok(parsed.data[1..]
            .iter()
            .map(|row| cosine(q, &row.embedding))
            .collect())
    }
}

/// Cross-encoder reranker: one request scoring all documents against the
/// query.
#[derive(Debug, Clone)]
pub struct RemoteRerankScorer {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

#[derive(Deserialize)]
struct RerankResponse {
    results: Vec<RerankRow>,
}
#[derive(Deserialize)]
struct RerankRow {
    index: usize,
    relevance_score: f64,
}

impl RerankScorer for RemoteRerankScorer {
    fn score(&self, nlq: &str, candidates: &[String]) -> Result<Vec<f64>> {
        let value = post(
            &self.endpoint,
            &self.api_key_env,
            self.timeout_secs,
            json!({ "model": self.model, "query": nlq, "documents": candidates }),
        )?;
        let parsed: RerankResponse =
            serde_json::from_value(value).map_err(|e| provider_err(&self.endpoint, e))?;
        let mut scores = vec![0.0; candidates.len()];
        for row in parsed.results {
            if row.index >= scores.len() {
                return Err(provider_err(
                    &self.endpoint,
                    format!("result index {} out of range", row.index),
                ));
            }
            scores[row.index] = row.relevance_score;
        }
        Ok(scores)
    }
}

/// Chat-completion provider: single user message, temperature 0 (no
/// sampling for reproducibility).
#[derive(Debug, Clone)]
pub struct RemoteChatProvider {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}
#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}
#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}
#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: usize,
    #[serde(default)]
    completion_tokens: usize,
}

impl CompletionProvider for RemoteChatProvider {
    fn complete(&self, prompt: &str) -> Result<Completion> {
        let value = post(
            &self.endpoint,
            &self.api_key_env,
            self.timeout_secs,
            json!({
                "model": self.model,
                "messages": [{ "role": "user", "content": prompt }],
                "temperature": 0,
            }),
        )?;
        let parsed: ChatResponse =
            serde_json::from_value(value).map_err(|e| provider_err(&self.endpoint, e))?;
        let text = parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or(Error::EmptyCompletion)?;
        let usage = parsed
            .usage
            .map(|u| TokenUsage {
                input: u.prompt_tokens,
                output: u.completion_tokens,
            })
            .unwrap_or(TokenUsage {
                input: prompt.split_whitespace().count(),
                output: text.split_whitespace().count(),
            });
        Ok(Completion { text, usage })
    }
}
