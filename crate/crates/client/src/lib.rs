//! Thin async client for the KGQA service. Wraps each endpoint in a typed
//! method; error bodies from the server come back as `ClientError::Api`.

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use kgqa_core::api::{
    AnswerRequest, AnswerResponse, ErrorResponse, EvalRequest, EvalResponse, GraphStats,
    HealthResponse, SynthesizeRequest, SynthesizeResponse,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server error (status {status}): {message}")]
    Api { status: u16, message: String },
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Client {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            Ok(resp.json::<T>().await?)
        } else {
            let message = match resp.json::<ErrorResponse>().await {
                Ok(body) => body.error,
                Err(_) => status.to_string(),
            };
            Err(ClientError::Api {
                status: status.as_u16(),
                message,
            })
        }
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let resp = self
            .http
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .await?;
        Self::decode(resp).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let resp = self.http.get(format!("{}{path}", self.base)).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<HealthResponse> {
        self.get("/health").await
    }

    pub async fn graph_stats(&self) -> Result<GraphStats> {
        self.get("/graph/stats").await
    }

    pub async fn synthesize(&self, req: &SynthesizeRequest) -> Result<SynthesizeResponse> {
        self.post("/synthesize", req).await
    }

    pub async fn answer(&self, req: &AnswerRequest) -> Result<AnswerResponse> {
        self.post("/answer", req).await
    }

    pub async fn eval(&self, req: &EvalRequest) -> Result<EvalResponse> {
        self.post("/eval", req).await
    }

    pub async fn attack(&self, req: &EvalRequest) -> Result<EvalResponse> {
        self.post("/attack", req).await
    }
}
