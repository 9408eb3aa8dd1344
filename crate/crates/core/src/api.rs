//! Wire types for the HTTP service: request and response bodies shared by
//! the server and the client so both sides agree on the JSON shape.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ConfigLayer;
use crate::eval::{AttackSpec, DatasetItem, EvalReport};
use crate::qa::AnswerRecord;
use crate::rerank::Demonstration;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphStats {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
}

/// Per-request settings layered over the service's configuration; flags on
/// the command line end up here, so precedence holds even against a remote
/// server.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SynthesizeRequest {
    pub question: String,
    #[serde(default)]
    pub entity_links: Option<BTreeMap<String, String>>,
    #[serde(default)]
    pub overrides: Option<ConfigLayer>,
}

/// One candidate query, rendered for the pool dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolEntry {
    pub key: String,
    pub parent_key: Option<String>,
    pub pseudo_nlq: String,
    pub logic_form: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesizeResponse {
    pub pool: Vec<PoolEntry>,
    pub demonstrations: Vec<Demonstration>,
    pub truncated: bool,
    pub probe_count: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub question: String,
    #[serde(default)]
    pub entity_links: Option<BTreeMap<String, String>>,
    #[serde(default)]
    pub overrides: Option<ConfigLayer>,
}

pub type AnswerResponse = AnswerRecord;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRequest {
    pub items: Vec<DatasetItem>,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    #[serde(default)]
    pub overrides: Option<ConfigLayer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResponse {
    pub report: EvalReport,
    pub records: Vec<AnswerRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}
