//! Layered configuration: built-in defaults, then a TOML file, then
//! explicit overrides (CLI flags). Secrets never live in the file — remote
//! providers name an environment variable instead.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::construct::Limits;
use crate::error::{Error, Result};
use crate::linking::{LocalTrigramSimilarity, SimilarityProvider};
use crate::providers::{RemoteChatProvider, RemoteEmbeddingSimilarity, RemoteRerankScorer};
use crate::qa::{CompletionProvider, EchoMock, QaConfig};
use crate::rerank::{LocalLexicalScorer, RerankScorer};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    /// "local" (or "echo-mock" for completion) vs "remote".
    pub mode: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: Option<u64>,
}

impl ProviderConfig {
    fn merged(&self, over: &ProviderConfig) -> ProviderConfig {
        ProviderConfig {
            mode: over.mode.clone().or_else(|| self.mode.clone()),
            endpoint: over.endpoint.clone().or_else(|| self.endpoint.clone()),
            model: over.model.clone().or_else(|| self.model.clone()),
            api_key_env: over
                .api_key_env
                .clone()
                .or_else(|| self.api_key_env.clone()),
            timeout_secs: over.timeout_secs.or(self.timeout_secs),
        }
    }

    fn remote_parts(&self, what: &str) -> Result<(String, String, Option<String>, u64)> {
        let endpoint = self
            .endpoint
            .clone()
            .ok_or_else(|| Error::Config(format!("{what}: remote mode requires an endpoint")))?;
        let model = self.model.clone().unwrap_or_default();
        Ok((
            endpoint,
            model,
            self.api_key_env.clone(),
            self.timeout_secs.unwrap_or(60),
        ))
    }
}

/// One layer of settings; every field optional so layers can be merged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub graph: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub type_relation: Option<String>,
    pub training_pool: Option<PathBuf>,
    pub max_hops: Option<usize>,
    pub max_edges: Option<usize>,
    pub k_relations: Option<usize>,
    pub n_per_parent: Option<usize>,
    pub m_demos: Option<usize>,
    pub probe_budget: Option<usize>,
    pub row_cap: Option<usize>,
    pub decorations: Option<bool>,
    pub retries: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub similarity: Option<ProviderConfig>,
    #[serde(default)]
    pub reranker: Option<ProviderConfig>,
    #[serde(default)]
    pub completion: Option<ProviderConfig>,
}

impl ConfigLayer {
    pub fn from_toml(text: &str) -> Result<ConfigLayer> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub graph: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub type_relation: Option<String>,
    pub training_pool: Option<PathBuf>,
    pub max_hops: usize,
    pub max_edges: usize,
    pub k_relations: usize,
    pub n_per_parent: usize,
    pub m_demos: usize,
    pub probe_budget: usize,
    pub row_cap: usize,
    pub decorations: bool,
    pub retries: usize,
    pub seed: u64,
    pub jobs: usize,
    pub out_dir: PathBuf,
    pub similarity: ProviderConfig,
    pub reranker: ProviderConfig,
    pub completion: ProviderConfig,
}

impl Default for Config {
    fn default() -> Self {
        let limits = Limits::default();
        Config {
            graph: None,
            labels: None,
            aliases: None,
            type_relation: None,
            training_pool: None,
            max_hops: limits.max_hops,
            max_edges: limits.max_edges,
            k_relations: 20,
            n_per_parent: 3,
            m_demos: 10,
            probe_budget: limits.probe_budget,
            row_cap: limits.row_cap,
            decorations: true,
            retries: 1,
            seed: 0,
            jobs: 1,
            out_dir: PathBuf::from("out"),
            similarity: ProviderConfig::default(),
            reranker: ProviderConfig::default(),
            completion: ProviderConfig::default(),
        }
    }
}

impl Config {
    /// Resolve defaults <- file <- overrides, in increasing precedence.
    pub fn resolve(file: Option<&ConfigLayer>, overrides: &ConfigLayer) -> Config {
        let mut c = Config::default();
        for layer in file.into_iter().chain(std::iter::once(overrides)) {
            macro_rules! take {
                ($($field:ident),*) => {
                    $(if let Some(v) = layer.$field.clone() { c.$field = v; })*
                };
            }
            macro_rules! take_opt {
                ($($field:ident),*) => {
                    $(if layer.$field.is_some() { c.$field = layer.$field.clone(); })*
                };
            }
            take_opt!(graph, labels, aliases, type_relation, training_pool);
            take!(
                max_hops,
                max_edges,
                k_relations,
                n_per_parent,
                m_demos,
                probe_budget,
                row_cap,
                decorations,
                retries,
                seed,
                jobs,
                out_dir
            );
            if let Some(p) = &layer.similarity {
                c.similarity = c.similarity.merged(p);
            }
            if let Some(p) = &layer.reranker {
                c.reranker = c.reranker.merged(p);
            }
            if let Some(p) = &layer.completion {
                c.completion = c.completion.merged(p);
            }
        }
        c
    }

    pub fn limits(&self) -> Limits {
        Limits {
            max_hops: self.max_hops,
            max_edges: self.max_edges,
            probe_budget: self.probe_budget,
            value_cache_cap: Limits::default().value_cache_cap,
            row_cap: self.row_cap,
        }
    }

    pub fn qa_config(&self) -> QaConfig {
        QaConfig {
            limits: self.limits(),
            k_relations: self.k_relations,
            n_per_parent: self.n_per_parent,
            m_demos: self.m_demos,
            decorations: self.decorations,
            retries: self.retries,
        }
    }

    pub fn similarity_provider(&self) -> Result<Box<dyn SimilarityProvider>> {
        match self.similarity.mode.as_deref().unwrap_or("local") {
            "local" => Ok(Box::new(LocalTrigramSimilarity)),
            "remote" => {
                let (endpoint, model, api_key_env, timeout_secs) =
                    self.similarity.remote_parts("similarity")?;
                Ok(Box::new(RemoteEmbeddingSimilarity {
                    endpoint,
                    model,
                    api_key_env,
                    timeout_secs,
                }))
            }
            other => Err(Error::Config(format!(
                "unknown similarity mode {other:?} (expected local or remote)"
            ))),
        }
    }

    pub fn rerank_scorer(&self) -> Result<Box<dyn RerankScorer>> {
        match self.reranker.mode.as_deref().unwrap_or("local") {
            "local" => Ok(Box::new(LocalLexicalScorer)),
            "remote" => {
                let (endpoint, model, api_key_env, timeout_secs) =
                    self.reranker.remote_parts("reranker")?;
                Ok(Box::new(RemoteRerankScorer {
                    endpoint,
                    model,
                    api_key_env,
                    timeout_secs,
                }))
            }
            other => Err(Error::Config(format!(
                "unknown reranker mode {other:?} (expected local or remote)"
            ))),
        }
    }

    pub fn completion_provider(&self) -> Result<Box<dyn CompletionProvider>> {
        match self.completion.mode.as_deref().unwrap_or("echo-mock") {
            "echo-mock" => Ok(Box::new(EchoMock)),
            "remote" => {
                let (endpoint, model, api_key_env, timeout_secs) =
                    self.completion.remote_parts("completion")?;
                Ok(Box::new(RemoteChatProvider {
                    endpoint,
                    model,
                    api_key_env,
                    timeout_secs,
                }))
            }
            other => Err(Error::Config(format!(
                "unknown completion mode {other:?} (expected echo-mock or remote)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_documented_constants() {
        let c = Config::default();
        assert_eq!(c.max_hops, 3);
        assert_eq!(c.max_edges, 5);
        assert_eq!(c.k_relations, 20);
        assert_eq!(c.n_per_parent, 3);
        assert_eq!(c.m_demos, 10);
        assert!(c.decorations);
    }

    #[test]
    fn file_overrides_defaults_and_flags_override_the_file() {
        let file = ConfigLayer::from_toml(
            "max_hops = 2\nk_relations = 7\nseed = 11\n[completion]\nmode = \"remote\"\nendpoint = \"http://example.test/v1\"\n",
        )
        .unwrap();
        let overrides = ConfigLayer {
            k_relations: Some(9),
            ..ConfigLayer::default()
        };
        let c = Config::resolve(Some(&file), &overrides);
        assert_eq!(c.max_hops, 2); // from the file
        assert_eq!(c.k_relations, 9); // flag wins over the file
        assert_eq!(c.max_edges, 5); // untouched default
        assert_eq!(c.seed, 11);
        assert_eq!(c.completion.mode.as_deref(), Some("remote"));
    }

    #[test]
    fn provider_layers_merge_field_by_field() {
        let file = ConfigLayer::from_toml(
            "[completion]\nmode = \"remote\"\nendpoint = \"http://example.test/v1\"\nmodel = \"m1\"\n",
        )
        .unwrap();
        let overrides = ConfigLayer {
            completion: Some(ProviderConfig {
                model: Some("m2".to_string()),
                ..ProviderConfig::default()
            }),
            ..ConfigLayer::default()
        };
        let c = Config::resolve(Some(&file), &overrides);
        assert_eq!(c.completion.model.as_deref(), Some("m2"));
        assert_eq!(
            c.completion.endpoint.as_deref(),
            Some("http://example.test/v1")
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigLayer::from_toml("max_hopz = 3\n").is_err());
    }

    #[test]
    fn provider_selection_validates_modes() {
        let c = Config::default();
        assert!(c.similarity_provider().is_ok());
        assert!(c.rerank_scorer().is_ok());
        assert!(c.completion_provider().is_ok());

        let mut remote = Config::default();
        remote.completion.mode = Some("remote".to_string());
        assert!(remote.completion_provider().is_err()); // endpoint missing
        remote.completion.endpoint = Some("http://example.test/v1".to_string());
        assert!(remote.completion_provider().is_ok());

        let mut bad = Config::default();
        bad.similarity.mode = Some("quantum".to_string());
        assert!(bad.similarity_provider().is_err());
    }
}
