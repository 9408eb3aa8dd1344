//! Core engine: answer natural-language questions over an in-memory
//! knowledge graph by synthesizing candidate queries targeted at the
//! question, re-ranking them, and using the best ones as in-context
//! demonstrations for a pluggable completion model whose output program is
//! parsed and executed against the graph.

pub mod api;
pub mod config;
pub mod construct;
pub mod error;
pub mod eval;
pub mod kg;
pub mod linking;
pub mod logicform;
pub mod oracle;
pub mod providers;
pub mod qa;
pub mod query;
pub mod rerank;
pub mod textify;

pub use config::{Config, ConfigLayer};
pub use error::{Error, Result};
pub use kg::{load_graph, KnowledgeGraph};
pub use qa::Pipeline;
