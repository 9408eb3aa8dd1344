//! HTTP service exposing the engine over JSON: health and graph stats,
//! candidate synthesis, single-question answering, and batch evaluation
//! with an optional demonstration-corruption attack. The core is
//! synchronous, so request work runs on the blocking pool.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::task::JoinHandle;

use kgqa_core::api::{
    AnswerRequest, ErrorResponse, EvalRequest, EvalResponse, GraphStats, HealthResponse,
    PoolEntry, SynthesizeRequest, SynthesizeResponse,
};
use kgqa_core::config::{Config, ConfigLayer};
use kgqa_core::error::{Error, Result};
use kgqa_core::eval::run_benchmark;
use kgqa_core::kg::{load_graph, EntityId, KnowledgeGraph, RelationId};
use kgqa_core::qa::{AnswerRecord, Pipeline};
use kgqa_core::rerank::TrainingExample;
use kgqa_core::{construct, linking, logicform, rerank, textify};

pub struct ServiceState {
    pub graph: KnowledgeGraph,
    pub config: Config,
    pub training_pool: Option<Vec<TrainingExample>>,
}

/// Load the graph (and optional training pool) named by the configuration.
pub fn load_state(config: Config) -> Result<ServiceState> {
    let graph_path = config
        .graph
        .as_ref()
        .ok_or_else(|| Error::Config("no graph file configured (set graph = \"...\")".into()))?;
    let triples = BufReader::new(File::open(graph_path)?);
    let labels = match &config.labels {
        Some(p) => Some(BufReader::new(File::open(p)?)),
        None => None,
    };
    let aliases = match &config.aliases {
        Some(p) => Some(BufReader::new(File::open(p)?)),
        None => None,
    };
    let mut graph = load_graph(triples, labels, aliases)?;
    if let Some(rel) = &config.type_relation {
        if graph.set_type_relation(rel).is_none() {
            return Err(Error::Config(format!(
                "type relation {rel:?} does not occur in the graph"
            )));
        }
    }
    let training_pool = match &config.training_pool {
        Some(p) => Some(load_training_pool(BufReader::new(File::open(p)?))?),
        None => None,
    };
    Ok(ServiceState {
        graph,
        config,
        training_pool,
    })
}

/// JSON-lines of {question, logic_form}; blank lines are skipped.
pub fn load_training_pool(reader: impl BufRead) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: TrainingExample = serde_json::from_str(&line).map_err(|e| Error::Load {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/graph/stats", get(graph_stats))
        .route("/synthesize", post(synthesize))
        .route("/answer", post(answer))
        .route("/eval", post(eval))
        .route("/attack", post(attack))
        .with_state(state)
}

/// Bind and serve in a background task; returns the bound address. Pass
/// port 0 for an ephemeral port.
pub async fn spawn(state: Arc<ServiceState>, addr: &str) -> Result<(SocketAddr, JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let app = router(state);
    let handle = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok((local, handle))
}

fn error_response(e: Error) -> Response {
    let status = match &e {
        Error::Provider { .. } => StatusCode::BAD_GATEWAY,
        Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    };
    (
        status,
        Json(ErrorResponse {
            error: e.to_string(),
        }),
    )
        .into_response()
}

/// Run synchronous engine work on the blocking pool and map the outcome to
/// a JSON response.
async fn run_blocking<T, F>(f: F) -> Response
where
    T: serde::Serialize + Send + 'static,
    F: FnOnce() -> Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(v)) => Json(v).into_response(),
        Ok(Err(e)) => error_response(e),
        Err(join) => error_response(Error::Other(format!("worker panicked: {join}"))),
    }
}

async fn health() -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".to_string(),
    })
}

async fn graph_stats(State(st): State<Arc<ServiceState>>) -> Json<GraphStats> {
    Json(GraphStats {
        entities: st.graph.entity_count(),
        relations: st.graph.relation_count(),
        triples: st.graph.triple_count(),
    })
}

fn merged_config(st: &ServiceState, overrides: Option<&ConfigLayer>) -> Config {
    match overrides {
        Some(layer) => {
            // The service's resolved config acts as the base; the request
            // layer wins field by field.
            let base = ConfigLayer {
                graph: st.config.graph.clone(),
                labels: st.config.labels.clone(),
                aliases: st.config.aliases.clone(),
                type_relation: st.config.type_relation.clone(),
                training_pool: st.config.training_pool.clone(),
                max_hops: Some(st.config.max_hops),
                max_edges: Some(st.config.max_edges),
                k_relations: Some(st.config.k_relations),
                n_per_parent: Some(st.config.n_per_parent),
                m_demos: Some(st.config.m_demos),
                probe_budget: Some(st.config.probe_budget),
                row_cap: Some(st.config.row_cap),
                decorations: Some(st.config.decorations),
                retries: Some(st.config.retries),
                seed: Some(st.config.seed),
                jobs: Some(st.config.jobs),
                out_dir: Some(st.config.out_dir.clone()),
                similarity: Some(st.config.similarity.clone()),
                reranker: Some(st.config.reranker.clone()),
                completion: Some(st.config.completion.clone()),
            };
            Config::resolve(Some(&base), layer)
        }
        None => st.config.clone(),
    }
}

fn do_synthesize(st: &ServiceState, req: SynthesizeRequest) -> Result<SynthesizeResponse> {
    let cfg = merged_config(st, req.overrides.as_ref());
    let similarity = cfg.similarity_provider()?;
    let scorer = cfg.rerank_scorer()?;

    let entities = linking::link_entities(&req.question, req.entity_links.as_ref(), &st.graph);
    let entity_ids: Vec<EntityId> = entities.entries.iter().map(|e| e.node).collect();
    let relations = linking::retrieve_relations(
        &req.question,
        &st.graph,
        cfg.k_relations,
        similarity.as_ref(),
    )?;
    let relation_ids: Vec<RelationId> = relations.entries.iter().map(|(r, _)| *r).collect();

    let pool = construct::synthesize(
        &req.question,
        &entity_ids,
        &relation_ids,
        &st.graph,
        &cfg.limits(),
        cfg.decorations,
    )?;

    let mut entries = Vec::with_capacity(pool.len());
    for (key, q) in &pool.queries {
        entries.push(PoolEntry {
            key: key.clone(),
            parent_key: q.parent_key.clone(),
            pseudo_nlq: textify::textify(q, &st.graph)?,
            logic_form: logicform::print(&logicform::from_query_graph(q, &st.graph)),
        });
    }

    let demonstrations = if pool.is_empty() {
        Vec::new()
    } else {
        let ranked = rerank::hierarchical_rank(
            &pool,
            &req.question,
            scorer.as_ref(),
            cfg.n_per_parent,
            &st.graph,
        )?;
        rerank::select_demonstrations(
            &ranked,
            cfg.m_demos,
            st.training_pool.as_deref(),
            scorer.as_ref(),
            &req.question,
            &st.graph,
        )?
    };

    Ok(SynthesizeResponse {
        pool: entries,
        demonstrations,
        truncated: pool.truncated,
        probe_count: pool.probe_log.len(),
    })
}

fn do_answer(st: &ServiceState, req: AnswerRequest) -> Result<AnswerRecord> {
    let cfg = merged_config(st, req.overrides.as_ref());
    let similarity = cfg.similarity_provider()?;
    let scorer = cfg.rerank_scorer()?;
    let provider = cfg.completion_provider()?;
    let pipeline = Pipeline {
        graph: &st.graph,
        similarity: similarity.as_ref(),
        scorer: scorer.as_ref(),
        provider: provider.as_ref(),
        config: cfg.qa_config(),
        training_pool: st.training_pool.clone(),
    };
    pipeline.answer(&req.question, req.entity_links.as_ref(), None)
}

fn do_eval(st: &ServiceState, req: EvalRequest) -> Result<EvalResponse> {
    let cfg = merged_config(st, req.overrides.as_ref());
    let similarity = cfg.similarity_provider()?;
    let scorer = cfg.rerank_scorer()?;
    let provider = cfg.completion_provider()?;
    let pipeline = Pipeline {
        graph: &st.graph,
        similarity: similarity.as_ref(),
        scorer: scorer.as_ref(),
        provider: provider.as_ref(),
        config: cfg.qa_config(),
        training_pool: st.training_pool.clone(),
    };
    let (report, records) = run_benchmark(&req.items, &pipeline, req.attack)?;
    Ok(EvalResponse { report, records })
}

async fn synthesize(
    State(st): State<Arc<ServiceState>>,
    Json(req): Json<SynthesizeRequest>,
) -> Response {
    run_blocking(move || do_synthesize(&st, req)).await
}

async fn answer(State(st): State<Arc<ServiceState>>, Json(req): Json<AnswerRequest>) -> Response {
    run_blocking(move || do_answer(&st, req)).await
}

async fn eval(State(st): State<Arc<ServiceState>>, Json(req): Json<EvalRequest>) -> Response {
    run_blocking(move || do_eval(&st, req)).await
}

/// Same handler as /eval but the attack specification is mandatory.
async fn attack(State(st): State<Arc<ServiceState>>, Json(req): Json<EvalRequest>) -> Response {
    if req.attack.is_none() {
        return error_response(Error::Config(
            "attack endpoint requires an attack specification".into(),
        ));
    }
    run_blocking(move || do_eval(&st, req)).await
}
