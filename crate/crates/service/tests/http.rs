use std::path::PathBuf;
use std::sync::Arc;

use kgqa_core::api::{
    AnswerRequest, EvalRequest, EvalResponse, GraphStats, HealthResponse, SynthesizeRequest,
    SynthesizeResponse,
};
use kgqa_core::config::Config;
use kgqa_core::eval::{AttackMode, AttackSpec, DatasetItem};
use kgqa_core::logicform::AnswerValue;
use kgqa_core::qa::AnswerRecord;
use kgqa_service::{load_state, spawn};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(format!(
        "{}/../../fixtures/{name}",
        env!("CARGO_MANIFEST_DIR")
    ))
}

fn cities_config() -> Config {
    Config {
        graph: Some(fixture("cities.tsv")),
        labels: Some(fixture("cities_labels.tsv")),
        ..Config::default()
    }
}

async fn start() -> String {
    let state = Arc::new(load_state(cities_config()).unwrap());
    let (addr, _handle) = spawn(state, "127.0.0.1:0").await.unwrap();
    format!("http://{addr}")
}

#[tokio::test]
async fn health_and_stats_respond() {
    let base = start().await;
    let health: HealthResponse = reqwest::get(format!("{base}/health"))
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(health.status, "ok");

    let stats: GraphStats = reqwest::get(format!("{base}/graph/stats"))
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(stats.entities > 0 && stats.relations > 0 && stats.triples > 0);
}

#[tokio::test]
async fn synthesize_returns_a_pool_and_demonstrations() {
    let base = start().await;
    let resp: SynthesizeResponse = reqwest::Client::new()
        .post(format!("{base}/synthesize"))
        .json(&SynthesizeRequest {
            question: "what mayor does springfield have".to_string(),
            entity_links: None,
            overrides: None,
        })
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(!resp.pool.is_empty());
    assert!(!resp.demonstrations.is_empty());
    assert!(resp.probe_count > 0);
    // Every dumped candidate carries a renderable program.
    for entry in &resp.pool {
        assert!(entry.logic_form.contains("answer(") || entry.logic_form.contains("count("));
        assert!(!entry.pseudo_nlq.is_empty());
    }
}

#[tokio::test]
async fn answer_resolves_the_expected_entity() {
    let base = start().await;
    let record: AnswerRecord = reqwest::Client::new()
        .post(format!("{base}/answer"))
        .json(&AnswerRequest {
            question: "what mayor does springfield have".to_string(),
            entity_links: None,
            overrides: None,
        })
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(record
        .answers
        .iter()
        .any(|a| matches!(a, AnswerValue::Entity { label, .. } if label == "quimby")));
}

#[tokio::test]
async fn eval_reports_and_attack_requires_a_spec() {
    let base = start().await;
    let items = vec![DatasetItem {
        question: "what mayor does springfield have".to_string(),
        entity_links: None,
        gold_answers: vec!["quimby".to_string()],
        gold_logic_form: None,
        tag: None,
    }];
    let http = reqwest::Client::new();

    let resp: EvalResponse = http
        .post(format!("{base}/eval"))
        .json(&EvalRequest {
            items: items.clone(),
            attack: None,
            overrides: None,
        })
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(resp.report.aggregate_f1, Some(1.0));
    assert_eq!(resp.records.len(), 1);

    // /attack without a spec is a client error ...
    let bad = http
        .post(format!("{base}/attack"))
        .json(&EvalRequest {
            items: items.clone(),
            attack: None,
            overrides: None,
        })
        .send()
        .await
        .unwrap();
    assert_eq!(bad.status(), reqwest::StatusCode::BAD_REQUEST);

    // ... and with one it evaluates.
    let attacked: EvalResponse = http
        .post(format!("{base}/attack"))
        .json(&EvalRequest {
            items,
            attack: Some(AttackSpec {
                level: 1,
                mode: AttackMode::Relation,
                seed: 7,
            }),
            overrides: None,
        })
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(attacked.records.len(), 1);
    assert_eq!(attacked.records[0].corrupted_demos.len(), 1);
}

#[tokio::test]
async fn per_request_overrides_shrink_the_limits() {
    let base = start().await;
    let overrides = kgqa_core::config::ConfigLayer {
        max_hops: Some(1),
        max_edges: Some(1),
        decorations: Some(false),
        ..Default::default()
    };
    let resp: SynthesizeResponse = reqwest::Client::new()
        .post(format!("{base}/synthesize"))
        .json(&SynthesizeRequest {
            question: "what mayor does springfield have".to_string(),
            entity_links: None,
            overrides: Some(overrides),
        })
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(!resp.pool.is_empty());
    for entry in &resp.pool {
        assert_eq!(entry.logic_form.matches("triplet(").count(), 1);
    }
}
