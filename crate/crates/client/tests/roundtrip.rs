use std::path::PathBuf;
use std::sync::Arc;

use kgqa_client::{Client, ClientError};
use kgqa_core::api::{AnswerRequest, EvalRequest, SynthesizeRequest};
use kgqa_core::config::Config;
use kgqa_core::eval::DatasetItem;
use kgqa_service::{load_state, spawn};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(format!(
        "{}/../../fixtures/{name}",
        env!("CARGO_MANIFEST_DIR")
    ))
}

async fn start() -> Client {
    let config = Config {
        graph: Some(fixture("cities.tsv")),
        labels: Some(fixture("cities_labels.tsv")),
        ..Config::default()
    };
    let state = Arc::new(load_state(config).unwrap());
    let (addr, _handle) = spawn(state, "127.0.0.1:0").await.unwrap();
    Client::new(format!("http://{addr}"))
}

#[tokio::test]
async fn typed_roundtrip_through_every_endpoint() {
    let client = start().await;

    assert_eq!(client.health().await.unwrap().status, "ok");
    assert!(client.graph_stats().await.unwrap().triples > 0);

    let synth = client
        .synthesize(&SynthesizeRequest {
            question: "what mayor does springfield have".to_string(),
            ..Default::default()
        })
        .await
        .unwrap();
    assert!(!synth.pool.is_empty());

    let record = client
        .answer(&AnswerRequest {
            question: "what mayor does springfield have".to_string(),
            ..Default::default()
        })
        .await
        .unwrap();
    assert!(!record.answers.is_empty());

    let eval = client
        .eval(&EvalRequest {
            items: vec![DatasetItem {
                question: "what mayor does springfield have".to_string(),
                entity_links: None,
                gold_answers: vec!["quimby".to_string()],
                gold_logic_form: None,
                tag: None,
            }],
            attack: None,
            overrides: None,
        })
        .await
        .unwrap();
    assert_eq!(eval.report.aggregate_f1, Some(1.0));
}

#[tokio::test]
async fn server_errors_surface_with_status_and_message() {
    let client = start().await;
    let err = client
        .attack(&EvalRequest {
            items: Vec::new(),
            attack: None,
            overrides: None,
        })
        .await
        .unwrap_err();
    match err {
        ClientError::Api { status, message } => {
            assert_eq!(status, 400);
            assert!(message.contains("attack"));
        }
        other => panic!("expected an API error, got {other:?}"),
    }
}
