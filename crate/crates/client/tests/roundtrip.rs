use std::sync::Arc;

use seal_client::{ClientError, SealClient};
use seal_core::api::{CorruptBenchRequest, GenRequest};
use seal_core::harness::SynthSpec;
use seal_server::{serve, AppState, ServiceArgs};

async fn spawn(fixture: &str) -> SealClient {
    let args = ServiceArgs {
        fixture: Some(fixture.into()),
        ..Default::default()
    };
    let state = AppState::from_config(&args.to_config().unwrap()).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, Arc::new(state)));
    SealClient::new(format!("http://{addr}/"))
}

#[tokio::test]
async fn session_round_trip() {
    let c = spawn("count-territories").await;
    let h = c.health().await.unwrap();
    assert_eq!(h.gateway, "fixture:count-territories");
    let id = c.create_session().await.unwrap();
    let out = c.ask(&id, seal_core::fixtures::TERRITORY_QUESTION).await.unwrap();
    assert_eq!(out.answer.as_deref(), Some("2"));
    assert_eq!(c.memory().await.unwrap().records, 1);
    c.reset(&id).await.unwrap();
    c.close(&id).await.unwrap();
    match c.ask(&id, "anything").await {
        Err(ClientError::Service { status, message }) => {
            assert_eq!(status.as_u16(), 404);
            assert!(message.contains(&id));
        }
        other => panic!("expected a 404, got {other:?}"),
    }
}

#[tokio::test]
async fn reports_over_http() {
    let c = spawn("family").await;
    let spec = SynthSpec {
        n_entities: 30,
        n_dialogs: 2,
        turns_per_dialog: 2,
        ..SynthSpec::default()
    };
    let gen = c.gen(&GenRequest { seed: 4, spec }).await.unwrap();
    assert_eq!(gen.dialogs.turn_count(), 4);
    let r = c
        .corrupt_bench(&CorruptBenchRequest {
            seed: 1,
            cases_per_class: 5,
        })
        .await
        .unwrap();
    assert_eq!(r.cases_per_class, 5);
}
