use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use seal_core::agent::AgentConfig;
use seal_core::api::{
    BatchGateway, BatchRequest, ErrorBody, EvolveRequest, GenRequest, GenResponse, HealthResponse, MemoryStatus,
    SessionCreated, TurnRequest, TurnResponse,
};
use seal_core::config::SealConfig;
use seal_core::harness::{gen_synthetic, BatchReport, EvolveReport, SynthSpec};
use seal_core::memory::GlobalMemory;
use seal_server::{router, AppState, ServiceArgs, UnavailableGateway};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tower::ServiceExt;

async fn call<T: DeserializeOwned>(
    state: &Arc<AppState>,
    method: Method,
    uri: &str,
    body: Option<&impl Serialize>,
) -> (StatusCode, Option<T>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).ok())
}

const NONE: Option<&()> = None;

fn fixture_state(name: &str) -> Arc<AppState> {
    let args = ServiceArgs {
        fixture: Some(name.into()),
        ..Default::default()
    };
    Arc::new(AppState::from_config(&args.to_config().unwrap()).unwrap())
}

async fn ask(state: &Arc<AppState>, session: &str, q: &str) -> TurnResponse {
    let (status, body) = call(
        state,
        Method::POST,
        &format!("/sessions/{session}/turns"),
        Some(&TurnRequest { question: q.into() }),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    body.unwrap()
}

#[tokio::test]
async fn health_reports_the_graph() {
    let s = fixture_state("family");
    let (status, h) = call::<HealthResponse>(&s, Method::GET, "/health", NONE).await;
    assert_eq!(status, StatusCode::OK);
    let h = h.unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.entities, s.kg.entity_count());
    assert_eq!(h.gateway, "fixture:family");
}

#[tokio::test]
async fn family_session_follows_the_dialog() {
    let s = fixture_state("family");
    let (status, created) = call::<SessionCreated>(&s, Method::POST, "/sessions", NONE).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = created.unwrap().session_id;

    let first = ask(&s, &id, "Who are the children of Ludovico II, Marquess of Saluzzo?").await;
    assert!(first.answer.unwrap().contains("Francesco_of_Saluzzo"));
    let second = ask(&s, &id, "Who are siblings of that one?").await;
    assert_eq!(second.trace.resolved_question, "Who are siblings of Francesco?");
    let third = ask(&s, &id, "No, I meant Giovanni Ludovico.").await;
    assert_eq!(third.trace.resolved_question, "Who are siblings of Giovanni Ludovico?");
    assert!(third.trace.sparql.is_some());

    let (status, _) = call::<()>(&s, Method::POST, &format!("/sessions/{id}/reset"), NONE).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call::<()>(&s, Method::DELETE, &format!("/sessions/{id}"), NONE).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, err) = call::<ErrorBody>(&s, Method::POST, &format!("/sessions/{id}/reset"), NONE).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(err.unwrap().error.contains(&id));
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let s = fixture_state("family");
    let (status, _) = call::<ErrorBody>(
        &s,
        Method::POST,
        "/sessions/nope/turns",
        Some(&TurnRequest {
            question: "Who?".into(),
        }),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (_, created) = call::<SessionCreated>(&s, Method::POST, "/sessions", NONE).await;
    let id = created.unwrap().session_id;
    let (status, _) = call::<ErrorBody>(
        &s,
        Method::POST,
        &format!("/sessions/{id}/turns"),
        Some(&TurnRequest { question: "  ".into() }),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call::<ErrorBody>(
        &s,
        Method::POST,
        "/corrupt-bench",
        Some(&serde_json::json!({"seed": 1, "cases_per_class": 0})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn memory_is_appended_to_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("memory.jsonl");
    let (g, gw, turns) = seal_core::fixtures::load_fixture("count-territories").unwrap();
    let state = AppState::new(g, Arc::new(gw), "fixture", AgentConfig::default())
        .with_memory(GlobalMemory::new(), Some(path.clone()));
    let s = Arc::new(state);
    let (_, created) = call::<SessionCreated>(&s, Method::POST, "/sessions", NONE).await;
    let out = ask(&s, &created.unwrap().session_id, &turns[0]).await;
    assert_eq!(out.answer.as_deref(), Some("2"));
    assert!(out.trace.memory_written);

    let (_, status) = call::<MemoryStatus>(&s, Method::GET, "/memory", NONE).await;
    let status = status.unwrap();
    assert_eq!(status.records, 1);
    let restored = GlobalMemory::restore(&path).unwrap();
    assert_eq!(restored.len(), 1);
}

#[tokio::test]
async fn gen_then_batch_with_gold_gateway() {
    let spec = SynthSpec {
        n_entities: 40,
        n_dialogs: 3,
        turns_per_dialog: 4,
        ..SynthSpec::default()
    };
    let s = fixture_state("family");
    let (status, gen) = call::<GenResponse>(
        &s,
        Method::POST,
        "/gen",
        Some(&GenRequest {
            seed: 9,
            spec: spec.clone(),
        }),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let gen = gen.unwrap();
    let set = gen_synthetic(9, &spec).unwrap();
    let (triples, labels, _) = set.files();
    assert_eq!(gen.triples, triples);
    assert_eq!(gen.labels, labels);
    assert_eq!(gen.dialogs, set.dialogs);

    let state = Arc::new(AppState::new(
        set.graph,
        Arc::new(UnavailableGateway),
        "none",
        AgentConfig::default(),
    ));
    let req = BatchRequest {
        dialogs: gen.dialogs,
        gateway: BatchGateway::Gold { typo_rate: 0.0 },
        use_global_memory: false,
    };
    let (status, report) = call::<BatchReport>(&state, Method::POST, "/batch", Some(&req)).await;
    assert_eq!(status, StatusCode::OK);
    let report = report.unwrap();
    assert_eq!(report.turns.len(), 12);
    assert!(report.metrics.overall.unwrap() > 0.9, "{}", report.to_table());
    let (_, mem) = call::<MemoryStatus>(&state, Method::GET, "/memory", NONE).await;
    assert_eq!(mem.unwrap().records, 0);
}

#[tokio::test]
async fn evolve_report_over_a_submitted_stream() {
    let spec = SynthSpec {
        n_entities: 40,
        n_dialogs: 2,
        turns_per_dialog: 3,
        ..SynthSpec::default()
    };
    let set = gen_synthetic(3, &spec).unwrap();
    let state = Arc::new(AppState::new(
        set.graph,
        Arc::new(UnavailableGateway),
        "none",
        AgentConfig::default(),
    ));
    let req = EvolveRequest {
        seed: 0,
        stream: Some(set.dialogs),
    };
    let (status, report) = call::<EvolveReport>(&state, Method::POST, "/evolve-report", Some(&req)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report.unwrap().turns, 6);
}

#[test]
fn fixture_and_graph_conflict() {
    let args = ServiceArgs {
        fixture: Some("family".into()),
        kg: Some("triples.tsv".into()),
        ..Default::default()
    };
    let cfg: SealConfig = args.to_config().unwrap();
    let err = AppState::from_config(&cfg).err().unwrap();
    assert!(err.to_string().contains("fixture"), "{err}");
    let both = ServiceArgs {
        fixture: Some("family".into()),
        gold: Some("d.json".into()),
        ..Default::default()
    };
    assert!(both.to_config().is_err());
}
