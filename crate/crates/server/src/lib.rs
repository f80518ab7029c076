//! HTTP/JSON service around the conversational question-answering pipeline.

mod state;

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use seal_core::agent::Pipeline;
use seal_core::api::{
    BatchGateway, BatchRequest, CorruptBenchRequest, ErrorBody, EvolveRequest, GenRequest, GenResponse, HealthResponse,
    MemoryStatus, SessionCreated, TurnRequest, TurnResponse,
};
use seal_core::calibrate::DEFAULT_EMBEDDER;
use seal_core::harness::{
    constructed_evolve_report, evolve_stream, gen_synthetic, run_batch, run_corruption_bench, run_evolve_report,
    BatchReport, CorruptionReport, EvolveReport, GoldGateway, GoldMode,
};
use seal_core::memory::GlobalMemory;
use tokio::net::TcpListener;

pub use state::{AppState, ServiceArgs, SetupError, UnavailableGateway};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (
            status,
            Json(ErrorBody {
                error: self.to_string(),
            }),
        )
            .into_response()
    }
}

type Shared = Arc<AppState>;
type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/turns", post(turn))
        .route("/sessions/{id}/reset", post(reset_session))
        .route("/memory", get(memory_status))
        .route("/batch", post(batch))
        .route("/gen", post(gen))
        .route("/corrupt-bench", post(corrupt_bench))
        .route("/evolve-report", post(evolve_report))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: Shared) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn health(State(s): State<Shared>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        entities: s.kg.entity_count(),
        relations: s.kg.relation_count(),
        facts: s.kg.fact_count(),
        memory_records: s.memory.lock().expect("memory lock").len(),
        gateway: s.gateway_name.clone(),
    })
}

async fn create_session(State(s): State<Shared>) -> (StatusCode, Json<SessionCreated>) {
    (
        StatusCode::CREATED,
        Json(SessionCreated {
            session_id: s.new_session(),
        }),
    )
}

fn unknown_session(id: &str) -> ApiError {
    ApiError::NotFound(format!("unknown session `{id}`"))
}

async fn delete_session(State(s): State<Shared>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    match s.sessions.lock().expect("session lock").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(unknown_session(&id)),
    }
}

async fn reset_session(State(s): State<Shared>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    match s.sessions.lock().expect("session lock").get_mut(&id) {
        Some(d) => {
            d.reset();
            Ok(StatusCode::NO_CONTENT)
        }
        None => Err(unknown_session(&id)),
    }
}

async fn turn(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<TurnRequest>,
) -> ApiResult<TurnResponse> {
    if req.question.trim().is_empty() {
        return Err(ApiError::BadRequest("empty question".into()));
    }
    blocking(move || {
        // The dialog state leaves the map for the duration of the turn.
        let mut dialog = s
            .sessions
            .lock()
            .expect("session lock")
            .remove(&id)
            .ok_or_else(|| unknown_session(&id))?;
        let p = Pipeline {
            kg: &s.kg,
            linker: &s.linker,
            llm: s.llm.as_ref(),
            config: &s.config,
        };
        let (outcome, persisted) = {
            let mut memory = s.memory.lock().expect("memory lock");
            let before = memory.len();
            let outcome = p.answer_turn(&mut dialog, &mut memory, &req.question);
            let persisted = match &s.memory_path {
                Some(path) if memory.len() > before => memory.append_new(path, before),
                _ => Ok(()),
            };
            (outcome, persisted)
        };
        s.sessions.lock().expect("session lock").insert(id.clone(), dialog);
        persisted.map_err(|e| ApiError::Internal(format!("memory write failed: {e}")))?;
        Ok(Json(TurnResponse {
            session_id: id,
            answer: outcome.result.as_ref().map(|r| r.render()),
            result: outcome.result,
            trace: outcome.trace,
        }))
    })
    .await
}

async fn memory_status(State(s): State<Shared>) -> Json<MemoryStatus> {
    Json(MemoryStatus {
        records: s.memory.lock().expect("memory lock").len(),
        path: s.memory_path.as_ref().map(|p| p.display().to_string()),
    })
}

async fn batch(State(s): State<Shared>, Json(req): Json<BatchRequest>) -> ApiResult<BatchReport> {
    req.dialogs
        .validate()
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    blocking(move || {
        let gold;
        let llm: &dyn seal_core::llm::LlmGateway = match req.gateway {
            BatchGateway::Configured => s.llm.as_ref(),
            BatchGateway::Gold { typo_rate } => {
                if !(0.0..=1.0).contains(&typo_rate) {
                    return Err(ApiError::BadRequest("typo_rate must lie in [0, 1]".into()));
                }
                gold = GoldGateway::new(&req.dialogs, &s.kg, GoldMode::Exact).with_typo_rate(typo_rate);
                &gold
            }
        };
        let p = Pipeline {
            kg: &s.kg,
            linker: &s.linker,
            llm,
            config: &s.config,
        };
        let report = if req.use_global_memory {
            let mut memory = s.memory.lock().expect("memory lock");
            let before = memory.len();
            let report = run_batch(&req.dialogs, &p, &mut memory);
            if let Some(path) = &s.memory_path {
                memory
                    .append_new(path, before)
                    .map_err(|e| ApiError::Internal(format!("memory write failed: {e}")))?;
            }
            report
        } else {
            run_batch(&req.dialogs, &p, &mut GlobalMemory::new())
        };
        Ok(Json(report))
    })
    .await
}

async fn gen(Json(req): Json<GenRequest>) -> ApiResult<GenResponse> {
    blocking(move || {
        let set = gen_synthetic(req.seed, &req.spec).map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let (triples, labels, _) = set.files();
        Ok(Json(GenResponse {
            triples,
            labels,
            dialogs: set.dialogs,
        }))
    })
    .await
}

async fn corrupt_bench(Json(req): Json<CorruptBenchRequest>) -> ApiResult<CorruptionReport> {
    if req.cases_per_class == 0 {
        return Err(ApiError::BadRequest("cases_per_class must be positive".into()));
    }
    blocking(move || {
        run_corruption_bench(req.seed, req.cases_per_class, &DEFAULT_EMBEDDER)
            .map(Json)
            .map_err(|e| ApiError::Internal(e.to_string()))
    })
    .await
}

async fn evolve_report(State(s): State<Shared>, Json(req): Json<EvolveRequest>) -> ApiResult<EvolveReport> {
    blocking(move || {
        let report = match &req.stream {
            Some(stream) => {
                stream.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
                let gw = GoldGateway::new(stream, &s.kg, GoldMode::ExemplarDependent);
                run_evolve_report(stream, &s.kg, &DEFAULT_EMBEDDER, &gw, &s.config)
            }
            None => {
                let set = evolve_stream(req.seed).map_err(|e| ApiError::Internal(e.to_string()))?;
                constructed_evolve_report(&set, &DEFAULT_EMBEDDER, &s.config)
            }
        };
        Ok(Json(report))
    })
    .await
}
