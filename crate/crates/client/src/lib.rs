//! Thin async client for the seal HTTP service.

use reqwest::{Method, StatusCode};
use seal_core::api::{
    BatchRequest, CorruptBenchRequest, ErrorBody, EvolveRequest, GenRequest, GenResponse, HealthResponse, MemoryStatus,
    SessionCreated, TurnRequest, TurnResponse,
};
use seal_core::harness::{BatchReport, CorruptionReport, EvolveReport};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("service returned {status}: {message}")]
    Service { status: StatusCode, message: String },
}

#[derive(Clone, Debug)]
pub struct SealClient {
    base: String,
    http: reqwest::Client,
}

impl SealClient {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        SealClient {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send(
        &self,
        method: Method,
        path: &str,
        body: Option<&(impl Serialize + ?Sized)>,
    ) -> Result<reqwest::Response, ClientError> {
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let text = resp.text().await.unwrap_or_default();
        let message = error_message(&text).unwrap_or(text);
        Err(ClientError::Service { status, message })
    }

    async fn json<T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&(impl Serialize + ?Sized)>,
    ) -> Result<T, ClientError> {
        Ok(self.send(method, path, body).await?.json().await?)
    }

    pub async fn health(&self) -> Result<HealthResponse, ClientError> {
        self.json(Method::GET, "/health", None::<&()>).await
    }

    pub async fn create_session(&self) -> Result<String, ClientError> {
        let s: SessionCreated = self.json(Method::POST, "/sessions", None::<&()>).await?;
        Ok(s.session_id)
    }

    pub async fn ask(&self, session: &str, question: &str) -> Result<TurnResponse, ClientError> {
        let body = TurnRequest {
            question: question.to_string(),
        };
        self.json(Method::POST, &format!("/sessions/{session}/turns"), Some(&body))
            .await
    }

    pub async fn reset(&self, session: &str) -> Result<(), ClientError> {
        self.send(Method::POST, &format!("/sessions/{session}/reset"), None::<&()>)
            .await?;
        Ok(())
    }

    pub async fn close(&self, session: &str) -> Result<(), ClientError> {
        self.send(Method::DELETE, &format!("/sessions/{session}"), None::<&()>)
            .await?;
        Ok(())
    }

    pub async fn memory(&self) -> Result<MemoryStatus, ClientError> {
        self.json(Method::GET, "/memory", None::<&()>).await
    }

    pub async fn batch(&self, req: &BatchRequest) -> Result<BatchReport, ClientError> {
        self.json(Method::POST, "/batch", Some(req)).await
    }

    pub async fn gen(&self, req: &GenRequest) -> Result<GenResponse, ClientError> {
        self.json(Method::POST, "/gen", Some(req)).await
    }

    pub async fn corrupt_bench(&self, req: &CorruptBenchRequest) -> Result<CorruptionReport, ClientError> {
        self.json(Method::POST, "/corrupt-bench", Some(req)).await
    }

    pub async fn evolve(&self, req: &EvolveRequest) -> Result<EvolveReport, ClientError> {
        self.json(Method::POST, "/evolve-report", Some(req)).await
    }
}

fn error_message(text: &str) -> Option<String> {
    serde_json::from_str::<ErrorBody>(text).ok().map(|e| e.error)
}
