//! Local HTTP service over one [`Session`].
//!
//! Requests run on the blocking pool and serialize on the session lock, so
//! the engine sees a single writer.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use memweave_core::types::DialogueTurn;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::error::CliError;
use crate::ops::{RetrieveRequest, Session};

pub type Shared = Arc<Mutex<Session>>;

/// Body of `POST /turns`: one turn record or a list of them.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum TurnsBody {
    One(DialogueTurn),
    Many(Vec<DialogueTurn>),
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    exit_code: u8,
}

impl IntoResponse for CliError {
    fn into_response(self) -> Response {
        let status = match self {
            CliError::Usage(_) | CliError::Input(_) => StatusCode::BAD_REQUEST,
            CliError::Backend(_) => StatusCode::BAD_GATEWAY,
            CliError::Capacity(_) => StatusCode::INSUFFICIENT_STORAGE,
            CliError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ErrorBody {
            exit_code: self.exit_code(),
            error: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

async fn with_session<T, F>(shared: Shared, op: F) -> Result<Json<T>, CliError>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> Result<T, CliError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || {
        let mut session = shared
            .lock()
            .map_err(|_| CliError::Internal("session lock poisoned".into()))?;
        op(&mut session)
    })
    .await
    .map_err(|e| CliError::Internal(e.to_string()))?
    .map(Json)
}

pub fn router(shared: Shared) -> Router {
    Router::new()
        .route(
            "/turns",
            post(|State(s): State<Shared>, Json(body): Json<TurnsBody>| async move {
                let turns = match body {
                    TurnsBody::One(t) => vec![t],
                    TurnsBody::Many(ts) => ts,
                };
                with_session(s, move |session| session.ingest(turns)).await
            }),
        )
        .route(
            "/memories",
            get(|State(s): State<Shared>| async move { with_session(s, |session| Ok(session.memories())).await }),
        )
        .route(
            "/retrieve",
            post(|State(s): State<Shared>, Json(req): Json<RetrieveRequest>| async move {
                with_session(s, move |session| session.retrieve(&req)).await
            }),
        )
        .route(
            "/persona",
            get(|State(s): State<Shared>| async move { with_session(s, |session| Ok(session.persona())).await }),
        )
        .route(
            "/stats",
            get(|State(s): State<Shared>| async move { with_session(s, |session| Ok(session.stats())).await }),
        )
        .with_state(shared)
}

pub async fn serve(session: Session, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!(addr = %listener.local_addr()?, "serving");
    let app = router(Arc::new(Mutex::new(session)));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
