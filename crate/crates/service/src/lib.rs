//! JSON-over-HTTP contestation service: train models, inspect test
//! predictions, compute flipsets, and run what-if retrains without a
//! disputed set of training points.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/models` | train; 201 with id and metrics |
//! | GET | `/models`, `/models/{id}` | |
//! | GET | `/models/{id}/predictions[/{test_index}]` | prob, label, margin |
//! | POST | `/models/{id}/flipset` | `{test_index, algorithm, max_passes, verify}` |
//! | POST | `/sessions` | `{model_id, test_index}` |
//! | GET | `/sessions/{id}` | |
//! | PATCH | `/sessions/{id}/disputed` | `{add, remove}` |
//! | POST | `/sessions/{id}/whatif` | |
//!
//! Errors carry `{code, message, detail}`.

pub mod error;
pub mod routes;
pub mod state;

use std::net::SocketAddr;

use axum::routing::{get, patch, post};
use axum::Router;
use tower_http::services::{ServeDir, ServeFile};

pub use error::{ApiError, ApiResult};
pub use state::{AppState, ServiceConfig, Session, WhatIfEntry, DEFAULT_WHATIF_WORKERS};

pub fn router(state: AppState) -> Router {
    let mut app = Router::new()
        .route("/models", post(routes::create_model).get(routes::list_models))
        .route("/models/{id}", get(routes::get_model))
        .route("/models/{id}/predictions", get(routes::list_predictions))
        .route("/models/{id}/predictions/{test_index}", get(routes::get_prediction))
        .route("/models/{id}/flipset", post(routes::compute_flipset))
        .route("/sessions", post(routes::create_session))
        .route("/sessions/{id}", get(routes::get_session))
        .route("/sessions/{id}/disputed", patch(routes::update_disputed))
        .route("/sessions/{id}/whatif", post(routes::what_if));
    let config = state.config().clone();
    if let Some(dir) = &config.reports_dir {
        app = app.nest_service("/reports", ServeDir::new(dir));
    }
    if let Some(dir) = &config.static_dir {
        let index = dir.join("index.html");
        app = app.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(index)));
    }
    app.with_state(state)
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> flipset::Result<()> {
    let state = AppState::open(config)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| flipset::Error::Config(format!("cannot bind {addr}: {e}")))?;
    log::info!("listening on http://{}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| flipset::Error::Numerical(format!("server error: {e}")))
}
