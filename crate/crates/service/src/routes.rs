use std::collections::BTreeSet;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use flipset::artifact::{manifest_for, save_model, ModelManifest};
use flipset::dataset::Instance;
use flipset::influence::InfluenceContext;
use flipset::ingest::{load_dataset, DataSource};
use flipset::lab::{retrain_without, verify_flip};
use flipset::metrics::{evaluate, Metrics};
use flipset::model::{train, Hyperparams};
use flipset::search::{find_flipset, Algorithm, Verification, DEFAULT_MAX_PASSES};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::state::{AppState, ModelEntry, Session, WhatIfEntry};

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let raw: &[u8] = if body.is_empty() { b"{}" } else { body };
    serde_json::from_slice(raw).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn blocking<T: Send + 'static>(job: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(job)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn model_or_404(state: &AppState, id: &str) -> ApiResult<std::sync::Arc<ModelEntry>> {
    state.model(id).ok_or_else(|| ApiError::not_found("model", id))
}

fn test_point<'a>(entry: &'a ModelEntry, index: usize) -> Option<&'a Instance> {
    entry.splits.test.get(index)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRequest {
    #[serde(default)]
    pub name: Option<String>,
    pub data: DataSource,
    #[serde(default)]
    pub hyper: Hyperparams,
}

#[derive(Debug, Serialize)]
pub struct ModelSummary {
    pub id: String,
    pub name: String,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub hyper: Hyperparams,
    pub train_metrics: Metrics,
    pub test_metrics: Metrics,
}

impl ModelSummary {
    fn of(entry: &ModelEntry) -> Self {
        let m = &entry.manifest;
        Self {
            id: entry.id.clone(),
            name: m.name.clone(),
            dim: m.dim,
            n_train: m.n_train,
            n_test: m.n_test,
            hyper: m.hyper,
            train_metrics: m.train_metrics,
            test_metrics: m.test_metrics,
        }
    }
}

pub async fn create_model(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<ModelSummary>)> {
    let mut req: TrainRequest = parse_body(&body)?;
    req.hyper.validate()?;
    req.data.validate()?;
    if let Some(path) = req.data.path_mut() {
        // Stored manifests must keep working from any working directory.
        *path = std::fs::canonicalize(&*path).map_err(|e| flipset::Error::io(&*path, e))?;
    }
    let id = uuid::Uuid::new_v4().simple().to_string();
    let dir = state.model_dir(&id);
    let entry = blocking(move || {
        let loaded = load_dataset(&req.data)?;
        let model = train(&loaded.splits.train, &req.hyper)?;
        let name = req.name.unwrap_or_else(|| "model".to_string());
        let manifest = manifest_for(
            &name,
            &req.data,
            &loaded,
            &model,
            evaluate(&model, &loaded.splits.train)?,
            evaluate(&model, &loaded.splits.test)?,
        );
        save_model(&dir, &manifest, &model, loaded.vocabulary.as_ref())?;
        Ok(ModelEntry {
            id,
            manifest,
            model,
            splits: loaded.splits,
        })
    })
    .await?;
    let entry = state.insert_model(entry);
    log::info!("trained model {} ({})", entry.id, entry.manifest.name);
    Ok((StatusCode::CREATED, Json(ModelSummary::of(&entry))))
}

pub async fn list_models(State(state): State<AppState>) -> Json<Vec<ModelSummary>> {
    Json(state.models().iter().map(|m| ModelSummary::of(m)).collect())
}

#[derive(Debug, Serialize)]
pub struct ModelDetail {
    pub id: String,
    pub manifest: ModelManifest,
}

pub async fn get_model(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ModelDetail>> {
    let entry = model_or_404(&state, &id)?;
    Ok(Json(ModelDetail {
        id: entry.id.clone(),
        manifest: entry.manifest.clone(),
    }))
}

#[derive(Debug, Serialize)]
pub struct Prediction {
    pub test_index: usize,
    pub prob: f64,
    pub label: u8,
    /// `|p − 0.5|`.
    pub margin: f64,
    pub true_label: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

fn predict(entry: &ModelEntry, x: &Instance) -> ApiResult<Prediction> {
    let prob = entry.model.predict_proba(&x.features)?;
    Ok(Prediction {
        test_index: x.index,
        prob,
        label: entry.model.hyper.label(prob),
        margin: (prob - 0.5).abs(),
        true_label: x.label,
        text: x.text.clone(),
    })
}

pub async fn list_predictions(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Vec<Prediction>>> {
    let entry = model_or_404(&state, &id)?;
    let preds = entry
        .splits
        .test
        .instances()
        .iter()
        .map(|x| predict(&entry, x))
        .collect::<ApiResult<Vec<_>>>()?;
    Ok(Json(preds))
}

pub async fn get_prediction(
    State(state): State<AppState>,
    Path((id, index)): Path<(String, String)>,
) -> ApiResult<Json<Prediction>> {
    let entry = model_or_404(&state, &id)?;
    let x = index
        .parse::<usize>()
        .ok()
        .and_then(|i| test_point(&entry, i))
        .ok_or_else(|| ApiError::not_found("test point", &index))?;
    Ok(Json(predict(&entry, x)?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipsetRequest {
    pub test_index: usize,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_max_passes")]
    pub max_passes: usize,
    /// Retrain without the members and report the outcome.
    #[serde(default)]
    pub verify: bool,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Iterative
}

fn default_max_passes() -> usize {
    DEFAULT_MAX_PASSES
}

#[derive(Debug, Serialize)]
pub struct MemberDetail {
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub label: u8,
    pub delta: f64,
    /// Estimated probability after removing this member and all before it.
    pub cumulative_prob: f64,
}

#[derive(Debug, Serialize)]
pub struct FlipsetResponse {
    pub model_id: String,
    pub test_index: usize,
    pub original_prob: f64,
    pub original_label: u8,
    pub tau: f64,
    pub found: bool,
    pub k: usize,
    pub members: Vec<MemberDetail>,
    pub estimate_base: f64,
    pub estimated_prob: f64,
    pub algorithm: Algorithm,
    pub outer_passes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verified: Option<Verification>,
}

pub async fn compute_flipset(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<FlipsetResponse>> {
    let req: FlipsetRequest = parse_body(&body)?;
    let entry = model_or_404(&state, &id)?;
    if req.max_passes == 0 {
        return Err(ApiError::bad_request("max_passes must be at least 1"));
    }
    if test_point(&entry, req.test_index).is_none() {
        return Err(ApiError::unprocessable(
            "invalid_index",
            format!("test index {} is out of range (0..{})", req.test_index, entry.splits.test.len()),
        ));
    }
    let guard = state
        .try_begin_flipset(&id, req.test_index, req.algorithm)
        .ok_or_else(|| {
            ApiError::conflict(format!(
                "a {} flipset for test point {} is already running",
                req.algorithm, req.test_index
            ))
        })?;
    let response = blocking(move || {
        let _guard = guard;
        let x_t = &entry.splits.test.instances()[req.test_index];
        let train_split = &entry.splits.train;
        let hyper = entry.model.hyper;
        let ctx = InfluenceContext::new(&entry.model, train_split)?;
        let mut result = find_flipset(req.algorithm, &ctx, &entry.model, train_split, x_t, hyper.tau, req.max_passes)?;
        if req.verify && result.found() {
            result = verify_flip(&result, train_split, x_t, &hyper)?;
        }
        let cumulative = result.cumulative_estimates();
        let members = result
            .members
            .iter()
            .zip(&result.member_deltas)
            .zip(cumulative)
            .map(|((&i, &delta), cumulative_prob)| {
                let z = &train_split.instances()[i];
                MemberDetail {
                    index: i,
                    text: z.text.clone(),
                    label: z.label,
                    delta,
                    cumulative_prob,
                }
            })
            .collect();
        Ok(FlipsetResponse {
            model_id: entry.id.clone(),
            test_index: result.test_index,
            original_prob: result.original_prob,
            original_label: result.original_label,
            tau: hyper.tau,
            found: result.found(),
            k: result.k(),
            members,
            estimate_base: result.estimate_base,
            estimated_prob: result.estimated_prob,
            algorithm: result.algorithm,
            outer_passes: result.outer_passes,
            verified: result.verified,
        })
    })
    .await?;
    Ok(Json(response))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRequest {
    pub model_id: String,
    pub test_index: usize,
}

pub async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Session>)> {
    let req: SessionRequest = parse_body(&body)?;
    let entry = model_or_404(&state, &req.model_id)?;
    let x_t = test_point(&entry, req.test_index).ok_or_else(|| {
        ApiError::unprocessable(
            "invalid_index",
            format!("test index {} is out of range (0..{})", req.test_index, entry.splits.test.len()),
        )
    })?;
    let original_prob = entry.model.predict_proba(&x_t.features)?;
    let session = Session {
        id: uuid::Uuid::new_v4().simple().to_string(),
        model_id: req.model_id,
        test_index: req.test_index,
        original_prob,
        original_label: entry.model.hyper.label(original_prob),
        disputed: BTreeSet::new(),
        history: Vec::new(),
    };
    state.insert_session(session.clone())?;
    Ok((StatusCode::CREATED, Json(session)))
}

fn session_or_404(state: &AppState, id: &str) -> ApiResult<std::sync::Arc<tokio::sync::Mutex<Session>>> {
    state.session(id).ok_or_else(|| ApiError::not_found("session", id))
}

pub async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Session>> {
    let session = session_or_404(&state, &id)?;
    let s = session.lock().await.clone();
    Ok(Json(s))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisputeRequest {
    pub add: Vec<usize>,
    pub remove: Vec<usize>,
}

/// Applies `add`, then `remove`. Nothing changes if any index is invalid.
pub async fn update_disputed(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Session>> {
    let req: DisputeRequest = parse_body(&body)?;
    let session = session_or_404(&state, &id)?;
    let mut s = session.lock().await;
    let entry = model_or_404(&state, &s.model_id)?;
    let n = entry.splits.train.len();
    let invalid: Vec<usize> = req.add.iter().chain(&req.remove).copied().filter(|&i| i >= n).collect();
    if !invalid.is_empty() {
        return Err(ApiError::unprocessable(
            "invalid_index",
            format!("train indices {invalid:?} are out of range (0..{n})"),
        )
        .with_detail(serde_json::json!({ "invalid": invalid, "n_train": n })));
    }
    let mut next = s.clone();
    next.disputed.extend(req.add);
    for i in &req.remove {
        next.disputed.remove(i);
    }
    state.persist_session(&next)?;
    *s = next;
    Ok(Json(s.clone()))
}

#[derive(Debug, Serialize)]
pub struct WhatIfResponse {
    pub retrained_prob: f64,
    pub flipped: bool,
    pub history_entry: WhatIfEntry,
}

/// Exact retrain without the disputed set. The base model is untouched.
pub async fn what_if(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<WhatIfResponse>> {
    let session = session_or_404(&state, &id)?;
    let permit = state
        .whatif_pool()
        .try_acquire_owned()
        .map_err(|_| ApiError::busy("all what-if workers are busy; retry shortly"))?;
    let mut s = session.lock().await;
    if s.disputed.is_empty() {
        return Err(ApiError::unprocessable("empty_dispute", "dispute at least one training point first"));
    }
    let entry = model_or_404(&state, &s.model_id)?;
    let disputed: Vec<usize> = s.disputed.iter().copied().collect();
    let test_index = s.test_index;
    let hyper = entry.model.hyper;
    let removed = disputed.clone();
    let retrained_prob = blocking(move || {
        let _permit = permit;
        let x_t = &entry.splits.test.instances()[test_index];
        let model = retrain_without(&entry.splits.train, &removed, &hyper)?;
        Ok(model.predict_proba(&x_t.features)?)
    })
    .await?;
    let retrained_label = hyper.label(retrained_prob);
    let entry = WhatIfEntry {
        seq: s.history.len() + 1,
        disputed,
        retrained_prob,
        retrained_label,
        flipped: retrained_label != s.original_label,
    };
    let mut next = s.clone();
    next.history.push(entry.clone());
    state.persist_session(&next)?;
    *s = next;
    Ok(Json(WhatIfResponse {
        retrained_prob,
        flipped: entry.flipped,
        history_entry: entry,
    }))
}
