//! HTTP session service driving the annotation loop with a live annotator.
//!
//! Every session owns one [`Experiment`]. Reads only take a short lock on
//! a cached view, so they answer while a fit runs on the blocking pool.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;
use vhcbm_core::active::{Experiment, Phase};
use vhcbm_core::data::EmbeddingDataset;

use crate::bundle::load_bundle;
use crate::config::RunOptions;
use crate::executor::RayonExecutor;
use crate::report::{MetricReportJson, RecordJson};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    AwaitingAnnotations,
    Fitting,
    Idle,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub sample: usize,
    pub concept: usize,
    pub concept_name: String,
    pub uncertainty: Option<f64>,
    pub image_ref: Option<String>,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsEntry {
    pub iteration: usize,
    pub cumulative_annotations: usize,
    pub metrics: MetricReportJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub bundle: String,
    pub config: RunOptions,
    pub phase: SessionPhase,
    /// Completed acquisition rounds.
    pub iteration: usize,
    pub iterations: usize,
    pub pending: usize,
    pub cumulative_annotations: usize,
    /// Annotations the full protocol will have collected.
    pub planned_annotations: usize,
    pub latest_metrics: Option<MetricReportJson>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSession {
    pub bundle: String,
    #[serde(default)]
    pub config: RunOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationInput {
    pub sample: usize,
    pub concept: usize,
    pub value: usize,
}

struct View {
    phase: SessionPhase,
    experiment: Option<Experiment>,
    pending: Vec<QueryView>,
    history: Vec<MetricsEntry>,
    cumulative: usize,
    error: Option<String>,
}

struct Session {
    id: String,
    bundle: String,
    options: RunOptions,
    dataset: Arc<EmbeddingDataset>,
    view: Mutex<View>,
    /// Serializes annotation batches.
    mutator: tokio::sync::Mutex<()>,
}

impl Session {
    fn summary(&self) -> SessionSummary {
        let view = self.view.lock().expect("session lock");
        let k = self.dataset.schema().len();
        let o = &self.options;
        SessionSummary {
            id: self.id.clone(),
            bundle: self.bundle.clone(),
            config: o.clone(),
            phase: view.phase,
            iteration: view.history.len().saturating_sub(1),
            iterations: o.iterations,
            pending: view.pending.len(),
            cumulative_annotations: view.cumulative,
            planned_annotations: (o.initial_samples + o.iterations * o.samples_per_iteration) * k,
            latest_metrics: view.history.last().map(|h| h.metrics.clone()),
            error: view.error.clone(),
        }
    }

    fn query_views(&self, exp: &Experiment) -> Vec<QueryView> {
        let schema = self.dataset.schema();
        exp.pending()
            .iter()
            .map(|q| {
                let concept = schema.concept(q.concept);
                QueryView {
                    sample: q.sample,
                    concept: q.concept,
                    concept_name: concept.name.clone(),
                    uncertainty: q.uncertainty,
                    image_ref: self.dataset.image_ref(q.sample).map(str::to_string),
                    values: concept.value_names.clone(),
                }
            })
            .collect()
    }

    /// Refresh the cached view from a settled experiment.
    fn settle(&self, view: &mut View, exp: Experiment) {
        view.pending = self.query_views(&exp);
        view.cumulative = exp.ledger().len();
        let have = view.history.len();
        for r in &exp.records()[have..] {
            let json = RecordJson::new(r, self.dataset.schema(), self.options.seed, self.options.mode.as_str());
            view.history.push(MetricsEntry {
                iteration: r.iteration,
                cumulative_annotations: r.cumulative_annotations,
                metrics: json.metrics,
            });
        }
        view.phase = match exp.phase() {
            Phase::AwaitingAnnotations => SessionPhase::AwaitingAnnotations,
            Phase::Finished => SessionPhase::Finished,
            Phase::Ready => SessionPhase::Idle,
        };
        view.experiment = Some(exp);
    }
}

#[derive(Default)]
pub struct AppState {
    sessions: Mutex<BTreeMap<u64, Arc<Session>>>,
    next_id: AtomicU64,
    static_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(static_dir: Option<PathBuf>) -> Self {
        Self { static_dir, ..Self::default() }
    }

    fn get(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        let key: u64 = id.parse().map_err(|_| ApiError::not_found(id))?;
        self.sessions.lock().expect("sessions lock").get(&key).cloned().ok_or_else(|| ApiError::not_found(id))
    }
}

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown session {id}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/queries", get(get_queries))
        .route("/sessions/{id}/annotations", axum::routing::post(post_annotations))
        .route("/sessions/{id}/metrics", get(get_metrics));
    let api = match &state.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    api.with_state(state)
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<Vec<SessionSummary>> {
    let sessions: Vec<Arc<Session>> = state.sessions.lock().expect("sessions lock").values().cloned().collect();
    Json(sessions.iter().map(|s| s.summary()).collect())
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let bundle = req.bundle.clone();
    let dataset = tokio::task::spawn_blocking(move || load_bundle(&bundle))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    req.config
        .experiment_config()
        .acquisition
        .validate()
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let key = state.next_id.fetch_add(1, Ordering::SeqCst);
    let session = Arc::new(Session {
        id: key.to_string(),
        bundle: req.bundle,
        options: req.config,
        dataset: Arc::new(dataset),
        view: Mutex::new(View {
            phase: SessionPhase::Fitting,
            experiment: None,
            pending: Vec::new(),
            history: Vec::new(),
            cumulative: 0,
            error: None,
        }),
        mutator: tokio::sync::Mutex::new(()),
    });
    state.sessions.lock().expect("sessions lock").insert(key, session.clone());

    let s = session.clone();
    tokio::task::spawn_blocking(move || {
        let result = Experiment::new(&s.dataset, s.options.experiment_config());
        let mut view = s.view.lock().expect("session lock");
        match result {
            Ok(exp) => s.settle(&mut view, exp),
            Err(e) => {
                view.phase = SessionPhase::Idle;
                view.error = Some(e.to_string());
            }
        }
    });
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "id": session.id }))))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionSummary>, ApiError> {
    Ok(Json(state.get(&id)?.summary()))
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let session = state.get(&id)?;
    let _guard = session.mutator.lock().await;
    let key: u64 = id.parse().map_err(|_| ApiError::not_found(&id))?;
    state.sessions.lock().expect("sessions lock").remove(&key);
    Ok(StatusCode::NO_CONTENT)
}

async fn get_queries(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Vec<QueryView>>, ApiError> {
    let session = state.get(&id)?;
    let view = session.view.lock().expect("session lock");
    Ok(Json(view.pending.clone()))
}

async fn get_metrics(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Vec<MetricsEntry>>, ApiError> {
    let session = state.get(&id)?;
    let view = session.view.lock().expect("session lock");
    Ok(Json(view.history.clone()))
}

async fn post_annotations(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(batch): Json<Vec<AnnotationInput>>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let session = state.get(&id)?;
    let _guard = session.mutator.lock().await;
    let mut view = session.view.lock().expect("session lock");
    if view.phase != SessionPhase::AwaitingAnnotations {
        return Err(ApiError::new(StatusCode::CONFLICT, format!("session is {:?}, not awaiting annotations", view.phase)));
    }
    let exp = view.experiment.as_mut().expect("awaiting sessions hold their experiment");
    let pending: HashSet<(usize, usize)> = exp.pending().iter().map(|q| (q.sample, q.concept)).collect();
    let mut seen = HashSet::new();
    for a in &batch {
        if !pending.contains(&(a.sample, a.concept)) || !seen.insert((a.sample, a.concept)) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("pair (sample {}, concept {}) is not pending", a.sample, a.concept),
            ));
        }
        let cardinality = session.dataset.schema().cardinality(a.concept);
        if a.value >= cardinality {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("value {} out of range for concept {} (cardinality {cardinality})", a.value, a.concept),
            ));
        }
    }
    for a in &batch {
        exp.annotate(a.sample, a.concept, a.value)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    }
    let done = exp.pending().is_empty();
    view.cumulative = exp.ledger().len();
    let answered: HashSet<(usize, usize)> = batch.iter().map(|a| (a.sample, a.concept)).collect();
    view.pending.retain(|q| !answered.contains(&(q.sample, q.concept)));
    if done {
        let mut exp = view.experiment.take().expect("checked above");
        view.phase = SessionPhase::Fitting;
        view.error = None;
        let s = session.clone();
        tokio::task::spawn_blocking(move || {
            let result = exp.step(&RayonExecutor).map(|_| ());
            let mut view = s.view.lock().expect("session lock");
            let err = result.err().map(|e| e.to_string());
            s.settle(&mut view, exp);
            view.error = err;
        });
    }
    Ok(Json(serde_json::json!({ "accepted": batch.len(), "phase": view.phase })))
}

/// Bind and serve until the process is stopped.
pub async fn serve(host: &str, port: u16, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(AppState::new(static_dir)))).await
}
