//! HTTP JSON API over a scenario engine.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tripgen_core::checkpoint::Checkpoint;
use tripgen_core::explain::{explain_station, export_attention, AttentionEdge, Attribution, PlayerValues, ShapConfig};
use tripgen_core::model::Variant;
use tripgen_core::scenario::{Baseline, Scenario, ScenarioEngine, ScenarioOptions, ScenarioResult, StationPrediction};
use tripgen_core::{Error, StationId, YearMonth};

use crate::store::{ScenarioStore, StoredScenario};

/// Shared serving state. The engine is immutable; baselines and
/// attributions are computed on first use and cached.
pub struct AppState {
    pub engine: ScenarioEngine,
    pub background: Vec<PlayerValues>,
    pub shap: ShapConfig,
    pub store: ScenarioStore,
    /// Options applied when a request does not carry its own.
    pub default_options: ScenarioOptions,
    baselines: Mutex<HashMap<YearMonth, Arc<Baseline>>>,
    attributions: Mutex<HashMap<(StationId, YearMonth), Arc<AttributionResponse>>>,
}

impl AppState {
    pub fn new(engine: ScenarioEngine, checkpoint: &Checkpoint, shap: ShapConfig, store: ScenarioStore) -> Self {
        Self {
            engine,
            background: checkpoint.background.clone(),
            shap,
            store,
            default_options: ScenarioOptions::default(),
            baselines: Mutex::new(HashMap::new()),
            attributions: Mutex::new(HashMap::new()),
        }
    }

    pub fn latest_month(&self) -> Option<YearMonth> {
        self.engine.months().last()
    }

    pub fn baseline(&self, month: YearMonth) -> Result<Arc<Baseline>, ApiError> {
        if let Some(b) = self.baselines.lock().expect("baseline lock").get(&month) {
            return Ok(b.clone());
        }
        let built = Arc::new(self.engine.baseline(month)?);
        Ok(self.baselines.lock().expect("baseline lock").entry(month).or_insert(built).clone())
    }

    fn month_or_latest(&self, month: Option<YearMonth>) -> Result<YearMonth, ApiError> {
        month.or_else(|| self.latest_month()).ok_or_else(|| ApiError::not_found("the dataset has no months"))
    }

    /// Evaluates, times and stores a scenario, assigning an id when it has none.
    pub fn create_scenario(&self, mut scenario: Scenario, options: ScenarioOptions) -> Result<ScenarioResult, ApiError> {
        let started = Instant::now();
        let baseline = self.baseline(scenario.base_month)?;
        if scenario.id.is_empty() {
            scenario.id = self.store.next_id();
        }
        let mut result = self.engine.evaluate(&baseline, &scenario, &options)?;
        result.recompute_ms = Some(started.elapsed().as_secs_f64() * 1e3);
        self.store
            .put(StoredScenario { scenario, options, result: result.clone() })
            .map_err(|e| ApiError::internal(format!("{e:#}")))?;
        Ok(result)
    }

    pub fn attention(&self, station: &StationId, month: Option<YearMonth>, scenario: Option<&str>) -> Result<AttentionResponse, ApiError> {
        let (month, edges) = match scenario {
            Some(id) => {
                let stored = self.store.get(id).ok_or_else(|| ApiError::not_found(format!("no scenario {id}")))?;
                if let Some(requested) = month.filter(|m| *m != stored.scenario.base_month) {
                    return Err(ApiError::bad_request(format!("scenario {id} is based on {} not {requested}", stored.scenario.base_month)));
                }
                let month = stored.scenario.base_month;
                let baseline = self.baseline(month)?;
                let applied = self.engine.apply(&baseline, &stored.scenario, &stored.options)?;
                (month, export_attention(&self.engine.model, &applied.view, &self.engine.scalers, station)?)
            }
            None => {
                let month = self.month_or_latest(month)?;
                let baseline = self.baseline(month)?;
                (month, export_attention(&self.engine.model, &baseline.view, &self.engine.scalers, station)?)
            }
        };
        let variant = self.engine.model.variant();
        let note = (!variant.uses_attention()).then(|| {
            if edges.is_empty() {
                format!("{variant} reads no station graphs, so there are no edges")
            } else {
                format!("{variant} has no attention; weights are the normalized kernel weights")
            }
        });
        Ok(AttentionResponse { station_id: station.clone(), month, variant, scenario_id: scenario.map(str::to_string), edges, note })
    }

    pub fn attribution(&self, station: &StationId, month: Option<YearMonth>) -> Result<Arc<AttributionResponse>, ApiError> {
        let month = self.month_or_latest(month)?;
        let key = (station.clone(), month);
        if let Some(a) = self.attributions.lock().expect("attribution lock").get(&key) {
            return Ok(a.clone());
        }
        let baseline = self.baseline(month)?;
        let (explanation, attributions) = explain_station(
            &self.engine.model,
            &baseline.view,
            &self.engine.scalers,
            &self.background,
            station,
            &self.engine.feature_names,
            &self.shap,
        )?;
        let response = Arc::new(AttributionResponse {
            station_id: station.clone(),
            month,
            variant: self.engine.model.variant(),
            base_value: Flows::from(explanation.base_value),
            prediction: Flows::from(explanation.prediction),
            exact: explanation.exact,
            coalitions: explanation.coalitions,
            attributions,
        });
        Ok(self.attributions.lock().expect("attribution lock").entry(key).or_insert(response).clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flows {
    pub out: f64,
    #[serde(rename = "in")]
    pub inflow: f64,
}

impl From<[f64; 2]> for Flows {
    fn from(v: [f64; 2]) -> Self {
        Self { out: v[0], inflow: v[1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub variant: Variant,
    pub months: Vec<YearMonth>,
    pub default_month: Option<YearMonth>,
    pub feature_count: usize,
    pub scenarios: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationsResponse {
    pub month: YearMonth,
    pub variant: Variant,
    pub sigma_d: f64,
    pub sigma_b: f64,
    pub stations: Vec<StationPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionResponse {
    pub station_id: StationId,
    pub month: YearMonth,
    pub variant: Variant,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario_id: Option<String>,
    pub edges: Vec<AttentionEdge>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResponse {
    pub station_id: StationId,
    pub month: YearMonth,
    pub variant: Variant,
    pub base_value: Flows,
    pub prediction: Flows,
    /// Every coalition was enumerated.
    pub exact: bool,
    pub coalitions: usize,
    pub attributions: Vec<Attribution>,
}

/// Body of POST /scenarios: a scenario with optional evaluation options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRequest {
    #[serde(flatten)]
    pub scenario: Scenario,
    #[serde(default)]
    pub options: Option<ScenarioOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedResponse {
    pub id: String,
    pub result: ScenarioResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn not_found(message: impl Into<String>) -> Self {
        Self { status: StatusCode::NOT_FOUND, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, message: message.into() }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::InvalidInput(_) | Error::Rejected(_) | Error::Parse(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self { status, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize)]
struct MonthQuery {
    month: Option<String>,
    scenario: Option<String>,
}

impl MonthQuery {
    fn month(&self) -> Result<Option<YearMonth>, ApiError> {
        self.month
            .as_deref()
            .map(|m| m.parse::<YearMonth>().map_err(|e| ApiError::bad_request(format!("month {m:?}: {e}"))))
            .transpose()
    }
}

fn station_id(raw: String) -> Result<StationId, ApiError> {
    StationId::new(raw).map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        variant: state.engine.model.variant(),
        months: state.engine.months().collect(),
        default_month: state.latest_month(),
        feature_count: state.engine.feature_names.len(),
        scenarios: state.store.ids().len(),
    })
}

async fn stations(State(state): State<Arc<AppState>>, Query(q): Query<MonthQuery>) -> ApiResult<StationsResponse> {
    let month = q.month()?;
    blocking(move || {
        let month = state.month_or_latest(month)?;
        let baseline = state.baseline(month)?;
        let graphs = &baseline.view.graphs;
        Ok(Json(StationsResponse {
            month,
            variant: state.engine.model.variant(),
            sigma_d: graphs.sigma_d,
            sigma_b: graphs.sigma_b,
            stations: baseline.predictions.clone(),
        }))
    })
    .await
}

async fn create_scenario(State(state): State<Arc<AppState>>, body: Result<Json<ScenarioRequest>, axum::extract::rejection::JsonRejection>) -> Result<(StatusCode, Json<CreatedResponse>), ApiError> {
    let Json(request) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    blocking(move || {
        let options = request.options.unwrap_or(state.default_options);
        let result = state.create_scenario(request.scenario, options)?;
        Ok((StatusCode::CREATED, Json(CreatedResponse { id: result.scenario_id.clone(), result })))
    })
    .await
}

async fn get_scenario(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<ScenarioRequest> {
    let stored = state.store.get(&id).ok_or_else(|| ApiError::not_found(format!("no scenario {id}")))?;
    Ok(Json(ScenarioRequest { scenario: stored.scenario, options: Some(stored.options) }))
}

async fn scenario_result(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<ScenarioResult> {
    let stored = state.store.get(&id).ok_or_else(|| ApiError::not_found(format!("no scenario {id}")))?;
    Ok(Json(stored.result))
}

async fn attention(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<MonthQuery>) -> ApiResult<AttentionResponse> {
    let station = station_id(id)?;
    let month = q.month()?;
    blocking(move || state.attention(&station, month, q.scenario.as_deref()).map(Json)).await
}

async fn attribution(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<MonthQuery>) -> ApiResult<AttributionResponse> {
    let station = station_id(id)?;
    let month = q.month()?;
    blocking(move || state.attribution(&station, month).map(|a| Json((*a).clone()))).await
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/stations", get(stations))
        .route("/stations/{id}/attention", get(attention))
        .route("/stations/{id}/attribution", get(attribution))
        .route("/scenarios", post(create_scenario))
        .route("/scenarios/{id}", get(get_scenario))
        .route("/scenarios/{id}/result", get(scenario_result))
        .fallback(fallback)
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
