//! JSON HTTP API over a [`SnapshotStore`]. Handlers hold no state of their
//! own; every store call runs on the blocking pool.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{SnapshotError, SnapshotStore};
use crate::agent::{run_workflow, Generator, WorkflowConfig};
use crate::calibration::{aggregate_reviewers, calibration_stats, ReviewerScore};
use crate::embeddings::EmbeddingService;
use crate::evidence::{build_pack, EvidenceError, PackRequest};
use crate::gaps::{derive_cluster_pairs, gap_targets};

#[derive(Clone)]
pub struct ApiState {
    pub store: Arc<SnapshotStore>,
    pub generator: Arc<dyn Generator>,
    pub encoder: Option<Arc<dyn EmbeddingService>>,
    pub workflow: WorkflowConfig,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    stage: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into(), stage: None }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(stage) = self.stage {
            body["stage"] = Value::String(stage);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<SnapshotError> for ApiError {
    fn from(e: SnapshotError) -> Self {
        let status = match &e {
            SnapshotError::NotFound(_) | SnapshotError::RecordNotFound { .. } => StatusCode::NOT_FOUND,
            SnapshotError::Sealed(_) => StatusCode::FORBIDDEN,
            SnapshotError::Immutable { .. } => StatusCode::CONFLICT,
            SnapshotError::InvalidReview(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SnapshotError::Inconsistent(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<EvidenceError> for ApiError {
    fn from(e: EvidenceError) -> Self {
        let status = match e {
            EvidenceError::Encoder(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::BAD_REQUEST,
        };
        Self { status, message: e.to_string(), stage: Some("build_pack".into()) }
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

pub fn router(state: ApiState) -> Router {
    Router::new()
        .route("/tools", get(tools))
        .route("/snapshots", get(list_snapshots))
        .route("/snapshots/{id}", get(get_snapshot))
        .route("/snapshots/{id}/gaps/top", get(top_gaps))
        .route("/snapshots/{id}/clusters", get(clusters))
        .route("/snapshots/{id}/targets", get(targets))
        .route("/snapshots/{id}/layout", get(layout))
        .route("/snapshots/{id}/packs", post(create_pack))
        .route("/snapshots/{id}/briefs", post(create_brief))
        .route("/briefs/{id}", get(get_brief))
        .route("/briefs/{id}/packets", get(brief_packets))
        .route("/briefs/{id}/reviews", post(review_brief))
        .route("/packets/{id}", get(get_packet))
        .route("/packets/{id}/reviews", post(review_packet))
        .route("/packets/{id}/sealed", get(sealed_packet))
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/metrics", get(run_metrics))
        .route("/runs/{id}/packets", get(run_packets))
        .route("/calibration", get(calibration))
        .with_state(state)
}

/// Machine-readable endpoint catalogue for agent clients.
async fn tools() -> Json<Value> {
    Json(json!({
        "description": "Build evidence packs and research briefs against immutable snapshot ids. \
                        Every pack names its snapshot, target and the channel each paper came from.",
        "endpoints": [
            {"method": "GET", "path": "/snapshots", "returns": "published snapshot summaries"},
            {"method": "GET", "path": "/snapshots/{id}", "returns": "snapshot manifest without vectors"},
            {"method": "GET", "path": "/snapshots/{id}/gaps/top?limit=", "returns": "gap regions by mean gap score, then size"},
            {"method": "GET", "path": "/snapshots/{id}/clusters", "returns": "cluster summaries"},
            {"method": "GET", "path": "/snapshots/{id}/targets?gaps=&pairs=", "returns": "gap and cluster-pair targets"},
            {"method": "GET", "path": "/snapshots/{id}/layout", "returns": "two-dimensional map coordinates"},
            {"method": "POST", "path": "/snapshots/{id}/packs", "body": "{target, budget, cue?, queries?}", "returns": "evidence pack"},
            {"method": "POST", "path": "/snapshots/{id}/briefs", "body": "{target, budget, cue?, queries?}", "returns": "stored research brief"},
            {"method": "GET", "path": "/briefs/{id}", "returns": "research brief record"},
            {"method": "GET", "path": "/briefs/{id}/packets", "returns": "blind review packets for the brief"},
            {"method": "POST", "path": "/briefs/{id}/reviews", "body": "reviewer score with idea_id = packet id", "returns": "review receipt"},
            {"method": "GET", "path": "/packets/{id}", "returns": "open section of a review packet"},
            {"method": "POST", "path": "/packets/{id}/reviews", "body": "reviewer score", "returns": "review receipt with token"},
            {"method": "GET", "path": "/packets/{id}/sealed?token=", "returns": "sealed section after review"},
            {"method": "GET", "path": "/runs", "returns": "benchmark run ids"},
            {"method": "GET", "path": "/runs/{id}/metrics", "returns": "per-method benchmark metrics"},
            {"method": "GET", "path": "/runs/{id}/packets", "returns": "open sections of a run's review packets"},
            {"method": "GET", "path": "/calibration", "returns": "human versus agent score statistics"}
        ]
    }))
}

async fn list_snapshots(State(s): State<ApiState>) -> ApiResult<Json<Value>> {
    blocking(move || Ok(Json(json!({ "snapshots": s.store.list()? })))).await
}

async fn get_snapshot(State(s): State<ApiState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let snap = s.store.load(&id)?;
        Ok(Json(json!({
            "snapshot_id": snap.snapshot_id,
            "created_at": snap.created_at,
            "manifest": snap.manifest,
        })))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct LimitQuery {
    limit: Option<usize>,
}

async fn top_gaps(
    State(s): State<ApiState>,
    Path(id): Path<String>,
    Query(q): Query<LimitQuery>,
) -> ApiResult<Json<Value>> {
    blocking(move || {
        let snap = s.store.load(&id)?;
        let gaps: Vec<_> = snap.top_gaps(q.limit.unwrap_or(20)).iter().map(|r| snap.gap_summary(r)).collect();
        Ok(Json(json!({ "snapshot_id": id, "gaps": gaps })))
    })
    .await
}

async fn clusters(State(s): State<ApiState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let snap = s.store.load(&id)?;
        Ok(Json(json!({ "snapshot_id": id, "method": snap.clusters().method, "fallback_reason": snap.clusters().fallback_reason, "clusters": snap.cluster_summaries() })))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct TargetQuery {
    gaps: Option<usize>,
    pairs: Option<usize>,
}

async fn targets(
    State(s): State<ApiState>,
    Path(id): Path<String>,
    Query(q): Query<TargetQuery>,
) -> ApiResult<Json<Value>> {
    blocking(move || {
        let snap = s.store.load(&id)?;
        let ranked = snap.top_gaps(q.gaps.unwrap_or(20));
        let gaps = gap_targets(&ranked);
        let pairs = derive_cluster_pairs(&ranked, snap.clusters(), q.pairs.unwrap_or(10));
        let with_ids = |ts: Vec<crate::gaps::TargetSpec>| -> Vec<Value> {
            ts.into_iter().map(|t| json!({ "target_id": t.target_id(), "target": t })).collect()
        };
        Ok(Json(json!({ "snapshot_id": id, "gaps": with_ids(gaps), "pairs": with_ids(pairs) })))
    })
    .await
}

#[derive(Debug, Serialize)]
struct LayoutPoint {
    paper_id: String,
    title: String,
    x: f64,
    y: f64,
    label: i64,
    gap: f64,
}

async fn layout(State(s): State<ApiState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let snap = s.store.load(&id)?;
        let cols = snap.analysis.cols();
        let points: Vec<LayoutPoint> = (0..snap.len())
            .map(|i| {
                let row = snap.analysis.row(i);
                LayoutPoint {
                    paper_id: snap.id_of(i).to_string(),
                    title: snap.paper(i).title.clone(),
                    x: if cols > 0 { row[0] } else { 0.0 },
                    y: if cols > 1 { row[1] } else { 0.0 },
                    label: snap.label(i),
                    gap: snap.gap_score(i),
                }
            })
            .collect();
        Ok(Json(json!({ "snapshot_id": id, "points": points })))
    })
    .await
}

async fn create_pack(
    State(s): State<ApiState>,
    Path(id): Path<String>,
    Json(req): Json<PackRequest>,
) -> ApiResult<Json<Value>> {
    blocking(move || {
        let snap = s.store.load(&id)?;
        let pack = build_pack(&snap, &req, s.encoder.as_deref(), &s.workflow.pack)?;
        Ok(Json(serde_json::to_value(pack).map_err(SnapshotError::from)?))
    })
    .await
}

async fn create_brief(
    State(s): State<ApiState>,
    Path(id): Path<String>,
    Json(req): Json<PackRequest>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    blocking(move || {
        let snap = s.store.load(&id)?;
        let brief =
            run_workflow(&snap, &req, s.generator.as_ref(), s.encoder.as_deref(), &s.workflow).map_err(|e| {
                ApiError {
                    status: StatusCode::UNPROCESSABLE_ENTITY,
                    message: e.to_string(),
                    stage: Some(e.stage.to_string()),
                }
            })?;
        let brief_id = s.store.store_brief(&brief)?;
        let record = s.store.get_brief(&brief_id)?;
        Ok((StatusCode::CREATED, Json(serde_json::to_value(record).map_err(SnapshotError::from)?)))
    })
    .await
}

async fn get_brief(State(s): State<ApiState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || Ok(Json(serde_json::to_value(s.store.get_brief(&id)?).map_err(SnapshotError::from)?))).await
}

fn open_sections(store: &SnapshotStore, ids: &[String]) -> ApiResult<Vec<Value>> {
    ids.iter().map(|p| Ok(serde_json::to_value(store.open_section(p)?).map_err(SnapshotError::from)?)).collect()
}

async fn brief_packets(State(s): State<ApiState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || {
        s.store.get_brief(&id)?;
        let ids = s.store.packet_ids("brief", &id)?;
        Ok(Json(json!({ "brief_id": id, "packets": open_sections(&s.store, &ids)? })))
    })
    .await
}

async fn review_brief(
    State(s): State<ApiState>,
    Path(id): Path<String>,
    Json(review): Json<ReviewerScore>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    blocking(move || {
        s.store.get_brief(&id)?;
        if !s.store.packet_ids("brief", &id)?.contains(&review.idea_id) {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("idea {} is not a packet of brief {id}", review.idea_id),
            ));
        }
        let receipt = s.store.submit_review(&review.idea_id, &review)?;
        Ok((StatusCode::CREATED, Json(serde_json::to_value(receipt).map_err(SnapshotError::from)?)))
    })
    .await
}

async fn get_packet(State(s): State<ApiState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || Ok(Json(serde_json::to_value(s.store.open_section(&id)?).map_err(SnapshotError::from)?))).await
}

async fn review_packet(
    State(s): State<ApiState>,
    Path(id): Path<String>,
    Json(review): Json<ReviewerScore>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    blocking(move || {
        let receipt = s.store.submit_review(&id, &review)?;
        Ok((StatusCode::CREATED, Json(serde_json::to_value(receipt).map_err(SnapshotError::from)?)))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

async fn sealed_packet(
    State(s): State<ApiState>,
    Path(id): Path<String>,
    Query(q): Query<TokenQuery>,
) -> ApiResult<Json<Value>> {
    blocking(move || {
        let sealed = s.store.sealed_section(&id, q.token.as_deref().unwrap_or(""))?;
        Ok(Json(serde_json::to_value(sealed).map_err(SnapshotError::from)?))
    })
    .await
}

async fn list_runs(State(s): State<ApiState>) -> ApiResult<Json<Value>> {
    blocking(move || Ok(Json(json!({ "runs": s.store.list_runs()? })))).await
}

async fn get_run(State(s): State<ApiState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || Ok(Json(serde_json::to_value(s.store.get_run(&id)?).map_err(SnapshotError::from)?))).await
}

async fn run_metrics(State(s): State<ApiState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let run = s.store.get_run(&id)?;
        let methods: Vec<Value> = run
            .report
            .methods
            .iter()
            .map(|m| json!({ "method": m.method, "metrics": m.metrics, "failed_targets": m.failed_targets.len() }))
            .collect();
        Ok(Json(json!({
            "run_id": id,
            "snapshot_id": run.snapshot_id,
            "tasks": run.report.gold.tasks.len(),
            "leakage_clean": run.report.leakage.clean(),
            "methods": methods,
        })))
    })
    .await
}

async fn run_packets(State(s): State<ApiState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || {
        s.store.get_run(&id)?;
        let ids = s.store.packet_ids("run", &id)?;
        Ok(Json(json!({ "run_id": id, "packets": open_sections(&s.store, &ids)? })))
    })
    .await
}

async fn calibration(State(s): State<ApiState>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let reviews: Vec<ReviewerScore> = s.store.reviews()?.into_iter().map(|r| r.review).collect();
        let human = aggregate_reviewers(&reviews);
        let agent = s.store.reviewed_agent_scores()?;
        Ok(Json(serde_json::to_value(calibration_stats(&human, &agent)).map_err(SnapshotError::from)?))
    })
    .await
}
