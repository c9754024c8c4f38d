//! HTTP routing service.
//!
//! `POST /v1/answer` routes a question to a cluster backend or the base
//! model; `GET /v1/health` reports the cluster count and scorer. Backend
//! calls are blocking and run on the blocking pool.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Json;
use dyk_core::backends::{self, Completer};
use dyk_core::scoperouter::{CentroidScorer, GmmScorer, RemoteScorer, RouteError, Router, Scorer, ScorerKind};
use dyk_core::Decision;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::stages::{load_clusters, Context};
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    pub threshold: Option<f64>,
    pub scorer: Option<String>,
    pub clusters: Option<PathBuf>,
    pub listen: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub answer: String,
    pub route: Decision,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub k: usize,
    pub scorer: String,
}

/// Completion backends named by `router.clusters`, one per cluster.
pub fn cluster_backends(ctx: &Context, k: usize) -> Result<Vec<Arc<dyn Completer>>, CliError> {
    let names = &ctx.cfg.router.clusters;
    if names.len() != k {
        return Err(CliError::Invalid(format!(
            "router.clusters names {} backends for k={k}",
            names.len()
        )));
    }
    names.iter().map(|n| ctx.completer(n)).collect()
}

/// Assemble a [`Router`] from the config, the clusters file and any
/// command-line overrides.
pub fn build_router(ctx: &Context, opts: &ServeOptions) -> Result<Router, CliError> {
    let r = &ctx.cfg.router;
    let path = opts.clusters.clone().unwrap_or_else(|| ctx.cfg.paths.clusters.clone());
    let clusters = load_clusters(&path)?;
    let kind = match &opts.scorer {
        Some(flag) => ScorerKind::from_flag(flag)
            .ok_or_else(|| CliError::Invalid(format!("unknown scorer {flag:?} (remote, gmm, centroid)")))?,
        None => r.scorer_kind()?,
    };
    let missing = |what: &str| CliError::Invalid(format!("{} has no {what}; rerun cluster", path.display()));
    let scorer: Arc<dyn Scorer> = match kind {
        ScorerKind::RemoteClassifier => {
            let spec = ctx.cfg.backend(&r.classifier)?;
            let classifier =
                backends::classifier(spec).map_err(|e| CliError::Invalid(format!("backend {}: {e}", r.classifier)))?;
            Arc::new(RemoteScorer::new(classifier, clusters.k))
        }
        ScorerKind::GmmPosterior => {
            let params = clusters.gmm_params().ok_or_else(|| missing("mixture parameters"))?;
            let gate = clusters.density_gate.ok_or_else(|| missing("density gate"))?;
            Arc::new(GmmScorer::new(ctx.embedder(&r.embedder)?, params, gate).map_err(|e| CliError::Invalid(e.to_string()))?)
        }
        ScorerKind::NearestCentroid => {
            let c = clusters.centroids.clone().ok_or_else(|| missing("centroids"))?;
            Arc::new(CentroidScorer::new(ctx.embedder(&r.embedder)?, c).map_err(|e| CliError::Invalid(e.to_string()))?)
        }
    };
    let threshold = opts.threshold.unwrap_or(r.threshold);
    let mut router = Router::new(scorer, threshold, cluster_backends(ctx, clusters.k)?, ctx.completer(&r.base)?)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    router.defer_on_error = r.defer_on_error;
    router.max_new_tokens = r.max_new_tokens;
    Ok(router)
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<RouteError> for ApiError {
    fn from(e: RouteError) -> Self {
        let status = match e {
            RouteError::Scorer(_) | RouteError::Answer(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

async fn answer(State(router): State<Arc<Router>>, Json(req): Json<AnswerRequest>) -> Result<Json<AnswerResponse>, ApiError> {
    if req.question.trim().is_empty() {
        return Err(ApiError(StatusCode::BAD_REQUEST, "question is empty".into()));
    }
    let out = tokio::task::spawn_blocking(move || router.answer(&req.question))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(AnswerResponse {
        answer: out.answer,
        route: out.route.decision,
        scores: out.route.scores,
    }))
}

async fn health(State(router): State<Arc<Router>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        k: router.k(),
        scorer: router.scorer.kind().flag().into(),
    })
}

pub fn app(router: Arc<Router>) -> axum::Router {
    axum::Router::new()
        .route("/v1/answer", post(answer))
        .route("/v1/health", get(health))
        .with_state(router)
}

/// Bind, print the summary line, serve until Ctrl-C.
pub fn run(ctx: &Context, opts: ServeOptions) -> Result<Value, CliError> {
    let router = Arc::new(build_router(ctx, &opts)?);
    let listen = opts.listen.clone().unwrap_or_else(|| ctx.cfg.router.listen.clone());
    let addr: SocketAddr = listen
        .parse()
        .map_err(|e| CliError::Invalid(format!("listen address {listen:?}: {e}")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(CliError::runtime)?;
    let k = router.k();
    let scorer = router.scorer.kind().flag();
    let threshold = router.threshold;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(CliError::runtime)?;
        let bound = listener.local_addr().map_err(CliError::runtime)?;
        println!(
            "{}",
            json!({
                "stage": "route-serve",
                "status": "listening",
                "addr": bound.to_string(),
                "k": k,
                "scorer": scorer,
                "threshold": threshold,
            })
        );
        log::info!("serving on {bound}");
        axum::serve(listener, app(router))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(CliError::runtime)
    })?;
    Ok(json!({ "addr": addr.to_string(), "k": k, "scorer": scorer }))
}
