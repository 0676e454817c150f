//! HTTP service for semi-automatic semantic annotation.
//!
//! All bodies are UTF-8 JSON. Errors have the shape
//! `{code, message, violations?}`.
//!
//! | route | result |
//! |---|---|
//! | `GET /trees` | tree summaries in corpus order |
//! | `GET /trees/next-unannotated` | first tree with a missing annotation |
//! | `GET /trees/{id}` | the current tree |
//! | `GET /trees/{id}/suggestions` | proposals for every unannotated node |
//! | `GET /trees/{id}/expanded` | expanded formula per computable node |
//! | `POST /trees/{id}/annotations` | commit `{nodePath, sem}`; 422 on violations |
//! | `POST /typecheck` | check `{tree}` without storing it |
//! | `GET /signature` | the constant signature |

mod session;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::RwLock;

use dop_core::treebank::{NodePath, Violation};

pub use session::{CommitError, JournalEntry, Session, SessionConfig, SessionError};

pub type SharedSession = Arc<RwLock<Session>>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    violations: Option<Vec<Violation>>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            violations: None,
        }
    }

    fn unknown_tree(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not-found", format!("no tree with id `{id}`"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let Some(v) = self.violations {
            body["violations"] = json!(v);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<CommitError> for ApiError {
    fn from(e: CommitError) -> Self {
        match e {
            CommitError::NotFound(id) => ApiError::unknown_tree(&id),
            CommitError::InvalidPath(p) => ApiError::new(
                StatusCode::BAD_REQUEST,
                "invalid-path",
                format!("no node at path `{p}`"),
            ),
            CommitError::Rejected(vs) => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                code: "violation",
                message: vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
                violations: Some(vs),
            },
            CommitError::Io(m) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "journal", m),
        }
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad-request", e.to_string()))
}

async fn list_trees(State(s): State<SharedSession>) -> ApiResult {
    let s = s.read().await;
    let rows: Vec<Value> = s
        .trees()
        .iter()
        .map(|t| {
            json!({
                "id": t.id,
                "sentence": t.sentence,
                "nodes": t.root.count_nodes(),
                "unannotated": t.unannotated_paths().len(),
            })
        })
        .collect();
    Ok(Json(json!(rows)))
}

fn tree_body(t: &dop_core::treebank::AnnotatedTree) -> Value {
    let mut v = t.to_json();
    v["unannotated"] = json!(t.unannotated_paths());
    v
}

async fn next_unannotated(State(s): State<SharedSession>) -> ApiResult {
    let s = s.read().await;
    match s.next_unannotated() {
        Some((t, p)) => {
            let mut v = tree_body(t);
            v["nodePath"] = json!(p);
            Ok(Json(v))
        }
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "all-annotated",
            "every tree is fully annotated",
        )),
    }
}

async fn get_tree(State(s): State<SharedSession>, Path(id): Path<String>) -> ApiResult {
    let s = s.read().await;
    s.tree(&id)
        .map(|t| Json(tree_body(t)))
        .ok_or_else(|| ApiError::unknown_tree(&id))
}

async fn suggestions(State(s): State<SharedSession>, Path(id): Path<String>) -> ApiResult {
    let s = s.read().await;
    s.suggestions(&id)
        .map(|v| Json(json!(v)))
        .ok_or_else(|| ApiError::unknown_tree(&id))
}

async fn expanded(State(s): State<SharedSession>, Path(id): Path<String>) -> ApiResult {
    let s = s.read().await;
    s.expanded(&id)
        .map(|v| Json(json!(v)))
        .ok_or_else(|| ApiError::unknown_tree(&id))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct AnnotationRequest {
    node_path: String,
    sem: String,
}

async fn annotate(State(s): State<SharedSession>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req: AnnotationRequest = parse_body(&body)?;
    let path: NodePath = req.node_path.parse().map_err(|_| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid-path",
            format!("malformed path `{}`", req.node_path),
        )
    })?;
    let mut s = s.write().await;
    let entry = s.annotate(&id, &path, &req.sem)?;
    let tree = s.tree(&id).map(tree_body);
    Ok(Json(json!({ "entry": entry, "tree": tree })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TypecheckRequest {
    tree: Value,
}

async fn typecheck(State(s): State<SharedSession>, body: Bytes) -> ApiResult {
    let req: TypecheckRequest = parse_body(&body)?;
    let s = s.read().await;
    s.typecheck(&req.tree)
        .map(Json)
        .map_err(|m| ApiError::new(StatusCode::BAD_REQUEST, "bad-request", m))
}

async fn signature(State(s): State<SharedSession>) -> ApiResult {
    Ok(Json(s.read().await.signature().to_json()))
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not-found", "no such route")
}

pub fn router(session: SharedSession) -> Router {
    Router::new()
        .route("/trees", get(list_trees))
        .route("/trees/next-unannotated", get(next_unannotated))
        .route("/trees/{id}", get(get_tree))
        .route("/trees/{id}/suggestions", get(suggestions))
        .route("/trees/{id}/expanded", get(expanded))
        .route("/trees/{id}/annotations", post(annotate))
        .route("/typecheck", post(typecheck))
        .route("/signature", get(signature))
        .fallback(fallback)
        .with_state(session)
}

/// Serves until the process is stopped.
pub async fn serve(session: Session, addr: SocketAddr) -> std::io::Result<()> {
    serve_on(session, tokio::net::TcpListener::bind(addr).await?).await
}

pub async fn serve_on(session: Session, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(RwLock::new(session)))).await
}
