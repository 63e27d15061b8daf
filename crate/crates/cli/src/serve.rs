//! Local review service. Readers take a cheap clone of the current snapshot
//! pointer, so a concurrent apply never changes what an in-flight request
//! sees. Applies are serialized by a single writer lock.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kgh_core::ingest::{apply_corrections, CorrectionReport, HierarchyRecord};
use kgh_core::stats::{sample_for_review, ReviewSample};
use kgh_core::{CorrectionSet, GraphSnapshot, Hierarchy, Level, Node, NodeId};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::commands::review::{SAMPLES_FILE, STAGED_DIR};
use crate::commands::{strip_model_edges, Context};
use crate::error::{CliError, CliResult};
use crate::files;

pub struct AppState {
    snapshot: RwLock<Arc<GraphSnapshot>>,
    writer: Mutex<()>,
    ctx: Context,
    live: bool,
}

impl AppState {
    pub fn new(ctx: Context, snapshot: GraphSnapshot, live: bool) -> Self {
        Self {
            snapshot: RwLock::new(Arc::new(snapshot)),
            writer: Mutex::new(()),
            ctx,
            live,
        }
    }

    /// The snapshot as of now; later applies do not affect the returned value.
    pub fn current(&self) -> Arc<GraphSnapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn staged_dir(&self) -> PathBuf {
        self.ctx.out(STAGED_DIR)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub node: Node,
    pub level: Option<Level>,
    pub parents: Vec<NodeId>,
    pub children: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Receipt {
    pub receipt: String,
    /// Where the corrections were staged; absent when applied live.
    pub staged: Option<PathBuf>,
    pub applied: bool,
    pub report: CorrectionReport,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn find_root(g: &Hierarchy, key: &str) -> Option<NodeId> {
    let id = NodeId::new(key).ok()?;
    if g.is_root(&id) {
        return Some(id);
    }
    let wanted = kgh_core::graph::normalize_label(key);
    g.roots()
        .find(|r| g.node(r).is_some_and(|n| n.normalized_label() == wanted))
        .cloned()
}

async fn hierarchy(State(state): State<Arc<AppState>>, UrlPath(l1): UrlPath<String>) -> Response {
    let snap = state.current();
    let g = &snap.hierarchy;
    match find_root(g, &l1) {
        Some(root) => match g.subgraph(&root) {
            Ok(sub) => Json(HierarchyRecord::from_hierarchy(&sub)).into_response(),
            Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        },
        None => error(StatusCode::NOT_FOUND, format!("no L1 category {l1:?}")),
    }
}

async fn node(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let snap = state.current();
    let g = &snap.hierarchy;
    let Some(n) = NodeId::new(id.clone()).ok().and_then(|id| g.node(&id).cloned()) else {
        return error(StatusCode::NOT_FOUND, format!("no node {id:?}"));
    };
    let view = NodeView {
        level: g.level_of(n.id()).ok().flatten(),
        parents: g.parents(n.id()).unwrap_or_default().into_iter().cloned().collect(),
        children: g.children(n.id()).unwrap_or_default().into_iter().cloned().collect(),
        node: n,
    };
    Json(view).into_response()
}

async fn stats(State(state): State<Arc<AppState>>) -> Response {
    let snap = state.current();
    let g = &snap.hierarchy;
    match kgh_core::coverage_report(&strip_model_edges(g), g, &state.ctx.config.node_class) {
        Ok(r) => Json(r).into_response(),
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    }
}

async fn samples(State(state): State<Arc<AppState>>) -> Response {
    let path = state.ctx.out(SAMPLES_FILE);
    if path.exists() {
        return match files::read_json::<Vec<ReviewSample>>(&path, "review samples") {
            Ok(s) => Json(s).into_response(),
            Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.message),
        };
    }
    let snap = state.current();
    let review = &state.ctx.config.review;
    match sample_for_review(&snap.hierarchy, review.sample_rate, review.seed) {
        Ok(s) => Json(s).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

fn receipt_id(set: &CorrectionSet) -> String {
    let bytes = serde_json::to_vec(set).expect("correction set serializes");
    hex::encode(&Sha256::digest(bytes)[..8])
}

fn rejected(report: CorrectionReport) -> Response {
    let reasons: Vec<String> = report
        .outcomes
        .iter()
        .filter_map(|o| match &o.status {
            kgh_core::ingest::CorrectionStatus::Failed { reason } => Some(format!("#{} {}: {reason}", o.index, o.node)),
            _ => None,
        })
        .collect();
    (
        StatusCode::UNPROCESSABLE_ENTITY,
        Json(json!({ "error": reasons.join("; "), "report": report })),
    )
        .into_response()
}

fn next_staged_path(dir: &Path) -> PathBuf {
    (1..)
        .map(|n| dir.join(format!("corrections-{n:04}.json")))
        .find(|p| !p.exists())
        .expect("unbounded search")
}

async fn corrections(State(state): State<Arc<AppState>>, Json(set): Json<CorrectionSet>) -> Response {
    if set.corrections.is_empty() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "empty correction set");
    }
    let _writer = state.writer.lock().expect("writer lock");
    let current = state.current();
    let receipt = receipt_id(&set);
    if !state.live {
        let (_, report) = apply_corrections(&current.hierarchy, &set);
        if report.failed() > 0 {
            return rejected(report);
        }
        let path = next_staged_path(&state.staged_dir());
        if let Err(e) = files::write_json(&path, &set) {
            return error(StatusCode::INTERNAL_SERVER_ERROR, e.message);
        }
        log::info!("staged {} correction(s) as {}", set.corrections.len(), path.display());
        return Json(Receipt {
            receipt,
            staged: Some(path),
            applied: false,
            report,
        })
        .into_response();
    }
    let mut next = (*current).clone();
    let report = next.apply_corrections(&set, state.ctx.config.timestamp());
    if report.failed() > 0 {
        return rejected(report);
    }
    if let Err(e) = files::save_snapshot(&state.ctx.config.paths.snapshot, &next) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, e.message);
    }
    *state.snapshot.write().expect("snapshot lock") = Arc::new(next);
    log::info!("applied {} correction(s)", set.corrections.len());
    Json(Receipt {
        receipt,
        staged: None,
        applied: true,
        report,
    })
    .into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/hierarchy/{l1}", get(hierarchy))
        .route("/node/{id}", get(node))
        .route("/stats", get(stats))
        .route("/samples", get(samples))
        .route("/corrections", post(corrections))
        .with_state(state)
}

/// Exclusive marker held while a live-applying server owns the snapshot.
struct SnapshotLock(PathBuf);

impl SnapshotLock {
    fn acquire(snapshot: &Path) -> CliResult<Self> {
        let path = snapshot.with_extension("lock");
        std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => CliError::config(format!(
                    "snapshot {} is locked by another writer ({} exists)",
                    snapshot.display(),
                    path.display()
                )),
                _ => CliError::internal(format!("{}: {e}", path.display())),
            })?;
        Ok(Self(path))
    }
}

impl Drop for SnapshotLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

pub fn cmd_serve(ctx: &Context, bind: &str, live: bool) -> CliResult<()> {
    let live = live || ctx.config.review.live_apply;
    let snapshot = files::load_snapshot(&ctx.config.paths.snapshot)?;
    let _lock = if live {
        Some(SnapshotLock::acquire(&ctx.config.paths.snapshot)?)
    } else {
        None
    };
    let state = Arc::new(AppState::new(ctx.clone(), snapshot, live));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::internal(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| CliError::config(format!("cannot bind {bind}: {e}")))?;
        println!(
            "serving {} on http://{bind} ({})",
            ctx.config.paths.snapshot.display(),
            if live { "corrections applied live" } else { "corrections staged" }
        );
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::internal(e.to_string()))
    })
}
