use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use kgh_cli::args::FixtureKind;
use kgh_cli::commands::{cmd_fixture, Context};
use kgh_cli::config::PipelineConfig;
use kgh_cli::serve::{router, AppState, NodeView, Receipt};
use kgh_core::ingest::{read_snapshot_file, save_snapshot, HierarchyRecord};
use kgh_core::{CorrectionSet, CoverageReport};
use serde_json::{json, Value};
use tempfile::{tempdir, TempDir};
use tower::ServiceExt;

fn setup(live: bool) -> (TempDir, Arc<AppState>) {
    let dir = tempdir().unwrap();
    cmd_fixture(FixtureKind::Relationships, dir.path(), 0, 0, 0).unwrap();
    let config = PipelineConfig::load(&dir.path().join("kgh.toml"), true).unwrap();
    let snapshot = read_snapshot_file(&config.paths.snapshot).unwrap();
    let state = Arc::new(AppState::new(Context::new(config), snapshot, live));
    (dir, state)
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn move_momdad() -> Value {
    json!({"corrections": [
        {"node": "momdad", "remove_parents": ["love"], "add_parents": ["marriage"], "reviewer": "r1"}
    ]})
}

#[tokio::test]
async fn hierarchy_matches_subgraph() {
    let (_dir, state) = setup(false);
    let expected = HierarchyRecord::from_hierarchy(&state.current().hierarchy.subgraph(&"rel".into()).unwrap());
    for key in ["rel", "Relationships", "relationships"] {
        let (status, body) = call(&state, "GET", &format!("/hierarchy/{key}"), None).await;
        assert_eq!(status, StatusCode::OK);
        let got: HierarchyRecord = serde_json::from_value(body).unwrap();
        assert_eq!(got, expected);
    }
    let (status, _) = call(&state, "GET", "/hierarchy/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn node_stats_and_samples() {
    let (_dir, state) = setup(false);
    let (status, body) = call(&state, "GET", "/node/momdad", None).await;
    assert_eq!(status, StatusCode::OK);
    let view: NodeView = serde_json::from_value(body).unwrap();
    assert_eq!(view.parents, vec!["love".into()]);
    assert!(view.children.is_empty());
    assert_eq!(view.level.map(|l| l.get()), Some(3));
    assert_eq!(call(&state, "GET", "/node/ghost", None).await.0, StatusCode::NOT_FOUND);

    let (status, body) = call(&state, "GET", "/stats", None).await;
    assert_eq!(status, StatusCode::OK);
    let report: CoverageReport = serde_json::from_value(body).unwrap();
    assert_eq!(report.total_nodes, 7);
    assert_eq!(report.in_hierarchy_after, 5);

    let (status, body) = call(&state, "GET", "/samples", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.as_array().unwrap().len(), 1);
    assert_eq!(body[0]["subtree_root"], "rel");
}

#[tokio::test]
async fn staged_correction_is_persisted_not_applied() {
    let (dir, state) = setup(false);
    let before = std::fs::read(dir.path().join("graph.snapshot.json")).unwrap();
    let (status, body) = call(&state, "POST", "/corrections", Some(move_momdad())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let receipt: Receipt = serde_json::from_value(body).unwrap();
    assert!(!receipt.applied);
    assert_eq!(receipt.receipt.len(), 16);
    let staged = receipt.staged.unwrap();
    assert_eq!(staged, dir.path().join("out/review/corrections/corrections-0001.json"));
    let set: CorrectionSet = serde_json::from_slice(&std::fs::read(&staged).unwrap()).unwrap();
    assert_eq!(set, serde_json::from_value(move_momdad()).unwrap());
    assert_eq!(std::fs::read(dir.path().join("graph.snapshot.json")).unwrap(), before);
    assert!(state.current().hierarchy.has_edge(&"love".into(), &"momdad".into()));

    let (_, body) = call(&state, "POST", "/corrections", Some(move_momdad())).await;
    assert!(body["staged"].as_str().unwrap().ends_with("corrections-0002.json"));
}

#[tokio::test]
async fn cycle_is_rejected_with_report() {
    let (dir, state) = setup(true);
    let cycle = json!({"corrections": [
        {"node": "love", "add_parents": ["momdad"]}
    ]});
    let (status, body) = call(&state, "POST", "/corrections", Some(cycle)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("cycle"), "{body}");
    assert_eq!(body["report"]["outcomes"].as_array().unwrap().len(), 1);
    assert!(!dir.path().join("out/review/corrections").exists());

    let (status, _) = call(&state, "POST", "/corrections", Some(json!({"corrections": []}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&state, "POST", "/corrections", Some(json!({"nope": 1}))).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn live_apply_swaps_snapshot_without_touching_readers() {
    let (dir, state) = setup(true);
    let held = state.current();
    let held_bytes = save_snapshot(&held);
    let (status, body) = call(&state, "POST", "/corrections", Some(move_momdad())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["applied"], true);

    assert_eq!(save_snapshot(&held), held_bytes);
    assert!(held.hierarchy.has_edge(&"love".into(), &"momdad".into()));
    let now = state.current();
    assert!(now.hierarchy.has_edge(&"marriage".into(), &"momdad".into()));
    assert!(!now.hierarchy.has_edge(&"love".into(), &"momdad".into()));

    let on_disk = read_snapshot_file(&dir.path().join("graph.snapshot.json")).unwrap();
    assert_eq!(save_snapshot(&on_disk), save_snapshot(&now));
    assert_eq!(on_disk.provenance_log.len(), 1);

    let (_, body) = call(&state, "GET", "/node/momdad", None).await;
    assert_eq!(body["parents"], json!(["marriage"]));
}

#[test]
fn live_server_refuses_a_locked_snapshot() {
    let dir = tempdir().unwrap();
    cmd_fixture(FixtureKind::Relationships, dir.path(), 0, 0, 0).unwrap();
    let config = PipelineConfig::load(&dir.path().join("kgh.toml"), true).unwrap();
    std::fs::write(Path::new(&config.paths.snapshot).with_extension("lock"), "").unwrap();
    let err = kgh_cli::serve::cmd_serve(&Context::new(config), "127.0.0.1:0", true).unwrap_err();
    assert_eq!(err.status.code(), 2);
    assert!(err.message.contains("locked"));
}
