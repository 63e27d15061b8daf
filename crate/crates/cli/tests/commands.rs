use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kgh_core::ingest::read_snapshot_file;
use kgh_core::HierarchyDelta;
use serde_json::Value;
use tempfile::tempdir;

fn kgh(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgh"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run kgh")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synthetic(dir: &Path, depth: &str, nodes: &str) {
    let o = kgh(dir, &["fixture", "synthetic", "--out", ".", "--depth", depth, "--nodes", nodes]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn noiseless_classification_matches_gold() {
    let dir = tempdir().unwrap();
    synthetic(dir.path(), "4", "120");
    let o = kgh(dir.path(), &["classify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let file: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/classification.json")).unwrap()).unwrap();
    let gold = read_snapshot_file(&dir.path().join("gold.snapshot.json")).unwrap().hierarchy;
    let results = file["results"].as_array().unwrap();
    assert_eq!(results.len(), gold.len() - gold.root_count());
    for r in results {
        let id = r["node"].as_str().unwrap();
        let root = gold
            .roots()
            .find(|root| gold.descendants(root).unwrap().contains(&id.into()))
            .unwrap();
        let expected = gold.node(root).unwrap().label();
        assert_eq!(r["categories"], serde_json::json!([expected]), "{id}");
        assert_eq!(r["flagged"], false);
    }
}

#[test]
fn missing_categories_file_is_a_config_error() {
    let dir = tempdir().unwrap();
    synthetic(dir.path(), "3", "30");
    std::fs::remove_file(dir.path().join("categories.txt")).unwrap();
    let o = kgh(dir.path(), &["classify"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("categories.txt"), "{}", stderr(&o));
}

#[test]
fn nothing_to_classify_writes_empty_results() {
    let dir = tempdir().unwrap();
    synthetic(dir.path(), "3", "30");
    // the gold graph already has every node placed
    let o = kgh(dir.path(), &["--snapshot", "gold.snapshot.json", "classify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let file: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/classification.json")).unwrap()).unwrap();
    assert_eq!(file["results"], serde_json::json!([]));
}

#[test]
fn generate_writes_one_delta_per_category_and_conserves_candidates() {
    let dir = tempdir().unwrap();
    synthetic(dir.path(), "4", "450");
    assert_eq!(kgh(dir.path(), &["classify"]).status.code(), Some(0));
    let o = kgh(dir.path(), &["generate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let deltas: Vec<PathBuf> = std::fs::read_dir(dir.path().join("out/deltas"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(deltas.len(), 4);
    let mut accounted = 0;
    for p in &deltas {
        let d: HierarchyDelta = serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap();
        assert!(d.placed().is_disjoint(&d.unplaced));
        accounted += d.candidates().len();
    }
    assert_eq!(accounted, 446);
    assert!(stdout(&o).contains("total: candidates=446 placed=446 unplaced=0"), "{}", stdout(&o));
}

#[test]
fn failing_category_is_isolated() {
    let dir = tempdir().unwrap();
    synthetic(dir.path(), "3", "450");
    assert_eq!(kgh(dir.path(), &["classify"]).status.code(), Some(0));
    let gold = read_snapshot_file(&dir.path().join("gold.snapshot.json")).unwrap().hierarchy;
    let doomed = gold.node(gold.roots().nth(1).unwrap()).unwrap().label().to_string();
    let config = dir.path().join("kgh.toml");
    let text = std::fs::read_to_string(&config).unwrap().replace(
        "noise_rate = 0.0",
        &format!("noise_rate = 0.0\nfail_on = [{doomed:?}]"),
    );
    std::fs::write(&config, text).unwrap();
    let o = kgh(dir.path(), &["generate"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stdout(&o).contains(&format!("{doomed}: FAILED")));
    assert_eq!(std::fs::read_dir(dir.path().join("out/deltas")).unwrap().count(), 3);
}

#[test]
fn forced_one_shot_that_does_not_fit_is_refused() {
    let dir = tempdir().unwrap();
    synthetic(dir.path(), "4", "300");
    assert_eq!(kgh(dir.path(), &["classify"]).status.code(), Some(0));
    let config = dir.path().join("kgh.toml");
    let text = std::fs::read_to_string(&config)
        .unwrap()
        .replace("seed = 0\n\n[classify]", "seed = 0\ncontext_budget_tokens = 600\n\n[classify]")
        .replace("[generate]\n", "[generate]\nmax_output_tokens = 256\n");
    std::fs::write(&config, text).unwrap();
    let o = kgh(dir.path(), &["generate", "--strategy", "one-shot"]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stderr(&o).contains("budget"), "{}", stderr(&o));
    let auto = kgh(dir.path(), &["generate"]);
    assert_eq!(auto.status.code(), Some(0), "{}", stderr(&auto));
    assert!(stdout(&auto).contains("strategy=cyclical"));
}

#[test]
fn merge_reports_coverage_and_rejects_corrupt_deltas() {
    let dir = tempdir().unwrap();
    synthetic(dir.path(), "3", "60");
    for step in [&["classify"][..], &["generate"]] {
        assert_eq!(kgh(dir.path(), step).status.code(), Some(0));
    }
    let before = std::fs::read(dir.path().join("graph.snapshot.json")).unwrap();

    let bad = dir.path().join("bad.delta.json");
    std::fs::write(&bad, "{\"l1_root\": 3}").unwrap();
    let o = kgh(dir.path(), &["merge", "--delta", "bad.delta.json"]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("bad.delta.json"));
    assert_eq!(std::fs::read(dir.path().join("graph.snapshot.json")).unwrap(), before);

    let o = kgh(dir.path(), &["merge"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("coverage after: 60/60"), "{}", stdout(&o));
    let merged = std::fs::read(dir.path().join("graph.snapshot.json")).unwrap();

    let again = kgh(dir.path(), &["merge"]);
    assert_eq!(again.status.code(), Some(0));
    assert!(stdout(&again).contains("already applied"));
    assert_eq!(std::fs::read(dir.path().join("graph.snapshot.json")).unwrap(), merged);
}

#[test]
fn review_export_and_apply() {
    let dir = tempdir().unwrap();
    let o = kgh(dir.path(), &["fixture", "relationships", "--out", "."]);
    assert_eq!(o.status.code(), Some(0));
    let o = kgh(dir.path(), &["review-export", "--rate", "1.0", "--reviewer", "expert-1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let samples_path = dir.path().join("out/review/samples.json");
    let mut samples: Value = serde_json::from_slice(&std::fs::read(&samples_path).unwrap()).unwrap();
    assert_eq!(samples[0]["assigned_reviewer"], "expert-1");
    assert_eq!(samples[0]["nodes"].as_array().unwrap().len(), 5);
    samples[0]["outcomes"] = serde_json::json!({"love": "relevant", "momdad": "misplaced", "marriage": "relevant"});
    std::fs::write(&samples_path, serde_json::to_vec(&samples).unwrap()).unwrap();

    let set = serde_json::json!({"corrections": [
        {"node": "momdad", "remove_parents": ["love"], "add_parents": ["marriage"], "reviewer": "expert-1"}
    ]});
    std::fs::write(dir.path().join("fix.json"), set.to_string()).unwrap();
    let o = kgh(
        dir.path(),
        &["review-apply", "--corrections", "fix.json", "--samples", "out/review/samples.json"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("relevant 66.67%"), "{}", stdout(&o));
    let g = read_snapshot_file(&dir.path().join("graph.snapshot.json")).unwrap().hierarchy;
    assert!(g.has_edge(&"marriage".into(), &"momdad".into()));
    assert!(!g.has_edge(&"love".into(), &"momdad".into()));

    let cycle = serde_json::json!({"corrections": [
        {"node": "marriage", "add_parents": ["momdad"]}
    ]});
    std::fs::write(dir.path().join("cycle.json"), cycle.to_string()).unwrap();
    let o = kgh(dir.path(), &["review-apply", "--corrections", "cycle.json"]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stdout(&o).contains("cycle"));
}

#[test]
fn intents_stats_table() {
    let dir = tempdir().unwrap();
    assert_eq!(kgh(dir.path(), &["fixture", "intents", "--out", "."]).status.code(), Some(0));
    let o = kgh(dir.path(), &["stats", "--before", "before.snapshot.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("12385"));
    assert!(out.contains("99.63%"));
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/coverage.json")).unwrap()).unwrap();
    assert_eq!(report["in_hierarchy_before"], 956);
}

#[test]
fn http_provider_without_key_is_a_config_error() {
    let dir = tempdir().unwrap();
    synthetic(dir.path(), "3", "30");
    let config = dir.path().join("kgh.toml");
    let text = std::fs::read_to_string(&config).unwrap();
    let (head, _) = text.split_once("[provider]").unwrap();
    std::fs::write(
        &config,
        format!(
            "{head}[provider]\nkind = \"http\"\nendpoint = \"http://127.0.0.1:9/v1\"\nmodel_name = \"m\"\napi_key_env_var = \"KGH_UNSET_TEST_KEY\"\n"
        ),
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_kgh"))
        .current_dir(dir.path())
        .env_remove("KGH_UNSET_TEST_KEY")
        .arg("classify")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("KGH_UNSET_TEST_KEY"));
}

#[test]
fn unknown_config_key_and_missing_config() {
    let dir = tempdir().unwrap();
    std::fs::write(dir.path().join("kgh.toml"), "colour = 1\n").unwrap();
    assert_eq!(kgh(dir.path(), &["stats"]).status.code(), Some(2));
    assert_eq!(kgh(dir.path(), &["--config", "nope.toml", "stats"]).status.code(), Some(2));
}
