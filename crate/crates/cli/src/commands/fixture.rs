use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use kgh_core::classifier::FewShotExample;
use kgh_core::fixtures::{
    colors_fixture, intents_fixture, relationships, roots_only, synthetic_gold, CoverageFixture, CONCEPT_CLASS,
    INTENT_CLASS,
};
use kgh_core::{GraphSnapshot, Hierarchy, Provenance};

use crate::args::FixtureKind;
use crate::error::CliResult;
use crate::files;

fn snapshot(dir: &Path, name: &str, g: &Hierarchy) -> CliResult<PathBuf> {
    let path = dir.join(name);
    files::save_snapshot(&path, &GraphSnapshot::new(g.clone()))?;
    Ok(path)
}

fn coverage_config(class: &str) -> String {
    format!(
        "node_class = \"{class}\"\n\n[paths]\nsnapshot = \"after.snapshot.json\"\noutput_dir = \"out\"\n"
    )
}

fn mock_config(class: &str) -> String {
    format!(
        r#"node_class = "{class}"

[paths]
snapshot = "graph.snapshot.json"
categories = "categories.txt"
examples = "examples.json"
output_dir = "out"

[provider]
kind = "mock"
gold = "gold.snapshot.json"
noise_rate = 0.0
seed = 0

[classify]
passes = 1
seed = 0

[generate]
strategy = "auto"
"#
    )
}

fn write_coverage(out: &Path, f: CoverageFixture) -> CliResult<Vec<PathBuf>> {
    let config = out.join("kgh.toml");
    files::write_bytes(&config, coverage_config(f.node_class).as_bytes())?;
    Ok(vec![
        snapshot(out, "before.snapshot.json", &f.before)?,
        snapshot(out, "after.snapshot.json", &f.after)?,
        config,
    ])
}

/// Gold graph, the same graph stripped to its roots, category list, worked
/// examples and a mock-provider config.
fn write_pipeline(out: &Path, gold: &Hierarchy, class: &str) -> CliResult<Vec<PathBuf>> {
    let mut written = vec![
        snapshot(out, "gold.snapshot.json", gold)?,
        snapshot(out, "graph.snapshot.json", &roots_only(gold))?,
    ];
    let mut categories = String::new();
    let mut examples = Vec::new();
    for r in gold.roots() {
        let label = gold.node(r).expect("root").label();
        categories.push_str(label);
        categories.push('\n');
        if let Some(child) = gold.children(r).expect("root").first() {
            examples.push(FewShotExample {
                label: gold.node(child).expect("child").label().to_string(),
                categories: BTreeSet::from([label.to_string()]),
            });
        }
    }
    examples.truncate(3);
    let cats = out.join("categories.txt");
    files::write_bytes(&cats, categories.as_bytes())?;
    let ex = out.join("examples.json");
    files::write_json(&ex, &examples)?;
    let config = out.join("kgh.toml");
    files::write_bytes(&config, mock_config(class).as_bytes())?;
    written.extend([cats, ex, config]);
    Ok(written)
}

pub fn cmd_fixture(kind: FixtureKind, out: &Path, depth: u32, nodes: usize, seed: u64) -> CliResult<Vec<PathBuf>> {
    let written = match kind {
        FixtureKind::Intents => write_coverage(out, intents_fixture())?,
        FixtureKind::Colors => write_coverage(out, colors_fixture())?,
        FixtureKind::Synthetic => {
            if depth < 2 || nodes < depth as usize {
                return Err(crate::error::CliError::config(format!(
                    "cannot build a depth-{depth} hierarchy from {nodes} nodes"
                )));
            }
            write_pipeline(out, &synthetic_gold(depth, nodes, seed), CONCEPT_CLASS)?
        }
        FixtureKind::Relationships => {
            let graph = relationships();
            let mut gold = graph.clone();
            for c in ["wedding", "anniv"] {
                gold.add_edge(&"marriage".into(), &c.into(), Provenance::Preexisting)
                    .expect("fixture edge");
            }
            let mut written = vec![
                snapshot(out, "graph.snapshot.json", &graph)?,
                snapshot(out, "gold.snapshot.json", &gold)?,
            ];
            let config = out.join("kgh.toml");
            files::write_bytes(
                &config,
                format!("node_class = \"{INTENT_CLASS}\"\n\n[paths]\nsnapshot = \"graph.snapshot.json\"\noutput_dir = \"out\"\n")
                    .as_bytes(),
            )?;
            written.push(config);
            written
        }
    };
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(written)
}
