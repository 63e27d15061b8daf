use std::collections::BTreeMap;
use std::path::PathBuf;

use kgh_core::generator::generate;
use kgh_core::graph::normalize_label;
use kgh_core::{CandidateSet, NodeId, StrategyOverride};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classify::{ClassificationFile, CLASSIFICATION_FILE};
use super::{generate_error, Context};
use crate::error::{CliError, CliResult, ExitStatus};
use crate::files;

pub const DELTA_DIR: &str = "deltas";
pub const DELTA_SUFFIX: &str = ".delta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CategoryOutcome {
    Generated {
        strategy: String,
        reason: String,
        passes: usize,
        placed: usize,
        unplaced: usize,
        rejected_labels: usize,
        delta_file: PathBuf,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category: String,
    pub l1_root: Option<NodeId>,
    pub candidates: usize,
    #[serde(flatten)]
    pub outcome: CategoryOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub categories: Vec<CategorySummary>,
}

pub fn cmd_generate(
    ctx: &Context,
    strategy: Option<StrategyOverride>,
    classification: Option<PathBuf>,
) -> CliResult<GenerateSummary> {
    let cfg = &ctx.config;
    let path = classification.unwrap_or_else(|| ctx.out(CLASSIFICATION_FILE));
    let file: ClassificationFile = files::read_json(&path, "classification results")?;
    let snapshot = files::load_snapshot(&cfg.paths.snapshot)?;
    let graph = &snapshot.hierarchy;
    let templates = ctx.templates()?;
    let options = ctx.config.generate_options();
    let strategy = strategy.unwrap_or(cfg.generate.strategy);

    let mut members: BTreeMap<&str, Vec<NodeId>> = BTreeMap::new();
    for r in &file.results {
        for c in &r.categories {
            members.entry(c.as_str()).or_default().push(r.node.clone());
        }
    }
    let roots: BTreeMap<String, NodeId> = graph
        .roots()
        .map(|r| (graph.node(r).expect("root node").normalized_label().to_string(), r.clone()))
        .collect();
    let work: Vec<(String, Option<NodeId>, Vec<NodeId>)> = file
        .categories
        .iter()
        .filter_map(|c| {
            let nodes = members.get(c.as_str())?.clone();
            Some((c.clone(), roots.get(&normalize_label(c)).cloned(), nodes))
        })
        .collect();

    let delta_dir = ctx.out(DELTA_DIR);
    clear_deltas(&delta_dir)?;
    let provider = if work.is_empty() { None } else { Some(ctx.provider()?) };

    let results: Vec<(CategorySummary, Option<CliError>)> = work
        .into_par_iter()
        .map(|(category, root, nodes)| {
            let candidates = nodes.len();
            let summary = |outcome| CategorySummary {
                category: category.clone(),
                l1_root: root.clone(),
                candidates,
                outcome,
            };
            let Some(root) = root.clone() else {
                let err = CliError::config(format!("no L1 root labelled {category:?} in the snapshot"));
                return (summary(CategoryOutcome::Failed { error: err.message.clone() }), Some(err));
            };
            let set = CandidateSet::new(root.clone(), nodes);
            let provider = provider.as_ref().expect("provider built for non-empty work");
            match generate(graph, &set, provider, &templates, &options, strategy) {
                Ok((choice, delta)) => {
                    let delta_file = delta_dir.join(format!("{}{DELTA_SUFFIX}", files::file_stem(root.as_str())));
                    if let Err(e) = files::write_json(&delta_file, &delta) {
                        return (summary(CategoryOutcome::Failed { error: e.message.clone() }), Some(e));
                    }
                    let outcome = CategoryOutcome::Generated {
                        strategy: delta.strategy_used.to_string(),
                        reason: choice.reason,
                        passes: delta.passes,
                        placed: delta.placed().len(),
                        unplaced: delta.unplaced.len(),
                        rejected_labels: delta.rejected_labels.len(),
                        delta_file,
                    };
                    (summary(outcome), None)
                }
                Err(e) => {
                    let err = generate_error(&e);
                    (summary(CategoryOutcome::Failed { error: err.message.clone() }), Some(err))
                }
            }
        })
        .collect();

    let mut summaries = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    let (mut total, mut placed, mut unplaced) = (0, 0, 0);
    for (s, err) in results {
        total += s.candidates;
        match &s.outcome {
            CategoryOutcome::Generated {
                strategy,
                passes,
                placed: p,
                unplaced: u,
                rejected_labels,
                ..
            } => {
                placed += p;
                unplaced += u;
                println!(
                    "{}: strategy={strategy} passes={passes} placed={p} unplaced={u} rejected_labels={rejected_labels}",
                    s.category
                );
            }
            CategoryOutcome::Failed { error } => println!("{}: FAILED {error}", s.category),
        }
        failures.extend(err);
        summaries.push(s);
    }
    println!("total: candidates={total} placed={placed} unplaced={unplaced}");
    let summary = GenerateSummary { categories: summaries };
    files::write_json(&ctx.out("generate-summary.json"), &summary)?;

    match failures.len() {
        0 => Ok(summary),
        n if n == summary.categories.len() => {
            let status = failures[0].status;
            let message = failures.iter().map(|f| f.message.as_str()).collect::<Vec<_>>().join("; ");
            Err(CliError::new(status, format!("every category failed: {message}")))
        }
        n => Err(CliError::new(
            ExitStatus::Partial,
            format!("{n} of {} categories failed", summary.categories.len()),
        )),
    }
}

fn clear_deltas(dir: &std::path::Path) -> CliResult<()> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Ok(());
    };
    for e in entries.flatten() {
        let p = e.path();
        if p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(DELTA_SUFFIX)) {
            std::fs::remove_file(&p).map_err(|err| CliError::internal(format!("{}: {err}", p.display())))?;
        }
    }
    Ok(())
}
