use std::collections::BTreeMap;

use kgh_core::classifier::{classify_all, ClassificationResult, FewShotExample, PromptMode};
use kgh_core::{CategorySet, Node};
use serde::{Deserialize, Serialize};

use super::{classify_error, Context};
use crate::error::{CliError, CliResult};
use crate::files;

pub const CLASSIFICATION_FILE: &str = "classification.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationFile {
    pub node_class: String,
    pub categories: Vec<String>,
    pub passes: usize,
    pub results: Vec<ClassificationResult>,
}

/// Nodes of the configured class that still need a category: outside the
/// hierarchy (or every non-root when `all_nodes` is set), in id order.
pub fn classification_inputs(ctx: &Context, graph: &kgh_core::Hierarchy) -> Vec<Node> {
    let reachable = graph.in_hierarchy_nodes();
    let mut nodes: Vec<Node> = graph
        .nodes()
        .filter(|n| n.node_class() == ctx.config.node_class && !graph.is_root(n.id()))
        .filter(|n| ctx.config.classify.all_nodes || !reachable.contains(n.id()))
        .cloned()
        .collect();
    nodes.sort_by(|a, b| a.id().cmp(b.id()));
    nodes
}

pub fn cmd_classify(ctx: &Context, passes: Option<usize>) -> CliResult<ClassificationFile> {
    let cfg = &ctx.config;
    let passes = passes.unwrap_or(cfg.classify.passes);
    let categories_text = files::read_text(&cfg.paths.categories, "categories")?;
    let categories =
        CategorySet::from_lines(&categories_text, cfg.node_class.clone()).map_err(|e| {
            CliError::config(format!("{}: {e}", cfg.paths.categories.display()))
        })?;
    let examples: Vec<FewShotExample> = match cfg.classify.mode {
        PromptMode::FewShot => files::read_json(&cfg.paths.examples, "examples")?,
        PromptMode::ZeroShot if cfg.paths.examples.exists() => files::read_json(&cfg.paths.examples, "examples")?,
        PromptMode::ZeroShot => Vec::new(),
    };
    let snapshot = files::load_snapshot(&cfg.paths.snapshot)?;
    let nodes = classification_inputs(ctx, &snapshot.hierarchy);

    let results = if nodes.is_empty() {
        Vec::new()
    } else {
        let templates = ctx.templates()?;
        let provider = ctx.provider()?;
        classify_all(
            &nodes,
            &categories,
            &examples,
            &provider,
            &templates,
            &ctx.classify_options(),
            passes,
            cfg.classify.seed,
        )
        .map_err(classify_error)?
    };

    let file = ClassificationFile {
        node_class: cfg.node_class.clone(),
        categories: categories.labels().to_vec(),
        passes,
        results,
    };
    files::write_json(&ctx.out(CLASSIFICATION_FILE), &file)?;

    let mut per_category: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &file.results {
        for c in &r.categories {
            *per_category.entry(c.as_str()).or_default() += 1;
        }
    }
    println!(
        "classified {} {} nodes in {passes} pass(es); {} flagged",
        file.results.len(),
        cfg.node_class,
        file.results.iter().filter(|r| r.flagged).count()
    );
    for c in file.categories.iter().map(String::as_str).chain([kgh_core::provider::parse::OTHER]) {
        println!("  {c}: {}", per_category.get(c).copied().unwrap_or(0));
    }
    Ok(file)
}

impl Context {
    pub fn classify_options(&self) -> kgh_core::ClassifyOptions {
        self.config.classify_options()
    }
}
