use std::path::PathBuf;

use kgh_core::stats::{relevance_summary, sample_for_review, ReviewSample, StatsError};
use kgh_core::CorrectionSet;

use super::Context;
use crate::error::{CliError, CliResult};
use crate::files;

pub const SAMPLES_FILE: &str = "review/samples.json";
pub const STAGED_DIR: &str = "review/corrections";
pub const RELEVANCE_FILE: &str = "review/relevance.json";

pub fn cmd_review_export(ctx: &Context, rate: Option<f64>, reviewer: Option<String>) -> CliResult<Vec<ReviewSample>> {
    let cfg = &ctx.config;
    let graph = files::load_snapshot(&cfg.paths.snapshot)?.hierarchy;
    let rate = rate.unwrap_or(cfg.review.sample_rate);
    let mut samples =
        sample_for_review(&graph, rate, cfg.review.seed).map_err(|e| CliError::config(e.to_string()))?;
    for s in &mut samples {
        s.assigned_reviewer = reviewer.clone();
        let label = graph.node(&s.subtree_root).map_or("", |n| n.label());
        println!("{label} ({}): {} node(s)", s.subtree_root, s.nodes.len());
    }
    let path = ctx.out(SAMPLES_FILE);
    files::write_json(&path, &samples)?;
    println!(
        "{} node(s) sampled across {} categories; written to {}",
        samples.iter().map(|s| s.nodes.len()).sum::<usize>(),
        samples.len(),
        path.display()
    );
    Ok(samples)
}

/// Applies correction sets (by default every file staged by the review
/// service) and summarizes recorded outcomes when a sample file is given.
pub fn cmd_review_apply(ctx: &Context, corrections: &[PathBuf], samples: Option<PathBuf>) -> CliResult<usize> {
    let cfg = &ctx.config;
    let inputs = if corrections.is_empty() {
        let staged = ctx.out(STAGED_DIR);
        if staged.is_dir() {
            files::expand_json_inputs(&[staged])?
        } else {
            Vec::new()
        }
    } else {
        files::expand_json_inputs(corrections)?
    };
    let mut sets = Vec::new();
    for p in &inputs {
        let set: CorrectionSet = files::read_json(p, "correction set")?;
        sets.push((p, set));
    }
    let sample_data: Option<Vec<ReviewSample>> = match &samples {
        Some(p) => Some(files::read_json(p, "review samples")?),
        None => None,
    };
    if sets.is_empty() && sample_data.is_none() {
        return Err(CliError::config("no correction sets or review samples to apply"));
    }

    let mut snapshot = files::load_snapshot(&cfg.paths.snapshot)?;
    let (mut applied, mut failed) = (0, 0);
    for (p, set) in &sets {
        let report = snapshot.apply_corrections(set, cfg.timestamp());
        println!("{}: {} applied, {} failed", p.display(), report.applied(), report.failed());
        for o in &report.outcomes {
            if let kgh_core::ingest::CorrectionStatus::Failed { reason } = &o.status {
                println!("  #{} {}: {reason}", o.index, o.node);
            }
        }
        applied += report.applied();
        failed += report.failed();
    }
    if !sets.is_empty() {
        files::save_snapshot(&cfg.paths.snapshot, &snapshot)?;
        println!("snapshot written to {}", cfg.paths.snapshot.display());
    }

    if let Some(samples) = sample_data {
        match relevance_summary(&samples) {
            Ok(summary) => {
                let o = &summary.overall;
                match o.relevant_fraction {
                    Some(f) => println!(
                        "relevant {:.2}% ({} relevant, {} misplaced, {} unresolved)",
                        100.0 * f,
                        o.relevant,
                        o.misplaced,
                        o.unresolved
                    ),
                    None => println!("relevance undefined: all {} outcome(s) unresolved", o.unresolved),
                }
                files::write_json(&ctx.out(RELEVANCE_FILE), &summary)?;
            }
            Err(StatsError::NoOutcomes) => println!("no review outcomes recorded"),
            Err(e) => return Err(CliError::validation(e.to_string())),
        }
    }

    match (failed, applied) {
        (0, _) => Ok(applied),
        (f, 0) => Err(CliError::validation(format!("{f} correction(s) rejected, none applied"))),
        (f, _) => Err(CliError::partial(format!("{f} correction(s) rejected"))),
    }
}
