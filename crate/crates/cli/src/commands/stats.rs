use std::path::PathBuf;

use kgh_core::stats::{coverage_report, render_coverage_table, StatsError};
use kgh_core::{CoverageReport, Hierarchy, Provenance};

use super::Context;
use crate::error::{CliError, CliResult};
use crate::files;

pub const COVERAGE_FILE: &str = "coverage.json";

/// `g` with every generated or human-corrected edge removed.
pub fn strip_model_edges(g: &Hierarchy) -> Hierarchy {
    let mut out = g.clone();
    for e in g.edges().filter(|e| e.provenance != Provenance::Preexisting) {
        out.remove_edge(&e.parent, &e.child);
    }
    out
}

pub fn coverage(ctx: &Context, after: &Hierarchy, before: &Hierarchy) -> CliResult<CoverageReport> {
    coverage_report(before, after, &ctx.config.node_class).map_err(|e| match e {
        StatsError::ClassMismatch { .. } => CliError::validation(e.to_string()),
        other => CliError::internal(other.to_string()),
    })
}

pub fn cmd_stats(ctx: &Context, before: Option<PathBuf>) -> CliResult<CoverageReport> {
    let after = files::load_snapshot(&ctx.config.paths.snapshot)?.hierarchy;
    let before = match before {
        Some(p) => files::load_snapshot(&p)?.hierarchy,
        None => strip_model_edges(&after),
    };
    let report = coverage(ctx, &after, &before)?;
    print!("{}", render_coverage_table(std::slice::from_ref(&report)));
    println!(
        "coverage {:.2}% (before {:.2}%, increase {:.2} points)",
        100.0 * report.coverage_fraction,
        100.0 * report.coverage_before_fraction,
        100.0 * report.coverage_increase
    );
    files::write_json(&ctx.out(COVERAGE_FILE), &report)?;
    Ok(report)
}
