use std::path::PathBuf;

use kgh_core::{CorrectionSet, HierarchyDelta};

use super::generate::DELTA_DIR;
use super::{coverage_line, Context};
use crate::error::{CliError, CliResult};
use crate::files;

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MergeCounts {
    pub applied: usize,
    pub skipped: usize,
    pub failed: usize,
}

pub fn cmd_merge(
    ctx: &Context,
    deltas: &[PathBuf],
    corrections: &[PathBuf],
    subgraphs: &[PathBuf],
    out: Option<PathBuf>,
) -> CliResult<MergeCounts> {
    let cfg = &ctx.config;
    let delta_inputs = if deltas.is_empty() && corrections.is_empty() && subgraphs.is_empty() {
        let dir = ctx.out(DELTA_DIR);
        if dir.is_dir() {
            vec![dir]
        } else {
            return Err(CliError::config(format!(
                "nothing to merge: no inputs given and {} does not exist",
                dir.display()
            )));
        }
    } else {
        deltas.to_vec()
    };

    // parse everything before touching the snapshot
    let mut parsed_deltas = Vec::new();
    for p in files::expand_json_inputs(&delta_inputs)? {
        let d: HierarchyDelta = files::read_json(&p, "delta")?;
        parsed_deltas.push((p, d));
    }
    let mut parsed_corrections = Vec::new();
    for p in files::expand_json_inputs(corrections)? {
        let c: CorrectionSet = files::read_json(&p, "correction set")?;
        parsed_corrections.push((p, c));
    }
    let mut parsed_subgraphs = Vec::new();
    for p in files::expand_json_inputs(subgraphs)? {
        let s = files::load_snapshot(&p)?;
        parsed_subgraphs.push((p, s.hierarchy));
    }

    let mut snapshot = files::load_snapshot(&cfg.paths.snapshot)?;
    let before = snapshot.hierarchy.clone();
    let mut counts = MergeCounts::default();
    for (p, d) in &parsed_deltas {
        match snapshot.apply_delta(d, cfg.timestamp()) {
            Ok(true) => {
                counts.applied += 1;
                println!("{}: applied {} edges", p.display(), d.edges_added.len());
            }
            Ok(false) => {
                counts.skipped += 1;
                println!("{}: already applied, skipped", p.display());
            }
            Err(e) => {
                counts.failed += 1;
                println!("{}: REJECTED {e}", p.display());
            }
        }
    }
    for (p, set) in &parsed_corrections {
        let report = snapshot.apply_corrections(set, cfg.timestamp());
        println!(
            "{}: {} correction(s) applied, {} failed",
            p.display(),
            report.applied(),
            report.failed()
        );
        for o in &report.outcomes {
            if let kgh_core::ingest::CorrectionStatus::Failed { reason } = &o.status {
                println!("  #{} {}: {reason}", o.index, o.node);
            }
        }
        counts.applied += report.applied();
        counts.failed += report.failed();
    }
    for (p, sub) in &parsed_subgraphs {
        let report = snapshot.merge_subgraph(sub, cfg.timestamp());
        println!(
            "{}: merged; {} unified, {} inserted, {} renamed, {} edges dropped",
            p.display(),
            report.unified.len(),
            report.inserted.len(),
            report.renamed.len(),
            report.dropped_edges.len()
        );
        for d in &report.dropped_edges {
            println!("  dropped {} -> {}: {}", d.parent, d.child, d.reason);
        }
        counts.applied += 1;
        counts.failed += report.dropped_edges.len();
    }

    let target = out.unwrap_or_else(|| cfg.paths.snapshot.clone());
    files::save_snapshot(&target, &snapshot)?;
    println!("{}", coverage_line("before", &before, &cfg.node_class));
    println!("{}", coverage_line("after", &snapshot.hierarchy, &cfg.node_class));
    println!("snapshot written to {}", target.display());

    match (counts.failed, counts.applied + counts.skipped) {
        (0, _) => Ok(counts),
        (f, 0) => Err(CliError::validation(format!("{f} input(s) rejected, nothing applied"))),
        (f, _) => Err(CliError::partial(format!("{f} input(s) rejected"))),
    }
}
