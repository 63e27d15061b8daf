use std::collections::BTreeSet;

use super::{generate_request, CandidateSet, GenerateError, GenerateOptions, HierarchyDelta, Strategy, Workspace};
use crate::graph::{Hierarchy, NodeId};
use crate::prompts::TemplateSet;
use crate::provider::parse::{parse_hierarchy, ParsedHierarchy};
use crate::provider::CompletionProvider;

/// Places candidates by asking for the full updated hierarchy.
///
/// Candidates are sent in batches of `options.batch_size`, each against the
/// hierarchy as updated by the previous batches. With more than one batch a
/// single correction pass over all candidates follows; its placement replaces
/// the batch placement for every candidate it mentions. Only edges whose
/// child is a candidate are taken from any answer; hallucinated labels are
/// reported and cycle-inducing edges dropped.
pub fn generate_one_shot<P: CompletionProvider + ?Sized>(
    existing: &Hierarchy,
    candidates: &CandidateSet,
    provider: &P,
    templates: &TemplateSet,
    options: &GenerateOptions,
) -> Result<HierarchyDelta, GenerateError> {
    if options.batch_size == 0 {
        return Err(GenerateError::Precondition("batch size must be positive".into()));
    }
    let mut ws = Workspace::new(existing, candidates)?;
    let order = ws.placeable.clone();
    let batches: Vec<Vec<NodeId>> = order
        .chunks(options.batch_size)
        .map(|chunk| {
            let mut batch = chunk.to_vec();
            if options.sort_by_label_length {
                batch.sort_by_key(|id| std::cmp::Reverse(ws.label(id).chars().count()));
            }
            batch
        })
        .collect();

    for batch in &batches {
        let request = generate_request(&ws, batch, false, templates, options)?;
        let vocab = ws.vocabulary();
        if let Some(parsed) = ws.call(provider, request, options.repair_attempts, |raw| {
            parse_hierarchy(raw, &vocab)
        })? {
            let members: BTreeSet<NodeId> = batch.iter().cloned().collect();
            absorb(&mut ws, parsed, &members, false);
        }
    }

    if batches.len() > 1 {
        let request = generate_request(&ws, &order, true, templates, options)?;
        let vocab = ws.vocabulary();
        if let Some(parsed) = ws.call(provider, request, options.repair_attempts, |raw| {
            parse_hierarchy(raw, &vocab)
        })? {
            let members: BTreeSet<NodeId> = order.iter().cloned().collect();
            absorb(&mut ws, parsed, &members, true);
        }
    }
    Ok(ws.finish(Strategy::OneShot))
}

/// Applies the candidate edges of one answer. In correction mode, every
/// candidate that appears as a child loses its earlier generated parents
/// first.
fn absorb(ws: &mut Workspace, parsed: ParsedHierarchy, members: &BTreeSet<NodeId>, correction: bool) {
    ws.reject(parsed.rejected);
    let edges: Vec<(NodeId, NodeId)> = parsed
        .edges
        .iter()
        .filter_map(|(p, c)| Some((ws.id_of(p)?.clone(), ws.id_of(c)?.clone())))
        .filter(|(_, c)| members.contains(c))
        .collect();
    if correction {
        let mentioned: BTreeSet<&NodeId> = edges.iter().map(|(_, c)| c).collect();
        for c in mentioned {
            let parents: Vec<NodeId> = ws
                .graph
                .parents(c)
                .map(|ps| ps.into_iter().cloned().collect())
                .unwrap_or_default();
            for p in parents {
                ws.graph.remove_edge(&p, c);
            }
        }
    }
    for (p, c) in &edges {
        ws.try_add(p, c);
    }
}
