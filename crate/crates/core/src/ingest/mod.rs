//! Applying generated deltas, human corrections and new-domain subgraphs to
//! the knowledge graph, with an append-only provenance log and checksummed
//! snapshots.

mod import;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generator::HierarchyDelta;
use crate::graph::{GraphError, Hierarchy, NodeId, Provenance};

pub use import::{import_nodes_csv, ImportError};
pub use snapshot::{
    load_snapshot, read_snapshot_file, save_snapshot, write_snapshot_file, GraphSnapshot, HierarchyRecord,
    FORMAT_VERSION,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("delta for {l1_root} is stale: generated against {expected}, graph is now {found}")]
    StaleDelta {
        l1_root: NodeId,
        expected: String,
        found: String,
    },
    #[error("delta application interrupted before edge {at}")]
    Interrupted { at: usize },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("unsupported snapshot format version {0}")]
    UnsupportedVersion(u64),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Hash of an L1 category subgraph with `exclude` removed: node ids and
/// `(parent, child)` pairs, sorted. Excluding a delta's own candidates makes
/// the fingerprint insensitive to that delta having been applied.
pub fn subgraph_fingerprint(
    graph: &Hierarchy,
    l1_root: &NodeId,
    exclude: &BTreeSet<NodeId>,
) -> Result<String, GraphError> {
    let sub = graph.subgraph(l1_root)?;
    let mut nodes: Vec<&str> = sub
        .nodes()
        .map(|n| n.id().as_str())
        .filter(|id| !exclude.iter().any(|e| e.as_str() == *id))
        .collect();
    nodes.sort_unstable();
    let mut edges: Vec<(NodeId, NodeId)> = sub
        .edges()
        .filter(|e| !exclude.contains(&e.child) && !exclude.contains(&e.parent))
        .map(|e| (e.parent, e.child))
        .collect();
    edges.sort_unstable();
    let mut h = Sha256::new();
    for n in nodes {
        h.update(n.as_bytes());
        h.update([0]);
    }
    h.update([1]);
    for (p, c) in &edges {
        h.update(p.as_str().as_bytes());
        h.update([0]);
        h.update(c.as_str().as_bytes());
        h.update([0]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Adds every edge of `delta` or none. The category subgraph must still
/// match the fingerprint the delta was generated against.
pub fn apply_delta(graph: &Hierarchy, delta: &HierarchyDelta) -> Result<Hierarchy, IngestError> {
    apply_delta_with(graph, delta, &|_| false)
}

/// [`apply_delta`] with a fault hook consulted before each edge; returning
/// `true` aborts the application at that edge.
pub fn apply_delta_with(
    graph: &Hierarchy,
    delta: &HierarchyDelta,
    interrupt: &dyn Fn(usize) -> bool,
) -> Result<Hierarchy, IngestError> {
    if !graph.is_root(&delta.l1_root) {
        return Err(GraphError::UnknownNode(delta.l1_root.clone()).into());
    }
    let found = subgraph_fingerprint(graph, &delta.l1_root, &delta.candidates())?;
    if found != delta.base_fingerprint {
        return Err(IngestError::StaleDelta {
            l1_root: delta.l1_root.clone(),
            expected: delta.base_fingerprint.clone(),
            found,
        });
    }
    let mut next = graph.clone();
    for (i, e) in delta.edges_added.iter().enumerate() {
        if interrupt(i) {
            return Err(IngestError::Interrupted { at: i });
        }
        next.add_edge(&e.parent, &e.child, Provenance::Generated)?;
    }
    Ok(next)
}

/// One reviewer decision: detach `node` from `remove_parents` and attach it
/// under `add_parents`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub node: NodeId,
    #[serde(default)]
    pub remove_parents: BTreeSet<NodeId>,
    #[serde(default)]
    pub add_parents: BTreeSet<NodeId>,
    #[serde(default)]
    pub reviewer: String,
    #[serde(default)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionSet {
    pub corrections: Vec<Correction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CorrectionStatus {
    Applied,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionOutcome {
    pub index: usize,
    pub node: NodeId,
    #[serde(flatten)]
    pub status: CorrectionStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub outcomes: Vec<CorrectionOutcome>,
}

impl CorrectionReport {
    pub fn applied(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.status == CorrectionStatus::Applied)
            .count()
    }

    pub fn failed(&self) -> usize {
        self.outcomes.len() - self.applied()
    }
}

fn apply_one(graph: &mut Hierarchy, c: &Correction) -> Result<(), String> {
    if let Some(both) = c.add_parents.intersection(&c.remove_parents).next() {
        return Err(format!("{both} is both added and removed"));
    }
    for id in std::iter::once(&c.node)
        .chain(&c.add_parents)
        .chain(&c.remove_parents)
    {
        if !graph.contains(id) {
            return Err(GraphError::UnknownNode(id.clone()).to_string());
        }
    }
    // undo log of (parent, provenance) removed and parents added
    let mut removed: Vec<(NodeId, Provenance)> = Vec::new();
    let mut added: Vec<NodeId> = Vec::new();
    let mut result = Ok(());
    for p in &c.remove_parents {
        if let Some(prov) = graph.edge_provenance(p, &c.node) {
            graph.remove_edge(p, &c.node);
            removed.push((p.clone(), prov));
        }
    }
    for p in &c.add_parents {
        if let Some(prov) = graph.edge_provenance(p, &c.node) {
            graph.remove_edge(p, &c.node);
            removed.push((p.clone(), prov));
        }
        match graph.add_edge(p, &c.node, Provenance::HumanCorrected) {
            Ok(_) => added.push(p.clone()),
            Err(e) => {
                result = Err(e.to_string());
                break;
            }
        }
    }
    if result.is_err() {
        for p in added {
            graph.remove_edge(&p, &c.node);
        }
        for (p, prov) in removed {
            graph
                .add_edge(&p, &c.node, prov)
                .expect("restoring an edge that was just removed");
        }
    }
    result
}

/// Applies each correction atomically; failures are reported and skipped.
pub fn apply_corrections(graph: &Hierarchy, set: &CorrectionSet) -> (Hierarchy, CorrectionReport) {
    let mut next = graph.clone();
    let mut report = CorrectionReport::default();
    for (index, c) in set.corrections.iter().enumerate() {
        let status = match apply_one(&mut next, c) {
            Ok(()) => CorrectionStatus::Applied,
            Err(reason) => CorrectionStatus::Failed { reason },
        };
        report.outcomes.push(CorrectionOutcome {
            index,
            node: c.node.clone(),
            status,
        });
    }
    (next, report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedEdge {
    pub parent: NodeId,
    pub child: NodeId,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeReport {
    /// `(subgraph id, knowledge-graph id)` pairs matched on class and label.
    pub unified: Vec<(NodeId, NodeId)>,
    pub inserted: Vec<NodeId>,
    /// Subgraph ids that clashed with an unrelated node, with their new ids.
    pub renamed: Vec<(NodeId, NodeId)>,
    pub dropped_edges: Vec<DroppedEdge>,
}

fn fresh_id(graph: &Hierarchy, base: &NodeId) -> NodeId {
    (1..)
        .map(|n| NodeId::new(format!("{base}~{n}")).expect("non-empty"))
        .find(|id| !graph.contains(id))
        .expect("unbounded search")
}

/// Merges a new-domain subgraph into the knowledge graph. Nodes are matched
/// on `(class, normalized label)`; the KG node's payload wins and only
/// attributes missing from it are copied over. Edges that would close a
/// cycle or give a root a parent are dropped and reported.
pub fn merge_subgraph(kg: &Hierarchy, domain: &Hierarchy) -> (Hierarchy, MergeReport) {
    let mut next = kg.clone();
    let mut report = MergeReport::default();
    for class in domain.classes() {
        next.register_class(class.clone());
    }
    let mut by_key: HashMap<(String, String), NodeId> = HashMap::new();
    for n in next.nodes() {
        by_key
            .entry((n.node_class().to_string(), n.normalized_label().to_string()))
            .or_insert_with(|| n.id().clone());
    }
    let mut mapped: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    for n in domain.nodes() {
        let key = (n.node_class().to_string(), n.normalized_label().to_string());
        if let Some(target) = by_key.get(&key) {
            let existing = next.node_mut(target).expect("indexed node exists");
            for (k, v) in n.attributes() {
                existing.attributes_mut().entry(k.clone()).or_insert_with(|| v.clone());
            }
            report.unified.push((n.id().clone(), target.clone()));
            mapped.insert(n.id().clone(), target.clone());
            continue;
        }
        let id = if next.contains(n.id()) {
            let id = fresh_id(&next, n.id());
            report.renamed.push((n.id().clone(), id.clone()));
            id
        } else {
            n.id().clone()
        };
        let node = crate::graph::Node::new(id.clone(), n.label(), n.node_class())
            .expect("copied from a valid node")
            .with_attributes(n.attributes().clone());
        next.add_node(node).expect("fresh id and registered class");
        by_key.insert(key, id.clone());
        report.inserted.push(id.clone());
        mapped.insert(n.id().clone(), id);
    }
    for r in domain.roots() {
        let id = &mapped[r];
        if next.parents(id).map(|p| p.is_empty()).unwrap_or(false) {
            next.add_root(id).expect("parentless node");
        }
    }
    for e in domain.edges() {
        let (p, c) = (&mapped[&e.parent], &mapped[&e.child]);
        if let Err(err) = next.add_edge(p, c, e.provenance) {
            report.dropped_edges.push(DroppedEdge {
                parent: p.clone(),
                child: c.clone(),
                reason: err.to_string(),
            });
        }
    }
    (next, report)
}

/// What a provenance entry recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogAction {
    Delta { id: String, delta: HierarchyDelta },
    Corrections { set: CorrectionSet },
    Merge { subgraph: HierarchyRecord },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(flatten)]
    pub action: LogAction,
}

/// Re-applies logged actions on top of `base`.
pub fn replay(base: &Hierarchy, log: &[LogEntry]) -> Result<Hierarchy, IngestError> {
    let mut graph = base.clone();
    for entry in log {
        graph = match &entry.action {
            LogAction::Delta { delta, .. } => apply_delta(&graph, delta)?,
            LogAction::Corrections { set } => apply_corrections(&graph, set).0,
            LogAction::Merge { subgraph } => merge_subgraph(&graph, &subgraph.to_hierarchy()?).0,
        };
    }
    Ok(graph)
}
