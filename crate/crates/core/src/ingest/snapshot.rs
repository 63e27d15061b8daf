//! Snapshot file format: pretty-printed JSON with every object's keys sorted,
//! node and edge lists sorted by id, followed by a final line
//! `sha256:<hex>` holding the digest of the JSON bytes above it.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::{
    apply_corrections, apply_delta_with, merge_subgraph, CorrectionReport, CorrectionSet, IngestError, LogAction,
    LogEntry, MergeReport,
};
use crate::generator::HierarchyDelta;
use crate::graph::{Edge, Hierarchy, Node, NodeId};

pub const FORMAT_VERSION: u64 = 1;

/// Serializable form of a [`Hierarchy`]. Roots keep their order; nodes and
/// edges are sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyRecord {
    pub classes: Vec<String>,
    #[serde(default)]
    pub class_filter: Option<String>,
    pub roots: Vec<NodeId>,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl HierarchyRecord {
    pub fn from_hierarchy(h: &Hierarchy) -> Self {
        let mut nodes: Vec<Node> = h.nodes().cloned().collect();
        nodes.sort_by(|a, b| a.id().cmp(b.id()));
        let mut edges: Vec<Edge> = h.edges().collect();
        edges.sort_by(|a, b| (&a.parent, &a.child).cmp(&(&b.parent, &b.child)));
        Self {
            classes: h.classes().iter().cloned().collect(),
            class_filter: h.class_filter().map(str::to_string),
            roots: h.roots().cloned().collect(),
            nodes,
            edges,
        }
    }

    /// Rebuilds the hierarchy, rejecting records that reference missing
    /// nodes or break an invariant.
    pub fn to_hierarchy(&self) -> Result<Hierarchy, IngestError> {
        let ids: BTreeSet<&NodeId> = self.nodes.iter().map(Node::id).collect();
        if ids.len() != self.nodes.len() {
            return Err(IngestError::CorruptSnapshot("duplicate node ids".into()));
        }
        for e in &self.edges {
            if !ids.contains(&e.parent) || !ids.contains(&e.child) {
                return Err(IngestError::CorruptSnapshot(format!(
                    "edge {} -> {} references a missing node",
                    e.parent, e.child
                )));
            }
        }
        if let Some(r) = self.roots.iter().find(|r| !ids.contains(r)) {
            return Err(IngestError::CorruptSnapshot(format!("root {r} is not a node")));
        }
        let h = Hierarchy::from_parts_unchecked(
            self.classes.iter().cloned().collect(),
            self.class_filter.clone(),
            self.nodes.clone(),
            self.edges.clone(),
            self.roots.clone(),
        );
        let violations = h.validate();
        if !violations.is_empty() {
            return Err(IngestError::CorruptSnapshot(format!(
                "hierarchy invariants broken: {}",
                serde_json::to_string(&violations).unwrap_or_default()
            )));
        }
        Ok(h)
    }
}

/// A hierarchy plus the log of everything applied to it.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    pub hierarchy: Hierarchy,
    pub provenance_log: Vec<LogEntry>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotRecord {
    format_version: u64,
    hierarchy: HierarchyRecord,
    provenance_log: Vec<LogEntry>,
}

impl GraphSnapshot {
    pub fn new(hierarchy: Hierarchy) -> Self {
        Self {
            hierarchy,
            provenance_log: Vec::new(),
        }
    }

    fn record(&mut self, action: LogAction, timestamp: Option<String>) {
        let seq = self.provenance_log.last().map_or(0, |e| e.seq + 1);
        self.provenance_log.push(LogEntry {
            seq,
            timestamp,
            action,
        });
    }

    /// Whether a delta with this content hash is already in the log.
    pub fn has_delta(&self, id: &str) -> bool {
        self.provenance_log
            .iter()
            .any(|e| matches!(&e.action, LogAction::Delta { id: logged, .. } if logged == id))
    }

    /// Applies and logs `delta`. Returns `false` without touching anything
    /// when the same delta was applied before.
    pub fn apply_delta(&mut self, delta: &HierarchyDelta, timestamp: Option<String>) -> Result<bool, IngestError> {
        self.apply_delta_with(delta, timestamp, &|_| false)
    }

    pub fn apply_delta_with(
        &mut self,
        delta: &HierarchyDelta,
        timestamp: Option<String>,
        interrupt: &dyn Fn(usize) -> bool,
    ) -> Result<bool, IngestError> {
        let id = delta.id();
        if self.has_delta(&id) {
            return Ok(false);
        }
        self.hierarchy = apply_delta_with(&self.hierarchy, delta, interrupt)?;
        self.record(
            LogAction::Delta {
                id,
                delta: delta.clone(),
            },
            timestamp,
        );
        Ok(true)
    }

    pub fn apply_corrections(&mut self, set: &CorrectionSet, timestamp: Option<String>) -> CorrectionReport {
        let (next, report) = apply_corrections(&self.hierarchy, set);
        self.hierarchy = next;
        self.record(LogAction::Corrections { set: set.clone() }, timestamp);
        report
    }

    pub fn merge_subgraph(&mut self, subgraph: &Hierarchy, timestamp: Option<String>) -> MergeReport {
        let (next, report) = merge_subgraph(&self.hierarchy, subgraph);
        self.hierarchy = next;
        self.record(
            LogAction::Merge {
                subgraph: HierarchyRecord::from_hierarchy(subgraph),
            },
            timestamp,
        );
        report
    }
}

/// Rebuilds every object with its keys in sorted order, whatever map
/// implementation serde_json was compiled with.
fn canonical(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k, canonical(v));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonical).collect()),
        other => other,
    }
}

pub fn save_snapshot(snapshot: &GraphSnapshot) -> Vec<u8> {
    let record = SnapshotRecord {
        format_version: FORMAT_VERSION,
        hierarchy: HierarchyRecord::from_hierarchy(&snapshot.hierarchy),
        provenance_log: snapshot.provenance_log.clone(),
    };
    let value = canonical(serde_json::to_value(&record).expect("snapshot serializes"));
    let mut body = serde_json::to_vec_pretty(&value).expect("value serializes");
    body.push(b'\n');
    let digest = hex::encode(Sha256::digest(&body));
    body.extend_from_slice(format!("sha256:{digest}\n").as_bytes());
    body
}

pub fn load_snapshot(bytes: &[u8]) -> Result<GraphSnapshot, IngestError> {
    let text = std::str::from_utf8(bytes).map_err(|_| IngestError::CorruptSnapshot("not UTF-8".into()))?;
    let trimmed = text.strip_suffix('\n').unwrap_or(text);
    let split = trimmed
        .rfind('\n')
        .ok_or_else(|| IngestError::CorruptSnapshot("missing checksum line".into()))?;
    let (body, footer) = (&trimmed[..=split], &trimmed[split + 1..]);
    let expected = footer
        .strip_prefix("sha256:")
        .ok_or_else(|| IngestError::CorruptSnapshot("missing checksum line".into()))?;
    let actual = hex::encode(Sha256::digest(body.as_bytes()));
    if actual != expected {
        return Err(IngestError::CorruptSnapshot("checksum mismatch".into()));
    }
    let value: Value =
        serde_json::from_str(body).map_err(|e| IngestError::CorruptSnapshot(format!("malformed JSON: {e}")))?;
    let version = value
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| IngestError::CorruptSnapshot("missing format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(IngestError::UnsupportedVersion(version));
    }
    let record: SnapshotRecord =
        serde_json::from_value(value).map_err(|e| IngestError::CorruptSnapshot(e.to_string()))?;
    Ok(GraphSnapshot {
        hierarchy: record.hierarchy.to_hierarchy()?,
        provenance_log: record.provenance_log,
    })
}

/// Writes through a temporary file and renames it into place, so readers
/// and crashes never observe a partial snapshot.
pub fn write_snapshot_file(path: &Path, snapshot: &GraphSnapshot) -> Result<(), IngestError> {
    let io = |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    let bytes = save_snapshot(snapshot);
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn read_snapshot_file(path: &Path) -> Result<GraphSnapshot, IngestError> {
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_snapshot(&bytes)
}
