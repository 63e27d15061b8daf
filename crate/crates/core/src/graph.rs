//! Knowledge-graph data model: typed nodes, multi-parent "narrower than" edges
//! and the L1-rooted hierarchy built on top of them.
//!
//! The edge set is kept acyclic at all times by [`Hierarchy::add_edge`]. The
//! only way to obtain a graph that violates the hierarchy invariants is
//! [`Hierarchy::from_parts_unchecked`], which exists so that loaded or
//! hand-built graphs can be checked with [`Hierarchy::validate`].

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stable, opaque node identifier. Equality is exact byte equality.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Result<Self, GraphError> {
        let id = id.into();
        if id.is_empty() {
            return Err(GraphError::EmptyId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    /// Panics on an empty string; use [`NodeId::new`] for untrusted input.
    fn from(s: &str) -> Self {
        NodeId::new(s).expect("node id must be non-empty")
    }
}

/// Lowercase, trimmed, internal whitespace collapsed to single spaces.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "NodeRecord", into = "NodeRecord")]
pub struct Node {
    id: NodeId,
    label: String,
    node_class: String,
    attributes: BTreeMap<String, String>,
    normalized_label: String,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: NodeId,
    label: String,
    #[serde(rename = "class")]
    node_class: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    attributes: BTreeMap<String, String>,
}

impl TryFrom<NodeRecord> for Node {
    type Error = GraphError;

    fn try_from(r: NodeRecord) -> Result<Self, Self::Error> {
        Ok(Node::new(r.id, r.label, r.node_class)?.with_attributes(r.attributes))
    }
}

impl From<Node> for NodeRecord {
    fn from(n: Node) -> Self {
        NodeRecord {
            id: n.id,
            label: n.label,
            node_class: n.node_class,
            attributes: n.attributes,
        }
    }
}

impl Node {
    pub fn new(
        id: NodeId,
        label: impl Into<String>,
        node_class: impl Into<String>,
    ) -> Result<Self, GraphError> {
        let label = label.into();
        let normalized_label = normalize_label(&label);
        if normalized_label.is_empty() {
            return Err(GraphError::EmptyLabel(id));
        }
        Ok(Self {
            id,
            label,
            node_class: node_class.into(),
            attributes: BTreeMap::new(),
            normalized_label,
        })
    }

    pub fn with_attributes(mut self, attributes: BTreeMap<String, String>) -> Self {
        self.attributes = attributes;
        self
    }

    pub fn with_attribute(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }

    pub fn id(&self) -> &NodeId {
        &self.id
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn node_class(&self) -> &str {
        &self.node_class
    }

    pub fn attributes(&self) -> &BTreeMap<String, String> {
        &self.attributes
    }

    pub(crate) fn attributes_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.attributes
    }

    pub fn normalized_label(&self) -> &str {
        &self.normalized_label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Preexisting,
    Generated,
    HumanCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Relation {
    #[default]
    #[serde(rename = "narrower-than-parent")]
    NarrowerThanParent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub parent: NodeId,
    pub child: NodeId,
    #[serde(default)]
    pub relation: Relation,
    pub provenance: Provenance,
}

/// Hierarchy depth, 1 for L1 roots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Level(u32);

impl Level {
    pub const ROOT: Level = Level(1);

    pub fn new(value: u32) -> Option<Self> {
        (value >= 1).then_some(Level(value))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("node id must be non-empty")]
    EmptyId,
    #[error("node {0} has an empty label")]
    EmptyLabel(NodeId),
    #[error("node {0} already exists with a different payload")]
    DuplicateIdConflict(NodeId),
    #[error("node class {class:?} of {id} is not registered")]
    UnregisteredClass { id: NodeId, class: String },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("self-loop on {0}")]
    SelfLoop(NodeId),
    #[error("edge {parent} -> {child} would create a cycle")]
    CycleRejected { parent: NodeId, child: NodeId },
    #[error("{0} is an L1 root and cannot take a parent")]
    RootHasParent(NodeId),
}

/// A broken hierarchy invariant, as reported by [`Hierarchy::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "invariant", rename_all = "snake_case")]
pub enum Violation {
    Cycle { nodes: Vec<NodeId> },
    RootHasParent { root: NodeId, parents: Vec<NodeId> },
    UnknownRoot { root: NodeId },
    DanglingEdge { parent: NodeId, child: NodeId },
    SelfLoop { node: NodeId },
    UnregisteredClass { node: NodeId, class: String },
    DuplicateId { node: NodeId },
}

/// Multi-parent DAG of typed nodes rooted at an ordered set of L1 categories.
#[derive(Debug, Clone, Default)]
pub struct Hierarchy {
    classes: BTreeSet<String>,
    class_filter: Option<String>,
    nodes: Vec<Node>,
    index: HashMap<NodeId, usize>,
    children: Vec<BTreeMap<usize, Provenance>>,
    parents: Vec<BTreeSet<usize>>,
    roots: Vec<usize>,
    is_root: Vec<bool>,
}

impl Hierarchy {
    pub fn new() -> Self {
        Self::default()
    }

    /// Hierarchy organizing a single node class, with that class registered.
    pub fn for_class(class: impl Into<String>) -> Self {
        let class = class.into();
        let mut h = Self::new();
        h.classes.insert(class.clone());
        h.class_filter = Some(class);
        h
    }

    pub fn with_classes<I, S>(classes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut h = Self::new();
        for c in classes {
            h.register_class(c);
        }
        h
    }

    pub fn register_class(&mut self, class: impl Into<String>) {
        self.classes.insert(class.into());
    }

    pub fn classes(&self) -> &BTreeSet<String> {
        &self.classes
    }

    pub fn class_filter(&self) -> Option<&str> {
        self.class_filter.as_deref()
    }

    pub fn set_class_filter(&mut self, class: Option<String>) {
        if let Some(c) = &class {
            self.classes.insert(c.clone());
        }
        self.class_filter = class;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(BTreeMap::len).sum()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.index.contains_key(id)
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub(crate) fn node_mut(&mut self, id: &NodeId) -> Option<&mut Node> {
        self.index.get(id).map(|&i| &mut self.nodes[i])
    }

    /// Nodes in insertion order.
    pub fn nodes(&self) -> impl Iterator<Item = &Node> + '_ {
        self.nodes.iter()
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.children.iter().enumerate().flat_map(move |(p, kids)| {
            kids.iter().map(move |(&c, &provenance)| Edge {
                parent: self.nodes[p].id.clone(),
                child: self.nodes[c].id.clone(),
                relation: Relation::NarrowerThanParent,
                provenance,
            })
        })
    }

    pub fn has_edge(&self, parent: &NodeId, child: &NodeId) -> bool {
        match (self.index.get(parent), self.index.get(child)) {
            (Some(&p), Some(&c)) => self.children[p].contains_key(&c),
            _ => false,
        }
    }

    pub fn edge_provenance(&self, parent: &NodeId, child: &NodeId) -> Option<Provenance> {
        let (&p, &c) = (self.index.get(parent)?, self.index.get(child)?);
        self.children[p].get(&c).copied()
    }

    pub fn roots(&self) -> impl Iterator<Item = &NodeId> + '_ {
        self.roots.iter().map(move |&i| &self.nodes[i].id)
    }

    pub fn root_count(&self) -> usize {
        self.roots.len()
    }

    pub fn is_root(&self, id: &NodeId) -> bool {
        self.index.get(id).is_some_and(|&i| self.is_root[i])
    }

    pub fn parents(&self, id: &NodeId) -> Result<Vec<&NodeId>, GraphError> {
        let i = self.idx(id)?;
        Ok(self.parents[i].iter().map(|&p| &self.nodes[p].id).collect())
    }

    pub fn children(&self, id: &NodeId) -> Result<Vec<&NodeId>, GraphError> {
        let i = self.idx(id)?;
        Ok(self.children[i].keys().map(|&c| &self.nodes[c].id).collect())
    }

    /// Returns `true` if the node was inserted, `false` if an identical node
    /// was already present.
    pub fn add_node(&mut self, node: Node) -> Result<bool, GraphError> {
        if let Some(&i) = self.index.get(&node.id) {
            return if self.nodes[i] == node {
                Ok(false)
            } else {
                Err(GraphError::DuplicateIdConflict(node.id))
            };
        }
        if !self.classes.contains(&node.node_class) {
            return Err(GraphError::UnregisteredClass {
                id: node.id,
                class: node.node_class,
            });
        }
        self.push_node(node);
        Ok(true)
    }

    fn push_node(&mut self, node: Node) -> usize {
        let i = self.nodes.len();
        self.index.insert(node.id.clone(), i);
        self.nodes.push(node);
        self.children.push(BTreeMap::new());
        self.parents.push(BTreeSet::new());
        self.is_root.push(false);
        i
    }

    /// Marks an existing parentless node as an L1 root. Idempotent.
    pub fn add_root(&mut self, id: &NodeId) -> Result<(), GraphError> {
        let i = self.idx(id)?;
        if self.is_root[i] {
            return Ok(());
        }
        if !self.parents[i].is_empty() {
            return Err(GraphError::RootHasParent(id.clone()));
        }
        self.is_root[i] = true;
        self.roots.push(i);
        Ok(())
    }

    /// Returns `true` if the edge was inserted, `false` if it already existed.
    /// An existing edge keeps its original provenance.
    pub fn add_edge(
        &mut self,
        parent: &NodeId,
        child: &NodeId,
        provenance: Provenance,
    ) -> Result<bool, GraphError> {
        let p = self.idx(parent)?;
        let c = self.idx(child)?;
        if p == c {
            return Err(GraphError::SelfLoop(parent.clone()));
        }
        if self.children[p].contains_key(&c) {
            return Ok(false);
        }
        if self.is_root[c] {
            return Err(GraphError::RootHasParent(child.clone()));
        }
        if self.reaches(c, p) {
            return Err(GraphError::CycleRejected {
                parent: parent.clone(),
                child: child.clone(),
            });
        }
        self.children[p].insert(c, provenance);
        self.parents[c].insert(p);
        Ok(true)
    }

    pub fn remove_edge(&mut self, parent: &NodeId, child: &NodeId) -> bool {
        let (Some(&p), Some(&c)) = (self.index.get(parent), self.index.get(child)) else {
            return false;
        };
        self.parents[c].remove(&p);
        self.children[p].remove(&c).is_some()
    }

    /// Whether adding `parent -> child` would close a directed cycle.
    pub fn would_create_cycle(&self, parent: &NodeId, child: &NodeId) -> Result<bool, GraphError> {
        let p = self.idx(parent)?;
        let c = self.idx(child)?;
        Ok(p == c || self.reaches(c, p))
    }

    /// Whether `descendant` is reachable from `ancestor` via child edges (or is it).
    pub fn is_ancestor(&self, ancestor: &NodeId, descendant: &NodeId) -> Result<bool, GraphError> {
        let a = self.idx(ancestor)?;
        let d = self.idx(descendant)?;
        Ok(self.reaches(a, d))
    }

    fn reaches(&self, from: usize, to: usize) -> bool {
        if from == to {
            return true;
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(n) = stack.pop() {
            for &c in self.children[n].keys() {
                if c == to {
                    return true;
                }
                if !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        false
    }

    fn idx(&self, id: &NodeId) -> Result<usize, GraphError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownNode(id.clone()))
    }

    /// Minimal depth of every node (1 for roots), `None` when unreachable.
    /// Indexed in the same order as [`Hierarchy::nodes`].
    fn level_vec(&self) -> Vec<Option<u32>> {
        let mut level = vec![None; self.nodes.len()];
        let mut queue = VecDeque::new();
        for &r in &self.roots {
            level[r] = Some(1);
            queue.push_back(r);
        }
        while let Some(n) = queue.pop_front() {
            let next = level[n].unwrap() + 1;
            for &c in self.children[n].keys() {
                if level[c].is_none() {
                    level[c] = Some(next);
                    queue.push_back(c);
                }
            }
        }
        level
    }

    /// Level of a node: 1 for L1 roots, otherwise 1 + shortest distance from
    /// the nearest root. `None` when the node is not in the hierarchy.
    pub fn level_of(&self, id: &NodeId) -> Result<Option<Level>, GraphError> {
        let target = self.idx(id)?;
        Ok(self.level_vec()[target].map(Level))
    }

    /// Levels of every in-hierarchy node.
    pub fn levels(&self) -> BTreeMap<NodeId, Level> {
        self.level_vec()
            .into_iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|l| (self.nodes[i].id.clone(), Level(l))))
            .collect()
    }

    pub fn in_hierarchy(&self, id: &NodeId) -> Result<bool, GraphError> {
        Ok(self.level_of(id)?.is_some())
    }

    /// Ids of all nodes reachable from (or equal to) an L1 root.
    pub fn in_hierarchy_nodes(&self) -> BTreeSet<NodeId> {
        self.levels().into_keys().collect()
    }

    /// Distinct depths at which each in-hierarchy node occurs over all
    /// root-to-node paths, with depths at or beyond `cap` folded into `cap`.
    /// A node on paths of length 2 and 4 yields `{3, 5}` (uncapped).
    pub fn depth_occurrences(&self, cap: u32) -> BTreeMap<NodeId, BTreeSet<u32>> {
        let cap = cap.max(1);
        let order = self.topological_order();
        let mut depths: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); self.nodes.len()];
        for &r in &self.roots {
            depths[r].insert(1);
        }
        for &n in &order {
            if depths[n].is_empty() {
                continue;
            }
            let next: Vec<u32> = depths[n].iter().map(|d| (d + 1).min(cap)).collect();
            for &c in self.children[n].keys() {
                depths[c].extend(next.iter().copied());
            }
        }
        depths
            .into_iter()
            .enumerate()
            .filter(|(_, d)| !d.is_empty())
            .map(|(i, d)| (self.nodes[i].id.clone(), d))
            .collect()
    }

    /// Kahn order over all nodes; nodes on cycles are omitted.
    fn topological_order(&self) -> Vec<usize> {
        let mut indeg: Vec<usize> = self.parents.iter().map(BTreeSet::len).collect();
        let mut queue: VecDeque<usize> = (0..self.nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = queue.pop_front() {
            order.push(n);
            for &c in self.children[n].keys() {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        order
    }

    /// All nodes reachable via child edges, excluding the node itself.
    pub fn descendants(&self, id: &NodeId) -> Result<BTreeSet<NodeId>, GraphError> {
        let start = self.idx(id)?;
        Ok(self
            .descendant_indices(start)
            .into_iter()
            .map(|i| self.nodes[i].id.clone())
            .collect())
    }

    fn descendant_indices(&self, start: usize) -> Vec<usize> {
        let mut seen = vec![false; self.nodes.len()];
        seen[start] = true;
        let mut stack = vec![start];
        let mut out = Vec::new();
        while let Some(n) = stack.pop() {
            for &c in self.children[n].keys() {
                if !seen[c] {
                    seen[c] = true;
                    out.push(c);
                    stack.push(c);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Induced hierarchy over `root` and its descendants, with `root` as the
    /// sole L1 root.
    pub fn subgraph(&self, root: &NodeId) -> Result<Hierarchy, GraphError> {
        let r = self.idx(root)?;
        let mut members = self.descendant_indices(r);
        members.insert(0, r);
        let mut sub = Hierarchy {
            classes: self.classes.clone(),
            class_filter: self.class_filter.clone(),
            ..Hierarchy::default()
        };
        let mut remap = HashMap::with_capacity(members.len());
        for &i in &members {
            remap.insert(i, sub.push_node(self.nodes[i].clone()));
        }
        for &i in &members {
            let p = remap[&i];
            for (c, &prov) in &self.children[i] {
                let c = remap[c];
                sub.children[p].insert(c, prov);
                sub.parents[c].insert(p);
            }
        }
        sub.is_root[0] = true;
        sub.roots.push(0);
        Ok(sub)
    }

    /// Builds a graph from raw parts without enforcing acyclicity or the root
    /// invariant. Dangling edges and unknown roots are dropped; everything
    /// else is kept so [`Hierarchy::validate`] can report it.
    pub fn from_parts_unchecked(
        classes: BTreeSet<String>,
        class_filter: Option<String>,
        nodes: Vec<Node>,
        edges: Vec<Edge>,
        roots: Vec<NodeId>,
    ) -> Hierarchy {
        let mut h = Hierarchy {
            classes,
            class_filter,
            ..Hierarchy::default()
        };
        for node in nodes {
            if !h.index.contains_key(&node.id) {
                h.push_node(node);
            }
        }
        for e in edges {
            if let (Some(&p), Some(&c)) = (h.index.get(&e.parent), h.index.get(&e.child)) {
                h.children[p].insert(c, e.provenance);
                h.parents[c].insert(p);
            }
        }
        for r in roots {
            if let Some(&i) = h.index.get(&r) {
                if !h.is_root[i] {
                    h.is_root[i] = true;
                    h.roots.push(i);
                }
            }
        }
        h
    }

    /// Empty list iff every hierarchy invariant holds.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if !self.classes.contains(&node.node_class) {
                out.push(Violation::UnregisteredClass {
                    node: node.id.clone(),
                    class: node.node_class.clone(),
                });
            }
            if self.children[i].contains_key(&i) {
                out.push(Violation::SelfLoop {
                    node: node.id.clone(),
                });
            }
        }
        for &r in &self.roots {
            if !self.parents[r].is_empty() {
                out.push(Violation::RootHasParent {
                    root: self.nodes[r].id.clone(),
                    parents: self.parents[r]
                        .iter()
                        .map(|&p| self.nodes[p].id.clone())
                        .collect(),
                });
            }
        }
        let on_cycles = self.cycle_members();
        if !on_cycles.is_empty() {
            let mut nodes: Vec<NodeId> = on_cycles
                .into_iter()
                .map(|i| self.nodes[i].id.clone())
                .collect();
            nodes.sort();
            out.push(Violation::Cycle { nodes });
        }
        out
    }

    /// Nodes left after peeling sources forwards and sinks backwards: exactly
    /// the nodes on, or strictly between, directed cycles.
    fn cycle_members(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut alive = vec![true; n];
        let mut indeg: Vec<usize> = self.parents.iter().map(BTreeSet::len).collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        while let Some(x) = queue.pop_front() {
            alive[x] = false;
            for &c in self.children[x].keys() {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        let mut outdeg: Vec<usize> = (0..n)
            .map(|i| self.children[i].keys().filter(|&&c| alive[c]).count())
            .collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| alive[i] && outdeg[i] == 0).collect();
        while let Some(x) = queue.pop_front() {
            alive[x] = false;
            for &p in &self.parents[x] {
                if alive[p] {
                    outdeg[p] -= 1;
                    if outdeg[p] == 0 {
                        queue.push_back(p);
                    }
                }
            }
        }
        (0..n).filter(|&i| alive[i]).collect()
    }

    /// Nodes whose normalized label equals `label`'s normalized form.
    pub fn find_by_label(&self, label: &str) -> Vec<&NodeId> {
        let key = normalize_label(label);
        self.nodes
            .iter()
            .filter(|n| n.normalized_label == key)
            .map(|n| &n.id)
            .collect()
    }
}

impl PartialEq for Hierarchy {
    /// Structural equality: same classes, filter, node payloads, edge set with
    /// provenance and root order. Insertion order is irrelevant.
    fn eq(&self, other: &Self) -> bool {
        if self.classes != other.classes
            || self.class_filter != other.class_filter
            || self.nodes.len() != other.nodes.len()
            || self.edge_count() != other.edge_count()
        {
            return false;
        }
        let roots_a: Vec<_> = self.roots().collect();
        let roots_b: Vec<_> = other.roots().collect();
        if roots_a != roots_b {
            return false;
        }
        self.nodes.iter().all(|n| other.node(&n.id) == Some(n))
            && self
                .edges()
                .all(|e| other.edge_provenance(&e.parent, &e.child) == Some(e.provenance))
    }
}

impl Eq for Hierarchy {}
