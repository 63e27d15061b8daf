//! Hierarchy generation for one L1 category: the batched one-shot strategy,
//! the level-by-level cyclical strategy, and the review and evaluation passes
//! run over a finished hierarchy.

mod cyclical;
mod one_shot;
mod review;

use std::collections::hash_map::Entry;
use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{normalize_label, GraphError, Hierarchy, NodeId, Provenance};
use crate::ingest::subgraph_fingerprint;
use crate::prompts::{json_list, Template, TemplateError, TemplateSet};
use crate::provider::parse::{hierarchy_to_json, ParseError};
use crate::provider::{
    complete, estimate_tokens, fits_budget, CompletionProvider, PromptRequest, ProviderError, TaskInput,
};

pub use cyclical::generate_cyclical;
pub use one_shot::generate_one_shot;
pub use review::{evaluate_subgraph, review_pass, FindingKind, ReviewFinding, Verdict};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    OneShot,
    Cyclical,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::OneShot => "one_shot",
            Strategy::Cyclical => "cyclical",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyOverride {
    #[default]
    Auto,
    OneShot,
    Cyclical,
}

/// Nodes the classifier assigned to one L1 category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub l1_category: NodeId,
    /// Generation order; duplicates are ignored.
    pub candidates: Vec<NodeId>,
}

impl CandidateSet {
    pub fn new(l1_category: NodeId, candidates: impl IntoIterator<Item = NodeId>) -> Self {
        let mut seen = HashSet::new();
        Self {
            l1_category,
            candidates: candidates.into_iter().filter(|c| seen.insert(c.clone())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeltaEdge {
    pub parent: NodeId,
    pub child: NodeId,
}

/// Proposed edge additions for one L1 category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyDelta {
    pub l1_root: NodeId,
    /// Fingerprint of the category subgraph the delta was generated against,
    /// candidates excluded.
    pub base_fingerprint: String,
    pub edges_added: Vec<DeltaEdge>,
    pub unplaced: BTreeSet<NodeId>,
    pub rejected_labels: Vec<String>,
    pub strategy_used: Strategy,
    /// Number of provider calls made.
    pub passes: usize,
}

impl HierarchyDelta {
    /// Content hash used to recognise a delta that was already applied.
    pub fn id(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("delta serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn placed(&self) -> BTreeSet<NodeId> {
        self.edges_added.iter().map(|e| e.child.clone()).collect()
    }

    /// Every candidate the delta accounts for: placed children and unplaced.
    pub fn candidates(&self) -> BTreeSet<NodeId> {
        let mut all = self.placed();
        all.extend(self.unplaced.iter().cloned());
        all
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyChoice {
    pub strategy: Strategy,
    pub reason: String,
    pub estimated_tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    /// Candidates per one-shot generation prompt.
    pub batch_size: usize,
    /// Within a one-shot batch, longer labels go first.
    pub sort_by_label_length: bool,
    /// Deepest level the cyclical strategy fills.
    pub max_depth: u32,
    pub repair_attempts: usize,
    pub max_output_tokens: usize,
    pub temperature: f32,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            batch_size: 100,
            sort_by_label_length: true,
            max_depth: 6,
            repair_attempts: 2,
            max_output_tokens: 8192,
            temperature: 0.0,
        }
    }
}

/// Working state shared by both strategies: the category subgraph with the
/// candidate nodes added, plus label lookups in both directions.
pub(crate) struct Workspace {
    pub graph: Hierarchy,
    pub root: NodeId,
    pub fingerprint: String,
    /// Candidates that can be addressed by label, in input order.
    pub placeable: Vec<NodeId>,
    pub candidates: BTreeSet<NodeId>,
    by_label: HashMap<String, NodeId>,
    rejected: Vec<String>,
    rejected_seen: HashSet<String>,
    pub passes: usize,
}

impl Workspace {
    pub fn new(existing: &Hierarchy, set: &CandidateSet) -> Result<Self, GenerateError> {
        let root = set.l1_category.clone();
        if !existing.is_root(&root) {
            return Err(GenerateError::Precondition(format!("{root} is not an L1 root")));
        }
        let mut graph = existing.subgraph(&root)?;
        let mut by_label = HashMap::new();
        for n in graph.nodes() {
            by_label
                .entry(n.normalized_label().to_string())
                .or_insert_with(|| n.id().clone());
        }
        let mut placeable = Vec::new();
        let mut candidates = BTreeSet::new();
        for c in &set.candidates {
            let node = existing.node(c).ok_or_else(|| GraphError::UnknownNode(c.clone()))?;
            if graph.contains(c) {
                return Err(GenerateError::Precondition(format!(
                    "candidate {c} is already in the {root} hierarchy"
                )));
            }
            graph.add_node(node.clone())?;
            candidates.insert(c.clone());
            let key = node.normalized_label().to_string();
            match by_label.entry(key) {
                Entry::Occupied(_) => log::warn!("candidate {c} shares its label with another node; left unplaced"),
                Entry::Vacant(v) => {
                    v.insert(c.clone());
                    placeable.push(c.clone());
                }
            }
        }
        let fingerprint = subgraph_fingerprint(existing, &root, &candidates)?;
        Ok(Self {
            graph,
            root,
            fingerprint,
            placeable,
            candidates,
            by_label,
            rejected: Vec::new(),
            rejected_seen: HashSet::new(),
            passes: 0,
        })
    }

    pub fn label<'a>(&'a self, id: &'a NodeId) -> &'a str {
        self.graph.node(id).map(|n| n.label()).unwrap_or(id.as_str())
    }

    pub fn labels(&self, ids: &[NodeId]) -> Vec<String> {
        ids.iter().map(|id| self.label(id).to_string()).collect()
    }

    pub fn id_of(&self, label: &str) -> Option<&NodeId> {
        self.by_label.get(&normalize_label(label))
    }

    /// Labels the model may refer to.
    pub fn vocabulary(&self) -> BTreeSet<String> {
        self.by_label.values().map(|id| self.label(id).to_string()).collect()
    }

    pub fn reject(&mut self, labels: impl IntoIterator<Item = String>) {
        for l in labels {
            if self.rejected_seen.insert(l.clone()) {
                self.rejected.push(l);
            }
        }
    }

    /// Adds a generated edge, skipping anything the hierarchy refuses.
    pub fn try_add(&mut self, parent: &NodeId, child: &NodeId) -> bool {
        match self.graph.add_edge(parent, child, Provenance::Generated) {
            Ok(added) => added,
            Err(e) => {
                log::debug!("dropping generated edge {parent} -> {child}: {e}");
                false
            }
        }
    }

    /// All edges as label pairs, for prompts.
    pub fn label_edges(&self) -> Vec<(String, String)> {
        self.graph
            .edges()
            .map(|e| (self.label(&e.parent).to_string(), self.label(&e.child).to_string()))
            .collect()
    }

    pub fn rendered_hierarchy(&self) -> String {
        hierarchy_to_json(&[self.label(&self.root).to_string()], &self.label_edges()).to_string()
    }

    /// Sends `request`, re-prompting with the parse error up to
    /// `repair_attempts` times. `None` means no usable answer was obtained.
    pub fn call<P, T>(
        &mut self,
        provider: &P,
        mut request: PromptRequest,
        repair_attempts: usize,
        parse: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Result<Option<T>, GenerateError>
    where
        P: CompletionProvider + ?Sized,
    {
        for _ in 0..=repair_attempts {
            self.passes += 1;
            let problem = match complete(provider, &request) {
                Ok(resp) => match parse(resp.text()) {
                    Ok(v) => return Ok(Some(v)),
                    Err(e) => e.to_string(),
                },
                Err(ProviderError::Truncated { .. }) => "the answer was cut off".to_string(),
                Err(e) => return Err(e.into()),
            };
            log::debug!("unusable generation answer: {problem}");
            request = request.with_repair_note(&problem);
        }
        Ok(None)
    }

    pub fn finish(self, strategy: Strategy) -> HierarchyDelta {
        let mut edges_added: Vec<DeltaEdge> = self
            .graph
            .edges()
            .filter(|e| e.provenance == Provenance::Generated && self.candidates.contains(&e.child))
            .map(|e| DeltaEdge {
                parent: e.parent,
                child: e.child,
            })
            .collect();
        edges_added.sort();
        let placed: BTreeSet<&NodeId> = edges_added.iter().map(|e| &e.child).collect();
        let unplaced = self
            .candidates
            .iter()
            .filter(|c| !placed.contains(c))
            .cloned()
            .collect();
        HierarchyDelta {
            l1_root: self.root,
            base_fingerprint: self.fingerprint,
            edges_added,
            unplaced,
            rejected_labels: self.rejected,
            strategy_used: strategy,
            passes: self.passes,
        }
    }
}

/// Up to ten existing placements rendered as `parent -> child` lines.
pub(crate) fn example_lines(ws: &Workspace) -> String {
    let lines: Vec<String> = ws
        .label_edges()
        .into_iter()
        .take(10)
        .map(|(p, c)| format!("{p} -> {c}"))
        .collect();
    if lines.is_empty() {
        "(none)".to_string()
    } else {
        lines.join("\n")
    }
}

pub(crate) fn generate_request(
    ws: &Workspace,
    batch: &[NodeId],
    correction: bool,
    templates: &TemplateSet,
    options: &GenerateOptions,
) -> Result<PromptRequest, GenerateError> {
    let labels = ws.labels(batch);
    let existing = ws.rendered_hierarchy();
    let candidates = json_list(&labels);
    let (system, payload) = if correction {
        (
            templates.text(Template::CorrectSystem),
            templates.render(
                Template::Correct,
                &[("existing_hierarchy", &existing), ("candidates", &candidates)],
            )?,
        )
    } else {
        (
            templates.text(Template::GenerateSystem),
            templates.render(
                Template::Generate,
                &[
                    ("examples", &example_lines(ws)),
                    ("existing_hierarchy", &existing),
                    ("candidates", &candidates),
                ],
            )?,
        )
    };
    let mut request = PromptRequest::new(
        system,
        payload,
        TaskInput::Generate {
            root: ws.label(&ws.root).to_string(),
            existing: ws.label_edges(),
            candidates: labels,
            correction,
        },
    );
    request.max_output_tokens = options.max_output_tokens;
    request.temperature = options.temperature;
    Ok(request)
}

/// One-shot when the full generation prompt for every candidate, plus the
/// reserved output, fits the provider's budget; cyclical otherwise.
pub fn select_strategy(
    existing: &Hierarchy,
    candidates: &CandidateSet,
    context_budget: usize,
    templates: &TemplateSet,
    options: &GenerateOptions,
) -> Result<StrategyChoice, GenerateError> {
    if candidates.is_empty() {
        return Ok(StrategyChoice {
            strategy: Strategy::OneShot,
            reason: "no candidates; nothing to generate".into(),
            estimated_tokens: 0,
        });
    }
    let ws = Workspace::new(existing, candidates)?;
    let request = generate_request(&ws, &ws.placeable, false, templates, options)?;
    let estimated = estimate_tokens(&request.rendered_text());
    Ok(choose(estimated, options.max_output_tokens, context_budget))
}

fn choose(estimated: usize, max_output_tokens: usize, budget: usize) -> StrategyChoice {
    if fits_budget(estimated, max_output_tokens, budget) {
        StrategyChoice {
            strategy: Strategy::OneShot,
            reason: format!(
                "full rendering of {estimated} tokens plus {max_output_tokens} reserved fits the {budget}-token budget"
            ),
            estimated_tokens: estimated,
        }
    } else {
        StrategyChoice {
            strategy: Strategy::Cyclical,
            reason: format!(
                "full rendering of {estimated} tokens plus {max_output_tokens} reserved exceeds the {budget}-token budget"
            ),
            estimated_tokens: estimated,
        }
    }
}

/// Picks a strategy (or honours `override_with`) and runs it. Forcing
/// one-shot on a rendering that does not fit fails with `ContextOverflow`
/// before any call is made.
pub fn generate<P: CompletionProvider + ?Sized>(
    existing: &Hierarchy,
    candidates: &CandidateSet,
    provider: &P,
    templates: &TemplateSet,
    options: &GenerateOptions,
    override_with: StrategyOverride,
) -> Result<(StrategyChoice, HierarchyDelta), GenerateError> {
    let choice = select_strategy(existing, candidates, provider.context_budget(), templates, options)?;
    let strategy = match override_with {
        StrategyOverride::Auto => choice.strategy,
        StrategyOverride::Cyclical => Strategy::Cyclical,
        StrategyOverride::OneShot => {
            if choice.strategy == Strategy::Cyclical {
                return Err(ProviderError::ContextOverflow {
                    estimated: choice.estimated_tokens,
                    reserved: options.max_output_tokens,
                    budget: provider.context_budget(),
                }
                .into());
            }
            Strategy::OneShot
        }
    };
    let delta = match strategy {
        Strategy::OneShot => generate_one_shot(existing, candidates, provider, templates, options)?,
        Strategy::Cyclical => generate_cyclical(existing, candidates, provider, templates, options)?,
    };
    Ok((choice, delta))
}
