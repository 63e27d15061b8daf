use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use super::{CandidateSet, GenerateError, GenerateOptions, HierarchyDelta, Strategy, Workspace};
use crate::graph::{Hierarchy, NodeId};
use crate::prompts::{json_list, Template, TemplateSet};
use crate::provider::parse::{parse_classification, parse_membership, OTHER};
use crate::provider::{estimate_tokens, fits_budget, CompletionProvider, PromptRequest, TaskInput};

/// Builds the category hierarchy one level at a time.
///
/// Each frame is a node `x` at level `i - 1` together with the pool of
/// candidates that may belong below it. A membership call asks, per pool
/// node, whether it is a direct child of `x` (keep) or belongs deeper
/// (defer); anything not affirmatively kept is deferred. A placement call
/// then routes each pool node into the level-`i` children of `x` whose
/// subtree it belongs to, and those children become the frames of the next
/// round. Frames with an empty pool make no calls. Generation stops at
/// `options.max_depth` or when no frame has a pool left; candidates never
/// kept anywhere are returned unplaced.
pub fn generate_cyclical<P: CompletionProvider + ?Sized>(
    existing: &Hierarchy,
    candidates: &CandidateSet,
    provider: &P,
    templates: &TemplateSet,
    options: &GenerateOptions,
) -> Result<HierarchyDelta, GenerateError> {
    if options.max_depth < 2 {
        return Err(GenerateError::Precondition("max_depth must be at least 2".into()));
    }
    let mut ws = Workspace::new(existing, candidates)?;
    let budget = provider.context_budget();
    let mut seen: HashSet<(NodeId, NodeId)> = HashSet::new();
    let mut round = Frames::default();
    if !ws.placeable.is_empty() {
        let root = ws.root.clone();
        for c in ws.placeable.clone() {
            round.push(&root, c);
        }
    }
    let mut level = 2;
    while level <= options.max_depth && !round.is_empty() {
        let mut next = Frames::default();
        for (frame, pool) in round.drain() {
            let pool: Vec<NodeId> = pool
                .into_iter()
                .filter(|c| {
                    c != &frame
                        && !ws.graph.is_ancestor(c, &frame).unwrap_or(true)
                        && seen.insert((frame.clone(), c.clone()))
                })
                .collect();
            if pool.is_empty() {
                continue;
            }
            let step = Step {
                frame: &frame,
                level,
                templates,
                options,
                budget,
            };
            step.membership(&mut ws, provider, &pool)?;
            if level == options.max_depth {
                continue;
            }
            let children: Vec<NodeId> = ws.graph.children(&frame)?.into_iter().cloned().collect();
            let routable: Vec<NodeId> = pool
                .into_iter()
                .filter(|c| children.iter().any(|ch| ch != c))
                .collect();
            if children.is_empty() || routable.is_empty() {
                continue;
            }
            for (child, c) in step.placement(&mut ws, provider, &children, &routable)? {
                next.push(&child, c);
            }
        }
        round = next;
        level += 1;
    }
    Ok(ws.finish(Strategy::Cyclical))
}

/// Pools keyed by frame node, in first-seen order.
#[derive(Default)]
struct Frames {
    order: Vec<NodeId>,
    pools: HashMap<NodeId, (Vec<NodeId>, HashSet<NodeId>)>,
}

impl Frames {
    fn push(&mut self, frame: &NodeId, candidate: NodeId) {
        let entry = self.pools.entry(frame.clone()).or_insert_with(|| {
            self.order.push(frame.clone());
            Default::default()
        });
        if entry.1.insert(candidate.clone()) {
            entry.0.push(candidate);
        }
    }

    fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn drain(&mut self) -> Vec<(NodeId, Vec<NodeId>)> {
        let order = std::mem::take(&mut self.order);
        let mut pools = std::mem::take(&mut self.pools);
        order
            .into_iter()
            .map(|f| {
                let pool = pools.remove(&f).map(|(v, _)| v).unwrap_or_default();
                (f, pool)
            })
            .collect()
    }
}

struct Step<'a> {
    frame: &'a NodeId,
    level: u32,
    templates: &'a TemplateSet,
    options: &'a GenerateOptions,
    budget: usize,
}

impl Step<'_> {
    fn fits(&self, request: &PromptRequest) -> bool {
        fits_budget(
            estimate_tokens(&request.rendered_text()),
            request.max_output_tokens,
            self.budget,
        )
    }

    /// Splits `pool` in halves until every request fits the budget.
    fn chunked<F>(&self, pool: &[NodeId], build: &F) -> Result<Vec<(Vec<NodeId>, PromptRequest)>, GenerateError>
    where
        F: Fn(&[NodeId]) -> Result<PromptRequest, GenerateError>,
    {
        let request = build(pool)?;
        if pool.len() <= 1 || self.fits(&request) {
            return Ok(vec![(pool.to_vec(), request)]);
        }
        let (a, b) = pool.split_at(pool.len() / 2);
        let mut out = self.chunked(a, build)?;
        out.extend(self.chunked(b, build)?);
        Ok(out)
    }

    fn membership<P: CompletionProvider + ?Sized>(
        &self,
        ws: &mut Workspace,
        provider: &P,
        pool: &[NodeId],
    ) -> Result<(), GenerateError> {
        let anchors = ws.labels(&ws.graph.children(self.frame)?.into_iter().cloned().collect::<Vec<_>>());
        let root = ws.label(&ws.root).to_string();
        let parent = ws.label(self.frame).to_string();
        let examples = if anchors.is_empty() {
            "(none)".to_string()
        } else {
            json_list(&anchors)
        };
        let build = |chunk: &[NodeId]| -> Result<PromptRequest, GenerateError> {
            let labels = ws.labels(chunk);
            let payload = self.templates.render(
                Template::Membership,
                &[
                    ("root", &root),
                    ("parent", &parent),
                    ("parent_level", &(self.level - 1).to_string()),
                    ("level", &self.level.to_string()),
                    ("examples", &examples),
                    ("candidates", &json_list(&labels)),
                ],
            )?;
            let mut r = PromptRequest::new(
                self.templates.text(Template::MembershipSystem),
                payload,
                TaskInput::LevelMembership {
                    root: root.clone(),
                    parent: parent.clone(),
                    level: self.level,
                    anchors: anchors.clone(),
                    candidates: labels,
                },
            );
            r.max_output_tokens = self.options.max_output_tokens;
            r.temperature = self.options.temperature;
            Ok(r)
        };
        for (chunk, request) in self.chunked(pool, &build)? {
            let vocab: BTreeSet<String> = ws.labels(&chunk).into_iter().collect();
            let decisions = ws
                .call(provider, request, self.options.repair_attempts, |raw| {
                    parse_membership(raw, &vocab)
                })?
                .unwrap_or_default();
            for c in &chunk {
                if decisions.get(ws.label(c)).copied().unwrap_or(false) {
                    ws.try_add(self.frame, c);
                }
            }
        }
        Ok(())
    }

    /// Returns `(subtree child, candidate)` routing pairs.
    fn placement<P: CompletionProvider + ?Sized>(
        &self,
        ws: &mut Workspace,
        provider: &P,
        children: &[NodeId],
        pool: &[NodeId],
    ) -> Result<Vec<(NodeId, NodeId)>, GenerateError> {
        let subtrees = ws.labels(children);
        let by_label: BTreeMap<&str, &NodeId> =
            subtrees.iter().map(String::as_str).zip(children.iter()).collect();
        let mut allowed: BTreeSet<String> = subtrees.iter().cloned().collect();
        allowed.insert(OTHER.to_string());
        let root = ws.label(&ws.root).to_string();
        let parent = ws.label(self.frame).to_string();
        let build = |chunk: &[NodeId]| -> Result<PromptRequest, GenerateError> {
            let labels = ws.labels(chunk);
            let payload = self.templates.render(
                Template::Placement,
                &[
                    ("root", &root),
                    ("parent", &parent),
                    ("level", &self.level.to_string()),
                    ("subtrees", &json_list(&subtrees)),
                    ("candidates", &json_list(&labels)),
                ],
            )?;
            let mut r = PromptRequest::new(
                self.templates.text(Template::PlacementSystem),
                payload,
                TaskInput::Placement {
                    root: root.clone(),
                    parent: parent.clone(),
                    level: self.level,
                    subtrees: subtrees.clone(),
                    candidates: labels,
                },
            );
            r.max_output_tokens = self.options.max_output_tokens;
            r.temperature = self.options.temperature;
            Ok(r)
        };
        let mut routes = Vec::new();
        for (chunk, request) in self.chunked(pool, &build)? {
            let answer = ws
                .call(provider, request, self.options.repair_attempts, |raw| {
                    parse_classification(raw, &allowed)
                })?
                .unwrap_or_default();
            let answer: HashMap<String, BTreeSet<String>> = answer
                .into_iter()
                .map(|(k, v)| (crate::graph::normalize_label(&k), v))
                .collect();
            for c in &chunk {
                let Some(targets) = answer.get(&crate::graph::normalize_label(ws.label(c))) else {
                    continue;
                };
                for t in targets {
                    if let Some(&child) = by_label.get(t.as_str()) {
                        if child != c {
                            routes.push((child.clone(), c.clone()));
                        }
                    }
                }
            }
        }
        Ok(routes)
    }
}
