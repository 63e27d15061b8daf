use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::GenerateError;
use crate::graph::{Hierarchy, NodeId, Provenance};
use crate::prompts::{Template, TemplateSet};
use crate::provider::parse::{hierarchy_to_json, parse_review, ParsedReview, RawFinding};
use crate::provider::{complete, CompletionProvider, PromptRequest, ProviderError, TaskInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    WrongParent,
    SiblingConfusion,
    LevelMisplacement,
}

impl FindingKind {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().replace([' ', '-'], "_").as_str() {
            "wrong_parent" => Some(Self::WrongParent),
            "sibling_confusion" => Some(Self::SiblingConfusion),
            "level_misplacement" => Some(Self::LevelMisplacement),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewFinding {
    pub kind: FindingKind,
    pub node: NodeId,
    pub current_parent: NodeId,
    pub suggested_parent: Option<NodeId>,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approved,
    Findings(Vec<ReviewFinding>),
}

impl Verdict {
    pub fn is_approved(&self) -> bool {
        matches!(self, Verdict::Approved)
    }
}

fn label_of(h: &Hierarchy, id: &NodeId) -> String {
    h.node(id).map(|n| n.label().to_string()).unwrap_or_else(|| id.to_string())
}

fn label_edges(h: &Hierarchy) -> Vec<(String, String)> {
    h.edges().map(|e| (label_of(h, &e.parent), label_of(h, &e.child))).collect()
}

fn first_id(h: &Hierarchy, label: &str) -> Option<NodeId> {
    h.find_by_label(label).into_iter().next().cloned()
}

/// Maps label-space findings onto node ids. Findings that name unknown
/// nodes, an edge that does not exist, or an unknown kind are dropped.
fn resolve(h: &Hierarchy, raw: Vec<RawFinding>) -> Vec<ReviewFinding> {
    let mut out: Vec<ReviewFinding> = Vec::new();
    for f in raw {
        let (Some(kind), Some(node), Some(current_parent)) = (
            FindingKind::parse(&f.kind),
            first_id(h, &f.node),
            first_id(h, &f.current_parent),
        ) else {
            log::warn!("dropping review finding on unknown node or kind: {:?}", f.node);
            continue;
        };
        if !h.has_edge(&current_parent, &node) {
            log::warn!("dropping review finding on a non-existent edge {current_parent} -> {node}");
            continue;
        }
        let suggested_parent = match f.suggested_parent.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(s) => match first_id(h, s) {
                Some(id) => Some(id),
                None => {
                    log::warn!("dropping review finding with unknown suggested parent {s:?}");
                    continue;
                }
            },
        };
        let finding = ReviewFinding {
            kind,
            node,
            current_parent,
            suggested_parent,
            rationale: f.rationale,
        };
        if !out.contains(&finding) {
            out.push(finding);
        }
    }
    out
}

/// Keeps findings whose suggested moves, applied in order, never close a
/// cycle or give a root a parent.
fn drop_cyclic_moves(h: &Hierarchy, findings: Vec<ReviewFinding>) -> Vec<ReviewFinding> {
    let mut work = h.clone();
    findings
        .into_iter()
        .filter(|f| {
            let Some(s) = &f.suggested_parent else {
                return true;
            };
            let had = work.remove_edge(&f.current_parent, &f.node);
            match work.add_edge(s, &f.node, Provenance::HumanCorrected) {
                Ok(_) => true,
                Err(e) => {
                    log::warn!("dropping review finding for {}: {e}", f.node);
                    if had {
                        work.add_edge(&f.current_parent, &f.node, Provenance::Generated)
                            .expect("restoring a removed edge");
                    }
                    false
                }
            }
        })
        .collect()
}

fn ask<P: CompletionProvider + ?Sized>(
    provider: &P,
    request: PromptRequest,
    repair_attempts: usize,
) -> Result<Option<ParsedReview>, GenerateError> {
    let mut request = request;
    for _ in 0..=repair_attempts {
        let problem = match complete(provider, &request) {
            Ok(resp) => match parse_review(resp.text()) {
                Ok(v) => return Ok(Some(v)),
                Err(e) => e.to_string(),
            },
            Err(ProviderError::Truncated { .. }) => "the answer was cut off".to_string(),
            Err(e) => return Err(e.into()),
        };
        request = request.with_repair_note(&problem);
    }
    Ok(None)
}

/// Asks the provider for flaws in each L1 category of `hierarchy`, one call
/// per root. An unusable answer yields no findings for that root.
pub fn review_pass<P: CompletionProvider + ?Sized>(
    hierarchy: &Hierarchy,
    provider: &P,
    templates: &TemplateSet,
    repair_attempts: usize,
) -> Result<Vec<ReviewFinding>, GenerateError> {
    let violations = hierarchy.validate();
    if !violations.is_empty() {
        return Err(GenerateError::Precondition(format!(
            "hierarchy is invalid: {violations:?}"
        )));
    }
    let mut findings = Vec::new();
    for root in hierarchy.roots() {
        let sub = hierarchy.subgraph(root)?;
        let edges = label_edges(&sub);
        if edges.is_empty() {
            continue;
        }
        let root_label = label_of(&sub, root);
        let rendered = hierarchy_to_json(std::slice::from_ref(&root_label), &edges).to_string();
        let request = PromptRequest::new(
            templates.text(Template::ReviewSystem),
            templates.render(Template::Review, &[("hierarchy", &rendered)])?,
            TaskInput::Review {
                roots: vec![root_label],
                edges,
            },
        );
        if let Some(parsed) = ask(provider, request, repair_attempts)? {
            findings.extend(resolve(hierarchy, parsed.findings));
        }
    }
    let mut seen = BTreeSet::new();
    findings.retain(|f| seen.insert((f.node.clone(), f.current_parent.clone(), f.suggested_parent.clone())));
    Ok(drop_cyclic_moves(hierarchy, findings))
}

/// Asks whether a single-category subgraph looks good. Approved only when
/// the provider affirms and reports no findings. A subgraph without edges
/// is approved without a call.
pub fn evaluate_subgraph<P: CompletionProvider + ?Sized>(
    subgraph: &Hierarchy,
    provider: &P,
    templates: &TemplateSet,
    repair_attempts: usize,
) -> Result<Verdict, GenerateError> {
    if subgraph.root_count() != 1 {
        return Err(GenerateError::Precondition(format!(
            "expected a single L1 root, found {}",
            subgraph.root_count()
        )));
    }
    let root = subgraph.roots().next().unwrap().clone();
    let edges = label_edges(subgraph);
    if edges.is_empty() {
        return Ok(Verdict::Approved);
    }
    let root_label = label_of(subgraph, &root);
    let rendered = hierarchy_to_json(std::slice::from_ref(&root_label), &edges).to_string();
    let request = PromptRequest::new(
        templates.text(Template::EvaluateSystem),
        templates.render(
            Template::Evaluate,
            &[("root", &root_label), ("hierarchy", &rendered)],
        )?,
        TaskInput::Evaluate {
            root: root_label,
            edges,
        },
    );
    let Some(parsed) = ask(provider, request, repair_attempts)? else {
        return Err(GenerateError::Provider(ProviderError::InvalidRequest(
            "evaluation answer could not be parsed".into(),
        )));
    };
    let findings = drop_cyclic_moves(subgraph, resolve(subgraph, parsed.findings));
    if parsed.approved.unwrap_or(findings.is_empty()) && findings.is_empty() {
        Ok(Verdict::Approved)
    } else {
        Ok(Verdict::Findings(findings))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Node;
    use crate::provider::{MockOracle, MockOracleConfig, ScriptedProvider};

    fn relationships(mom_dad_parent: &str) -> Hierarchy {
        let mut g = Hierarchy::for_class("intent");
        for (id, label) in [
            ("rel", "Relationships"),
            ("love", "love"),
            ("marriage", "marriage"),
            ("momdad", "mom dad"),
            ("romantic", "romantic message"),
            ("valentine", "valentine"),
        ] {
            g.add_node(Node::new(id.into(), label, "intent").unwrap()).unwrap();
        }
        g.add_root(&"rel".into()).unwrap();
        for (p, c) in [
            ("rel", "love"),
            ("rel", "marriage"),
            (mom_dad_parent, "momdad"),
            ("marriage", "romantic"),
            ("love", "valentine"),
        ] {
            g.add_edge(&p.into(), &c.into(), Provenance::Preexisting).unwrap();
        }
        g
    }

    #[test]
    fn mom_dad_under_love_is_flagged() {
        let mock = MockOracle::new(relationships("marriage"), MockOracleConfig::noiseless(0));
        let findings = review_pass(&relationships("love"), &mock, &TemplateSet::default(), 2).unwrap();
        assert_eq!(findings.len(), 1);
        let f = &findings[0];
        assert_eq!(f.kind, FindingKind::WrongParent);
        assert_eq!(f.node, NodeId::from("momdad"));
        assert_eq!(f.current_parent, NodeId::from("love"));
        assert_eq!(f.suggested_parent, Some(NodeId::from("marriage")));
    }

    #[test]
    fn correct_hierarchy_has_no_findings() {
        let mock = MockOracle::new(relationships("marriage"), MockOracleConfig::noiseless(0));
        assert!(review_pass(&relationships("marriage"), &mock, &TemplateSet::default(), 2)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn cycle_creating_suggestion_is_dropped() {
        let p = ScriptedProvider::new([r#"{"findings": [
            {"kind": "wrong_parent", "node": "love", "current_parent": "Relationships", "suggested_parent": "valentine", "rationale": "x"},
            {"kind": "wrong_parent", "node": "mom dad", "current_parent": "love", "suggested_parent": "marriage", "rationale": "y"},
            {"kind": "wrong_parent", "node": "ghost", "current_parent": "love", "suggested_parent": null, "rationale": "z"}
        ]}"#]);
        let findings = review_pass(&relationships("love"), &p, &TemplateSet::default(), 0).unwrap();
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].node, NodeId::from("momdad"));
    }

    #[test]
    fn evaluation_verdicts() {
        let mock = MockOracle::new(relationships("marriage"), MockOracleConfig::noiseless(0));
        let t = TemplateSet::default();
        assert!(evaluate_subgraph(&relationships("marriage"), &mock, &t, 2)
            .unwrap()
            .is_approved());
        match evaluate_subgraph(&relationships("love"), &mock, &t, 2).unwrap() {
            Verdict::Findings(f) => assert_eq!(f.len(), 1),
            Verdict::Approved => panic!("planted edge not detected"),
        }
        let single = relationships("love").subgraph(&"valentine".into()).unwrap();
        let p = ScriptedProvider::default();
        assert!(evaluate_subgraph(&single, &p, &t, 2).unwrap().is_approved());
        assert_eq!(p.call_count(), 0);
    }
}
